#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sav {

// Checkpoint files that fail validation raise this so callers can tell
// corruption apart from ordinary bad input.
struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Non-finite loss during optimization; carries the offending step.
struct DivergenceError : std::runtime_error {
    int step;
    DivergenceError(int s, const std::string& msg) : std::runtime_error(msg), step(s) {}
};

using Shape3 = std::array<int, 3>;

inline std::string shape3_str(const Shape3& s) {
    std::ostringstream os;
    os << s[0] << "x" << s[1] << "x" << s[2];
    return os.str();
}

// Dense 3D grid, axes (H, W, D), row-major with D fastest.
template <typename T>
class Grid3 {
public:
    Grid3() : dims_{0, 0, 0} {}
    Grid3(int h, int w, int d, T fill = T{}) : dims_{h, w, d}, v_(checked_size(h, w, d), fill) {}
    explicit Grid3(const Shape3& s, T fill = T{}) : Grid3(s[0], s[1], s[2], fill) {}

    int h() const { return dims_[0]; }
    int w() const { return dims_[1]; }
    int d() const { return dims_[2]; }
    const Shape3& dims() const { return dims_; }
    size_t size() const { return v_.size(); }
    bool empty() const { return v_.empty(); }

    T& operator()(int i, int j, int k) { return v_[idx(i, j, k)]; }
    const T& operator()(int i, int j, int k) const { return v_[idx(i, j, k)]; }
    T& operator[](size_t i) { return v_[i]; }
    const T& operator[](size_t i) const { return v_[i]; }

    T* data() { return v_.data(); }
    const T* data() const { return v_.data(); }

    size_t idx(int i, int j, int k) const {
        return (static_cast<size_t>(i) * dims_[1] + j) * dims_[2] + k;
    }

    static size_t checked_size(int h, int w, int d) {
        if (h < 1 || w < 1 || d < 1) throw std::invalid_argument("Grid3: all dimensions must be >= 1");
        return static_cast<size_t>(h) * w * d;
    }

    template <typename U>
    bool same_shape(const Grid3<U>& o) const {
        return dims_ == o.dims();
    }

    bool operator==(const Grid3& o) const { return dims_ == o.dims_ && v_ == o.v_; }

private:
    Shape3 dims_;
    std::vector<T> v_;
};

template <typename T>
bool all_finite(const Grid3<T>& g) {
    for (size_t i = 0; i < g.size(); ++i)
        if (!std::isfinite(static_cast<double>(g[i]))) return false;
    return true;
}

}  // namespace sav
