#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <vector>

namespace sav {

// Dense 5-axis array, axes (N, H, W, D, C), row-major with C fastest.
// Copies share storage (the autodiff tape keeps tensors alive through
// closures); use clone() for an independent buffer. Kernels never mutate
// a tensor after handing it out.
template <typename T>
class Tensor5 {
public:
    using Shape = std::array<int64_t, 5>;

    Tensor5() : shape_{0, 0, 0, 0, 0} {}

    explicit Tensor5(int64_t n, int64_t h, int64_t w, int64_t d, int64_t c)
        : shape_{n, h, w, d, c},
          data_(std::make_shared<std::vector<T>>(static_cast<size_t>(n) * h * w * d * c, T{})) {
        if (n < 1 || h < 1 || w < 1 || d < 1 || c < 1)
            throw std::invalid_argument("Tensor5: all axis lengths must be >= 1");
    }

    explicit Tensor5(const Shape& s) : Tensor5(s[0], s[1], s[2], s[3], s[4]) {}

    static Tensor5 full(const Shape& s, T value) {
        Tensor5 t(s);
        t.fill(value);
        return t;
    }

    int64_t n() const { return shape_[0]; }
    int64_t h() const { return shape_[1]; }
    int64_t w() const { return shape_[2]; }
    int64_t d() const { return shape_[3]; }
    int64_t c() const { return shape_[4]; }
    const Shape& shape() const { return shape_; }
    int64_t size() const { return data_ ? static_cast<int64_t>(data_->size()) : 0; }
    bool empty() const { return !data_; }

    T* data() { return data_->data(); }
    const T* data() const { return data_->data(); }

    T& operator()(int64_t n, int64_t h, int64_t w, int64_t d, int64_t c) {
        return (*data_)[offset(n, h, w, d, c)];
    }
    const T& operator()(int64_t n, int64_t h, int64_t w, int64_t d, int64_t c) const {
        return (*data_)[offset(n, h, w, d, c)];
    }

    size_t offset(int64_t n, int64_t h, int64_t w, int64_t d, int64_t c) const {
        return static_cast<size_t>((((n * shape_[1] + h) * shape_[2] + w) * shape_[3] + d) * shape_[4] + c);
    }

    void fill(T v) { std::fill(data_->begin(), data_->end(), v); }

    Tensor5 clone() const {
        Tensor5 t;
        t.shape_ = shape_;
        t.data_ = std::make_shared<std::vector<T>>(*data_);
        return t;
    }

    bool same_shape(const Tensor5& o) const { return shape_ == o.shape_; }

    template <typename U>
    Tensor5<U> cast() const {
        Tensor5<U> t(shape_);
        const T* src = data();
        U* dst = t.data();
        for (int64_t i = 0; i < size(); ++i) dst[i] = static_cast<U>(src[i]);
        return t;
    }

private:
    Shape shape_;
    std::shared_ptr<std::vector<T>> data_;
};

template <typename T>
bool all_finite(const Tensor5<T>& t) {
    const T* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i)
        if (!std::isfinite(static_cast<double>(p[i]))) return false;
    return true;
}

#ifndef NDEBUG
#define SAV_DEBUG_CHECK_FINITE(t) \
    do { \
        if (!::sav::all_finite(t)) throw std::runtime_error("non-finite values in layer output"); \
    } while (0)
#else
#define SAV_DEBUG_CHECK_FINITE(t) \
    do { \
    } while (0)
#endif

}  // namespace sav
