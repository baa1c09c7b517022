#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "sav/common.hpp"
#include "sav/rng.hpp"
#include "sav/tensor.hpp"

namespace savtest {

// Scoped temp directory; removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        dir_ = std::filesystem::temp_directory_path() / (tag + "_" + std::to_string(rd()));
        std::filesystem::create_directories(dir_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(dir_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return dir_; }
    std::filesystem::path operator/(const std::string& s) const { return dir_ / s; }
    std::string str() const { return dir_.string(); }

private:
    std::filesystem::path dir_;
};

inline sav::Grid3<uint8_t> random_binary(int h, int w, int d, double p, sav::Rng& rng) {
    sav::Grid3<uint8_t> g(h, w, d);
    for (size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform() < p ? 1 : 0;
    return g;
}

inline sav::Grid3<float> random_field(int h, int w, int d, sav::Rng& rng, float lo = -1.f, float hi = 1.f) {
    sav::Grid3<float> g(h, w, d);
    for (size_t i = 0; i < g.size(); ++i) g[i] = static_cast<float>(rng.uniform(lo, hi));
    return g;
}

template <typename T>
sav::Tensor5<T> random_tensor(int64_t n, int64_t h, int64_t w, int64_t d, int64_t c, sav::Rng& rng, double lo = -1.0,
                              double hi = 1.0) {
    sav::Tensor5<T> t(n, h, w, d, c);
    T* p = t.data();
    for (int64_t i = 0; i < t.size(); ++i) p[i] = static_cast<T>(rng.uniform(lo, hi));
    return t;
}

template <typename T>
double max_abs_diff(const sav::Tensor5<T>& a, const sav::Tensor5<T>& b) {
    double m = 0;
    const T* pa = a.data();
    const T* pb = b.data();
    for (int64_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(double(pa[i]) - double(pb[i])));
    return m;
}

}  // namespace savtest
