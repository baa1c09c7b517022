#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace sav {

namespace fft_detail {

inline bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Iterative radix-2 Cooley-Tukey, in place. n must be a power of two.
inline void fft_radix2(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(a[i], a[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        double ang = 2.0 * std::numbers::pi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
        std::complex<double> wl(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                std::complex<double> u = a[i + k];
                std::complex<double> v = a[i + k + len / 2] * w;
                a[i + k] = u + v;
                a[i + k + len / 2] = u - v;
                w *= wl;
            }
        }
    }
}

// O(n^2) DFT for awkward lengths; volumes are small enough that this only
// needs to be correct, not fast.
inline void dft_naive(std::vector<std::complex<double>>& a, bool inverse) {
    const size_t n = a.size();
    std::vector<std::complex<double>> out(n);
    const double sign = inverse ? 1.0 : -1.0;
    for (size_t k = 0; k < n; ++k) {
        std::complex<double> acc(0.0, 0.0);
        for (size_t t = 0; t < n; ++t) {
            double ang = sign * 2.0 * std::numbers::pi * static_cast<double>(k * t % n) / static_cast<double>(n);
            acc += a[t] * std::complex<double>(std::cos(ang), std::sin(ang));
        }
        out[k] = acc;
    }
    a = std::move(out);
}

}  // namespace fft_detail

// Unnormalized forward transform; inverse divides by n so ifft(fft(x)) == x.
inline void fft(std::vector<std::complex<double>>& a, bool inverse = false) {
    if (a.empty()) throw std::invalid_argument("fft: empty input");
    if (fft_detail::is_pow2(a.size()))
        fft_detail::fft_radix2(a, inverse);
    else
        fft_detail::dft_naive(a, inverse);
    if (inverse) {
        double inv_n = 1.0 / static_cast<double>(a.size());
        for (auto& v : a) v *= inv_n;
    }
}

inline void ifft(std::vector<std::complex<double>>& a) { fft(a, true); }

}  // namespace sav
