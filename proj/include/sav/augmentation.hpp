#pragma once

#include <cmath>
#include <complex>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sav/common.hpp"
#include "sav/fft.hpp"
#include "sav/rng.hpp"

namespace sav {

// Seven training-time transforms. Geometric ones (rotation, flips,
// transposition, elastic) act on image and mask together and only in the H-W
// plane; z is never resampled because that is the low-resolution axis.
// Intensity ones (channel shift, bias field, ghosting) touch the image only.
struct AugmentationConfig {
    bool rotation = true;
    bool flip = true;       // independent coin per in-plane axis
    bool transpose = true;  // swap H and W
    bool channel_shift = true;
    bool bias_field = true;
    bool elastic = true;
    bool ghost = true;

    double rotation_max_deg = 15.0;
    double elastic_alpha = 8.0;  // peak displacement in voxels
    double elastic_sigma = 4.0;  // smoothing radius in voxels
    double channel_shift_max = 0.1;
    int bias_field_order = 3;
    double bias_field_strength = 0.3;
    std::vector<int> ghost_axes{0, 1};  // 0=H, 1=W
    double ghost_intensity = 0.15;
    uint64_t seed = 0;

    void validate() const {
        if (rotation_max_deg < 0 || rotation_max_deg > 180)
            throw std::invalid_argument("rotation_max_deg must be in [0, 180]");
        if (elastic_alpha < 0 || elastic_sigma < 0 || channel_shift_max < 0 || bias_field_strength < 0 ||
            ghost_intensity < 0)
            throw std::invalid_argument("augmentation strengths must be >= 0");
        if (bias_field_order < 1) throw std::invalid_argument("bias_field_order must be >= 1");
        if (ghost && ghost_axes.empty()) throw std::invalid_argument("ghost_axes must not be empty");
        for (int a : ghost_axes)
            if (a != 0 && a != 1) throw std::invalid_argument("ghost_axes entries must be 0 (H) or 1 (W)");
    }

    static AugmentationConfig disabled() {
        AugmentationConfig c;
        c.rotation = c.flip = c.transpose = c.channel_shift = c.bias_field = c.elastic = c.ghost = false;
        return c;
    }
};

inline nlohmann::json augmentation_to_json(const AugmentationConfig& c) {
    return nlohmann::json{{"rotation", c.rotation},
                          {"flip", c.flip},
                          {"transpose", c.transpose},
                          {"channel_shift", c.channel_shift},
                          {"bias_field", c.bias_field},
                          {"elastic", c.elastic},
                          {"ghost", c.ghost},
                          {"rotation_max_deg", c.rotation_max_deg},
                          {"elastic_alpha", c.elastic_alpha},
                          {"elastic_sigma", c.elastic_sigma},
                          {"channel_shift_max", c.channel_shift_max},
                          {"bias_field_order", c.bias_field_order},
                          {"bias_field_strength", c.bias_field_strength},
                          {"ghost_axes", c.ghost_axes},
                          {"ghost_intensity", c.ghost_intensity},
                          {"seed", c.seed}};
}

inline AugmentationConfig augmentation_from_json(const nlohmann::json& j) {
    AugmentationConfig c;
    c.rotation = j.value("rotation", c.rotation);
    c.flip = j.value("flip", c.flip);
    c.transpose = j.value("transpose", c.transpose);
    c.channel_shift = j.value("channel_shift", c.channel_shift);
    c.bias_field = j.value("bias_field", c.bias_field);
    c.elastic = j.value("elastic", c.elastic);
    c.ghost = j.value("ghost", c.ghost);
    c.rotation_max_deg = j.value("rotation_max_deg", c.rotation_max_deg);
    c.elastic_alpha = j.value("elastic_alpha", c.elastic_alpha);
    c.elastic_sigma = j.value("elastic_sigma", c.elastic_sigma);
    c.channel_shift_max = j.value("channel_shift_max", c.channel_shift_max);
    c.bias_field_order = j.value("bias_field_order", c.bias_field_order);
    c.bias_field_strength = j.value("bias_field_strength", c.bias_field_strength);
    if (j.contains("ghost_axes")) c.ghost_axes = j.at("ghost_axes").get<std::vector<int>>();
    c.ghost_intensity = j.value("ghost_intensity", c.ghost_intensity);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

namespace aug_detail {

inline float sample_bilinear(const Grid3<float>& g, double h, double w, int d) {
    int h0 = static_cast<int>(std::floor(h)), w0 = static_cast<int>(std::floor(w));
    double fh = h - h0, fw = w - w0;
    auto at = [&](int hh, int ww) -> double {
        if (hh < 0 || hh >= g.h() || ww < 0 || ww >= g.w()) return 0.0;
        return g(hh, ww, d);
    };
    double v = (1 - fh) * (1 - fw) * at(h0, w0) + (1 - fh) * fw * at(h0, w0 + 1) + fh * (1 - fw) * at(h0 + 1, w0) +
               fh * fw * at(h0 + 1, w0 + 1);
    return static_cast<float>(v);
}

inline uint8_t sample_nearest(const Grid3<uint8_t>& g, double h, double w, int d) {
    int hh = static_cast<int>(std::lround(h)), ww = static_cast<int>(std::lround(w));
    if (hh < 0 || hh >= g.h() || ww < 0 || ww >= g.w()) return 0;
    return g(hh, ww, d);
}

// Inverse-map in-plane warp: src(h,w) gives the source coordinate sampled for
// output voxel (h,w); shared across all z slices.
template <typename MapFn>
inline void warp_inplane(Grid3<float>& img, Grid3<uint8_t>& mask, MapFn src) {
    Grid3<float> img_out(img.dims(), 0.0f);
    Grid3<uint8_t> mask_out(mask.dims(), uint8_t{0});
    const int H = img.h(), W = img.w(), D = img.d();
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            auto [sh, sw] = src(h, w);
            for (int d = 0; d < D; ++d) {
                img_out(h, w, d) = sample_bilinear(img, sh, sw, d);
                mask_out(h, w, d) = sample_nearest(mask, sh, sw, d);
            }
        }
    img = std::move(img_out);
    mask = std::move(mask_out);
}

inline void rotate_hw(Grid3<float>& img, Grid3<uint8_t>& mask, double angle_deg) {
    const double a = angle_deg * std::numbers::pi / 180.0;
    const double ca = std::cos(a), sa = std::sin(a);
    const double ch = (img.h() - 1) / 2.0, cw = (img.w() - 1) / 2.0;
    warp_inplane(img, mask, [&](int h, int w) {
        double ph = h - ch, pw = w - cw;
        return std::pair<double, double>{ch + ca * ph - sa * pw, cw + sa * ph + ca * pw};
    });
}

template <typename T>
inline void flip_axis(Grid3<T>& g, int axis) {
    Grid3<T> out(g.dims(), T{});
    const int H = g.h(), W = g.w(), D = g.d();
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d)
                out(h, w, d) = g(axis == 0 ? H - 1 - h : h, axis == 1 ? W - 1 - w : w, d);
    g = std::move(out);
}

template <typename T>
inline void transpose_hw(Grid3<T>& g) {
    Grid3<T> out({g.w(), g.h(), g.d()}, T{});
    for (int h = 0; h < g.h(); ++h)
        for (int w = 0; w < g.w(); ++w)
            for (int d = 0; d < g.d(); ++d) out(w, h, d) = g(h, w, d);
    g = std::move(out);
}

// Separable Gaussian blur of a 2D field, truncated at 3 sigma, with edge
// clamping. Used to turn white noise into a smooth displacement field.
inline void gaussian_blur_2d(std::vector<double>& f, int H, int W, double sigma) {
    if (sigma <= 0) return;
    int r = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
    std::vector<double> k(2 * r + 1);
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        k[i + r] = std::exp(-0.5 * (i * i) / (sigma * sigma));
        sum += k[i + r];
    }
    for (auto& v : k) v /= sum;
    std::vector<double> tmp(f.size());
    auto clampi = [](int v, int hi) { return v < 0 ? 0 : (v >= hi ? hi - 1 : v); };
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * f[static_cast<size_t>(h) * W + clampi(w + i, W)];
            tmp[static_cast<size_t>(h) * W + w] = acc;
        }
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[i + r] * tmp[static_cast<size_t>(clampi(h + i, H)) * W + w];
            f[static_cast<size_t>(h) * W + w] = acc;
        }
}

inline void elastic_hw(Grid3<float>& img, Grid3<uint8_t>& mask, double alpha, double sigma, Rng& rng) {
    const int H = img.h(), W = img.w();
    std::vector<double> dh(static_cast<size_t>(H) * W), dw(dh.size());
    for (auto& v : dh) v = rng.uniform(-1.0, 1.0);
    for (auto& v : dw) v = rng.uniform(-1.0, 1.0);
    gaussian_blur_2d(dh, H, W, sigma);
    gaussian_blur_2d(dw, H, W, sigma);
    double peak = 0.0;
    for (size_t i = 0; i < dh.size(); ++i) peak = std::max({peak, std::abs(dh[i]), std::abs(dw[i])});
    double scale = peak > 0 ? alpha / peak : 0.0;
    warp_inplane(img, mask, [&](int h, int w) {
        size_t i = static_cast<size_t>(h) * W + w;
        return std::pair<double, double>{h + dh[i] * scale, w + dw[i] * scale};
    });
}

// Zero-mean polynomial of the configured order over normalized coordinates,
// coefficients ~ U(-strength, strength), peak rescaled to log(1+strength) so
// the multiplicative field exp(p) stays inside [1/(1+s), 1+s].
inline Grid3<float> bias_field(const Shape3& dims, int order, double strength, Rng& rng) {
    std::vector<std::array<int, 3>> terms;
    for (int a = 0; a <= order; ++a)
        for (int b = 0; a + b <= order; ++b)
            for (int c = 0; a + b + c <= order; ++c) terms.push_back({a, b, c});
    std::vector<double> coef(terms.size());
    for (auto& v : coef) v = rng.uniform(-strength, strength);

    const int H = dims[0], W = dims[1], D = dims[2];
    Grid3<double> p(dims, 0.0);
    double sum = 0.0;
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d) {
                double x = H > 1 ? 2.0 * h / (H - 1) - 1.0 : 0.0;
                double y = W > 1 ? 2.0 * w / (W - 1) - 1.0 : 0.0;
                double z = D > 1 ? 2.0 * d / (D - 1) - 1.0 : 0.0;
                double v = 0.0;
                for (size_t t = 0; t < terms.size(); ++t)
                    v += coef[t] * std::pow(x, terms[t][0]) * std::pow(y, terms[t][1]) * std::pow(z, terms[t][2]);
                p(h, w, d) = v;
                sum += v;
            }
    double mean = sum / p.size();
    double peak = 0.0;
    for (size_t i = 0; i < p.size(); ++i) {
        p[i] -= mean;
        peak = std::max(peak, std::abs(p[i]));
    }
    double scale = peak > 0 ? std::log1p(strength) / peak : 0.0;
    Grid3<float> field(dims, 1.0f);
    for (size_t i = 0; i < p.size(); ++i) field[i] = static_cast<float>(std::exp(p[i] * scale));
    return field;
}

// Attenuate every k-th frequency line (excluding DC, so mean brightness is
// kept) along axis 0 or 1, mimicking periodic motion ghosts.
inline void ghost_axis(Grid3<float>& img, int axis, int k, double intensity) {
    const int H = img.h(), W = img.w(), D = img.d();
    const int n = axis == 0 ? H : W;
    std::vector<std::complex<double>> line(n);
    const int outer = axis == 0 ? W : H;
    for (int o = 0; o < outer; ++o)
        for (int d = 0; d < D; ++d) {
            for (int i = 0; i < n; ++i) line[i] = axis == 0 ? img(i, o, d) : img(o, i, d);
            fft(line);
            for (int i = k; i < n; i += k) line[i] *= 1.0 - intensity;
            ifft(line);
            for (int i = 0; i < n; ++i) {
                float v = static_cast<float>(line[i].real());
                (axis == 0 ? img(i, o, d) : img(o, i, d)) = v;
            }
        }
}

}  // namespace aug_detail

// Draws for each enabled transform happen in this fixed order: rotation,
// flip H, flip W, transpose, elastic, channel shift, bias field, ghost.
// Disabled transforms consume no randomness.
inline std::pair<Grid3<float>, Grid3<uint8_t>> augment(const Grid3<float>& image, const Grid3<uint8_t>& mask,
                                                       const AugmentationConfig& cfg, Rng& rng) {
    cfg.validate();
    if (!image.same_shape(mask)) throw std::invalid_argument("augment: image/mask shape mismatch");
    Grid3<float> img = image;
    Grid3<uint8_t> msk = mask;

    if (cfg.rotation) {
        double angle = rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg);
        if (angle != 0.0) aug_detail::rotate_hw(img, msk, angle);
    }
    if (cfg.flip) {
        if (rng.coin()) {
            aug_detail::flip_axis(img, 0);
            aug_detail::flip_axis(msk, 0);
        }
        if (rng.coin()) {
            aug_detail::flip_axis(img, 1);
            aug_detail::flip_axis(msk, 1);
        }
    }
    if (cfg.transpose && rng.coin()) {
        aug_detail::transpose_hw(img);
        aug_detail::transpose_hw(msk);
    }
    if (cfg.elastic && cfg.elastic_alpha > 0) aug_detail::elastic_hw(img, msk, cfg.elastic_alpha, cfg.elastic_sigma, rng);

    if (cfg.channel_shift) {
        double mean = 0.0;
        for (size_t i = 0; i < img.size(); ++i) mean += img[i];
        mean /= img.size();
        double var = 0.0;
        for (size_t i = 0; i < img.size(); ++i) var += (img[i] - mean) * (img[i] - mean);
        double sd = std::sqrt(var / img.size());
        float shift = static_cast<float>(rng.uniform(-cfg.channel_shift_max, cfg.channel_shift_max) * sd);
        for (size_t i = 0; i < img.size(); ++i) img[i] += shift;
    }
    if (cfg.bias_field) {
        Grid3<float> field = aug_detail::bias_field(img.dims(), cfg.bias_field_order, cfg.bias_field_strength, rng);
        for (size_t i = 0; i < img.size(); ++i) img[i] *= field[i];
    }
    if (cfg.ghost) {
        int axis = cfg.ghost_axes[rng.uniform_int(0, static_cast<int>(cfg.ghost_axes.size()) - 1)];
        int k = rng.uniform_int(2, 4);
        if (cfg.ghost_intensity > 0) aug_detail::ghost_axis(img, axis, k, cfg.ghost_intensity);
    }
    return {std::move(img), std::move(msk)};
}

}  // namespace sav
