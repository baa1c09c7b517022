#pragma once

#include <array>
#include <cmath>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sav/common.hpp"
#include "sav/rng.hpp"
#include "sav/volume.hpp"

namespace sav {

// Synthetic FLAIR-like volumes: smooth bright-ish background with small
// high-intensity ellipsoidal blobs, flattened along z to mimic thick slices.
struct PhantomConfig {
    Shape3 shape{64, 64, 16};
    std::array<double, 3> spacing{1.0, 1.0, 3.0};
    int n_lesions_min = 3;
    int n_lesions_max = 10;
    double radius_inplane_min = 1.0;
    double radius_inplane_max = 4.0;
    double radius_z_min = 0.0;
    double radius_z_max = 1.0;
    double lesion_contrast = 1.5;  // bump height in units of background_noise
    double background_noise = 5.0;
    bool include_label2 = false;
    uint64_t seed = 0;

    void validate() const {
        if (shape[0] < 16 || shape[1] < 16 || shape[2] < 4)
            throw std::invalid_argument("phantom shape must be at least 16x16x4");
        if (lesion_contrast <= 0) throw std::invalid_argument("phantom lesion_contrast must be positive");
        if (background_noise <= 0) throw std::invalid_argument("phantom background_noise must be positive");
        if (n_lesions_min < 0 || n_lesions_max < n_lesions_min)
            throw std::invalid_argument("phantom lesion count range is invalid");
        if (radius_inplane_min < 0 || radius_inplane_max < radius_inplane_min || radius_z_min < 0 ||
            radius_z_max < radius_z_min)
            throw std::invalid_argument("phantom radius range is invalid");
    }
};

inline nlohmann::json phantom_to_json(const PhantomConfig& c) {
    return nlohmann::json{{"shape", {c.shape[0], c.shape[1], c.shape[2]}},
                          {"spacing", {c.spacing[0], c.spacing[1], c.spacing[2]}},
                          {"n_lesions", {c.n_lesions_min, c.n_lesions_max}},
                          {"radius_inplane", {c.radius_inplane_min, c.radius_inplane_max}},
                          {"radius_z", {c.radius_z_min, c.radius_z_max}},
                          {"lesion_contrast", c.lesion_contrast},
                          {"background_noise", c.background_noise},
                          {"include_label2", c.include_label2},
                          {"seed", c.seed}};
}

inline PhantomConfig phantom_from_json(const nlohmann::json& j) {
    PhantomConfig c;
    auto pair3 = [](const nlohmann::json& a, auto& x, auto& y, auto& z) {
        x = a.at(0);
        y = a.at(1);
        z = a.at(2);
    };
    if (j.contains("shape")) pair3(j.at("shape"), c.shape[0], c.shape[1], c.shape[2]);
    if (j.contains("spacing")) pair3(j.at("spacing"), c.spacing[0], c.spacing[1], c.spacing[2]);
    if (j.contains("n_lesions")) {
        c.n_lesions_min = j.at("n_lesions").at(0);
        c.n_lesions_max = j.at("n_lesions").at(1);
    }
    if (j.contains("radius_inplane")) {
        c.radius_inplane_min = j.at("radius_inplane").at(0);
        c.radius_inplane_max = j.at("radius_inplane").at(1);
    }
    if (j.contains("radius_z")) {
        c.radius_z_min = j.at("radius_z").at(0);
        c.radius_z_max = j.at("radius_z").at(1);
    }
    c.lesion_contrast = j.value("lesion_contrast", c.lesion_contrast);
    c.background_noise = j.value("background_noise", c.background_noise);
    c.include_label2 = j.value("include_label2", c.include_label2);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

namespace phantom_detail {

struct Box {
    int h0, h1, w0, w1, d0, d1;  // inclusive, already padded for separation
    bool intersects(const Box& o) const {
        return h0 <= o.h1 && o.h0 <= h1 && w0 <= o.w1 && o.w0 <= w1 && d0 <= o.d1 && o.d0 <= d1;
    }
};

struct Stamp {
    std::array<double, 3> center;
    std::array<double, 3> radius;
    Box box;
};

// Draw an ellipsoid whose padded bounding box avoids all accepted boxes, so
// stamped blobs stay disconnected even at 26-connectivity.
inline Stamp draw_stamp(const PhantomConfig& cfg, Rng& rng, const std::vector<Box>& taken) {
    const double margin_hw = cfg.radius_inplane_max + 2.0;
    const double margin_d = cfg.radius_z_max + 2.0;
    auto center_range = [](int extent, double margin) {
        double lo = margin, hi = extent - 1 - margin;
        if (hi < lo) throw std::runtime_error("phantom volume too small for configured lesion radii");
        return std::pair<double, double>{lo, hi};
    };
    auto [h_lo, h_hi] = center_range(cfg.shape[0], margin_hw);
    auto [w_lo, w_hi] = center_range(cfg.shape[1], margin_hw);
    auto [d_lo, d_hi] = center_range(cfg.shape[2], margin_d);

    for (int attempt = 0; attempt < 1000; ++attempt) {
        Stamp s;
        s.center = {rng.uniform(h_lo, h_hi), rng.uniform(w_lo, w_hi), rng.uniform(d_lo, d_hi)};
        s.radius = {rng.uniform(cfg.radius_inplane_min, cfg.radius_inplane_max),
                    rng.uniform(cfg.radius_inplane_min, cfg.radius_inplane_max),
                    rng.uniform(cfg.radius_z_min, cfg.radius_z_max)};
        s.box = {static_cast<int>(std::floor(s.center[0] - s.radius[0])) - 1,
                 static_cast<int>(std::ceil(s.center[0] + s.radius[0])) + 1,
                 static_cast<int>(std::floor(s.center[1] - s.radius[1])) - 1,
                 static_cast<int>(std::ceil(s.center[1] + s.radius[1])) + 1,
                 static_cast<int>(std::floor(s.center[2] - s.radius[2])) - 1,
                 static_cast<int>(std::ceil(s.center[2] + s.radius[2])) + 1};
        bool clash = false;
        for (const auto& b : taken)
            if (s.box.intersects(b)) {
                clash = true;
                break;
            }
        if (!clash) return s;
    }
    throw std::runtime_error("phantom: could not place a non-overlapping lesion; too many lesions for the volume");
}

// Mark every voxel whose center lies inside the ellipsoid. Centers are drawn
// continuously, so over random placements the expected voxel count equals the
// continuous ellipsoid volume; tiny stamps that would otherwise be empty are
// forced to cover the voxel nearest the center.
inline int apply_stamp(const Stamp& s, Grid3<uint8_t>& mask, uint8_t label) {
    const int H = mask.h(), W = mask.w(), D = mask.d();
    auto clampi = [](int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); };
    int h0 = clampi(static_cast<int>(std::ceil(s.center[0] - s.radius[0])), 0, H - 1);
    int h1 = clampi(static_cast<int>(std::floor(s.center[0] + s.radius[0])), 0, H - 1);
    int w0 = clampi(static_cast<int>(std::ceil(s.center[1] - s.radius[1])), 0, W - 1);
    int w1 = clampi(static_cast<int>(std::floor(s.center[1] + s.radius[1])), 0, W - 1);
    int d0 = clampi(static_cast<int>(std::ceil(s.center[2] - s.radius[2])), 0, D - 1);
    int d1 = clampi(static_cast<int>(std::floor(s.center[2] + s.radius[2])), 0, D - 1);
    int count = 0;
    for (int h = h0; h <= h1; ++h)
        for (int w = w0; w <= w1; ++w)
            for (int d = d0; d <= d1; ++d) {
                double qh = (h - s.center[0]) / std::max(s.radius[0], 1e-12);
                double qw = (w - s.center[1]) / std::max(s.radius[1], 1e-12);
                double qd = (d - s.center[2]) / std::max(s.radius[2], 1e-12);
                if (qh * qh + qw * qw + qd * qd <= 1.0) {
                    mask(h, w, d) = label;
                    ++count;
                }
            }
    if (count == 0) {
        int h = clampi(static_cast<int>(std::lround(s.center[0])), 0, H - 1);
        int w = clampi(static_cast<int>(std::lround(s.center[1])), 0, W - 1);
        int d = clampi(static_cast<int>(std::lround(s.center[2])), 0, D - 1);
        mask(h, w, d) = label;
        count = 1;
    }
    return count;
}

// Zero-mean low-order polynomial over normalized coordinates, rescaled to the
// requested peak amplitude. Gives the background a gentle spatial drift.
inline Grid3<float> smooth_field(const Shape3& shape, double amplitude, Rng& rng) {
    std::array<double, 10> c;  // 1, x, y, z, x2, y2, z2, xy, xz, yz
    for (auto& v : c) v = rng.uniform(-1.0, 1.0);
    Grid3<double> f(shape, 0.0);
    double sum = 0.0, peak = 0.0;
    const int H = shape[0], W = shape[1], D = shape[2];
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d) {
                double x = H > 1 ? 2.0 * h / (H - 1) - 1.0 : 0.0;
                double y = W > 1 ? 2.0 * w / (W - 1) - 1.0 : 0.0;
                double z = D > 1 ? 2.0 * d / (D - 1) - 1.0 : 0.0;
                double v = c[0] + c[1] * x + c[2] * y + c[3] * z + c[4] * x * x + c[5] * y * y + c[6] * z * z +
                           c[7] * x * y + c[8] * x * z + c[9] * y * z;
                f(h, w, d) = v;
                sum += v;
            }
    double mean = sum / f.size();
    for (size_t i = 0; i < f.size(); ++i) {
        f[i] -= mean;
        peak = std::max(peak, std::abs(f[i]));
    }
    double scale = peak > 0 ? amplitude / peak : 0.0;
    Grid3<float> out(shape, 0.0f);
    for (size_t i = 0; i < f.size(); ++i) out[i] = static_cast<float>(f[i] * scale);
    return out;
}

}  // namespace phantom_detail

struct PhantomCase {
    Case c;
    int n_lesions = 0;  // actually stamped label-1 blobs
};

inline PhantomCase generate_detail(const PhantomConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.seed);

    const double base = 100.0;
    Grid3<float> field = phantom_detail::smooth_field(cfg.shape, 2.0 * cfg.background_noise, rng);
    Grid3<float> img(cfg.shape, 0.0f);
    for (size_t i = 0; i < img.size(); ++i)
        img[i] = static_cast<float>(base + field[i] + rng.normal(0.0, cfg.background_noise));

    Grid3<uint8_t> truth(cfg.shape, uint8_t{0});
    std::vector<phantom_detail::Box> taken;
    int n = rng.uniform_int(cfg.n_lesions_min, cfg.n_lesions_max);
    const float bump = static_cast<float>(cfg.lesion_contrast * cfg.background_noise);
    std::vector<phantom_detail::Stamp> stamps;
    for (int i = 0; i < n; ++i) {
        auto s = phantom_detail::draw_stamp(cfg, rng, taken);
        taken.push_back(s.box);
        stamps.push_back(s);
    }
    if (cfg.include_label2) {
        auto s = phantom_detail::draw_stamp(cfg, rng, taken);
        taken.push_back(s.box);
        phantom_detail::apply_stamp(s, truth, 2);
    }
    for (const auto& s : stamps) phantom_detail::apply_stamp(s, truth, 1);

    // Bright bump wherever the mask is set (label-2 region included so the
    // ignore pathology also looks lesion-like).
    for (size_t i = 0; i < img.size(); ++i)
        if (truth[i] != 0) img[i] += bump;

    PhantomCase out;
    out.n_lesions = n;
    out.c.id = "case000";
    out.c.scanner = "phantom";
    out.c.image = Volume(std::move(img), cfg.spacing);
    out.c.truth = LabelMask{std::move(truth)};
    out.c.validate();
    return out;
}

inline Case generate(const PhantomConfig& cfg) { return generate_detail(cfg).c; }

inline std::vector<Case> generate_dataset(int n, const PhantomConfig& cfg, uint64_t seed) {
    if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
    std::vector<Case> out;
    out.reserve(n);
    for (int i = 0; i < n; ++i) {
        PhantomConfig c = cfg;
        c.seed = seed + static_cast<uint64_t>(i);
        Case k = generate(c);
        char id[32];
        std::snprintf(id, sizeof(id), "case%03d", i);
        k.id = id;
        out.push_back(std::move(k));
    }
    return out;
}

}  // namespace sav
