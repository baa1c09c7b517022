#pragma once

#include <cmath>
#include <optional>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sav/common.hpp"
#include "sav/volume.hpp"

namespace sav {

constexpr Shape3 kCanonicalShape{256, 256, 128};
constexpr int kChunkDepth = 32;

// Per-axis pad/crop bookkeeping for the canonical working grid. The trailing
// side takes the odd voxel for both pads and crops, so the mapping inverts
// exactly on the retained region.
struct GeometryRecord {
    Shape3 original_shape{0, 0, 0};
    Shape3 pad_before{0, 0, 0};
    Shape3 pad_after{0, 0, 0};
    Shape3 crop_before{0, 0, 0};
    Shape3 crop_after{0, 0, 0};
    Shape3 canonical_shape = kCanonicalShape;

    void validate() const {
        for (int a = 0; a < 3; ++a) {
            bool pads = pad_before[a] > 0 || pad_after[a] > 0;
            bool crops = crop_before[a] > 0 || crop_after[a] > 0;
            if (pads && crops) throw std::invalid_argument("GeometryRecord: axis both padded and cropped");
            int rec = original_shape[a] + pad_before[a] + pad_after[a] - crop_before[a] - crop_after[a];
            if (rec != canonical_shape[a]) throw std::invalid_argument("GeometryRecord: inconsistent axis bookkeeping");
        }
    }
};

inline nlohmann::json geometry_to_json(const GeometryRecord& g) {
    return nlohmann::json{{"original_shape", g.original_shape}, {"pad_before", g.pad_before},
                          {"pad_after", g.pad_after},           {"crop_before", g.crop_before},
                          {"crop_after", g.crop_after},         {"canonical_shape", g.canonical_shape}};
}

inline GeometryRecord geometry_from_json(const nlohmann::json& j) {
    GeometryRecord g;
    j.at("original_shape").get_to(g.original_shape);
    j.at("pad_before").get_to(g.pad_before);
    j.at("pad_after").get_to(g.pad_after);
    j.at("crop_before").get_to(g.crop_before);
    j.at("crop_after").get_to(g.crop_after);
    j.at("canonical_shape").get_to(g.canonical_shape);
    g.validate();
    return g;
}

namespace prep_detail {

// Centered split of a total pad/crop amount; the extra voxel goes trailing.
inline std::pair<int, int> split_centered(int total) { return {total / 2, total - total / 2}; }

template <typename T>
Grid3<T> apply_geometry(const Grid3<T>& in, const GeometryRecord& g) {
    Grid3<T> out(g.canonical_shape, T{});
    // region of the input that survives cropping
    int kept_h = in.h() - g.crop_before[0] - g.crop_after[0];
    int kept_w = in.w() - g.crop_before[1] - g.crop_after[1];
    int kept_d = in.d() - g.crop_before[2] - g.crop_after[2];
    for (int i = 0; i < kept_h; ++i)
        for (int j = 0; j < kept_w; ++j)
            for (int k = 0; k < kept_d; ++k)
                out(i + g.pad_before[0], j + g.pad_before[1], k + g.pad_before[2]) =
                    in(i + g.crop_before[0], j + g.crop_before[1], k + g.crop_before[2]);
    return out;
}

}  // namespace prep_detail

// Pad (zeros / background) or center-crop each axis to `target`. For masks the
// padded voxels are background 0; cropped-away voxels are restored as 0 by
// from_canonical.
inline GeometryRecord plan_geometry(const Shape3& in, const Shape3& target = kCanonicalShape) {
    GeometryRecord g;
    g.original_shape = in;
    g.canonical_shape = target;
    for (int a = 0; a < 3; ++a) {
        if (in[a] > 512) throw std::invalid_argument("input dimension " + std::to_string(in[a]) + " exceeds sanity bound 512");
        if (in[a] <= target[a]) {
            auto [b, e] = prep_detail::split_centered(target[a] - in[a]);
            g.pad_before[a] = b;
            g.pad_after[a] = e;
        } else {
            auto [b, e] = prep_detail::split_centered(in[a] - target[a]);
            g.crop_before[a] = b;
            g.crop_after[a] = e;
        }
    }
    return g;
}

struct CanonicalResult {
    Volume image;
    std::optional<LabelMask> mask;
    GeometryRecord geometry;
};

inline CanonicalResult to_canonical(const Volume& v, const std::optional<LabelMask>& m = std::nullopt,
                                    const Shape3& target = kCanonicalShape) {
    if (!all_finite(v.data)) throw std::invalid_argument("to_canonical: non-finite intensities");
    if (m && !m->data.same_shape(v.data)) throw std::invalid_argument("to_canonical: mask shape differs from image");
    GeometryRecord g = plan_geometry(v.data.dims(), target);
    CanonicalResult r;
    r.geometry = g;
    r.image.data = prep_detail::apply_geometry(v.data, g);
    r.image.spacing = v.spacing;
    r.image.original_shape = v.original_shape;
    if (m) {
        LabelMask out;
        out.data = prep_detail::apply_geometry(m->data, g);
        r.mask = std::move(out);
    }
    return r;
}

// Inverse of to_canonical for prediction masks: un-pad, and re-insert cropped
// margins as background.
inline LabelMask from_canonical(const LabelMask& pred, const GeometryRecord& g) {
    g.validate();
    if (pred.data.dims() != g.canonical_shape)
        throw std::invalid_argument("from_canonical: prediction shape " + shape3_str(pred.data.dims()) +
                                    " does not match record canonical shape " + shape3_str(g.canonical_shape));
    Grid3<uint8_t> out(g.original_shape, 0);
    int kept_h = g.canonical_shape[0] - g.pad_before[0] - g.pad_after[0];
    int kept_w = g.canonical_shape[1] - g.pad_before[1] - g.pad_after[1];
    int kept_d = g.canonical_shape[2] - g.pad_before[2] - g.pad_after[2];
    for (int i = 0; i < kept_h; ++i)
        for (int j = 0; j < kept_w; ++j)
            for (int k = 0; k < kept_d; ++k)
                out(i + g.crop_before[0], j + g.crop_before[1], k + g.crop_before[2]) =
                    pred.data(i + g.pad_before[0], j + g.pad_before[1], k + g.pad_before[2]);
    LabelMask r;
    r.data = std::move(out);
    return r;
}

// Contiguous z slabs, chunk k covering z in [k*depth, (k+1)*depth).
template <typename T>
std::vector<Grid3<T>> slice_depth(const Grid3<T>& g, int chunk_depth) {
    if (chunk_depth < 1 || g.d() % chunk_depth != 0)
        throw std::invalid_argument("slice_depth: depth " + std::to_string(g.d()) + " not divisible by chunk depth " +
                                    std::to_string(chunk_depth));
    int n = g.d() / chunk_depth;
    std::vector<Grid3<T>> chunks;
    chunks.reserve(n);
    for (int c = 0; c < n; ++c) {
        Grid3<T> ch(g.h(), g.w(), chunk_depth);
        for (int i = 0; i < g.h(); ++i)
            for (int j = 0; j < g.w(); ++j)
                for (int k = 0; k < chunk_depth; ++k) ch(i, j, k) = g(i, j, c * chunk_depth + k);
        chunks.push_back(std::move(ch));
    }
    return chunks;
}

template <typename T>
std::vector<Grid3<T>> slice_z(const Grid3<T>& g) {
    if (g.d() != kCanonicalShape[2])
        throw std::invalid_argument("slice_z: input depth must be " + std::to_string(kCanonicalShape[2]) + ", got " +
                                    std::to_string(g.d()));
    return slice_depth(g, kChunkDepth);
}

template <typename T>
Grid3<T> unslice_depth(const std::vector<Grid3<T>>& chunks) {
    if (chunks.empty()) throw std::invalid_argument("unslice_depth: no chunks");
    int h = chunks[0].h(), w = chunks[0].w(), cd = chunks[0].d();
    for (const auto& ch : chunks)
        if (ch.h() != h || ch.w() != w || ch.d() != cd)
            throw std::invalid_argument("unslice_depth: chunks disagree in shape");
    Grid3<T> out(h, w, cd * static_cast<int>(chunks.size()));
    for (size_t c = 0; c < chunks.size(); ++c)
        for (int i = 0; i < h; ++i)
            for (int j = 0; j < w; ++j)
                for (int k = 0; k < cd; ++k) out(i, j, static_cast<int>(c) * cd + k) = chunks[c](i, j, k);
    return out;
}

template <typename T>
Grid3<T> unslice_z(const std::vector<Grid3<T>>& chunks) {
    if (chunks.size() != static_cast<size_t>(kCanonicalShape[2] / kChunkDepth))
        throw std::invalid_argument("unslice_z: expected " + std::to_string(kCanonicalShape[2] / kChunkDepth) +
                                    " chunks, got " + std::to_string(chunks.size()));
    if (chunks[0].d() != kChunkDepth)
        throw std::invalid_argument("unslice_z: chunk depth must be " + std::to_string(kChunkDepth) + ", got " +
                                    std::to_string(chunks[0].d()));
    return unslice_depth(chunks);
}

// z-score over nonzero voxels; zero voxels stay zero so padding keeps its
// background value. Variance floor 1e-8 maps constant volumes to zeros.
inline Volume normalize_intensity(const Volume& v) {
    if (!all_finite(v.data)) throw std::invalid_argument("normalize_intensity: non-finite intensities");
    double sum = 0.0, sum2 = 0.0;
    size_t n = 0;
    for (size_t i = 0; i < v.data.size(); ++i) {
        if (v.data[i] == 0.f) continue;
        sum += v.data[i];
        sum2 += static_cast<double>(v.data[i]) * v.data[i];
        ++n;
    }
    Volume out = v;
    if (n == 0) return out;
    double mean = sum / n;
    double var = std::max(sum2 / n - mean * mean, 1e-8);
    double inv = 1.0 / std::sqrt(var);
    for (size_t i = 0; i < out.data.size(); ++i)
        if (out.data[i] != 0.f) out.data[i] = static_cast<float>((out.data[i] - mean) * inv);
    return out;
}

// Binary WMH target plus the ignore grid marking label-2 voxels, which stay
// out of both the loss and the metrics.
struct TrainingTarget {
    Grid3<float> target;
    Grid3<uint8_t> ignore;
};

inline TrainingTarget training_target(const LabelMask& m) {
    TrainingTarget t{Grid3<float>(m.data.dims()), Grid3<uint8_t>(m.data.dims())};
    for (size_t i = 0; i < m.data.size(); ++i) {
        t.target[i] = m.data[i] == 1 ? 1.f : 0.f;
        t.ignore[i] = m.data[i] == 2 ? 1 : 0;
    }
    return t;
}

}  // namespace sav
