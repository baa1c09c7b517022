#pragma once

#include <cstring>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "sav/common.hpp"
#include "sav/nn.hpp"
#include "sav/preprocessing.hpp"
#include "sav/rng.hpp"
#include "sav/volume.hpp"

namespace sav {

// Anisotropic U-shaped segmentation network: (3,3,1) encoder/decoder stages
// with (2,2,1) resampling keep the low-resolution z-axis unmixed except in
// the (3,3,3) bottleneck; skip connections pass through a spatial attention
// gate; the bottleneck feeds a dilated multi-rate pooling block.
struct ModelConfig {
    int base_channels = 24;
    int levels = 4;  // levels-1 downsamplings; bottleneck at base*2^(levels-1)
    Shape3 encoder_kernel{3, 3, 1};
    Shape3 resample_kernel{2, 2, 1};
    Shape3 bottleneck_kernel{3, 3, 3};
    std::string norm = "group";  // "group" | "batch"
    int gn_groups = 8;
    bool use_sam = true;
    Shape3 sam_kernel{14, 14, 1};
    bool use_aspp = true;
    std::vector<Shape3> aspp_rates{{1, 1, 1}, {2, 2, 1}, {4, 4, 1}};
    int out_classes = 2;
    uint64_t seed = 0;

    int level_channels(int level) const { return base_channels << level; }

    void validate() const {
        if (levels < 2) throw std::invalid_argument("model: levels must be >= 2");
        if (base_channels < 2) throw std::invalid_argument("model: base_channels must be >= 2");
        if (out_classes != 2) throw std::invalid_argument("model: out_classes must be 2");
        auto is = [](const Shape3& a, int x, int y, int z) { return a[0] == x && a[1] == y && a[2] == z; };
        if (!is(encoder_kernel, 3, 3, 1) && !is(encoder_kernel, 3, 3, 3))
            throw std::invalid_argument("model: encoder_kernel must be (3,3,1) or (3,3,3)");
        if (!is(resample_kernel, 2, 2, 1) && !is(resample_kernel, 2, 2, 2))
            throw std::invalid_argument("model: resample_kernel must be (2,2,1) or (2,2,2)");
        if (!is(bottleneck_kernel, 3, 3, 3)) throw std::invalid_argument("model: bottleneck_kernel is fixed at (3,3,3)");
        if (norm != "group" && norm != "batch") throw std::invalid_argument("model: norm must be \"group\" or \"batch\"");
        if (gn_groups < 1) throw std::invalid_argument("model: gn_groups must be >= 1");
        if (norm == "group")
            for (int l = 0; l < levels; ++l)
                if (level_channels(l) % gn_groups != 0)
                    throw std::invalid_argument("model: gn_groups " + std::to_string(gn_groups) +
                                                " does not divide channel count " + std::to_string(level_channels(l)));
        if (use_aspp) {
            if (aspp_rates.empty()) throw std::invalid_argument("model: aspp_rates must not be empty");
            for (const auto& r : aspp_rates)
                for (int a : r)
                    if (a < 1) throw std::invalid_argument("model: aspp rates must be >= 1");
            if (level_channels(levels - 1) % gn_groups != 0)
                throw std::invalid_argument("model: gn_groups must divide the bottleneck channel count for the dilated block");
        }
        for (int a : sam_kernel)
            if (a < 1) throw std::invalid_argument("model: sam_kernel must be >= 1");
    }
};

inline nlohmann::json shape3_to_json(const Shape3& s) { return nlohmann::json::array({s[0], s[1], s[2]}); }

inline Shape3 shape3_from_json(const nlohmann::json& j) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected a 3-element array");
    return Shape3{j[0].get<int>(), j[1].get<int>(), j[2].get<int>()};
}

inline nlohmann::json model_to_json(const ModelConfig& c) {
    nlohmann::json rates = nlohmann::json::array();
    for (const auto& r : c.aspp_rates) rates.push_back(shape3_to_json(r));
    return nlohmann::json{{"base_channels", c.base_channels},
                          {"levels", c.levels},
                          {"encoder_kernel", shape3_to_json(c.encoder_kernel)},
                          {"resample_kernel", shape3_to_json(c.resample_kernel)},
                          {"bottleneck_kernel", shape3_to_json(c.bottleneck_kernel)},
                          {"norm", c.norm},
                          {"gn_groups", c.gn_groups},
                          {"use_sam", c.use_sam},
                          {"sam_kernel", shape3_to_json(c.sam_kernel)},
                          {"use_aspp", c.use_aspp},
                          {"aspp_rates", rates},
                          {"out_classes", c.out_classes},
                          {"seed", c.seed}};
}

inline ModelConfig model_from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.base_channels = j.value("base_channels", c.base_channels);
    c.levels = j.value("levels", c.levels);
    if (j.contains("encoder_kernel")) c.encoder_kernel = shape3_from_json(j.at("encoder_kernel"));
    if (j.contains("resample_kernel")) c.resample_kernel = shape3_from_json(j.at("resample_kernel"));
    if (j.contains("bottleneck_kernel")) c.bottleneck_kernel = shape3_from_json(j.at("bottleneck_kernel"));
    c.norm = j.value("norm", c.norm);
    c.gn_groups = j.value("gn_groups", c.gn_groups);
    c.use_sam = j.value("use_sam", c.use_sam);
    if (j.contains("sam_kernel")) c.sam_kernel = shape3_from_json(j.at("sam_kernel"));
    c.use_aspp = j.value("use_aspp", c.use_aspp);
    if (j.contains("aspp_rates")) {
        c.aspp_rates.clear();
        for (const auto& r : j.at("aspp_rates")) c.aspp_rates.push_back(shape3_from_json(r));
    }
    c.out_classes = j.value("out_classes", c.out_classes);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
}

// ---------------------------------------------------------- layer listing ---
// One row per structural element, in forward order. This single list drives
// parameter construction, parameter counting, and the ablation layer dump, so
// the three can never drift apart.
struct LayerDesc {
    std::string path;
    std::string kind;  // conv | tconv | norm | pool | sam_gate | aspp
    Shape3 kernel{1, 1, 1};
    Shape3 dilation{1, 1, 1};
    int in_channels = 0;
    int out_channels = 0;
    std::string norm_kind;  // for kind == "norm"
};

inline void describe_aspp(std::vector<LayerDesc>& out, const std::string& prefix, int channels,
                          const std::vector<Shape3>& rates, int gn_groups) {
    (void)gn_groups;
    out.push_back({prefix, "aspp", {1, 1, 1}, {1, 1, 1}, channels, channels, ""});
    for (size_t i = 0; i < rates.size(); ++i) {
        const auto& r = rates[i];
        bool pointwise = r[0] == 1 && r[1] == 1 && r[2] == 1;
        Shape3 kernel = pointwise ? Shape3{1, 1, 1} : Shape3{3, 3, 3};
        std::string p = prefix + "/branch" + std::to_string(i);
        out.push_back({p + "/conv", "conv", kernel, r, channels, channels, ""});
        out.push_back({p + "/norm", "norm", {1, 1, 1}, {1, 1, 1}, channels, channels, "group"});
    }
    out.push_back({prefix + "/fuse/conv", "conv", {1, 1, 1}, {1, 1, 1}, channels * static_cast<int>(rates.size()),
                   channels, ""});
}

inline std::vector<LayerDesc> describe_layers(const ModelConfig& cfg) {
    cfg.validate();
    std::vector<LayerDesc> out;
    const int L = cfg.levels;
    auto conv = [&](const std::string& p, Shape3 k, int ci, int co) {
        out.push_back({p, "conv", k, {1, 1, 1}, ci, co, ""});
    };
    auto norm = [&](const std::string& p, int c, const std::string& kind) {
        out.push_back({p, "norm", {1, 1, 1}, {1, 1, 1}, c, c, kind});
    };
    for (int l = 0; l < L - 1; ++l) {
        const int ci = l == 0 ? 1 : cfg.level_channels(l - 1);
        const int co = cfg.level_channels(l);
        const std::string e = "enc" + std::to_string(l);
        conv(e + "/conv1", cfg.encoder_kernel, ci, co);
        norm(e + "/norm1", co, cfg.norm);
        conv(e + "/conv2", cfg.encoder_kernel, co, co);
        norm(e + "/norm2", co, cfg.norm);
        out.push_back({"pool" + std::to_string(l), "pool", cfg.resample_kernel, {1, 1, 1}, co, co, ""});
    }
    {
        const int ci = cfg.level_channels(L - 2), co = cfg.level_channels(L - 1);
        conv("bott/conv1", cfg.bottleneck_kernel, ci, co);
        norm("bott/norm1", co, cfg.norm);
        conv("bott/conv2", cfg.bottleneck_kernel, co, co);
        norm("bott/norm2", co, cfg.norm);
        if (cfg.use_aspp) describe_aspp(out, "aspp", co, cfg.aspp_rates, cfg.gn_groups);
    }
    for (int l = L - 2; l >= 0; --l) {
        const int ch = cfg.level_channels(l);
        const std::string ls = std::to_string(l);
        out.push_back({"up" + ls + "/tconv", "tconv", cfg.resample_kernel, {1, 1, 1}, cfg.level_channels(l + 1), ch, ""});
        if (cfg.use_sam) {
            out.push_back({"sam" + ls, "sam_gate", cfg.sam_kernel, {1, 1, 1}, ch, ch, ""});
            conv("sam" + ls + "/conv", cfg.sam_kernel, 2, 1);
        }
        const std::string dpath = "dec" + ls;
        conv(dpath + "/conv1", cfg.encoder_kernel, 2 * ch, ch);
        norm(dpath + "/norm1", ch, cfg.norm);
        conv(dpath + "/conv2", cfg.encoder_kernel, ch, ch);
        norm(dpath + "/norm2", ch, cfg.norm);
    }
    conv("head/conv", {1, 1, 1}, cfg.level_channels(0), cfg.out_classes);
    return out;
}

// --------------------------------------------------------------- parameters --
template <typename T>
struct ParamEntry {
    std::string name;
    Tensor5<T> value;
    bool is_state = false;  // running statistics, saved but not optimized
};

template <typename T>
struct Parameters {
    std::vector<ParamEntry<T>> entries;
    std::unordered_map<std::string, size_t> index;

    Tensor5<T>& add(const std::string& name, const typename Tensor5<T>::Shape& shape, bool is_state = false) {
        if (index.count(name)) throw std::logic_error("duplicate parameter: " + name);
        index[name] = entries.size();
        entries.push_back({name, Tensor5<T>(shape), is_state});
        return entries.back().value;
    }

    Tensor5<T>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) throw std::out_of_range("unknown parameter: " + name);
        return entries[it->second].value;
    }
    const Tensor5<T>& at(const std::string& name) const { return const_cast<Parameters*>(this)->at(name); }
    bool has(const std::string& name) const { return index.count(name) != 0; }

    int64_t count_trainable() const {
        int64_t n = 0;
        for (const auto& e : entries)
            if (!e.is_state) n += e.value.size();
        return n;
    }

    template <typename U>
    Parameters<U> cast() const {
        Parameters<U> out;
        for (const auto& e : entries) {
            auto& t = out.add(e.name, e.value.shape(), e.is_state);
            const T* s = e.value.data();
            U* d = t.data();
            for (int64_t i = 0; i < t.size(); ++i) d[i] = static_cast<U>(s[i]);
        }
        return out;
    }
};

namespace model_detail {

template <typename T>
void init_conv(Tensor5<T>& w, int64_t fan_in, Rng& rng) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    T* p = w.data();
    for (int64_t i = 0; i < w.size(); ++i) p[i] = static_cast<T>(rng.uniform(-limit, limit));
}

}  // namespace model_detail

// Fan-in-scaled uniform init for conv kernels, zeros for biases, identity
// affine for norms. Draw order follows the layer list, so a seed pins every
// weight bit-exactly.
template <typename T>
Parameters<T> init_parameters(const std::vector<LayerDesc>& layers, uint64_t seed) {
    Parameters<T> params;
    Rng rng(seed);
    for (const auto& l : layers) {
        if (l.kind == "conv" || l.kind == "tconv") {
            auto& w = params.add(l.path + "/weight", {l.kernel[0], l.kernel[1], l.kernel[2], l.in_channels, l.out_channels});
            int64_t fan_in = l.kind == "conv"
                                 ? static_cast<int64_t>(l.kernel[0]) * l.kernel[1] * l.kernel[2] * l.in_channels
                                 : l.in_channels;  // one tap feeds each output voxel of the upsampler
            model_detail::init_conv(w, fan_in, rng);
            params.add(l.path + "/bias", {1, 1, 1, 1, l.out_channels});
        } else if (l.kind == "norm") {
            params.add(l.path + "/gamma", {1, 1, 1, 1, l.out_channels}).fill(T(1));
            params.add(l.path + "/beta", {1, 1, 1, 1, l.out_channels});
            if (l.norm_kind == "batch") {
                params.add(l.path + "/running_mean", {1, 1, 1, 1, l.out_channels}, true);
                params.add(l.path + "/running_var", {1, 1, 1, 1, l.out_channels}, true).fill(T(1));
            }
        }
    }
    return params;
}

template <typename T>
Parameters<T> build_model(const ModelConfig& cfg) {
    return init_parameters<T>(describe_layers(cfg), cfg.seed);
}

inline int64_t parameter_count(const ModelConfig& cfg) { return build_model<float>(cfg).count_trainable(); }

// ----------------------------------------------------------------- blocks ---
// Gate = sigmoid(conv([channel-avg; channel-max])); output = input * gate.
template <typename T>
Var<T> spatial_attention_3d(Graph<T>& g, const Var<T>& f, const Var<T>& w, const Var<T>& b) {
    if (w.value.d() != 2 || w.value.c() != 1)
        throw std::invalid_argument("spatial_attention_3d: gate conv must map 2 channels to 1");
    Var<T> avg = channel_mean(g, f);
    Var<T> mx = channel_max(g, f);
    Var<T> pooled = concat_c(g, avg, mx);
    Var<T> gate = sigmoid(g, conv3d(g, pooled, w, b));
    return mul_broadcast(g, f, gate);
}

// Parallel conv branches (pointwise for rate (1,1,1), dilated 3x3x3
// otherwise), each conv -> group norm -> relu, concatenated and fused back to
// the input width by a pointwise conv.
template <typename T>
Var<T> aspp_3d(Graph<T>& g, const Var<T>& f, const std::vector<Shape3>& rates, int gn_groups, Parameters<T>& params,
               const std::string& prefix = "aspp") {
    if (rates.empty()) throw std::invalid_argument("aspp_3d: needs at least one rate");
    const Shape3 extent{static_cast<int>(f.value.h()), static_cast<int>(f.value.w()), static_cast<int>(f.value.d())};
    for (const auto& r : rates)
        for (int a = 0; a < 3; ++a)
            if (r[a] > 1 && r[a] >= extent[a])
                throw std::invalid_argument("aspp_3d: dilation rate " + shape3_str(r) + " meets or exceeds feature extent " +
                                            shape3_str(extent));
    auto bind = [&](const std::string& n) { return g.param(n, params.at(n)); };
    Var<T> acc;
    bool first = true;
    for (size_t i = 0; i < rates.size(); ++i) {
        std::string p = prefix + "/branch" + std::to_string(i);
        Var<T> v = conv3d(g, f, bind(p + "/conv/weight"), bind(p + "/conv/bias"), rates[i]);
        v = group_norm(g, v, bind(p + "/norm/gamma"), bind(p + "/norm/beta"), gn_groups);
        v = relu(g, v);
        acc = first ? v : concat_c(g, acc, v);
        first = false;
    }
    return conv3d(g, acc, bind(prefix + "/fuse/conv/weight"), bind(prefix + "/fuse/conv/bias"));
}

// ---------------------------------------------------------------- forward ---
struct ShapeLogEntry {
    std::string path;
    std::array<int64_t, 5> shape;
};

template <typename T>
Var<T> forward(Graph<T>& g, const ModelConfig& cfg, Parameters<T>& params, const Var<T>& x, bool training = false,
               std::vector<ShapeLogEntry>* shape_log = nullptr) {
    cfg.validate();
    if (x.value.c() != 1) throw std::invalid_argument("forward: input must have exactly one channel");
    {
        int64_t need_h = 1, need_w = 1, need_d = 1;
        for (int l = 0; l < cfg.levels - 1; ++l) {
            need_h *= cfg.resample_kernel[0];
            need_w *= cfg.resample_kernel[1];
            need_d *= cfg.resample_kernel[2];
        }
        if (x.value.h() % need_h || x.value.w() % need_w || x.value.d() % need_d)
            throw std::invalid_argument("forward: input extent (" + std::to_string(x.value.h()) + "," +
                                        std::to_string(x.value.w()) + "," + std::to_string(x.value.d()) +
                                        ") not divisible by the total downsampling factor (" + std::to_string(need_h) +
                                        "," + std::to_string(need_w) + "," + std::to_string(need_d) + ")");
    }

    auto bind = [&](const std::string& n) { return g.param(n, params.at(n)); };
    auto note = [&](const std::string& p, const Var<T>& v) {
        if (shape_log) shape_log->push_back({p, v.value.shape()});
    };
    auto apply_norm = [&](Var<T> in, const std::string& path) {
        if (cfg.norm == "group") return group_norm(g, in, bind(path + "/gamma"), bind(path + "/beta"), cfg.gn_groups);
        return batch_norm(g, in, bind(path + "/gamma"), bind(path + "/beta"), params.at(path + "/running_mean"),
                          params.at(path + "/running_var"), training);
    };
    auto stage = [&](Var<T> in, const std::string& conv_path, const std::string& norm_path, Shape3 dil = {1, 1, 1}) {
        Var<T> v = conv3d(g, in, bind(conv_path + "/weight"), bind(conv_path + "/bias"), dil);
        v = relu(g, apply_norm(v, norm_path));
        note(conv_path, v);
        return v;
    };

    const int L = cfg.levels;
    std::vector<Var<T>> skips;
    Var<T> cur = x;
    for (int l = 0; l < L - 1; ++l) {
        const std::string e = "enc" + std::to_string(l);
        cur = stage(cur, e + "/conv1", e + "/norm1");
        cur = stage(cur, e + "/conv2", e + "/norm2");
        skips.push_back(cur);
        cur = maxpool3d(g, cur, cfg.resample_kernel);
        note("pool" + std::to_string(l), cur);
    }
    cur = stage(cur, "bott/conv1", "bott/norm1");
    cur = stage(cur, "bott/conv2", "bott/norm2");
    if (cfg.use_aspp) {
        cur = aspp_3d(g, cur, cfg.aspp_rates, cfg.gn_groups, params);
        note("aspp", cur);
    }
    for (int l = L - 2; l >= 0; --l) {
        const std::string ls = std::to_string(l);
        Var<T> up = tconv3d(g, cur, bind("up" + ls + "/tconv/weight"), bind("up" + ls + "/tconv/bias"));
        note("up" + ls, up);
        Var<T> skip = skips[l];
        if (cfg.use_sam) {
            skip = spatial_attention_3d(g, skip, bind("sam" + ls + "/conv/weight"), bind("sam" + ls + "/conv/bias"));
            note("sam" + ls, skip);
        }
        cur = concat_c(g, skip, up);
        const std::string d = "dec" + ls;
        cur = stage(cur, d + "/conv1", d + "/norm1");
        cur = stage(cur, d + "/conv2", d + "/norm2");
    }
    cur = conv3d(g, cur, bind("head/conv/weight"), bind("head/conv/bias"));
    note("head", cur);
    return cur;
}

// Stateless inference entry point: no tape, eval-mode statistics.
template <typename T>
Tensor5<T> forward_logits(const ModelConfig& cfg, Parameters<T>& params, const Tensor5<T>& x,
                          std::vector<ShapeLogEntry>* shape_log = nullptr) {
    Graph<T> g(false);
    return forward(g, cfg, params, g.constant(x), false, shape_log).value;
}

// ------------------------------------------------------------- prediction ---
struct PipelineSpec {
    Shape3 canonical_shape = kCanonicalShape;
    int chunk_depth = kChunkDepth;
};

inline nlohmann::json pipeline_to_json(const PipelineSpec& p) {
    return nlohmann::json{{"canonical_shape", shape3_to_json(p.canonical_shape)}, {"chunk_depth", p.chunk_depth}};
}

inline PipelineSpec pipeline_from_json(const nlohmann::json& j) {
    PipelineSpec p;
    if (j.contains("canonical_shape")) p.canonical_shape = shape3_from_json(j.at("canonical_shape"));
    p.chunk_depth = j.value("chunk_depth", p.chunk_depth);
    return p;
}

// Normalize -> canonical grid -> per-chunk forward -> argmax -> reassemble at
// the original shape. Argmax ties resolve to background.
inline LabelMask predict_case(const ModelConfig& cfg, Parameters<float>& params, const Case& subject,
                              const PipelineSpec& pipe = {}) {
    Volume v = normalize_intensity(subject.image);
    CanonicalResult canon = to_canonical(v, std::nullopt, pipe.canonical_shape);
    std::vector<Grid3<float>> chunks = slice_depth(canon.image.data, pipe.chunk_depth);

    std::vector<Grid3<uint8_t>> pred_chunks;
    pred_chunks.reserve(chunks.size());
    for (const auto& chunk : chunks) {
        Tensor5<float> x(1, chunk.h(), chunk.w(), chunk.d(), 1);
        std::memcpy(x.data(), chunk.data(), sizeof(float) * chunk.size());
        Tensor5<float> logits = forward_logits(cfg, params, x);
        Grid3<uint8_t> p(chunk.dims(), uint8_t{0});
        const float* lp = logits.data();
        for (size_t i = 0; i < p.size(); ++i) p[i] = lp[2 * i + 1] > lp[2 * i] ? 1 : 0;
        pred_chunks.push_back(std::move(p));
    }
    Grid3<uint8_t> canonical_pred = unslice_depth(pred_chunks);
    return from_canonical(LabelMask{std::move(canonical_pred)}, canon.geometry);
}

// ------------------------------------------------------------- checkpoint ---
// Layout: magic line, little-endian u32 header length, JSON header (configs +
// ordered entry table), then each entry's raw float32 data in order.
struct Checkpoint {
    ModelConfig model;
    PipelineSpec pipeline;
    Parameters<float> params;
};

inline constexpr char kCheckpointMagic[] = "SAVCKPT1\n";

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
    nlohmann::json entries = nlohmann::json::array();
    for (const auto& e : ck.params.entries) {
        const auto& s = e.value.shape();
        entries.push_back({{"name", e.name},
                           {"shape", {s[0], s[1], s[2], s[3], s[4]}},
                           {"kind", e.is_state ? "state" : "param"}});
    }
    nlohmann::json header{{"version", 1},
                          {"model", model_to_json(ck.model)},
                          {"pipeline", pipeline_to_json(ck.pipeline)},
                          {"entries", entries}};
    std::string hs = header.dump();

    std::ofstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint for writing: " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
    uint32_t len = static_cast<uint32_t>(hs.size());
    f.write(reinterpret_cast<const char*>(&len), sizeof(len));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& e : ck.params.entries)
        f.write(reinterpret_cast<const char*>(e.value.data()), static_cast<std::streamsize>(e.value.size() * sizeof(float)));
    if (!f) throw CheckpointError("write failed for checkpoint: " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw CheckpointError("cannot open checkpoint: " + path);
    char magic[sizeof(kCheckpointMagic) - 1];
    if (!f.read(magic, sizeof(magic)) || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw CheckpointError("not a checkpoint file (bad magic): " + path);
    uint32_t len = 0;
    if (!f.read(reinterpret_cast<char*>(&len), sizeof(len))) throw CheckpointError("truncated checkpoint header: " + path);
    std::string hs(len, '\0');
    if (!f.read(hs.data(), len)) throw CheckpointError("truncated checkpoint header: " + path);

    Checkpoint ck;
    try {
        nlohmann::json header = nlohmann::json::parse(hs);
        ck.model = model_from_json(header.at("model"));
        ck.pipeline = pipeline_from_json(header.at("pipeline"));
        for (const auto& ej : header.at("entries")) {
            auto sj = ej.at("shape");
            typename Tensor5<float>::Shape shape{sj[0].get<int64_t>(), sj[1].get<int64_t>(), sj[2].get<int64_t>(),
                                                 sj[3].get<int64_t>(), sj[4].get<int64_t>()};
            bool is_state = ej.at("kind").get<std::string>() == "state";
            auto& t = ck.params.add(ej.at("name").get<std::string>(), shape, is_state);
            if (!f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float))))
                throw CheckpointError("truncated checkpoint payload at " + ej.at("name").get<std::string>());
        }
    } catch (const nlohmann::json::exception& e) {
        throw CheckpointError(std::string("malformed checkpoint header: ") + e.what());
    }

    // The header must describe exactly the parameter set of its model config.
    Parameters<float> expect = build_model<float>(ck.model);
    if (expect.entries.size() != ck.params.entries.size())
        throw CheckpointError("checkpoint entry count does not match its model config");
    for (size_t i = 0; i < expect.entries.size(); ++i)
        if (expect.entries[i].name != ck.params.entries[i].name ||
            !(expect.entries[i].value.shape() == ck.params.entries[i].value.shape()))
            throw CheckpointError("checkpoint entry mismatch at " + expect.entries[i].name);
    return ck;
}

}  // namespace sav
