#pragma once

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sav/augmentation.hpp"
#include "sav/model.hpp"
#include "sav/nn.hpp"
#include "sav/preprocessing.hpp"
#include "sav/rng.hpp"
#include "sav/tensor.hpp"
#include "sav/volume.hpp"

namespace sav {

struct TrainConfig {
    double lr = 0.001;
    int batch_size = 4;
    int steps = 0;
    double w_ce = 0.5;
    double w_dice = 0.5;
    uint64_t seed = 0;
    int checkpoint_every = 0;  // 0: only the final checkpoint
    AugmentationConfig augmentation;
    PipelineSpec pipeline;

    void validate() const {
        if (lr <= 0) throw std::invalid_argument("train: lr must be positive");
        if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
        if (steps < 0) throw std::invalid_argument("train: steps must be >= 0");
        if (w_ce < 0 || w_dice < 0 || (w_ce == 0 && w_dice == 0))
            throw std::invalid_argument("train: loss weights must be >= 0 and not both zero");
        if (checkpoint_every < 0) throw std::invalid_argument("train: checkpoint_every must be >= 0");
        augmentation.validate();
    }
};

inline nlohmann::json train_to_json(const TrainConfig& c) {
    return nlohmann::json{{"lr", c.lr},
                          {"batch_size", c.batch_size},
                          {"steps", c.steps},
                          {"loss_weights", {c.w_ce, c.w_dice}},
                          {"seed", c.seed},
                          {"checkpoint_every", c.checkpoint_every},
                          {"augmentation", augmentation_to_json(c.augmentation)},
                          {"pipeline", pipeline_to_json(c.pipeline)}};
}

inline TrainConfig train_from_json(const nlohmann::json& j) {
    TrainConfig c;
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    if (j.contains("loss_weights")) {
        const auto& w = j.at("loss_weights");
        if (!w.is_array() || w.size() != 2) throw std::invalid_argument("train: loss_weights must be [w_ce, w_dice]");
        c.w_ce = w[0].get<double>();
        c.w_dice = w[1].get<double>();
    }
    c.seed = j.value("seed", c.seed);
    c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
    if (j.contains("augmentation")) c.augmentation = augmentation_from_json(j.at("augmentation"));
    if (j.contains("pipeline")) c.pipeline = pipeline_from_json(j.at("pipeline"));
    c.validate();
    return c;
}

// ------------------------------------------------------------------- loss ---
struct LossResult {
    double total = 0.0;
    double ce = 0.0;
    double dice = 0.0;
    int64_t valid_voxels = 0;
};

// Softmax cross-entropy averaged over non-ignored voxels plus a smoothed soft
// overlap penalty on the foreground probability:
//   dice_loss = 1 - (2*sum(p1*t) + eps) / (sum(p1) + sum(t) + eps), eps = 1.
// Ignored voxels are skipped by control flow (never masked arithmetic), so
// their logits cannot influence any term even at the last bit. When grad_out
// is given it receives d(total)/d(logits), zero at ignored voxels.
template <typename T>
LossResult combined_loss(const Tensor5<T>& logits, const Tensor5<uint8_t>& target, const Tensor5<uint8_t>& ignore,
                         double w_ce, double w_dice, Tensor5<T>* grad_out = nullptr) {
    if (logits.c() != 2) throw std::invalid_argument("combined_loss: expected two-class logits");
    if (target.c() != 1 || ignore.c() != 1) throw std::invalid_argument("combined_loss: target/ignore must be single-channel");
    if (logits.n() != target.n() || logits.h() != target.h() || logits.w() != target.w() || logits.d() != target.d() ||
        !target.same_shape(ignore))
        throw std::invalid_argument("combined_loss: shape mismatch");
    if (w_ce < 0 || w_dice < 0 || (w_ce == 0 && w_dice == 0))
        throw std::invalid_argument("combined_loss: bad loss weights");

    const int64_t voxels = target.size();
    const T* lp = logits.data();
    const uint8_t* tp = target.data();
    const uint8_t* ip = ignore.data();

    constexpr double eps = 1.0;
    std::vector<double> p1(voxels, 0.0);
    double ce_sum = 0.0, s1 = 0.0, s2 = 0.0, s3 = 0.0;
    int64_t m = 0;
    for (int64_t v = 0; v < voxels; ++v) {
        if (ip[v]) continue;
        const double z0 = lp[2 * v], z1 = lp[2 * v + 1];
        const double zm = z0 > z1 ? z0 : z1;
        const double e0 = std::exp(z0 - zm), e1 = std::exp(z1 - zm);
        const double inv = 1.0 / (e0 + e1);
        const double q1 = e1 * inv;
        p1[v] = q1;
        const double t = tp[v] ? 1.0 : 0.0;
        const double pt = tp[v] ? q1 : e0 * inv;
        ce_sum += -std::log(std::max(pt, 1e-300));
        s1 += q1 * t;
        s2 += q1;
        s3 += t;
        ++m;
    }
    if (m == 0) throw std::runtime_error("combined_loss: every voxel is ignored");

    LossResult r;
    r.valid_voxels = m;
    r.ce = ce_sum / static_cast<double>(m);
    const double b = s2 + s3 + eps;
    r.dice = 1.0 - (2.0 * s1 + eps) / b;
    r.total = w_ce * r.ce + w_dice * r.dice;

    if (grad_out) {
        if (!grad_out->same_shape(logits)) throw std::invalid_argument("combined_loss: grad_out shape mismatch");
        T* gp = grad_out->data();
        const double inv_m = 1.0 / static_cast<double>(m);
        const double b2 = b * b;
        for (int64_t v = 0; v < voxels; ++v) {
            if (ip[v]) {
                gp[2 * v] = T(0);
                gp[2 * v + 1] = T(0);
                continue;
            }
            const double q1 = p1[v];
            const double q0 = 1.0 - q1;
            const double t = tp[v] ? 1.0 : 0.0;
            // d(dice_loss)/d(p1) at this voxel, with batch sums held fixed
            const double ddice_dp1 = -2.0 * t / b + (2.0 * s1 + eps) / b2;
            const double dp1_dz0 = -q1 * q0;  // p1 * (delta - p)
            const double dp1_dz1 = q1 * q0;
            const double dce_dz0 = (q0 - (tp[v] ? 0.0 : 1.0)) * inv_m;
            const double dce_dz1 = (q1 - (tp[v] ? 1.0 : 0.0)) * inv_m;
            gp[2 * v] = static_cast<T>(w_ce * dce_dz0 + w_dice * ddice_dp1 * dp1_dz0);
            gp[2 * v + 1] = static_cast<T>(w_ce * dce_dz1 + w_dice * ddice_dp1 * dp1_dz1);
        }
    }
    return r;
}

// Single-sample convenience over plain grids.
template <typename T>
LossResult combined_loss(const Tensor5<T>& logits, const Grid3<float>& target, const Grid3<uint8_t>& ignore,
                         double w_ce, double w_dice, Tensor5<T>* grad_out = nullptr) {
    Tensor5<uint8_t> t(1, target.h(), target.w(), target.d(), 1);
    Tensor5<uint8_t> ig(1, ignore.h(), ignore.w(), ignore.d(), 1);
    for (size_t i = 0; i < target.size(); ++i) t.data()[i] = target[i] != 0.f ? 1 : 0;
    std::memcpy(ig.data(), ignore.data(), ignore.size());
    return combined_loss(logits, t, ig, w_ce, w_dice, grad_out);
}

// ------------------------------------------------------------------- adam ---
template <typename T>
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {}

    // One update over (parameter, gradient) pairs; pair order must be stable
    // across steps since moment slots are positional.
    void step(const std::vector<std::pair<Tensor5<T>*, const Tensor5<T>*>>& pg) {
        if (m_.empty()) {
            for (const auto& [p, g] : pg) {
                m_.emplace_back(p->shape());
                v_.emplace_back(p->shape());
            }
        }
        if (m_.size() != pg.size()) throw std::logic_error("adam: parameter set changed between steps");
        ++t_;
        const double bc1 = 1.0 - std::pow(b1_, t_);
        const double bc2 = 1.0 - std::pow(b2_, t_);
        for (size_t i = 0; i < pg.size(); ++i) {
            Tensor5<T>& p = *pg[i].first;
            const Tensor5<T>& g = *pg[i].second;
            if (!p.same_shape(g) || !p.same_shape(m_[i])) throw std::logic_error("adam: shape mismatch in slot " + std::to_string(i));
            T* pp = p.data();
            const T* gp = g.data();
            T* mp = m_[i].data();
            T* vp = v_[i].data();
            for (int64_t k = 0; k < p.size(); ++k) {
                const double gk = gp[k];
                const double mk = b1_ * mp[k] + (1.0 - b1_) * gk;
                const double vk = b2_ * vp[k] + (1.0 - b2_) * gk * gk;
                mp[k] = static_cast<T>(mk);
                vp[k] = static_cast<T>(vk);
                pp[k] = static_cast<T>(pp[k] - lr_ * (mk / bc1) / (std::sqrt(vk / bc2) + eps_));
            }
        }
    }

    // Update every trainable entry from the tape's accumulated gradients.
    void step(Parameters<T>& params, const Graph<T>& g) {
        std::vector<std::pair<Tensor5<T>*, const Tensor5<T>*>> pg;
        pg.reserve(params.entries.size());
        for (auto& e : params.entries)
            if (!e.is_state) pg.push_back({&e.value, &g.grad(e.name)});
        step(pg);
    }

    int iterations() const { return t_; }

private:
    double lr_, b1_, b2_, eps_;
    int t_ = 0;
    std::vector<Tensor5<T>> m_, v_;
};

// ---------------------------------------------------------------- training ---
struct TraceRow {
    int step = 0;
    double total = 0.0;
    double ce = 0.0;
    double dice = 0.0;
};

using LossTrace = std::vector<TraceRow>;

inline std::string trace_to_csv(const LossTrace& trace) {
    std::string out = "step,total,ce,dice\n";
    char line[128];
    for (const auto& r : trace) {
        std::snprintf(line, sizeof(line), "%d,%.9g,%.9g,%.9g\n", r.step, r.total, r.ce, r.dice);
        out += line;
    }
    return out;
}

struct TrainChunk {
    Grid3<float> image;
    Grid3<uint8_t> mask;  // labels {0,1,2}
};

// Normalize, move to the canonical grid, and split every case into z-chunks.
// Chunks that are entirely ignore-labeled are dropped with a note, everything
// else (including all-background chunks) enters the pool.
inline std::vector<TrainChunk> build_chunk_pool(const std::vector<Case>& cases, const PipelineSpec& pipe,
                                                std::vector<std::string>* warnings = nullptr) {
    std::vector<TrainChunk> pool;
    for (const auto& subject : cases) {
        subject.validate();
        if (!subject.truth) throw std::invalid_argument("train: case " + subject.id + " has no truth mask");
        Volume v = normalize_intensity(subject.image);
        CanonicalResult canon = to_canonical(v, subject.truth, pipe.canonical_shape);
        auto img_chunks = slice_depth(canon.image.data, pipe.chunk_depth);
        auto mask_chunks = slice_depth(canon.mask->data, pipe.chunk_depth);
        for (size_t i = 0; i < img_chunks.size(); ++i) {
            bool all_ignored = true;
            for (size_t k = 0; k < mask_chunks[i].size() && all_ignored; ++k)
                if (mask_chunks[i][k] != 2) all_ignored = false;
            if (all_ignored) {
                if (warnings)
                    warnings->push_back("case " + subject.id + " chunk " + std::to_string(i) +
                                        " is entirely ignore-labeled; skipped");
                continue;
            }
            pool.push_back({std::move(img_chunks[i]), std::move(mask_chunks[i])});
        }
    }
    if (pool.empty()) throw std::runtime_error("train: chunk pool is empty; no trainable voxels in the dataset");
    return pool;
}

struct TrainResult {
    Parameters<float> params;
    LossTrace trace;
    std::vector<std::string> warnings;
};

namespace train_detail {

inline void shuffle_indices(std::vector<size_t>& idx, Rng& rng) {
    for (size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[rng.uniform_int(0, static_cast<int>(i) - 1)]);
}

}  // namespace train_detail

// Sequential Adam loop over shuffled chunk minibatches. Augmentation draws
// come from a per-sample stream derived from (augmentation.seed, sample
// counter), so the trace is a pure function of the two config seeds.
inline TrainResult train(const ModelConfig& model_cfg, const TrainConfig& cfg, const std::vector<Case>& dataset,
                         const std::string& checkpoint_dir = "") {
    model_cfg.validate();
    cfg.validate();
    if (dataset.empty()) throw std::invalid_argument("train: dataset is empty");
    if (cfg.augmentation.transpose && cfg.pipeline.canonical_shape[0] != cfg.pipeline.canonical_shape[1])
        throw std::invalid_argument("train: transposition augmentation needs a square in-plane canonical shape");

    TrainResult result;
    result.params = build_model<float>(model_cfg);
    std::vector<TrainChunk> pool = build_chunk_pool(dataset, cfg.pipeline, &result.warnings);

    Adam<float> opt(cfg.lr);
    Rng shuffle_rng = derive_rng(cfg.seed, 1);
    std::vector<size_t> order(pool.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    size_t cursor = order.size();  // trigger an initial shuffle
    uint64_t sample_counter = 0;

    auto save = [&](const std::string& name) {
        if (checkpoint_dir.empty()) return;
        Checkpoint ck{model_cfg, cfg.pipeline, result.params};
        save_checkpoint((std::filesystem::path(checkpoint_dir) / name).string(), ck);
    };

    const int H = cfg.pipeline.canonical_shape[0], W = cfg.pipeline.canonical_shape[1];
    const int CD = cfg.pipeline.chunk_depth;
    const int64_t chunk_voxels = static_cast<int64_t>(H) * W * CD;

    for (int step = 1; step <= cfg.steps; ++step) {
        Tensor5<float> x(cfg.batch_size, H, W, CD, 1);
        Tensor5<uint8_t> target(cfg.batch_size, H, W, CD, 1);
        Tensor5<uint8_t> ignore(cfg.batch_size, H, W, CD, 1);
        for (int b = 0; b < cfg.batch_size; ++b) {
            if (cursor >= order.size()) {
                train_detail::shuffle_indices(order, shuffle_rng);
                cursor = 0;
            }
            const TrainChunk& chunk = pool[order[cursor++]];
            Rng aug_rng = derive_rng(cfg.augmentation.seed, sample_counter++);
            auto [img, msk] = augment(chunk.image, chunk.mask, cfg.augmentation, aug_rng);
            TrainingTarget tt = training_target(LabelMask{std::move(msk)});
            std::memcpy(x.data() + b * chunk_voxels, img.data(), sizeof(float) * chunk_voxels);
            for (int64_t k = 0; k < chunk_voxels; ++k) {
                target.data()[b * chunk_voxels + k] = tt.target[k] != 0.f ? 1 : 0;
                ignore.data()[b * chunk_voxels + k] = tt.ignore[k];
            }
        }

        Graph<float> g(true);
        Var<float> logits = forward(g, model_cfg, result.params, g.constant(x), true);
        Tensor5<float> grad(logits.value.shape());
        LossResult loss = combined_loss(logits.value, target, ignore, cfg.w_ce, cfg.w_dice, &grad);
        if (!std::isfinite(loss.total))
            throw DivergenceError(step, "train: diverged with non-finite loss at step " + std::to_string(step));
        g.backward(logits, grad);
        opt.step(result.params, g);

        result.trace.push_back({step, loss.total, loss.ce, loss.dice});
        if (cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) save("ckpt_" + std::to_string(step) + ".bin");
    }
    save("ckpt_final.bin");
    return result;
}

}  // namespace sav
