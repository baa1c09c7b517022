// Release-gate checks for the segmentation toolkit. Each check prints one
// [PASS]/[FAIL] line; the process exits nonzero if any check fails.

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <queue>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sav/cli.hpp"

using namespace sav;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Failure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

void require(bool ok, const std::string& msg) {
    if (!ok) throw Failure(msg);
}

// ------------------------------------------------------------------------
// brute-force metric oracles: plain voxel loops and BFS flood fill, written
// independently of the library implementations
// ------------------------------------------------------------------------
double oracle_dice(const Grid3<uint8_t>& p, const Grid3<uint8_t>& g) {
    double inter = 0, np = 0, ng = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        inter += (p[i] != 0) && (g[i] != 0);
        np += p[i] != 0;
        ng += g[i] != 0;
    }
    return (np + ng) == 0 ? 1.0 : 2.0 * inter / (np + ng);
}

double oracle_avd(const Grid3<uint8_t>& p, const Grid3<uint8_t>& g) {
    double np = 0, ng = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        np += p[i] != 0;
        ng += g[i] != 0;
    }
    if (ng == 0) throw std::domain_error("oracle: empty truth");
    return std::abs(np - ng) / ng;
}

std::vector<std::set<size_t>> oracle_components(const Grid3<uint8_t>& m, int conn) {
    std::vector<std::set<size_t>> comps;
    std::vector<char> seen(m.size(), 0);
    auto idx = [&](int i, int j, int k) { return m.idx(i, j, k); };
    for (int i = 0; i < m.h(); ++i)
        for (int j = 0; j < m.w(); ++j)
            for (int k = 0; k < m.d(); ++k) {
                if (!m(i, j, k) || seen[idx(i, j, k)]) continue;
                std::set<size_t> comp;
                std::queue<std::array<int, 3>> q;
                q.push({i, j, k});
                seen[idx(i, j, k)] = 1;
                while (!q.empty()) {
                    auto [ci, cj, ck] = q.front();
                    q.pop();
                    comp.insert(idx(ci, cj, ck));
                    for (int di = -1; di <= 1; ++di)
                        for (int dj = -1; dj <= 1; ++dj)
                            for (int dk = -1; dk <= 1; ++dk) {
                                int manh = std::abs(di) + std::abs(dj) + std::abs(dk);
                                if (manh == 0) continue;
                                if (conn == 6 && manh > 1) continue;
                                if (conn == 18 && manh > 2) continue;
                                int ni = ci + di, nj = cj + dj, nk = ck + dk;
                                if (ni < 0 || ni >= m.h() || nj < 0 || nj >= m.w() || nk < 0 || nk >= m.d()) continue;
                                if (!m(ni, nj, nk) || seen[idx(ni, nj, nk)]) continue;
                                seen[idx(ni, nj, nk)] = 1;
                                q.push({ni, nj, nk});
                            }
                }
                comps.push_back(std::move(comp));
            }
    return comps;
}

double oracle_f1(const Grid3<uint8_t>& p, const Grid3<uint8_t>& g, int conn, int* nt_out, int* nf_out) {
    auto gc = oracle_components(g, conn);
    auto pc = oracle_components(p, conn);
    int nt = 0, nf = 0;
    for (const auto& c : gc) {
        bool hit = false;
        for (size_t s : c) hit |= p[s] != 0;
        nt += hit;
    }
    for (const auto& c : pc) {
        bool hit = false;
        for (size_t s : c) hit |= g[s] != 0;
        nf += !hit;
    }
    *nt_out = nt;
    *nf_out = nf;
    if (nt + nf == 0) return gc.empty() ? 1.0 : 0.0;
    return double(nt) / double(nt + nf);
}

Grid3<uint8_t> random_mask(int h, int w, int d, double density, Rng& rng) {
    Grid3<uint8_t> g(h, w, d);
    for (size_t i = 0; i < g.size(); ++i) g[i] = rng.uniform() < density;
    return g;
}

// ------------------------------------------------------------------------
void check_metric_oracle() {
    auto t0 = Clock::now();
    for (uint64_t seed = 0; seed < 200; ++seed) {
        Rng rng(seed);
        double dp = rng.uniform(0.02, 0.55), dg = rng.uniform(0.02, 0.55);
        Grid3<uint8_t> p = random_mask(16, 16, 8, dp, rng);
        Grid3<uint8_t> g = random_mask(16, 16, 8, dg, rng);
        int conn = std::array<int, 3>{6, 18, 26}[seed % 3];

        require(std::abs(dice(p, g) - oracle_dice(p, g)) < 1e-12, "dice mismatch at seed " + std::to_string(seed));

        bool g_empty = true;
        for (size_t i = 0; i < g.size(); ++i) g_empty &= g[i] == 0;
        if (g_empty) {
            bool threw = false;
            try {
                avd(p, g);
            } catch (const std::domain_error&) {
                threw = true;
            }
            require(threw, "avd must refuse empty truth at seed " + std::to_string(seed));
        } else {
            require(std::abs(avd(p, g) - oracle_avd(p, g)) < 1e-12, "avd mismatch at seed " + std::to_string(seed));
        }

        int nt = 0, nf = 0;
        double of1 = oracle_f1(p, g, conn, &nt, &nf);
        LesionF1 r = lesion_f1(p, g, conn);
        require(r.n_detected == nt && r.n_false == nf, "component counts mismatch at seed " + std::to_string(seed));
        require(std::abs(r.f1 - of1) < 1e-12, "f1 mismatch at seed " + std::to_string(seed));

        Components lib = connected_components_3d(g, conn);
        require(size_t(lib.count) == oracle_components(g, conn).size(),
                "component count mismatch at seed " + std::to_string(seed));
    }
    double el = seconds_since(t0);
    require(el < 30.0, "metric oracle sweep too slow: " + std::to_string(el) + " s");
}

// ------------------------------------------------------------------------
void check_attention_gate() {
    for (uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed * 7 + 1);
        int H = 4 + int(seed % 5), W = 5 + int(seed % 4), D = 2 + int(seed % 3), C = 1 + int(seed % 5);
        Tensor5<float> f(1, H, W, D, C);
        for (int64_t i = 0; i < f.size(); ++i) f.data()[i] = float(rng.uniform(-3, 3));
        Tensor5<float> w(14, 14, 1, 2, 1);
        for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = float(rng.uniform(-0.2, 0.2));
        Tensor5<float> b(1, 1, 1, 1, 1);
        b.data()[0] = float(rng.uniform(-0.5, 0.5));

        Graph<float> g(false);
        auto out = spatial_attention_3d(g, g.constant(f), g.constant(w), g.constant(b));

        // independent recomputation: channel avg/max, 14x14x1 same-padded
        // convolution (lead pad 7, trail 6), sigmoid, broadcast multiply
        for (int h = 0; h < H; ++h)
            for (int x = 0; x < W; ++x)
                for (int d = 0; d < D; ++d) {
                    double acc = b.data()[0];
                    for (int kh = 0; kh < 14; ++kh)
                        for (int kw = 0; kw < 14; ++kw) {
                            int ih = h + kh - 7, iw = x + kw - 7;
                            if (ih < 0 || ih >= H || iw < 0 || iw >= W) continue;
                            double avg = 0, mx = -1e300;
                            for (int c = 0; c < C; ++c) {
                                double v = f(0, ih, iw, d, c);
                                avg += v;
                                mx = std::max(mx, v);
                            }
                            avg /= C;
                            acc += avg * w(kh, kw, 0, 0, 0) + mx * w(kh, kw, 0, 1, 0);
                        }
                    double gate = 1.0 / (1.0 + std::exp(-acc));
                    require(gate > 0.0 && gate < 1.0, "gate left (0,1)");
                    for (int c = 0; c < C; ++c) {
                        double expect = double(f(0, h, x, d, c)) * gate;
                        require(std::abs(out.value(0, h, x, d, c) - expect) < 1e-6,
                                "gate recomputation mismatch at seed " + std::to_string(seed));
                    }
                }
    }
    // all-zero input stays exactly zero for arbitrary weights
    Rng rng(99);
    Tensor5<float> f(1, 6, 6, 3, 4);
    Tensor5<float> w(14, 14, 1, 2, 1);
    for (int64_t i = 0; i < w.size(); ++i) w.data()[i] = float(rng.uniform(-5, 5));
    Tensor5<float> b(1, 1, 1, 1, 1);
    b.data()[0] = 3.5f;
    Graph<float> g(false);
    auto out = spatial_attention_3d(g, g.constant(f), g.constant(w), g.constant(b));
    for (int64_t i = 0; i < out.value.size(); ++i) require(out.value.data()[i] == 0.f, "zero input must map to zero");
}

// ------------------------------------------------------------------------
void check_gradients() {
    auto t0 = Clock::now();
    ModelConfig cfg;
    cfg.base_channels = 2;
    cfg.levels = 2;
    cfg.gn_groups = 2;
    cfg.aspp_rates = {{1, 1, 1}, {2, 2, 1}};  // extents at the bottom are 4x4x4
    cfg.seed = 12345;
    auto params = build_model<double>(cfg);

    Rng rng(4242);
    Tensor5<double> x(1, 8, 8, 4, 1);
    for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = rng.uniform(-1.5, 1.5);
    Tensor5<uint8_t> target(1, 8, 8, 4, 1), ignore(1, 8, 8, 4, 1);
    for (int64_t i = 0; i < target.size(); ++i) {
        target.data()[i] = rng.uniform() < 0.35;
        ignore.data()[i] = rng.uniform() < 0.1;
    }

    auto loss_value = [&]() {
        Graph<double> g(false);
        auto y = forward(g, cfg, params, g.constant(x), true);
        return combined_loss<double>(y.value, target, ignore, 0.5, 0.5).total;
    };

    // analytic pass
    Graph<double> g(true);
    auto y = forward(g, cfg, params, g.constant(x), true);
    Tensor5<double> dlogits(y.value.shape());
    combined_loss<double>(y.value, target, ignore, 0.5, 0.5, &dlogits);
    g.backward(y, dlogits);

    const double h = 1e-5;
    double max_rel = 0;
    std::string worst;
    int64_t checked = 0;
    for (auto& e : params.entries) {
        if (e.is_state) continue;
        Tensor5<double> an = g.grad(e.name);
        for (int64_t i = 0; i < e.value.size(); ++i) {
            double orig = e.value.data()[i];
            e.value.data()[i] = orig + h;
            double lp = loss_value();
            e.value.data()[i] = orig - h;
            double lm = loss_value();
            e.value.data()[i] = orig;
            double fd = (lp - lm) / (2 * h);
            double a = an.data()[i];
            double rel = std::abs(fd - a) / std::max({1.0, std::abs(fd), std::abs(a)});
            if (rel > max_rel) {
                max_rel = rel;
                worst = e.name + "[" + std::to_string(i) + "]";
            }
            ++checked;
        }
    }
    char msg[160];
    std::snprintf(msg, sizeof(msg), "max rel err %.3g at %s over %lld params", max_rel, worst.c_str(),
                  static_cast<long long>(checked));
    require(max_rel < 1e-4, msg);
    double el = seconds_since(t0);
    require(el < 300.0, "gradient sweep too slow: " + std::to_string(el) + " s");
}

// ------------------------------------------------------------------------
void check_shapes() {
    // depth must pass through unchanged when pooling is in-plane only
    {
        ModelConfig cfg;
        cfg.base_channels = 4;
        cfg.levels = 3;
        cfg.gn_groups = 4;
        cfg.seed = 2;
        auto params = build_model<float>(cfg);
        Tensor5<float> x(1, 32, 32, 7, 1);
        std::vector<ShapeLogEntry> log;
        forward_logits(cfg, params, x, &log);
        require(!log.empty(), "empty shape log");
        for (const auto& e : log) require(e.shape[3] == 7, "depth changed at " + e.path);
    }
    // full-size forward with the stock configuration
    {
        ModelConfig cfg;  // defaults
        auto params = build_model<float>(cfg);
        Tensor5<float> x(1, 256, 256, 32, 1);
        Rng rng(8);
        for (int64_t i = 0; i < x.size(); ++i) x.data()[i] = float(rng.uniform(-1, 1));
        Tensor5<float> y = forward_logits(cfg, params, x);
        auto s = y.shape();
        require(s[0] == 1 && s[1] == 256 && s[2] == 256 && s[3] == 32 && s[4] == 2,
                "stock forward returned wrong shape");
        require(all_finite(y), "stock forward produced non-finite values");
        // indivisible in-plane extent is rejected up front
        Tensor5<float> bad(1, 250, 256, 32, 1);
        bool threw = false;
        try {
            forward_logits(cfg, params, bad);
        } catch (const std::invalid_argument&) {
            threw = true;
        }
        require(threw, "indivisible in-plane extent must be rejected");
    }
}

// ------------------------------------------------------------------------
void check_roundtrip_geometry() {
    const Shape3 shapes[] = {{240, 240, 48}, {232, 256, 48}, {132, 256, 83}, {321, 240, 83}, {128, 256, 103}};
    for (const Shape3& s : shapes) {
        Volume v;
        v.data = Grid3<float>(s, 0.f);
        v.spacing = {1, 1, 3};
        LabelMask m{Grid3<uint8_t>(s, 0)};
        Rng rng(1000 + s[0]);
        for (int t = 0; t < 800; ++t)
            m.data(rng.uniform_int(0, s[0] - 1), rng.uniform_int(0, s[1] - 1), rng.uniform_int(0, s[2] - 1)) =
                uint8_t(rng.uniform_int(0, 2));

        CanonicalResult c = to_canonical(v, m);
        auto chunks = slice_z(c.mask->data);
        require(chunks.size() == 4, "canonical grid must slice into 4 depth chunks");
        Grid3<uint8_t> merged = unslice_z(chunks);
        require(merged == c.mask->data, "slice/unslice not a bijection");
        LabelMask back = from_canonical(LabelMask{merged}, c.geometry);
        require(back.data.dims() == s, "restored shape wrong");

        const GeometryRecord& geo = c.geometry;
        bool pad_only = true;
        for (int a = 0; a < 3; ++a) pad_only &= geo.crop_before[a] == 0 && geo.crop_after[a] == 0;
        for (int i = 0; i < s[0]; ++i)
            for (int j = 0; j < s[1]; ++j)
                for (int k = 0; k < s[2]; ++k) {
                    bool kept = i >= geo.crop_before[0] && i < s[0] - geo.crop_after[0] && j >= geo.crop_before[1] &&
                                j < s[1] - geo.crop_after[1] && k >= geo.crop_before[2] && k < s[2] - geo.crop_after[2];
                    uint8_t expect = kept ? m.data(i, j, k) : 0;
                    require(back.data(i, j, k) == expect,
                            std::string(pad_only ? "pad-only" : "cropped") + " round trip broke at " + shape3_str(s));
                }
        if (pad_only) require(back.data == m.data, "pad-only shape must round-trip bit-exactly");
    }
    // the widest case: every canonical voxel on -> zeros outside the crop
    Shape3 s{321, 240, 83};
    GeometryRecord geo = plan_geometry(s);
    Grid3<uint8_t> ones(kCanonicalShape, 1);
    LabelMask back = from_canonical(LabelMask{ones}, geo);
    require(back.data(0, 120, 40) == 0 && back.data(320, 120, 40) == 0, "crop restoration must zero outside voxels");
    require(back.data(160, 120, 40) == 1, "crop restoration lost retained voxels");
}

// ------------------------------------------------------------------------
struct OverfitOutcome {
    double dice0, dice1;
    LossTrace trace;
};

OverfitOutcome run_overfit(int steps) {
    PhantomConfig pc;
    pc.shape = {64, 64, 16};
    pc.lesion_contrast = 4.0;    // conspicuous blobs: memorization, not detection, is under test
    pc.radius_inplane_min = 2.0;  // no single-voxel specks
    pc.n_lesions_min = 4;
    pc.n_lesions_max = 8;
    pc.seed = 0;
    auto cases = generate_dataset(2, pc, 20);

    ModelConfig mc;
    mc.base_channels = 8;
    mc.levels = 3;
    mc.gn_groups = 8;
    mc.seed = 7;
    TrainConfig tc;
    tc.lr = 3e-3;
    tc.batch_size = 1;  // one whole case per step keeps the run well inside its time budget
    tc.steps = steps;
    tc.seed = 77;
    tc.augmentation = AugmentationConfig::disabled();
    tc.pipeline.canonical_shape = {64, 64, 16};
    tc.pipeline.chunk_depth = 16;

    TrainResult r = train(mc, tc, cases);
    OverfitOutcome o;
    o.trace = r.trace;
    double d[2];
    for (int i = 0; i < 2; ++i) {
        LabelMask pred = predict_case(mc, r.params, cases[i], tc.pipeline);
        Grid3<uint8_t> pb(pred.data.dims()), gb(cases[i].truth->data.dims());
        for (size_t v = 0; v < pb.size(); ++v) {
            pb[v] = pred.data[v] != 0;
            gb[v] = cases[i].truth->data[v] == 1;
        }
        d[i] = dice(pb, gb);
    }
    o.dice0 = d[0];
    o.dice1 = d[1];
    return o;
}

void check_overfit() {
    auto t0 = Clock::now();
    OverfitOutcome o = run_overfit(300);
    char msg[128];
    std::snprintf(msg, sizeof(msg), "train dice %.4f / %.4f after 300 steps", o.dice0, o.dice1);
    require(o.dice0 >= 0.95 && o.dice1 >= 0.95, msg);
    double el = seconds_since(t0);
    require(el < 600.0, "overfit run too slow: " + std::to_string(el) + " s");
    std::printf("        %s in %.0f s\n", msg, el);
}

// ------------------------------------------------------------------------
void check_descent_determinism() {
    PhantomConfig pc;
    pc.shape = {32, 32, 8};
    pc.radius_inplane_max = 3.0;
    auto cases = generate_dataset(2, pc, 30);

    ModelConfig mc;
    mc.base_channels = 4;
    mc.levels = 2;
    mc.gn_groups = 4;
    mc.seed = 9;
    TrainConfig tc;
    tc.lr = 2e-3;
    tc.batch_size = 2;
    tc.steps = 200;
    tc.seed = 55;
    tc.augmentation = AugmentationConfig::disabled();
    tc.pipeline.canonical_shape = {32, 32, 8};
    tc.pipeline.chunk_depth = 8;

    TrainResult a = train(mc, tc, cases);
    TrainResult b = train(mc, tc, cases);
    require(a.trace.size() == 200, "trace length wrong");
    double first = 0, last = 0;
    for (int i = 0; i < 10; ++i) {
        first += a.trace[i].total;
        last += a.trace[199 - i].total;
    }
    char msg[128];
    std::snprintf(msg, sizeof(msg), "first-10 mean %.5f vs final-10 mean %.5f", first / 10, last / 10);
    require(last < first, msg);
    require(trace_to_csv(a.trace) == trace_to_csv(b.trace), "repeated runs disagree");
    for (size_t i = 0; i < a.params.entries.size(); ++i) {
        const float* pa = a.params.entries[i].value.data();
        const float* pb = b.params.entries[i].value.data();
        for (int64_t e = 0; e < a.params.entries[i].value.size(); ++e)
            require(pa[e] == pb[e], "repeated runs yield different weights");
    }
    std::printf("        %s\n", msg);
}

// ------------------------------------------------------------------------
void check_ablation_structure() {
    fs::path work = fs::temp_directory_path() / ("accept_ablate_" + std::to_string(::getpid()));
    fs::create_directories(work);
    struct Cleanup {
        fs::path p;
        ~Cleanup() {
            std::error_code ec;
            fs::remove_all(p, ec);
        }
    } cleanup{work};

    PhantomConfig pc;
    pc.shape = {32, 32, 8};
    pc.n_lesions_min = 2;
    pc.n_lesions_max = 4;
    pc.radius_inplane_max = 3.0;
    auto cases = generate_dataset(3, pc, 40);
    fs::create_directories(work / "data");
    std::vector<DatasetEntry> entries;
    for (const auto& c : cases) {
        save_volume(c.image, work / "data" / (c.id + ".raw"));
        save_mask(*c.truth, work / "data" / (c.id + "_mask.raw"));
        entries.push_back({c.id, c.scanner, c.id + ".raw", c.id + "_mask.raw"});
    }
    write_dataset_manifest(work / "data", entries);

    std::ostringstream out, err;
    int rc = cmd_ablate("", (work / "data").string(), (work / "ab").string(), out, err);
    require(rc == 0, "ablation suite failed: " + err.str());

    std::ifstream csv(work / "ab" / "ablation.csv");
    std::string header;
    std::getline(csv, header);
    require(header == "variant,dice,avd,f1", "csv header wrong: " + header);
    std::set<std::string> names;
    std::string row;
    while (std::getline(csv, row)) {
        if (row.empty()) continue;
        auto comma = row.find(',');
        names.insert(row.substr(0, comma));
        // three numeric columns present
        double di, av, f1v;
        require(std::sscanf(row.c_str() + comma + 1, "%lf,%lf,%lf", &di, &av, &f1v) == 3, "bad csv row: " + row);
    }
    require(names == std::set<std::string>({"backbone", "gn", "gn_aspp", "gn_sam", "full"}),
            "variant set wrong");

    // structural inspection of the declared layer graphs
    nlohmann::json suite = default_ablation_suite();
    auto layers_of = [&](const std::string& name) {
        for (const auto& v : suite["variants"])
            if (v["name"] == name) return describe_layers(model_from_json(v["model"]));
        throw Failure("variant missing from suite: " + name);
    };
    auto has_kind = [](const std::vector<LayerDesc>& ls, const std::string& kind) {
        for (const auto& l : ls)
            if (l.kind == kind) return true;
        return false;
    };
    auto backbone = layers_of("backbone");
    require(!has_kind(backbone, "sam_gate") && !has_kind(backbone, "aspp"), "backbone must carry neither gate block");
    require(backbone.front().kernel == (Shape3{3, 3, 3}), "backbone encoder kernel wrong");
    for (const auto& l : backbone)
        if (l.kind == "norm") require(l.norm_kind == "batch", "backbone must use batch norm");
    auto gn = layers_of("gn");
    require(gn.front().kernel == (Shape3{3, 3, 1}), "anisotropic variant kernel wrong");
    for (const auto& l : gn)
        if (l.kind == "norm") require(l.norm_kind == "group", "gn variant must use group norm");
    require(has_kind(layers_of("gn_sam"), "sam_gate") && !has_kind(layers_of("gn_sam"), "aspp"),
            "gn_sam toggles wrong");
    require(has_kind(layers_of("gn_aspp"), "aspp") && !has_kind(layers_of("gn_aspp"), "sam_gate"),
            "gn_aspp toggles wrong");
    auto full = layers_of("full");
    require(has_kind(full, "sam_gate") && has_kind(full, "aspp"), "full variant must carry both blocks");
}

// ------------------------------------------------------------------------
void check_augmentation_suite() {
    Rng data_rng(60);
    Grid3<float> img(16, 16, 4);
    for (size_t i = 0; i < img.size(); ++i) img[i] = float(data_rng.uniform(20, 180));
    Grid3<uint8_t> msk(16, 16, 4, 0);
    for (int t = 0; t < 30; ++t)
        msk(data_rng.uniform_int(0, 15), data_rng.uniform_int(0, 15), data_rng.uniform_int(0, 3)) =
            uint8_t(data_rng.uniform_int(1, 2));

    for (uint64_t draw = 0; draw < 100; ++draw) {
        // double flip is the identity
        Grid3<float> f = img;
        int axis = int(draw % 2);
        aug_detail::flip_axis(f, axis);
        aug_detail::flip_axis(f, axis);
        require(f == img, "double flip changed the volume");

        // label closure + determinism under the full transform set
        AugmentationConfig cfg;
        Rng r1(draw), r2(draw);
        auto [i1, m1] = augment(img, msk, cfg, r1);
        auto [i2, m2] = augment(img, msk, cfg, r2);
        require(i1 == i2 && m1 == m2, "same seed produced different augmentations");
        for (size_t i = 0; i < m1.size(); ++i) require(m1[i] <= 2, "augmented mask left the label set");
        for (size_t i = 0; i < i1.size(); ++i)
            require(std::isfinite(double(i1[i])), "augmented image has non-finite voxels");

        // geometric pairing: an image impulse and its label travel together
        Grid3<float> pimg(15, 15, 3, 0.f);
        Grid3<uint8_t> pmsk(15, 15, 3, 0);
        pimg(3 + int(draw % 9), 2 + int(draw % 11), int(draw % 3)) = 50.f;
        pmsk(3 + int(draw % 9), 2 + int(draw % 11), int(draw % 3)) = 1;
        AugmentationConfig geo = AugmentationConfig::disabled();
        geo.flip = geo.transpose = true;
        Rng r3(draw * 31 + 5);
        auto [gi, gm] = augment(pimg, pmsk, geo, r3);
        int bi = -1, bj = -1, bk = -1;
        float best = -1;
        for (int i = 0; i < gi.h(); ++i)
            for (int j = 0; j < gi.w(); ++j)
                for (int k = 0; k < gi.d(); ++k)
                    if (gi(i, j, k) > best) {
                        best = gi(i, j, k);
                        bi = i;
                        bj = j;
                        bk = k;
                    }
        require(best == 50.f, "impulse intensity changed under flip/transpose");
        require(gm(bi, bj, bk) == 1, "mask label separated from its image voxel");
        int labels = 0;
        for (size_t i = 0; i < gm.size(); ++i) labels += gm[i] != 0;
        require(labels == 1, "geometric transform duplicated a label");
    }
}

// ------------------------------------------------------------------------
void check_ignore_exactness() {
    PhantomConfig pc;
    pc.shape = {32, 32, 8};
    pc.n_lesions_min = 2;  // leave room for the label-2 blob on the small grid
    pc.n_lesions_max = 4;
    pc.radius_inplane_max = 2.5;
    pc.include_label2 = true;
    pc.seed = 70;
    Case c = generate(pc);
    const Grid3<uint8_t>& truth = c.truth->data;
    Grid3<uint8_t> g(truth.dims()), ig(truth.dims());
    int n_ignore = 0;
    for (size_t i = 0; i < truth.size(); ++i) {
        g[i] = truth[i] == 1;
        ig[i] = truth[i] == 2;
        n_ignore += ig[i];
    }
    require(n_ignore > 0, "phantom produced no label-2 voxels");

    Rng rng(71);
    Grid3<uint8_t> p(truth.dims());
    for (size_t i = 0; i < p.size(); ++i) p[i] = rng.uniform() < 0.2;

    double d0 = dice(p, g, &ig);
    double a0 = avd(p, g, &ig);
    LesionF1 f0 = lesion_f1(p, g, 26, &ig);

    Grid3<uint8_t> p2 = p;
    for (size_t i = 0; i < p2.size(); ++i)
        if (ig[i]) p2[i] = 1 - p2[i];
    require(dice(p2, g, &ig) == d0, "dice moved under ignored-voxel perturbation");
    require(avd(p2, g, &ig) == a0, "avd moved under ignored-voxel perturbation");
    LesionF1 f2 = lesion_f1(p2, g, 26, &ig);
    require(f2.f1 == f0.f1 && f2.n_detected == f0.n_detected && f2.n_false == f0.n_false,
            "lesion f1 moved under ignored-voxel perturbation");

    // loss: garbage logits at masked voxels must not move any term
    Tensor5<double> z(1, 32, 32, 8, 2);
    Tensor5<uint8_t> t(1, 32, 32, 8, 1), igt(1, 32, 32, 8, 1);
    int64_t v = 0;
    for (int i = 0; i < 32; ++i)
        for (int j = 0; j < 32; ++j)
            for (int k = 0; k < 8; ++k, ++v) {
                z.data()[2 * v] = rng.uniform(-2, 2);
                z.data()[2 * v + 1] = rng.uniform(-2, 2);
                t.data()[v] = g(i, j, k);
                igt.data()[v] = ig(i, j, k);
            }
    LossResult l0 = combined_loss<double>(z, t, igt, 0.5, 0.5);
    Tensor5<double> z2 = z.clone();
    for (int64_t i = 0; i < z2.size() / 2; ++i)
        if (igt.data()[i]) {
            z2.data()[2 * i] = 1e6;
            z2.data()[2 * i + 1] = -777.0;
        }
    LossResult l1 = combined_loss<double>(z2, t, igt, 0.5, 0.5);
    require(l0.total == l1.total && l0.ce == l1.ce && l0.dice == l1.dice,
            "loss moved under ignored-voxel perturbation");
}

struct Criterion {
    const char* name;
    std::function<void()> fn;
};

}  // namespace

int main(int argc, char** argv) {
    const Criterion criteria[] = {
        {"metric-oracle-equivalence", check_metric_oracle},
        {"attention-gate-conformance", check_attention_gate},
        {"parameter-gradient-check", check_gradients},
        {"shape-and-anisotropy-contract", check_shapes},
        {"round-trip-geometry", check_roundtrip_geometry},
        {"overfit-capability", check_overfit},
        {"descent-and-determinism", check_descent_determinism},
        {"ablation-structure", check_ablation_structure},
        {"augmentation-suite", check_augmentation_suite},
        {"ignore-mask-exactness", check_ignore_exactness},
    };

    // Optional argument: run only criteria whose name contains the substring.
    const std::string filter = argc > 1 ? argv[1] : "";

    int failures = 0;
    for (const auto& c : criteria) {
        if (!filter.empty() && std::string(c.name).find(filter) == std::string::npos) continue;
        auto t0 = Clock::now();
        try {
            c.fn();
            std::printf("[PASS] %-32s (%.1f s)\n", c.name, seconds_since(t0));
        } catch (const std::exception& e) {
            ++failures;
            std::printf("[FAIL] %-32s %s\n", c.name, e.what());
        }
        std::fflush(stdout);
    }
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    return failures == 0 ? 0 : 1;
}
