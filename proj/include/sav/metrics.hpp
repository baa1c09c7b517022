#pragma once

#include <algorithm>
#include <cstdio>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "sav/common.hpp"

namespace sav {

using BinaryGrid = Grid3<uint8_t>;

namespace metric_detail {

inline void check_shapes(const BinaryGrid& p, const BinaryGrid& g, const BinaryGrid* ignore) {
    if (!p.same_shape(g)) throw std::invalid_argument("metrics: prediction/truth shape mismatch");
    if (ignore && !ignore->same_shape(g)) throw std::invalid_argument("metrics: ignore grid shape mismatch");
}

inline bool masked(const BinaryGrid* ignore, size_t i) { return ignore && (*ignore)[i] != 0; }

inline std::vector<Shape3> neighbor_offsets(int connectivity) {
    if (connectivity != 6 && connectivity != 18 && connectivity != 26)
        throw std::invalid_argument("connectivity must be 6, 18 or 26");
    std::vector<Shape3> offs;
    for (int dh = -1; dh <= 1; ++dh)
        for (int dw = -1; dw <= 1; ++dw)
            for (int dd = -1; dd <= 1; ++dd) {
                int manhattan = std::abs(dh) + std::abs(dw) + std::abs(dd);
                if (manhattan == 0) continue;
                if (connectivity == 6 && manhattan > 1) continue;
                if (connectivity == 18 && manhattan > 2) continue;
                offs.push_back({dh, dw, dd});
            }
    return offs;
}

}  // namespace metric_detail

// 2|P∩G| / (|P| + |G|) over non-ignored voxels; 1.0 when both sets are empty.
inline double dice(const BinaryGrid& p, const BinaryGrid& g, const BinaryGrid* ignore = nullptr) {
    metric_detail::check_shapes(p, g, ignore);
    long long np = 0, ng = 0, ni = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (metric_detail::masked(ignore, i)) continue;
        bool bp = p[i] != 0, bg = g[i] != 0;
        np += bp;
        ng += bg;
        ni += bp && bg;
    }
    if (np + ng == 0) return 1.0;
    return 2.0 * static_cast<double>(ni) / static_cast<double>(np + ng);
}

// |V_P - V_G| / V_G as a ratio; throws when the truth volume is empty so the
// case can be reported as undefined instead of silently aggregated.
inline double avd(const BinaryGrid& p, const BinaryGrid& g, const BinaryGrid* ignore = nullptr) {
    metric_detail::check_shapes(p, g, ignore);
    long long vp = 0, vg = 0;
    for (size_t i = 0; i < p.size(); ++i) {
        if (metric_detail::masked(ignore, i)) continue;
        vp += p[i] != 0;
        vg += g[i] != 0;
    }
    if (vg == 0) throw std::domain_error("avd undefined: truth lesion volume is zero");
    return std::abs(static_cast<double>(vp - vg)) / static_cast<double>(vg);
}

struct Components {
    Grid3<int32_t> labels;  // 0 background, 1..count component ids in scan order
    int count = 0;
};

// Iterative flood fill; components are labeled in first-encounter scan order,
// which keeps the labeling deterministic.
inline Components connected_components_3d(const BinaryGrid& mask, int connectivity = 26,
                                          const BinaryGrid* ignore = nullptr) {
    if (ignore && !ignore->same_shape(mask)) throw std::invalid_argument("connected_components_3d: ignore shape mismatch");
    auto offs = metric_detail::neighbor_offsets(connectivity);
    Components out;
    out.labels = Grid3<int32_t>(mask.dims(), 0);
    const int H = mask.h(), W = mask.w(), D = mask.d();
    std::vector<size_t> stack;
    auto on = [&](size_t i) { return mask[i] != 0 && !metric_detail::masked(ignore, i); };
    for (int h = 0; h < H; ++h)
        for (int w = 0; w < W; ++w)
            for (int d = 0; d < D; ++d) {
                size_t i = mask.idx(h, w, d);
                if (!on(i) || out.labels[i] != 0) continue;
                int32_t id = ++out.count;
                out.labels[i] = id;
                stack.assign(1, i);
                while (!stack.empty()) {
                    size_t cur = stack.back();
                    stack.pop_back();
                    int ch = static_cast<int>(cur / (static_cast<size_t>(W) * D));
                    int cw = static_cast<int>(cur / D % W);
                    int cd = static_cast<int>(cur % D);
                    for (const auto& o : offs) {
                        int nh = ch + o[0], nw = cw + o[1], nd = cd + o[2];
                        if (nh < 0 || nh >= H || nw < 0 || nw >= W || nd < 0 || nd >= D) continue;
                        size_t ni = mask.idx(nh, nw, nd);
                        if (on(ni) && out.labels[ni] == 0) {
                            out.labels[ni] = id;
                            stack.push_back(ni);
                        }
                    }
                }
            }
    return out;
}

struct LesionF1 {
    double f1 = 0.0;
    int n_truth = 0;     // ground-truth lesion count
    int n_detected = 0;  // N_T: truth lesions overlapping >= 1 predicted voxel
    int n_false = 0;     // N_F: predicted components overlapping no truth voxel
};

// F1 = N_T / (N_T + N_F) over 3D components. When both counts are zero the
// value is 1.0 for an empty truth and 0.0 otherwise.
inline LesionF1 lesion_f1(const BinaryGrid& p, const BinaryGrid& g, int connectivity = 26,
                          const BinaryGrid* ignore = nullptr) {
    metric_detail::check_shapes(p, g, ignore);
    Components gc = connected_components_3d(g, connectivity, ignore);
    Components pc = connected_components_3d(p, connectivity, ignore);

    std::vector<char> truth_hit(gc.count + 1, 0);
    std::vector<char> pred_hit(pc.count + 1, 0);
    for (size_t i = 0; i < p.size(); ++i) {
        if (metric_detail::masked(ignore, i)) continue;
        if (gc.labels[i] != 0 && p[i] != 0) truth_hit[gc.labels[i]] = 1;
        if (pc.labels[i] != 0 && g[i] != 0) pred_hit[pc.labels[i]] = 1;
    }

    LesionF1 r;
    r.n_truth = gc.count;
    for (int l = 1; l <= gc.count; ++l) r.n_detected += truth_hit[l];
    for (int l = 1; l <= pc.count; ++l) r.n_false += pred_hit[l] == 0;
    int denom = r.n_detected + r.n_false;
    if (denom == 0)
        r.f1 = gc.count == 0 ? 1.0 : 0.0;
    else
        r.f1 = static_cast<double>(r.n_detected) / denom;
    return r;
}

// ------------------------------------------------------------- reporting ---

struct CaseMetrics {
    std::string case_id;
    std::string scanner;
    double dice = 0.0;
    std::optional<double> avd;  // empty when truth volume is zero
    double f1 = 0.0;
    int n_truth_lesions = 0;
    int n_detected = 0;
    int n_false = 0;
};

struct GroupMetrics {
    double dice = 0.0;
    double avd = 0.0;
    double f1 = 0.0;
    int n_cases = 0;
    int n_avd_cases = 0;  // cases with defined AVD
};

struct MetricsReport {
    std::vector<CaseMetrics> cases;
    std::map<std::string, GroupMetrics> per_scanner;
    GroupMetrics overall;
    std::vector<std::string> warnings;
    std::vector<std::string> failures;  // "<id>: <error>" for cases that could not be evaluated
};

struct EvalPair {
    std::string case_id;
    std::string scanner;
    BinaryGrid prediction;
    BinaryGrid truth;
    const BinaryGrid* ignore = nullptr;
};

inline CaseMetrics evaluate_case(const EvalPair& pair, int connectivity = 26) {
    CaseMetrics m;
    m.case_id = pair.case_id;
    m.scanner = pair.scanner;
    m.dice = dice(pair.prediction, pair.truth, pair.ignore);
    try {
        m.avd = avd(pair.prediction, pair.truth, pair.ignore);
    } catch (const std::domain_error&) {
        m.avd.reset();
    }
    LesionF1 f = lesion_f1(pair.prediction, pair.truth, connectivity, pair.ignore);
    m.f1 = f.f1;
    m.n_truth_lesions = f.n_truth;
    m.n_detected = f.n_detected;
    m.n_false = f.n_false;
    return m;
}

// Unweighted per-case means within each scanner group plus an overall mean.
// Cases with undefined AVD stay in the dice/f1 means and are only excluded
// from the AVD average (with a warning).
inline MetricsReport evaluate_cases(const std::vector<EvalPair>& pairs, int connectivity = 26) {
    MetricsReport rep;
    for (const auto& pair : pairs) {
        try {
            rep.cases.push_back(evaluate_case(pair, connectivity));
            if (!rep.cases.back().avd)
                rep.warnings.push_back("case " + pair.case_id + ": AVD undefined (empty truth), excluded from AVD mean");
        } catch (const std::exception& e) {
            rep.failures.push_back(pair.case_id + ": " + e.what());
        }
    }
    auto fold = [](GroupMetrics& g, const CaseMetrics& c) {
        g.dice += c.dice;
        g.f1 += c.f1;
        g.n_cases += 1;
        if (c.avd) {
            g.avd += *c.avd;
            g.n_avd_cases += 1;
        }
    };
    for (const auto& c : rep.cases) {
        fold(rep.per_scanner[c.scanner], c);
        fold(rep.overall, c);
    }
    auto finish = [](GroupMetrics& g) {
        if (g.n_cases > 0) {
            g.dice /= g.n_cases;
            g.f1 /= g.n_cases;
        }
        if (g.n_avd_cases > 0) g.avd /= g.n_avd_cases;
    };
    for (auto& [name, g] : rep.per_scanner) finish(g);
    finish(rep.overall);
    return rep;
}

inline std::string report_to_csv(const MetricsReport& rep) {
    std::string out = "case_id,scanner,dice,avd,f1,n_truth,n_detected,n_false\n";
    char line[256];
    for (const auto& c : rep.cases) {
        char avd_buf[32] = "nan";
        if (c.avd) std::snprintf(avd_buf, sizeof(avd_buf), "%.6f", *c.avd);
        std::snprintf(line, sizeof(line), "%s,%s,%.6f,%s,%.6f,%d,%d,%d\n", c.case_id.c_str(), c.scanner.c_str(), c.dice,
                      avd_buf, c.f1, c.n_truth_lesions, c.n_detected, c.n_false);
        out += line;
    }
    auto summary = [&](const std::string& name, const GroupMetrics& g) {
        std::snprintf(line, sizeof(line), "# summary,%s,dice=%.6f,avd=%.6f,avd_pct=%.2f,f1=%.6f,cases=%d\n", name.c_str(),
                      g.dice, g.avd, 100.0 * g.avd, g.f1, g.n_cases);
        out += line;
    };
    for (const auto& [name, g] : rep.per_scanner) summary(name, g);
    summary("overall", rep.overall);
    return out;
}

inline nlohmann::json report_to_json(const MetricsReport& rep) {
    nlohmann::json cases = nlohmann::json::array();
    for (const auto& c : rep.cases) {
        nlohmann::json cj{{"case_id", c.case_id},   {"scanner", c.scanner},
                          {"dice", c.dice},         {"f1", c.f1},
                          {"n_truth", c.n_truth_lesions}, {"n_detected", c.n_detected},
                          {"n_false", c.n_false}};
        if (c.avd)
            cj["avd"] = *c.avd;
        else
            cj["avd"] = nullptr;
        cases.push_back(cj);
    }
    auto group = [](const GroupMetrics& g) {
        return nlohmann::json{{"dice", g.dice}, {"avd", g.avd}, {"avd_pct", 100.0 * g.avd},
                              {"f1", g.f1},     {"n_cases", g.n_cases}};
    };
    nlohmann::json scanners;
    for (const auto& [name, g] : rep.per_scanner) scanners[name] = group(g);
    return nlohmann::json{{"cases", cases},
                          {"scanners", scanners},
                          {"overall", group(rep.overall)},
                          {"warnings", rep.warnings},
                          {"failures", rep.failures}};
}

}  // namespace sav
