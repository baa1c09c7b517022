#pragma once

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "sav/metrics.hpp"
#include "sav/model.hpp"
#include "sav/phantom.hpp"
#include "sav/plot.hpp"
#include "sav/preprocessing.hpp"
#include "sav/training.hpp"
#include "sav/volume_io.hpp"

// In-process command implementations. The binary in tools/ is a thin argv
// wrapper; tests call these directly. Exit codes: 0 success, 2 usage or bad
// input, 3 state errors (corrupt checkpoints, divergence).

namespace sav {

inline constexpr char kToolVersion[] = "0.1.0";
inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitState = 3;

namespace fs = std::filesystem;

struct RunConfig {
    ModelConfig model;
    TrainConfig train;
};

inline RunConfig run_config_from_json(const nlohmann::json& j) {
    RunConfig c;
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    if (j.contains("train")) c.train = train_from_json(j.at("train"));
    c.model.validate();
    c.train.validate();
    return c;
}

namespace cli_detail {

inline nlohmann::json read_json_file(const fs::path& p) {
    std::ifstream f(p);
    if (!f) throw std::runtime_error("cannot read " + p.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("bad JSON in " + p.string() + ": " + e.what());
    }
    return j;
}

inline void write_text(const fs::path& p, const std::string& text) {
    std::ofstream f(p);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
    if (!f) throw std::runtime_error("write failed: " + p.string());
}

inline std::string layer_listing(const std::vector<LayerDesc>& layers) {
    std::string out;
    char line[192];
    for (const auto& l : layers) {
        std::snprintf(line, sizeof(line), "%-20s %-9s kernel=%-8s dilation=%-6s in=%-4d out=%-4d %s\n", l.path.c_str(),
                      l.kind.c_str(), shape3_str(l.kernel).c_str(), shape3_str(l.dilation).c_str(), l.in_channels,
                      l.out_channels, l.norm_kind.c_str());
        out += line;
    }
    return out;
}

// Per-case split of a {0,1,2} truth mask into binary truth and ignore grids.
struct EvalMaterial {
    std::vector<BinaryGrid> preds, truths, ignores;
    std::vector<std::string> ids, scanners;

    std::vector<EvalPair> pairs() const {
        std::vector<EvalPair> out;
        out.reserve(ids.size());
        for (size_t i = 0; i < ids.size(); ++i)
            out.push_back({ids[i], scanners[i], preds[i], truths[i], &ignores[i]});
        return out;
    }

    void add(const std::string& id, const std::string& scanner, const Grid3<uint8_t>& pred,
             const Grid3<uint8_t>& truth_labels) {
        BinaryGrid p(pred.dims()), g(truth_labels.dims()), ig(truth_labels.dims());
        for (size_t k = 0; k < pred.size(); ++k) p[k] = pred[k] != 0;
        for (size_t k = 0; k < truth_labels.size(); ++k) {
            g[k] = truth_labels[k] == 1;
            ig[k] = truth_labels[k] == 2;
        }
        ids.push_back(id);
        scanners.push_back(scanner);
        preds.push_back(std::move(p));
        truths.push_back(std::move(g));
        ignores.push_back(std::move(ig));
    }
};

inline void print_report_line(std::ostream& out, const GroupMetrics& g) {
    char line[96];
    std::snprintf(line, sizeof(line), "DICE %.3f AVD %.3f F1 %.3f\n", g.dice, g.avd, g.f1);
    out << line;
}

}  // namespace cli_detail

// --------------------------------------------------------------- phantom ---
inline int cmd_phantom_make(const std::string& out_dir, int n, uint64_t seed, const std::string& config_path = "",
                            std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (n < 1) {
            err << "phantom make: --n must be >= 1\n";
            return kExitUsage;
        }
        PhantomConfig cfg;
        if (!config_path.empty()) cfg = phantom_from_json(cli_detail::read_json_file(config_path));
        fs::create_directories(out_dir);
        std::vector<Case> cases = generate_dataset(n, cfg, seed);
        std::vector<DatasetEntry> entries;
        for (const auto& c : cases) {
            std::string img = c.id + ".raw", msk = c.id + "_mask.raw";
            save_volume(c.image, fs::path(out_dir) / img);
            save_mask(*c.truth, fs::path(out_dir) / msk, c.image.spacing);
            entries.push_back({c.id, c.scanner, img, msk});
        }
        write_dataset_manifest(out_dir, entries);
        out << "wrote " << cases.size() << " phantom cases to " << out_dir << "\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "phantom make: " << e.what() << "\n";
        return kExitUsage;
    }
}

// ----------------------------------------------------------------- train ---
inline int cmd_train(const std::string& config_path, const std::string& data_dir, const std::string& out_dir,
                     std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    RunConfig cfg;
    try {
        cfg = run_config_from_json(cli_detail::read_json_file(config_path));
    } catch (const std::exception& e) {
        err << "train: " << e.what() << "\n";
        return kExitUsage;
    }
    if (!fs::is_directory(data_dir)) {
        err << "train: data directory not found: " << data_dir << "\n";
        return kExitUsage;
    }
    try {
        std::vector<Case> cases = load_dataset(data_dir, true);
        fs::create_directories(out_dir);
        TrainResult result = train(cfg.model, cfg.train, cases, out_dir);
        for (const auto& w : result.warnings) err << "train: " << w << "\n";
        cli_detail::write_text(fs::path(out_dir) / "trace.csv", trace_to_csv(result.trace));

        std::vector<std::string> ckpts;
        for (const auto& entry : fs::directory_iterator(out_dir)) {
            std::string name = entry.path().filename().string();
            if (name.rfind("ckpt_", 0) == 0 && entry.path().extension() == ".bin") ckpts.push_back(name);
        }
        std::sort(ckpts.begin(), ckpts.end());
        nlohmann::json case_ids = nlohmann::json::array();
        for (const auto& c : cases) case_ids.push_back(c.id);
        nlohmann::json manifest{{"tool_version", kToolVersion},
                                {"model", model_to_json(cfg.model)},
                                {"train", train_to_json(cfg.train)},
                                {"seed", cfg.train.seed},
                                {"data_dir", fs::absolute(data_dir).string()},
                                {"cases", case_ids},
                                {"checkpoints", ckpts},
                                {"trace", "trace.csv"}};
        cli_detail::write_text(fs::path(out_dir) / "manifest.json", manifest.dump(2) + "\n");

        double final_loss = result.trace.empty() ? 0.0 : result.trace.back().total;
        out << "trained " << cfg.train.steps << " steps on " << cases.size() << " cases; final loss " << final_loss
            << "\n";
        return kExitOk;
    } catch (const DivergenceError& e) {
        err << "train: " << e.what() << "\n";
        return kExitState;
    } catch (const CheckpointError& e) {
        err << "train: " << e.what() << "\n";
        return kExitState;
    } catch (const std::exception& e) {
        err << "train: " << e.what() << "\n";
        return kExitUsage;
    }
}

// --------------------------------------------------------------- predict ---
inline int cmd_predict(const std::string& ckpt_path, const std::string& data_dir, const std::string& out_dir,
                       std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    Checkpoint ck;
    try {
        ck = load_checkpoint(ckpt_path);
    } catch (const CheckpointError& e) {
        err << "predict: " << e.what() << "\n";
        return kExitState;
    }
    if (!fs::is_directory(data_dir)) {
        err << "predict: data directory not found: " << data_dir << "\n";
        return kExitUsage;
    }
    try {
        std::vector<Case> cases = load_dataset(data_dir, false);
        fs::create_directories(out_dir);
        std::vector<DatasetEntry> entries;
        for (const auto& c : cases) {
            LabelMask pred = predict_case(ck.model, ck.params, c, ck.pipeline);
            GeometryRecord geo = plan_geometry(c.image.data.dims(), ck.pipeline.canonical_shape);
            std::string mask_name = c.id + "_pred.raw";
            save_mask(pred, fs::path(out_dir) / mask_name, c.image.spacing);
            cli_detail::write_text(fs::path(out_dir) / (c.id + "_geometry.json"), geometry_to_json(geo).dump(2) + "\n");
            entries.push_back({c.id, c.scanner, mask_name, std::nullopt});
        }
        write_dataset_manifest(out_dir, entries);
        out << "predicted " << cases.size() << " cases into " << out_dir << "\n";
        return kExitOk;
    } catch (const CheckpointError& e) {
        err << "predict: " << e.what() << "\n";
        return kExitState;
    } catch (const std::exception& e) {
        err << "predict: " << e.what() << "\n";
        return kExitUsage;
    }
}

// -------------------------------------------------------------- evaluate ---
inline int cmd_evaluate(const std::string& pred_dir, const std::string& truth_dir, const std::string& out_csv,
                        int connectivity = 26, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    try {
        if (!fs::is_directory(pred_dir)) {
            err << "evaluate: prediction directory not found: " << pred_dir << "\n";
            return kExitUsage;
        }
        if (!fs::is_directory(truth_dir)) {
            err << "evaluate: truth directory not found: " << truth_dir << "\n";
            return kExitUsage;
        }
        auto preds = read_dataset_manifest(pred_dir);
        auto truths = read_dataset_manifest(truth_dir);
        std::map<std::string, DatasetEntry> truth_by_id;
        for (const auto& e : truths) truth_by_id[e.id] = e;

        std::vector<std::string> unmatched;
        cli_detail::EvalMaterial mat;
        std::set<std::string> seen;
        for (const auto& pe : preds) {
            auto it = truth_by_id.find(pe.id);
            if (it == truth_by_id.end()) {
                unmatched.push_back(pe.id + " (prediction without truth)");
                continue;
            }
            seen.insert(pe.id);
            const DatasetEntry& te = it->second;
            LabelMask pred = load_mask(fs::path(pred_dir) / pe.image);
            LabelMask truth = load_mask(fs::path(truth_dir) / (te.truth ? *te.truth : te.image));
            mat.add(pe.id, te.scanner, pred.data, truth.data);
        }
        for (const auto& te : truths)
            if (!seen.count(te.id)) unmatched.push_back(te.id + " (truth without prediction)");
        if (!unmatched.empty()) {
            for (const auto& u : unmatched) err << "evaluate: unmatched case id: " << u << "\n";
            return kExitUsage;
        }

        MetricsReport rep = evaluate_cases(mat.pairs(), connectivity);
        for (const auto& w : rep.warnings) err << "evaluate: " << w << "\n";
        cli_detail::write_text(out_csv, report_to_csv(rep));
        fs::path jp(out_csv);
        jp.replace_extension(".json");
        cli_detail::write_text(jp, report_to_json(rep).dump(2) + "\n");
        cli_detail::print_report_line(out, rep.overall);
        if (!rep.failures.empty()) {
            for (const auto& fl : rep.failures) err << "evaluate: case failed: " << fl << "\n";
            return kExitUsage;
        }
        return kExitOk;
    } catch (const std::exception& e) {
        err << "evaluate: " << e.what() << "\n";
        return kExitUsage;
    }
}

// ---------------------------------------------------------------- ablate ---
// Five structural variants mirroring the incremental study: isotropic batch-
// norm backbone, anisotropic group-norm network, plus the dilated-pooling and
// attention toggles, then both together.
inline nlohmann::json default_ablation_suite() {
    auto model = [](Shape3 enc, Shape3 res, const std::string& norm, bool sam, bool aspp) {
        ModelConfig m;
        m.base_channels = 8;
        m.levels = 3;
        m.gn_groups = 8;
        m.encoder_kernel = enc;
        m.resample_kernel = res;
        m.norm = norm;
        m.use_sam = sam;
        m.use_aspp = aspp;
        m.seed = 7;
        return model_to_json(m);
    };
    TrainConfig t;
    t.lr = 1e-3;
    t.batch_size = 2;
    t.steps = 40;
    t.seed = 7;
    t.augmentation = AugmentationConfig::disabled();
    t.pipeline.canonical_shape = {32, 32, 8};
    t.pipeline.chunk_depth = 8;
    nlohmann::json tj = train_to_json(t);
    return nlohmann::json{
        {"connectivity", 26},
        {"variants",
         nlohmann::json::array(
             {{{"name", "backbone"}, {"model", model({3, 3, 3}, {2, 2, 2}, "batch", false, false)}, {"train", tj}},
              {{"name", "gn"}, {"model", model({3, 3, 1}, {2, 2, 1}, "group", false, false)}, {"train", tj}},
              {{"name", "gn_aspp"}, {"model", model({3, 3, 1}, {2, 2, 1}, "group", false, true)}, {"train", tj}},
              {{"name", "gn_sam"}, {"model", model({3, 3, 1}, {2, 2, 1}, "group", true, false)}, {"train", tj}},
              {{"name", "full"}, {"model", model({3, 3, 1}, {2, 2, 1}, "group", true, true)}, {"train", tj}}})}};
}

inline int cmd_ablate(const std::string& suite_path, const std::string& data_dir, const std::string& out_dir,
                      std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    nlohmann::json suite;
    try {
        suite = (suite_path.empty() || suite_path == "default") ? default_ablation_suite()
                                                                : cli_detail::read_json_file(suite_path);
        if (!suite.contains("variants") || !suite["variants"].is_array() || suite["variants"].empty())
            throw std::runtime_error("suite has no variants");
    } catch (const std::exception& e) {
        err << "ablate: " << e.what() << "\n";
        return kExitUsage;
    }
    if (!fs::is_directory(data_dir)) {
        err << "ablate: data directory not found: " << data_dir << "\n";
        return kExitUsage;
    }

    std::vector<Case> cases;
    try {
        cases = load_dataset(data_dir, true);
    } catch (const std::exception& e) {
        err << "ablate: " << e.what() << "\n";
        return kExitUsage;
    }
    const int connectivity = suite.value("connectivity", 26);

    fs::create_directories(out_dir);
    std::string csv = "variant,dice,avd,f1\n";
    bool any_failed = false;
    for (const auto& vj : suite["variants"]) {
        std::string name = vj.value("name", std::string("unnamed"));
        fs::path vdir = fs::path(out_dir) / name;
        try {
            ModelConfig mc = model_from_json(vj.at("model"));
            TrainConfig tc = train_from_json(vj.at("train"));
            fs::create_directories(vdir);
            cli_detail::write_text(vdir / "layers.txt", cli_detail::layer_listing(describe_layers(mc)));

            TrainResult r = train(mc, tc, cases, vdir.string());
            cli_detail::write_text(vdir / "trace.csv", trace_to_csv(r.trace));

            cli_detail::EvalMaterial mat;
            for (const auto& c : cases) {
                LabelMask pred = predict_case(mc, r.params, c, tc.pipeline);
                mat.add(c.id, c.scanner, pred.data, c.truth->data);
            }
            MetricsReport rep = evaluate_cases(mat.pairs(), connectivity);
            char row[160];
            std::snprintf(row, sizeof(row), "%s,%.6f,%.6f,%.6f\n", name.c_str(), rep.overall.dice, rep.overall.avd,
                          rep.overall.f1);
            csv += row;
            out << "variant " << name << ": dice " << rep.overall.dice << "\n";
        } catch (const std::exception& e) {
            any_failed = true;
            fs::create_directories(vdir);
            cli_detail::write_text(vdir / "error.txt", std::string(e.what()) + "\n");
            csv += name + ",nan,nan,nan\n";
            err << "ablate: variant " << name << " failed: " << e.what() << "\n";
        }
    }
    try {
        cli_detail::write_text(fs::path(out_dir) / "ablation.csv", csv);
    } catch (const std::exception& e) {
        err << "ablate: " << e.what() << "\n";
        return kExitUsage;
    }
    return any_failed ? kExitState : kExitOk;
}

// ------------------------------------------------------------------ plot ---
inline int cmd_plot(const std::string& trace_path, const std::string& report_path, const std::string& out_png,
                    std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    if (trace_path.empty() == report_path.empty()) {
        err << "plot: give exactly one of --trace or --report\n";
        return kExitUsage;
    }
    try {
        if (!trace_path.empty()) {
            std::ifstream f(trace_path);
            if (!f) throw std::runtime_error("cannot read " + trace_path);
            std::string line;
            if (!std::getline(f, line) || line != "step,total,ce,dice")
                throw std::runtime_error("not a loss trace (header mismatch): " + trace_path);
            std::vector<TracePoint> rows;
            while (std::getline(f, line)) {
                if (line.empty()) continue;
                TracePoint p{};
                if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf", &p.step, &p.total, &p.ce, &p.dice) != 4)
                    throw std::runtime_error("malformed trace row: " + line);
                rows.push_back(p);
            }
            if (rows.empty()) throw std::runtime_error("trace has no data rows: " + trace_path);
            plot_loss_curve(rows, out_png);
        } else {
            std::ifstream f(report_path);
            if (!f) throw std::runtime_error("cannot read " + report_path);
            std::vector<ScannerBar> groups;
            std::string line;
            while (std::getline(f, line)) {
                if (line.rfind("# summary,", 0) != 0) continue;
                std::string rest = line.substr(10);
                std::string name = rest.substr(0, rest.find(','));
                if (name == "overall") continue;
                ScannerBar g{name, 0, 0, 0};
                if (std::sscanf(rest.c_str() + name.size(), ",dice=%lf,avd=%lf,avd_pct=%*f,f1=%lf", &g.dice, &g.avd,
                                &g.f1) != 3)
                    throw std::runtime_error("malformed summary row: " + line);
                groups.push_back(g);
            }
            if (groups.empty()) throw std::runtime_error("report has no scanner summary rows: " + report_path);
            plot_scanner_bars(groups, out_png);
        }
        out << "wrote " << out_png << " and " << out_png << ".json\n";
        return kExitOk;
    } catch (const std::exception& e) {
        err << "plot: " << e.what() << "\n";
        return kExitUsage;
    }
}

}  // namespace sav
