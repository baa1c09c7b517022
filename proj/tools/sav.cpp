#include <CLI11.hpp>

#include "sav/cli.hpp"

int main(int argc, char** argv) {
    CLI::App app{"volumetric lesion segmentation toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(sav::kToolVersion));

    std::string config, data, out_dir, ckpt, pred, truth, out_csv, suite, trace, report, out_png, phantom_cfg;
    int n_cases = 8, connectivity = 26;
    std::uint64_t seed = 0;

    auto* train = app.add_subcommand("train", "train a model on a labelled dataset");
    train->add_option("--config", config, "run config JSON (model + train sections)")->required();
    train->add_option("--data", data, "dataset directory with dataset.json")->required();
    train->add_option("--out", out_dir, "output directory for checkpoints, trace, manifest")->required();

    auto* predict = app.add_subcommand("predict", "segment every case in a dataset");
    predict->add_option("--ckpt", ckpt, "checkpoint file")->required();
    predict->add_option("--data", data, "dataset directory with dataset.json")->required();
    predict->add_option("--out", out_dir, "output directory for masks and geometry records")->required();

    auto* evaluate = app.add_subcommand("evaluate", "score predictions against reference masks");
    evaluate->add_option("--pred", pred, "prediction directory (from predict)")->required();
    evaluate->add_option("--truth", truth, "reference dataset directory")->required();
    evaluate->add_option("--out", out_csv, "report CSV path (a .json twin is written beside it)")->required();
    evaluate->add_option("--connectivity", connectivity, "component connectivity: 6, 18 or 26")
        ->check(CLI::IsMember({6, 18, 26}));

    auto* ablate = app.add_subcommand("ablate", "train and score a suite of model variants");
    ablate->add_option("--suite", suite, "suite JSON; omit or pass 'default' for the built-in five variants");
    ablate->add_option("--data", data, "dataset directory with dataset.json")->required();
    ablate->add_option("--out", out_dir, "output directory (one subdirectory per variant)")->required();

    auto* phantom = app.add_subcommand("phantom", "synthetic data utilities");
    auto* make = phantom->add_subcommand("make", "generate a synthetic labelled dataset");
    make->add_option("--out", out_dir, "output dataset directory")->required();
    make->add_option("--n", n_cases, "number of cases");
    make->add_option("--seed", seed, "base RNG seed");
    make->add_option("--config", phantom_cfg, "phantom config JSON (optional)");
    phantom->require_subcommand(1);

    auto* plot = app.add_subcommand("plot", "render a loss trace or evaluation report as PNG");
    plot->add_option("--trace", trace, "trace.csv from train");
    plot->add_option("--report", report, "report CSV from evaluate");
    plot->add_option("--out", out_png, "output PNG path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : sav::kExitUsage;
    }

    if (train->parsed()) return sav::cmd_train(config, data, out_dir);
    if (predict->parsed()) return sav::cmd_predict(ckpt, data, out_dir);
    if (evaluate->parsed()) return sav::cmd_evaluate(pred, truth, out_csv, connectivity);
    if (ablate->parsed()) return sav::cmd_ablate(suite, data, out_dir);
    if (phantom->parsed()) return sav::cmd_phantom_make(out_dir, n_cases, seed, phantom_cfg);
    if (plot->parsed()) return sav::cmd_plot(trace, report, out_png);
    return sav::kExitUsage;
}
