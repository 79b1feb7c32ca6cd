#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "stackcast/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out_dir = ".";
    long long seed = -1;
    long long jobs = -1;
    long long k_folds = -1;
    bool no_l2_retrain = false;
};

stackcast::RunConfig load_config(const CommonArgs& args) {
    stackcast::RunConfig cfg;
    if (!args.config.empty()) cfg = stackcast::pipeline::parse_config(args.config);
    if (args.seed >= 0) {
        cfg.seed = static_cast<std::uint64_t>(args.seed);
        cfg.optim.seed = cfg.seed;
    }
    if (args.jobs >= 1) cfg.jobs = static_cast<std::size_t>(args.jobs);
    if (args.k_folds >= 1) cfg.k_folds = static_cast<int>(args.k_folds);
    if (args.no_l2_retrain) cfg.no_l2_retrain = true;
    return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args, bool with_retrain = false) {
    cmd->add_option("--config", args.config, "Path to a key=value run config file");
    cmd->add_option("--out-dir", args.out_dir, "Working directory for run artifacts");
    cmd->add_option("--seed", args.seed, "Override the config seed");
    cmd->add_option("--jobs", args.jobs, "Worker thread count");
    cmd->add_option("--k-folds", args.k_folds, "Override the fold count");
    if (with_retrain)
        cmd->add_flag("--no-l2-retrain", args.no_l2_retrain,
                      "Skip the second-layer retraining pass");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stackcast: forecast combination toolkit"};
    app.require_subcommand(1);

    CommonArgs args;
    std::string input_path;
    std::string baseline = "median";
    std::vector<std::string> record_files;

    auto* ingest = app.add_subcommand("ingest", "Validate and store a raw panel CSV");
    ingest->add_option("input", input_path, "Raw CSV (item_id,timestamp,target)")->required();
    add_common(ingest, args);

    auto* backtest = app.add_subcommand("backtest", "Build the out-of-fold forecast store");
    add_common(backtest, args);

    auto* fit = app.add_subcommand("fit", "Train stackers and score the holdout window");
    add_common(fit, args, true);

    auto* fitml = app.add_subcommand("fit-multilayer", "Train the multi-layer ensemble");
    add_common(fitml, args, true);

    auto* report = app.add_subcommand("report", "Aggregate records into a leaderboard");
    report->add_option("records", record_files, "Record CSV files to aggregate")->required();
    report->add_option("--baseline", baseline, "Baseline method for relative metrics");
    report->add_option("--out-dir", args.out_dir, "Output directory for report files");

    CLI11_PARSE(app, argc, argv);

    try {
        const std::filesystem::path out_dir = args.out_dir;
        if (*ingest) {
            const auto cfg = load_config(args);
            const auto summary = stackcast::pipeline::run_ingest(input_path, cfg, out_dir);
            std::printf("ingested %zu items (%zu dropped as too short)\n", summary.kept,
                        summary.dropped);
        } else if (*backtest) {
            const auto cfg = load_config(args);
            const auto store = stackcast::pipeline::run_backtest(cfg, out_dir);
            std::printf("backtest: %d folds, %zu models, %zu items, %zu skipped windows\n",
                        store.folds_k, store.model_ids.size(), store.items.size(),
                        store.skipped.size());
        } else if (*fit) {
            const auto cfg = load_config(args);
            const auto rows = stackcast::pipeline::run_fit(cfg, out_dir);
            for (const auto& r : rows)
                std::printf("%-28s holdout=%.6f fit_time=%.3fs\n", r.method.c_str(),
                            r.holdout_loss, r.fit_time_s);
        } else if (*fitml) {
            const auto cfg = load_config(args);
            const auto res = stackcast::pipeline::run_fit_multilayer(cfg, out_dir);
            std::printf("%s holdout=%.6f\n", res.method.c_str(), res.holdout_loss);
        } else if (*report) {
            std::vector<std::filesystem::path> paths(record_files.begin(), record_files.end());
            const auto board = stackcast::pipeline::run_report(paths, baseline, args.out_dir);
            std::printf("%s", stackcast::render_leaderboard_csv(board).c_str());
        }
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
