#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stackcast/core.hpp"
#include "stackcast/cvharness.hpp"
#include "stackcast/evalreport.hpp"
#include "stackcast/io.hpp"
#include "stackcast/multilayer.hpp"
#include "stackcast/parallel.hpp"
#include "stackcast/stackers.hpp"

namespace stackcast {

struct RunConfig {
    std::string dataset = "dataset";
    int horizon = 1;
    std::vector<double> quantiles = {0.1, 0.5, 0.9};
    EvalLoss metric = EvalLoss::Sql;
    int k_folds = 5;
    std::uint64_t seed = 0;
    int seasonality = 1;
    std::string freq;
    std::string stackers = "representatives";
    std::string base_learners = "default";
    std::string l3 = "greedy";
    bool no_l2_retrain = false;
    bool wall_time = true;
    std::size_t jobs = 1;
    std::string baseline = "median";
    std::size_t min_train = 0;  // 0 = auto
    OptimConfig optim;

    ForecastTask task() const { return ForecastTask(horizon, quantiles, metric); }
};

namespace pipeline {

inline bool parse_bool(const std::string& v) { return v == "true" || v == "1" || v == "yes"; }

/// Flat key = value config file; '#' starts a comment.
inline RunConfig parse_config(const std::filesystem::path& path) {
    RunConfig cfg;
    for (const auto& raw : io::read_lines(path)) {
        std::string line = raw.substr(0, raw.find('#'));
        const auto eq = line.find('=');
        if (eq == std::string::npos) continue;
        auto trim = [](std::string s) {
            const auto a = s.find_first_not_of(" \t");
            const auto b = s.find_last_not_of(" \t");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key == "dataset") cfg.dataset = value;
        else if (key == "horizon") cfg.horizon = std::stoi(value);
        else if (key == "quantiles") {
            cfg.quantiles.clear();
            for (const auto& f : io::split_csv(value)) cfg.quantiles.push_back(std::stod(f));
        } else if (key == "metric") cfg.metric = value == "mase" ? EvalLoss::Mase : EvalLoss::Sql;
        else if (key == "k_folds") cfg.k_folds = std::stoi(value);
        else if (key == "seed") cfg.seed = std::stoull(value);
        else if (key == "seasonality") cfg.seasonality = std::stoi(value);
        else if (key == "freq") cfg.freq = value;
        else if (key == "stackers") cfg.stackers = value;
        else if (key == "base_learners") cfg.base_learners = value;
        else if (key == "l3") cfg.l3 = value;
        else if (key == "no_l2_retrain") cfg.no_l2_retrain = parse_bool(value);
        else if (key == "timing") cfg.wall_time = value != "none";
        else if (key == "jobs") cfg.jobs = static_cast<std::size_t>(std::stoul(value));
        else if (key == "baseline") cfg.baseline = value;
        else if (key == "min_train") cfg.min_train = static_cast<std::size_t>(std::stoul(value));
        else if (key == "opt_lr") cfg.optim.lr0 = std::stod(value);
        else if (key == "opt_max_steps") cfg.optim.max_steps = std::stoul(value);
        else if (key == "opt_time_limit") cfg.optim.time_limit_s = std::stod(value);
        else if (key == "opt_patience") cfg.optim.plateau_patience = std::stoul(value);
        else if (key == "opt_rel_tol") cfg.optim.rel_tol = std::stod(value);
        else if (key == "opt_plateau_factor") cfg.optim.plateau_factor = std::stod(value);
        else throw Error("unknown config key '" + key + "'");
    }
    cfg.optim.seed = cfg.seed;
    return cfg;
}

inline Tying parse_tying(const std::string& name) {
    static const std::map<std::string, Tying> table = {
        {"m", Tying::M},       {"mi", Tying::MI},     {"mt", Tying::MT},
        {"mq", Tying::MQ},     {"mit", Tying::MIT},   {"miq", Tying::MIQ},
        {"mtq", Tying::MTQ},   {"mitq", Tying::MITQ}, {"mqq", Tying::MQQ},
        {"miqq", Tying::MIQQ}, {"mtqq", Tying::MTQQ}};
    auto it = table.find(name);
    if (it == table.end()) throw Error("unknown tying scheme '" + name + "'");
    return it->second;
}

inline StackerSpec parse_stacker(const std::string& name) {
    if (name == "mean") return StackerSpec::mean();
    if (name == "median") return StackerSpec::median();
    if (name == "select_best") return StackerSpec::select_best();
    if (name == "perf_inv") return StackerSpec::perf_weighted(PerfKind::Inv);
    if (name == "perf_sqr") return StackerSpec::perf_weighted(PerfKind::Sqr);
    if (name == "perf_exp") return StackerSpec::perf_weighted(PerfKind::Exp);
    if (name.rfind("greedy", 0) == 0) return StackerSpec::greedy(std::stoi(name.substr(6)));
    if (name == "tabular") return StackerSpec::tabular_net(false, 16, "tabular");
    if (name == "tabular_scaled") return StackerSpec::tabular_net(true, 16, "tabular_scaled");
    if (name == "tabular_scaled_mlp")
        return StackerSpec::tabular_net(true, 32, "tabular_scaled_mlp");
    if (name.rfind("linear_", 0) == 0) {
        const std::string rest = name.substr(7);
        const auto us = rest.rfind('_');
        if (us == std::string::npos) throw Error("bad linear stacker name '" + name + "'");
        const std::string param = rest.substr(us + 1);
        if (param != "softmax" && param != "positive")
            throw Error("bad linear parameterization in '" + name + "'");
        return StackerSpec::linear(parse_tying(rest.substr(0, us)),
                                   param == "softmax" ? WeightParam::Softmax
                                                      : WeightParam::Positive);
    }
    throw Error("unknown stacker '" + name + "'");
}

/// The six per-category representatives; the two multi-layer rows are added
/// by run_fit when the preset is requested.
inline std::vector<StackerSpec> representative_stackers(EvalLoss metric) {
    return {
        StackerSpec::median(),
        StackerSpec::select_best(),
        StackerSpec::perf_weighted(PerfKind::Exp),
        StackerSpec::greedy(100),
        metric == EvalLoss::Sql ? StackerSpec::linear(Tying::MQ, WeightParam::Softmax)
                                : StackerSpec::linear(Tying::M, WeightParam::Softmax),
        StackerSpec::tabular_net(true, 16, "tabular_scaled"),
    };
}

inline std::vector<StackerSpec> parse_stacker_list(const std::string& spec, EvalLoss metric) {
    if (spec == "representatives") return representative_stackers(metric);
    if (spec == "portfolio14") return portfolio14();
    std::vector<StackerSpec> out;
    for (const auto& name : io::split_csv(spec))
        if (!name.empty()) out.push_back(parse_stacker(name));
    if (out.empty()) throw Error("empty stacker list");
    return out;
}

inline std::vector<BaseLearnerSpec> parse_learner_list(const std::string& spec) {
    std::string expanded = spec;
    if (spec == "default") expanded = "seasonal_naive,ses,theta,linear_ar";
    else if (spec == "reduced") expanded = "seasonal_naive,theta";
    std::vector<BaseLearnerSpec> out;
    for (const auto& name : io::split_csv(expanded)) {
        if (name.empty()) continue;
        if (name == "seasonal_naive") out.push_back(BaseLearnerSpec::seasonal_naive());
        else if (name == "ses") out.push_back(BaseLearnerSpec::ses());
        else if (name == "theta") out.push_back(BaseLearnerSpec::theta());
        else if (name == "linear_ar") out.push_back(BaseLearnerSpec::linear_ar());
        else if (name.rfind("external:", 0) == 0)
            out.push_back(BaseLearnerSpec::external(name.substr(9)));
        else throw Error("unknown base learner '" + name + "'");
    }
    if (out.empty()) throw Error("empty base learner list");
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct IngestSummary {
    std::size_t kept = 0;
    std::size_t dropped = 0;
};

inline IngestSummary run_ingest(const std::filesystem::path& input, const RunConfig& cfg,
                                const std::filesystem::path& out_dir) {
    TimeSeriesPanel raw = io::read_input_csv(input, cfg.seasonality, cfg.freq);
    validate_panel(raw);
    TimeSeriesPanel kept = filter_min_length(raw, cfg.horizon);
    std::filesystem::create_directories(out_dir);
    io::write_panel(out_dir / "panel.csv", kept);
    return {kept.series.size(), raw.series.size() - kept.series.size()};
}

inline std::map<std::string, ExternalTable> load_externals(
    const std::vector<BaseLearnerSpec>& specs, const ForecastTask& task) {
    std::map<std::string, ExternalTable> tables;
    for (const auto& s : specs)
        if (s.kind == LearnerKind::External && tables.count(s.external_path) == 0)
            tables.emplace(s.external_path, io::import_external(s.external_path, task));
    return tables;
}

inline OofStore run_backtest(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    TimeSeriesPanel panel = io::read_panel(out_dir / "panel.csv");
    HoldoutSplit split = holdout_split(panel, cfg.horizon);
    const ForecastTask task = cfg.task();
    const auto learners = parse_learner_list(cfg.base_learners);
    const auto externals = load_externals(learners, task);
    BuildOofOptions opt;
    opt.min_train = cfg.min_train;
    opt.wall_time = cfg.wall_time;
    opt.jobs = cfg.jobs;
    opt.externals = &externals;
    OofStore store = build_oof(split.train, learners, cfg.k_folds, task, cfg.seed, opt);
    io::write_oof_store(out_dir / "oof", store);
    return store;
}

/// Scores per-item forecasts against holdout targets with the task loss.
inline DatasetLoss score_forecasts(const std::map<std::string, QuantileForecast>& preds,
                                   const std::map<std::string, std::vector<double>>& targets,
                                   const std::map<std::string, double>& scales,
                                   const ForecastTask& task) {
    std::vector<ItemScore> scores;
    for (const auto& [item, actual] : targets) {
        auto pit = preds.find(item);
        if (pit == preds.end()) throw ShapeMismatch("no prediction for item '" + item + "'");
        const double a = scales.at(item);
        if (a == 0.0) {
            scores.push_back({item, 0.0, true});
            continue;
        }
        if (task.eval_loss == EvalLoss::Sql) {
            scores.push_back(sql_item(pit->second, actual, {item, a}, task.quantile_levels));
        } else {
            const std::size_t qm = static_cast<std::size_t>(task.median_index());
            std::vector<double> point(pit->second.horizon);
            for (std::size_t h = 0; h < point.size(); ++h) point[h] = pit->second.at(h, qm);
            scores.push_back(mase_item(point, actual, {item, a}));
        }
    }
    return dataset_loss(scores);
}

inline void upsert_records(const std::filesystem::path& path, std::vector<EvalRecord> fresh) {
    std::vector<EvalRecord> merged;
    if (std::filesystem::exists(path)) merged = io::read_records(path);
    for (auto& r : fresh) {
        bool replaced = false;
        for (auto& old : merged)
            if (old.method == r.method && old.dataset == r.dataset && old.metric == r.metric) {
                old = r;
                replaced = true;
            }
        if (!replaced) merged.push_back(std::move(r));
    }
    std::sort(merged.begin(), merged.end(), [](const EvalRecord& a, const EvalRecord& b) {
        if (a.dataset != b.dataset) return a.dataset < b.dataset;
        if (a.method != b.method) return a.method < b.method;
        return a.metric < b.metric;
    });
    io::write_records(path, merged);
}

struct FitResultRow {
    std::string method;
    double holdout_loss = 0.0;
    double fit_time_s = 0.0;
};

inline std::vector<FitResultRow> run_fit(const RunConfig& cfg,
                                         const std::filesystem::path& out_dir) {
    TimeSeriesPanel panel = io::read_panel(out_dir / "panel.csv");
    HoldoutSplit split = holdout_split(panel, cfg.horizon);
    OofStore store = io::read_oof_store(out_dir / "oof");
    const ForecastTask task = cfg.task();
    const ModelForecastSet test_inputs = store.test_inputs();

    std::vector<StackerSpec> specs = parse_stacker_list(cfg.stackers, cfg.metric);
    std::vector<TrainedStacker> trained(specs.size());
    parallel_for(specs.size(), cfg.jobs, [&](std::size_t i) {
        trained[i] = fit_stacker(specs[i], store, cfg.optim, cfg.wall_time);
    });

    std::filesystem::create_directories(out_dir / "stackers");
    std::vector<FitResultRow> rows;
    std::vector<EvalRecord> records;
    for (const auto& ts : trained) {
        io::write_stacker(out_dir / "stackers" / (ts.spec.label() + ".txt"), ts);
        const DatasetLoss loss = score_forecasts(combine(ts, test_inputs), split.test_targets,
                                                 store.seasonal_scale, task);
        rows.push_back({ts.spec.label(), loss.value, ts.fit_time_s});
        records.push_back({ts.spec.label(), cfg.dataset, cfg.metric, loss.value, ts.fit_time_s});
    }

    if (cfg.stackers == "representatives" && store.folds_k >= 2) {
        for (const std::string l3 : {"select_best", "greedy"}) {
            MultiLayerSpec mls;
            mls.l3 = l3 == "greedy" ? StackerSpec::greedy(100) : StackerSpec::select_best();
            mls.retrain_l2 = !cfg.no_l2_retrain;
            MultiLayerEnsemble ens = fit_multilayer(store, mls, cfg.optim, cfg.wall_time);
            const DatasetLoss loss = score_forecasts(predict_multilayer(ens, test_inputs),
                                                     split.test_targets, store.seasonal_scale, task);
            const std::string method =
                l3 == "greedy" ? "multilayer_stacking" : "stacker_selection";
            rows.push_back({method, loss.value, ens.fit_time_s});
            records.push_back({method, cfg.dataset, cfg.metric, loss.value, ens.fit_time_s});
        }
    }
    upsert_records(out_dir / "records.csv", std::move(records));
    return rows;
}

struct MultiLayerRunResult {
    std::string method;
    double holdout_loss = 0.0;
    MultiLayerEnsemble ensemble;
};

inline MultiLayerRunResult run_fit_multilayer(const RunConfig& cfg,
                                              const std::filesystem::path& out_dir) {
    TimeSeriesPanel panel = io::read_panel(out_dir / "panel.csv");
    HoldoutSplit split = holdout_split(panel, cfg.horizon);
    OofStore store = io::read_oof_store(out_dir / "oof");
    const ForecastTask task = cfg.task();

    MultiLayerSpec mls;
    mls.l3 = cfg.l3 == "select_best" ? StackerSpec::select_best() : StackerSpec::greedy(100);
    mls.retrain_l2 = !cfg.no_l2_retrain;
    MultiLayerEnsemble ens = fit_multilayer(store, mls, cfg.optim, cfg.wall_time);

    const DatasetLoss loss = score_forecasts(predict_multilayer(ens, store.test_inputs()),
                                             split.test_targets, store.seasonal_scale, task);
    const std::string method =
        cfg.l3 == "select_best" ? "stacker_selection" : "multilayer_stacking";

    // L3 weight table (the per-L2 weight breakdown)
    std::string weights = "# stackcast-l3-weights v1\n";
    for (std::size_t c = 0; c < ens.l2_names.size(); ++c)
        weights += (c ? "," : "") + ens.l2_names[c];
    weights += "\n";
    for (std::size_t c = 0; c < ens.l3_weights.size(); ++c)
        weights += (c ? "," : "") + io::format_double(ens.l3_weights[c]);
    weights += "\n";
    io::write_file(out_dir / "l3_weights.csv", weights);

    upsert_records(out_dir / "records.csv",
                   {{method, cfg.dataset, cfg.metric, loss.value, ens.fit_time_s}});
    return {method, loss.value, std::move(ens)};
}

inline Leaderboard run_report(const std::vector<std::filesystem::path>& record_files,
                              const std::string& baseline, const std::filesystem::path& out_dir) {
    std::vector<EvalRecord> records;
    for (const auto& path : record_files)
        for (auto& r : io::read_records(path)) records.push_back(std::move(r));
    Leaderboard board = make_leaderboard(records, baseline);
    std::filesystem::create_directories(out_dir);
    io::write_file(out_dir / "leaderboard.csv",
                   "# stackcast-leaderboard v1\n" + render_leaderboard_csv(board));
    std::string report = "# Forecast combination leaderboard\n\n";
    report += "Baseline: " + baseline + "\n\n";
    report += render_leaderboard_markdown(board);
    io::write_file(out_dir / "report.md", report);
    return board;
}

}  // namespace pipeline
}  // namespace stackcast
