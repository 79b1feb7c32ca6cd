#pragma once

#include <chrono>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "stackcast/baselearners.hpp"
#include "stackcast/core.hpp"
#include "stackcast/losses.hpp"
#include "stackcast/parallel.hpp"

namespace stackcast {

struct InsufficientLength : Error {
    InsufficientLength(std::size_t t_len, int k, int h)
        : Error("series length " + std::to_string(t_len) + " too short for K=" +
                std::to_string(k) + ", H=" + std::to_string(h)) {}
};

/// Windowed K-fold plan: fold k (1-based) trains on the prefix of length
/// T - (K-k+1)*H and validates on the following H points. Indices 0-based,
/// validation windows half-open [val_begin, val_end).
struct FoldPlan {
    int folds_k = 0;
    int horizon = 0;
    struct Fold {
        std::size_t train_len = 0;
        std::size_t val_begin = 0;
        std::size_t val_end = 0;
    };
    std::vector<Fold> folds;
};

inline FoldPlan split_folds(std::size_t t_len, int k_folds, int horizon,
                            std::size_t min_train = 4) {
    if (k_folds < 1 || horizon < 1)
        throw Error("split_folds requires K >= 1 and H >= 1");
    const std::size_t reserved =
        static_cast<std::size_t>(k_folds) * static_cast<std::size_t>(horizon);
    if (t_len < reserved + min_train)
        throw InsufficientLength(t_len, k_folds, horizon);
    FoldPlan plan;
    plan.folds_k = k_folds;
    plan.horizon = horizon;
    for (int k = 1; k <= k_folds; ++k) {
        const std::size_t j = static_cast<std::size_t>(k_folds - k + 1);
        FoldPlan::Fold fold;
        fold.train_len = t_len - j * static_cast<std::size_t>(horizon);
        fold.val_begin = fold.train_len;
        fold.val_end = fold.train_len + static_cast<std::size_t>(horizon);
        plan.folds.push_back(fold);
    }
    return plan;
}

struct HoldoutSplit {
    TimeSeriesPanel train;
    std::map<std::string, std::vector<double>> test_targets;  // last H values per item
};

inline HoldoutSplit holdout_split(const TimeSeriesPanel& panel, int horizon) {
    HoldoutSplit out;
    out.train.seasonality_m = panel.seasonality_m;
    out.train.freq_label = panel.freq_label;
    for (const auto& s : panel.series) {
        if (s.length() <= static_cast<std::size_t>(horizon))
            throw InsufficientLength(s.length(), 1, horizon);
        TimeSeries head = s;
        head.values.assign(s.values.begin(),
                           s.values.end() - static_cast<std::ptrdiff_t>(horizon));
        out.train.series.push_back(std::move(head));
        out.test_targets[s.item_id] =
            std::vector<double>(s.values.end() - static_cast<std::ptrdiff_t>(horizon),
                                s.values.end());
    }
    return out;
}

/// Out-of-fold store: base-model forecasts on every validation window plus the
/// targets, along with the test-window forecasts from the final refit.
struct OofStore {
    int folds_k = 0;
    int horizon = 0;
    std::vector<double> quantiles;
    EvalLoss eval_loss = EvalLoss::Sql;
    std::vector<std::string> model_ids;
    std::vector<std::string> items;  // panel order
    std::uint64_t seed = 0;
    int seasonality_m = 1;

    std::map<std::string, std::size_t> item_length;
    std::map<std::string, double> seasonal_scale;  // a_i from the training history
    std::map<std::pair<int, std::string>, std::vector<double>> targets;        // (fold, item)
    std::map<std::tuple<int, int, std::string>, QuantileForecast> forecasts;   // (fold, model, item)
    std::map<std::pair<int, std::string>, QuantileForecast> test_forecasts;    // (model idx, item)
    std::map<std::pair<int, int>, double> fit_time_s;                          // (fold, model); fold 0 = test refit
    std::vector<std::string> skipped;  // "item@fold" entries dropped for short history

    ForecastTask task() const {
        return ForecastTask(horizon, quantiles, eval_loss);
    }

    /// Items with a forecast record in fold k (for every model).
    std::vector<std::string> fold_items(int fold) const {
        std::vector<std::string> out;
        for (const auto& item : items)
            if (targets.count({fold, item}) != 0) out.push_back(item);
        return out;
    }

    ModelForecastSet fold_inputs(int fold) const {
        ModelForecastSet set;
        set.model_ids = model_ids;
        set.by_model.resize(model_ids.size());
        for (std::size_t m = 0; m < model_ids.size(); ++m)
            for (const auto& item : fold_items(fold))
                set.by_model[m].emplace(item,
                                        forecasts.at({fold, static_cast<int>(m), item}));
        return set;
    }

    ModelForecastSet test_inputs() const {
        ModelForecastSet set;
        set.model_ids = model_ids;
        set.by_model.resize(model_ids.size());
        for (const auto& [key, f] : test_forecasts)
            set.by_model[static_cast<std::size_t>(key.first)].emplace(key.second, f);
        return set;
    }
};

struct BuildOofOptions {
    ResidualQuantilePolicy policy;
    std::size_t min_train = 0;  // 0 = max(m + 1, 4)
    bool wall_time = true;
    std::size_t jobs = 1;  // (model, item) fan-out within a fold
    const std::map<std::string, ExternalTable>* externals = nullptr;  // keyed by file path
};

inline OofStore build_oof(const TimeSeriesPanel& panel, const std::vector<BaseLearnerSpec>& specs,
                          int k_folds, const ForecastTask& task, std::uint64_t seed,
                          const BuildOofOptions& opt = {}) {
    validate_panel(panel);
    OofStore store;
    store.folds_k = k_folds;
    store.horizon = task.horizon;
    store.quantiles = task.quantile_levels;
    store.eval_loss = task.eval_loss;
    store.seed = seed;
    store.seasonality_m = panel.seasonality_m;
    for (const auto& s : specs) store.model_ids.push_back(s.name);

    const std::size_t min_train =
        opt.min_train != 0 ? opt.min_train
                           : static_cast<std::size_t>(std::max(panel.seasonality_m + 1, 4));

    auto external_for = [&](const BaseLearnerSpec& spec) -> const ExternalTable* {
        if (spec.kind != LearnerKind::External) return nullptr;
        if (opt.externals == nullptr)
            throw ExternalFileMissing(spec.external_path);
        auto it = opt.externals->find(spec.external_path);
        if (it == opt.externals->end())
            throw ExternalFileMissing(spec.external_path);
        return &it->second;
    };

    for (const auto& s : panel.series) {
        store.items.push_back(s.item_id);
        store.item_length[s.item_id] = s.length();
        if (s.length() > static_cast<std::size_t>(panel.seasonality_m))
            store.seasonal_scale[s.item_id] =
                seasonal_error(s.values, panel.seasonality_m, s.item_id).a;
        else
            store.seasonal_scale[s.item_id] = 0.0;  // excluded downstream
    }

    using clock = std::chrono::steady_clock;
    const std::size_t n_items = panel.series.size();
    for (int k = 1; k <= k_folds; ++k) {
        const std::size_t j = static_cast<std::size_t>(k_folds - k + 1);
        const std::size_t span = j * static_cast<std::size_t>(task.horizon);
        for (std::size_t m = 0; m < specs.size(); ++m) {
            const auto start = clock::now();
            std::vector<QuantileForecast> out(n_items);
            std::vector<char> present(n_items, 0);
            const ExternalTable* ext = external_for(specs[m]);
            parallel_for(n_items, opt.jobs, [&](std::size_t i) {
                const auto& s = panel.series[i];
                if (s.length() < span + min_train) return;
                const std::size_t train_len = s.length() - span;
                std::vector<double> prefix(s.values.begin(),
                                           s.values.begin() + static_cast<std::ptrdiff_t>(train_len));
                ForecastContext ctx{s.item_id, static_cast<std::int64_t>(train_len), ext};
                try {
                    out[i] = fit_predict(specs[m], prefix, panel.seasonality_m, task, opt.policy, ctx);
                } catch (const Error& e) {
                    throw Error("fold " + std::to_string(k) + ", model '" + specs[m].name +
                                "', item '" + s.item_id + "': " + e.what());
                }
                present[i] = 1;
            });
            for (std::size_t i = 0; i < n_items; ++i) {
                const auto& s = panel.series[i];
                if (present[i] == 0) {
                    if (m == 0) store.skipped.push_back(s.item_id + "@" + std::to_string(k));
                    continue;
                }
                store.forecasts[{k, static_cast<int>(m), s.item_id}] = std::move(out[i]);
                if (m == 0) {
                    const std::size_t train_len = s.length() - span;
                    store.targets[{k, s.item_id}] = std::vector<double>(
                        s.values.begin() + static_cast<std::ptrdiff_t>(train_len),
                        s.values.begin() + static_cast<std::ptrdiff_t>(
                                               train_len + static_cast<std::size_t>(task.horizon)));
                }
            }
            const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
            store.fit_time_s[{k, static_cast<int>(m)}] =
                opt.wall_time ? std::max(elapsed, 1e-9) : 0.0;
        }
    }

    // final refit on the full training history for test-window prediction
    for (std::size_t m = 0; m < specs.size(); ++m) {
        const auto start = clock::now();
        std::vector<QuantileForecast> out(n_items);
        const ExternalTable* ext = external_for(specs[m]);
        parallel_for(n_items, opt.jobs, [&](std::size_t i) {
            const auto& s = panel.series[i];
            ForecastContext ctx{s.item_id, static_cast<std::int64_t>(s.length()), ext};
            out[i] = fit_predict(specs[m], s.values, panel.seasonality_m, task, opt.policy, ctx);
        });
        for (std::size_t i = 0; i < n_items; ++i)
            store.test_forecasts[{static_cast<int>(m), panel.series[i].item_id}] = std::move(out[i]);
        const double elapsed = std::chrono::duration<double>(clock::now() - start).count();
        store.fit_time_s[{0, static_cast<int>(m)}] =
            opt.wall_time ? std::max(elapsed, 1e-9) : 0.0;
    }
    return store;
}

/// Audits the no-leakage contract: every forecast's origin sits exactly at the
/// end of its fold's training prefix and covers the fold window.
inline std::vector<std::string> leakage_check(const OofStore& store) {
    std::vector<std::string> violations;
    for (const auto& [key, f] : store.forecasts) {
        const auto& [fold, model, item] = key;
        const std::size_t j = static_cast<std::size_t>(store.folds_k - fold + 1);
        auto len_it = store.item_length.find(item);
        if (len_it == store.item_length.end()) {
            violations.push_back("unknown item '" + item + "'");
            continue;
        }
        const std::size_t expect_origin =
            len_it->second - j * static_cast<std::size_t>(store.horizon);
        if (f.origin_t != static_cast<std::int64_t>(expect_origin))
            violations.push_back("item '" + item + "' fold " + std::to_string(fold) + " model " +
                                 std::to_string(model) + ": origin " + std::to_string(f.origin_t) +
                                 " != train end " + std::to_string(expect_origin));
        if (f.horizon != static_cast<std::size_t>(store.horizon))
            violations.push_back("item '" + item + "' fold " + std::to_string(fold) +
                                 ": forecast covers " + std::to_string(f.horizon) +
                                 " steps, window is " + std::to_string(store.horizon));
        auto tgt = store.targets.find({fold, item});
        if (tgt == store.targets.end())
            violations.push_back("item '" + item + "' fold " + std::to_string(fold) +
                                 ": missing target window");
        else if (tgt->second.size() != static_cast<std::size_t>(store.horizon))
            violations.push_back("item '" + item + "' fold " + std::to_string(fold) +
                                 ": target window length " + std::to_string(tgt->second.size()));
    }
    return violations;
}

}  // namespace stackcast
