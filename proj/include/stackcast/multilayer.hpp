#pragma once

#include <cstddef>
#include <iterator>
#include <map>
#include <string>
#include <vector>

#include "stackcast/core.hpp"
#include "stackcast/cvharness.hpp"
#include "stackcast/stackers.hpp"

namespace stackcast {

struct InsufficientFolds : Error {
    explicit InsufficientFolds(int k)
        : Error("L3 training needs K >= 2 folds, got " + std::to_string(k)) {}
};

/// The default 14-model L2 portfolio. The three tabular slots stand in for
/// external gradient-boosted / MLP regressors behind the same row interface.
inline std::vector<StackerSpec> portfolio14() {
    return {
        StackerSpec::median(),
        StackerSpec::greedy(100),
        StackerSpec::linear(Tying::MI, WeightParam::Softmax),
        StackerSpec::linear(Tying::MT, WeightParam::Softmax),
        StackerSpec::linear(Tying::MQ, WeightParam::Softmax),
        StackerSpec::linear(Tying::MIT, WeightParam::Positive),
        StackerSpec::linear(Tying::MTQ, WeightParam::Positive),
        StackerSpec::linear(Tying::MIQ, WeightParam::Positive),
        StackerSpec::linear(Tying::MQQ, WeightParam::Positive),
        StackerSpec::linear(Tying::MIQQ, WeightParam::Positive),
        StackerSpec::linear(Tying::MTQQ, WeightParam::Positive),
        StackerSpec::tabular_net(false, 16, "tabular"),
        StackerSpec::tabular_net(true, 16, "tabular_scaled"),
        StackerSpec::tabular_net(true, 32, "tabular_scaled_mlp"),
    };
}

struct MultiLayerSpec {
    std::vector<StackerSpec> l2 = portfolio14();
    StackerSpec l3 = StackerSpec::greedy(100);
    bool retrain_l2 = true;
};

struct MultiLayerEnsemble {
    std::vector<std::string> l2_names;
    std::vector<TrainedStacker> l2;          // final models used at prediction time
    std::vector<TrainedStacker> l2_interim;  // trained on folds 1..K-1
    TrainedStacker l3;
    std::vector<double> l2_window_k_loss;
    std::vector<double> l3_weights;  // per L2; one-hot under SelectBest
    bool retrained_l2 = false;
    int folds_k = 0;
    int interim_last_fold = 0;  // last fold the interim L2s saw
    OofStore l3_store;          // window-K L2 predictions the L3 was fitted on
    double fit_time_s = 0.0;
};

namespace detail {

/// Store restricted to folds 1..upto, with item lengths shortened so the
/// fold algebra (and leakage audit) stay consistent.
inline OofStore restrict_folds(const OofStore& store, int upto) {
    OofStore sub = store;
    sub.folds_k = upto;
    const std::size_t cut = static_cast<std::size_t>(store.folds_k - upto) *
                            static_cast<std::size_t>(store.horizon);
    for (auto& [item, len] : sub.item_length) len -= cut;
    for (auto it = sub.targets.begin(); it != sub.targets.end();)
        it = it->first.first > upto ? sub.targets.erase(it) : std::next(it);
    for (auto it = sub.forecasts.begin(); it != sub.forecasts.end();)
        it = std::get<0>(it->first) > upto ? sub.forecasts.erase(it) : std::next(it);
    sub.test_forecasts.clear();
    return sub;
}

}  // namespace detail

/// Two-level CV training: interim L2s on folds 1..K-1, L3 on their window-K
/// predictions, then (optionally) L2 retraining on all K windows.
inline MultiLayerEnsemble fit_multilayer(const OofStore& store, const MultiLayerSpec& spec,
                                         const OptimConfig& cfg, bool wall_time = true) {
    if (store.folds_k < 2) throw InsufficientFolds(store.folds_k);
    if (spec.l2.empty()) throw Error("L2 portfolio must be non-empty");

    MultiLayerEnsemble ens;
    ens.folds_k = store.folds_k;
    ens.interim_last_fold = store.folds_k - 1;
    for (const auto& s : spec.l2) ens.l2_names.push_back(s.label());

    const OofStore interim_store = detail::restrict_folds(store, store.folds_k - 1);
    for (const auto& s : spec.l2)
        ens.l2_interim.push_back(fit_stacker(s, interim_store, cfg, wall_time));

    // window-K predictions of the interim L2s become the L3 training set
    const int k_last = store.folds_k;
    const ModelForecastSet window_k_inputs = store.fold_inputs(k_last);
    OofStore l3_store;
    l3_store.folds_k = 1;
    l3_store.horizon = store.horizon;
    l3_store.quantiles = store.quantiles;
    l3_store.eval_loss = store.eval_loss;
    l3_store.model_ids = ens.l2_names;
    l3_store.items = store.fold_items(k_last);
    l3_store.seed = store.seed;
    l3_store.seasonality_m = store.seasonality_m;
    for (const auto& item : l3_store.items) {
        l3_store.item_length[item] = store.item_length.at(item);
        l3_store.seasonal_scale[item] = store.seasonal_scale.at(item);
        l3_store.targets[{1, item}] = store.targets.at({k_last, item});
    }
    for (std::size_t c = 0; c < ens.l2_interim.size(); ++c) {
        auto preds = combine(ens.l2_interim[c], window_k_inputs);
        for (auto& [item, f] : preds)
            l3_store.forecasts[{1, static_cast<int>(c), item}] = std::move(f);
    }

    const OofView l3_view = make_oof_view(l3_store);
    for (std::size_t c = 0; c < ens.l2_interim.size(); ++c)
        ens.l2_window_k_loss.push_back(detail::single_model_loss(l3_view, c));

    ens.l3 = fit_stacker(spec.l3, l3_store, cfg, wall_time);
    ens.l3_weights.assign(spec.l2.size(), 0.0);
    if (ens.l3.spec.family == StackerSpec::Family::SelectBest)
        ens.l3_weights[static_cast<std::size_t>(ens.l3.best_model)] = 1.0;
    else if (!ens.l3.weights.values.empty())
        ens.l3_weights = ens.l3.weights.values;
    ens.l3_store = std::move(l3_store);

    if (spec.retrain_l2) {
        ens.retrained_l2 = true;
        for (const auto& s : spec.l2) ens.l2.push_back(fit_stacker(s, store, cfg, wall_time));
    } else {
        ens.l2 = ens.l2_interim;
    }

    for (const auto& ts : ens.l2_interim) ens.fit_time_s += ts.fit_time_s;
    ens.fit_time_s += ens.l3.fit_time_s;
    if (ens.retrained_l2)
        for (const auto& ts : ens.l2) ens.fit_time_s += ts.fit_time_s;
    return ens;
}

/// Chains L1 test forecasts through the final L2s and the L3 aggregator.
inline std::map<std::string, QuantileForecast> predict_multilayer(const MultiLayerEnsemble& ens,
                                                                  const ModelForecastSet& l1_inputs) {
    ModelForecastSet l2_set;
    l2_set.model_ids = ens.l2_names;
    l2_set.by_model.resize(ens.l2.size());
    for (std::size_t c = 0; c < ens.l2.size(); ++c)
        l2_set.by_model[c] = combine(ens.l2[c], l1_inputs);
    return combine(ens.l3, l2_set);
}

/// Provenance audit for the two-level CV contract; empty result = clean.
inline std::vector<std::string> audit_two_level(const MultiLayerEnsemble& ens) {
    std::vector<std::string> violations;
    if (ens.interim_last_fold != ens.folds_k - 1)
        violations.push_back("interim L2s saw fold " + std::to_string(ens.interim_last_fold) +
                             ", expected " + std::to_string(ens.folds_k - 1));
    if (ens.l3_store.folds_k != 1)
        violations.push_back("L3 store holds more than the final window");
    for (const auto& [key, f] : ens.l3_store.forecasts) {
        const auto& item = std::get<2>(key);
        const std::size_t expect_origin =
            ens.l3_store.item_length.at(item) - static_cast<std::size_t>(ens.l3_store.horizon);
        if (f.origin_t != static_cast<std::int64_t>(expect_origin))
            violations.push_back("L3 row for item '" + item + "' does not originate at window K");
    }
    return violations;
}

}  // namespace stackcast
