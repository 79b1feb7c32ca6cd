#pragma once

#include <functional>
#include <random>
#include <string>
#include <vector>

#include "stackcast/cvharness.hpp"

namespace testutil {

/// Hand-built OOF store: `value(fold, model, item, h, q)` fills the forecast
/// grid and `target(fold, item, h)` the target windows. Folds are 1-based.
inline stackcast::OofStore make_store(
    std::size_t n_items, int folds, int horizon, std::vector<double> levels, std::size_t n_models,
    const std::function<double(int, std::size_t, std::size_t, std::size_t, std::size_t)>& value,
    const std::function<double(int, std::size_t, std::size_t)>& target, double scale = 1.0) {
    stackcast::OofStore store;
    store.folds_k = folds;
    store.horizon = horizon;
    store.quantiles = std::move(levels);
    store.eval_loss = stackcast::EvalLoss::Sql;
    for (std::size_t m = 0; m < n_models; ++m) store.model_ids.push_back("m" + std::to_string(m));
    const std::size_t h_sz = static_cast<std::size_t>(horizon);
    for (std::size_t i = 0; i < n_items; ++i) {
        const std::string item = "item" + std::to_string(i);
        store.items.push_back(item);
        store.item_length[item] = h_sz * static_cast<std::size_t>(folds) + 8;
        store.seasonal_scale[item] = scale;
        for (int k = 1; k <= folds; ++k) {
            auto& tgt = store.targets[{k, item}];
            for (std::size_t h = 0; h < h_sz; ++h) tgt.push_back(target(k, i, h));
            const std::size_t j = static_cast<std::size_t>(folds - k + 1);
            const std::int64_t origin =
                static_cast<std::int64_t>(store.item_length[item] - j * h_sz);
            for (std::size_t m = 0; m < n_models; ++m) {
                stackcast::QuantileForecast f(item, origin, h_sz, store.quantiles.size());
                for (std::size_t h = 0; h < h_sz; ++h)
                    for (std::size_t q = 0; q < store.quantiles.size(); ++q)
                        f.at(h, q) = value(k, m, i, h, q);
                store.forecasts[{k, static_cast<int>(m), item}] = std::move(f);
            }
        }
    }
    return store;
}

/// Random store with noisy-model structure: every model's forecast is the
/// target plus model-specific noise.
inline stackcast::OofStore random_store(std::mt19937_64& rng, std::size_t n_items, int folds,
                                        int horizon, std::size_t n_models,
                                        std::vector<double> levels = {0.1, 0.5, 0.9}) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> noise(n_models);
    for (auto& v : noise) v = 0.2 + 0.8 * std::abs(u(rng));
    const std::size_t h_sz = static_cast<std::size_t>(horizon);
    const std::size_t q_sz = levels.size();
    std::vector<double> targets(n_items * static_cast<std::size_t>(folds) * h_sz);
    for (auto& v : targets) v = 3.0 * u(rng);
    const std::size_t n_cells =
        n_items * static_cast<std::size_t>(folds) * h_sz * q_sz * n_models;
    std::vector<double> cells(n_cells);
    for (auto& v : cells) v = u(rng);
    auto t_at = [&, h_sz](int k, std::size_t i, std::size_t h) {
        return targets[(i * static_cast<std::size_t>(folds) + static_cast<std::size_t>(k - 1)) *
                           h_sz +
                       h];
    };
    return make_store(
        n_items, folds, horizon, std::move(levels), n_models,
        [&, h_sz, q_sz](int k, std::size_t m, std::size_t i, std::size_t h, std::size_t q) {
            const std::size_t idx =
                ((((i * static_cast<std::size_t>(folds) + static_cast<std::size_t>(k - 1)) * h_sz +
                   h) *
                      q_sz +
                  q) *
                     n_models +
                 m);
            return t_at(k, i, h) + noise[m] * cells[idx] +
                   0.3 * (static_cast<double>(q) - 1.0);
        },
        t_at);
}

inline stackcast::TimeSeriesPanel make_panel(const std::vector<std::vector<double>>& series,
                                             int seasonality = 1) {
    stackcast::TimeSeriesPanel panel;
    panel.seasonality_m = seasonality;
    for (std::size_t i = 0; i < series.size(); ++i)
        panel.series.push_back({"item" + std::to_string(i), 0, 1, series[i]});
    return panel;
}

}  // namespace testutil
