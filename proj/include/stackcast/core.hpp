#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace stackcast {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct NonFiniteValue : Error {
    NonFiniteValue(const std::string& item, std::size_t index)
        : Error("non-finite value in item '" + item + "' at index " + std::to_string(index)) {}
};

struct DuplicateItemId : Error {
    explicit DuplicateItemId(const std::string& id)
        : Error("duplicate item id '" + id + "'") {}
};

struct EmptySeries : Error {
    explicit EmptySeries(const std::string& id)
        : Error("empty series for item '" + id + "'") {}
};

struct EmptyAfterFilter : Error {
    EmptyAfterFilter() : Error("no series survives the min-length filter") {}
};

struct ShapeMismatch : Error {
    using Error::Error;
};

/// One regularly sampled univariate series. Timestamps are implicit:
/// the t-th observation (0-based) lives at start_time + t * step.
struct TimeSeries {
    std::string item_id;
    std::int64_t start_time = 0;
    std::int64_t step = 1;
    std::vector<double> values;

    std::size_t length() const { return values.size(); }
};

struct TimeSeriesPanel {
    std::vector<TimeSeries> series;
    int seasonality_m = 1;
    std::string freq_label;
};

enum class EvalLoss { Sql, Mase };

struct ForecastTask {
    int horizon = 1;
    std::vector<double> quantile_levels;
    EvalLoss eval_loss = EvalLoss::Sql;

    ForecastTask() = default;
    ForecastTask(int horizon_h, std::vector<double> levels, EvalLoss loss)
        : horizon(horizon_h), quantile_levels(std::move(levels)), eval_loss(loss) {
        if (horizon < 1)
            throw Error("horizon must be >= 1");
        if (quantile_levels.empty())
            throw Error("quantile level set must be non-empty");
        for (std::size_t i = 0; i < quantile_levels.size(); ++i) {
            double q = quantile_levels[i];
            if (!(q > 0.0 && q < 1.0))
                throw Error("quantile level " + std::to_string(q) + " outside (0,1)");
            if (i > 0 && !(quantile_levels[i - 1] < q))
                throw Error("quantile levels must be strictly increasing");
        }
        if (eval_loss == EvalLoss::Mase && median_index() < 0)
            throw Error("MASE task requires the 0.5 quantile level");
    }

    std::size_t num_quantiles() const { return quantile_levels.size(); }

    /// Index of the 0.5 level, or -1 when absent.
    int median_index() const {
        for (std::size_t i = 0; i < quantile_levels.size(); ++i)
            if (quantile_levels[i] == 0.5) return static_cast<int>(i);
        return -1;
    }
};

/// H x Q grid of quantile predictions for one item, forecast from origin_t
/// (index of the last observed point, 1-based count of observed values).
struct QuantileForecast {
    std::string item_id;
    std::int64_t origin_t = 0;
    std::size_t horizon = 0;
    std::size_t num_quantiles = 0;
    std::vector<double> values;  // row-major, rows = horizon steps

    QuantileForecast() = default;
    QuantileForecast(std::string item, std::int64_t origin, std::size_t h, std::size_t q)
        : item_id(std::move(item)), origin_t(origin), horizon(h), num_quantiles(q),
          values(h * q, 0.0) {}

    double& at(std::size_t h, std::size_t q) { return values[h * num_quantiles + q]; }
    double at(std::size_t h, std::size_t q) const { return values[h * num_quantiles + q]; }
};

/// Forecasts of M base models over a common item set; model order is fixed.
struct ModelForecastSet {
    std::vector<std::string> model_ids;
    std::vector<std::map<std::string, QuantileForecast>> by_model;  // parallel to model_ids

    std::size_t num_models() const { return model_ids.size(); }

    void validate() const {
        if (by_model.size() != model_ids.size())
            throw ShapeMismatch("model id / forecast table count mismatch");
        if (by_model.empty()) return;
        const auto& first = by_model.front();
        for (std::size_t m = 1; m < by_model.size(); ++m) {
            if (by_model[m].size() != first.size())
                throw ShapeMismatch("model '" + model_ids[m] + "' covers a different item set");
            for (const auto& [item, f] : by_model[m]) {
                auto it = first.find(item);
                if (it == first.end())
                    throw ShapeMismatch("model '" + model_ids[m] + "' has extra item '" + item + "'");
                const auto& f0 = it->second;
                if (f.origin_t != f0.origin_t || f.horizon != f0.horizon ||
                    f.num_quantiles != f0.num_quantiles)
                    throw ShapeMismatch("model '" + model_ids[m] + "' item '" + item +
                                        "' has mismatched (origin, H, Q)");
            }
        }
    }
};

inline const TimeSeriesPanel& validate_panel(const TimeSeriesPanel& panel) {
    if (panel.seasonality_m < 1)
        throw Error("seasonality must be >= 1");
    std::map<std::string, int> seen;
    for (const auto& s : panel.series) {
        if (++seen[s.item_id] > 1)
            throw DuplicateItemId(s.item_id);
        if (s.values.empty())
            throw EmptySeries(s.item_id);
        for (std::size_t i = 0; i < s.values.size(); ++i)
            if (!std::isfinite(s.values[i]))
                throw NonFiniteValue(s.item_id, i);
    }
    return panel;
}

/// Keeps only series with at least 8*H observations, preserving order.
inline TimeSeriesPanel filter_min_length(const TimeSeriesPanel& panel, int horizon) {
    if (horizon < 1)
        throw Error("horizon must be >= 1");
    TimeSeriesPanel out;
    out.seasonality_m = panel.seasonality_m;
    out.freq_label = panel.freq_label;
    const std::size_t min_len = static_cast<std::size_t>(8) * static_cast<std::size_t>(horizon);
    for (const auto& s : panel.series)
        if (s.length() >= min_len)
            out.series.push_back(s);
    if (out.series.empty())
        throw EmptyAfterFilter();
    return out;
}

/// Monotone rearrangement: sorts each horizon row along the quantile axis.
inline QuantileForecast enforce_quantile_monotonicity(QuantileForecast f) {
    for (std::size_t h = 0; h < f.horizon; ++h) {
        auto begin = f.values.begin() + static_cast<std::ptrdiff_t>(h * f.num_quantiles);
        std::sort(begin, begin + static_cast<std::ptrdiff_t>(f.num_quantiles));
    }
    return f;
}

}  // namespace stackcast
