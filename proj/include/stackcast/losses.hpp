#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "stackcast/core.hpp"

namespace stackcast {

struct SeriesTooShort : Error {
    SeriesTooShort(std::size_t length, int m)
        : Error("series of length " + std::to_string(length) +
                " too short for seasonality " + std::to_string(m)) {}
};

struct ZeroScale : Error {
    explicit ZeroScale(const std::string& item)
        : Error("zero seasonal scale for item '" + item + "'") {}
};

struct AllItemsExcluded : Error {
    AllItemsExcluded() : Error("all items excluded from dataset loss") {}
};

struct ItemScore {
    std::string item_id;
    double value = 0.0;
    bool excluded = false;
};

struct SeasonalScale {
    std::string item_id;
    double a = 0.0;
};

/// Quantile loss at level q, with the factor 2 so that the q=0.5 case
/// reduces to the absolute error.
inline double pinball(double y_hat, double y, double q) {
    if (y >= y_hat)
        return 2.0 * q * (y - y_hat);
    return 2.0 * (1.0 - q) * (y_hat - y);
}

/// Historic absolute seasonal error: mean |y_t - y_{t-m}| over t = m+1..T.
inline SeasonalScale seasonal_error(const std::vector<double>& values, int m,
                                    const std::string& item_id = {}) {
    const std::size_t t_len = values.size();
    if (t_len <= static_cast<std::size_t>(m))
        throw SeriesTooShort(t_len, m);
    double sum = 0.0;
    for (std::size_t t = static_cast<std::size_t>(m); t < t_len; ++t)
        sum += std::abs(values[t] - values[t - static_cast<std::size_t>(m)]);
    return {item_id, sum / static_cast<double>(t_len - static_cast<std::size_t>(m))};
}

/// Scaled quantile loss: pinball averaged over horizon and levels, divided by a_i.
inline ItemScore sql_item(const QuantileForecast& forecast, const std::vector<double>& actual,
                          const SeasonalScale& scale, const std::vector<double>& levels) {
    if (actual.size() != forecast.horizon)
        throw ShapeMismatch("actual length does not match forecast horizon");
    if (levels.size() != forecast.num_quantiles)
        throw ShapeMismatch("level count does not match forecast quantile axis");
    if (scale.a == 0.0)
        throw ZeroScale(scale.item_id);
    double sum = 0.0;
    for (std::size_t h = 0; h < forecast.horizon; ++h)
        for (std::size_t q = 0; q < levels.size(); ++q)
            sum += pinball(forecast.at(h, q), actual[h], levels[q]);
    const double denom =
        static_cast<double>(forecast.horizon) * static_cast<double>(levels.size()) * scale.a;
    return {forecast.item_id, sum / denom, false};
}

/// Mean absolute scaled error of a point path.
inline ItemScore mase_item(const std::vector<double>& point, const std::vector<double>& actual,
                           const SeasonalScale& scale) {
    if (point.size() != actual.size())
        throw ShapeMismatch("point forecast and actual lengths differ");
    if (scale.a == 0.0)
        throw ZeroScale(scale.item_id);
    double sum = 0.0;
    for (std::size_t h = 0; h < point.size(); ++h)
        sum += std::abs(point[h] - actual[h]);
    return {scale.item_id, sum / (static_cast<double>(point.size()) * scale.a), false};
}

struct DatasetLoss {
    double value = 0.0;
    std::size_t excluded = 0;
};

/// Arithmetic mean over non-excluded item scores.
inline DatasetLoss dataset_loss(const std::vector<ItemScore>& scores) {
    double sum = 0.0;
    std::size_t n = 0, excluded = 0;
    for (const auto& s : scores) {
        if (s.excluded) {
            ++excluded;
            continue;
        }
        sum += s.value;
        ++n;
    }
    if (n == 0)
        throw AllItemsExcluded();
    return {sum / static_cast<double>(n), excluded};
}

}  // namespace stackcast
