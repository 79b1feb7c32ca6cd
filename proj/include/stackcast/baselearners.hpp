#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "stackcast/core.hpp"
#include "stackcast/losses.hpp"

namespace stackcast {

struct InsufficientHistory : Error {
    InsufficientHistory(const std::string& model, std::size_t have, std::size_t need)
        : Error("model '" + model + "' needs " + std::to_string(need) +
                " observations, got " + std::to_string(have)) {}
};

struct ExternalFileMissing : Error {
    explicit ExternalFileMissing(const std::string& path)
        : Error("external forecast file missing: " + path) {}
};

struct SchemaMismatch : Error {
    using Error::Error;
};

enum class LearnerKind { SeasonalNaive, Ses, Theta, LinearAr, External };

struct BaseLearnerSpec {
    LearnerKind kind = LearnerKind::SeasonalNaive;
    std::string name;
    std::vector<double> alpha_grid;  // SES / Theta inner smoother
    int ar_lags = 0;                 // 0 = auto: min(2m, T/4)
    double ridge_lambda = 1e-3;
    std::string external_path;

    static std::vector<double> default_alpha_grid() {
        std::vector<double> grid;
        for (int i = 1; i <= 19; ++i) grid.push_back(0.05 * i);
        return grid;
    }
    static BaseLearnerSpec seasonal_naive() { return {LearnerKind::SeasonalNaive, "seasonal_naive", {}, 0, 1e-3, {}}; }
    static BaseLearnerSpec ses() { return {LearnerKind::Ses, "ses", default_alpha_grid(), 0, 1e-3, {}}; }
    static BaseLearnerSpec theta() { return {LearnerKind::Theta, "theta", default_alpha_grid(), 0, 1e-3, {}}; }
    static BaseLearnerSpec linear_ar(int lags = 0, double lambda = 1e-3) {
        return {LearnerKind::LinearAr, "linear_ar", {}, lags, lambda, {}};
    }
    static BaseLearnerSpec external(std::string path) {
        return {LearnerKind::External, "external", {}, 0, 1e-3, std::move(path)};
    }
};

struct ResidualQuantilePolicy {
    std::size_t min_history = 3;
};

/// Externally produced forecasts keyed by (item_id, origin_t).
struct ExternalTable {
    std::map<std::pair<std::string, std::int64_t>, QuantileForecast> by_item_origin;
};

struct ForecastContext {
    std::string item_id;
    std::int64_t origin_t = 0;
    const ExternalTable* external = nullptr;
};

namespace detail {

/// Linear-interpolation empirical quantile of a sorted sample.
inline double sorted_quantile(const std::vector<double>& sorted, double q) {
    const std::size_t n = sorted.size();
    if (n == 1) return sorted[0];
    const double pos = q * static_cast<double>(n - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    if (lo + 1 >= n) return sorted[n - 1];
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac;
}

inline double autocorrelation(const std::vector<double>& y, std::size_t lag) {
    const std::size_t n = y.size();
    if (n <= lag) return 0.0;
    double mean = 0.0;
    for (double v : y) mean += v;
    mean /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < n; ++t) den += (y[t] - mean) * (y[t] - mean);
    for (std::size_t t = lag; t < n; ++t) num += (y[t] - mean) * (y[t - lag] - mean);
    if (den == 0.0) return 0.0;
    return num / den;
}

struct PointFit {
    std::vector<double> point;      // length H
    std::vector<double> residuals;  // in-sample one-step errors
};

inline PointFit fit_seasonal_naive(const std::vector<double>& y, int m, int horizon) {
    const std::size_t period = static_cast<std::size_t>(m);
    if (y.size() < period)
        throw InsufficientHistory("seasonal_naive", y.size(), period);
    PointFit fit;
    for (int h = 0; h < horizon; ++h) {
        const std::size_t offset = static_cast<std::size_t>(h) % period;
        fit.point.push_back(y[y.size() - period + offset]);
    }
    for (std::size_t t = period; t < y.size(); ++t)
        fit.residuals.push_back(y[t] - y[t - period]);
    return fit;
}

struct SesFit {
    double level = 0.0;
    double alpha = 0.0;
    std::vector<double> residuals;
};

/// SES with alpha chosen from the grid by in-sample one-step MAE
/// (ties broken toward the smaller alpha).
inline SesFit fit_ses_core(const std::vector<double>& y, const std::vector<double>& grid) {
    SesFit best;
    double best_mae = std::numeric_limits<double>::infinity();
    for (double alpha : grid) {
        double level = y[0];
        double abs_sum = 0.0;
        std::vector<double> residuals;
        residuals.reserve(y.size());
        for (std::size_t t = 1; t < y.size(); ++t) {
            const double err = y[t] - level;
            residuals.push_back(err);
            abs_sum += std::abs(err);
            level = alpha * y[t] + (1.0 - alpha) * level;
        }
        const double mae = abs_sum / static_cast<double>(y.size() - 1);
        if (mae < best_mae) {
            best_mae = mae;
            best = {level, alpha, std::move(residuals)};
        }
    }
    return best;
}

inline PointFit fit_ses(const std::vector<double>& y, const std::vector<double>& grid, int horizon) {
    if (y.size() < 3)
        throw InsufficientHistory("ses", y.size(), 3);
    SesFit ses = fit_ses_core(y, grid.empty() ? BaseLearnerSpec::default_alpha_grid() : grid);
    PointFit fit;
    fit.point.assign(static_cast<std::size_t>(horizon), ses.level);
    fit.residuals = std::move(ses.residuals);
    return fit;
}

struct TrendFit {
    double intercept = 0.0;
    double slope = 0.0;
    double at(double t) const { return intercept + slope * t; }
};

inline TrendFit ols_trend(const std::vector<double>& y) {
    const double n = static_cast<double>(y.size());
    double sum_t = 0.0, sum_y = 0.0, sum_tt = 0.0, sum_ty = 0.0;
    for (std::size_t t = 0; t < y.size(); ++t) {
        const double td = static_cast<double>(t);
        sum_t += td;
        sum_y += y[t];
        sum_tt += td * td;
        sum_ty += td * y[t];
    }
    const double den = n * sum_tt - sum_t * sum_t;
    TrendFit trend;
    if (den != 0.0) {
        trend.slope = (n * sum_ty - sum_t * sum_y) / den;
        trend.intercept = (sum_y - trend.slope * sum_t) / n;
    } else {
        trend.intercept = sum_y / n;
    }
    return trend;
}

/// Trend extrapolation plus a smoothed residual level, with additive
/// seasonal adjustment when the lag-m autocorrelation exceeds 0.5.
/// Exact on noiseless linear input.
inline PointFit fit_theta(const std::vector<double>& y, const std::vector<double>& grid, int m,
                          int horizon) {
    if (y.size() < 3)
        throw InsufficientHistory("theta", y.size(), 3);
    const std::size_t t_len = y.size();
    const std::size_t period = static_cast<std::size_t>(m);

    std::vector<double> seasonal(period, 0.0);
    bool seasonal_on = false;
    std::vector<double> working = y;
    if (m > 1 && t_len >= 2 * period && autocorrelation(y, period) > 0.5) {
        seasonal_on = true;
        TrendFit pre = ols_trend(y);
        std::vector<double> count(period, 0.0);
        for (std::size_t t = 0; t < t_len; ++t) {
            seasonal[t % period] += y[t] - pre.at(static_cast<double>(t));
            count[t % period] += 1.0;
        }
        double mean_idx = 0.0;
        for (std::size_t p = 0; p < period; ++p) {
            seasonal[p] /= count[p];
            mean_idx += seasonal[p];
        }
        mean_idx /= static_cast<double>(period);
        for (std::size_t p = 0; p < period; ++p) seasonal[p] -= mean_idx;
        for (std::size_t t = 0; t < t_len; ++t) working[t] -= seasonal[t % period];
    }

    TrendFit trend = ols_trend(working);
    std::vector<double> detrended(t_len);
    for (std::size_t t = 0; t < t_len; ++t)
        detrended[t] = working[t] - trend.at(static_cast<double>(t));
    SesFit ses = fit_ses_core(detrended, grid.empty() ? BaseLearnerSpec::default_alpha_grid() : grid);

    PointFit fit;
    for (int h = 1; h <= horizon; ++h) {
        const std::size_t t_future = t_len + static_cast<std::size_t>(h) - 1;
        double value = trend.at(static_cast<double>(t_future)) + ses.level;
        if (seasonal_on) value += seasonal[t_future % period];
        fit.point.push_back(value);
    }
    // one-step fitted values: trend + lagged smoothed residual level (+ season)
    double level = detrended[0];
    for (std::size_t t = 1; t < t_len; ++t) {
        double fitted = trend.at(static_cast<double>(t)) + level;
        if (seasonal_on) fitted += seasonal[t % period];
        fit.residuals.push_back(y[t] - fitted);
        level = ses.alpha * detrended[t] + (1.0 - ses.alpha) * level;
    }
    return fit;
}

/// Ridge autoregression on p lags with intercept, applied recursively.
inline PointFit fit_linear_ar(const std::vector<double>& y, int lags, double lambda, int m,
                              int horizon) {
    const std::size_t t_len = y.size();
    int p = lags;
    if (p <= 0)
        p = std::max(1, std::min(2 * m, static_cast<int>(t_len / 4)));
    if (t_len < static_cast<std::size_t>(p) + 2)
        throw InsufficientHistory("linear_ar", t_len, static_cast<std::size_t>(p) + 2);

    const std::size_t d = static_cast<std::size_t>(p) + 1;  // intercept + lags
    std::vector<double> ata(d * d, 0.0), aty(d, 0.0);
    for (std::size_t t = static_cast<std::size_t>(p); t < t_len; ++t) {
        std::vector<double> row(d, 1.0);
        for (int l = 1; l <= p; ++l) row[static_cast<std::size_t>(l)] = y[t - static_cast<std::size_t>(l)];
        for (std::size_t a = 0; a < d; ++a) {
            aty[a] += row[a] * y[t];
            for (std::size_t b = 0; b < d; ++b) ata[a * d + b] += row[a] * row[b];
        }
    }
    for (std::size_t a = 1; a < d; ++a) ata[a * d + a] += lambda;  // intercept unpenalized

    // Gaussian elimination with partial pivoting
    std::vector<double> coef = aty;
    std::vector<double> mat = ata;
    for (std::size_t col = 0; col < d; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < d; ++r)
            if (std::abs(mat[r * d + col]) > std::abs(mat[pivot * d + col])) pivot = r;
        if (pivot != col) {
            for (std::size_t c = 0; c < d; ++c) std::swap(mat[col * d + c], mat[pivot * d + c]);
            std::swap(coef[col], coef[pivot]);
        }
        const double diag = mat[col * d + col];
        if (diag == 0.0) continue;
        for (std::size_t r = 0; r < d; ++r) {
            if (r == col) continue;
            const double factor = mat[r * d + col] / diag;
            for (std::size_t c = col; c < d; ++c) mat[r * d + c] -= factor * mat[col * d + c];
            coef[r] -= factor * coef[col];
        }
    }
    for (std::size_t a = 0; a < d; ++a) {
        const double diag = mat[a * d + a];
        coef[a] = diag != 0.0 ? coef[a] / diag : 0.0;
    }

    auto predict_one = [&](const std::vector<double>& hist) {
        double v = coef[0];
        for (int l = 1; l <= p; ++l)
            v += coef[static_cast<std::size_t>(l)] * hist[hist.size() - static_cast<std::size_t>(l)];
        return v;
    };

    PointFit fit;
    std::vector<double> extended = y;
    for (int h = 0; h < horizon; ++h) {
        const double v = predict_one(extended);
        fit.point.push_back(v);
        extended.push_back(v);
    }
    for (std::size_t t = static_cast<std::size_t>(p); t < t_len; ++t) {
        std::vector<double> hist(y.begin(), y.begin() + static_cast<std::ptrdiff_t>(t));
        fit.residuals.push_back(y[t] - predict_one(hist));
    }
    return fit;
}

inline PointFit fit_point(const BaseLearnerSpec& spec, const std::vector<double>& y, int m,
                          int horizon) {
    switch (spec.kind) {
        case LearnerKind::SeasonalNaive: return fit_seasonal_naive(y, m, horizon);
        case LearnerKind::Ses: return fit_ses(y, spec.alpha_grid, horizon);
        case LearnerKind::Theta: return fit_theta(y, spec.alpha_grid, m, horizon);
        case LearnerKind::LinearAr:
            return fit_linear_ar(y, spec.ar_lags, spec.ridge_lambda, m, horizon);
        case LearnerKind::External:
            throw Error("external learner has no local point path");
    }
    throw Error("unknown learner kind");
}

}  // namespace detail

/// Deterministic point forecast of a local base learner.
inline std::vector<double> point_path(const BaseLearnerSpec& spec, const std::vector<double>& history,
                                      int m, int horizon) {
    return detail::fit_point(spec, history, m, horizon).point;
}

/// Point path plus centered empirical residual quantiles. The offset at level
/// q is quantile_q(residuals) - median(residuals); with fewer than min_history
/// residuals the quantile grid collapses onto the point path.
inline QuantileForecast fit_predict(const BaseLearnerSpec& spec, const std::vector<double>& history,
                                    int m, const ForecastTask& task,
                                    const ResidualQuantilePolicy& policy = {},
                                    const ForecastContext& ctx = {}) {
    if (spec.kind == LearnerKind::External) {
        if (ctx.external == nullptr)
            throw ExternalFileMissing(spec.external_path);
        auto it = ctx.external->by_item_origin.find({ctx.item_id, ctx.origin_t});
        if (it == ctx.external->by_item_origin.end())
            throw SchemaMismatch("external file has no forecast for item '" + ctx.item_id +
                                 "' at origin " + std::to_string(ctx.origin_t));
        const QuantileForecast& f = it->second;
        if (f.horizon != static_cast<std::size_t>(task.horizon) ||
            f.num_quantiles != task.num_quantiles())
            throw ShapeMismatch("external forecast shape mismatch for item '" + ctx.item_id + "'");
        return enforce_quantile_monotonicity(f);
    }

    detail::PointFit fit = detail::fit_point(spec, history, m, task.horizon);
    std::vector<double> offsets(task.num_quantiles(), 0.0);
    if (fit.residuals.size() >= policy.min_history) {
        std::vector<double> sorted = fit.residuals;
        std::sort(sorted.begin(), sorted.end());
        const double median = detail::sorted_quantile(sorted, 0.5);
        for (std::size_t q = 0; q < task.num_quantiles(); ++q)
            offsets[q] = detail::sorted_quantile(sorted, task.quantile_levels[q]) - median;
    }
    QuantileForecast out(ctx.item_id, ctx.origin_t != 0 ? ctx.origin_t
                                                        : static_cast<std::int64_t>(history.size()),
                         static_cast<std::size_t>(task.horizon), task.num_quantiles());
    for (std::size_t h = 0; h < out.horizon; ++h)
        for (std::size_t q = 0; q < out.num_quantiles; ++q)
            out.at(h, q) = fit.point[h] + offsets[q];
    return enforce_quantile_monotonicity(std::move(out));
}

}  // namespace stackcast
