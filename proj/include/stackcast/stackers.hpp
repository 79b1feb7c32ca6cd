#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "stackcast/core.hpp"
#include "stackcast/cvharness.hpp"
#include "stackcast/losses.hpp"
#include "stackcast/optim.hpp"

namespace stackcast {

enum class Tying { M, MI, MT, MQ, MIT, MIQ, MTQ, MITQ, MQQ, MIQQ, MTQQ };
enum class WeightParam { Softmax, Positive };
enum class PerfKind { Inv, Sqr, Exp };

struct TyingDims {
    bool per_item = false;
    bool per_step = false;
    bool per_quantile = false;  // realized output-quantile axis
    bool across = false;        // realized input-quantile axis
};

inline TyingDims tying_dims(Tying t) {
    switch (t) {
        case Tying::M: return {false, false, false, false};
        case Tying::MI: return {true, false, false, false};
        case Tying::MT: return {false, true, false, false};
        case Tying::MQ: return {false, false, true, false};
        case Tying::MIT: return {true, true, false, false};
        case Tying::MIQ: return {true, false, true, false};
        case Tying::MTQ: return {false, true, true, false};
        case Tying::MITQ: return {true, true, true, false};
        case Tying::MQQ: return {false, false, true, true};
        case Tying::MIQQ: return {true, false, true, true};
        case Tying::MTQQ: return {false, true, true, true};
    }
    throw Error("unknown tying scheme");
}

inline std::string tying_name(Tying t) {
    switch (t) {
        case Tying::M: return "m";
        case Tying::MI: return "mi";
        case Tying::MT: return "mt";
        case Tying::MQ: return "mq";
        case Tying::MIT: return "mit";
        case Tying::MIQ: return "miq";
        case Tying::MTQ: return "mtq";
        case Tying::MITQ: return "mitq";
        case Tying::MQQ: return "mqq";
        case Tying::MIQQ: return "miqq";
        case Tying::MTQQ: return "mtqq";
    }
    return "?";
}

struct TabularConfig {
    std::size_t hidden = 16;
    double init_scale = 0.1;
};

struct StackerSpec {
    enum class Family { Mean, Median, SelectBest, PerfWeighted, Greedy, Linear, Tabular };
    Family family = Family::Median;
    PerfKind perf_kind = PerfKind::Inv;
    int greedy_iters = 100;
    Tying tying = Tying::M;
    WeightParam param = WeightParam::Softmax;
    bool scaled = false;
    TabularConfig tabular;
    std::string label_override;

    static StackerSpec mean() { StackerSpec s; s.family = Family::Mean; return s; }
    static StackerSpec median() { StackerSpec s; s.family = Family::Median; return s; }
    static StackerSpec select_best() { StackerSpec s; s.family = Family::SelectBest; return s; }
    static StackerSpec perf_weighted(PerfKind kind) {
        StackerSpec s;
        s.family = Family::PerfWeighted;
        s.perf_kind = kind;
        return s;
    }
    static StackerSpec greedy(int iters) {
        StackerSpec s;
        s.family = Family::Greedy;
        s.greedy_iters = iters;
        return s;
    }
    static StackerSpec linear(Tying tying, WeightParam param) {
        StackerSpec s;
        s.family = Family::Linear;
        s.tying = tying;
        s.param = param;
        return s;
    }
    static StackerSpec tabular_net(bool scaled, std::size_t hidden = 16,
                                   std::string label = {}) {
        StackerSpec s;
        s.family = Family::Tabular;
        s.scaled = scaled;
        s.tabular.hidden = hidden;
        s.label_override = std::move(label);
        return s;
    }

    std::string label() const {
        if (!label_override.empty()) return label_override;
        switch (family) {
            case Family::Mean: return "mean";
            case Family::Median: return "median";
            case Family::SelectBest: return "select_best";
            case Family::PerfWeighted:
                return perf_kind == PerfKind::Inv   ? "perf_inv"
                       : perf_kind == PerfKind::Sqr ? "perf_sqr"
                                                    : "perf_exp";
            case Family::Greedy: return "greedy" + std::to_string(greedy_iters);
            case Family::Linear:
                return "linear_" + tying_name(tying) + "_" +
                       (param == WeightParam::Softmax ? "softmax" : "positive");
            case Family::Tabular: return scaled ? "tabular_scaled" : "tabular";
        }
        return "?";
    }
};

/// Combiner weights over the realized (untied) subset of
/// {item, horizon step, output quantile, input quantile, model}.
struct WeightTensor {
    Tying tying = Tying::M;
    std::size_t n_items = 1, n_steps = 1, n_qout = 1, n_qin = 1, n_models = 1;
    std::vector<std::string> item_index;  // non-empty only for item-untied schemes
    std::vector<double> values;

    std::size_t size() const { return n_items * n_steps * n_qout * n_qin * n_models; }
    std::size_t idx(std::size_t i, std::size_t h, std::size_t q, std::size_t qp,
                    std::size_t m) const {
        return (((i * n_steps + h) * n_qout + q) * n_qin + qp) * n_models + m;
    }
    double at(std::size_t i, std::size_t h, std::size_t q, std::size_t qp, std::size_t m) const {
        return values[idx(i, h, q, qp, m)];
    }
};

struct TabularModel {
    std::size_t input_dim = 0, hidden = 0, outputs = 0;
    std::vector<double> params;  // W1 | b1 | W2 | b2
    bool scaled = false;
    double alpha = 1.0, beta = 0.0;

    std::size_t param_count() const {
        return hidden * input_dim + hidden + outputs * hidden + outputs;
    }
    void forward(const std::vector<double>& x, std::vector<double>& out) const {
        const double* w1 = params.data();
        const double* b1 = w1 + hidden * input_dim;
        const double* w2 = b1 + hidden;
        const double* b2 = w2 + outputs * hidden;
        std::vector<double> z(hidden);
        for (std::size_t j = 0; j < hidden; ++j) {
            double s = b1[j];
            for (std::size_t i = 0; i < input_dim; ++i) s += w1[j * input_dim + i] * x[i];
            z[j] = std::tanh(s);
        }
        out.assign(outputs, 0.0);
        for (std::size_t o = 0; o < outputs; ++o) {
            double s = b2[o];
            for (std::size_t j = 0; j < hidden; ++j) s += w2[o * hidden + j] * z[j];
            out[o] = s;
        }
    }
};

inline double scale_value(double v, double alpha, double beta) { return alpha * v + beta; }
inline double unscale_value(double u, double alpha, double beta) { return (u - beta) / alpha; }

struct TrainedStacker {
    StackerSpec spec;
    int best_model = -1;      // SelectBest
    WeightTensor weights;     // PerfWeighted / Greedy / Linear
    TabularModel tabular;     // Tabular
    std::size_t trained_models = 0, trained_h = 0, trained_q = 0;
    double fit_time_s = 0.0;
    double train_loss = 0.0;  // OOF loss at the returned parameters
};

// ---------------------------------------------------------------------------
// OOF view: flattened stacker training data
// ---------------------------------------------------------------------------

struct OofWindow {
    std::size_t item_idx = 0;
    int fold = 0;
    double scale = 0.0;          // a_i
    std::vector<double> target;  // H
    std::vector<double> inputs;  // M*H*Q, model-major
};

struct OofView {
    std::size_t num_models = 0, horizon = 0, num_q = 0;
    std::vector<double> levels;
    EvalLoss loss = EvalLoss::Sql;
    int median_q = -1;
    std::vector<std::string> items;  // dense item index, store order
    std::vector<OofWindow> windows;
    std::size_t excluded = 0;  // windows dropped for a_i = 0

    double input(const OofWindow& w, std::size_t m, std::size_t h, std::size_t q) const {
        return w.inputs[(m * horizon + h) * num_q + q];
    }
};

/// Flattens the store's folds [first_fold, last_fold] into stacker training
/// windows; last_fold = 0 means K.
inline OofView make_oof_view(const OofStore& store, int first_fold = 1, int last_fold = 0) {
    if (last_fold == 0) last_fold = store.folds_k;
    OofView view;
    view.num_models = store.model_ids.size();
    view.horizon = static_cast<std::size_t>(store.horizon);
    view.num_q = store.quantiles.size();
    view.levels = store.quantiles;
    view.loss = store.eval_loss;
    view.items = store.items;
    if (view.loss == EvalLoss::Mase) {
        for (std::size_t q = 0; q < view.levels.size(); ++q)
            if (view.levels[q] == 0.5) view.median_q = static_cast<int>(q);
        if (view.median_q < 0) throw Error("MASE view requires the 0.5 level");
    }
    std::map<std::string, std::size_t> item_idx;
    for (std::size_t i = 0; i < view.items.size(); ++i) item_idx[view.items[i]] = i;

    for (int k = first_fold; k <= last_fold; ++k) {
        for (const auto& item : store.fold_items(k)) {
            const double a = store.seasonal_scale.at(item);
            if (a == 0.0) {
                ++view.excluded;
                continue;
            }
            OofWindow w;
            w.item_idx = item_idx.at(item);
            w.fold = k;
            w.scale = a;
            w.target = store.targets.at({k, item});
            w.inputs.resize(view.num_models * view.horizon * view.num_q);
            for (std::size_t m = 0; m < view.num_models; ++m) {
                const auto& f = store.forecasts.at({k, static_cast<int>(m), item});
                for (std::size_t h = 0; h < view.horizon; ++h)
                    for (std::size_t q = 0; q < view.num_q; ++q)
                        w.inputs[(m * view.horizon + h) * view.num_q + q] = f.at(h, q);
            }
            view.windows.push_back(std::move(w));
        }
    }
    if (view.windows.empty()) throw AllItemsExcluded();
    return view;
}

namespace detail {

/// Loss of a combined H x Q prediction on one window (SQL, or MASE on the
/// median column).
inline double window_loss(const OofView& view, const OofWindow& w, const std::vector<double>& yc) {
    double sum = 0.0;
    if (view.loss == EvalLoss::Mase) {
        const std::size_t qm = static_cast<std::size_t>(view.median_q);
        for (std::size_t h = 0; h < view.horizon; ++h)
            sum += std::abs(yc[h * view.num_q + qm] - w.target[h]);
        return sum / (static_cast<double>(view.horizon) * w.scale);
    }
    for (std::size_t h = 0; h < view.horizon; ++h)
        for (std::size_t q = 0; q < view.num_q; ++q)
            sum += pinball(yc[h * view.num_q + q], w.target[h], view.levels[q]);
    return sum / (static_cast<double>(view.horizon) * static_cast<double>(view.num_q) * w.scale);
}

/// d(window_loss)/d(yc), subgradient 0 at kinks.
inline void window_loss_grad(const OofView& view, const OofWindow& w,
                             const std::vector<double>& yc, std::vector<double>& coef) {
    coef.assign(view.horizon * view.num_q, 0.0);
    if (view.loss == EvalLoss::Mase) {
        const std::size_t qm = static_cast<std::size_t>(view.median_q);
        const double norm = 1.0 / (static_cast<double>(view.horizon) * w.scale);
        for (std::size_t h = 0; h < view.horizon; ++h) {
            const double d = yc[h * view.num_q + qm] - w.target[h];
            coef[h * view.num_q + qm] = d > 0.0 ? norm : (d < 0.0 ? -norm : 0.0);
        }
        return;
    }
    const double norm = 1.0 / (static_cast<double>(view.horizon) *
                               static_cast<double>(view.num_q) * w.scale);
    for (std::size_t h = 0; h < view.horizon; ++h)
        for (std::size_t q = 0; q < view.num_q; ++q) {
            const double y = w.target[h];
            const double f = yc[h * view.num_q + q];
            if (y > f)
                coef[h * view.num_q + q] = -2.0 * view.levels[q] * norm;
            else if (y < f)
                coef[h * view.num_q + q] = 2.0 * (1.0 - view.levels[q]) * norm;
        }
}

inline void combine_window(const WeightTensor& wt, const OofView& view, const OofWindow& w,
                           std::vector<double>& yc) {
    const TyingDims dims = tying_dims(wt.tying);
    const std::size_t gi = dims.per_item ? w.item_idx : 0;
    yc.assign(view.horizon * view.num_q, 0.0);
    for (std::size_t h = 0; h < view.horizon; ++h) {
        const std::size_t gh = dims.per_step ? h : 0;
        for (std::size_t q = 0; q < view.num_q; ++q) {
            const std::size_t gq = (dims.per_quantile || dims.across) ? q : 0;
            double s = 0.0;
            if (dims.across) {
                for (std::size_t m = 0; m < view.num_models; ++m)
                    for (std::size_t qp = 0; qp < view.num_q; ++qp)
                        s += wt.at(gi, gh, gq, qp, m) * view.input(w, m, h, qp);
            } else {
                for (std::size_t m = 0; m < view.num_models; ++m)
                    s += wt.at(gi, gh, gq, 0, m) * view.input(w, m, h, q);
            }
            yc[h * view.num_q + q] = s;
        }
    }
}

inline double mean_window_loss(const OofView& view,
                               const std::function<void(const OofWindow&, std::vector<double>&)>&
                                   predictor) {
    double sum = 0.0;
    std::vector<double> yc;
    for (const auto& w : view.windows) {
        predictor(w, yc);
        sum += window_loss(view, w, yc);
    }
    return sum / static_cast<double>(view.windows.size());
}

/// Mean OOF loss of a single base model (passthrough combination).
inline double single_model_loss(const OofView& view, std::size_t m) {
    return mean_window_loss(view, [&](const OofWindow& w, std::vector<double>& yc) {
        yc.resize(view.horizon * view.num_q);
        for (std::size_t h = 0; h < view.horizon; ++h)
            for (std::size_t q = 0; q < view.num_q; ++q)
                yc[h * view.num_q + q] = view.input(w, m, h, q);
    });
}

inline WeightTensor model_weight_tensor(std::size_t n_models, std::vector<double> w) {
    WeightTensor t;
    t.tying = Tying::M;
    t.n_models = n_models;
    t.values = std::move(w);
    return t;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Simple fits
// ---------------------------------------------------------------------------

inline TrainedStacker fit_select_best(const OofStore& store) {
    OofView view = make_oof_view(store);
    TrainedStacker ts;
    ts.spec = StackerSpec::select_best();
    ts.trained_models = view.num_models;
    ts.trained_h = view.horizon;
    ts.trained_q = view.num_q;
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < view.num_models; ++m) {
        const double loss = detail::single_model_loss(view, m);
        if (loss < best) {
            best = loss;
            ts.best_model = static_cast<int>(m);
        }
    }
    ts.train_loss = best;
    return ts;
}

inline TrainedStacker fit_performance_weights(const OofStore& store, PerfKind kind) {
    OofView view = make_oof_view(store);
    const std::size_t n = view.num_models;
    std::vector<double> raw(n);
    double raw_sum = 0.0;
    std::size_t zeros = 0;
    for (std::size_t m = 0; m < n; ++m) {
        raw[m] = detail::single_model_loss(view, m);
        raw_sum += raw[m];
        if (raw[m] == 0.0) ++zeros;
    }
    std::vector<double> w(n, 0.0);
    if (zeros > 0) {
        // degenerate: split all weight uniformly among zero-loss models
        for (std::size_t m = 0; m < n; ++m)
            if (raw[m] == 0.0) w[m] = 1.0 / static_cast<double>(zeros);
    } else {
        double w_sum = 0.0;
        for (std::size_t m = 0; m < n; ++m) {
            const double l_norm = raw[m] / raw_sum;
            const double inv = std::min(1.0 / l_norm, 700.0);  // h_exp overflow cap
            switch (kind) {
                case PerfKind::Inv: w[m] = inv; break;
                case PerfKind::Sqr: w[m] = inv * inv; break;
                case PerfKind::Exp: w[m] = std::exp(inv); break;
            }
            w_sum += w[m];
        }
        for (auto& v : w) v /= w_sum;
    }
    TrainedStacker ts;
    ts.spec = StackerSpec::perf_weighted(kind);
    ts.trained_models = n;
    ts.trained_h = view.horizon;
    ts.trained_q = view.num_q;
    ts.weights = detail::model_weight_tensor(n, std::move(w));
    ts.train_loss = detail::mean_window_loss(view, [&](const OofWindow& win, std::vector<double>& yc) {
        detail::combine_window(ts.weights, view, win, yc);
    });
    return ts;
}

/// Greedy ensemble selection with replacement: S rounds of adding the model
/// that minimizes the resulting OOF loss, returning the best-scoring round.
inline TrainedStacker fit_greedy(const OofStore& store, int iterations) {
    if (iterations < 1) throw Error("greedy needs S >= 1");
    OofView view = make_oof_view(store);
    const std::size_t n_models = view.num_models;
    const std::size_t grid = view.horizon * view.num_q;

    std::vector<std::vector<double>> sum(view.windows.size(), std::vector<double>(grid, 0.0));
    std::vector<int> counts(n_models, 0);
    std::vector<double> best_weights(n_models, 0.0);
    double best_loss = std::numeric_limits<double>::infinity();

    std::vector<double> yc(grid);
    for (int j = 1; j <= iterations; ++j) {
        std::size_t pick = 0;
        double pick_loss = std::numeric_limits<double>::infinity();
        for (std::size_t m = 0; m < n_models; ++m) {
            double total = 0.0;
            for (std::size_t wi = 0; wi < view.windows.size(); ++wi) {
                const auto& w = view.windows[wi];
                for (std::size_t g = 0; g < grid; ++g)
                    yc[g] = (sum[wi][g] + w.inputs[m * grid + g]) / static_cast<double>(j);
                total += detail::window_loss(view, w, yc);
            }
            total /= static_cast<double>(view.windows.size());
            if (total < pick_loss) {
                pick_loss = total;
                pick = m;
            }
        }
        counts[pick] += 1;
        for (std::size_t wi = 0; wi < view.windows.size(); ++wi) {
            const auto& w = view.windows[wi];
            for (std::size_t g = 0; g < grid; ++g) sum[wi][g] += w.inputs[pick * grid + g];
        }
        if (pick_loss < best_loss) {
            best_loss = pick_loss;
            for (std::size_t m = 0; m < n_models; ++m)
                best_weights[m] = static_cast<double>(counts[m]) / static_cast<double>(j);
        }
    }

    TrainedStacker ts;
    ts.spec = StackerSpec::greedy(iterations);
    ts.trained_models = n_models;
    ts.trained_h = view.horizon;
    ts.trained_q = view.num_q;
    ts.weights = detail::model_weight_tensor(n_models, std::move(best_weights));
    ts.train_loss = best_loss;
    return ts;
}

// ---------------------------------------------------------------------------
// Linear stackers
// ---------------------------------------------------------------------------

namespace detail {

struct LinearLayout {
    WeightTensor shape;  // values empty; carries dims
    std::size_t block = 0;  // softmax block: n_qin * n_models
};

inline LinearLayout linear_layout(Tying tying, const OofView& view) {
    const TyingDims dims = tying_dims(tying);
    LinearLayout lay;
    lay.shape.tying = tying;
    lay.shape.n_items = dims.per_item ? view.items.size() : 1;
    lay.shape.n_steps = dims.per_step ? view.horizon : 1;
    lay.shape.n_qout = (dims.per_quantile || dims.across) ? view.num_q : 1;
    lay.shape.n_qin = dims.across ? view.num_q : 1;
    lay.shape.n_models = view.num_models;
    if (dims.per_item) lay.shape.item_index = view.items;
    lay.block = lay.shape.n_qin * lay.shape.n_models;
    return lay;
}

inline std::vector<double> realize_weights(const WeightTensor& shape, WeightParam param,
                                           const std::vector<double>& raw, std::size_t block) {
    std::vector<double> out(raw.size());
    if (param == WeightParam::Positive) {
        for (std::size_t i = 0; i < raw.size(); ++i) out[i] = raw[i] * raw[i];
        return out;
    }
    for (std::size_t base = 0; base < raw.size(); base += block) {
        double mx = raw[base];
        for (std::size_t i = 1; i < block; ++i) mx = std::max(mx, raw[base + i]);
        double sum = 0.0;
        for (std::size_t i = 0; i < block; ++i) {
            out[base + i] = std::exp(raw[base + i] - mx);
            sum += out[base + i];
        }
        for (std::size_t i = 0; i < block; ++i) out[base + i] /= sum;
    }
    return out;
}

}  // namespace detail

/// The linear-stacker training problem: mean OOF loss over the unconstrained
/// weights, with its analytic gradient. The view must outlive the objective.
struct LinearProblem {
    detail::LinearLayout layout;
    std::size_t n_params = 0;
    Objective objective;
    std::vector<double> init;
};

inline LinearProblem make_linear_problem(const OofView& view, Tying tying, WeightParam param) {
    LinearProblem prob;
    prob.layout = detail::linear_layout(tying, view);
    prob.n_params = prob.layout.shape.size();
    const detail::LinearLayout lay = prob.layout;
    const TyingDims dims = tying_dims(tying);
    const std::size_t n_params = prob.n_params;

    prob.objective = [&view, lay, dims, param, n_params](const std::vector<double>& raw,
                                                         std::vector<double>& grad) {
        WeightTensor wt = lay.shape;
        wt.values = detail::realize_weights(lay.shape, param, raw, lay.block);
        std::vector<double> grad_w(n_params, 0.0);
        double total = 0.0;
        std::vector<double> yc, coef;
        for (const auto& w : view.windows) {
            detail::combine_window(wt, view, w, yc);
            total += detail::window_loss(view, w, yc);
            detail::window_loss_grad(view, w, yc, coef);
            const std::size_t gi = dims.per_item ? w.item_idx : 0;
            for (std::size_t h = 0; h < view.horizon; ++h) {
                const std::size_t gh = dims.per_step ? h : 0;
                for (std::size_t q = 0; q < view.num_q; ++q) {
                    const double c = coef[h * view.num_q + q];
                    if (c == 0.0) continue;
                    const std::size_t gq = (dims.per_quantile || dims.across) ? q : 0;
                    if (dims.across) {
                        for (std::size_t m = 0; m < view.num_models; ++m)
                            for (std::size_t qp = 0; qp < view.num_q; ++qp)
                                grad_w[wt.idx(gi, gh, gq, qp, m)] +=
                                    c * view.input(w, m, h, qp);
                    } else {
                        for (std::size_t m = 0; m < view.num_models; ++m)
                            grad_w[wt.idx(gi, gh, gq, 0, m)] += c * view.input(w, m, h, q);
                    }
                }
            }
        }
        const double inv_n = 1.0 / static_cast<double>(view.windows.size());
        total *= inv_n;
        for (auto& g : grad_w) g *= inv_n;

        grad.assign(n_params, 0.0);
        if (param == WeightParam::Positive) {
            for (std::size_t i = 0; i < n_params; ++i) grad[i] = 2.0 * raw[i] * grad_w[i];
        } else {
            for (std::size_t base = 0; base < n_params; base += lay.block) {
                double dot = 0.0;
                for (std::size_t i = 0; i < lay.block; ++i)
                    dot += wt.values[base + i] * grad_w[base + i];
                for (std::size_t i = 0; i < lay.block; ++i)
                    grad[base + i] = wt.values[base + i] * (grad_w[base + i] - dot);
            }
        }
        return total;
    };

    prob.init.assign(n_params, param == WeightParam::Softmax
                                   ? 0.0
                                   : 1.0 / std::sqrt(static_cast<double>(lay.block)));
    return prob;
}

/// Trains a linear stacker by minimizing the mean OOF loss over the
/// unconstrained weights with Adam; returns best-iterate weights.
inline TrainedStacker fit_linear(const OofStore& store, Tying tying, WeightParam param,
                                 const OptimConfig& cfg) {
    OofView view = make_oof_view(store);
    LinearProblem prob = make_linear_problem(view, tying, param);
    OptimResult res = minimize(prob.objective, prob.init, cfg);

    TrainedStacker ts;
    ts.spec = StackerSpec::linear(tying, param);
    ts.trained_models = view.num_models;
    ts.trained_h = view.horizon;
    ts.trained_q = view.num_q;
    ts.weights = prob.layout.shape;
    ts.weights.values =
        detail::realize_weights(prob.layout.shape, param, res.best_params, prob.layout.block);
    ts.train_loss = res.best_loss;
    return ts;
}

// ---------------------------------------------------------------------------
// Tabular stacker
// ---------------------------------------------------------------------------

struct TabularRow {
    std::size_t item_idx = 0;
    int fold = 0;
    std::size_t h = 0;
    std::vector<double> features;  // M*Q, model-major
    double target = 0.0;
};

struct TabularRowSet {
    std::size_t num_models = 0, num_q = 0;
    std::vector<double> levels;
    std::vector<TabularRow> rows;  // (fold, item, h) order
};

inline TabularRowSet build_tabular_rows(const OofStore& store) {
    OofView view = make_oof_view(store);
    TabularRowSet set;
    set.num_models = view.num_models;
    set.num_q = view.num_q;
    set.levels = view.levels;
    // view.windows are already (fold, item) ordered; expand each horizon step
    for (const auto& w : view.windows)
        for (std::size_t h = 0; h < view.horizon; ++h) {
            TabularRow row;
            row.item_idx = w.item_idx;
            row.fold = w.fold;
            row.h = h;
            row.target = w.target[h];
            row.features.resize(view.num_models * view.num_q);
            for (std::size_t m = 0; m < view.num_models; ++m)
                for (std::size_t q = 0; q < view.num_q; ++q)
                    row.features[m * view.num_q + q] = view.input(w, m, h, q);
            set.rows.push_back(std::move(row));
        }
    return set;
}

/// Fits the built-in multi-quantile feedforward regressor on the tabular row
/// reformulation, optionally standardizing inputs and outputs.
inline TrainedStacker fit_tabular(const OofStore& store, bool scaled, const TabularConfig& tab,
                                  const OptimConfig& cfg) {
    TabularRowSet set = build_tabular_rows(store);
    const std::size_t d = set.num_models * set.num_q;
    const std::size_t nq = set.num_q;

    TabularModel model;
    model.input_dim = d;
    model.hidden = tab.hidden;
    model.outputs = nq;
    model.scaled = scaled;
    if (scaled) {
        double mean = 0.0, var = 0.0;
        std::size_t n = 0;
        for (const auto& r : set.rows)
            for (double v : r.features) {
                mean += v;
                ++n;
            }
        mean /= static_cast<double>(n);
        for (const auto& r : set.rows)
            for (double v : r.features) var += (v - mean) * (v - mean);
        const double sd = std::max(std::sqrt(var / static_cast<double>(n)), 1e-8);
        model.alpha = 1.0 / sd;
        model.beta = -mean / sd;
    }

    std::vector<std::vector<double>> feats(set.rows.size());
    std::vector<double> targets(set.rows.size());
    for (std::size_t r = 0; r < set.rows.size(); ++r) {
        feats[r].resize(d);
        for (std::size_t i = 0; i < d; ++i)
            feats[r][i] = scale_value(set.rows[r].features[i], model.alpha, model.beta);
        targets[r] = scale_value(set.rows[r].target, model.alpha, model.beta);
    }

    const std::size_t np = model.param_count();
    Objective objective = [&](const std::vector<double>& p, std::vector<double>& grad) {
        grad.assign(np, 0.0);
        const double* w1 = p.data();
        const double* b1 = w1 + model.hidden * d;
        const double* w2 = b1 + model.hidden;
        const double* b2 = w2 + nq * model.hidden;
        double* g_w1 = grad.data();
        double* g_b1 = g_w1 + model.hidden * d;
        double* g_w2 = g_b1 + model.hidden;
        double* g_b2 = g_w2 + nq * model.hidden;

        const double inv = 1.0 / (static_cast<double>(set.rows.size()) * static_cast<double>(nq));
        double total = 0.0;
        std::vector<double> z(model.hidden), dz(model.hidden);
        for (std::size_t r = 0; r < set.rows.size(); ++r) {
            const auto& x = feats[r];
            for (std::size_t j = 0; j < model.hidden; ++j) {
                double s = b1[j];
                for (std::size_t i = 0; i < d; ++i) s += w1[j * d + i] * x[i];
                z[j] = std::tanh(s);
            }
            std::fill(dz.begin(), dz.end(), 0.0);
            for (std::size_t o = 0; o < nq; ++o) {
                double out = b2[o];
                for (std::size_t j = 0; j < model.hidden; ++j) out += w2[o * model.hidden + j] * z[j];
                total += pinball(out, targets[r], set.levels[o]) * inv;
                const double diff = out - targets[r];
                double dout = 0.0;  // subgradient 0 at the kink
                if (diff > 0.0)
                    dout = 2.0 * (1.0 - set.levels[o]) * inv;
                else if (diff < 0.0)
                    dout = -2.0 * set.levels[o] * inv;
                if (dout == 0.0) continue;
                g_b2[o] += dout;
                for (std::size_t j = 0; j < model.hidden; ++j) {
                    g_w2[o * model.hidden + j] += dout * z[j];
                    dz[j] += dout * w2[o * model.hidden + j];
                }
            }
            for (std::size_t j = 0; j < model.hidden; ++j) {
                const double dpre = dz[j] * (1.0 - z[j] * z[j]);
                if (dpre == 0.0) continue;
                g_b1[j] += dpre;
                for (std::size_t i = 0; i < d; ++i) g_w1[j * d + i] += dpre * x[i];
            }
        }
        return total;
    };

    // hidden weights get small seeded values, output layer starts at zero so
    // the initial prediction is 0 for every row
    std::vector<double> init(np, 0.0);
    std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
    const double r0 = tab.init_scale / std::sqrt(static_cast<double>(d));
    for (std::size_t i = 0; i < model.hidden * d; ++i) {
        const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
        init[i] = (2.0 * u - 1.0) * r0;
    }
    OptimResult res = minimize(objective, std::move(init), cfg);
    model.params = res.best_params;

    TrainedStacker ts;
    ts.spec = StackerSpec::tabular_net(scaled, tab.hidden);
    ts.trained_models = set.num_models;
    ts.trained_h = static_cast<std::size_t>(store.horizon);
    ts.trained_q = nq;
    ts.tabular = std::move(model);
    ts.train_loss = res.best_loss;
    return ts;
}

// ---------------------------------------------------------------------------
// Prediction
// ---------------------------------------------------------------------------

struct CombineReport {
    std::vector<std::string> fallback_items;  // unseen items served by mean item weights
};

namespace detail {

inline void tabular_predict(const TabularModel& model, const std::vector<double>& raw_features,
                            std::vector<double>& out) {
    std::vector<double> x(raw_features.size());
    for (std::size_t i = 0; i < x.size(); ++i)
        x[i] = scale_value(raw_features[i], model.alpha, model.beta);
    model.forward(x, out);
    for (auto& v : out) v = unscale_value(v, model.alpha, model.beta);
}

/// Weights for one item, falling back to the mean across trained items when
/// the item is unseen.
inline WeightTensor item_weights(const WeightTensor& wt, const std::string& item,
                                 CombineReport* report) {
    if (wt.n_items <= 1) return wt;
    for (std::size_t i = 0; i < wt.item_index.size(); ++i)
        if (wt.item_index[i] == item) {
            WeightTensor slice = wt;
            slice.n_items = 1;
            slice.item_index.clear();
            const std::size_t stride = wt.n_steps * wt.n_qout * wt.n_qin * wt.n_models;
            slice.values.assign(wt.values.begin() + static_cast<std::ptrdiff_t>(i * stride),
                                wt.values.begin() + static_cast<std::ptrdiff_t>((i + 1) * stride));
            return slice;
        }
    if (report != nullptr) report->fallback_items.push_back(item);
    WeightTensor mean = wt;
    mean.n_items = 1;
    mean.item_index.clear();
    const std::size_t stride = wt.n_steps * wt.n_qout * wt.n_qin * wt.n_models;
    mean.values.assign(stride, 0.0);
    for (std::size_t i = 0; i < wt.n_items; ++i)
        for (std::size_t s = 0; s < stride; ++s) mean.values[s] += wt.values[i * stride + s];
    for (auto& v : mean.values) v /= static_cast<double>(wt.n_items);
    return mean;
}

}  // namespace detail

/// Applies a trained stacker to a set of base-model forecasts.
inline std::map<std::string, QuantileForecast> combine(const TrainedStacker& ts,
                                                       const ModelForecastSet& inputs,
                                                       CombineReport* report = nullptr) {
    inputs.validate();
    if (inputs.num_models() != ts.trained_models)
        throw ShapeMismatch("model count differs from training");
    std::map<std::string, QuantileForecast> out;
    if (inputs.by_model.empty()) return out;

    for (const auto& [item, first] : inputs.by_model.front()) {
        if (first.horizon != ts.trained_h || first.num_quantiles != ts.trained_q)
            throw ShapeMismatch("forecast grid differs from training for item '" + item + "'");
        QuantileForecast combined(item, first.origin_t, first.horizon, first.num_quantiles);
        const std::size_t n_models = inputs.num_models();

        switch (ts.spec.family) {
            case StackerSpec::Family::Mean: {
                for (std::size_t m = 0; m < n_models; ++m) {
                    const auto& f = inputs.by_model[m].at(item);
                    for (std::size_t g = 0; g < combined.values.size(); ++g)
                        combined.values[g] += f.values[g] / static_cast<double>(n_models);
                }
                break;
            }
            case StackerSpec::Family::Median: {
                std::vector<double> column(n_models);
                for (std::size_t g = 0; g < combined.values.size(); ++g) {
                    for (std::size_t m = 0; m < n_models; ++m)
                        column[m] = inputs.by_model[m].at(item).values[g];
                    std::sort(column.begin(), column.end());
                    combined.values[g] = n_models % 2 == 1
                                             ? column[n_models / 2]
                                             : 0.5 * (column[n_models / 2 - 1] + column[n_models / 2]);
                }
                break;
            }
            case StackerSpec::Family::SelectBest: {
                combined = inputs.by_model[static_cast<std::size_t>(ts.best_model)].at(item);
                break;
            }
            case StackerSpec::Family::PerfWeighted:
            case StackerSpec::Family::Greedy:
            case StackerSpec::Family::Linear: {
                const WeightTensor wt = detail::item_weights(ts.weights, item, report);
                const TyingDims dims = tying_dims(wt.tying);
                for (std::size_t h = 0; h < combined.horizon; ++h) {
                    const std::size_t gh = dims.per_step ? h : 0;
                    for (std::size_t q = 0; q < combined.num_quantiles; ++q) {
                        const std::size_t gq = (dims.per_quantile || dims.across) ? q : 0;
                        double s = 0.0;
                        if (dims.across) {
                            for (std::size_t m = 0; m < n_models; ++m) {
                                const auto& f = inputs.by_model[m].at(item);
                                for (std::size_t qp = 0; qp < combined.num_quantiles; ++qp)
                                    s += wt.at(0, gh, gq, qp, m) * f.at(h, qp);
                            }
                        } else {
                            for (std::size_t m = 0; m < n_models; ++m)
                                s += wt.at(0, gh, gq, 0, m) * inputs.by_model[m].at(item).at(h, q);
                        }
                        combined.at(h, q) = s;
                    }
                }
                break;
            }
            case StackerSpec::Family::Tabular: {
                std::vector<double> features(n_models * combined.num_quantiles);
                std::vector<double> row_out;
                for (std::size_t h = 0; h < combined.horizon; ++h) {
                    for (std::size_t m = 0; m < n_models; ++m)
                        for (std::size_t q = 0; q < combined.num_quantiles; ++q)
                            features[m * combined.num_quantiles + q] =
                                inputs.by_model[m].at(item).at(h, q);
                    detail::tabular_predict(ts.tabular, features, row_out);
                    for (std::size_t q = 0; q < combined.num_quantiles; ++q)
                        combined.at(h, q) = row_out[q];
                }
                break;
            }
        }
        out.emplace(item, enforce_quantile_monotonicity(std::move(combined)));
    }
    return out;
}

/// Mean OOF loss of a trained stacker on a view (used by the L3 layer and by
/// the provenance audit).
inline double stacker_oof_loss(const TrainedStacker& ts, const OofView& view) {
    std::vector<double> features, row_out;
    return detail::mean_window_loss(view, [&](const OofWindow& w, std::vector<double>& yc) {
        switch (ts.spec.family) {
            case StackerSpec::Family::Mean: {
                yc.assign(view.horizon * view.num_q, 0.0);
                for (std::size_t m = 0; m < view.num_models; ++m)
                    for (std::size_t g = 0; g < yc.size(); ++g)
                        yc[g] += w.inputs[m * yc.size() + g] / static_cast<double>(view.num_models);
                break;
            }
            case StackerSpec::Family::Median: {
                yc.resize(view.horizon * view.num_q);
                std::vector<double> column(view.num_models);
                for (std::size_t g = 0; g < yc.size(); ++g) {
                    for (std::size_t m = 0; m < view.num_models; ++m)
                        column[m] = w.inputs[m * yc.size() + g];
                    std::sort(column.begin(), column.end());
                    yc[g] = view.num_models % 2 == 1
                                ? column[view.num_models / 2]
                                : 0.5 * (column[view.num_models / 2 - 1] +
                                         column[view.num_models / 2]);
                }
                break;
            }
            case StackerSpec::Family::SelectBest: {
                const std::size_t m = static_cast<std::size_t>(ts.best_model);
                yc.assign(w.inputs.begin() + static_cast<std::ptrdiff_t>(m * view.horizon * view.num_q),
                          w.inputs.begin() +
                              static_cast<std::ptrdiff_t>((m + 1) * view.horizon * view.num_q));
                break;
            }
            case StackerSpec::Family::PerfWeighted:
            case StackerSpec::Family::Greedy:
            case StackerSpec::Family::Linear: {
                WeightTensor wt = ts.weights;
                if (wt.n_items > 1) {
                    // view items and training items share the store order
                    detail::combine_window(wt, view, w, yc);
                    break;
                }
                detail::combine_window(wt, view, w, yc);
                break;
            }
            case StackerSpec::Family::Tabular: {
                yc.resize(view.horizon * view.num_q);
                features.resize(view.num_models * view.num_q);
                for (std::size_t h = 0; h < view.horizon; ++h) {
                    for (std::size_t m = 0; m < view.num_models; ++m)
                        for (std::size_t q = 0; q < view.num_q; ++q)
                            features[m * view.num_q + q] = view.input(w, m, h, q);
                    detail::tabular_predict(ts.tabular, features, row_out);
                    for (std::size_t q = 0; q < view.num_q; ++q) yc[h * view.num_q + q] = row_out[q];
                }
                break;
            }
        }
    });
}

/// Dispatch helper used by the pipeline and the multi-layer trainer.
inline TrainedStacker fit_stacker(const StackerSpec& spec, const OofStore& store,
                                  const OptimConfig& cfg, bool wall_time = true) {
    const auto start = std::chrono::steady_clock::now();
    TrainedStacker ts;
    switch (spec.family) {
        case StackerSpec::Family::Mean:
        case StackerSpec::Family::Median: {
            OofView view = make_oof_view(store);
            ts.spec = spec;
            ts.trained_models = view.num_models;
            ts.trained_h = view.horizon;
            ts.trained_q = view.num_q;
            ts.train_loss = stacker_oof_loss(ts, view);
            break;
        }
        case StackerSpec::Family::SelectBest: ts = fit_select_best(store); break;
        case StackerSpec::Family::PerfWeighted:
            ts = fit_performance_weights(store, spec.perf_kind);
            break;
        case StackerSpec::Family::Greedy: ts = fit_greedy(store, spec.greedy_iters); break;
        case StackerSpec::Family::Linear: ts = fit_linear(store, spec.tying, spec.param, cfg); break;
        case StackerSpec::Family::Tabular:
            ts = fit_tabular(store, spec.scaled, spec.tabular, cfg);
            break;
    }
    ts.spec = spec;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    ts.fit_time_s = wall_time ? std::max(elapsed, 1e-9) : 0.0;
    return ts;
}

}  // namespace stackcast
