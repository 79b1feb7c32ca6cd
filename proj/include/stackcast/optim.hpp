#pragma once

#include <chrono>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "stackcast/core.hpp"

namespace stackcast {

struct NonFiniteLoss : Error {
    explicit NonFiniteLoss(std::size_t step)
        : Error("non-finite loss at step " + std::to_string(step)) {}
};

struct NonFiniteGradient : Error {
    explicit NonFiniteGradient(std::size_t step)
        : Error("non-finite gradient at step " + std::to_string(step)) {}
};

/// params -> loss, writing the analytic gradient into the second argument
/// (pre-sized to the parameter count).
using Objective = std::function<double(const std::vector<double>&, std::vector<double>&)>;

struct OptimConfig {
    double lr0 = 0.05;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::size_t plateau_patience = 50;
    double plateau_factor = 0.5;
    double rel_tol = 1e-4;
    std::size_t max_steps = 5000;
    double time_limit_s = 600.0;
    std::uint64_t seed = 0;
};

enum class StopReason { Converged, MaxSteps, TimeLimit };

struct OptimResult {
    std::vector<double> best_params;
    double best_loss = 0.0;
    std::size_t steps_taken = 0;
    std::vector<double> lr_trace;
    StopReason stop_reason = StopReason::MaxSteps;
};

/// Full-batch Adam with plateau learning-rate decay, best-iterate tracking
/// and a wall-clock budget. Stops when lr drops below 1e-6 * lr0.
inline OptimResult minimize(const Objective& objective, std::vector<double> init,
                            const OptimConfig& cfg) {
    const auto start = std::chrono::steady_clock::now();
    const std::size_t n = init.size();
    std::vector<double> params = std::move(init);
    std::vector<double> grad(n, 0.0);
    std::vector<double> m1(n, 0.0), m2(n, 0.0);

    OptimResult result;
    double lr = cfg.lr0;
    std::size_t since_improvement = 0;

    double loss = objective(params, grad);
    if (!std::isfinite(loss)) throw NonFiniteLoss(0);
    for (double g : grad)
        if (!std::isfinite(g)) throw NonFiniteGradient(0);
    result.best_params = params;
    result.best_loss = loss;
    result.stop_reason = StopReason::MaxSteps;

    for (std::size_t step = 1; step <= cfg.max_steps; ++step) {
        const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
        for (std::size_t i = 0; i < n; ++i) {
            m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * grad[i];
            m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
            params[i] -= lr * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.eps);
        }

        loss = objective(params, grad);
        if (!std::isfinite(loss)) throw NonFiniteLoss(step);
        for (double g : grad)
            if (!std::isfinite(g)) throw NonFiniteGradient(step);
        result.steps_taken = step;
        result.lr_trace.push_back(lr);

        if (result.best_loss - loss > cfg.rel_tol * (std::abs(result.best_loss) + 1e-12)) {
            since_improvement = 0;
        } else {
            ++since_improvement;
        }
        if (loss < result.best_loss) {
            result.best_loss = loss;
            result.best_params = params;
        }

        if (since_improvement >= cfg.plateau_patience) {
            lr *= cfg.plateau_factor;
            since_improvement = 0;
            if (lr < 1e-6 * cfg.lr0) {
                result.stop_reason = StopReason::Converged;
                break;
            }
        }
        const double elapsed =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        if (elapsed > cfg.time_limit_s) {
            result.stop_reason = StopReason::TimeLimit;
            break;
        }
    }
    return result;
}

/// Max relative deviation between the analytic gradient and central finite
/// differences at the given point.
inline double check_gradient(const Objective& objective, const std::vector<double>& params,
                             double h = 1e-5) {
    std::vector<double> grad(params.size(), 0.0);
    objective(params, grad);
    std::vector<double> scratch(params.size(), 0.0);
    double worst = 0.0;
    for (std::size_t i = 0; i < params.size(); ++i) {
        std::vector<double> p = params;
        p[i] = params[i] + h;
        const double up = objective(p, scratch);
        p[i] = params[i] - h;
        const double down = objective(p, scratch);
        const double fd = (up - down) / (2.0 * h);
        const double dev = std::abs(fd - grad[i]) / (std::abs(grad[i]) + 1e-8);
        worst = std::max(worst, dev);
    }
    return worst;
}

}  // namespace stackcast
