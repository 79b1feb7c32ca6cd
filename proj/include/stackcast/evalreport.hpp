#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "stackcast/core.hpp"

namespace stackcast {

struct MissingCell : Error {
    MissingCell(const std::string& method, const std::string& dataset)
        : Error("missing score for method '" + method + "' on dataset '" + dataset + "'") {}
};

struct ZeroBaseline : Error {
    explicit ZeroBaseline(const std::string& dataset)
        : Error("baseline error is zero on dataset '" + dataset + "'") {}
};

struct EvalRecord {
    std::string method;
    std::string dataset;
    EvalLoss metric = EvalLoss::Sql;
    double value = 0.0;
    double fit_time_s = 0.0;
};

namespace detail {

struct Grid {
    std::vector<std::string> methods;   // sorted
    std::vector<std::string> datasets;  // sorted
    std::map<std::pair<std::string, std::string>, const EvalRecord*> cells;

    const EvalRecord& at(const std::string& method, const std::string& dataset) const {
        auto it = cells.find({method, dataset});
        if (it == cells.end()) throw MissingCell(method, dataset);
        return *it->second;
    }
};

inline Grid make_grid(const std::vector<EvalRecord>& records) {
    Grid grid;
    std::set<std::string> methods, datasets;
    for (const auto& r : records) {
        methods.insert(r.method);
        datasets.insert(r.dataset);
        grid.cells[{r.method, r.dataset}] = &r;
    }
    grid.methods.assign(methods.begin(), methods.end());
    grid.datasets.assign(datasets.begin(), datasets.end());
    for (const auto& m : grid.methods)
        for (const auto& d : grid.datasets)
            if (grid.cells.find({m, d}) == grid.cells.end()) throw MissingCell(m, d);
    return grid;
}

/// Per-dataset ascending ranks by error, ties averaged.
inline std::map<std::string, double> dataset_ranks(const Grid& grid, const std::string& dataset) {
    std::vector<std::pair<double, std::string>> scored;
    for (const auto& m : grid.methods) scored.emplace_back(grid.at(m, dataset).value, m);
    std::sort(scored.begin(), scored.end());
    std::map<std::string, double> ranks;
    std::size_t i = 0;
    while (i < scored.size()) {
        std::size_t j = i;
        while (j + 1 < scored.size() && scored[j + 1].first == scored[i].first) ++j;
        const double shared = (static_cast<double>(i + 1) + static_cast<double>(j + 1)) / 2.0;
        for (std::size_t k = i; k <= j; ++k) ranks[scored[k].second] = shared;
        i = j + 1;
    }
    return ranks;
}

}  // namespace detail

inline std::map<std::string, double> avg_rank(const std::vector<EvalRecord>& records) {
    detail::Grid grid = detail::make_grid(records);
    std::map<std::string, double> sums;
    for (const auto& d : grid.datasets)
        for (const auto& [m, r] : detail::dataset_ranks(grid, d)) sums[m] += r;
    for (auto& [m, s] : sums) s /= static_cast<double>(grid.datasets.size());
    return sums;
}

/// Counts how many datasets each method wins; ties credit every tied method.
inline std::map<std::string, int> champion_counts(const std::vector<EvalRecord>& records) {
    detail::Grid grid = detail::make_grid(records);
    std::map<std::string, int> counts;
    for (const auto& m : grid.methods) counts[m] = 0;
    for (const auto& d : grid.datasets) {
        double best = grid.at(grid.methods.front(), d).value;
        for (const auto& m : grid.methods) best = std::min(best, grid.at(m, d).value);
        for (const auto& m : grid.methods)
            if (grid.at(m, d).value == best) counts[m] += 1;
    }
    return counts;
}

/// Geometric mean of per-dataset error ratios vs the baseline, clipped to
/// [1e-3, 5].
inline std::map<std::string, double> gmean_relative_error(const std::vector<EvalRecord>& records,
                                                          const std::string& baseline) {
    detail::Grid grid = detail::make_grid(records);
    std::map<std::string, double> out;
    for (const auto& m : grid.methods) {
        double log_sum = 0.0;
        for (const auto& d : grid.datasets) {
            const double base = grid.at(baseline, d).value;
            if (base == 0.0) throw ZeroBaseline(d);
            const double rel = std::clamp(grid.at(m, d).value / base, 1e-3, 5.0);
            log_sum += std::log(rel);
        }
        out[m] = std::exp(log_sum / static_cast<double>(grid.datasets.size()));
    }
    return out;
}

/// Bradley-Terry maximum-likelihood ratings on the 400/log10 logistic scale.
/// Per dataset, the lower error wins a pairwise game; equal errors split it.
/// One pseudo-tie per pair keeps the MLE finite. Baseline anchored at 1000.
inline std::map<std::string, double> elo(const std::vector<EvalRecord>& records,
                                         const std::string& baseline) {
    detail::Grid grid = detail::make_grid(records);
    const std::size_t n = grid.methods.size();
    if (n < 2) throw Error("elo needs at least 2 methods");
    std::size_t base_idx = n;
    for (std::size_t i = 0; i < n; ++i)
        if (grid.methods[i] == baseline) base_idx = i;
    if (base_idx == n) throw Error("baseline method '" + baseline + "' not in records");

    std::vector<double> wins(n * n, 0.0);  // wins[a*n+b] = wins of a over b
    for (const auto& d : grid.datasets)
        for (std::size_t a = 0; a < n; ++a)
            for (std::size_t b = a + 1; b < n; ++b) {
                const double ea = grid.at(grid.methods[a], d).value;
                const double eb = grid.at(grid.methods[b], d).value;
                if (ea < eb)
                    wins[a * n + b] += 1.0;
                else if (eb < ea)
                    wins[b * n + a] += 1.0;
                else {
                    wins[a * n + b] += 0.5;
                    wins[b * n + a] += 0.5;
                }
            }
    for (std::size_t a = 0; a < n; ++a)
        for (std::size_t b = a + 1; b < n; ++b) {
            wins[a * n + b] += 0.5;
            wins[b * n + a] += 0.5;
        }

    // Zermelo / MM iterations on the strength parameters
    std::vector<double> p(n, 1.0);
    for (int iter = 0; iter < 10000; ++iter) {
        double max_change = 0.0;
        std::vector<double> next(n);
        for (std::size_t a = 0; a < n; ++a) {
            double w_total = 0.0, denom = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                if (b == a) continue;
                w_total += wins[a * n + b];
                denom += (wins[a * n + b] + wins[b * n + a]) / (p[a] + p[b]);
            }
            next[a] = w_total / denom;
        }
        double gm = 0.0;
        for (double v : next) gm += std::log(v);
        gm = std::exp(gm / static_cast<double>(n));
        for (std::size_t a = 0; a < n; ++a) {
            next[a] /= gm;
            max_change = std::max(max_change, std::abs(next[a] - p[a]));
        }
        p = next;
        if (max_change < 1e-12) break;
    }

    std::map<std::string, double> out;
    for (std::size_t a = 0; a < n; ++a)
        out[grid.methods[a]] = 1000.0 + 400.0 * std::log10(p[a] / p[base_idx]);
    return out;
}

struct Leaderboard {
    struct Row {
        std::string method;
        double elo = 0.0;
        int champion = 0;
        double avg_rank = 0.0;
        double gmean_rel_error = 0.0;
        double median_fit_time_s = 0.0;
    };
    std::string baseline;
    std::vector<Row> rows;  // descending Elo
};

inline Leaderboard make_leaderboard(const std::vector<EvalRecord>& records,
                                    const std::string& baseline) {
    detail::Grid grid = detail::make_grid(records);
    auto elos = elo(records, baseline);
    auto champs = champion_counts(records);
    auto ranks = avg_rank(records);
    auto rel = gmean_relative_error(records, baseline);

    Leaderboard board;
    board.baseline = baseline;
    for (const auto& m : grid.methods) {
        Leaderboard::Row row;
        row.method = m;
        row.elo = elos.at(m);
        row.champion = champs.at(m);
        row.avg_rank = ranks.at(m);
        row.gmean_rel_error = rel.at(m);
        std::vector<double> times;
        for (const auto& d : grid.datasets) times.push_back(grid.at(m, d).fit_time_s);
        std::sort(times.begin(), times.end());
        row.median_fit_time_s = times.size() % 2 == 1
                                    ? times[times.size() / 2]
                                    : 0.5 * (times[times.size() / 2 - 1] + times[times.size() / 2]);
        board.rows.push_back(row);
    }
    std::sort(board.rows.begin(), board.rows.end(), [](const auto& a, const auto& b) {
        if (a.elo != b.elo) return a.elo > b.elo;
        return a.method < b.method;
    });
    return board;
}

namespace detail {

inline std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

}  // namespace detail

inline std::string render_leaderboard_csv(const Leaderboard& board) {
    std::string out = "method,elo,champion,avg_rank,gmean_rel_error,median_fit_time_s\n";
    for (const auto& r : board.rows)
        out += r.method + "," + detail::fixed(r.elo, 1) + "," + std::to_string(r.champion) + "," +
               detail::fixed(r.avg_rank, 3) + "," + detail::fixed(r.gmean_rel_error, 4) + "," +
               detail::fixed(r.median_fit_time_s, 3) + "\n";
    return out;
}

inline std::string render_leaderboard_markdown(const Leaderboard& board) {
    std::string out;
    out += "| Method | Elo (↑) | Champion (↑) | Average rank (↓) | Average relative error (↓) | "
           "Median marginal training time [s] (↓) |\n";
    out += "|---|---|---|---|---|---|\n";
    for (const auto& r : board.rows)
        out += "| " + r.method + " | " + detail::fixed(r.elo, 1) + " | " +
               std::to_string(r.champion) + " | " + detail::fixed(r.avg_rank, 2) + " | " +
               detail::fixed(r.gmean_rel_error, 3) + " | " + detail::fixed(r.median_fit_time_s, 3) +
               " |\n";
    return out;
}

}  // namespace stackcast
