#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "stackcast/baselearners.hpp"
#include "stackcast/core.hpp"
#include "stackcast/cvharness.hpp"
#include "stackcast/evalreport.hpp"
#include "stackcast/stackers.hpp"

namespace stackcast {

struct ParseError : Error {
    ParseError(const std::string& path, std::size_t line, const std::string& what)
        : Error(path + ":" + std::to_string(line) + ": " + what) {}
};

struct IrregularSpacing : Error {
    explicit IrregularSpacing(const std::string& item)
        : Error("irregular timestamp spacing in item '" + item + "'") {}
};

namespace io {

inline std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

inline std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> fields;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur.push_back(c);
        }
    }
    fields.push_back(cur);
    return fields;
}

inline double parse_double(const std::string& s, const std::string& path, std::size_t line) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(path, line, "bad number '" + s + "'");
    }
}

inline long long parse_int(const std::string& s, const std::string& path, std::size_t line) {
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(s, &pos);
        if (pos != s.size()) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw ParseError(path, line, "bad integer '" + s + "'");
    }
}

/// Writes content atomically (temp file then rename).
inline void write_file(const std::filesystem::path& path, const std::string& content) {
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp.string());
        out << content;
    }
    std::filesystem::rename(tmp, path);
}

inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        lines.push_back(line);
    }
    return lines;
}

inline void expect_header(const std::vector<std::string>& lines, const std::string& version_line,
                          const std::string& path) {
    if (lines.empty() || lines[0] != version_line)
        throw ParseError(path, 1, "expected schema header '" + version_line + "'");
}

// ---------------------------------------------------------------------------
// Raw input CSV: header item_id,timestamp,target
// ---------------------------------------------------------------------------

inline TimeSeriesPanel read_input_csv(const std::filesystem::path& path, int seasonality,
                                      const std::string& freq_label) {
    const auto lines = read_lines(path);
    if (lines.empty()) throw ParseError(path.string(), 1, "empty file");
    std::size_t first = 0;
    if (lines[0].rfind("# stackcast-panel", 0) == 0) ++first;  // allow re-ingesting panel files
    if (first >= lines.size() || split_csv(lines[first]) !=
                                     std::vector<std::string>{"item_id", "timestamp", "target"})
        throw ParseError(path.string(), first + 1, "expected header item_id,timestamp,target");

    TimeSeriesPanel panel;
    panel.seasonality_m = seasonality;
    panel.freq_label = freq_label;
    std::map<std::string, std::size_t> index;
    std::vector<std::int64_t> last_ts;
    for (std::size_t ln = first + 1; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto f = split_csv(lines[ln]);
        if (f.size() != 3) throw ParseError(path.string(), ln + 1, "expected 3 columns");
        const std::string& item = f[0];
        const std::int64_t ts = parse_int(f[1], path.string(), ln + 1);
        const double value = parse_double(f[2], path.string(), ln + 1);
        auto it = index.find(item);
        if (it == index.end()) {
            index[item] = panel.series.size();
            panel.series.push_back({item, ts, 0, {value}});
            last_ts.push_back(ts);
        } else {
            TimeSeries& s = panel.series[it->second];
            const std::int64_t gap = ts - last_ts[it->second];
            if (gap <= 0) throw IrregularSpacing(item);
            if (s.step == 0)
                s.step = gap;
            else if (gap != s.step)
                throw IrregularSpacing(item);
            s.values.push_back(value);
            last_ts[it->second] = ts;
        }
    }
    for (auto& s : panel.series)
        if (s.step == 0) s.step = 1;
    return panel;
}

// ---------------------------------------------------------------------------
// Panel file
// ---------------------------------------------------------------------------

inline constexpr const char* kPanelHeader = "# stackcast-panel v1";

inline void write_panel(const std::filesystem::path& path, const TimeSeriesPanel& panel) {
    std::string out = kPanelHeader;
    out += " seasonality=" + std::to_string(panel.seasonality_m) + " freq=" + panel.freq_label +
           "\n";
    out += "item_id,timestamp,target\n";
    for (const auto& s : panel.series)
        for (std::size_t t = 0; t < s.values.size(); ++t)
            out += s.item_id + "," +
                   std::to_string(s.start_time + static_cast<std::int64_t>(t) * s.step) + "," +
                   format_double(s.values[t]) + "\n";
    write_file(path, out);
}

inline TimeSeriesPanel read_panel(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    if (lines.empty() || lines[0].rfind(kPanelHeader, 0) != 0)
        throw ParseError(path.string(), 1, "not a stackcast panel file");
    int seasonality = 1;
    std::string freq;
    std::istringstream head(lines[0]);
    std::string token;
    while (head >> token) {
        if (token.rfind("seasonality=", 0) == 0) seasonality = std::stoi(token.substr(12));
        if (token.rfind("freq=", 0) == 0) freq = token.substr(5);
    }
    return read_input_csv(path, seasonality, freq);
}

// ---------------------------------------------------------------------------
// OOF store directory
// ---------------------------------------------------------------------------

inline constexpr const char* kOofHeader = "# stackcast-oof v1";
inline constexpr const char* kTargetsHeader = "# stackcast-oof-targets v1";
inline constexpr const char* kMetaHeader = "# stackcast-oof-meta v1";

inline void write_oof_store(const std::filesystem::path& dir, const OofStore& store) {
    std::filesystem::create_directories(dir);

    auto forecast_file = [&](int fold, const std::filesystem::path& path) {
        std::string out = std::string(kOofHeader) + "\n";
        out += "item_id,fold,model,origin_t,h,q,value\n";
        auto emit = [&](int f, int m, const std::string& item, const QuantileForecast& fc) {
            for (std::size_t h = 0; h < fc.horizon; ++h)
                for (std::size_t q = 0; q < fc.num_quantiles; ++q)
                    out += item + "," + std::to_string(f) + "," + store.model_ids[static_cast<std::size_t>(m)] +
                           "," + std::to_string(fc.origin_t) + "," + std::to_string(h + 1) + "," +
                           format_double(store.quantiles[q]) + "," + format_double(fc.at(h, q)) +
                           "\n";
        };
        if (fold == 0) {
            for (const auto& [key, fc] : store.test_forecasts) emit(0, key.first, key.second, fc);
        } else {
            for (const auto& [key, fc] : store.forecasts)
                if (std::get<0>(key) == fold) emit(fold, std::get<1>(key), std::get<2>(key), fc);
        }
        write_file(path, out);
    };

    for (int k = 1; k <= store.folds_k; ++k)
        forecast_file(k, dir / ("fold_" + std::to_string(k) + ".csv"));
    forecast_file(0, dir / "test.csv");

    std::string targets = std::string(kTargetsHeader) + "\n";
    targets += "item_id,fold,h,value\n";
    for (const auto& [key, vec] : store.targets)
        for (std::size_t h = 0; h < vec.size(); ++h)
            targets += key.second + "," + std::to_string(key.first) + "," + std::to_string(h + 1) +
                       "," + format_double(vec[h]) + "\n";
    write_file(dir / "targets.csv", targets);

    std::string meta = std::string(kMetaHeader) + "\n";
    meta += "k_folds=" + std::to_string(store.folds_k) + "\n";
    meta += "horizon=" + std::to_string(store.horizon) + "\n";
    meta += "seasonality=" + std::to_string(store.seasonality_m) + "\n";
    meta += "seed=" + std::to_string(store.seed) + "\n";
    meta += std::string("metric=") + (store.eval_loss == EvalLoss::Sql ? "sql" : "mase") + "\n";
    meta += "quantiles=";
    for (std::size_t q = 0; q < store.quantiles.size(); ++q)
        meta += (q ? "," : "") + format_double(store.quantiles[q]);
    meta += "\nmodels=";
    for (std::size_t m = 0; m < store.model_ids.size(); ++m)
        meta += (m ? "," : "") + store.model_ids[m];
    meta += "\n";
    for (const auto& item : store.items)
        meta += "item=" + item + "," + std::to_string(store.item_length.at(item)) + "," +
                format_double(store.seasonal_scale.at(item)) + "\n";
    for (const auto& [key, t] : store.fit_time_s)
        meta += "fit_time=" + std::to_string(key.first) + "," + std::to_string(key.second) + "," +
                format_double(t) + "\n";
    for (const auto& s : store.skipped) meta += "skipped=" + s + "\n";
    write_file(dir / "meta.txt", meta);
}

inline OofStore read_oof_store(const std::filesystem::path& dir) {
    OofStore store;
    const auto meta_lines = read_lines(dir / "meta.txt");
    expect_header(meta_lines, kMetaHeader, (dir / "meta.txt").string());
    for (std::size_t ln = 1; ln < meta_lines.size(); ++ln) {
        const std::string& line = meta_lines[ln];
        auto value_of = [&](const std::string& key) {
            return line.substr(key.size() + 1);
        };
        if (line.rfind("k_folds=", 0) == 0) store.folds_k = std::stoi(value_of("k_folds"));
        else if (line.rfind("horizon=", 0) == 0) store.horizon = std::stoi(value_of("horizon"));
        else if (line.rfind("seasonality=", 0) == 0)
            store.seasonality_m = std::stoi(value_of("seasonality"));
        else if (line.rfind("seed=", 0) == 0) store.seed = std::stoull(value_of("seed"));
        else if (line.rfind("metric=", 0) == 0)
            store.eval_loss = value_of("metric") == "mase" ? EvalLoss::Mase : EvalLoss::Sql;
        else if (line.rfind("quantiles=", 0) == 0) {
            for (const auto& f : split_csv(value_of("quantiles")))
                store.quantiles.push_back(parse_double(f, "meta.txt", ln + 1));
        } else if (line.rfind("models=", 0) == 0) {
            for (const auto& f : split_csv(value_of("models"))) store.model_ids.push_back(f);
        } else if (line.rfind("item=", 0) == 0) {
            const auto f = split_csv(value_of("item"));
            if (f.size() != 3) throw ParseError("meta.txt", ln + 1, "bad item line");
            store.items.push_back(f[0]);
            store.item_length[f[0]] = static_cast<std::size_t>(parse_int(f[1], "meta.txt", ln + 1));
            store.seasonal_scale[f[0]] = parse_double(f[2], "meta.txt", ln + 1);
        } else if (line.rfind("fit_time=", 0) == 0) {
            const auto f = split_csv(value_of("fit_time"));
            if (f.size() != 3) throw ParseError("meta.txt", ln + 1, "bad fit_time line");
            store.fit_time_s[{static_cast<int>(parse_int(f[0], "meta.txt", ln + 1)),
                              static_cast<int>(parse_int(f[1], "meta.txt", ln + 1))}] =
                parse_double(f[2], "meta.txt", ln + 1);
        } else if (line.rfind("skipped=", 0) == 0) {
            store.skipped.push_back(value_of("skipped"));
        }
    }
    std::map<std::string, int> model_index;
    for (std::size_t m = 0; m < store.model_ids.size(); ++m)
        model_index[store.model_ids[m]] = static_cast<int>(m);

    auto read_forecasts = [&](const std::filesystem::path& path, bool test) {
        const auto lines = read_lines(path);
        expect_header(lines, kOofHeader, path.string());
        for (std::size_t ln = 2; ln < lines.size(); ++ln) {
            if (lines[ln].empty()) continue;
            const auto f = split_csv(lines[ln]);
            if (f.size() != 7) throw ParseError(path.string(), ln + 1, "expected 7 columns");
            const std::string& item = f[0];
            const int fold = static_cast<int>(parse_int(f[1], path.string(), ln + 1));
            auto mi = model_index.find(f[2]);
            if (mi == model_index.end())
                throw ParseError(path.string(), ln + 1, "unknown model '" + f[2] + "'");
            const std::int64_t origin = parse_int(f[3], path.string(), ln + 1);
            const std::size_t h = static_cast<std::size_t>(parse_int(f[4], path.string(), ln + 1));
            const double level = parse_double(f[5], path.string(), ln + 1);
            const double value = parse_double(f[6], path.string(), ln + 1);
            std::size_t qi = store.quantiles.size();
            for (std::size_t q = 0; q < store.quantiles.size(); ++q)
                if (store.quantiles[q] == level) qi = q;
            if (qi == store.quantiles.size() || h < 1 ||
                h > static_cast<std::size_t>(store.horizon))
                throw ParseError(path.string(), ln + 1, "level/step outside the task grid");
            QuantileForecast* fc;
            if (test)
                fc = &store.test_forecasts
                          .try_emplace({mi->second, item}, item, origin,
                                       static_cast<std::size_t>(store.horizon),
                                       store.quantiles.size())
                          .first->second;
            else
                fc = &store.forecasts
                          .try_emplace({fold, mi->second, item}, item, origin,
                                       static_cast<std::size_t>(store.horizon),
                                       store.quantiles.size())
                          .first->second;
            fc->at(h - 1, qi) = value;
        }
    };
    for (int k = 1; k <= store.folds_k; ++k)
        read_forecasts(dir / ("fold_" + std::to_string(k) + ".csv"), false);
    read_forecasts(dir / "test.csv", true);

    const auto target_lines = read_lines(dir / "targets.csv");
    expect_header(target_lines, kTargetsHeader, (dir / "targets.csv").string());
    for (std::size_t ln = 2; ln < target_lines.size(); ++ln) {
        if (target_lines[ln].empty()) continue;
        const auto f = split_csv(target_lines[ln]);
        if (f.size() != 4) throw ParseError("targets.csv", ln + 1, "expected 4 columns");
        const int fold = static_cast<int>(parse_int(f[1], "targets.csv", ln + 1));
        const std::size_t h = static_cast<std::size_t>(parse_int(f[2], "targets.csv", ln + 1));
        auto& vec = store.targets[{fold, f[0]}];
        if (vec.size() < h) vec.resize(static_cast<std::size_t>(store.horizon));
        vec[h - 1] = parse_double(f[3], "targets.csv", ln + 1);
    }
    return store;
}

// ---------------------------------------------------------------------------
// External forecasts (same record schema as the OOF files)
// ---------------------------------------------------------------------------

inline ExternalTable import_external(const std::filesystem::path& path, const ForecastTask& task) {
    if (!std::filesystem::exists(path)) throw ExternalFileMissing(path.string());
    const auto lines = read_lines(path);
    expect_header(lines, kOofHeader, path.string());
    ExternalTable table;
    std::map<std::pair<std::string, std::int64_t>, std::size_t> filled;
    for (std::size_t ln = 2; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto f = split_csv(lines[ln]);
        if (f.size() != 7) throw ParseError(path.string(), ln + 1, "expected 7 columns");
        const std::string& item = f[0];
        const std::int64_t origin = parse_int(f[3], path.string(), ln + 1);
        const std::size_t h = static_cast<std::size_t>(parse_int(f[4], path.string(), ln + 1));
        const double level = parse_double(f[5], path.string(), ln + 1);
        const double value = parse_double(f[6], path.string(), ln + 1);
        std::size_t qi = task.num_quantiles();
        for (std::size_t q = 0; q < task.num_quantiles(); ++q)
            if (task.quantile_levels[q] == level) qi = q;
        if (qi == task.num_quantiles())
            throw ShapeMismatch("external level " + f[5] + " not in the task quantile set");
        if (h < 1 || h > static_cast<std::size_t>(task.horizon))
            throw ShapeMismatch("external step " + f[4] + " outside the task horizon");
        auto& fc = table.by_item_origin
                       .try_emplace({item, origin}, item, origin,
                                    static_cast<std::size_t>(task.horizon), task.num_quantiles())
                       .first->second;
        fc.at(h - 1, qi) = value;
        filled[{item, origin}] += 1;
    }
    const std::size_t cells =
        static_cast<std::size_t>(task.horizon) * task.num_quantiles();
    for (const auto& [key, count] : filled)
        if (count != cells)
            throw ShapeMismatch("external forecast for item '" + key.first + "' at origin " +
                                std::to_string(key.second) + " has " + std::to_string(count) +
                                " cells, expected " + std::to_string(cells));
    return table;
}

// ---------------------------------------------------------------------------
// Eval records
// ---------------------------------------------------------------------------

inline constexpr const char* kRecordsHeader = "# stackcast-records v1";

inline void write_records(const std::filesystem::path& path, const std::vector<EvalRecord>& records) {
    std::string out = std::string(kRecordsHeader) + "\n";
    out += "method,dataset,metric,value,fit_time_s\n";
    for (const auto& r : records)
        out += r.method + "," + r.dataset + "," + (r.metric == EvalLoss::Sql ? "sql" : "mase") +
               "," + format_double(r.value) + "," + format_double(r.fit_time_s) + "\n";
    write_file(path, out);
}

inline std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
    const auto lines = read_lines(path);
    expect_header(lines, kRecordsHeader, path.string());
    std::vector<EvalRecord> records;
    for (std::size_t ln = 2; ln < lines.size(); ++ln) {
        if (lines[ln].empty()) continue;
        const auto f = split_csv(lines[ln]);
        if (f.size() != 5) throw ParseError(path.string(), ln + 1, "expected 5 columns");
        EvalRecord r;
        r.method = f[0];
        r.dataset = f[1];
        r.metric = f[2] == "mase" ? EvalLoss::Mase : EvalLoss::Sql;
        r.value = parse_double(f[3], path.string(), ln + 1);
        r.fit_time_s = parse_double(f[4], path.string(), ln + 1);
        records.push_back(std::move(r));
    }
    return records;
}

// ---------------------------------------------------------------------------
// Trained stacker records
// ---------------------------------------------------------------------------

inline constexpr const char* kStackerHeader = "# stackcast-stacker v1";

inline void write_stacker(const std::filesystem::path& path, const TrainedStacker& ts) {
    std::string out = std::string(kStackerHeader) + "\n";
    out += "label=" + ts.spec.label() + "\n";
    out += "models=" + std::to_string(ts.trained_models) + "\n";
    out += "horizon=" + std::to_string(ts.trained_h) + "\n";
    out += "quantiles=" + std::to_string(ts.trained_q) + "\n";
    out += "train_loss=" + format_double(ts.train_loss) + "\n";
    out += "fit_time_s=" + format_double(ts.fit_time_s) + "\n";
    if (ts.best_model >= 0) out += "best_model=" + std::to_string(ts.best_model) + "\n";
    if (!ts.weights.values.empty()) {
        out += "tying=" + tying_name(ts.weights.tying) + "\n";
        out += "dims=" + std::to_string(ts.weights.n_items) + "," +
               std::to_string(ts.weights.n_steps) + "," + std::to_string(ts.weights.n_qout) + "," +
               std::to_string(ts.weights.n_qin) + "," + std::to_string(ts.weights.n_models) + "\n";
        out += "weights=";
        for (std::size_t i = 0; i < ts.weights.values.size(); ++i)
            out += (i ? "," : "") + format_double(ts.weights.values[i]);
        out += "\n";
        for (const auto& item : ts.weights.item_index) out += "weight_item=" + item + "\n";
    }
    if (!ts.tabular.params.empty()) {
        out += "tabular=" + std::to_string(ts.tabular.input_dim) + "," +
               std::to_string(ts.tabular.hidden) + "," + std::to_string(ts.tabular.outputs) + "," +
               (ts.tabular.scaled ? std::string("scaled") : std::string("raw")) + "," +
               format_double(ts.tabular.alpha) + "," + format_double(ts.tabular.beta) + "\n";
        out += "tabular_params=";
        for (std::size_t i = 0; i < ts.tabular.params.size(); ++i)
            out += (i ? "," : "") + format_double(ts.tabular.params[i]);
        out += "\n";
    }
    write_file(path, out);
}

}  // namespace io
}  // namespace stackcast
