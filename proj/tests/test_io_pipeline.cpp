#include <filesystem>
#include <fstream>
#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "stackcast/pipeline.hpp"

using namespace stackcast;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() /
               ("stackcast_test_" + std::to_string(std::random_device{}()));
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_raw_csv(const fs::path& p, const std::vector<std::pair<std::string, std::size_t>>& items) {
    std::string out = "item_id,timestamp,target\n";
    for (const auto& [id, len] : items)
        for (std::size_t t = 0; t < len; ++t)
            out += id + "," + std::to_string(t) + "," +
                   std::to_string(1.0 + 0.5 * static_cast<double>(t % 7)) + "\n";
    io::write_file(p, out);
}

}  // namespace

TEST_CASE("panel round trip is value identical") {
    TempDir dir;
    auto panel = testutil::make_panel({{1.5, 2.25, -3.125, 1e-7}, {4, 5, 6}}, 4);
    panel.freq_label = "D";
    io::write_panel(dir.path / "panel.csv", panel);
    auto loaded = io::read_panel(dir.path / "panel.csv");
    REQUIRE(loaded.series.size() == 2);
    CHECK(loaded.seasonality_m == 4);
    CHECK(loaded.freq_label == "D");
    for (std::size_t i = 0; i < 2; ++i)
        CHECK(loaded.series[i].values == panel.series[i].values);
}

TEST_CASE("malformed rows raise ParseError with the line number") {
    TempDir dir;
    io::write_file(dir.path / "bad.csv", "item_id,timestamp,target\na,0,1.0\na,1,not_a_number\n");
    try {
        io::read_input_csv(dir.path / "bad.csv", 1, "");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find(":3:") != std::string::npos);
    }
    io::write_file(dir.path / "gap.csv", "item_id,timestamp,target\na,0,1\na,1,2\na,5,3\n");
    CHECK_THROWS_AS(io::read_input_csv(dir.path / "gap.csv", 1, ""), IrregularSpacing);
}

TEST_CASE("oof store round trips bit exactly") {
    TempDir dir;
    std::mt19937_64 rng(51);
    auto store = testutil::random_store(rng, 3, 2, 2, 2);
    // give it test forecasts too
    for (std::size_t m = 0; m < 2; ++m) {
        QuantileForecast f("item0", 12, 2, 3);
        for (auto& v : f.values) v = std::uniform_real_distribution<double>(-1, 1)(rng);
        store.test_forecasts[{static_cast<int>(m), "item0"}] = std::move(f);
    }
    store.fit_time_s[{0, 0}] = 0.012345678901234567;
    store.skipped.push_back("item9@1");

    io::write_oof_store(dir.path / "oof", store);
    auto loaded = io::read_oof_store(dir.path / "oof");
    io::write_oof_store(dir.path / "oof2", loaded);
    for (const auto& name : {"fold_1.csv", "fold_2.csv", "test.csv", "targets.csv", "meta.txt"})
        CHECK(slurp(dir.path / "oof" / name) == slurp(dir.path / "oof2" / name));
    CHECK(loaded.skipped == store.skipped);
    CHECK(loaded.seasonal_scale == store.seasonal_scale);
}

TEST_CASE("records round trip and upsert semantics") {
    TempDir dir;
    std::vector<EvalRecord> records = {{"median", "d1", EvalLoss::Sql, 0.5, 0.1},
                                       {"greedy100", "d1", EvalLoss::Sql, 0.4, 0.2}};
    io::write_records(dir.path / "records.csv", records);
    auto loaded = io::read_records(dir.path / "records.csv");
    REQUIRE(loaded.size() == 2);
    CHECK(loaded[0].method == "median");
    CHECK(loaded[0].value == 0.5);

    pipeline::upsert_records(dir.path / "records.csv",
                             {{"median", "d1", EvalLoss::Sql, 0.6, 0.1},
                              {"mean", "d1", EvalLoss::Sql, 0.7, 0.1}});
    auto merged = io::read_records(dir.path / "records.csv");
    REQUIRE(merged.size() == 3);
    for (const auto& r : merged)
        if (r.method == "median") CHECK(r.value == 0.6);
}

TEST_CASE("external forecast import validates shape") {
    TempDir dir;
    ForecastTask task(2, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    std::string good = std::string("# stackcast-oof v1\n") +
                       "item_id,fold,model,origin_t,h,q,value\n";
    for (const std::string item : {"a", "b"})
        for (int h = 1; h <= 2; ++h)
            for (double q : {0.1, 0.5, 0.9})
                good += item + ",1,ext,8," + std::to_string(h) + "," + io::format_double(q) +
                        ",1.5\n";
    io::write_file(dir.path / "ext.csv", good);
    auto table = io::import_external(dir.path / "ext.csv", task);
    CHECK(table.by_item_origin.size() == 2);
    CHECK(table.by_item_origin.at({"a", 8}).at(0, 1) == 1.5);

    // wrong level count: drop the q=0.9 rows for item b
    std::string partial = std::string("# stackcast-oof v1\n") +
                          "item_id,fold,model,origin_t,h,q,value\n";
    for (int h = 1; h <= 2; ++h)
        for (double q : {0.1, 0.5})
            partial += "b,1,ext,8," + std::to_string(h) + "," + io::format_double(q) + ",1.5\n";
    io::write_file(dir.path / "partial.csv", partial);
    CHECK_THROWS_AS(io::import_external(dir.path / "partial.csv", task), ShapeMismatch);

    CHECK_THROWS_AS(io::import_external(dir.path / "missing.csv", task), ExternalFileMissing);
}

TEST_CASE("config parsing: defaults, overrides and unknown keys") {
    TempDir dir;
    io::write_file(dir.path / "cfg.txt",
                   "dataset = demo\nhorizon = 4\nquantiles = 0.25,0.5,0.75\nmetric = mase\n"
                   "k_folds = 3\nseed = 9\nseasonality = 7\ntiming = none\n"
                   "opt_max_steps = 123  # keep it quick\n");
    auto cfg = pipeline::parse_config(dir.path / "cfg.txt");
    CHECK(cfg.dataset == "demo");
    CHECK(cfg.horizon == 4);
    CHECK(cfg.quantiles == std::vector<double>{0.25, 0.5, 0.75});
    CHECK(cfg.metric == EvalLoss::Mase);
    CHECK(cfg.k_folds == 3);
    CHECK(cfg.seed == 9);
    CHECK(cfg.optim.seed == 9);
    CHECK(cfg.seasonality == 7);
    CHECK(!cfg.wall_time);
    CHECK(cfg.optim.max_steps == 123);

    RunConfig defaults;
    CHECK(defaults.k_folds == 5);
    CHECK(defaults.quantiles == std::vector<double>{0.1, 0.5, 0.9});
    CHECK(defaults.baseline == "median");

    io::write_file(dir.path / "bad.txt", "no_such_key = 1\n");
    CHECK_THROWS_AS(pipeline::parse_config(dir.path / "bad.txt"), Error);
}

TEST_CASE("stacker and learner list parsing") {
    CHECK(pipeline::parse_stacker("linear_mqq_positive").label() == "linear_mqq_positive");
    CHECK(pipeline::parse_stacker("greedy1000").greedy_iters == 1000);
    CHECK(pipeline::parse_stacker("tabular_scaled_mlp").tabular.hidden == 32);
    CHECK_THROWS_AS(pipeline::parse_stacker("linear_zz_softmax"), Error);
    CHECK_THROWS_AS(pipeline::parse_stacker("wat"), Error);

    auto reps = pipeline::parse_stacker_list("representatives", EvalLoss::Sql);
    REQUIRE(reps.size() == 6);
    CHECK(reps[4].label() == "linear_mq_softmax");
    auto reps_point = pipeline::parse_stacker_list("representatives", EvalLoss::Mase);
    CHECK(reps_point[4].label() == "linear_m_softmax");
    CHECK(pipeline::parse_stacker_list("portfolio14", EvalLoss::Sql).size() == 14);

    auto learners = pipeline::parse_learner_list("default");
    REQUIRE(learners.size() == 4);
    auto ext = pipeline::parse_learner_list("theta,external:path/to/f.csv");
    REQUIRE(ext.size() == 2);
    CHECK(ext[1].external_path == "path/to/f.csv");
}

TEST_CASE("run_ingest reports kept and dropped counts and is idempotent") {
    TempDir dir;
    write_raw_csv(dir.path / "raw.csv", {{"a", 20}, {"b", 18}, {"c", 10}});
    RunConfig cfg;
    cfg.horizon = 2;  // 8H = 16
    auto summary = pipeline::run_ingest(dir.path / "raw.csv", cfg, dir.path / "run");
    CHECK(summary.kept == 2);
    CHECK(summary.dropped == 1);

    const std::string first = slurp(dir.path / "run" / "panel.csv");
    auto again = pipeline::run_ingest(dir.path / "run" / "panel.csv", cfg, dir.path / "run2");
    CHECK(again.kept == 2);
    CHECK(slurp(dir.path / "run2" / "panel.csv") == first);
}

TEST_CASE("backtest, fit and report chain end to end deterministically") {
    TempDir dir;
    std::mt19937_64 rng(55);
    std::string raw = "item_id,timestamp,target\n";
    for (int i = 0; i < 4; ++i)
        for (int t = 0; t < 30; ++t)
            raw += "s" + std::to_string(i) + "," + std::to_string(t) + "," +
                   io::format_double(5.0 + 0.1 * i * t + std::sin(0.7 * t) +
                                     0.2 * std::uniform_real_distribution<double>(-1, 1)(rng)) +
                   "\n";
    io::write_file(dir.path / "raw.csv", raw);

    RunConfig cfg;
    cfg.dataset = "demo";
    cfg.horizon = 3;
    cfg.k_folds = 2;
    cfg.wall_time = false;
    cfg.stackers = "median,select_best,greedy20";
    cfg.optim.max_steps = 50;

    for (const std::string run : {"run_a", "run_b"}) {
        const fs::path out = dir.path / run;
        pipeline::run_ingest(dir.path / "raw.csv", cfg, out);
        auto store = pipeline::run_backtest(cfg, out);
        CHECK(leakage_check(store).empty());
        auto rows = pipeline::run_fit(cfg, out);
        REQUIRE(rows.size() == 3);
        CHECK(rows[0].method == "median");
        CHECK(rows[0].fit_time_s == 0.0);
        pipeline::run_report({out / "records.csv"}, "median", out);
    }
    for (const auto& name :
         {"panel.csv", "records.csv", "leaderboard.csv", "report.md", "oof/meta.txt",
          "oof/fold_1.csv", "oof/fold_2.csv", "oof/test.csv", "oof/targets.csv"})
        CHECK(slurp(dir.path / "run_a" / name) == slurp(dir.path / "run_b" / name));

    // records written by run_fit satisfy the evalreport schema
    auto records = io::read_records(dir.path / "run_a" / "records.csv");
    CHECK(records.size() == 3);
    auto board = pipeline::run_report({dir.path / "run_a" / "records.csv"}, "median",
                                      dir.path / "report_only");
    CHECK(board.rows.size() == 3);
}

TEST_CASE("fit-multilayer emits the L3 weight table") {
    TempDir dir;
    std::mt19937_64 rng(56);
    std::string raw = "item_id,timestamp,target\n";
    for (int i = 0; i < 3; ++i)
        for (int t = 0; t < 32; ++t)
            raw += "s" + std::to_string(i) + "," + std::to_string(t) + "," +
                   io::format_double(2.0 + 0.05 * i * t +
                                     std::uniform_real_distribution<double>(-1, 1)(rng)) +
                   "\n";
    io::write_file(dir.path / "raw.csv", raw);

    RunConfig cfg;
    cfg.dataset = "demo";
    cfg.horizon = 3;
    cfg.k_folds = 2;
    cfg.wall_time = false;
    cfg.l3 = "select_best";
    cfg.optim.max_steps = 30;

    pipeline::run_ingest(dir.path / "raw.csv", cfg, dir.path);
    pipeline::run_backtest(cfg, dir.path);
    auto result = pipeline::run_fit_multilayer(cfg, dir.path);
    CHECK(result.method == "stacker_selection");

    const auto lines = io::read_lines(dir.path / "l3_weights.csv");
    REQUIRE(lines.size() >= 3);
    CHECK(io::split_csv(lines[1]).size() == 14);  // portfolio column names
    const auto weights = io::split_csv(lines[2]);
    REQUIRE(weights.size() == 14);
    int ones = 0;
    double total = 0.0;
    for (const auto& w : weights) {
        const double v = std::stod(w);
        total += v;
        if (v == 1.0) ++ones;
    }
    CHECK(ones == 1);  // one-hot under SelectBest
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("stacker serialization carries weights and labels") {
    TempDir dir;
    std::mt19937_64 rng(57);
    auto store = testutil::random_store(rng, 2, 2, 2, 2);
    OptimConfig cfg;
    cfg.max_steps = 40;
    auto ts = fit_stacker(StackerSpec::linear(Tying::MQ, WeightParam::Softmax), store, cfg, false);
    io::write_stacker(dir.path / "s.txt", ts);
    const auto lines = io::read_lines(dir.path / "s.txt");
    CHECK(lines[0] == "# stackcast-stacker v1");
    CHECK(lines[1] == "label=linear_mq_softmax");
    bool has_weights = false;
    for (const auto& l : lines)
        if (l.rfind("weights=", 0) == 0) has_weights = true;
    CHECK(has_weights);
}
