#include <random>

#include "doctest.h"
#include "helpers.hpp"
#include "stackcast/cvharness.hpp"

using namespace stackcast;

TEST_CASE("split_folds matches the hand enumeration for T=10, K=3, H=2") {
    auto plan = split_folds(10, 3, 2);
    REQUIRE(plan.folds.size() == 3);
    CHECK(plan.folds[0].train_len == 4);
    CHECK(plan.folds[0].val_begin == 4);
    CHECK(plan.folds[0].val_end == 6);
    CHECK(plan.folds[1].train_len == 6);
    CHECK(plan.folds[1].val_begin == 6);
    CHECK(plan.folds[1].val_end == 8);
    CHECK(plan.folds[2].train_len == 8);
    CHECK(plan.folds[2].val_begin == 8);
    CHECK(plan.folds[2].val_end == 10);
}

TEST_CASE("split_folds degenerate and error cases") {
    auto single = split_folds(12, 1, 3);
    REQUIRE(single.folds.size() == 1);
    CHECK(single.folds[0].train_len == 9);
    CHECK(single.folds[0].val_end == 12);
    CHECK_THROWS_AS(split_folds(5, 3, 2), InsufficientLength);
}

TEST_CASE("validation windows tile the last K*H points exactly once") {
    for (int horizon = 1; horizon <= 4; ++horizon)
        for (int k = 1; k <= 5; ++k)
            for (std::size_t t_len = 8u * horizon; t_len <= 12u * horizon; ++t_len) {
                FoldPlan plan;
                try {
                    plan = split_folds(t_len, k, horizon);
                } catch (const InsufficientLength&) {
                    CHECK(t_len < static_cast<std::size_t>(k * horizon) + 4);
                    continue;
                }
                std::vector<int> covered(t_len, 0);
                for (const auto& fold : plan.folds) {
                    CHECK(fold.val_begin == fold.train_len);
                    CHECK(fold.val_end - fold.val_begin == static_cast<std::size_t>(horizon));
                    for (std::size_t t = fold.val_begin; t < fold.val_end; ++t) ++covered[t];
                }
                const std::size_t tail = static_cast<std::size_t>(k * horizon);
                for (std::size_t t = 0; t < t_len; ++t)
                    CHECK(covered[t] == (t >= t_len - tail ? 1 : 0));
                // monotone nested training prefixes
                for (std::size_t f = 1; f < plan.folds.size(); ++f)
                    CHECK(plan.folds[f].train_len > plan.folds[f - 1].train_len);
            }
}

TEST_CASE("holdout_split reserves the last H points of every series") {
    auto panel = testutil::make_panel({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10}, {1, 2, 3, 4, 5}});
    auto split = holdout_split(panel, 2);
    CHECK(split.train.series[0].values ==
          std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
    CHECK(split.test_targets.at("item0") == std::vector<double>{9, 10});
    CHECK(split.train.series[1].values == std::vector<double>{1, 2, 3});
    CHECK(split.test_targets.at("item1") == std::vector<double>{4, 5});

    auto tiny = testutil::make_panel({{1, 2}});
    CHECK_THROWS_AS(holdout_split(tiny, 2), InsufficientLength);
}

TEST_CASE("build_oof collects one record per fold and model") {
    auto panel = testutil::make_panel({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12}});
    ForecastTask task(2, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    auto store = build_oof(panel, {BaseLearnerSpec::seasonal_naive()}, 2, task, 0);

    CHECK(store.forecasts.size() == 2);
    CHECK(store.targets.size() == 2);
    CHECK(store.targets.at({1, "item0"}) == std::vector<double>{9, 10});
    CHECK(store.targets.at({2, "item0"}) == std::vector<double>{11, 12});

    // fold 1 trains on the first 8 points; seasonal naive m=1 repeats y[7]=8
    const auto& f1 = store.forecasts.at({1, 0, "item0"});
    CHECK(f1.origin_t == 8);
    CHECK(f1.at(0, 1) == doctest::Approx(8.0));

    for (const auto& [key, t] : store.fit_time_s) CHECK(t > 0.0);
    CHECK(leakage_check(store).empty());
}

TEST_CASE("build_oof is deterministic and skips too-short items per fold") {
    std::vector<double> long_series(40), short_series(9);
    for (std::size_t t = 0; t < long_series.size(); ++t)
        long_series[t] = std::sin(0.3 * static_cast<double>(t)) + 0.01 * static_cast<double>(t);
    for (std::size_t t = 0; t < short_series.size(); ++t)
        short_series[t] = static_cast<double>(t % 3);
    auto panel = testutil::make_panel({long_series, short_series});
    ForecastTask task(2, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    const std::vector<BaseLearnerSpec> specs = {BaseLearnerSpec::seasonal_naive(),
                                                BaseLearnerSpec::ses()};
    auto a = build_oof(panel, specs, 3, task, 7);
    auto b = build_oof(panel, specs, 3, task, 7);
    CHECK(a.forecasts.size() == b.forecasts.size());
    for (const auto& [key, f] : a.forecasts) CHECK(b.forecasts.at(key).values == f.values);
    CHECK(a.skipped == b.skipped);

    // the short item cannot serve fold 1 (needs 2*3=6 reserved + 4 min train)
    bool fold1_short = a.forecasts.count({1, 0, "item1"}) != 0;
    CHECK(!fold1_short);
    CHECK(std::find(a.skipped.begin(), a.skipped.end(), "item1@1") != a.skipped.end());
    CHECK(leakage_check(a).empty());
}

TEST_CASE("leakage_check flags tampered stores") {
    auto store = testutil::make_store(
        1, 1, 2, {0.5}, 1, [](int, std::size_t, std::size_t, std::size_t, std::size_t) { return 0.0; },
        [](int, std::size_t, std::size_t) { return 0.0; });
    CHECK(leakage_check(store).empty());

    auto tampered = store;
    tampered.forecasts.at({1, 0, "item0"}).origin_t += 1;  // origin inside its own window
    CHECK(leakage_check(tampered).size() == 1);

    auto wrong_len = store;
    wrong_len.targets.at({1, "item0"}).pop_back();
    CHECK(leakage_check(wrong_len).size() == 1);
}

TEST_CASE("wall_time=false zeroes recorded fit times") {
    auto panel = testutil::make_panel({{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16}});
    ForecastTask task(2, {0.5}, EvalLoss::Sql);
    BuildOofOptions opt;
    opt.wall_time = false;
    auto store = build_oof(panel, {BaseLearnerSpec::seasonal_naive()}, 2, task, 0, opt);
    for (const auto& [key, t] : store.fit_time_s) CHECK(t == 0.0);
}
