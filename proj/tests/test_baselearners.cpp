#include <cmath>

#include "doctest.h"
#include "stackcast/baselearners.hpp"

using namespace stackcast;

TEST_CASE("seasonal naive point paths") {
    auto spec = BaseLearnerSpec::seasonal_naive();
    CHECK(point_path(spec, {1, 2, 3, 4}, 2, 3) == std::vector<double>{3, 4, 3});
    CHECK(point_path(spec, {1, 2, 3, 4}, 1, 3) == std::vector<double>{4, 4, 4});
    CHECK_THROWS_AS(point_path(spec, {1}, 2, 1), InsufficientHistory);
}

TEST_CASE("ses on a constant history is flat at every alpha") {
    auto spec = BaseLearnerSpec::ses();
    CHECK(point_path(spec, {5, 5, 5, 5}, 1, 4) == std::vector<double>{5, 5, 5, 5});
    for (double alpha : BaseLearnerSpec::default_alpha_grid()) {
        auto one = spec;
        one.alpha_grid = {alpha};
        CHECK(point_path(one, {5, 5, 5, 5}, 1, 2) == std::vector<double>{5, 5});
    }
}

TEST_CASE("ses picks the grid alpha minimizing in-sample one-step MAE") {
    std::vector<double> y;
    for (int t = 0; t < 24; ++t) y.push_back(t % 2 == 0 ? 0.0 : 1.0);

    // oracle: evaluate every grid alpha directly
    double best_alpha = 0.0, best_mae = std::numeric_limits<double>::infinity();
    double best_level = 0.0;
    for (double alpha : BaseLearnerSpec::default_alpha_grid()) {
        double level = y[0], abs_sum = 0.0;
        for (std::size_t t = 1; t < y.size(); ++t) {
            abs_sum += std::abs(y[t] - level);
            level = alpha * y[t] + (1.0 - alpha) * level;
        }
        const double mae = abs_sum / static_cast<double>(y.size() - 1);
        if (mae < best_mae) {
            best_mae = mae;
            best_alpha = alpha;
            best_level = level;
        }
    }
    auto point = point_path(BaseLearnerSpec::ses(), y, 1, 1);
    CHECK(point[0] == doctest::Approx(best_level));
    CHECK(best_alpha > 0.0);  // the oracle itself is exercised
}

TEST_CASE("theta continues a noiseless linear trend exactly") {
    std::vector<double> y;
    const std::size_t t_len = 30;
    for (std::size_t t = 0; t < t_len; ++t) y.push_back(2.0 + 3.0 * static_cast<double>(t));
    auto point = point_path(BaseLearnerSpec::theta(), y, 1, 4);
    for (std::size_t h = 0; h < 4; ++h) {
        const double expect = 2.0 + 3.0 * static_cast<double>(t_len + h);
        CHECK(std::abs(point[h] - expect) < 1e-6);
    }
}

TEST_CASE("theta applies a seasonal adjustment only on strongly seasonal input") {
    std::vector<double> seasonal;
    for (int t = 0; t < 48; ++t)
        seasonal.push_back(10.0 + 5.0 * std::sin(2.0 * 3.14159265358979 * t / 12.0));
    auto point = point_path(BaseLearnerSpec::theta(), seasonal, 12, 12);
    // continuation should roughly track the next cycle
    for (int h = 0; h < 12; ++h) {
        const double expect = 10.0 + 5.0 * std::sin(2.0 * 3.14159265358979 * (48 + h) / 12.0);
        CHECK(std::abs(point[static_cast<std::size_t>(h)] - expect) < 1.0);
    }
}

TEST_CASE("linear ar reproduces a constant series") {
    auto spec = BaseLearnerSpec::linear_ar(1);
    std::vector<double> y(12, 7.0);
    auto point = point_path(spec, y, 1, 3);
    for (double v : point) CHECK(v == doctest::Approx(7.0).epsilon(1e-6));
}

TEST_CASE("fit_predict produces centered residual quantiles") {
    ForecastTask task(2, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    // seasonal naive m=1 on [1,2,3,4]: residuals all +1, so offsets are 0 and
    // the quantile grid is flat at the point path
    auto f = fit_predict(BaseLearnerSpec::seasonal_naive(), {1, 2, 3, 4}, 1, task);
    for (std::size_t h = 0; h < 2; ++h)
        for (std::size_t q = 0; q < 3; ++q) CHECK(f.at(h, q) == doctest::Approx(4.0));
    CHECK(f.origin_t == 4);
}

TEST_CASE("fit_predict quantiles are monotone and deterministic") {
    ForecastTask task(3, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    std::vector<double> y = {3, 1, 4, 1, 5, 9, 2, 6, 5, 3, 5, 8, 9, 7};
    for (const auto& spec : {BaseLearnerSpec::seasonal_naive(), BaseLearnerSpec::ses(),
                             BaseLearnerSpec::theta(), BaseLearnerSpec::linear_ar()}) {
        auto a = fit_predict(spec, y, 2, task);
        auto b = fit_predict(spec, y, 2, task);
        CHECK(a.values == b.values);
        for (std::size_t h = 0; h < a.horizon; ++h)
            for (std::size_t q = 1; q < a.num_quantiles; ++q)
                CHECK(a.at(h, q) >= a.at(h, q - 1));
    }
}

TEST_CASE("fit_predict with too few residuals collapses onto the point path") {
    ForecastTask task(1, {0.1, 0.5, 0.9}, EvalLoss::Sql);
    ResidualQuantilePolicy policy;
    policy.min_history = 5;
    auto f = fit_predict(BaseLearnerSpec::seasonal_naive(), {1, 2, 3, 4}, 1, task, policy);
    CHECK(f.at(0, 0) == f.at(0, 2));
}

TEST_CASE("external learner resolves forecasts through the table") {
    ForecastTask task(1, {0.5}, EvalLoss::Sql);
    ExternalTable table;
    QuantileForecast f("a", 9, 1, 1);
    f.at(0, 0) = 42.0;
    table.by_item_origin[{"a", 9}] = f;

    auto spec = BaseLearnerSpec::external("ext.csv");
    ForecastContext ctx{"a", 9, &table};
    auto out = fit_predict(spec, {}, 1, task, {}, ctx);
    CHECK(out.at(0, 0) == 42.0);

    ForecastContext missing{"b", 9, &table};
    CHECK_THROWS_AS(fit_predict(spec, {}, 1, task, {}, missing), SchemaMismatch);
    ForecastContext no_table{"a", 9, nullptr};
    CHECK_THROWS_AS(fit_predict(spec, {}, 1, task, {}, no_table), ExternalFileMissing);
}
