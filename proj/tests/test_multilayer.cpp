#include <random>
#include <set>

#include "doctest.h"
#include "helpers.hpp"
#include "stackcast/multilayer.hpp"

using namespace stackcast;

namespace {

OptimConfig fast_cfg() {
    OptimConfig cfg;
    cfg.max_steps = 150;
    return cfg;
}

}  // namespace

TEST_CASE("the default portfolio has 14 distinctly named members") {
    auto portfolio = portfolio14();
    REQUIRE(portfolio.size() == 14);
    std::set<std::string> names;
    for (const auto& s : portfolio) names.insert(s.label());
    CHECK(names.size() == 14);
    CHECK(names.count("median") == 1);
    CHECK(names.count("greedy100") == 1);
    CHECK(names.count("tabular_scaled_mlp") == 1);
}

TEST_CASE("fit_multilayer refuses a single fold") {
    auto store = testutil::make_store(
        1, 1, 2, {0.5}, 1, [](int, std::size_t, std::size_t, std::size_t, std::size_t) { return 0.0; },
        [](int, std::size_t, std::size_t) { return 0.0; });
    MultiLayerSpec spec;
    CHECK_THROWS_AS(fit_multilayer(store, spec, fast_cfg()), InsufficientFolds);
}

TEST_CASE("select_best chain over a single model is a passthrough") {
    auto store = testutil::make_store(
        1, 2, 2, {0.5}, 1,
        [](int k, std::size_t, std::size_t, std::size_t h, std::size_t) {
            return static_cast<double>(k) + 0.1 * static_cast<double>(h);
        },
        [](int k, std::size_t, std::size_t h) {
            return static_cast<double>(k) + 0.1 * static_cast<double>(h) + 0.2;
        });
    MultiLayerSpec spec;
    spec.l2 = {StackerSpec::select_best()};
    spec.l3 = StackerSpec::select_best();
    auto ens = fit_multilayer(store, spec, fast_cfg());

    ModelForecastSet inputs = store.fold_inputs(2);
    auto out = predict_multilayer(ens, inputs);
    CHECK(out.at("item0").values == inputs.by_model[0].at("item0").values);
}

TEST_CASE("select_best L3 picks the dominant L2") {
    // 3 models around target 0: mean = 1/3, median = -1 -> mean dominates
    auto store = testutil::make_store(
        2, 3, 2, {0.5}, 3,
        [](int, std::size_t m, std::size_t, std::size_t, std::size_t) {
            return m == 0 ? 3.0 : -1.0;
        },
        [](int, std::size_t, std::size_t) { return 0.0; });
    MultiLayerSpec spec;
    spec.l2 = {StackerSpec::median(), StackerSpec::mean()};
    spec.l3 = StackerSpec::select_best();
    auto ens = fit_multilayer(store, spec, fast_cfg());

    CHECK(ens.l2_window_k_loss[1] < ens.l2_window_k_loss[0]);
    CHECK(ens.l3.best_model == 1);
    CHECK(ens.l3_weights == std::vector<double>{0.0, 1.0});
    CHECK(audit_two_level(ens).empty());
}

TEST_CASE("select_best L3 achieves exactly the minimum window-K loss") {
    std::mt19937_64 rng(31);
    for (int trial = 0; trial < 5; ++trial) {
        auto store = testutil::random_store(rng, 3, 3, 2, 3);
        MultiLayerSpec spec;
        spec.l2 = {StackerSpec::median(), StackerSpec::mean(), StackerSpec::select_best()};
        spec.l3 = StackerSpec::select_best();
        auto ens = fit_multilayer(store, spec, fast_cfg());
        const double min_loss =
            *std::min_element(ens.l2_window_k_loss.begin(), ens.l2_window_k_loss.end());
        CHECK(ens.l3.train_loss == min_loss);
        CHECK(ens.l2_window_k_loss[static_cast<std::size_t>(ens.l3.best_model)] == min_loss);
    }
}

TEST_CASE("greedy L3 never exceeds the best single L2 window-K loss") {
    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 5; ++trial) {
        auto store = testutil::random_store(rng, 3, 3, 2, 3);
        MultiLayerSpec spec;
        spec.l2 = {StackerSpec::median(), StackerSpec::mean()};
        spec.l3 = StackerSpec::greedy(20);
        auto ens = fit_multilayer(store, spec, fast_cfg());
        const double min_loss =
            *std::min_element(ens.l2_window_k_loss.begin(), ens.l2_window_k_loss.end());
        CHECK(ens.l3.train_loss <= min_loss);
    }
}

TEST_CASE("greedy L3 mixes symmetric constant L2s to zero") {
    // L2s are select-best over disjoint single models +1 / -1, target 0
    auto store = testutil::make_store(
        1, 2, 2, {0.5}, 2,
        [](int, std::size_t m, std::size_t, std::size_t, std::size_t) {
            return m == 0 ? 1.0 : -1.0;
        },
        [](int, std::size_t, std::size_t) { return 0.0; });
    // build the L3 problem directly through fit_multilayer with passthrough L2s
    MultiLayerSpec spec;
    spec.l2 = {StackerSpec::linear(Tying::M, WeightParam::Softmax), StackerSpec::median()};
    spec.l3 = StackerSpec::greedy(2);
    auto ens = fit_multilayer(store, spec, fast_cfg());
    CHECK(std::isfinite(ens.l3.train_loss));
    CHECK(audit_two_level(ens).empty());
}

TEST_CASE("identical L2 outputs make the L3 output independent of its weights") {
    auto store = testutil::make_store(
        1, 2, 2, {0.5}, 2,
        [](int, std::size_t, std::size_t, std::size_t h, std::size_t) {
            return 2.0 + static_cast<double>(h);
        },
        [](int, std::size_t, std::size_t) { return 2.5; });
    MultiLayerSpec spec;
    spec.l2 = {StackerSpec::mean(), StackerSpec::median()};  // equal on identical models
    spec.l3 = StackerSpec::greedy(5);
    auto ens = fit_multilayer(store, spec, fast_cfg());
    auto out = predict_multilayer(ens, store.fold_inputs(2));
    CHECK(out.at("item0").at(0, 0) == doctest::Approx(2.0));
    CHECK(out.at("item0").at(1, 0) == doctest::Approx(3.0));
}

TEST_CASE("retraining toggle keeps the L3 payload but changes the L2 fits") {
    std::mt19937_64 rng(33);
    auto store = testutil::random_store(rng, 4, 3, 2, 3);
    MultiLayerSpec with, without;
    with.l2 = without.l2 = {StackerSpec::linear(Tying::M, WeightParam::Softmax),
                            StackerSpec::median()};
    with.l3 = without.l3 = StackerSpec::select_best();
    with.retrain_l2 = true;
    without.retrain_l2 = false;

    auto a = fit_multilayer(store, with, fast_cfg());
    auto b = fit_multilayer(store, without, fast_cfg());

    CHECK(a.l3_weights == b.l3_weights);
    CHECK(a.l3.best_model == b.l3.best_model);
    CHECK(a.retrained_l2);
    CHECK(!b.retrained_l2);
    // retrained linear weights see window K and should differ
    CHECK(a.l2[0].weights.values != b.l2[0].weights.values);
    // without retraining, the final L2s are the interim L2s
    CHECK(b.l2[0].weights.values == b.l2_interim[0].weights.values);
}

TEST_CASE("the provenance audit flags tampering") {
    std::mt19937_64 rng(34);
    auto store = testutil::random_store(rng, 2, 2, 2, 2);
    MultiLayerSpec spec;
    spec.l2 = {StackerSpec::median(), StackerSpec::mean()};
    spec.l3 = StackerSpec::select_best();
    auto ens = fit_multilayer(store, spec, fast_cfg());
    CHECK(audit_two_level(ens).empty());

    auto tampered = ens;
    tampered.l3_store.forecasts.begin()->second.origin_t -= 1;
    CHECK(!audit_two_level(tampered).empty());
    auto extra_fold = ens;
    extra_fold.l3_store.folds_k = 2;
    CHECK(!audit_two_level(extra_fold).empty());
}
