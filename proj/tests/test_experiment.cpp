#include <random>

#include "aes/errors.hpp"
#include "aes/experiment.hpp"
#include "doctest.h"

using namespace aes;

namespace {

ExperimentRecord with_se(std::vector<double> se) {
    ExperimentRecord r;
    r.id = "e1";
    r.weeks = static_cast<int>(se.size());
    for (std::size_t t = 0; t < se.size(); ++t) {
        r.effect_se2.push_back(se[t] * se[t]);
        r.observed_effect.push_back(0.0);
        r.treatment.cumulative_n.push_back(static_cast<std::int64_t>(100 * (t + 1)));
        r.control.cumulative_n.push_back(static_cast<std::int64_t>(100 * (t + 1)));
    }
    return r;
}

}  // namespace

TEST_CASE("recommend_duration scans weeks for target power") {
    PowerPolicy policy;
    // power(1, se_t): 0.297, 0.569, 0.838, 0.954
    CHECK(recommend_duration(with_se({0.9, 0.55, 0.38, 0.30}), 1.0, policy).weeks == 3);
    CHECK(recommend_duration(with_se({0.9, 0.55, 0.38, 0.30}), 1.0, policy).attained);

    const auto first = recommend_duration(with_se({0.1, 0.09, 0.08, 0.07}), 1.0, policy);
    CHECK(first.weeks == 1);
    CHECK(first.attained);

    const auto miss = recommend_duration(with_se({0.9, 0.55, 0.38, 0.30}), 0.01, policy);
    CHECK(miss.weeks == 4);
    CHECK_FALSE(miss.attained);
}

TEST_CASE("recommend_duration errors") {
    PowerPolicy policy;
    CHECK_THROWS_AS(recommend_duration(with_se({0.9, 0.5}), 0.1, policy), DataError);
    CHECK_THROWS_WITH_AS(recommend_duration(with_se({0.9, 0.5}), 0.1, policy), doctest::Contains("week 3"), DataError);
    CHECK_THROWS_AS(recommend_duration(with_se({0.9, 0.5, 0.4, 0.3}), 0.0, policy), DomainError);
}

TEST_CASE("recommend_duration is non-increasing in the assumed effect") {
    std::mt19937_64 rng(21);
    std::uniform_real_distribution<double> start(0.2, 3.0);
    std::uniform_real_distribution<double> shrink(0.5, 1.0);
    std::uniform_real_distribution<double> aes_dist(0.01, 5.0);
    PowerPolicy policy;
    for (int i = 0; i < 200; ++i) {
        std::vector<double> se{start(rng)};
        for (int t = 1; t < 4; ++t) se.push_back(se.back() * shrink(rng));
        const auto rec = with_se(se);
        double a = aes_dist(rng), b = aes_dist(rng);
        if (a > b) std::swap(a, b);
        CHECK(recommend_duration(rec, b, policy).weeks <= recommend_duration(rec, a, policy).weeks);
    }
}

TEST_CASE("record validation") {
    auto r = with_se({1.0, 0.8});
    CHECK_NOTHROW(r.validate());

    auto bad = r;
    bad.effect_se2[1] = 0.0;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("week 2"), DataError);

    bad = r;
    bad.treatment.cumulative_n[1] = 50;
    CHECK_THROWS_AS(bad.validate(), DataError);

    // arm variances must reproduce the effect variance
    auto arms = r;
    arms.treatment.cumulative_var = {400.0, 400.0};
    arms.control.cumulative_var = {100.0, 100.0};
    CHECK_THROWS_AS(arms.validate(), DataError);
    arms.effect_se2 = {400.0 / 100 + 100.0 / 100, 400.0 / 200 + 100.0 / 200};
    CHECK_NOTHROW(arms.validate());
}

TEST_CASE("launch decision rules") {
    auto r = with_se({1.0, 1.0});
    r.observed_effect = {0.0, 3.0};
    PowerPolicy z;
    CHECK_FALSE(launch_decision(r, 1, z));
    CHECK(launch_decision(r, 2, z));

    PowerPolicy welch;
    welch.decision_rule = DecisionRule::WelchOneSided;
    CHECK_THROWS_AS(launch_decision(r, 2, welch), DataError);

    r.treatment.cumulative_mean = {1.2, 1.2};
    r.control.cumulative_mean = {0.5, 0.5};
    r.treatment.cumulative_var = {4.0, 4.0};
    r.control.cumulative_var = {3.0, 3.0};
    r.treatment.cumulative_n = {50, 50};
    r.control.cumulative_n = {60, 60};
    CHECK(launch_decision(r, 1, welch));  // p = 0.0275
}

TEST_CASE("power policy validation") {
    PowerPolicy p;
    CHECK_NOTHROW(p.validate());
    p.alpha = 0.9;
    CHECK_THROWS_AS(p.validate(), ConfigError);
}
