#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "aes/errors.hpp"
#include "aes/mixture.hpp"
#include "doctest.h"

using namespace aes::meta;

namespace {

// Independent scalar oracle: plain density formula, no log-space tricks.
double oracle_density(double d, double var, double mu) {
    return std::exp(-(d - mu) * (d - mu) / (2.0 * var)) / std::sqrt(2.0 * std::numbers::pi * var);
}

MixtureParams params(std::vector<double> w, std::vector<double> mu, std::vector<double> v) {
    MixtureParams p;
    p.weights = std::move(w);
    p.means = std::move(mu);
    p.comp_vars = std::move(v);
    return p;
}

std::vector<Observation> draw_mixture(std::mt19937_64& rng, std::size_t m, const MixtureParams& truth,
                                      bool heteroscedastic) {
    std::discrete_distribution<int> comp(truth.weights.begin(), truth.weights.end());
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> s(0.05, 0.8);
    std::vector<Observation> out(m);
    for (auto& o : out) {
        const int k = comp(rng);
        o.se2 = heteroscedastic ? s(rng) : 0.0;
        o.effect = truth.means[k] + std::sqrt(truth.comp_vars[k] + o.se2) * z(rng);
    }
    return out;
}

}  // namespace

TEST_CASE("component density") {
    CHECK(component_density(0.3, 0.0, 0.3, 1.0 / (2.0 * std::numbers::pi)) == doctest::Approx(1.0).epsilon(1e-14));
    // N(0,1) density at 1, scipy.stats.norm.pdf(1)
    CHECK(std::fabs(component_density(1.0, 0.75, 0.0, 0.25) - 0.24197072451914337) < 1e-12);
    CHECK(component_density(1.7, 0.2, 0.5, 0.3) == doctest::Approx(component_density(2 * 0.5 - 1.7, 0.2, 0.5, 0.3)));
    CHECK_THROWS_AS(component_density(0.0, 0.0, 0.0, 0.0), aes::DomainError);
}

TEST_CASE("e_step examples") {
    const std::vector<Observation> data{{0.5, 0.1}, {-2.0, 0.3}, {40.0, 0.0}};
    const auto one = e_step(data, params({1.0}, {0.0}, {1.0}));
    for (std::size_t i = 0; i < data.size(); ++i) CHECK(one(i, 0) == 1.0);

    const std::vector<Observation> mid{{0.0, 0.37}};
    const auto sym = e_step(mid, params({0.5, 0.5}, {1.0, -1.0}, {0.4, 0.4}));
    CHECK(sym(0, 0) == doctest::Approx(0.5).epsilon(1e-15));

    // hand evaluation: pi_k f_k(1.5) / sum_j pi_j f_j(1.5)
    const std::vector<Observation> one_obs{{1.5, 0.0}};
    const auto r = e_step(one_obs, params({0.3, 0.7}, {2.0, 0.0}, {1.0, 1.0}));
    const double a = 0.3 * oracle_density(1.5, 1.0, 2.0);
    const double b = 0.7 * oracle_density(1.5, 1.0, 0.0);
    CHECK(r(0, 0) == doctest::Approx(a / (a + b)).epsilon(1e-14));
    CHECK(r(0, 0) == doctest::Approx(0.53810153).epsilon(1e-8));

    // far tails underflow in linear space but not in log space
    const std::vector<Observation> far{{60.0, 0.0}};
    const auto t = e_step(far, params({0.5, 0.5}, {0.0, 1.0}, {0.01, 0.01}));
    CHECK(t(0, 1) == doctest::Approx(1.0));
    CHECK(std::isfinite(t(0, 0)));

    const std::vector<Observation> nan{{std::nan(""), 0.1}};
    CHECK_THROWS_AS(e_step(nan, params({1.0}, {0.0}, {1.0})), aes::DataError);
}

TEST_CASE("m_step closed forms") {
    const std::vector<Observation> data{{1.0, 0.0}, {2.0, 0.0}, {4.0, 0.0}, {7.0, 0.0}};
    Responsibilities resp(4, 1);
    for (std::size_t i = 0; i < 4; ++i) resp(i, 0) = 1.0;
    FitConfig cfg;
    cfg.K = 1;
    cfg.fix_flat_mean = false;
    cfg.penalized = false;
    cfg.inner_tolerance = 1e-14;
    const auto p = m_step(data, resp, params({1.0}, {0.0}, {1.0}), cfg);
    CHECK(p.means[0] == doctest::Approx(3.5).epsilon(1e-12));
    // (1/m) sum (d - mean)^2 = (6.25 + 2.25 + 0.25 + 12.25) / 4
    CHECK(p.comp_vars[0] == doctest::Approx(5.25).epsilon(1e-9));

    // constant sampling variance: the precision weights cancel
    const std::vector<Observation> eq{{1.0, 0.4}, {2.0, 0.4}, {5.0, 0.4}};
    Responsibilities w(3, 2);
    const double omega[3] = {0.9, 0.5, 0.2};
    for (std::size_t i = 0; i < 3; ++i) {
        w(i, 0) = omega[i];
        w(i, 1) = 1.0 - omega[i];
    }
    FitConfig two = cfg;
    two.K = 2;
    const auto q = m_step(eq, w, params({0.5, 0.5}, {3.0, 1.0}, {1.0, 1.0}), two);
    CHECK(q.means[0] == doctest::Approx((0.9 * 1 + 0.5 * 2 + 0.2 * 5) / 1.6).epsilon(1e-10));
    CHECK(q.weights[0] == doctest::Approx(1.6 / 3.0).epsilon(1e-14));
}

TEST_CASE("penalized m_step matches a brute-force grid of the component objective") {
    const std::vector<Observation> data{{-1.3, 0.2}, {-0.2, 0.5}, {0.4, 0.1}, {1.9, 0.3}, {2.6, 0.05}};
    Responsibilities resp(5, 2);
    const double omega[5] = {0.05, 0.3, 0.5, 0.85, 0.95};
    for (std::size_t i = 0; i < 5; ++i) {
        resp(i, 0) = omega[i];
        resp(i, 1) = 1.0 - omega[i];
    }
    FitConfig cfg;
    cfg.K = 2;
    cfg.fix_flat_mean = false;
    cfg.penalized = true;
    cfg.inner_tolerance = 1e-13;
    const auto p = m_step(data, resp, params({0.5, 0.5}, {1.0, -0.5}, {0.5, 0.5}), cfg);

    const double m = 5.0;
    for (std::size_t k = 0; k < 2; ++k) {
        auto objective = [&](double mu, double v) {
            double acc = 0.0;
            for (std::size_t i = 0; i < 5; ++i)
                acc += resp(i, k) * std::log(oracle_density(data[i].effect, data[i].se2 + v, mu));
            return acc - (1.0 / m) * (1.0 / v + std::log(v));
        };
        double best = -1e300, best_mu = 0.0, best_v = 0.0;
        const int n = 800;
        const double mu_lo = -2.0, mu_hi = 3.0, v_lo = 1e-3, v_hi = 4.0;
        for (int a = 0; a <= n; ++a) {
            for (int b = 0; b <= n; ++b) {
                const double mu = mu_lo + (mu_hi - mu_lo) * a / n;
                const double v = v_lo + (v_hi - v_lo) * b / n;
                const double val = objective(mu, v);
                if (val > best) {
                    best = val;
                    best_mu = mu;
                    best_v = v;
                }
            }
        }
        CHECK(objective(p.means[k], p.comp_vars[k]) >= best - 1e-12);
        CHECK(std::fabs(p.means[k] - best_mu) <= 2.0 * (mu_hi - mu_lo) / n);
        CHECK(std::fabs(p.comp_vars[k] - best_v) <= 2.0 * (v_hi - v_lo) / n);
    }
}

TEST_CASE("penalized log-likelihood") {
    const std::vector<Observation> data{{0.3, 0.0}, {1.1, 0.0}, {-0.4, 0.0}};
    const auto single = params({1.0}, {0.2}, {1.5});
    double gauss = 0.0;
    for (const auto& o : data) gauss += std::log(oracle_density(o.effect, 1.5, 0.2));
    CHECK(penalized_loglik(data, single, false) == doctest::Approx(gauss).epsilon(1e-14));

    const auto unit = params({0.4, 0.6}, {1.0, -1.0}, {1.0, 1.0});
    CHECK(penalized_loglik(data, unit, true) - penalized_loglik(data, unit, false) ==
          doctest::Approx(-2.0 / 3.0).epsilon(1e-14));

    const std::vector<Observation> het{{0.3, 0.2}, {1.1, 0.1}, {-0.4, 0.6}};
    const auto two = params({0.4, 0.6}, {1.0, -0.5}, {0.5, 2.0});
    double hand = 0.0;
    for (const auto& o : het)
        hand += std::log(0.4 * oracle_density(o.effect, 0.5 + o.se2, 1.0) +
                         0.6 * oracle_density(o.effect, 2.0 + o.se2, -0.5));
    hand -= (1.0 / 3.0) * ((1.0 / 0.5 + std::log(0.5)) + (1.0 / 2.0 + std::log(2.0)));
    CHECK(penalized_loglik(het, two, true) == doctest::Approx(hand).epsilon(1e-13));
}

TEST_CASE("fit on a single Gaussian recovers the mean") {
    std::mt19937_64 rng(17);
    std::normal_distribution<double> z(1.3, 0.7);
    std::vector<Observation> data(400);
    double mean = 0.0;
    for (auto& o : data) {
        o.effect = z(rng);
        o.se2 = 0.0;
        mean += o.effect;
    }
    mean /= 400.0;
    FitConfig cfg;
    cfg.K = 1;
    cfg.fix_flat_mean = false;
    cfg.n_starts = 3;
    const auto r = fit(data, cfg);
    CHECK(std::fabs(r.params.means[0] - mean) < 3.0 * 0.7 / std::sqrt(400.0));
    CHECK(r.params.weights[0] == doctest::Approx(1.0));
}

TEST_CASE("fit rejects tiny or invalid inputs") {
    FitConfig cfg;
    const std::vector<Observation> few{{1.0, 0.1}, {2.0, 0.1}, {3.0, 0.1}};
    CHECK_THROWS_AS(fit(few, cfg), aes::DataError);
    std::vector<Observation> bad(10, {1.0, 0.1});
    bad[3].se2 = -1.0;
    CHECK_THROWS_AS(fit(bad, cfg), aes::DataError);
    cfg.n_starts = 0;
    CHECK_THROWS_AS(fit(std::vector<Observation>(10, {1.0, 0.1}), cfg), aes::ConfigError);
}

TEST_CASE("identical data falls back to random starts") {
    std::vector<Observation> same(12, {0.7, 0.2});
    FitConfig cfg;
    CHECK_FALSE(kmeans_init(same, cfg).has_value());
    const auto r = fit(same, cfg);
    CHECK_FALSE(r.runs[0].from_kmeans);
}

TEST_CASE("fitted components are ordered with the flat mean pinned") {
    std::mt19937_64 rng(23);
    const auto data = draw_mixture(rng, 300, params({0.2, 0.6, 0.2}, {2.0, 0.0, -2.0}, {0.25, 0.25, 0.25}), true);
    const auto r = fit(data, FitConfig::three_layer());
    CHECK(r.params.means[1] == 0.0);
    CHECK(r.params.means[0] > r.params.means[2]);
    CHECK(extract_aes(r.params) == r.params.means[0]);
    CHECK(r.resp.max_row_sum_error() < 1e-12);

    const auto two = fit(data, FitConfig::two_layer());
    CHECK(std::is_sorted(two.params.means.rbegin(), two.params.means.rend()));
}

TEST_CASE("EM ascent, normalization and variance floor") {
    std::mt19937_64 rng(29);
    for (int rep = 0; rep < 10; ++rep) {
        const auto data = draw_mixture(rng, 150, params({0.3, 0.4, 0.3}, {1.5, 0.0, -1.0}, {0.2, 0.1, 0.3}), true);
        for (bool penalized : {true, false}) {
            FitConfig cfg;
            cfg.penalized = penalized;
            cfg.seed = static_cast<std::uint64_t>(rep);
            const auto r = fit(data, cfg);
            for (const auto& run : r.runs) {
                if (run.failed) continue;
                for (std::size_t t = 1; t < run.loglik.size(); ++t)
                    CHECK(run.loglik[t] - run.loglik[t - 1] >= -1e-9 * 150.0);
                CHECK(run.max_row_sum_error < 1e-12);
                CHECK(run.max_weight_sum_error < 1e-12);
                if (penalized) CHECK(run.min_comp_var >= 1e-10);
            }
        }
    }
}

TEST_CASE("two-layer configuration equals the heteroscedastic path on zero variances") {
    std::mt19937_64 rng(31);
    auto data = draw_mixture(rng, 120, params({0.3, 0.7}, {1.0, -1.0}, {0.3, 0.3}), true);
    FitConfig two = FitConfig::two_layer();
    two.K = 2;
    const auto a = fit(data, two);
    for (auto& o : data) o.se2 = 0.0;
    FitConfig het = two;
    het.heteroscedastic = true;
    const auto b = fit(data, het);
    CHECK(a.params.means == b.params.means);
    CHECK(a.params.comp_vars == b.params.comp_vars);
    CHECK(a.params.weights == b.params.weights);
}

TEST_CASE("fitted parameters do not depend on input order") {
    std::mt19937_64 rng(37);
    auto data = draw_mixture(rng, 200, params({0.2, 0.6, 0.2}, {2.0, 0.0, -2.0}, {0.25, 0.25, 0.25}), true);
    // fixed iteration budget so both orders follow the same EM path
    FitConfig cfg;
    cfg.tolerance = 1e-300;
    cfg.max_iterations = 200;
    const auto init = *kmeans_init(data, cfg);
    const auto a = em_run(data, cfg, init);
    std::shuffle(data.begin(), data.end(), rng);
    const auto b = em_run(data, cfg, init);
    for (int k = 0; k < 3; ++k) {
        CHECK(std::fabs(a.params.means[k] - b.params.means[k]) < 1e-9);
        CHECK(std::fabs(a.params.comp_vars[k] - b.params.comp_vars[k]) < 1e-9);
        CHECK(std::fabs(a.params.weights[k] - b.params.weights[k]) < 1e-9);
    }
}

TEST_CASE("fit is deterministic and thread-count independent") {
    std::mt19937_64 rng(41);
    const auto data = draw_mixture(rng, 250, params({0.2, 0.6, 0.2}, {2.0, 0.0, -2.0}, {0.25, 0.25, 0.25}), true);
    FitConfig cfg;
    cfg.seed = 99;
    const auto a = fit(data, cfg, 1);
    const auto b = fit(data, cfg, 4);
    CHECK(a.params.means == b.params.means);
    CHECK(a.params.comp_vars == b.params.comp_vars);
    CHECK(a.best_run == b.best_run);
}

TEST_CASE("pooled MLE") {
    const std::vector<Observation> equal{{0.5, 0.3}, {1.5, 0.3}, {-0.2, 0.3}, {2.2, 0.3}};
    CHECK(fit_pooled(equal).mu0 == doctest::Approx((0.5 + 1.5 - 0.2 + 2.2) / 4.0).epsilon(1e-12));

    const std::vector<Observation> pair{{1.0, 1.0}, {3.0, 1.0}};
    CHECK(pooled_mean(pair, 0.0) == doctest::Approx(2.0));

    // no between-study spread: tau2 sits on the floor
    const std::vector<Observation> tight{{1.0, 4.0}, {1.1, 4.0}, {0.9, 4.0}};
    CHECK(fit_pooled(tight).tau2 == 1e-10);

    CHECK_THROWS_AS(fit_pooled(std::vector<Observation>{{1.0, 1.0}}), aes::DataError);
}

TEST_CASE("pooled MLE matches a brute-force likelihood grid") {
    std::mt19937_64 rng(43);
    std::normal_distribution<double> z(0.0, 1.0);
    std::uniform_real_distribution<double> s(0.05, 0.5);
    std::vector<Observation> data(20);
    for (auto& o : data) {
        o.se2 = s(rng);
        o.effect = 0.8 + std::sqrt(0.6 + o.se2) * z(rng);
    }
    auto loglik = [&](double mu, double tau2) {
        double acc = 0.0;
        for (const auto& o : data) acc += std::log(oracle_density(o.effect, o.se2 + tau2, mu));
        return acc;
    };
    double best = -1e300, best_mu = 0, best_tau2 = 0;
    const int n = 1000;
    for (int a = 0; a <= n; ++a) {
        for (int b = 0; b <= n; ++b) {
            const double mu = -1.0 + 3.0 * a / n;
            const double tau2 = 1e-6 + 3.0 * b / n;
            const double val = loglik(mu, tau2);
            if (val > best) {
                best = val;
                best_mu = mu;
                best_tau2 = tau2;
            }
        }
    }
    const auto f = fit_pooled(data);
    CHECK(loglik(f.mu0, f.tau2) >= best - 1e-12);
    CHECK(std::fabs(f.mu0 - best_mu) <= 2 * 3.0 / n);
    CHECK(std::fabs(f.tau2 - best_tau2) <= 2 * 3.0 / n);
}

TEST_CASE("K = 1 EM agrees with the pooled MLE") {
    std::mt19937_64 rng(47);
    for (int rep = 0; rep < 5; ++rep) {
        const auto data = draw_mixture(rng, 80, params({1.0}, {0.5}, {0.4}), true);
        FitConfig cfg;
        cfg.K = 1;
        cfg.fix_flat_mean = false;
        cfg.penalized = false;
        cfg.tolerance = 1e-14;
        cfg.max_iterations = 5000;
        cfg.n_starts = 2;
        const auto em = fit(data, cfg);
        const auto pooled = fit_pooled(data);
        CHECK(std::fabs(em.params.means[0] - pooled.mu0) < 1e-6);
        CHECK(std::fabs(em.params.comp_vars[0] - pooled.tau2) < 1e-6);
    }
}

TEST_CASE("extract_aes") {
    CHECK(extract_aes(params({0.2, 0.6, 0.2}, {2.1, 0.0, -1.9}, {1, 1, 1})) == 2.1);
    CHECK(extract_aes(params({0.1, 0.3, 0.4, 0.2}, {3.0, 1.0, 0.0, -2.0}, {1, 1, 1, 1})) ==
          doctest::Approx(1.5).epsilon(1e-14));
    CHECK_THROWS_AS(extract_aes(params({0.5, 0.5, 0.0}, {0.0, -0.1, -2.0}, {1, 1, 1})), aes::EstimationError);
    CHECK_THROWS_AS(extract_aes(params({0.2, 0.6, 0.2}, {-0.5, 0.0, -1.9}, {1, 1, 1})), aes::EstimationError);
    CHECK_THROWS_AS(extract_aes(params({0.3, 0.3, 0.2, 0.2}, {0.0, -0.5, -1.0, -2.0}, {1, 1, 1, 1})),
                    aes::EstimationError);
}
