#include <cmath>
#include <random>

#include <boost/math/distributions/normal.hpp>
#include <boost/math/distributions/students_t.hpp>
#include <boost/math/special_functions/beta.hpp>

#include "aes/errors.hpp"
#include "aes/stats.hpp"
#include "doctest.h"

using namespace aes::stats;

TEST_CASE("normal cdf symmetry and known quantile") {
    CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
    for (double x : {0.5, 1.0, 3.0}) CHECK(normal_cdf(-x) + normal_cdf(x) == doctest::Approx(1.0).epsilon(1e-15));
    // scipy.stats.norm.ppf(0.975)
    CHECK(std::fabs(normal_quantile(0.975) - 1.959963984540054) < 1e-12);
}

TEST_CASE("normal quantile rejects the closed endpoints") {
    CHECK_THROWS_AS(normal_quantile(0.0), aes::DomainError);
    CHECK_THROWS_AS(normal_quantile(1.0), aes::DomainError);
    CHECK_THROWS_AS(normal_quantile(-0.1), aes::DomainError);
}

TEST_CASE("normal quantile round trip and boost agreement") {
    boost::math::normal_distribution<double> ref;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(1e-6, 1.0 - 1e-6);
    for (int i = 0; i < 5000; ++i) {
        const double q = u(rng);
        const double x = normal_quantile(q);
        CHECK(std::fabs(normal_cdf(x) - q) < 1e-9);
        CHECK(std::fabs(x - boost::math::quantile(ref, q)) < 1e-9 * (1.0 + std::fabs(x)));
    }
    for (double q : {1e-6, 1e-12, 1e-300, 1.0 - 1e-6}) {
        CHECK(normal_quantile(q) == doctest::Approx(boost::math::quantile(ref, q)).epsilon(1e-12));
    }
}

TEST_CASE("normal cdf is monotone") {
    double prev = 0.0;
    for (double x = -10.0; x <= 10.0; x += 0.01) {
        const double c = normal_cdf(x);
        CHECK(c >= prev);
        prev = c;
    }
}

TEST_CASE("incomplete beta matches boost") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> shape(0.05, 2000.0);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (int i = 0; i < 2000; ++i) {
        const double a = shape(rng);
        const double b = (i % 2 == 0) ? 0.5 : shape(rng);
        const double x = unit(rng);
        CHECK(std::fabs(incomplete_beta(a, b, x) - boost::math::ibeta(a, b, x)) < 1e-10);
    }
    CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
    CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
    CHECK_THROWS_AS(incomplete_beta(-1.0, 3.0, 0.5), aes::DomainError);
}

TEST_CASE("student t cdf matches boost to 1e-10") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> tdist(-12.0, 12.0);
    std::uniform_real_distribution<double> dfdist(0.5, 5000.0);
    for (int i = 0; i < 2000; ++i) {
        const double t = tdist(rng);
        const double df = dfdist(rng);
        boost::math::students_t_distribution<double> ref(df);
        CHECK(std::fabs(student_t_cdf(t, df) - boost::math::cdf(ref, t)) < 1e-10);
        CHECK(std::fabs(student_t_sf(t, df) - boost::math::cdf(boost::math::complement(ref, t))) < 1e-10);
    }
}

TEST_CASE("power examples") {
    for (double se : {0.1, 1.0, 7.5})
        for (double alpha : {0.01, 0.05, 0.2}) CHECK(std::fabs(power(0.0, se, alpha) - alpha) < 1e-9);
    // delta/se = z_{0.95} + z_{0.80}
    CHECK(power(2.4865, 1.0, 0.05) == doctest::Approx(0.80).epsilon(1e-3));
    // scipy: norm.cdf(norm.ppf(0.05) + 0.15/sqrt(2/1000)) = 0.9562975209020741
    CHECK(std::fabs(power(0.15, std::sqrt(2.0 / 1000.0), 0.05) - 0.9562975209020741) < 1e-9);
    CHECK_THROWS_AS(power(1.0, 0.0, 0.05), aes::DomainError);
    CHECK_THROWS_AS(power(1.0, -1.0, 0.05), aes::DomainError);
}

TEST_CASE("power is increasing in delta and decreasing in se") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-3.0, 3.0);
    std::uniform_real_distribution<double> s(0.05, 5.0);
    for (int i = 0; i < 1000; ++i) {
        const double a = d(rng), b = d(rng), se = s(rng);
        if (a == b) continue;
        const double lo = std::min(a, b), hi = std::max(a, b);
        CHECK(power(lo, se, 0.05) <= power(hi, se, 0.05));
        const double delta = std::fabs(a) + 0.01;
        const double se1 = s(rng), se2 = s(rng);
        CHECK(power(delta, std::min(se1, se2), 0.05) >= power(delta, std::max(se1, se2), 0.05));
    }
}

TEST_CASE("welch test against scipy reference values") {
    struct Case {
        double mt, vt;
        long long nt;
        double mc, vc;
        long long nc;
        double t, df, p;
    };
    // scipy.stats.t.sf(t, df) with the Welch-Satterthwaite df
    const Case cases[] = {
        {1.2, 4.0, 50, 0.5, 3.0, 60, 1.9414506867883017, 97.69626074785043, 0.02754237732680562},
        {0.3, 1.5, 12, 0.1, 0.9, 9, 0.4216370213557839, 18.95744680851064, 0.33901623701592637},
        {-0.4, 2.0, 30, 0.2, 5.0, 25, -1.1618950038622253, 39.07368421052631, 0.8738368009105534},
        {2.0, 10.0, 5, 0.0, 0.5, 40, 1.4098147537004828, 4.0501400234774705, 0.11528069736086748},
    };
    for (const auto& c : cases) {
        const auto r = welch_test(c.mt, c.vt, c.nt, c.mc, c.vc, c.nc, 0.05);
        CHECK(std::fabs(r.t_stat - c.t) < 1e-12);
        CHECK(std::fabs(r.df - c.df) < 1e-9);
        CHECK(std::fabs(r.p_value - c.p) < 1e-6);
    }
    CHECK(welch_test(1.2, 4.0, 50, 0.5, 3.0, 60, 0.05).launch);
}

TEST_CASE("welch test edge cases") {
    const auto same = welch_test(1.0, 2.0, 20, 1.0, 2.0, 20, 0.05);
    CHECK(same.t_stat == 0.0);
    CHECK(same.p_value == doctest::Approx(0.5).epsilon(1e-12));
    CHECK_FALSE(same.launch);

    const auto neg = welch_test(-5.0, 1.0, 100, 5.0, 1.0, 100, 0.05);
    CHECK_FALSE(neg.launch);
    CHECK(neg.p_value > 0.99);

    CHECK_THROWS_AS(welch_test(1.0, 0.0, 10, 0.0, 0.0, 10, 0.05), aes::DomainError);
    CHECK_THROWS_AS(welch_test(1.0, 1.0, 1, 0.0, 1.0, 10, 0.05), aes::DomainError);
}

TEST_CASE("welch test swapping arms negates t and reflects p") {
    std::mt19937_64 rng(9);
    std::uniform_real_distribution<double> m(-2.0, 2.0);
    std::uniform_real_distribution<double> v(0.1, 10.0);
    std::uniform_int_distribution<long long> n(2, 500);
    for (int i = 0; i < 500; ++i) {
        const double mt = m(rng), mc = m(rng), vt = v(rng), vc = v(rng);
        const long long nt = n(rng), nc = n(rng);
        const auto a = welch_test(mt, vt, nt, mc, vc, nc, 0.05);
        const auto b = welch_test(mc, vc, nc, mt, vt, nt, 0.05);
        CHECK(a.t_stat == doctest::Approx(-b.t_stat).epsilon(1e-12));
        CHECK(std::fabs(a.p_value - (1.0 - b.p_value)) < 1e-12);
    }
}

TEST_CASE("z decision") {
    const auto zero = z_decision(0.0, 2.0, 0.05);
    CHECK(zero.p_value == doctest::Approx(0.5));
    CHECK_FALSE(zero.launch);

    // exactly at the critical value: p == alpha is not a launch
    const double z95 = -normal_quantile(0.05);
    const auto boundary = z_decision(z95, 1.0, 0.05);
    CHECK(boundary.p_value == doctest::Approx(0.05).epsilon(1e-12));
    CHECK_FALSE(boundary.launch);

    const auto strong = z_decision(3.0, 1.0, 0.05);
    CHECK(strong.p_value == doctest::Approx(0.0013498980316301).epsilon(1e-9));
    CHECK(strong.launch);

    CHECK_THROWS_AS(z_decision(1.0, 0.0, 0.05), aes::DomainError);
}
