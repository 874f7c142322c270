#include "aes/stats.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "aes/errors.hpp"

namespace aes::stats {

namespace {

constexpr double kInvSqrt2Pi = 0.398942280401432677939946059934;

// Modified Lentz evaluation of the incomplete beta continued fraction.
double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIterations = 10000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;

    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIterations; ++m) {
        const double m2 = 2.0 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) return h;
    }
    throw NumericalError("incomplete beta continued fraction did not converge");
}

double polynomial(const double* coeffs, int n, double x) {
    double acc = coeffs[n - 1];
    for (int i = n - 2; i >= 0; --i) acc = acc * x + coeffs[i];
    return acc;
}

}  // namespace

double normal_pdf(double x) { return kInvSqrt2Pi * std::exp(-0.5 * x * x); }

double normal_log_pdf(double x, double mean, double variance) {
    const double r = x - mean;
    return -0.5 * (std::log(2.0 * std::numbers::pi * variance) + r * r / variance);
}

double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

// Wichura's AS241 (PPND16), accurate to about 1e-16.
double normal_quantile(double q) {
    if (!(q > 0.0 && q < 1.0)) {
        throw DomainError("normal_quantile: probability must lie strictly inside (0, 1)");
    }
    static constexpr double a[] = {3.387132872796366608,   133.14166789178437745,
                                   1971.5909503065514427,  13731.693765509461125,
                                   45921.953931549871457,  67265.770927008700853,
                                   33430.575583588128105,  2509.0809287301226727};
    static constexpr double b[] = {1.0,                    42.313330701600911252,
                                   687.1870074920579083,   5394.1960214247511077,
                                   21213.794301586595867,  39307.89580009271061,
                                   28729.085735721942674,  5226.495278852545925};
    static constexpr double c[] = {1.42343711074968357734,   4.6303378461565452959,
                                   5.7694972214606914055,    3.64784832476320460504,
                                   1.27045825245236838258,   0.24178072517745061177,
                                   0.0227238449892691845833, 7.7454501427834140764e-4};
    static constexpr double d[] = {1.0,                      2.05319162663775882187,
                                   1.6763848301838038494,    0.68976733498510000455,
                                   0.14810397642748007459,   0.0151986665636164571966,
                                   5.475938084995344946e-4,  1.05075007164441684324e-9};
    static constexpr double e[] = {6.6579046435011037772,    5.4637849111641143699,
                                   1.7848265399172913358,    0.29656057182850489123,
                                   0.026532189526576123093,  0.0012426609473880784386,
                                   2.71155556874348757815e-5, 2.01033439929228813265e-7};
    static constexpr double f[] = {1.0,                       0.59983220655588793769,
                                   0.13692988092273580531,    0.0148753612908506148525,
                                   7.868691311456132591e-4,   1.8463183175100546818e-5,
                                   1.4215117583164458887e-7,  2.04426310338993978564e-15};

    const double p = q - 0.5;
    if (std::fabs(p) <= 0.425) {
        const double r = 0.180625 - p * p;
        return p * polynomial(a, 8, r) / polynomial(b, 8, r);
    }
    double r = p < 0.0 ? q : 1.0 - q;
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        value = polynomial(c, 8, r) / polynomial(d, 8, r);
    } else {
        r -= 5.0;
        value = polynomial(e, 8, r) / polynomial(f, 8, r);
    }
    return p < 0.0 ? -value : value;
}

double incomplete_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete_beta: shape parameters must be positive");
    if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta: x must lie in [0, 1]");
    if (x == 0.0) return 0.0;
    if (x == 1.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                             a * std::log(x) + b * std::log1p(-x);
    const double front = std::exp(log_front);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return front * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, double df) {
    if (!(df > 0.0)) throw DomainError("student_t: degrees of freedom must be positive");
    if (std::isinf(t)) return t > 0 ? 0.0 : 1.0;
    const double x = df / (df + t * t);
    const double half_tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t >= 0.0 ? half_tail : 1.0 - half_tail;
}

double student_t_cdf(double t, double df) {
    if (!(df > 0.0)) throw DomainError("student_t: degrees of freedom must be positive");
    if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
    const double x = df / (df + t * t);
    const double half_tail = 0.5 * incomplete_beta(0.5 * df, 0.5, x);
    return t >= 0.0 ? 1.0 - half_tail : half_tail;
}

double power(double delta, double se, double alpha) {
    if (!(se > 0.0)) throw DomainError("power: standard error must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("power: alpha must lie in (0, 1)");
    return normal_cdf(normal_quantile(alpha) + delta / se);
}

WelchResult welch_test(double mean_t, double var_t, long long n_t, double mean_c, double var_c,
                       long long n_c, double alpha) {
    if (n_t < 2 || n_c < 2) throw DomainError("welch_test: each arm needs at least 2 observations");
    if (var_t < 0.0 || var_c < 0.0) throw DomainError("welch_test: variances must be non-negative");
    if (var_t == 0.0 && var_c == 0.0) throw DomainError("welch_test: both arm variances are zero");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("welch_test: alpha must lie in (0, 1)");

    const double a = var_t / static_cast<double>(n_t);
    const double b = var_c / static_cast<double>(n_c);
    WelchResult out;
    out.t_stat = (mean_t - mean_c) / std::sqrt(a + b);
    out.df = (a + b) * (a + b) /
             (a * a / static_cast<double>(n_t - 1) + b * b / static_cast<double>(n_c - 1));
    out.p_value = student_t_sf(out.t_stat, out.df);
    out.launch = out.p_value < alpha && mean_t > mean_c;
    return out;
}

ZDecision z_decision(double d, double se2, double alpha) {
    if (!(se2 > 0.0)) throw DomainError("z_decision: effect variance must be positive");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("z_decision: alpha must lie in (0, 1)");
    ZDecision out;
    out.z = d / std::sqrt(se2);
    out.p_value = normal_cdf(-out.z);
    out.launch = out.p_value < alpha && d > 0.0;
    return out;
}

}  // namespace aes::stats
