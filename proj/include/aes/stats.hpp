#pragma once

// Scalar distribution functions and one-sided test statistics.

namespace aes::stats {

double normal_pdf(double x);
double normal_log_pdf(double x, double mean, double variance);

/// Standard normal CDF.
double normal_cdf(double x);

/// Inverse of normal_cdf. Throws DomainError unless 0 < q < 1.
double normal_quantile(double q);

/// Regularized incomplete beta I_x(a, b), continued-fraction evaluation.
double incomplete_beta(double a, double b, double x);

double student_t_cdf(double t, double df);

/// Upper tail 1 - F(t), evaluated without cancellation.
double student_t_sf(double t, double df);

/// One-sided normal-approximation power Phi(z_alpha + delta / se), with
/// z_alpha = Phi^{-1}(alpha) so that power(0, se, alpha) == alpha.
double power(double delta, double se, double alpha);

struct WelchResult {
    double t_stat = 0.0;
    double df = 0.0;
    double p_value = 0.0;
    bool launch = false;
};

/// One-sided (upper tail) Welch two-sample t-test from arm summaries.
/// launch = p < alpha && mean_t > mean_c.
WelchResult welch_test(double mean_t, double var_t, long long n_t,
                       double mean_c, double var_c, long long n_c, double alpha);

struct ZDecision {
    double z = 0.0;
    double p_value = 0.0;
    bool launch = false;
};

/// Known-variance one-sided z-test of an observed effect d with variance se2.
ZDecision z_decision(double d, double se2, double alpha);

}  // namespace aes::stats
