#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace aes::meta {

/// One observed effect d_i with its known sampling variance sigma_i^2.
struct Observation {
    double effect = 0.0;
    double se2 = 0.0;
};

/// Mixture of K Gaussians over true effects. Components are kept in
/// decreasing-mean order; when the flat mean is pinned, the pinned component
/// sits at FitConfig::flat_index() with mean exactly 0.
struct MixtureParams {
    std::vector<double> weights;
    std::vector<double> means;
    std::vector<double> comp_vars;
    double penalized_loglik = -std::numeric_limits<double>::infinity();
    int n_iterations = 0;
    bool converged = false;

    int K() const { return static_cast<int>(weights.size()); }
    void validate() const;
};

/// Row-major m x K matrix of posterior component probabilities.
class Responsibilities {
public:
    Responsibilities() = default;
    Responsibilities(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), values_(rows * cols) {}

    std::size_t rows() const { return rows_; }
    std::size_t cols() const { return cols_; }
    double& operator()(std::size_t i, std::size_t k) { return values_[i * cols_ + k]; }
    double operator()(std::size_t i, std::size_t k) const { return values_[i * cols_ + k]; }
    std::span<const double> row(std::size_t i) const { return {values_.data() + i * cols_, cols_}; }

    /// Largest |row sum - 1| over all rows.
    double max_row_sum_error() const;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> values_;
};

struct FitConfig {
    int K = 3;
    bool fix_flat_mean = true;
    bool heteroscedastic = true;
    bool penalized = true;
    double tolerance = 1e-3;  // on change of penalized log-likelihood per observation
    int max_iterations = 500;
    int n_starts = 10;
    bool kmeans_start = true;
    double inner_tolerance = 1e-8;
    double var_floor = 1e-10;
    std::uint64_t seed = 0;

    void validate() const;

    /// Slot of the pinned flat component, if any.
    std::optional<std::size_t> flat_index() const;

    /// Three-layer heteroscedastic model with mu_2 = 0 pinned.
    static FitConfig three_layer();
    /// Classical GMM over observed effects (sampling variances ignored).
    static FitConfig two_layer();
};

/// Density of N(mu, tau2 + se2) at d.
double component_density(double d, double se2, double mu, double tau2);

/// Replaces every se2 with 0 when the config is not heteroscedastic.
std::vector<Observation> model_view(std::span<const Observation> data, const FitConfig& cfg);

Responsibilities e_step(std::span<const Observation> data, const MixtureParams& params);

MixtureParams m_step(std::span<const Observation> data, const Responsibilities& resp,
                     const MixtureParams& prev, const FitConfig& cfg);

/// Marginal mixture log-likelihood, minus (1/m) sum_k (1/tau2_k + log tau2_k)
/// when penalized.
double penalized_loglik(std::span<const Observation> data, const MixtureParams& params, bool penalized);

/// Diagnostics for one EM run from one starting point.
struct RunTrace {
    std::size_t start_index = 0;
    bool from_kmeans = false;
    bool failed = false;
    std::string failure;
    std::vector<double> loglik;  // entry 0 is the starting point
    double max_row_sum_error = 0.0;
    double max_weight_sum_error = 0.0;
    double min_comp_var = std::numeric_limits<double>::infinity();
    MixtureParams params;
};

struct FitResult {
    MixtureParams params;
    Responsibilities resp;
    std::vector<RunTrace> runs;
    std::size_t best_run = 0;
};

/// One EM run from a fixed starting point. `data` is used as given (call
/// model_view first for the two-layer model). Returns params in canonical order.
FitResult em_run(std::span<const Observation> data, const FitConfig& cfg, const MixtureParams& init);

/// Starting point from 1-D k-means on the effects, or nullopt when the
/// clustering degenerates (empty, singleton or zero-spread clusters).
std::optional<MixtureParams> kmeans_init(std::span<const Observation> data, const FitConfig& cfg);

/// Seeded random starting point for start `start_index`.
MixtureParams random_init(std::span<const Observation> data, const FitConfig& cfg, std::size_t start_index);

/// Multi-start penalized EM. Deterministic in (data, cfg) regardless of threads.
FitResult fit(std::span<const Observation> data, const FitConfig& cfg, unsigned threads = 1);

struct PooledFit {
    double mu0 = 0.0;
    double tau2 = 0.0;
    double loglik = 0.0;
};

/// Random-effects MLE of (mu0, tau2) under d_i ~ N(mu0, tau2 + se2_i), by
/// maximizing the profile likelihood in tau2. tau2 is floored at var_floor.
PooledFit fit_pooled(std::span<const Observation> data, double var_floor = 1e-10);

/// Inverse-variance weighted mean of the effects for a fixed tau2.
double pooled_mean(std::span<const Observation> data, double tau2);

/// mu_1 for K <= 3; for larger K the weight-averaged mean of all positive
/// components. Throws EstimationError when no component mean is positive.
double extract_aes(const MixtureParams& params);

}  // namespace aes::meta
