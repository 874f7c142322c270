#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "aes/experiment.hpp"
#include "aes/mixture.hpp"

namespace aes::sim {

using Rng = std::mt19937_64;

// Component j uses means[j], variance/sd[j], weights[j]. Labels follow the
// sign of the component mean.

struct AccuracySimConfig {
    int m = 200;
    std::array<double, 3> means{2.0, 0.0, -2.0};
    std::array<double, 3> comp_vars{0.25, 0.25, 0.25};
    std::array<double, 3> weights{0.2, 0.6, 0.2};
    double se2_shape = 3.0;
    double se2_scale = 0.7;
    int replications = 50;
    std::uint64_t seed = 0;

    void validate() const;
    /// Mean of the component with the largest mean (the AES to recover).
    double true_aes() const;
};

struct TrajectorySimConfig {
    int m = 3000;
    int weeks = 4;
    std::int64_t customers_per_arm = 10000;
    std::array<double, 2> beta_a_range{0.1, 1.0};
    std::array<double, 2> beta_b_range{4.0, 60.0};
    std::array<double, 3> means{-1.0, 0.0, 1.0};
    std::array<double, 3> comp_sds{0.3, 0.5, 0.3};
    std::array<double, 3> weights{0.2, 0.6, 0.2};
    double outcome_var = 500.0;
    double total_weekly_cost = 4e6;
    std::uint64_t seed = 0;

    void validate() const;
    double true_aes() const;
};

struct AccuracyDraw {
    meta::Observation obs;
    Label label = Label::Flat;
    int component = 0;
    double delta = 0.0;
};

/// 1/X with X ~ Gamma(shape, rate = scale), i.e. Inverse-Gamma(shape, scale).
double sample_inverse_gamma(double shape, double scale, Rng& rng);

/// P(trigger week <= t) = 1 - prod_{k=1..t} (b+k-1)/(a+b+k-1).
double beta_geometric_cumfrac(double a, double b, int t);

Label label_for_mean(double mean);

std::vector<AccuracyDraw> simulate_accuracy_corpus(const AccuracySimConfig& cfg, Rng& rng);

/// Replication r drawn from an engine seeded with sub_seed(cfg.seed, r).
std::vector<AccuracyDraw> simulate_accuracy_replication(const AccuracySimConfig& cfg, int replication);

/// Single-week, effect-only records (no arm detail).
std::vector<ExperimentRecord> to_records(const std::vector<AccuracyDraw>& draws);

struct TrajectoryDraw {
    ExperimentRecord record;  // weekly_cost left at 0
    double delta = 0.0;
    double a = 0.0;
    double b = 0.0;
};

/// One experiment; the engine is seeded with sub_seed(cfg.seed, index).
TrajectoryDraw simulate_trajectory_experiment(const TrajectorySimConfig& cfg, int index);

/// All m experiments with costs split by final-week sample size.
std::vector<ExperimentRecord> simulate_trajectory_corpus(const TrajectorySimConfig& cfg, unsigned threads = 1);

std::string experiment_id(int index);

}  // namespace aes::sim
