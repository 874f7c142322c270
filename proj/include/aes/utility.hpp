#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "aes/experiment.hpp"

namespace aes::utility {

enum class PosteriorEffectSource { FinalWeekObserved };

struct UtilityConfig {
    int horizon_weeks = 52;
    std::vector<double> grid = default_grid();
    PowerPolicy policy;
    PosteriorEffectSource posterior_effect_source = PosteriorEffectSource::FinalWeekObserved;

    void validate() const;

    /// {0.1, 0.2, ..., 5.0}
    static std::vector<double> default_grid();
};

struct RewardBreakdown {
    std::string experiment_id;
    int duration = 0;
    bool launched = false;
    double opportunity_cost = 0.0;
    double in_experiment_impact = 0.0;
    double launch_impact = 0.0;
    double total = 0.0;
};

/// Launch impact over the remaining horizon: d' * (H - t) * n_total.
double launch_impact_u2(double d_prime, int horizon, int week, std::int64_t n_total);

/// Reward of running `exp` for the duration recommended at `aes`:
/// -c (T - 1) + d' N_T(T) + u2(d', H, T) * launch(T).
RewardBreakdown evaluate_reward(const ExperimentRecord& exp, double aes, const UtilityConfig& cfg);

struct ProfilePoint {
    double aes = 0.0;
    double mean_reward = 0.0;
};

struct UtilityOptimum {
    double best_aes = 0.0;
    std::size_t best_index = 0;
    std::vector<ProfilePoint> profile;
};

/// Grid search of the corpus-average reward. Ties resolve to the smallest AES.
UtilityOptimum optimize_aes(std::span<const ExperimentRecord> corpus, const UtilityConfig& cfg,
                            unsigned threads = 1);

}  // namespace aes::utility
