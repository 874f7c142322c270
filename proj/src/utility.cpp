#include "aes/utility.hpp"

#include "aes/errors.hpp"
#include "aes/parallel.hpp"

namespace aes::utility {

std::vector<double> UtilityConfig::default_grid() {
    std::vector<double> grid;
    for (int k = 1; k <= 50; ++k) grid.push_back(k / 10.0);
    return grid;
}

void UtilityConfig::validate() const {
    if (horizon_weeks < 1) throw ConfigError("utility config: horizon_weeks must be positive");
    if (grid.empty()) throw ConfigError("utility config: grid is empty");
    for (std::size_t i = 0; i < grid.size(); ++i) {
        if (!(grid[i] > 0.0)) throw ConfigError("utility config: grid values must be strictly positive");
        if (i > 0 && !(grid[i] > grid[i - 1])) throw ConfigError("utility config: grid must be strictly increasing");
    }
    if (policy.max_weeks > horizon_weeks) throw ConfigError("utility config: max_weeks exceeds the horizon");
    policy.validate();
}

double launch_impact_u2(double d_prime, int horizon, int week, std::int64_t n_total) {
    if (week < 1 || week > horizon) throw DomainError("launch_impact_u2: week must lie in [1, H]");
    if (n_total < 0) throw DomainError("launch_impact_u2: customer count must be non-negative");
    return d_prime * static_cast<double>(horizon - week) * static_cast<double>(n_total);
}

RewardBreakdown evaluate_reward(const ExperimentRecord& exp, double aes, const UtilityConfig& cfg) {
    if (exp.observed_effect.empty() || exp.weeks < 1)
        throw DataError("experiment '" + exp.id + "': missing final-week effect");
    if (exp.treatment.cumulative_n.empty() || exp.control.cumulative_n.empty())
        throw DataError("experiment '" + exp.id + "': reward needs weekly arm counts");
    const auto rec = recommend_duration(exp, aes, cfg.policy);
    const int T = rec.weeks;
    const auto idx = static_cast<std::size_t>(T - 1);
    const double d_prime = exp.final_effect();

    RewardBreakdown out;
    out.experiment_id = exp.id;
    out.duration = T;
    out.opportunity_cost = -exp.weekly_cost * static_cast<double>(T - 1);
    out.in_experiment_impact = d_prime * static_cast<double>(exp.treatment.cumulative_n[idx]);
    out.launched = launch_decision(exp, T, cfg.policy);
    out.launch_impact =
        out.launched ? launch_impact_u2(d_prime, cfg.horizon_weeks, T,
                                        exp.treatment.cumulative_n[idx] + exp.control.cumulative_n[idx])
                     : 0.0;
    out.total = out.opportunity_cost + out.in_experiment_impact + out.launch_impact;
    return out;
}

UtilityOptimum optimize_aes(std::span<const ExperimentRecord> corpus, const UtilityConfig& cfg, unsigned threads) {
    if (corpus.empty()) throw ConfigError("optimize_aes: corpus is empty");
    cfg.validate();

    UtilityOptimum out;
    out.profile.resize(cfg.grid.size());
    parallel_for(cfg.grid.size(), threads, [&](std::size_t g) {
        double sum = 0.0;
        for (const auto& exp : corpus) sum += evaluate_reward(exp, cfg.grid[g], cfg).total;
        out.profile[g] = {cfg.grid[g], sum / static_cast<double>(corpus.size())};
    });
    for (std::size_t g = 1; g < out.profile.size(); ++g)
        if (out.profile[g].mean_reward > out.profile[out.best_index].mean_reward) out.best_index = g;
    out.best_aes = out.profile[out.best_index].aes;
    return out;
}

}  // namespace aes::utility
