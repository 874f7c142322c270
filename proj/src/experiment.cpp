#include "aes/experiment.hpp"

#include <cmath>
#include <string>

#include "aes/errors.hpp"
#include "aes/stats.hpp"

namespace aes {

std::string_view to_string(Label label) {
    switch (label) {
        case Label::Positive: return "positive";
        case Label::Flat: return "flat";
        case Label::Negative: return "negative";
    }
    return "flat";
}

std::optional<Label> parse_label(std::string_view text) {
    if (text == "positive") return Label::Positive;
    if (text == "flat") return Label::Flat;
    if (text == "negative") return Label::Negative;
    return std::nullopt;
}

bool ArmWeekly::has_summaries(int week) const {
    const auto idx = static_cast<std::size_t>(week - 1);
    return idx < cumulative_mean.size() && idx < cumulative_var.size() &&
           cumulative_mean[idx].has_value() && cumulative_var[idx].has_value();
}

namespace {

[[noreturn]] void fail(const ExperimentRecord& exp, int week, const std::string& what) {
    std::string msg = "experiment '" + exp.id + "'";
    if (week > 0) msg += " week " + std::to_string(week);
    throw DataError(msg + ": " + what);
}

void validate_arm(const ExperimentRecord& exp, const ArmWeekly& arm, const char* name) {
    const auto weeks = static_cast<std::size_t>(exp.weeks);
    if (arm.cumulative_n.empty()) {
        // effect-only record: no arm detail at all
        if (!arm.cumulative_mean.empty() || !arm.cumulative_var.empty())
            fail(exp, 0, std::string(name) + " arm has summaries but no counts");
        return;
    }
    if (arm.cumulative_n.size() != weeks) fail(exp, 0, std::string(name) + " arm has wrong number of weeks");
    if (!arm.cumulative_mean.empty() && arm.cumulative_mean.size() != weeks)
        fail(exp, 0, std::string(name) + " arm means have wrong length");
    if (!arm.cumulative_var.empty() && arm.cumulative_var.size() != weeks)
        fail(exp, 0, std::string(name) + " arm variances have wrong length");
    for (std::size_t t = 0; t < weeks; ++t) {
        const int week = static_cast<int>(t + 1);
        if (arm.cumulative_n[t] < 1) fail(exp, week, std::string(name) + " cumulative count must be positive");
        if (t > 0 && arm.cumulative_n[t] < arm.cumulative_n[t - 1])
            fail(exp, week, std::string(name) + " cumulative count decreased");
        if (!arm.cumulative_var.empty() && arm.cumulative_var[t] && !(*arm.cumulative_var[t] >= 0.0))
            fail(exp, week, std::string(name) + " variance must be non-negative");
    }
}

}  // namespace

void ExperimentRecord::validate() const {
    if (id.empty()) throw DataError("experiment record without id");
    if (weeks < 1) fail(*this, 0, "needs at least one week");
    const auto n = static_cast<std::size_t>(weeks);
    if (observed_effect.size() != n) fail(*this, 0, "observed effect series has wrong length");
    if (effect_se2.size() != n) fail(*this, 0, "effect variance series has wrong length");
    validate_arm(*this, treatment, "treatment");
    validate_arm(*this, control, "control");
    if (!(weekly_cost >= 0.0) || !std::isfinite(weekly_cost)) fail(*this, 0, "weekly cost must be finite and >= 0");

    for (std::size_t t = 0; t < n; ++t) {
        const int week = static_cast<int>(t + 1);
        if (!std::isfinite(observed_effect[t])) fail(*this, week, "observed effect is not finite");
        if (!(effect_se2[t] > 0.0) || !std::isfinite(effect_se2[t])) fail(*this, week, "effect variance must be positive");

        const bool var_t = !treatment.cumulative_var.empty() && treatment.cumulative_var[t];
        const bool var_c = !control.cumulative_var.empty() && control.cumulative_var[t];
        if (var_t && var_c) {
            const double implied = *treatment.cumulative_var[t] / static_cast<double>(treatment.cumulative_n[t]) +
                                   *control.cumulative_var[t] / static_cast<double>(control.cumulative_n[t]);
            if (std::fabs(implied - effect_se2[t]) > 1e-9 * std::fabs(effect_se2[t]))
                fail(*this, week, "effect variance disagrees with arm variances and counts");
        }
    }
}

void PowerPolicy::validate() const {
    if (!(alpha > 0.0 && alpha < target_power && target_power < 1.0))
        throw ConfigError("power policy requires 0 < alpha < target_power < 1");
    if (max_weeks < 1) throw ConfigError("power policy max_weeks must be positive");
}

DurationRecommendation recommend_duration(const ExperimentRecord& exp, double aes,
                                          const PowerPolicy& policy) {
    if (!(aes > 0.0)) throw DomainError("recommend_duration: assumed effect size must be positive");
    for (int week = 1; week <= policy.max_weeks; ++week) {
        const auto idx = static_cast<std::size_t>(week - 1);
        if (idx >= exp.effect_se2.size())
            throw DataError("experiment '" + exp.id + "' week " + std::to_string(week) + ": missing effect variance");
        if (stats::power(aes, std::sqrt(exp.effect_se2[idx]), policy.alpha) >= policy.target_power) {
            return {week, true};
        }
    }
    return {policy.max_weeks, false};
}

bool launch_decision(const ExperimentRecord& exp, int week, const PowerPolicy& policy) {
    if (week < 1 || week > exp.weeks)
        throw DataError("experiment '" + exp.id + "' week " + std::to_string(week) + ": no data for decision");
    const auto idx = static_cast<std::size_t>(week - 1);
    if (policy.decision_rule == DecisionRule::ZTestOneSided) {
        return stats::z_decision(exp.observed_effect[idx], exp.effect_se2[idx], policy.alpha).launch;
    }
    if (!exp.treatment.has_summaries(week) || !exp.control.has_summaries(week))
        throw DataError("experiment '" + exp.id + "' week " + std::to_string(week) +
                        ": Welch decision needs arm means and variances");
    return stats::welch_test(*exp.treatment.cumulative_mean[idx], *exp.treatment.cumulative_var[idx],
                             exp.treatment.cumulative_n[idx], *exp.control.cumulative_mean[idx],
                             *exp.control.cumulative_var[idx], exp.control.cumulative_n[idx], policy.alpha)
        .launch;
}

}  // namespace aes
