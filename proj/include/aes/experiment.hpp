#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace aes {

enum class Arm { Treatment, Control };

enum class Label { Positive, Flat, Negative };

std::string_view to_string(Label label);
std::optional<Label> parse_label(std::string_view text);

/// Weekly cumulative summaries of one arm. Index t-1 holds week t.
/// All three vectors empty: arm detail unavailable (effect-only record).
struct ArmWeekly {
    Arm arm = Arm::Treatment;
    std::vector<std::int64_t> cumulative_n;
    std::vector<std::optional<double>> cumulative_mean;
    std::vector<std::optional<double>> cumulative_var;

    bool has_summaries(int week) const;

    bool operator==(const ArmWeekly&) const = default;
};

/// One historical experiment observed weekly for `weeks` weeks.
struct ExperimentRecord {
    std::string id;
    int weeks = 0;
    ArmWeekly treatment{Arm::Treatment, {}, {}, {}};
    ArmWeekly control{Arm::Control, {}, {}, {}};
    std::vector<double> observed_effect;  // d_{i,t}
    std::vector<double> effect_se2;       // variance of d_{i,t}
    double weekly_cost = 0.0;
    std::optional<Label> latent_label;    // simulated corpora only

    double final_effect() const { return observed_effect.back(); }
    double final_se2() const { return effect_se2.back(); }

    /// Throws DataError naming the record and week on any invariant violation.
    void validate() const;

    bool operator==(const ExperimentRecord&) const = default;
};

enum class DecisionRule { WelchOneSided, ZTestOneSided };

struct PowerPolicy {
    double alpha = 0.05;
    double target_power = 0.80;
    int max_weeks = 4;
    DecisionRule decision_rule = DecisionRule::ZTestOneSided;

    void validate() const;
};

struct DurationRecommendation {
    int weeks = 0;
    bool attained = false;
};

/// Smallest week whose power at `aes` reaches the target, else
/// (max_weeks, attained = false).
DurationRecommendation recommend_duration(const ExperimentRecord& exp, double aes,
                                          const PowerPolicy& policy);

/// Launch decision using week `week` (1-based) data under the policy's rule.
bool launch_decision(const ExperimentRecord& exp, int week, const PowerPolicy& policy);

}  // namespace aes
