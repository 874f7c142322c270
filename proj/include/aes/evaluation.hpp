#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "aes/experiment.hpp"
#include "aes/mixture.hpp"
#include "aes/simulation.hpp"
#include "aes/utility.hpp"

namespace aes::eval {

enum class Method { PooledMLE, TwoLayerGMM, ThreeLayerGMM, UtilityMax };

std::string_view to_string(Method method);
std::optional<Method> parse_method(std::string_view text);
std::vector<Method> all_methods();

/// Which experiments feed the pooled estimator.
enum class PooledFilter { PositiveObserved, All, PositiveLabel };

/// Where FP/FN truth comes from. Auto: latent labels when every record has
/// one, else the empirical rule.
enum class TruthSource { Auto, Latent, Empirical };

/// Empirical positive: the decision rule launches on final-week data, or
/// (Sign) the final observed effect is > 0.
enum class EmpiricalRule { FinalWeekDecision, Sign };

std::string_view to_string(PooledFilter f);
std::string_view to_string(TruthSource t);
std::string_view to_string(EmpiricalRule r);
std::optional<PooledFilter> parse_pooled_filter(std::string_view text);
std::optional<TruthSource> parse_truth_source(std::string_view text);
std::optional<EmpiricalRule> parse_empirical_rule(std::string_view text);

struct EstimatorConfig {
    meta::FitConfig three_layer = meta::FitConfig::three_layer();
    meta::FitConfig two_layer = meta::FitConfig::two_layer();
    PooledFilter pooled_filter = PooledFilter::PositiveObserved;
    unsigned threads = 1;
};

/// Estimator settings for the trajectory comparison: the pooled estimator
/// sees every final-week effect.
inline EstimatorConfig trajectory_estimators() {
    EstimatorConfig cfg;
    cfg.pooled_filter = PooledFilter::All;
    return cfg;
}

struct ComparisonConfig {
    std::vector<Method> methods = all_methods();
    EstimatorConfig estimators = trajectory_estimators();
    utility::UtilityConfig utility;  // its policy drives durations and decisions
    TruthSource truth_source = TruthSource::Auto;
    EmpiricalRule empirical_rule = EmpiricalRule::FinalWeekDecision;

    void validate() const;
};

struct MethodRow {
    std::string method;
    bool ok = true;
    std::string error;
    double estimated_aes = 0.0;
    double fp_rate = 0.0;
    double fn_rate = 0.0;
    double avg_weeks = 0.0;
    double avg_opportunity_cost = 0.0;
    double avg_launch_impact = 0.0;
    double avg_in_experiment_impact = 0.0;
    double avg_reward = 0.0;
};

struct EvaluationReport {
    std::vector<MethodRow> rows;
    std::vector<utility::ProfilePoint> utility_profile;  // empty unless UtilityMax ran
    TruthSource truth_used = TruthSource::Latent;
};

struct AccuracyRow {
    std::string method;
    double mse = 0.0;
    double mae = 0.0;
    std::vector<double> estimates;  // NaN where the fit failed
    int failures = 0;
    std::vector<std::string> errors;
};

struct AccuracyReport {
    double truth = 0.0;
    std::vector<AccuracyRow> rows;
};

struct ErrorMetrics {
    double mse = 0.0;
    double mae = 0.0;
};

struct DecisionErrors {
    double fp_rate = 0.0;
    double fn_rate = 0.0;
};

struct TTestResult {
    double t_stat = 0.0;
    double df = 0.0;
    double p_value = 1.0;  // two-sided
};

struct Histogram {
    std::vector<double> edges;  // bins + 1, increasing
    std::vector<std::int64_t> counts;
};

ErrorMetrics accuracy_metrics(std::span<const double> estimates, double truth);

/// Rates over all m experiments: FP = launch and truth not positive,
/// FN = no launch and truth positive.
DecisionErrors decision_errors(std::span<const std::optional<Label>> truth, const std::vector<bool>& launched);

/// Student two-sample t-test with pooled variance.
TTestResult two_sample_ttest(std::span<const double> a, std::span<const double> b);

/// Equal-width bins over [min, max]; the last bin is closed.
Histogram histogram(std::span<const double> values, int bins = 60);

/// Final-week (d, se2) of every record.
std::vector<meta::Observation> final_week_observations(std::span<const ExperimentRecord> corpus);

/// Truth labels under the config's source and rule.
std::vector<std::optional<Label>> truth_labels(std::span<const ExperimentRecord> corpus, const ComparisonConfig& cfg,
                                               TruthSource* used = nullptr);

/// AES from one estimator on final-week effects. `labels` is only consulted by
/// the PositiveLabel pooled filter.
double estimate_aes(Method method, std::span<const meta::Observation> data,
                    std::span<const std::optional<Label>> labels, const EstimatorConfig& cfg);

/// Decision and reward metrics for one fixed AES.
MethodRow score_aes(std::span<const ExperimentRecord> corpus, std::string name, double aes,
                    std::span<const std::optional<Label>> truth, const ComparisonConfig& cfg);

/// Fits every requested method and scores it. A failing method yields a row
/// with ok = false; the others still report.
EvaluationReport run_comparison(std::span<const ExperimentRecord> corpus, const ComparisonConfig& cfg);

/// Simulates cfg.replications corpora and records each method's AES.
AccuracyReport run_accuracy_study(const sim::AccuracySimConfig& sim_cfg, std::span<const Method> methods,
                                  const EstimatorConfig& est, unsigned threads = 1);

}  // namespace aes::eval
