#include "aes/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "aes/errors.hpp"
#include "aes/parallel.hpp"
#include "aes/stats.hpp"

namespace aes::eval {

std::string_view to_string(Method method) {
    switch (method) {
        case Method::PooledMLE: return "pooled_mle";
        case Method::TwoLayerGMM: return "two_layer_gmm";
        case Method::ThreeLayerGMM: return "three_layer_gmm";
        case Method::UtilityMax: return "utility_max";
    }
    return "unknown";
}

std::optional<Method> parse_method(std::string_view text) {
    if (text == "pooled_mle" || text == "pooled") return Method::PooledMLE;
    if (text == "two_layer_gmm" || text == "gmm2") return Method::TwoLayerGMM;
    if (text == "three_layer_gmm" || text == "gmm3") return Method::ThreeLayerGMM;
    if (text == "utility_max" || text == "utility") return Method::UtilityMax;
    return std::nullopt;
}

std::vector<Method> all_methods() {
    return {Method::PooledMLE, Method::TwoLayerGMM, Method::ThreeLayerGMM, Method::UtilityMax};
}

std::string_view to_string(PooledFilter f) {
    switch (f) {
        case PooledFilter::PositiveObserved: return "positive_observed";
        case PooledFilter::All: return "all";
        case PooledFilter::PositiveLabel: return "positive_label";
    }
    return "unknown";
}

std::string_view to_string(TruthSource t) {
    switch (t) {
        case TruthSource::Auto: return "auto";
        case TruthSource::Latent: return "latent";
        case TruthSource::Empirical: return "empirical";
    }
    return "unknown";
}

std::string_view to_string(EmpiricalRule r) {
    switch (r) {
        case EmpiricalRule::FinalWeekDecision: return "final_week_decision";
        case EmpiricalRule::Sign: return "sign";
    }
    return "unknown";
}

std::optional<PooledFilter> parse_pooled_filter(std::string_view text) {
    for (auto f : {PooledFilter::PositiveObserved, PooledFilter::All, PooledFilter::PositiveLabel})
        if (text == to_string(f)) return f;
    return std::nullopt;
}

std::optional<TruthSource> parse_truth_source(std::string_view text) {
    for (auto t : {TruthSource::Auto, TruthSource::Latent, TruthSource::Empirical})
        if (text == to_string(t)) return t;
    return std::nullopt;
}

std::optional<EmpiricalRule> parse_empirical_rule(std::string_view text) {
    for (auto r : {EmpiricalRule::FinalWeekDecision, EmpiricalRule::Sign})
        if (text == to_string(r)) return r;
    return std::nullopt;
}

void ComparisonConfig::validate() const {
    if (methods.empty()) throw ConfigError("comparison config: method set is empty");
    for (std::size_t i = 0; i < methods.size(); ++i)
        for (std::size_t j = 0; j < i; ++j)
            if (methods[i] == methods[j])
                throw ConfigError("comparison config: duplicate method " + std::string(to_string(methods[i])));
    estimators.three_layer.validate();
    estimators.two_layer.validate();
    utility.validate();
}

ErrorMetrics accuracy_metrics(std::span<const double> estimates, double truth) {
    if (estimates.empty()) throw ConfigError("accuracy_metrics: no estimates");
    ErrorMetrics out;
    for (double e : estimates) {
        out.mse += (e - truth) * (e - truth);
        out.mae += std::fabs(e - truth);
    }
    out.mse /= static_cast<double>(estimates.size());
    out.mae /= static_cast<double>(estimates.size());
    return out;
}

DecisionErrors decision_errors(std::span<const std::optional<Label>> truth, const std::vector<bool>& launched) {
    if (truth.size() != launched.size()) throw DataError("decision_errors: label and decision counts differ");
    if (truth.empty()) throw DataError("decision_errors: empty corpus");
    std::size_t fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
        if (!truth[i]) throw DataError("decision_errors: experiment " + std::to_string(i) + " has no truth label");
        const bool positive = *truth[i] == Label::Positive;
        if (launched[i] && !positive) ++fp;
        if (!launched[i] && positive) ++fn;
    }
    const auto m = static_cast<double>(truth.size());
    return {static_cast<double>(fp) / m, static_cast<double>(fn) / m};
}

TTestResult two_sample_ttest(std::span<const double> a, std::span<const double> b) {
    if (a.size() < 2 || b.size() < 2) throw ConfigError("two_sample_ttest: each sample needs at least 2 values");
    auto moments = [](std::span<const double> x) {
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= static_cast<double>(x.size());
        double ss = 0.0;
        for (double v : x) ss += (v - mean) * (v - mean);
        return std::pair{mean, ss};
    };
    const auto [ma, ssa] = moments(a);
    const auto [mb, ssb] = moments(b);
    const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
    TTestResult out;
    out.df = na + nb - 2.0;
    const double pooled = (ssa + ssb) / out.df;
    const double se = std::sqrt(pooled * (1.0 / na + 1.0 / nb));
    if (!(se > 0.0)) throw NumericalError("two_sample_ttest: both samples are constant");
    out.t_stat = (ma - mb) / se;
    out.p_value = std::min(1.0, 2.0 * stats::student_t_sf(std::fabs(out.t_stat), out.df));
    return out;
}

Histogram histogram(std::span<const double> values, int bins) {
    if (bins < 1) throw ConfigError("histogram: bin count must be positive");
    if (values.empty()) throw DataError("histogram: no values");
    auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
    double lo = *lo_it, hi = *hi_it;
    if (!std::isfinite(lo) || !std::isfinite(hi)) throw DataError("histogram: non-finite value");
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.counts.assign(static_cast<std::size_t>(bins), 0);
    const double width = (hi - lo) / bins;
    for (int k = 0; k <= bins; ++k) h.edges.push_back(k == bins ? hi : lo + width * k);
    for (double v : values) {
        auto k = static_cast<std::size_t>(std::floor((v - lo) / width));
        k = std::min(k, h.counts.size() - 1);
        // floating edges: move to the bin whose edges actually contain v
        while (k > 0 && v < h.edges[k]) --k;
        while (k + 1 < h.counts.size() && v >= h.edges[k + 1]) ++k;
        ++h.counts[k];
    }
    return h;
}

std::vector<meta::Observation> final_week_observations(std::span<const ExperimentRecord> corpus) {
    std::vector<meta::Observation> out;
    out.reserve(corpus.size());
    for (const auto& r : corpus) {
        if (r.observed_effect.empty() || r.effect_se2.empty())
            throw DataError("experiment '" + r.id + "': missing final-week effect");
        out.push_back({r.final_effect(), r.final_se2()});
    }
    return out;
}

std::vector<std::optional<Label>> truth_labels(std::span<const ExperimentRecord> corpus, const ComparisonConfig& cfg,
                                               TruthSource* used) {
    TruthSource source = cfg.truth_source;
    if (source == TruthSource::Auto) {
        const bool all_latent =
            std::all_of(corpus.begin(), corpus.end(), [](const auto& r) { return r.latent_label.has_value(); });
        source = all_latent ? TruthSource::Latent : TruthSource::Empirical;
    }
    if (used) *used = source;

    std::vector<std::optional<Label>> out;
    out.reserve(corpus.size());
    for (const auto& r : corpus) {
        if (source == TruthSource::Latent) {
            if (!r.latent_label) throw DataError("experiment '" + r.id + "': no latent label");
            out.push_back(r.latent_label);
            continue;
        }
        bool positive = false;
        if (cfg.empirical_rule == EmpiricalRule::Sign) {
            positive = r.final_effect() > 0.0;
        } else {
            positive = launch_decision(r, r.weeks, cfg.utility.policy);
        }
        // the empirical rule separates positive from the rest only
        out.push_back(positive ? Label::Positive : (r.final_effect() < 0.0 ? Label::Negative : Label::Flat));
    }
    return out;
}

double estimate_aes(Method method, std::span<const meta::Observation> data,
                    std::span<const std::optional<Label>> labels, const EstimatorConfig& cfg) {
    switch (method) {
        case Method::PooledMLE: {
            std::vector<meta::Observation> train;
            for (std::size_t i = 0; i < data.size(); ++i) {
                bool keep = true;
                if (cfg.pooled_filter == PooledFilter::PositiveObserved) keep = data[i].effect > 0.0;
                if (cfg.pooled_filter == PooledFilter::PositiveLabel) {
                    if (i >= labels.size() || !labels[i])
                        throw DataError("pooled estimator: positive_label filter needs a label for every experiment");
                    keep = *labels[i] == Label::Positive;
                }
                if (keep) train.push_back(data[i]);
            }
            if (train.empty()) throw EstimationError("pooled estimator: training set is empty after filtering");
            return meta::fit_pooled(train).mu0;
        }
        case Method::TwoLayerGMM:
            return meta::extract_aes(meta::fit(data, cfg.two_layer, cfg.threads).params);
        case Method::ThreeLayerGMM:
            return meta::extract_aes(meta::fit(data, cfg.three_layer, cfg.threads).params);
        case Method::UtilityMax:
            throw ConfigError("utility_max needs full experiment trajectories, not effect summaries");
    }
    throw ConfigError("unknown method");
}

MethodRow score_aes(std::span<const ExperimentRecord> corpus, std::string name, double aes,
                    std::span<const std::optional<Label>> truth, const ComparisonConfig& cfg) {
    if (corpus.empty()) throw ConfigError("score_aes: corpus is empty");
    std::vector<utility::RewardBreakdown> rewards(corpus.size());
    parallel_for(corpus.size(), cfg.estimators.threads,
                 [&](std::size_t i) { rewards[i] = utility::evaluate_reward(corpus[i], aes, cfg.utility); });

    MethodRow row;
    row.method = std::move(name);
    row.estimated_aes = aes;
    std::vector<bool> launched(corpus.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) {
        const auto& b = rewards[i];
        launched[i] = b.launched;
        row.avg_weeks += b.duration;
        row.avg_opportunity_cost += b.opportunity_cost;
        row.avg_launch_impact += b.launch_impact;
        row.avg_in_experiment_impact += b.in_experiment_impact;
    }
    const auto m = static_cast<double>(corpus.size());
    row.avg_weeks /= m;
    row.avg_opportunity_cost /= m;
    row.avg_launch_impact /= m;
    row.avg_in_experiment_impact /= m;
    row.avg_reward = row.avg_opportunity_cost + row.avg_launch_impact + row.avg_in_experiment_impact;

    const auto errs = decision_errors(truth, launched);
    row.fp_rate = errs.fp_rate;
    row.fn_rate = errs.fn_rate;
    return row;
}

EvaluationReport run_comparison(std::span<const ExperimentRecord> corpus, const ComparisonConfig& cfg) {
    cfg.validate();
    if (corpus.empty()) throw ConfigError("run_comparison: corpus is empty");
    for (const auto& r : corpus) r.validate();

    EvaluationReport report;
    const auto truth = truth_labels(corpus, cfg, &report.truth_used);
    const auto data = final_week_observations(corpus);
    std::vector<std::optional<Label>> latent;
    for (const auto& r : corpus) latent.push_back(r.latent_label);

    for (Method method : cfg.methods) {
        const std::string name(to_string(method));
        double aes = std::numeric_limits<double>::quiet_NaN();
        try {
            if (method == Method::UtilityMax) {
                auto opt = utility::optimize_aes(corpus, cfg.utility, cfg.estimators.threads);
                aes = opt.best_aes;
                report.utility_profile = std::move(opt.profile);
            } else {
                aes = estimate_aes(method, data, latent, cfg.estimators);
            }
            report.rows.push_back(score_aes(corpus, name, aes, truth, cfg));
        } catch (const Error& e) {
            MethodRow row;
            row.method = name;
            row.ok = false;
            row.error = name + ": " + e.what();
            const double nan = std::numeric_limits<double>::quiet_NaN();
            row.estimated_aes = aes;  // kept when only the scoring failed
            row.fp_rate = row.fn_rate = row.avg_weeks = nan;
            row.avg_opportunity_cost = row.avg_launch_impact = row.avg_in_experiment_impact = row.avg_reward = nan;
            report.rows.push_back(std::move(row));
        }
    }
    return report;
}

AccuracyReport run_accuracy_study(const sim::AccuracySimConfig& sim_cfg, std::span<const Method> methods,
                                  const EstimatorConfig& est, unsigned threads) {
    sim_cfg.validate();
    if (methods.empty()) throw ConfigError("accuracy study: method set is empty");
    for (Method m : methods)
        if (m == Method::UtilityMax) throw ConfigError("accuracy study: utility_max needs trajectories");

    const auto reps = static_cast<std::size_t>(sim_cfg.replications);
    const double nan = std::numeric_limits<double>::quiet_NaN();
    std::vector<std::vector<double>> est_by_rep(reps, std::vector<double>(methods.size(), nan));
    std::vector<std::vector<std::string>> err_by_rep(reps, std::vector<std::string>(methods.size()));

    EstimatorConfig inner = est;
    inner.threads = 1;  // parallelism goes over replications
    parallel_for(reps, threads, [&](std::size_t r) {
        const auto draws = sim::simulate_accuracy_replication(sim_cfg, static_cast<int>(r));
        std::vector<meta::Observation> data;
        std::vector<std::optional<Label>> labels;
        for (const auto& d : draws) {
            data.push_back(d.obs);
            labels.emplace_back(d.label);
        }
        for (std::size_t k = 0; k < methods.size(); ++k) {
            try {
                est_by_rep[r][k] = estimate_aes(methods[k], data, labels, inner);
            } catch (const Error& e) {
                err_by_rep[r][k] = "replication " + std::to_string(r) + ": " + e.what();
            }
        }
    });

    AccuracyReport report;
    report.truth = sim_cfg.true_aes();
    for (std::size_t k = 0; k < methods.size(); ++k) {
        AccuracyRow row;
        row.method = std::string(to_string(methods[k]));
        std::vector<double> ok;
        for (std::size_t r = 0; r < reps; ++r) {
            row.estimates.push_back(est_by_rep[r][k]);
            if (err_by_rep[r][k].empty()) {
                ok.push_back(est_by_rep[r][k]);
            } else {
                ++row.failures;
                row.errors.push_back(err_by_rep[r][k]);
            }
        }
        if (ok.empty()) {
            row.mse = row.mae = nan;
        } else {
            const auto metrics = accuracy_metrics(ok, report.truth);
            row.mse = metrics.mse;
            row.mae = metrics.mae;
        }
        report.rows.push_back(std::move(row));
    }
    return report;
}

}  // namespace aes::eval
