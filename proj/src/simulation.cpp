#include "aes/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "aes/errors.hpp"
#include "aes/parallel.hpp"

namespace aes::sim {

namespace {

void check_weights(const std::array<double, 3>& w, const char* who) {
    double sum = 0.0;
    for (double x : w) {
        if (!(x >= 0.0)) throw ConfigError(std::string(who) + ": weights must be non-negative");
        sum += x;
    }
    if (std::fabs(sum - 1.0) > 1e-9) throw ConfigError(std::string(who) + ": weights must sum to 1");
}

double largest(const std::array<double, 3>& v) { return *std::max_element(v.begin(), v.end()); }

int draw_component(const std::array<double, 3>& weights, Rng& rng) {
    std::discrete_distribution<int> pick(weights.begin(), weights.end());
    return pick(rng);
}

}  // namespace

void AccuracySimConfig::validate() const {
    if (m < 1) throw ConfigError("accuracy config: m must be positive");
    if (replications < 1) throw ConfigError("accuracy config: replications must be positive");
    check_weights(weights, "accuracy config");
    for (double v : comp_vars)
        if (!(v >= 0.0)) throw ConfigError("accuracy config: component variances must be non-negative");
    if (!(se2_shape > 1.0)) throw ConfigError("accuracy config: se2_shape must exceed 1");
    if (!(se2_scale > 0.0)) throw ConfigError("accuracy config: se2_scale must be positive");
}

double AccuracySimConfig::true_aes() const { return largest(means); }

void TrajectorySimConfig::validate() const {
    if (m < 1) throw ConfigError("trajectory config: m must be positive");
    if (weeks < 1) throw ConfigError("trajectory config: weeks must be positive");
    if (customers_per_arm < 1) throw ConfigError("trajectory config: customers_per_arm must be positive");
    if (!(beta_a_range[0] > 0.0 && beta_a_range[0] <= beta_a_range[1]))
        throw ConfigError("trajectory config: beta_a_range must be positive and ordered");
    if (!(beta_b_range[0] > 0.0 && beta_b_range[0] <= beta_b_range[1]))
        throw ConfigError("trajectory config: beta_b_range must be positive and ordered");
    check_weights(weights, "trajectory config");
    for (double s : comp_sds)
        if (!(s >= 0.0)) throw ConfigError("trajectory config: component sds must be non-negative");
    if (!(outcome_var > 0.0)) throw ConfigError("trajectory config: outcome_var must be positive");
    if (!(total_weekly_cost >= 0.0)) throw ConfigError("trajectory config: total_weekly_cost must be non-negative");
}

double TrajectorySimConfig::true_aes() const { return largest(means); }

double sample_inverse_gamma(double shape, double scale, Rng& rng) {
    if (!(shape > 0.0) || !(scale > 0.0)) throw DomainError("sample_inverse_gamma: shape and scale must be positive");
    std::gamma_distribution<double> gamma(shape, 1.0 / scale);
    double x = gamma(rng);
    while (!(x > 0.0)) x = gamma(rng);
    return 1.0 / x;
}

double beta_geometric_cumfrac(double a, double b, int t) {
    if (!(a > 0.0) || !(b > 0.0) || t < 0) throw DomainError("beta_geometric_cumfrac: need a, b > 0 and t >= 0");
    double survive = 1.0;
    for (int k = 1; k <= t; ++k) survive *= (b + k - 1) / (a + b + k - 1);
    return 1.0 - survive;
}

Label label_for_mean(double mean) {
    if (mean > 0.0) return Label::Positive;
    if (mean < 0.0) return Label::Negative;
    return Label::Flat;
}

std::vector<AccuracyDraw> simulate_accuracy_corpus(const AccuracySimConfig& cfg, Rng& rng) {
    cfg.validate();
    std::normal_distribution<double> z(0.0, 1.0);
    std::vector<AccuracyDraw> out(static_cast<std::size_t>(cfg.m));
    for (auto& draw : out) {
        const int j = draw_component(cfg.weights, rng);
        draw.component = j;
        draw.label = label_for_mean(cfg.means[j]);
        draw.delta = cfg.means[j] + std::sqrt(cfg.comp_vars[j]) * z(rng);
        draw.obs.se2 = sample_inverse_gamma(cfg.se2_shape, cfg.se2_scale, rng);
        draw.obs.effect = draw.delta + std::sqrt(draw.obs.se2) * z(rng);
    }
    return out;
}

std::vector<AccuracyDraw> simulate_accuracy_replication(const AccuracySimConfig& cfg, int replication) {
    Rng rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(replication)));
    return simulate_accuracy_corpus(cfg, rng);
}

std::string experiment_id(int index) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "exp%05d", index);
    return buf;
}

std::vector<ExperimentRecord> to_records(const std::vector<AccuracyDraw>& draws) {
    std::vector<ExperimentRecord> out;
    out.reserve(draws.size());
    for (std::size_t i = 0; i < draws.size(); ++i) {
        ExperimentRecord r;
        r.id = experiment_id(static_cast<int>(i));
        r.weeks = 1;
        r.observed_effect = {draws[i].obs.effect};
        r.effect_se2 = {draws[i].obs.se2};
        r.latent_label = draws[i].label;
        out.push_back(std::move(r));
    }
    return out;
}

TrajectoryDraw simulate_trajectory_experiment(const TrajectorySimConfig& cfg, int index) {
    Rng rng(sub_seed(cfg.seed, static_cast<std::uint64_t>(index)));
    std::uniform_real_distribution<double> ua(cfg.beta_a_range[0], cfg.beta_a_range[1]);
    std::uniform_real_distribution<double> ub(cfg.beta_b_range[0], cfg.beta_b_range[1]);
    std::normal_distribution<double> z(0.0, 1.0);

    TrajectoryDraw out;
    out.a = ua(rng);
    out.b = ub(rng);
    const int j = draw_component(cfg.weights, rng);
    out.delta = cfg.means[j] + cfg.comp_sds[j] * z(rng);

    auto& r = out.record;
    r.id = experiment_id(index);
    r.weeks = cfg.weeks;
    r.latent_label = label_for_mean(cfg.means[j]);
    for (int t = 1; t <= cfg.weeks; ++t) {
        const double frac = beta_geometric_cumfrac(out.a, out.b, t);
        const auto n = std::max<std::int64_t>(1, std::llround(static_cast<double>(cfg.customers_per_arm) * frac));
        const double se2 = cfg.outcome_var / static_cast<double>(n) + cfg.outcome_var / static_cast<double>(n);
        for (auto* arm : {&r.treatment, &r.control}) {
            arm->cumulative_n.push_back(n);
            arm->cumulative_var.push_back(cfg.outcome_var);
        }
        r.effect_se2.push_back(se2);
        r.observed_effect.push_back(out.delta + std::sqrt(se2) * z(rng));
    }
    return out;
}

std::vector<ExperimentRecord> simulate_trajectory_corpus(const TrajectorySimConfig& cfg, unsigned threads) {
    cfg.validate();
    std::vector<ExperimentRecord> corpus(static_cast<std::size_t>(cfg.m));
    parallel_for(corpus.size(), threads,
                 [&](std::size_t i) { corpus[i] = simulate_trajectory_experiment(cfg, static_cast<int>(i)).record; });

    double total_n = 0.0;
    for (const auto& r : corpus)
        total_n += static_cast<double>(r.treatment.cumulative_n.back() + r.control.cumulative_n.back());
    for (auto& r : corpus)
        r.weekly_cost = cfg.total_weekly_cost *
                        static_cast<double>(r.treatment.cumulative_n.back() + r.control.cumulative_n.back()) / total_n;
    return corpus;
}

}  // namespace aes::sim
