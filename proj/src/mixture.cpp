#include "aes/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>

#include <boost/math/tools/roots.hpp>

#include "aes/errors.hpp"
#include "aes/parallel.hpp"
#include "aes/stats.hpp"

namespace aes::meta {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kMaxInnerRounds = 100;
constexpr int kBracketExpansions = 3;
constexpr double kRootTolerance = 4.0 * std::numeric_limits<double>::epsilon();

double log_sum_exp(std::span<const double> terms) {
    double top = kNegInf;
    for (double t : terms) top = std::max(top, t);
    if (top == kNegInf) return kNegInf;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    return top + std::log(acc);
}

double effect_variance(std::span<const Observation> data) {
    double mean = 0.0;
    for (const auto& o : data) mean += o.effect;
    mean /= static_cast<double>(data.size());
    double ss = 0.0;
    for (const auto& o : data) ss += (o.effect - mean) * (o.effect - mean);
    return ss / static_cast<double>(data.size());
}

double quantile_sorted(const std::vector<double>& sorted, double q) {
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, sorted.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

// new slot k takes old component perm[k]
void permute(MixtureParams& p, const std::vector<std::size_t>& perm) {
    MixtureParams out = p;
    for (std::size_t k = 0; k < perm.size(); ++k) {
        out.weights[k] = p.weights[perm[k]];
        out.means[k] = p.means[perm[k]];
        out.comp_vars[k] = p.comp_vars[perm[k]];
    }
    p = std::move(out);
}

// Sorts free components by decreasing mean; a pinned component (old index
// `pinned`) is moved to the configured flat slot with its mean set to 0.
std::vector<std::size_t> canonical_order(MixtureParams& p, const FitConfig& cfg,
                                         std::optional<std::size_t> pinned) {
    const auto K = static_cast<std::size_t>(p.K());
    std::vector<std::size_t> free;
    for (std::size_t k = 0; k < K; ++k)
        if (!pinned || k != *pinned) free.push_back(k);
    std::stable_sort(free.begin(), free.end(),
                     [&](std::size_t a, std::size_t b) { return p.means[a] > p.means[b]; });
    std::vector<std::size_t> perm = free;
    if (pinned) {
        perm.insert(perm.begin() + static_cast<std::ptrdiff_t>(*cfg.flat_index()), *pinned);
        p.means[*pinned] = 0.0;
    }
    permute(p, perm);
    return perm;
}

void canonicalize_start(MixtureParams& p, const FitConfig& cfg) {
    std::optional<std::size_t> pinned;
    if (cfg.flat_index()) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < p.means.size(); ++k)
            if (std::fabs(p.means[k]) < std::fabs(p.means[best])) best = k;
        pinned = best;
    }
    canonical_order(p, cfg, pinned);
}

// Per-component M-step objective for fixed responsibilities:
//   h(mu, v) = sum_i w_i log N(d_i; mu, s_i + v) - c (1/v + log v),
// with c = 1/m when penalized and 0 otherwise. Differentiating in v:
//   dh/dv = 1/2 sum_i w_i [ r_i^2/(s_i+v)^2 - 1/(s_i+v) ] + c (1/v^2 - 1/v),
// r_i = d_i - mu. Setting this to zero gives the penalized form of the
// variance equation,
//   sum_i w_i/(s_i+v) + 2c (1/v - 1/v^2) = sum_i w_i r_i^2/(s_i+v)^2,
// which reduces to the unpenalized stationarity condition as m grows.
struct ComponentObjective {
    std::span<const Observation> data;
    const Responsibilities& resp;
    std::size_t k;
    double penalty_scale;

    double value(double mu, double v) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double w = resp(i, k);
            if (w == 0.0) continue;
            const double total = data[i].se2 + v;
            const double r = data[i].effect - mu;
            acc += w * (-0.5 * std::log(total) - 0.5 * r * r / total);
        }
        return acc - penalty_scale * (1.0 / v + std::log(v));
    }

    double slope(double mu, double v) const {
        double acc = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double w = resp(i, k);
            if (w == 0.0) continue;
            const double total = data[i].se2 + v;
            const double r = data[i].effect - mu;
            acc += w * (r * r / (total * total) - 1.0 / total);
        }
        return 0.5 * acc + penalty_scale * (1.0 / (v * v) - 1.0 / v);
    }

    // Precision-weighted mean; nullopt when the component carries no weight.
    std::optional<double> weighted_mean(double v) const {
        double num = 0.0;
        double den = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const double w = resp(i, k) / (data[i].se2 + v);
            num += w * data[i].effect;
            den += w;
        }
        if (!(den > 0.0) || !std::isfinite(den)) return std::nullopt;
        return num / den;
    }
};

// Maximizes h over the component's (mean, variance) pair. The mean has the
// closed form mean_of(v); the variance is the root of the profile slope
// dh/dv evaluated at (mean_of(v), v), which by the envelope theorem solves
// both stationarity equations at once. Candidates that do not improve on the
// previous pair are rejected so that every M-step is an ascent step.
template <class MeanOf>
std::pair<double, double> solve_component(const ComponentObjective& obj, MeanOf&& mean_of, double mu_prev,
                                          double v_prev, double lo, double hi, double root_tol) {
    double best_mu = mu_prev;
    double best_v = v_prev;
    double best_value = obj.value(mu_prev, v_prev);
    auto consider = [&](double v) {
        const double mu = mean_of(v);
        const double val = obj.value(mu, v);
        if (val > best_value) {
            best_mu = mu;
            best_v = v;
            best_value = val;
        }
    };
    consider(v_prev);

    auto slope = [&](double v) { return obj.slope(mean_of(v), v); };
    const double slope_lo = slope(lo);
    if (slope_lo <= 0.0) {
        consider(lo);
        return {best_mu, best_v};
    }
    double slope_hi = slope(hi);
    for (int e = 0; e < kBracketExpansions && slope_hi > 0.0; ++e) {
        hi *= 10.0;
        slope_hi = slope(hi);
    }
    if (slope_hi > 0.0) {
        throw NumericalError("m_step: variance root not bracketed for component " + std::to_string(obj.k + 1));
    }
    std::uintmax_t max_iter = 300;
    auto tol = [root_tol](double a, double b) { return std::fabs(a - b) <= root_tol * std::fabs(a); };
    auto [a, b] = boost::math::tools::toms748_solve(slope, lo, hi, slope_lo, slope_hi, tol, max_iter);
    consider(0.5 * (a + b));
    return {best_mu, best_v};
}

bool close(double a, double b, double tol) { return std::fabs(a - b) <= tol * (1.0 + std::fabs(a)); }

void check_data(std::span<const Observation> data) {
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (!std::isfinite(data[i].effect) || !std::isfinite(data[i].se2))
            throw DataError("observation " + std::to_string(i + 1) + " is not finite");
        if (data[i].se2 < 0.0) throw DataError("observation " + std::to_string(i + 1) + " has negative variance");
    }
}

}  // namespace

void MixtureParams::validate() const {
    const auto K = weights.size();
    if (K == 0 || means.size() != K || comp_vars.size() != K)
        throw DomainError("mixture parameters have inconsistent sizes");
    for (std::size_t k = 0; k < K; ++k) {
        if (!(weights[k] >= 0.0 && weights[k] <= 1.0)) throw DomainError("mixture weight outside [0, 1]");
        if (!(comp_vars[k] > 0.0)) throw DomainError("component variance must be positive");
        if (!std::isfinite(means[k])) throw DomainError("component mean is not finite");
    }
}

double Responsibilities::max_row_sum_error() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < rows_; ++i) {
        double s = 0.0;
        for (double w : row(i)) s += w;
        worst = std::max(worst, std::fabs(s - 1.0));
    }
    return worst;
}

void FitConfig::validate() const {
    if (K < 1) throw ConfigError("fit config: K must be at least 1");
    if (fix_flat_mean && K < 2) throw ConfigError("fit config: pinning the flat mean needs K >= 2");
    if (!(tolerance > 0.0)) throw ConfigError("fit config: tolerance must be positive");
    if (!(inner_tolerance > 0.0)) throw ConfigError("fit config: inner_tolerance must be positive");
    if (!(var_floor > 0.0)) throw ConfigError("fit config: var_floor must be positive");
    if (n_starts < 1) throw ConfigError("fit config: n_starts must be at least 1");
    if (max_iterations < 1) throw ConfigError("fit config: max_iterations must be at least 1");
}

std::optional<std::size_t> FitConfig::flat_index() const {
    if (!fix_flat_mean) return std::nullopt;
    return static_cast<std::size_t>(K / 2);
}

FitConfig FitConfig::three_layer() { return FitConfig{}; }

FitConfig FitConfig::two_layer() {
    FitConfig cfg;
    cfg.fix_flat_mean = false;
    cfg.heteroscedastic = false;
    return cfg;
}

double component_density(double d, double se2, double mu, double tau2) {
    const double total = tau2 + se2;
    if (!(total > 0.0)) throw DomainError("component_density: total variance must be positive");
    const double r = d - mu;
    return std::exp(-0.5 * r * r / total) / std::sqrt(2.0 * std::numbers::pi * total);
}

std::vector<Observation> model_view(std::span<const Observation> data, const FitConfig& cfg) {
    std::vector<Observation> out(data.begin(), data.end());
    if (!cfg.heteroscedastic)
        for (auto& o : out) o.se2 = 0.0;
    return out;
}

Responsibilities e_step(std::span<const Observation> data, const MixtureParams& params) {
    const auto K = static_cast<std::size_t>(params.K());
    Responsibilities resp(data.size(), K);
    std::vector<double> logs(K);
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (std::isnan(data[i].effect) || std::isnan(data[i].se2))
            throw DataError("e_step: observation " + std::to_string(i + 1) + " is NaN");
        for (std::size_t k = 0; k < K; ++k) {
            logs[k] = params.weights[k] > 0.0
                          ? std::log(params.weights[k]) +
                                stats::normal_log_pdf(data[i].effect, params.means[k], params.comp_vars[k] + data[i].se2)
                          : kNegInf;
        }
        const double norm = log_sum_exp(logs);
        double total = 0.0;
        for (std::size_t k = 0; k < K; ++k) {
            resp(i, k) = std::exp(logs[k] - norm);
            total += resp(i, k);
        }
        for (std::size_t k = 0; k < K; ++k) resp(i, k) /= total;
    }
    return resp;
}

MixtureParams m_step(std::span<const Observation> data, const Responsibilities& resp, const MixtureParams& prev,
                     const FitConfig& cfg) {
    const auto K = static_cast<std::size_t>(prev.K());
    if (resp.rows() != data.size() || resp.cols() != K)
        throw DomainError("m_step: responsibilities do not match data and K");
    const double m = static_cast<double>(data.size());
    const double spread = effect_variance(data);
    const double lo = cfg.var_floor;
    const double hi = std::max(10.0 * spread, 1.0);
    const auto pinned = cfg.flat_index();

    MixtureParams next = prev;
    double weight_total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        double w = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) w += resp(i, k);
        next.weights[k] = w / m;
        weight_total += next.weights[k];
    }
    for (auto& w : next.weights) w /= weight_total;

    for (std::size_t k = 0; k < K; ++k) {
        const ComponentObjective obj{data, resp, k, cfg.penalized ? 1.0 / m : 0.0};
        const bool mean_fixed = pinned && *pinned == k;
        double mu = mean_fixed ? 0.0 : prev.means[k];
        double v = prev.comp_vars[k];
        // keeps the current mean when the component has no support
        auto mean_of = [&](double var) -> double {
            if (mean_fixed) return 0.0;
            if (auto wm = obj.weighted_mean(var)) return *wm;
            return mu;
        };
        for (int round = 0; round < kMaxInnerRounds; ++round) {
            const auto [mu_next, v_next] = solve_component(obj, mean_of, mu, v, lo, hi, kRootTolerance);
            const bool done = close(mu, mu_next, cfg.inner_tolerance) && close(v, v_next, cfg.inner_tolerance);
            mu = mu_next;
            v = v_next;
            if (done) break;
        }
        next.means[k] = mu;
        next.comp_vars[k] = v;
    }
    return next;
}

double penalized_loglik(std::span<const Observation> data, const MixtureParams& params, bool penalized) {
    params.validate();
    const auto K = static_cast<std::size_t>(params.K());
    std::vector<double> logs(K);
    double total = 0.0;
    for (const auto& o : data) {
        for (std::size_t k = 0; k < K; ++k) {
            logs[k] = params.weights[k] > 0.0
                          ? std::log(params.weights[k]) +
                                stats::normal_log_pdf(o.effect, params.means[k], params.comp_vars[k] + o.se2)
                          : kNegInf;
        }
        total += log_sum_exp(logs);
    }
    if (penalized) {
        double pen = 0.0;
        for (double v : params.comp_vars) pen += 1.0 / v + std::log(v);
        total -= pen / static_cast<double>(data.size());
    }
    return total;
}

FitResult em_run(std::span<const Observation> data, const FitConfig& cfg, const MixtureParams& init) {
    const double m = static_cast<double>(data.size());
    RunTrace trace;
    MixtureParams params = init;
    FitResult out;
    try {
        double prev_ll = penalized_loglik(data, params, cfg.penalized);
        trace.loglik.push_back(prev_ll);
        for (int it = 1; it <= cfg.max_iterations; ++it) {
            const Responsibilities resp = e_step(data, params);
            trace.max_row_sum_error = std::max(trace.max_row_sum_error, resp.max_row_sum_error());
            params = m_step(data, resp, params, cfg);
            const double wsum = std::accumulate(params.weights.begin(), params.weights.end(), 0.0);
            trace.max_weight_sum_error = std::max(trace.max_weight_sum_error, std::fabs(wsum - 1.0));
            for (double v : params.comp_vars) trace.min_comp_var = std::min(trace.min_comp_var, v);
            const double ll = penalized_loglik(data, params, cfg.penalized);
            if (!std::isfinite(ll)) throw NumericalError("penalized log-likelihood is not finite");
            trace.loglik.push_back(ll);
            params.n_iterations = it;
            if (std::fabs(ll - prev_ll) / m < cfg.tolerance) {
                params.converged = true;
                break;
            }
            prev_ll = ll;
        }
        params.penalized_loglik = trace.loglik.back();

        std::optional<std::size_t> pinned = cfg.flat_index();
        canonical_order(params, cfg, pinned);
        out.resp = e_step(data, params);
    } catch (const Error& e) {
        trace.failed = true;
        trace.failure = e.what();
    } catch (const std::exception& e) {
        trace.failed = true;
        trace.failure = e.what();
    }
    trace.params = params;
    out.params = params;
    out.runs.push_back(std::move(trace));
    return out;
}

std::optional<MixtureParams> kmeans_init(std::span<const Observation> data, const FitConfig& cfg) {
    const auto K = static_cast<std::size_t>(cfg.K);
    if (data.size() < 2 * K) return std::nullopt;
    std::vector<double> sorted;
    sorted.reserve(data.size());
    for (const auto& o : data) sorted.push_back(o.effect);
    std::sort(sorted.begin(), sorted.end());

    std::vector<double> centers(K);
    for (std::size_t k = 0; k < K; ++k)
        centers[k] = quantile_sorted(sorted, (static_cast<double>(k) + 0.5) / static_cast<double>(K));

    std::vector<std::size_t> assign(data.size(), K);
    for (int iter = 0; iter < 100; ++iter) {
        bool changed = false;
        for (std::size_t i = 0; i < data.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < K; ++k)
                if (std::fabs(data[i].effect - centers[k]) < std::fabs(data[i].effect - centers[best])) best = k;
            if (best != assign[i]) {
                assign[i] = best;
                changed = true;
            }
        }
        std::vector<double> sum(K, 0.0);
        std::vector<std::size_t> count(K, 0);
        for (std::size_t i = 0; i < data.size(); ++i) {
            sum[assign[i]] += data[i].effect;
            ++count[assign[i]];
        }
        for (std::size_t k = 0; k < K; ++k) {
            if (count[k] == 0) return std::nullopt;
            centers[k] = sum[k] / static_cast<double>(count[k]);
        }
        if (!changed) break;
    }

    const double spread = effect_variance(data);
    MixtureParams p;
    p.weights.assign(K, 0.0);
    p.means = centers;
    p.comp_vars.assign(K, 0.0);
    std::vector<double> ss(K, 0.0);
    std::vector<double> noise(K, 0.0);
    std::vector<std::size_t> count(K, 0);
    for (std::size_t i = 0; i < data.size(); ++i) {
        const auto k = assign[i];
        ss[k] += (data[i].effect - centers[k]) * (data[i].effect - centers[k]);
        noise[k] += data[i].se2;
        ++count[k];
    }
    for (std::size_t k = 0; k < K; ++k) {
        if (count[k] < 2 || ss[k] == 0.0) return std::nullopt;
        const double n = static_cast<double>(count[k]);
        p.weights[k] = n / static_cast<double>(data.size());
        p.comp_vars[k] = std::max({ss[k] / n - noise[k] / n, 0.05 * spread, 10.0 * cfg.var_floor});
    }
    canonicalize_start(p, cfg);
    return p;
}

MixtureParams random_init(std::span<const Observation> data, const FitConfig& cfg, std::size_t start_index) {
    const auto K = static_cast<std::size_t>(cfg.K);
    std::vector<double> sorted;
    sorted.reserve(data.size());
    for (const auto& o : data) sorted.push_back(o.effect);
    std::sort(sorted.begin(), sorted.end());
    double lo = quantile_sorted(sorted, 0.05);
    double hi = quantile_sorted(sorted, 0.95);
    double spread = effect_variance(data);
    if (!(spread > 0.0)) spread = 1.0;
    if (!(hi > lo)) {
        lo -= std::sqrt(spread);
        hi += std::sqrt(spread);
    }

    std::mt19937_64 rng(sub_seed(cfg.seed, start_index));
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::uniform_real_distribution<double> scale(0.5, 2.0);
    std::exponential_distribution<double> gamma1(1.0);

    MixtureParams p;
    p.weights.resize(K);
    p.means.resize(K);
    p.comp_vars.resize(K);
    double wsum = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
        p.means[k] = lo + unit(rng) * (hi - lo);
        p.comp_vars[k] = std::max(spread * scale(rng), 10.0 * cfg.var_floor);
        p.weights[k] = gamma1(rng) + 1e-3;
        wsum += p.weights[k];
    }
    for (auto& w : p.weights) w /= wsum;
    canonicalize_start(p, cfg);
    return p;
}

FitResult fit(std::span<const Observation> data, const FitConfig& cfg, unsigned threads) {
    cfg.validate();
    check_data(data);
    if (data.size() < 2 * static_cast<std::size_t>(cfg.K))
        throw DataError("fit: need at least " + std::to_string(2 * cfg.K) + " observations, got " +
                        std::to_string(data.size()));
    const std::vector<Observation> view = model_view(data, cfg);

    const auto n_starts = static_cast<std::size_t>(cfg.n_starts);
    std::vector<FitResult> runs(n_starts);
    parallel_for(n_starts, threads, [&](std::size_t s) {
        std::optional<MixtureParams> init;
        bool from_kmeans = false;
        if (s == 0 && cfg.kmeans_start) {
            init = kmeans_init(view, cfg);
            from_kmeans = init.has_value();
        }
        if (!init) init = random_init(view, cfg, s);
        runs[s] = em_run(view, cfg, *init);
        runs[s].runs.front().start_index = s;
        runs[s].runs.front().from_kmeans = from_kmeans;
    });

    FitResult best;
    std::optional<std::size_t> best_index;
    for (std::size_t s = 0; s < n_starts; ++s) {
        const auto& trace = runs[s].runs.front();
        if (trace.failed) continue;
        if (!best_index || runs[s].params.penalized_loglik > runs[*best_index].params.penalized_loglik)
            best_index = s;
    }
    for (auto& r : runs) best.runs.push_back(std::move(r.runs.front()));
    if (!best_index) {
        throw NumericalError("fit: all " + std::to_string(n_starts) + " EM starts failed; first failure: " +
                             best.runs.front().failure);
    }
    best.params = runs[*best_index].params;
    best.resp = std::move(runs[*best_index].resp);
    best.best_run = *best_index;
    return best;
}

double pooled_mean(std::span<const Observation> data, double tau2) {
    double num = 0.0;
    double den = 0.0;
    for (const auto& o : data) {
        const double w = 1.0 / (o.se2 + tau2);
        num += w * o.effect;
        den += w;
    }
    if (!(den > 0.0) || !std::isfinite(den)) throw DomainError("pooled_mean: total variance must be positive");
    return num / den;
}

PooledFit fit_pooled(std::span<const Observation> data, double var_floor) {
    check_data(data);
    if (data.size() < 2) throw DataError("fit_pooled: need at least 2 observations");
    if (!(var_floor > 0.0)) throw ConfigError("fit_pooled: var_floor must be positive");

    auto profile = [&](double tau2) {
        const double mu = pooled_mean(data, tau2);
        double acc = 0.0;
        for (const auto& o : data) {
            const double v = o.se2 + tau2;
            acc += -0.5 * (std::log(2.0 * std::numbers::pi * v) + (o.effect - mu) * (o.effect - mu) / v);
        }
        return acc;
    };
    // d/dtau2 of the profile log-likelihood (envelope theorem)
    auto score = [&](double tau2) {
        const double mu = pooled_mean(data, tau2);
        double acc = 0.0;
        for (const auto& o : data) {
            const double v = o.se2 + tau2;
            const double r = o.effect - mu;
            acc += r * r / (v * v) - 1.0 / v;
        }
        return 0.5 * acc;
    };

    double hi = std::max(10.0 * effect_variance(data), 1.0);
    for (int e = 0; e < 6 && score(hi) > 0.0; ++e) hi *= 10.0;

    // Scan a log grid for sign changes of the score, refine each, keep the best.
    constexpr int kGrid = 200;
    const double log_lo = std::log(var_floor);
    const double log_hi = std::log(hi);
    double best_tau2 = var_floor;
    double best_ll = profile(var_floor);
    double prev_x = var_floor;
    double prev_s = score(prev_x);
    for (int g = 1; g <= kGrid; ++g) {
        const double x = std::exp(log_lo + (log_hi - log_lo) * g / kGrid);
        const double s = score(x);
        if (prev_s > 0.0 && s <= 0.0) {
            std::uintmax_t max_iter = 200;
            auto [a, b] = boost::math::tools::toms748_solve(score, prev_x, x, prev_s, s,
                                                            boost::math::tools::eps_tolerance<double>(52), max_iter);
            const double root = 0.5 * (a + b);
            const double ll = profile(root);
            if (ll > best_ll) {
                best_ll = ll;
                best_tau2 = root;
            }
        }
        prev_x = x;
        prev_s = s;
    }
    return {pooled_mean(data, best_tau2), best_tau2, best_ll};
}

double extract_aes(const MixtureParams& params) {
    params.validate();
    if (params.K() <= 3) {
        const double mu1 = *std::max_element(params.means.begin(), params.means.end());
        if (!(params.means.front() > 0.0) || params.means.front() < mu1)
            throw EstimationError("extract_aes: leading component mean is not positive");
        return params.means.front();
    }
    double num = 0.0;
    double den = 0.0;
    for (int k = 0; k < params.K(); ++k) {
        if (params.means[k] > 0.0) {
            num += params.weights[k] * params.means[k];
            den += params.weights[k];
        }
    }
    if (!(den > 0.0)) throw EstimationError("extract_aes: no component with positive mean");
    return num / den;
}

}  // namespace aes::meta
