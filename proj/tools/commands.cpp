#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "aes/corpus_io.hpp"
#include "aes/errors.hpp"
#include "aes/evaluation.hpp"
#include "aes/mixture.hpp"
#include "aes/simulation.hpp"
#include "aes/utility.hpp"
#include "json.hpp"

namespace aes::cli {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// Settings and their JSON form

struct Settings {
    std::uint64_t seed = 0;
    std::string unit_label;
    int replication = 0;
    sim::AccuracySimConfig accuracy;
    sim::TrajectorySimConfig trajectory;
    meta::FitConfig gmm3 = meta::FitConfig::three_layer();
    meta::FitConfig gmm2 = meta::FitConfig::two_layer();
    eval::PooledFilter pooled_filter = eval::PooledFilter::All;
    utility::UtilityConfig utility;
    std::vector<eval::Method> methods = eval::all_methods();
    eval::TruthSource truth_source = eval::TruthSource::Auto;
    eval::EmpiricalRule empirical_rule = eval::EmpiricalRule::FinalWeekDecision;
    int histogram_bins = 60;
};

const std::set<std::string> kKnownKeys{"seed",  "unit_label", "replication", "accuracy_sim", "trajectory_sim", "gmm3",
                                       "gmm2",  "pooled",     "utility",     "evaluation",   "report"};

/// Top-level sections a (verb, kind) pair reads. seed and unit_label are always present.
std::vector<std::string> sections_for(const std::string& verb, const std::string& kind) {
    if (verb == "simulate") {
        if (kind == "accuracy") return {"replication", "accuracy_sim"};
        return {"trajectory_sim"};
    }
    if (verb == "fit") {
        if (kind == "pooled") return {"pooled"};
        return {kind};
    }
    if (verb == "optimize") return {"utility"};
    if (verb == "evaluate") {
        if (kind == "accuracy") return {"accuracy_sim", "gmm3", "gmm2", "pooled", "evaluation", "report"};
        return {"gmm3", "gmm2", "pooled", "utility", "evaluation", "report"};
    }
    return {"report"};  // report
}

Settings defaults_for(const std::string& verb, const std::string& kind) {
    Settings s;
    if (verb == "evaluate" && kind == "accuracy") {
        s.pooled_filter = eval::PooledFilter::PositiveObserved;
        s.methods = {eval::Method::PooledMLE, eval::Method::TwoLayerGMM, eval::Method::ThreeLayerGMM};
    }
    return s;
}

std::string_view rule_name(DecisionRule r) {
    return r == DecisionRule::WelchOneSided ? "welch_one_sided" : "z_test_one_sided";
}

DecisionRule parse_rule(const std::string& text) {
    if (text == "welch_one_sided") return DecisionRule::WelchOneSided;
    if (text == "z_test_one_sided") return DecisionRule::ZTestOneSided;
    throw ConfigError("unknown decision_rule '" + text + "' (welch_one_sided, z_test_one_sided)");
}

json fit_json(const meta::FitConfig& c) {
    return {{"K", c.K},
            {"fix_flat_mean", c.fix_flat_mean},
            {"heteroscedastic", c.heteroscedastic},
            {"penalized", c.penalized},
            {"tolerance", c.tolerance},
            {"max_iterations", c.max_iterations},
            {"n_starts", c.n_starts},
            {"kmeans_start", c.kmeans_start},
            {"inner_tolerance", c.inner_tolerance},
            {"var_floor", c.var_floor}};
}

void fit_from(const json& j, meta::FitConfig& c) {
    c.K = j.at("K").get<int>();
    c.fix_flat_mean = j.at("fix_flat_mean").get<bool>();
    c.heteroscedastic = j.at("heteroscedastic").get<bool>();
    c.penalized = j.at("penalized").get<bool>();
    c.tolerance = j.at("tolerance").get<double>();
    c.max_iterations = j.at("max_iterations").get<int>();
    c.n_starts = j.at("n_starts").get<int>();
    c.kmeans_start = j.at("kmeans_start").get<bool>();
    c.inner_tolerance = j.at("inner_tolerance").get<double>();
    c.var_floor = j.at("var_floor").get<double>();
}

template <std::size_t N>
std::array<double, N> fixed_array(const json& j, const char* name) {
    if (!j.is_array() || j.size() != N)
        throw ConfigError(std::string(name) + " must be an array of " + std::to_string(N) + " numbers");
    std::array<double, N> out{};
    for (std::size_t i = 0; i < N; ++i) out[i] = j[i].get<double>();
    return out;
}

json section_json(const Settings& s, const std::string& name) {
    if (name == "replication") return s.replication;
    if (name == "accuracy_sim") {
        const auto& c = s.accuracy;
        return {{"m", c.m},
                {"means", c.means},
                {"comp_vars", c.comp_vars},
                {"weights", c.weights},
                {"se2_shape", c.se2_shape},
                {"se2_scale", c.se2_scale},
                {"replications", c.replications}};
    }
    if (name == "trajectory_sim") {
        const auto& c = s.trajectory;
        return {{"m", c.m},
                {"weeks", c.weeks},
                {"customers_per_arm", c.customers_per_arm},
                {"beta_a_range", c.beta_a_range},
                {"beta_b_range", c.beta_b_range},
                {"means", c.means},
                {"comp_sds", c.comp_sds},
                {"weights", c.weights},
                {"outcome_var", c.outcome_var},
                {"total_weekly_cost", c.total_weekly_cost}};
    }
    if (name == "gmm3") return fit_json(s.gmm3);
    if (name == "gmm2") return fit_json(s.gmm2);
    if (name == "pooled") return {{"filter", eval::to_string(s.pooled_filter)}};
    if (name == "utility") {
        const auto& u = s.utility;
        return {{"horizon_weeks", u.horizon_weeks},
                {"grid", u.grid},
                {"posterior_effect_source", "final_week_observed"},
                {"policy",
                 {{"alpha", u.policy.alpha},
                  {"target_power", u.policy.target_power},
                  {"max_weeks", u.policy.max_weeks},
                  {"decision_rule", rule_name(u.policy.decision_rule)}}}};
    }
    if (name == "evaluation") {
        json methods = json::array();
        for (auto m : s.methods) methods.push_back(eval::to_string(m));
        return {{"methods", methods},
                {"truth_source", eval::to_string(s.truth_source)},
                {"empirical_rule", eval::to_string(s.empirical_rule)}};
    }
    if (name == "report") return {{"histogram_bins", s.histogram_bins}};
    throw ConfigError("internal: unknown section " + name);
}

void section_from(Settings& s, const std::string& name, const json& j) {
    if (name == "replication") {
        s.replication = j.get<int>();
    } else if (name == "accuracy_sim") {
        auto& c = s.accuracy;
        c.m = j.at("m").get<int>();
        c.means = fixed_array<3>(j.at("means"), "accuracy_sim.means");
        c.comp_vars = fixed_array<3>(j.at("comp_vars"), "accuracy_sim.comp_vars");
        c.weights = fixed_array<3>(j.at("weights"), "accuracy_sim.weights");
        c.se2_shape = j.at("se2_shape").get<double>();
        c.se2_scale = j.at("se2_scale").get<double>();
        c.replications = j.at("replications").get<int>();
    } else if (name == "trajectory_sim") {
        auto& c = s.trajectory;
        c.m = j.at("m").get<int>();
        c.weeks = j.at("weeks").get<int>();
        c.customers_per_arm = j.at("customers_per_arm").get<std::int64_t>();
        c.beta_a_range = fixed_array<2>(j.at("beta_a_range"), "trajectory_sim.beta_a_range");
        c.beta_b_range = fixed_array<2>(j.at("beta_b_range"), "trajectory_sim.beta_b_range");
        c.means = fixed_array<3>(j.at("means"), "trajectory_sim.means");
        c.comp_sds = fixed_array<3>(j.at("comp_sds"), "trajectory_sim.comp_sds");
        c.weights = fixed_array<3>(j.at("weights"), "trajectory_sim.weights");
        c.outcome_var = j.at("outcome_var").get<double>();
        c.total_weekly_cost = j.at("total_weekly_cost").get<double>();
    } else if (name == "gmm3") {
        fit_from(j, s.gmm3);
    } else if (name == "gmm2") {
        fit_from(j, s.gmm2);
    } else if (name == "pooled") {
        const auto text = j.at("filter").get<std::string>();
        const auto f = eval::parse_pooled_filter(text);
        if (!f) throw ConfigError("unknown pooled.filter '" + text + "'");
        s.pooled_filter = *f;
    } else if (name == "utility") {
        auto& u = s.utility;
        u.horizon_weeks = j.at("horizon_weeks").get<int>();
        u.grid = j.at("grid").get<std::vector<double>>();
        if (j.at("posterior_effect_source").get<std::string>() != "final_week_observed")
            throw ConfigError("utility.posterior_effect_source must be final_week_observed");
        const auto& p = j.at("policy");
        u.policy.alpha = p.at("alpha").get<double>();
        u.policy.target_power = p.at("target_power").get<double>();
        u.policy.max_weeks = p.at("max_weeks").get<int>();
        u.policy.decision_rule = parse_rule(p.at("decision_rule").get<std::string>());
    } else if (name == "evaluation") {
        s.methods.clear();
        for (const auto& m : j.at("methods")) {
            const auto text = m.get<std::string>();
            const auto parsed = eval::parse_method(text);
            if (!parsed) throw ConfigError("unknown method '" + text + "'");
            s.methods.push_back(*parsed);
        }
        const auto truth = eval::parse_truth_source(j.at("truth_source").get<std::string>());
        if (!truth) throw ConfigError("unknown evaluation.truth_source");
        s.truth_source = *truth;
        const auto rule = eval::parse_empirical_rule(j.at("empirical_rule").get<std::string>());
        if (!rule) throw ConfigError("unknown evaluation.empirical_rule");
        s.empirical_rule = *rule;
    } else if (name == "report") {
        s.histogram_bins = j.at("histogram_bins").get<int>();
    }
}

/// Overlays `over` on `base`. Keys must already exist in `base` and leaf
/// types must agree (an integer slot refuses a fractional value).
json merge_strict(const json& base, const json& over, const std::string& path) {
    if (base.is_object()) {
        if (!over.is_object()) throw ConfigError("config key '" + path + "' must be an object");
        json out = base;
        for (const auto& [key, value] : over.items()) {
            const std::string sub = path.empty() ? key : path + "." + key;
            if (!base.contains(key)) throw ConfigError("unknown config key '" + sub + "'");
            out[key] = merge_strict(base[key], value, sub);
        }
        return out;
    }
    const bool ok = (base.is_boolean() && over.is_boolean()) || (base.is_string() && over.is_string()) ||
                    (base.is_array() && over.is_array()) ||
                    (base.is_number_integer() && over.is_number_integer()) ||
                    (base.is_number_float() && over.is_number());
    if (!ok) throw ConfigError("config key '" + path + "' has the wrong type");
    if (base.is_number_unsigned() && over.is_number_integer() && over.get<std::int64_t>() < 0)
        throw ConfigError("config key '" + path + "' must be non-negative");
    return over;
}

struct Overrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> methods;  // comma-separated
    std::optional<int> bins;
};

std::vector<std::string> split_list(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

void validate(const Settings& s, const std::vector<std::string>& sections) {
    auto has = [&](const char* n) { return std::find(sections.begin(), sections.end(), n) != sections.end(); };
    if (has("replication") && (s.replication < 0 || s.replication >= s.accuracy.replications))
        throw ConfigError("replication must lie in [0, accuracy_sim.replications)");
    if (has("accuracy_sim")) s.accuracy.validate();
    if (has("trajectory_sim")) s.trajectory.validate();
    if (has("gmm3")) s.gmm3.validate();
    if (has("gmm2")) s.gmm2.validate();
    if (has("utility")) s.utility.validate();
    if (has("evaluation")) {
        if (s.methods.empty()) throw ConfigError("method set is empty");
        std::set<eval::Method> seen(s.methods.begin(), s.methods.end());
        if (seen.size() != s.methods.size()) throw ConfigError("duplicate method in method set");
    }
    if (has("report") && s.histogram_bins < 1) throw ConfigError("report.histogram_bins must be positive");
}

/// Defaults, then the config document, then flag overrides. Returns the
/// settings and their canonical JSON form.
std::pair<Settings, json> resolve(const std::string& verb, const std::string& kind, const json& user,
                                  const Overrides& ov) {
    Settings s = defaults_for(verb, kind);
    const auto sections = sections_for(verb, kind);
    if (!user.is_object()) throw ConfigError("config must be a JSON object");
    try {
        for (const auto& [key, value] : user.items()) {
            if (!kKnownKeys.count(key)) throw ConfigError("unknown config key '" + key + "'");
            if (key == "seed") {
                if (!value.is_number_integer() || (value.is_number_integer() && !value.is_number_unsigned() &&
                                                    value.get<std::int64_t>() < 0))
                    throw ConfigError("seed must be a non-negative integer");
                s.seed = value.get<std::uint64_t>();
            } else if (key == "unit_label") {
                if (!value.is_string()) throw ConfigError("unit_label must be a string");
                s.unit_label = value.get<std::string>();
            } else if (std::find(sections.begin(), sections.end(), key) != sections.end()) {
                section_from(s, key, merge_strict(section_json(s, key), value, key));
            }
            // Other known sections belong to other commands; one file may serve several.
        }
        if (ov.seed) s.seed = *ov.seed;
        if (ov.methods) {
            s.methods.clear();
            for (const auto& name : split_list(*ov.methods)) {
                const auto m = eval::parse_method(name);
                if (!m) throw ConfigError("unknown method '" + name + "'");
                s.methods.push_back(*m);
            }
        }
        if (ov.bins) s.histogram_bins = *ov.bins;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    validate(s, sections);

    json resolved = json::object();
    resolved["seed"] = s.seed;
    resolved["unit_label"] = s.unit_label;
    for (const auto& name : sections) resolved[name] = section_json(s, name);

    s.accuracy.seed = s.seed;
    s.trajectory.seed = s.seed;
    s.gmm3.seed = s.seed;
    s.gmm2.seed = s.seed;
    return {s, resolved};
}

// ---------------------------------------------------------------------------
// Files

std::string read_file(const fs::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError(std::string("cannot open ") + what + " " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

json parse_json_file(const fs::path& path, const char* what) {
    const auto text = read_file(path, what);
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

std::string fnv1a64(const std::string& bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct Output {
    std::string name;
    std::string content;
};

void write_outputs(const fs::path& dir, const std::vector<Output>& outputs) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    for (const auto& o : outputs) {
        std::ofstream f(dir / o.name, std::ios::binary);
        if (!f) throw ConfigError("cannot write " + (dir / o.name).string());
        f << o.content;
        if (!f) throw ConfigError("write failed for " + (dir / o.name).string());
    }
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

std::string num(double x) {
    if (std::isfinite(x)) return io::format_double(x);
    return std::isnan(x) ? "nan" : (x > 0 ? "inf" : "-inf");
}

std::string histogram_csv(const eval::Histogram& h) {
    std::string out = "bin_lower,bin_upper,count\n";
    for (std::size_t b = 0; b < h.counts.size(); ++b)
        out += num(h.edges[b]) + "," + num(h.edges[b + 1]) + "," + std::to_string(h.counts[b]) + "\n";
    return out;
}

json histogram_json(const eval::Histogram& h) { return {{"edges", h.edges}, {"counts", h.counts}}; }

std::vector<double> effects_of(std::span<const meta::Observation> data) {
    std::vector<double> v;
    v.reserve(data.size());
    for (const auto& o : data) v.push_back(o.effect);
    return v;
}

// ---------------------------------------------------------------------------
// Commands

struct Invocation {
    std::string verb;
    std::string kind;
    json config;                   // resolved
    Settings settings;
    std::optional<fs::path> corpus;  // absolute
    io::CorpusFormat format = io::CorpusFormat::Csv;
    unsigned threads = 1;
};

json header_json(const Invocation& inv) {
    json j = json::object();
    j["generator_version"] = kGeneratorVersion;
    j["command"] = inv.verb;
    j["kind"] = inv.kind;
    j["config"] = inv.config;
    j["seed"] = inv.settings.seed;
    j["unit_label"] = inv.settings.unit_label;
    return j;
}

std::vector<ExperimentRecord> load_input(const Invocation& inv) {
    if (!inv.corpus) throw ConfigError(inv.verb + " needs --corpus");
    return io::load_corpus(*inv.corpus);
}

std::vector<Output> cmd_simulate(const Invocation& inv, std::ostream& out) {
    const auto& s = inv.settings;
    std::vector<ExperimentRecord> corpus;
    if (inv.kind == "accuracy") corpus = sim::to_records(sim::simulate_accuracy_replication(s.accuracy, s.replication));
    else corpus = sim::simulate_trajectory_corpus(s.trajectory, inv.threads);

    const bool as_json = inv.format == io::CorpusFormat::Json;
    std::string text;
    if (as_json) {
        text = io::corpus_to_json(corpus);
    } else {
        std::ostringstream ss;
        io::write_corpus_csv(ss, corpus);
        text = ss.str();
    }
    out << "simulated " << corpus.size() << " " << inv.kind << " experiments\n";
    return {{as_json ? "corpus.json" : "corpus.csv", text}};
}

std::vector<meta::Observation> pooled_subset(std::span<const ExperimentRecord> corpus, eval::PooledFilter filter) {
    const auto all = eval::final_week_observations(corpus);
    std::vector<meta::Observation> data;
    for (std::size_t i = 0; i < all.size(); ++i) {
        bool keep = true;
        if (filter == eval::PooledFilter::PositiveObserved) keep = all[i].effect > 0.0;
        if (filter == eval::PooledFilter::PositiveLabel) keep = corpus[i].latent_label == Label::Positive;
        if (keep) data.push_back(all[i]);
    }
    return data;
}

json params_json(const meta::MixtureParams& p) {
    return {{"weights", p.weights},
            {"means", p.means},
            {"comp_vars", p.comp_vars},
            {"penalized_loglik", p.penalized_loglik},
            {"n_iterations", p.n_iterations},
            {"converged", p.converged}};
}

/// Returns true when the AES could be extracted.
bool cmd_fit(const Invocation& inv, std::ostream& out, std::vector<Output>& outputs) {
    const auto corpus = load_input(inv);
    const auto& s = inv.settings;
    json doc = header_json(inv);
    doc["n_experiments"] = corpus.size();
    bool aes_ok = true;

    if (inv.kind == "pooled") {
        const auto data = pooled_subset(corpus, s.pooled_filter);
        if (data.empty()) throw EstimationError("pooled fit: no experiments pass the '" +
                                                std::string(eval::to_string(s.pooled_filter)) + "' filter");
        const auto p = meta::fit_pooled(data);
        doc["n_used"] = data.size();
        doc["params"] = {{"mu0", p.mu0}, {"tau2", p.tau2}, {"loglik", p.loglik}};
        doc["aes"] = p.mu0;
        out << "pooled: mu0 = " << num(p.mu0) << ", tau2 = " << num(p.tau2) << "\n";
    } else {
        const auto& cfg = inv.kind == "gmm2" ? s.gmm2 : s.gmm3;
        const auto data = eval::final_week_observations(corpus);
        const auto result = meta::fit(data, cfg, inv.threads);
        doc["n_used"] = data.size();
        doc["params"] = params_json(result.params);
        doc["best_run"] = result.best_run;
        json runs = json::array();
        for (const auto& r : result.runs) {
            runs.push_back({{"start_index", r.start_index},
                            {"from_kmeans", r.from_kmeans},
                            {"failed", r.failed},
                            {"failure", r.failure},
                            {"iterations", r.loglik.empty() ? 0 : r.loglik.size() - 1},
                            {"final_penalized_loglik", r.loglik.empty() ? json(nullptr) : json(r.loglik.back())}});
        }
        doc["runs"] = runs;
        try {
            const double aes = meta::extract_aes(result.params);
            doc["aes"] = aes;
            out << inv.kind << ": AES = " << num(aes) << " (" << result.params.n_iterations << " iterations)\n";
        } catch (const EstimationError& e) {
            doc["aes"] = nullptr;
            doc["aes_error"] = e.what();
            aes_ok = false;
        }
    }
    outputs.push_back({"fit.json", dump(doc)});
    return aes_ok;
}

std::vector<Output> cmd_optimize(const Invocation& inv, std::ostream& out) {
    const auto corpus = load_input(inv);
    const auto opt = utility::optimize_aes(corpus, inv.settings.utility, inv.threads);
    json doc = header_json(inv);
    doc["best_aes"] = opt.best_aes;
    doc["best_index"] = opt.best_index;
    json profile = json::array();
    std::string csv = "aes,mean_reward,argmax\n";
    for (std::size_t i = 0; i < opt.profile.size(); ++i) {
        const auto& p = opt.profile[i];
        const bool best = i == opt.best_index;
        profile.push_back({{"aes", p.aes}, {"mean_reward", p.mean_reward}, {"argmax", best}});
        csv += num(p.aes) + "," + num(p.mean_reward) + "," + (best ? "1" : "0") + "\n";
    }
    doc["profile"] = profile;
    out << "optimal AES = " << num(opt.best_aes) << "\n";
    return {{"optimize.json", dump(doc)}, {"profile.csv", csv}};
}

std::vector<Output> evaluate_trajectory(const Invocation& inv, std::ostream& out) {
    const auto corpus = load_input(inv);
    const auto& s = inv.settings;
    eval::ComparisonConfig cc;
    cc.methods = s.methods;
    cc.estimators.three_layer = s.gmm3;
    cc.estimators.two_layer = s.gmm2;
    cc.estimators.pooled_filter = s.pooled_filter;
    cc.estimators.threads = inv.threads;
    cc.utility = s.utility;
    cc.truth_source = s.truth_source;
    cc.empirical_rule = s.empirical_rule;
    const auto report = eval::run_comparison(corpus, cc);

    json doc = header_json(inv);
    doc["truth_used"] = eval::to_string(report.truth_used);
    json rows = json::array();
    std::string csv =
        "method,ok,estimated_aes,fp_rate,fn_rate,avg_weeks,avg_opportunity_cost,avg_in_experiment_impact,"
        "avg_launch_impact,avg_reward,error\n";
    for (const auto& r : report.rows) {
        rows.push_back({{"method", r.method},
                        {"ok", r.ok},
                        {"error", r.error},
                        {"estimated_aes", r.estimated_aes},
                        {"fp_rate", r.fp_rate},
                        {"fn_rate", r.fn_rate},
                        {"avg_weeks", r.avg_weeks},
                        {"avg_opportunity_cost", r.avg_opportunity_cost},
                        {"avg_in_experiment_impact", r.avg_in_experiment_impact},
                        {"avg_launch_impact", r.avg_launch_impact},
                        {"avg_reward", r.avg_reward}});
        std::string err = r.error;
        std::replace(err.begin(), err.end(), ',', ';');
        std::replace(err.begin(), err.end(), '\n', ' ');
        csv += r.method + "," + (r.ok ? "1" : "0") + "," + num(r.estimated_aes) + "," + num(r.fp_rate) + "," +
               num(r.fn_rate) + "," + num(r.avg_weeks) + "," + num(r.avg_opportunity_cost) + "," +
               num(r.avg_in_experiment_impact) + "," + num(r.avg_launch_impact) + "," + num(r.avg_reward) + "," +
               err + "\n";
        out << r.method << ": ";
        if (r.ok) out << "AES " << num(r.estimated_aes) << ", avg reward " << num(r.avg_reward) << "\n";
        else out << "failed (" << r.error << ")\n";
    }
    doc["rows"] = rows;

    const auto hist = eval::histogram(effects_of(eval::final_week_observations(corpus)), s.histogram_bins);
    doc["histogram"] = histogram_json(hist);

    std::vector<Output> outputs;
    if (!report.utility_profile.empty()) {
        json profile = json::array();
        std::string pcsv = "aes,mean_reward\n";
        for (const auto& p : report.utility_profile) {
            profile.push_back({{"aes", p.aes}, {"mean_reward", p.mean_reward}});
            pcsv += num(p.aes) + "," + num(p.mean_reward) + "\n";
        }
        doc["utility_profile"] = profile;
        outputs.push_back({"utility_profile.csv", pcsv});
    }
    outputs.push_back({"report.json", dump(doc)});
    outputs.push_back({"report.csv", csv});
    outputs.push_back({"histogram.csv", histogram_csv(hist)});
    return outputs;
}

std::vector<Output> evaluate_accuracy(const Invocation& inv, std::ostream& out) {
    const auto& s = inv.settings;
    eval::EstimatorConfig est;
    est.three_layer = s.gmm3;
    est.two_layer = s.gmm2;
    est.pooled_filter = s.pooled_filter;
    const auto report = eval::run_accuracy_study(s.accuracy, s.methods, est, inv.threads);

    json doc = header_json(inv);
    doc["truth"] = report.truth;
    json rows = json::array();
    std::string csv = "method,mse,mae,failures\n";
    for (const auto& r : report.rows) {
        rows.push_back({{"method", r.method},
                        {"mse", r.mse},
                        {"mae", r.mae},
                        {"failures", r.failures},
                        {"errors", r.errors},
                        {"estimates", r.estimates}});
        csv += r.method + "," + num(r.mse) + "," + num(r.mae) + "," + std::to_string(r.failures) + "\n";
        out << r.method << ": MSE " << num(r.mse) << ", MAE " << num(r.mae) << "\n";
    }
    doc["rows"] = rows;

    // Squared-error t-tests of the three-layer model against each other method.
    json tests = json::array();
    const auto three = std::find_if(report.rows.begin(), report.rows.end(), [](const eval::AccuracyRow& r) {
        return r.method == eval::to_string(eval::Method::ThreeLayerGMM);
    });
    auto sq_errors = [&](const eval::AccuracyRow& r) {
        std::vector<double> v;
        for (double e : r.estimates)
            if (std::isfinite(e)) v.push_back((e - report.truth) * (e - report.truth));
        return v;
    };
    if (three != report.rows.end()) {
        const auto a = sq_errors(*three);
        for (const auto& r : report.rows) {
            if (&r == &*three) continue;
            const auto b = sq_errors(r);
            json t = {{"a", three->method}, {"b", r.method}};
            try {
                const auto res = eval::two_sample_ttest(a, b);
                t["t_stat"] = res.t_stat;
                t["df"] = res.df;
                t["p_value"] = res.p_value;
            } catch (const Error& e) {
                t["error"] = e.what();
            }
            tests.push_back(t);
        }
    }
    doc["squared_error_ttests"] = tests;

    std::string est_csv = "replication";
    for (const auto& r : report.rows) est_csv += "," + r.method;
    est_csv += "\n";
    for (int rep = 0; rep < s.accuracy.replications; ++rep) {
        est_csv += std::to_string(rep);
        for (const auto& r : report.rows) est_csv += "," + num(r.estimates[static_cast<std::size_t>(rep)]);
        est_csv += "\n";
    }

    std::vector<double> effects;
    for (const auto& d : sim::simulate_accuracy_replication(s.accuracy, 0)) effects.push_back(d.obs.effect);
    const auto hist = eval::histogram(effects, s.histogram_bins);
    doc["histogram_replication_0"] = histogram_json(hist);

    return {{"accuracy.json", dump(doc)},
            {"accuracy.csv", csv},
            {"estimates.csv", est_csv},
            {"histogram.csv", histogram_csv(hist)}};
}

std::vector<Output> cmd_report(const Invocation& inv, std::ostream& out) {
    const auto corpus = load_input(inv);
    const auto data = eval::final_week_observations(corpus);
    const auto effects = effects_of(data);
    const auto hist = eval::histogram(effects, inv.settings.histogram_bins);

    double mean = 0.0;
    for (double e : effects) mean += e;
    mean /= static_cast<double>(effects.size());
    double ss = 0.0;
    for (double e : effects) ss += (e - mean) * (e - mean);
    std::map<std::string, int> weeks, labels;
    for (const auto& r : corpus) {
        ++weeks[std::to_string(r.weeks)];
        ++labels[r.latent_label ? std::string(to_string(*r.latent_label)) : "unlabelled"];
    }

    json doc = header_json(inv);
    doc["n_experiments"] = corpus.size();
    doc["final_effect"] = {{"mean", mean},
                           {"sd", effects.size() > 1 ? std::sqrt(ss / static_cast<double>(effects.size() - 1)) : 0.0},
                           {"min", *std::min_element(effects.begin(), effects.end())},
                           {"max", *std::max_element(effects.begin(), effects.end())}};
    doc["weeks"] = weeks;
    doc["labels"] = labels;
    doc["histogram"] = histogram_json(hist);
    out << "report over " << corpus.size() << " experiments\n";
    return {{"summary.json", dump(doc)}, {"histogram.csv", histogram_csv(hist)}};
}

/// Runs the command and writes outputs plus manifest.json. Returns the exit code.
int execute(const Invocation& inv, const fs::path& out_dir, std::ostream& out) {
    std::vector<Output> outputs;
    int code = kOk;
    if (inv.verb == "simulate") {
        outputs = cmd_simulate(inv, out);
    } else if (inv.verb == "fit") {
        if (!cmd_fit(inv, out, outputs)) code = kNumerical;
    } else if (inv.verb == "optimize") {
        outputs = cmd_optimize(inv, out);
    } else if (inv.verb == "evaluate") {
        outputs = inv.kind == "accuracy" ? evaluate_accuracy(inv, out) : evaluate_trajectory(inv, out);
    } else {
        outputs = cmd_report(inv, out);
    }

    json manifest = json::object();
    manifest["generator_version"] = kGeneratorVersion;
    manifest["command"] = inv.verb;
    manifest["kind"] = inv.kind;
    manifest["config"] = inv.config;
    manifest["seed"] = inv.settings.seed;
    manifest["format"] = inv.format == io::CorpusFormat::Json ? "json" : "csv";
    json inputs = json::object();
    if (inv.corpus) {
        inputs["corpus"] = inv.corpus->string();
        inputs["corpus_fnv1a64"] = fnv1a64(read_file(*inv.corpus, "corpus file"));
    }
    manifest["inputs"] = inputs;
    json names = json::array();
    for (const auto& o : outputs) names.push_back(o.name);
    manifest["outputs"] = names;
    outputs.push_back({"manifest.json", dump(manifest)});

    write_outputs(out_dir, outputs);
    out << "wrote " << (outputs.size() - 1) << " file(s) and manifest.json to " << out_dir.string() << "\n";
    if (code == kNumerical) throw EstimationError("fit finished but no AES could be extracted; see fit.json");
    return code;
}

// ---------------------------------------------------------------------------
// Argument handling

struct Flags {
    std::string kind;
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    std::optional<unsigned> threads;
    std::string format = "csv";
    std::string corpus;
    std::optional<std::string> methods;
    std::optional<int> bins;
    std::string manifest;
};

unsigned default_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

Invocation build(const std::string& verb, const Flags& f) {
    Invocation inv;
    inv.verb = verb;
    inv.kind = f.kind;
    json user = json::object();
    if (!f.config.empty()) user = parse_json_file(f.config, "config file");
    Overrides ov;
    ov.seed = f.seed;
    ov.methods = f.methods;
    ov.bins = f.bins;
    std::tie(inv.settings, inv.config) = resolve(verb, f.kind, user, ov);
    if (!f.corpus.empty()) {
        const fs::path p = fs::absolute(f.corpus).lexically_normal();
        if (!fs::exists(p)) throw DataError("corpus file not found: " + p.string());
        inv.corpus = p;
    }
    inv.format = f.format == "json" ? io::CorpusFormat::Json : io::CorpusFormat::Csv;
    inv.threads = f.threads.value_or(default_threads());
    return inv;
}

Invocation from_manifest(const fs::path& path, unsigned threads) {
    const json m = parse_json_file(path, "manifest");
    Invocation inv;
    try {
        if (m.at("generator_version").get<std::string>() != kGeneratorVersion)
            throw ConfigError("manifest was written by " + m.at("generator_version").get<std::string>() +
                              ", this is " + kGeneratorVersion);
        inv.verb = m.at("command").get<std::string>();
        inv.kind = m.at("kind").get<std::string>();
        const std::set<std::string> verbs{"simulate", "fit", "optimize", "evaluate", "report"};
        if (!verbs.count(inv.verb)) throw ConfigError("manifest names unknown command '" + inv.verb + "'");
        std::tie(inv.settings, inv.config) = resolve(inv.verb, inv.kind, m.at("config"), Overrides{});
        inv.format = m.at("format").get<std::string>() == "json" ? io::CorpusFormat::Json : io::CorpusFormat::Csv;
        const auto& inputs = m.at("inputs");
        if (inputs.contains("corpus")) {
            inv.corpus = fs::path(inputs.at("corpus").get<std::string>());
            const auto digest = fnv1a64(read_file(*inv.corpus, "corpus file"));
            if (digest != inputs.at("corpus_fnv1a64").get<std::string>())
                throw DataError("corpus " + inv.corpus->string() + " changed since the manifest was written");
        }
    } catch (const json::exception& e) {
        throw ConfigError(path.string() + ": malformed manifest: " + e.what());
    }
    inv.threads = threads;
    return inv;
}

int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const EstimationError*>(&e)) return kNumerical;
    return kConfigOrData;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Assumed effect size estimation for experiment power analysis", "aes"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kGeneratorVersion);
    Flags f;

    auto common = [&](CLI::App* sub, bool needs_corpus) {
        sub->add_option("--config", f.config, "JSON config file")->check(CLI::ExistingFile);
        sub->add_option("--seed", f.seed, "master seed (overrides the config)");
        sub->add_option("--out", f.out_dir, "output directory")->required();
        sub->add_option("--threads", f.threads, "worker cap (default: hardware threads)")
            ->check(CLI::PositiveNumber);
        sub->add_option("--format", f.format, "corpus output format")->check(CLI::IsMember({"csv", "json"}));
        if (needs_corpus) sub->add_option("--corpus", f.corpus, "corpus file (.csv or .json)")->required();
    };

    auto* simulate = app.add_subcommand("simulate", "simulate a corpus");
    simulate->add_option("kind", f.kind, "accuracy | trajectory")
        ->required()
        ->check(CLI::IsMember({"accuracy", "trajectory"}));
    common(simulate, false);

    auto* fit = app.add_subcommand("fit", "fit one estimator to a corpus");
    fit->add_option("method", f.kind, "pooled | gmm2 | gmm3")->required()->check(CLI::IsMember({"pooled", "gmm2", "gmm3"}));
    common(fit, true);

    auto* optimize = app.add_subcommand("optimize", "grid-search the utility-maximizing AES");
    common(optimize, true);

    auto* evaluate = app.add_subcommand("evaluate", "compare estimators");
    evaluate->add_option("kind", f.kind, "trajectory (needs --corpus) | accuracy (simulates replications)")
        ->required()
        ->check(CLI::IsMember({"accuracy", "trajectory"}));
    common(evaluate, false);
    evaluate->add_option("--corpus", f.corpus, "trajectory corpus file");
    evaluate->add_option("--methods", f.methods, "comma-separated methods (overrides the config)");
    evaluate->add_option("--bins", f.bins, "histogram bins (overrides the config)");

    auto* report = app.add_subcommand("report", "summary and histogram data for a corpus");
    common(report, true);
    report->add_option("--bins", f.bins, "histogram bins (overrides the config)");

    auto* rerun = app.add_subcommand("rerun", "re-run a command from its manifest");
    rerun->add_option("--manifest", f.manifest, "manifest.json of an earlier run")->required()->check(CLI::ExistingFile);
    rerun->add_option("--out", f.out_dir, "output directory")->required();
    rerun->add_option("--threads", f.threads, "worker cap (default: hardware threads)")->check(CLI::PositiveNumber);

    try {
        app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfigOrData;
    }

    try {
        if (rerun->parsed()) return execute(from_manifest(f.manifest, f.threads.value_or(default_threads())), f.out_dir, out);
        if (evaluate->parsed() && f.kind == "trajectory" && f.corpus.empty())
            throw ConfigError("evaluate trajectory needs --corpus");
        if (evaluate->parsed() && f.kind == "accuracy" && !f.corpus.empty())
            throw ConfigError("evaluate accuracy simulates its own corpora; drop --corpus");
        for (auto* sub : {simulate, fit, optimize, evaluate, report})
            if (sub->parsed()) return execute(build(sub->get_name(), f), f.out_dir, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return exit_code_for(e);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kConfigOrData;
    }
    return kConfigOrData;
}

}  // namespace aes::cli
