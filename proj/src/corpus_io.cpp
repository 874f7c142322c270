#include "aes/corpus_io.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <unordered_set>

#include "aes/errors.hpp"
#include "json.hpp"

namespace aes::io {

namespace {

using nlohmann::json;

constexpr int kColumns = 12;

[[noreturn]] void fail_at(const std::string& source, long line, const std::string& what) {
    throw DataError(source + ":" + std::to_string(line) + ": " + what);
}

std::vector<std::string> split(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

template <class T>
bool parse_number(const std::string& field, T& value) {
    const char* first = field.data();
    const char* last = first + field.size();
    const auto [ptr, ec] = std::from_chars(first, last, value);
    return ec == std::errc() && ptr == last;
}

std::string opt_field(const std::vector<std::optional<double>>& v, std::size_t t) {
    return t < v.size() && v[t] ? format_double(*v[t]) : std::string();
}

/// Builds one record from its consecutive CSV rows.
struct Pending {
    ExperimentRecord rec;
    long first_line = 0;
    bool has_counts = false;
    bool any_mean_t = false, any_mean_c = false, any_var_t = false, any_var_c = false;
};

void finish(Pending& p, const std::string& source, std::vector<ExperimentRecord>& out) {
    auto& r = p.rec;
    if (!p.any_mean_t) r.treatment.cumulative_mean.clear();
    if (!p.any_mean_c) r.control.cumulative_mean.clear();
    if (!p.any_var_t) r.treatment.cumulative_var.clear();
    if (!p.any_var_c) r.control.cumulative_var.clear();
    try {
        r.validate();
    } catch (const DataError& e) {
        fail_at(source, p.first_line, e.what());
    }
    out.push_back(std::move(r));
}

json arm_json(const ArmWeekly& arm) {
    json j = json::object();
    j["n"] = arm.cumulative_n;
    auto opts = [](const std::vector<std::optional<double>>& v) {
        json a = json::array();
        for (const auto& x : v) a.push_back(x ? json(*x) : json(nullptr));
        return a;
    };
    j["mean"] = opts(arm.cumulative_mean);
    j["var"] = opts(arm.cumulative_var);
    return j;
}

void arm_from_json(const json& j, ArmWeekly& arm) {
    arm.cumulative_n = j.at("n").get<std::vector<std::int64_t>>();
    auto opts = [](const json& a) {
        std::vector<std::optional<double>> v;
        for (const auto& x : a) v.push_back(x.is_null() ? std::nullopt : std::optional<double>(x.get<double>()));
        return v;
    };
    arm.cumulative_mean = opts(j.at("mean"));
    arm.cumulative_var = opts(j.at("var"));
}

}  // namespace

std::string format_double(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

void write_corpus_csv(std::ostream& out, std::span<const ExperimentRecord> corpus) {
    out << kCorpusCsvHeader << '\n';
    for (const auto& r : corpus) {
        if (r.id.find_first_of(",\"\r\n") != std::string::npos)
            throw DataError("experiment id '" + r.id + "' contains a CSV delimiter");
        const bool counts = !r.treatment.cumulative_n.empty();
        for (int w = 1; w <= r.weeks; ++w) {
            const auto t = static_cast<std::size_t>(w - 1);
            out << r.id << ',' << w << ',';
            if (counts) out << r.treatment.cumulative_n[t] << ',' << r.control.cumulative_n[t] << ',';
            else out << ",,";
            out << opt_field(r.treatment.cumulative_mean, t) << ',' << opt_field(r.control.cumulative_mean, t) << ','
                << opt_field(r.treatment.cumulative_var, t) << ',' << opt_field(r.control.cumulative_var, t) << ','
                << format_double(r.observed_effect[t]) << ',' << format_double(r.effect_se2[t]) << ','
                << format_double(r.weekly_cost) << ',' << (r.latent_label ? to_string(*r.latent_label) : "") << '\n';
        }
    }
}

std::vector<ExperimentRecord> read_corpus_csv(std::istream& in, const std::string& source) {
    std::string line;
    long lineno = 0;
    if (!std::getline(in, line)) fail_at(source, 1, "empty file, expected header");
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != kCorpusCsvHeader) fail_at(source, lineno, "unexpected header (want: " + std::string(kCorpusCsvHeader) + ")");

    std::vector<ExperimentRecord> out;
    std::optional<Pending> cur;
    std::unordered_set<std::string> seen;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto f = split(line);
        if (static_cast<int>(f.size()) != kColumns)
            fail_at(source, lineno, "expected " + std::to_string(kColumns) + " fields, found " + std::to_string(f.size()));

        const std::string& id = f[0];
        if (id.empty()) fail_at(source, lineno, "empty id");
        int week = 0;
        if (!parse_number(f[1], week)) fail_at(source, lineno, "bad week '" + f[1] + "'");

        if (!cur || cur->rec.id != id) {
            if (cur) finish(*cur, source, out);
            if (!seen.insert(id).second)
                fail_at(source, lineno, "rows of experiment '" + id + "' are not contiguous");
            cur.emplace();
            cur->rec.id = id;
            cur->first_line = lineno;
            cur->has_counts = !f[2].empty();
        }
        auto& p = *cur;
        auto& r = p.rec;
        if (week != r.weeks + 1)
            fail_at(source, lineno, "week " + f[1] + " out of order for '" + id + "' (expected " +
                                        std::to_string(r.weeks + 1) + ")");
        r.weeks = week;

        if (p.has_counts != !f[2].empty() || f[2].empty() != f[3].empty())
            fail_at(source, lineno, "n_t and n_c must be given on every row or on none");
        if (p.has_counts) {
            std::int64_t nt = 0, nc = 0;
            if (!parse_number(f[2], nt)) fail_at(source, lineno, "bad n_t '" + f[2] + "'");
            if (!parse_number(f[3], nc)) fail_at(source, lineno, "bad n_c '" + f[3] + "'");
            r.treatment.cumulative_n.push_back(nt);
            r.control.cumulative_n.push_back(nc);
        }

        auto optional_col = [&](int col, const char* name, std::vector<std::optional<double>>& dst, bool& any) {
            if (f[col].empty()) {
                dst.emplace_back();
                return;
            }
            double v = 0.0;
            if (!parse_number(f[col], v)) fail_at(source, lineno, std::string("bad ") + name + " '" + f[col] + "'");
            dst.emplace_back(v);
            any = true;
        };
        optional_col(4, "mean_t", r.treatment.cumulative_mean, p.any_mean_t);
        optional_col(5, "mean_c", r.control.cumulative_mean, p.any_mean_c);
        optional_col(6, "var_t", r.treatment.cumulative_var, p.any_var_t);
        optional_col(7, "var_c", r.control.cumulative_var, p.any_var_c);
        if ((p.any_mean_t || p.any_mean_c || p.any_var_t || p.any_var_c) && !p.has_counts)
            fail_at(source, lineno, "arm summaries need n_t and n_c");

        double effect = 0.0, se2 = 0.0, cost = 0.0;
        if (!parse_number(f[8], effect)) fail_at(source, lineno, "bad effect '" + f[8] + "'");
        if (!parse_number(f[9], se2)) fail_at(source, lineno, "bad effect_se2 '" + f[9] + "'");
        if (!parse_number(f[10], cost)) fail_at(source, lineno, "bad weekly_cost '" + f[10] + "'");
        r.observed_effect.push_back(effect);
        r.effect_se2.push_back(se2);

        std::optional<Label> label;
        if (!f[11].empty()) {
            label = parse_label(f[11]);
            if (!label) fail_at(source, lineno, "bad latent_label '" + f[11] + "'");
        }
        if (week == 1) {
            r.weekly_cost = cost;
            r.latent_label = label;
        } else {
            if (cost != r.weekly_cost) fail_at(source, lineno, "weekly_cost differs from earlier rows of '" + id + "'");
            if (label != r.latent_label) fail_at(source, lineno, "latent_label differs from earlier rows of '" + id + "'");
        }
    }
    if (cur) finish(*cur, source, out);
    return out;
}

std::string corpus_to_json(std::span<const ExperimentRecord> corpus) {
    json exps = json::array();
    for (const auto& r : corpus) {
        json e = json::object();
        e["id"] = r.id;
        e["weeks"] = r.weeks;
        e["effect"] = r.observed_effect;
        e["effect_se2"] = r.effect_se2;
        e["weekly_cost"] = r.weekly_cost;
        e["latent_label"] = r.latent_label ? json(std::string(to_string(*r.latent_label))) : json(nullptr);
        e["treatment"] = arm_json(r.treatment);
        e["control"] = arm_json(r.control);
        exps.push_back(std::move(e));
    }
    json doc = json::object();
    doc["format"] = "aes-corpus";
    doc["version"] = 1;
    doc["experiments"] = std::move(exps);
    return doc.dump(1) + "\n";
}

std::vector<ExperimentRecord> corpus_from_json(const std::string& text, const std::string& source) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw DataError(source + ": " + e.what());
    }
    std::vector<ExperimentRecord> out;
    try {
        if (doc.value("format", "") != "aes-corpus") throw DataError(source + ": not an aes-corpus document");
        const auto& exps = doc.at("experiments");
        for (std::size_t i = 0; i < exps.size(); ++i) {
            const auto& e = exps[i];
            ExperimentRecord r;
            r.id = e.at("id").get<std::string>();
            r.weeks = e.at("weeks").get<int>();
            r.observed_effect = e.at("effect").get<std::vector<double>>();
            r.effect_se2 = e.at("effect_se2").get<std::vector<double>>();
            r.weekly_cost = e.at("weekly_cost").get<double>();
            if (!e.at("latent_label").is_null()) {
                r.latent_label = parse_label(e.at("latent_label").get<std::string>());
                if (!r.latent_label) throw DataError(source + ": experiment " + std::to_string(i) + ": bad latent_label");
            }
            arm_from_json(e.at("treatment"), r.treatment);
            arm_from_json(e.at("control"), r.control);
            try {
                r.validate();
            } catch (const DataError& err) {
                throw DataError(source + ": experiment " + std::to_string(i) + ": " + err.what());
            }
            out.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw DataError(source + ": " + e.what());
    }
    return out;
}

CorpusFormat format_for(const std::filesystem::path& path) {
    return path.extension() == ".json" ? CorpusFormat::Json : CorpusFormat::Csv;
}

std::vector<ExperimentRecord> load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open corpus file " + path.string());
    if (format_for(path) == CorpusFormat::Json) {
        std::stringstream ss;
        ss << in.rdbuf();
        return corpus_from_json(ss.str(), path.string());
    }
    return read_corpus_csv(in, path.string());
}

void save_corpus(const std::filesystem::path& path, std::span<const ExperimentRecord> corpus, CorpusFormat format) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write " + path.string());
    if (format == CorpusFormat::Json) out << corpus_to_json(corpus);
    else write_corpus_csv(out, corpus);
    if (!out) throw ConfigError("write failed for " + path.string());
}

}  // namespace aes::io
