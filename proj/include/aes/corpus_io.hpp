#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "aes/experiment.hpp"

namespace aes::io {

enum class CorpusFormat { Csv, Json };

/// CSV header, one row per (experiment, week).
inline constexpr const char* kCorpusCsvHeader =
    "id,week,n_t,n_c,mean_t,mean_c,var_t,var_c,effect,effect_se2,weekly_cost,latent_label";

/// "%.17g" rendering; reads back to the same double.
std::string format_double(double x);

/// Round-trips exactly for canonical records: an arm's mean/var vectors are
/// either empty or hold at least one value.
void write_corpus_csv(std::ostream& out, std::span<const ExperimentRecord> corpus);
std::vector<ExperimentRecord> read_corpus_csv(std::istream& in, const std::string& source = "<csv>");

std::string corpus_to_json(std::span<const ExperimentRecord> corpus);
std::vector<ExperimentRecord> corpus_from_json(const std::string& text, const std::string& source = "<json>");

/// Format from the extension (.json, otherwise CSV).
CorpusFormat format_for(const std::filesystem::path& path);

std::vector<ExperimentRecord> load_corpus(const std::filesystem::path& path);
void save_corpus(const std::filesystem::path& path, std::span<const ExperimentRecord> corpus, CorpusFormat format);

}  // namespace aes::io
