#pragma once

// The five subcommands behind the `slam` executable.  Each throws
// ValidationError for bad input and other exceptions for runtime failures.

#include "slam/config.hpp"

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace slam {

namespace fs = std::filesystem;

// FNV-1a over the file bytes, as 16 hex digits.
std::string file_checksum(const fs::path& path);

// Writes data.csv, truth.json and a config.json ready for `fit`.
void cmd_simulate(const RunConfig& config, const fs::path& out);

struct FitOutcome {
  EmTrace trace;
  bool converged{false};
  std::string warning;
};

// Writes manifest.json (first incomplete, then complete), chain_<k>.csv
// (appended per retained draw), trace.csv, theta.json and acceptance.json.
FitOutcome cmd_fit(const RunConfig& config, const fs::path& data, const fs::path& out, std::ostream* log);

// One chain file in long format: values[d][j] is parameter names[j] at draw d.
struct ChainFile {
  int id{0};
  std::vector<std::string> names;
  std::vector<std::vector<double>> values;
};

// All chain_<k>.csv files of a fit directory, ordered by k.
std::vector<ChainFile> read_chain_files(const fs::path& fit_dir);
// Chains as latent states of `model`; throws ValidationError on a schema mismatch.
std::vector<PosteriorChain> chains_for_model(const Model& model, const std::vector<ChainFile>& files);

struct FitRecord {
  RunConfig config;
  fs::path data;
  Theta theta;
};

// Config, data path and fitted theta of a fit directory.
FitRecord read_fit_record(const fs::path& fit_dir);

// summary.json, amplitude.csv and bands/<group>_<subject>.csv.
void cmd_summarize(const fs::path& fit_dir, const std::optional<RunConfig>& config,
                   const std::optional<fs::path>& data, const fs::path& out);

// rhat.csv and diagnostics.json.  Throws ValidationError for fewer than two chains.
void cmd_diagnose(const fs::path& fit_dir, const fs::path& out);

// replicate_table.csv and replicate_detail.csv.
ReplicateReport cmd_replicate(const RunConfig& config, const fs::path& out, std::ostream* log);

}  // namespace slam
