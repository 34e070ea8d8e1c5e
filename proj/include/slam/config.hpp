#pragma once

// Run configuration as a JSON document.  Every field is optional on input;
// missing fields take the defaults below.  `load_config` also accepts a fit
// manifest, whose "config" member is the configuration it was run with.

#include "slam/mcem.hpp"
#include "slam/posterior.hpp"
#include "slam/simulation.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace slam {

// Bad input (config, data, arguments); maps to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PriorConfig {
  std::vector<double> beta0_mean;  // per component; empty: all zero
  std::vector<double> beta0_sd;    // empty: all one
  double beta_mean{0.0};           // shared by every beta_p^m
  double beta_sd{1.0};
  double eta_shape{0.5};
  double eta_rate{0.5};
  double sigma_shape{0.5};
  double sigma_scale{0.5};
  std::optional<double> fixed_eta;
};

struct AmplitudeConfig {
  std::size_t component{0};  // 0-based internally, 1-based in JSON
  AmplitudeMethod method{AmplitudeMethod::max_peak};
  Orientation orientation{Orientation::peak};
  double baseline{0.0};
  std::optional<std::size_t> baseline_component;
  WindowSource window_source{WindowSource::subject};
  std::optional<Window> window;
};

struct SummaryConfig {
  double alpha{0.05};
  int max_draws{2000};  // thinned draws used for curve paths
  std::vector<ContrastRequest> contrasts;  // empty: every group against the first, per component
  std::vector<AmplitudeConfig> amplitudes;  // empty: max-peak per component, dip/peak alternating
  bool bands{true};
};

struct RunConfig {
  std::uint64_t seed{1};
  std::vector<Window> windows;  // empty: split the grid span in two
  bool normalized_windows{false};  // windows given on (0, 1), mapped onto the grid
  DesignKind design{DesignKind::one_way};
  std::optional<std::string> baseline_group;
  LinkKind link{LinkKind::logit};
  PriorConfig priors;
  McemConfig mcem;
  SummaryConfig summary;
  GeneratorSpec generator;
  int replicates{10};

  void validate() const;
};

nlohmann::json to_json(const RunConfig& config);
RunConfig config_from_json(const nlohmann::json& j);
// Reads a config or a manifest; throws ValidationError naming the path.
RunConfig load_config(const std::filesystem::path& path);

// Search windows for `data` under `config` (grid units).
SearchWindows resolve_windows(const RunConfig& config, const WaveformDataset& data);
Model build_model(const RunConfig& config, const WaveformDataset& data);
// Amplitude requests, defaulting to max-peak per component with dip/peak alternating.
std::vector<AmplitudeConfig> resolve_amplitudes(const RunConfig& config, std::size_t components);

}  // namespace slam
