// slam: simulate, fit, summarize, diagnose, replicate.
// Exit codes: 0 success, 2 invalid input, 3 runtime failure.

#include "slam/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

namespace {

struct Common {
  std::string config;
  std::string out{"."};
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::optional<int> threads;
};

void add_common(CLI::App* cmd, Common& c, bool run_flags) {
  cmd->add_option("--config", c.config, "JSON config (a fit manifest also works)");
  cmd->add_option("--out", c.out, "output directory");
  if (run_flags) {
    cmd->add_option("--seed", c.seed, "master seed (overrides the config)");
    cmd->add_option("--chains", c.chains, "number of final chains")->check(CLI::PositiveNumber);
    cmd->add_option("--threads", c.threads, "worker threads")->check(CLI::PositiveNumber);
  }
}

slam::RunConfig resolve(const Common& c) {
  slam::RunConfig cfg = c.config.empty() ? slam::RunConfig{} : slam::load_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.mcem.seed = cfg.seed;
  if (c.chains) cfg.mcem.final_chains.chains = *c.chains;
  if (c.threads) cfg.mcem.threads = *c.threads;
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian latency and amplitude estimation for multi-subject waveforms"};
  app.require_subcommand(1);

  Common sim_opts;
  std::optional<std::string> kind;
  auto* simulate = app.add_subcommand("simulate", "generate a synthetic dataset with ground truth");
  add_common(simulate, sim_opts, true);
  simulate->add_option("--kind", kind, "sine-cosine or model-based (overrides the config)");

  Common fit_opts;
  std::string data;
  auto* fit = app.add_subcommand("fit", "MCEM fit followed by the final chains");
  add_common(fit, fit_opts, true);
  fit->add_option("--data", data, "long-format CSV (subject,group,time,y)")->required();

  Common sum_opts;
  std::string sum_fit;
  std::optional<std::string> sum_data;
  auto* summarize = app.add_subcommand("summarize", "latency, contrast, amplitude and band summaries of a fit");
  summarize->add_option("fit", sum_fit, "fit output directory")->required();
  summarize->add_option("--config", sum_opts.config, "config overriding the one stored with the fit");
  summarize->add_option("--data", sum_data, "data file (default: the one recorded in the manifest)");
  summarize->add_option("--out", sum_opts.out, "output directory");

  std::string diag_fit;
  std::string diag_out{"."};
  auto* diagnose = app.add_subcommand("diagnose", "split R-hat and acceptance rates of a fit");
  diagnose->add_option("fit", diag_fit, "fit output directory")->required();
  diagnose->add_option("--out", diag_out, "output directory");

  Common rep_opts;
  std::optional<int> replicates;
  auto* replicate = app.add_subcommand("replicate", "repeated simulate + fit with RMSE scoring");
  add_common(replicate, rep_opts, true);
  replicate->add_option("--replicates,-R", replicates, "number of replicates")->check(CLI::PositiveNumber);
  replicate->add_option("--kind", kind, "sine-cosine or model-based (overrides the config)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) {
      slam::RunConfig cfg = resolve(sim_opts);
      if (kind) cfg.generator.kind = slam::parse_generator_kind(*kind);
      slam::cmd_simulate(cfg, sim_opts.out);
    } else if (*fit) {
      const slam::FitOutcome r = slam::cmd_fit(resolve(fit_opts), data, fit_opts.out, &std::cerr);
      if (!r.warning.empty()) std::cerr << "warning: " << r.warning << '\n';
    } else if (*summarize) {
      std::optional<slam::RunConfig> cfg;
      if (!sum_opts.config.empty()) cfg = slam::load_config(sum_opts.config);
      std::optional<slam::fs::path> d;
      if (sum_data) d = *sum_data;
      slam::cmd_summarize(sum_fit, cfg, d, sum_opts.out);
    } else if (*diagnose) {
      slam::cmd_diagnose(diag_fit, diag_out);
    } else if (*replicate) {
      slam::RunConfig cfg = resolve(rep_opts);
      if (kind) cfg.generator.kind = slam::parse_generator_kind(*kind);
      if (replicates) cfg.replicates = *replicates;
      const slam::ReplicateReport r = slam::cmd_replicate(cfg, rep_opts.out, &std::cerr);
      if (r.failures > 0) std::cerr << "warning: " << r.failures << " replicate(s) failed; see replicate_detail.csv\n";
    }
  } catch (const slam::ValidationError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
