#include "slam/commands.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <memory>
#include <regex>
#include <sstream>

namespace slam {

using nlohmann::json;

namespace {

std::string num(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::ofstream open_out(const fs::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  return out;
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out = open_out(path);
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("failed writing '" + path.string() + "'");
}

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void make_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw std::runtime_error("cannot create directory '" + dir.string() + "': " + ec.message());
}

json matrix_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Eigen::Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(row);
  }
  return rows;
}

json interval_json(const IntervalSummary& s) {
  return {{"mean", s.mean}, {"median", s.median}, {"sd", s.sd}, {"lo", s.lo}, {"hi", s.hi}};
}

json rates_json(const FamilyRates& r) {
  return {{"t", r.t}, {"beta0", r.beta0}, {"beta", r.beta}, {"eta", r.eta}};
}

WaveformDataset load_data(const fs::path& path) {
  if (!fs::exists(path)) throw ValidationError("data file '" + path.string() + "' does not exist");
  try {
    return read_long_csv(path);
  } catch (const std::exception& e) {
    throw ValidationError(e.what());
  }
}

std::string safe_label(const std::string& s) {
  std::string out;
  for (char c : s) out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '.') ? c : '_';
  return out;
}

}  // namespace

std::string file_checksum(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in.read(buf, sizeof buf) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(buf[i]);
      h *= 0x100000001b3ULL;
    }
  }
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << h;
  return s.str();
}

void cmd_simulate(const RunConfig& config, const fs::path& out) {
  const Simulated sim = generate(config.generator, config.seed);
  make_dir(out);
  write_long_csv(sim.data, out / "data.csv");

  json windows = json::array();
  for (const Window& w : sim.windows.windows) windows.push_back({w.a, w.b});
  json orientation = json::array();
  for (Orientation o : sim.truth.orientation) orientation.push_back(to_string(o));
  json series = json::array();
  for (std::size_t i = 0; i < sim.data.series_count(); ++i)
    series.push_back({{"group", sim.data.groups[sim.data.series[i].group]}, {"subject", sim.data.series[i].subject}});
  json truth{{"seed", config.seed},
             {"generator", to_json(config)["generator"]},
             {"windows", windows},
             {"orientation", orientation},
             {"series", series},
             {"latency", matrix_json(sim.truth.latency)},
             {"amplitude", matrix_json(sim.truth.amplitude)},
             {"curves", matrix_json(sim.truth.curves)}};
  truth["r"] = sim.truth.r.size() ? matrix_json(sim.truth.r) : json(nullptr);
  write_json(out / "truth.json", truth);

  RunConfig fit = config;
  fit.windows = sim.windows.windows;
  fit.normalized_windows = false;
  fit.summary.amplitudes.clear();
  for (std::size_t m = 0; m < sim.windows.size(); ++m) {
    AmplitudeConfig a;
    a.component = m;
    a.orientation = sim.truth.orientation[m];
    fit.summary.amplitudes.push_back(a);
  }
  write_json(out / "config.json", to_json(fit));
}

FitOutcome cmd_fit(const RunConfig& config, const fs::path& data_path, const fs::path& out, std::ostream* log) {
  const WaveformDataset data = load_data(data_path);
  const Model model = build_model(config, data);
  McemConfig mcem = config.mcem;
  mcem.seed = config.seed;
  const std::string checksum = file_checksum(data_path);
  make_dir(out);

  json manifest{{"config", to_json(config)},
                {"seed", config.seed},
                {"data", fs::absolute(data_path).lexically_normal().string()},
                {"checksum", checksum},
                {"complete", false},
                {"warning", nullptr}};
  write_json(out / "manifest.json", manifest);

  const std::vector<std::string> names = parameter_names(model);
  const int chains = mcem.final_chains.chains;
  std::vector<std::unique_ptr<std::ofstream>> files;
  for (int k = 1; k <= chains; ++k) {
    files.push_back(std::make_unique<std::ofstream>(open_out(out / ("chain_" + std::to_string(k) + ".csv"))));
    *files.back() << "draw,chain,parameter,value\n";
  }
  // one file per chain, so concurrent chains never share a writer
  const ChainSink sink = [&](int chain, std::size_t draw, const LatentState& state) {
    std::ofstream& f = *files[static_cast<std::size_t>(chain - 1)];
    const Eigen::VectorXd v = flatten(model, state);
    const std::string prefix = std::to_string(draw + 1) + "," + std::to_string(chain) + ",";
    std::string block;
    for (std::size_t j = 0; j < names.size(); ++j)
      block += prefix + names[j] + "," + num(v(static_cast<Eigen::Index>(j))) + "\n";
    f << block;
  };
  const ProgressLog progress = [&](const EmIteration& it) {
    if (!log) return;
    *log << "em " << it.index << " tau0=" << num(it.theta.tau0) << " h=" << num(it.theta.h)
         << " delta=" << num(it.delta) << (it.reweighted ? " reweighted" : " fresh") << " ess=" << num(it.ess)
         << std::endl;
  };

  const McemResult result = run_mcem(model, mcem, sink, progress);
  for (auto& f : files) {
    f->flush();
    if (!*f) throw std::runtime_error("failed writing chain files in '" + out.string() + "'");
  }

  {
    std::ofstream trace = open_out(out / "trace.csv");
    trace << "iteration,tau0,h,delta,objective,start_objective,ess,reweighted,acc_t,acc_beta0,acc_beta,acc_eta,"
             "evaluations,optimizer_flag\n";
    for (const EmIteration& it : result.trace.iterations)
      trace << it.index << ',' << num(it.theta.tau0) << ',' << num(it.theta.h) << ',' << num(it.delta) << ','
            << num(it.objective) << ',' << num(it.start_objective) << ',' << num(it.ess) << ','
            << (it.reweighted ? 1 : 0) << ',' << num(it.acceptance.t) << ',' << num(it.acceptance.beta0) << ','
            << num(it.acceptance.beta) << ',' << num(it.acceptance.eta) << ',' << it.evaluations << ','
            << (it.optimizer_flag ? 1 : 0) << '\n';
  }

  double sigma2 = 0.0;
  std::size_t count = 0;
  for (const PosteriorChain& c : result.chains)
    for (const LatentState& s : c.draws) {
      sigma2 += s.sigma2;
      ++count;
    }
  sigma2 = count ? sigma2 / static_cast<double>(count) : std::nan("");
  json deltas = json::array();
  for (const EmIteration& it : result.trace.iterations) deltas.push_back(it.delta);
  const Theta& th = result.trace.theta;
  write_json(out / "theta.json", {{"tau0", th.tau0},
                                  {"h", th.h},
                                  {"tau", th.tau0 * std::sqrt(sigma2)},
                                  {"sigma2_mean", sigma2},
                                  {"initial", {{"tau0", result.trace.initial.tau0}, {"h", result.trace.initial.h}}},
                                  {"iterations", result.trace.iterations.size()},
                                  {"converged", result.trace.converged},
                                  {"epsilon", mcem.epsilon},
                                  {"deltas", deltas}});

  json acceptance = json::array();
  for (const PosteriorChain& c : result.chains)
    acceptance.push_back({{"chain", c.id}, {"draws", c.draws.size()}, {"rates", rates_json(family_rates(c.stats))}});
  write_json(out / "acceptance.json", acceptance);

  FitOutcome outcome{result.trace, result.trace.converged, ""};
  if (!outcome.converged)
    outcome.warning = "MCEM reached max_iterations (" + std::to_string(mcem.max_iterations) +
                      ") before the step fell below epsilon";
  manifest["complete"] = true;
  manifest["warning"] = outcome.warning.empty() ? json(nullptr) : json(outcome.warning);
  manifest["outputs"] = {"theta.json", "trace.csv", "acceptance.json"};
  for (int k = 1; k <= chains; ++k) manifest["outputs"].push_back("chain_" + std::to_string(k) + ".csv");
  write_json(out / "manifest.json", manifest);
  return outcome;
}

std::vector<ChainFile> read_chain_files(const fs::path& fit_dir) {
  if (!fs::is_directory(fit_dir)) throw ValidationError("fit directory '" + fit_dir.string() + "' does not exist");
  const std::regex pattern("chain_([0-9]+)\\.csv");
  std::vector<std::pair<int, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(fit_dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stoi(m[1].str()), entry.path());
  }
  std::sort(found.begin(), found.end());
  std::vector<ChainFile> out;
  for (const auto& [id, path] : found) {
    std::ifstream in(path);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(in, line) || line != "draw,chain,parameter,value")
      throw ValidationError("'" + path.string() + "' lacks the header draw,chain,parameter,value");
    ChainFile file;
    file.id = id;
    std::map<std::string, std::size_t> index;
    long current = -1;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const auto c1 = line.find(',');
      const auto c2 = line.find(',', c1 + 1);
      const auto c3 = line.find(',', c2 + 1);
      if (c1 == std::string::npos || c2 == std::string::npos || c3 == std::string::npos)
        throw ValidationError("'" + path.string() + "' line " + std::to_string(line_no) + ": expected 4 fields");
      long draw = 0;
      double value = 0.0;
      const std::string param = line.substr(c2 + 1, c3 - c2 - 1);
      const auto r1 = std::from_chars(line.data(), line.data() + c1, draw);
      const auto r2 = std::from_chars(line.data() + c3 + 1, line.data() + line.size(), value);
      if (r1.ec != std::errc() || r2.ec != std::errc())
        throw ValidationError("'" + path.string() + "' line " + std::to_string(line_no) + ": bad number");
      if (draw != current) {
        if (current >= 0 && file.values.back().size() != file.names.size())
          throw ValidationError("'" + path.string() + "': draw " + std::to_string(current) + " is incomplete");
        current = draw;
        file.values.emplace_back();
      }
      if (file.values.size() == 1) {
        index[param] = file.names.size();
        file.names.push_back(param);
      } else {
        const std::size_t k = file.values.back().size();
        if (k >= file.names.size() || file.names[k] != param)
          throw ValidationError("'" + path.string() + "' line " + std::to_string(line_no) +
                                ": parameter order differs between draws");
      }
      file.values.back().push_back(value);
    }
    if (!file.values.empty() && file.values.back().size() != file.names.size())
      file.values.pop_back();  // interrupted mid-draw
    out.push_back(std::move(file));
  }
  if (out.empty()) throw ValidationError("no chain_<k>.csv files in '" + fit_dir.string() + "'");
  return out;
}

std::vector<PosteriorChain> chains_for_model(const Model& model, const std::vector<ChainFile>& files) {
  const std::vector<std::string> names = parameter_names(model);
  std::vector<PosteriorChain> chains;
  for (const ChainFile& f : files) {
    if (f.names != names)
      throw ValidationError("chain " + std::to_string(f.id) + " does not match the model's parameters");
    PosteriorChain c;
    c.id = f.id;
    for (const auto& row : f.values)
      c.draws.push_back(unflatten(model, Eigen::Map<const Eigen::VectorXd>(row.data(), static_cast<Eigen::Index>(row.size()))));
    if (c.draws.empty()) throw ValidationError("chain " + std::to_string(f.id) + " has no draws");
    chains.push_back(std::move(c));
  }
  return chains;
}

FitRecord read_fit_record(const fs::path& fit_dir) {
  const json manifest = read_json(fit_dir / "manifest.json");
  const json theta = read_json(fit_dir / "theta.json");
  FitRecord rec;
  try {
    rec.config = config_from_json(manifest.at("config"));
    rec.data = manifest.at("data").get<std::string>();
    rec.theta = {theta.at("tau0").get<double>(), theta.at("h").get<double>()};
  } catch (const json::exception& e) {
    throw ValidationError("fit directory '" + fit_dir.string() + "' has a malformed manifest: " + e.what());
  }
  return rec;
}

void cmd_summarize(const fs::path& fit_dir, const std::optional<RunConfig>& config_override,
                   const std::optional<fs::path>& data_override, const fs::path& out) {
  const FitRecord rec = read_fit_record(fit_dir);
  const RunConfig config = config_override ? *config_override : rec.config;
  const WaveformDataset data = load_data(data_override ? *data_override : rec.data);
  const Model model = build_model(config, data);
  const std::vector<PosteriorChain> chains = chains_for_model(model, read_chain_files(fit_dir));
  const double alpha = config.summary.alpha;
  const std::vector<const LatentState*> pooled = pooled_draws(chains);
  const std::vector<const LatentState*> thinned = thin_draws(pooled, config.summary.max_draws);
  const auto G = static_cast<std::size_t>(model.groups());
  const auto M = static_cast<std::size_t>(model.components());
  make_dir(out);

  json summary{{"time_unit", data.time_unit},
               {"theta", {{"tau0", rec.theta.tau0}, {"h", rec.theta.h}}},
               {"alpha", alpha},
               {"draws", pooled.size()},
               {"chains", chains.size()}};

  const LatencySummary lat = latency_summary(model, pooled, alpha);
  json subjects = json::array();
  for (std::size_t i = 0; i < data.series_count(); ++i)
    for (std::size_t m = 0; m < M; ++m)
      subjects.push_back({{"group", data.groups[data.series[i].group]},
                          {"subject", data.series[i].subject},
                          {"component", m + 1},
                          {"t", interval_json(lat.subject[i][m])}});
  json groups = json::array();
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t m = 0; m < M; ++m)
      groups.push_back({{"group", data.groups[g]},
                        {"component", m + 1},
                        {"r", interval_json(lat.group_r[g][m])},
                        {"time", interval_json(lat.group_time[g][m])}});
  summary["latency"] = {{"subjects", subjects}, {"groups", groups}};

  std::vector<ContrastRequest> requests = config.summary.contrasts;
  if (requests.empty())
    for (std::size_t g = 1; g < G; ++g)
      for (std::size_t m = 0; m < M; ++m) requests.push_back({g, m, 0, m});
  if (G > 1 || !config.summary.contrasts.empty()) {
    json contrasts = json::array();
    for (const ContrastRequest& r : requests) {
      ContrastSummary c;
      try {
        c = group_contrast(model, pooled, r, alpha);
      } catch (const std::invalid_argument& e) {
        throw ValidationError(e.what());
      }
      contrasts.push_back({{"group1", data.groups[r.g1]},
                           {"component1", r.m1 + 1},
                           {"group2", data.groups[r.g2]},
                           {"component2", r.m2 + 1},
                           {"difference", interval_json(c.diff)},
                           {"prob_positive", c.prob_positive}});
    }
    summary["contrasts"] = contrasts;
  }

  const CurveSampler sampler(model, rec.theta);
  const std::vector<AmplitudeConfig> amps = resolve_amplitudes(config, M);
  std::vector<Orientation> orientations(M, Orientation::peak);
  for (std::size_t m = 0; m < M; ++m) orientations[m] = m % 2 == 0 ? Orientation::dip : Orientation::peak;
  for (const AmplitudeConfig& a : amps) orientations[a.component] = a.orientation;

  std::ofstream amp_csv = open_out(out / "amplitude.csv");
  amp_csv << "group,subject,component,method,orientation,baseline,window_source,draw,value,location,flagged\n";
  json amp_json = json::array();
  for (std::size_t i = 0; i < data.series_count(); ++i) {
    const Series& s = data.series[i];
    for (std::size_t k = 0; k < amps.size(); ++k) {
      const AmplitudeConfig& a = amps[k];
      AmplitudeRequest req{a.component, a.method, a.orientation, {a.baseline, a.baseline_component},
                           a.window_source, a.window};
      Rng rng = make_stream(config.seed, StreamKind::paths,
                            {hash_label(data.groups[s.group]), hash_label(s.subject), static_cast<std::uint64_t>(k)});
      const AmplitudeSamples z =
          amplitude_samples(model, sampler, thinned, static_cast<Eigen::Index>(i), req, orientations, rng);
      const std::string method = to_string(z.method);
      const std::string source = a.window_source == WindowSource::subject ? "subject" : "group";
      std::size_t flagged = 0;
      for (std::size_t d = 0; d < z.values.size(); ++d) {
        flagged += z.flagged[d] ? 1 : 0;
        amp_csv << data.groups[s.group] << ',' << s.subject << ',' << a.component + 1 << ',' << method << ','
                << to_string(z.orientation) << ',' << z.baseline << ',' << source << ',' << d + 1 << ','
                << num(z.values[d]) << ',' << num(z.locations[d]) << ',' << (z.flagged[d] ? 1 : 0) << '\n';
      }
      amp_json.push_back({{"group", data.groups[s.group]},
                          {"subject", s.subject},
                          {"component", a.component + 1},
                          {"method", method},
                          {"orientation", to_string(z.orientation)},
                          {"baseline", z.baseline},
                          {"window_source", source},
                          {"window", {z.window.a, z.window.b}},
                          {"value", interval_json(summarize_values(z.values, alpha))},
                          {"flagged_draws", flagged}});
    }
  }
  summary["amplitudes"] = amp_json;

  if (config.summary.bands) {
    make_dir(out / "bands");
    const Eigen::VectorXd& x = data.grid.points;
    for (std::size_t i = 0; i < data.series_count(); ++i) {
      const Series& s = data.series[i];
      Rng rng = make_stream(config.seed, StreamKind::paths,
                            {hash_label(data.groups[s.group]), hash_label(s.subject), 0xba4dULL});
      const CurveBand band = curve_band(sampler.paths(static_cast<Eigen::Index>(i), thinned, x, rng), x, alpha);
      std::ofstream f = open_out(out / "bands" / (safe_label(data.groups[s.group]) + "_" + safe_label(s.subject) + ".csv"));
      f << "x,mean,lo,hi\n";
      for (Eigen::Index k = 0; k < x.size(); ++k)
        f << num(band.x(k)) << ',' << num(band.mean(k)) << ',' << num(band.lo(k)) << ',' << num(band.hi(k)) << '\n';
    }
  }
  write_json(out / "summary.json", summary);
}

void cmd_diagnose(const fs::path& fit_dir, const fs::path& out) {
  const std::vector<ChainFile> files = read_chain_files(fit_dir);
  if (files.size() < 2)
    throw ValidationError("R-hat needs at least two chains; rerun fit with --chains 2 or more");
  for (const ChainFile& f : files)
    if (f.names != files.front().names)
      throw ValidationError("chain " + std::to_string(f.id) + " has a different parameter set");
  std::size_t len = files.front().values.size();
  for (const ChainFile& f : files) len = std::min(len, f.values.size());
  if (len < 4) throw ValidationError("R-hat needs at least 4 draws per chain");
  make_dir(out);

  std::ofstream csv = open_out(out / "rhat.csv");
  csv << "parameter,rhat\n";
  json flags = json::array();
  double worst = 0.0;
  std::vector<std::vector<double>> per(files.size(), std::vector<double>(len));
  for (std::size_t j = 0; j < files.front().names.size(); ++j) {
    for (std::size_t c = 0; c < files.size(); ++c)
      for (std::size_t d = 0; d < len; ++d) per[c][d] = files[c].values[d][j];
    const double r = split_rhat(per);
    const std::string& name = files.front().names[j];
    csv << name << ',' << num(r) << '\n';
    if (!(r < 1.1)) flags.push_back(name);
    worst = std::max(worst, r);
  }
  json diag{{"chains", files.size()}, {"draws_per_chain", len}, {"threshold", 1.1}, {"max_rhat", worst}, {"flagged", flags}};
  if (fs::exists(fit_dir / "acceptance.json")) diag["acceptance"] = read_json(fit_dir / "acceptance.json");
  write_json(out / "diagnostics.json", diag);
}

ReplicateReport cmd_replicate(const RunConfig& config, const fs::path& out, std::ostream* log) {
  make_dir(out);
  ReplicateOptions opts;
  opts.replicates = config.replicates;
  opts.master_seed = config.seed;
  opts.threads = config.mcem.threads;
  opts.max_draws = config.summary.max_draws;
  const ReplicateReport report =
      run_replicates(config.generator, config.mcem, opts, [&](int r, bool ok) {
        if (log) *log << "replicate " << r + 1 << "/" << opts.replicates << (ok ? " done" : " FAILED") << std::endl;
      });

  std::ofstream table = open_out(out / "replicate_table.csv");
  table << "method,group,latency_rmse_mean,latency_rmse_sd,amplitude_rmse_mean,amplitude_rmse_sd\n";
  for (const TableRow& r : report.table)
    table << r.method << ',' << r.group << ',' << num(r.latency_rmse_mean) << ',' << num(r.latency_rmse_sd) << ','
          << num(r.amplitude_rmse_mean) << ',' << num(r.amplitude_rmse_sd) << '\n';

  std::ofstream detail = open_out(out / "replicate_detail.csv");
  detail << "replicate,seed,method,group,latency_rmse,amplitude_rmse,converged,em_iterations,failed,message\n";
  for (const ReplicateRow& r : report.detail) {
    std::string msg = r.message;
    std::replace(msg.begin(), msg.end(), '"', '\'');
    detail << r.replicate + 1 << ',' << r.seed << ',' << r.method << ',' << r.group << ',' << num(r.latency_rmse)
           << ',' << num(r.amplitude_rmse) << ',' << (r.converged ? 1 : 0) << ',' << r.em_iterations << ','
           << (r.failed ? 1 : 0) << ",\"" << msg << "\"\n";
  }
  return report;
}

}  // namespace slam
