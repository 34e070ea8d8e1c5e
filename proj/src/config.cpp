#include "slam/config.hpp"

#include <fstream>
#include <set>

namespace slam {

using nlohmann::json;

namespace {

void only_keys(const json& j, const std::string& where, std::initializer_list<const char*> keys) {
  if (!j.is_object()) throw ValidationError(where + " must be a JSON object");
  const std::set<std::string> allowed(keys.begin(), keys.end());
  for (const auto& item : j.items())
    if (!allowed.count(item.key())) throw ValidationError("unknown key '" + item.key() + "' in " + where);
}

template <class T>
void read(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

template <class T>
void read(const json& j, const char* key, std::optional<T>& out) {
  if (j.contains(key) && !j.at(key).is_null()) out = j.at(key).get<T>();
}

std::string design_name(DesignKind k) { return k == DesignKind::one_way ? "one-way" : "two-way"; }

DesignKind parse_design(const std::string& s) {
  if (s == "one-way") return DesignKind::one_way;
  if (s == "two-way") return DesignKind::two_way;
  throw ValidationError("unknown design kind '" + s + "' (expected one-way or two-way)");
}

std::string source_name(WindowSource s) { return s == WindowSource::subject ? "subject" : "group"; }

WindowSource parse_source(const std::string& s) {
  if (s == "subject") return WindowSource::subject;
  if (s == "group") return WindowSource::group;
  throw ValidationError("unknown window source '" + s + "' (expected subject or group)");
}

json window_json(const Window& w) { return json::array({w.a, w.b}); }

Window window_from(const json& j) {
  if (!j.is_array() || j.size() != 2) throw ValidationError("a window is a pair [a, b]");
  return {j.at(0).get<double>(), j.at(1).get<double>()};
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json generator_json(const GeneratorSpec& g) {
  json windows = json::array();
  for (const Window& w : g.windows.windows) windows.push_back(window_json(w));
  return {{"kind", to_string(g.kind)},
          {"n", g.n},
          {"subjects", g.subjects},
          {"sigma", g.sigma},
          {"beta0", {g.beta0(0), g.beta0(1)}},
          {"beta1", {g.beta1(0), g.beta1(1)}},
          {"eta", g.eta},
          {"windows", windows},
          {"curvature", g.curvature},
          {"link", Link(g.link).name()}};
}

GeneratorSpec generator_from(const json& j) {
  only_keys(j, "generator", {"kind", "n", "subjects", "sigma", "beta0", "beta1", "eta", "windows", "curvature", "link"});
  GeneratorSpec g;
  if (j.contains("kind")) g.kind = parse_generator_kind(j.at("kind").get<std::string>());
  read(j, "n", g.n);
  read(j, "subjects", g.subjects);
  read(j, "sigma", g.sigma);
  auto pair = [&](const char* key, Eigen::Vector2d& out) {
    if (!j.contains(key)) return;
    const auto v = j.at(key).get<std::vector<double>>();
    if (v.size() != 2) throw ValidationError(std::string("generator.") + key + " needs two values");
    out = {v[0], v[1]};
  };
  pair("beta0", g.beta0);
  pair("beta1", g.beta1);
  read(j, "eta", g.eta);
  if (j.contains("windows")) {
    g.windows.windows.clear();
    for (const json& w : j.at("windows")) g.windows.windows.push_back(window_from(w));
  }
  read(j, "curvature", g.curvature);
  if (j.contains("link")) g.link = Link::parse(j.at("link").get<std::string>()).kind();
  return g;
}

json amplitude_json(const AmplitudeConfig& a) {
  json j{{"component", a.component + 1},
         {"method", to_string(a.method)},
         {"orientation", to_string(a.orientation)},
         {"baseline", a.baseline},
         {"window_source", source_name(a.window_source)}};
  j["baseline_component"] = a.baseline_component ? json(*a.baseline_component + 1) : json(nullptr);
  j["window"] = a.window ? window_json(*a.window) : json(nullptr);
  return j;
}

AmplitudeConfig amplitude_from(const json& j) {
  only_keys(j, "summary.amplitudes entry",
            {"component", "method", "orientation", "baseline", "baseline_component", "window_source", "window"});
  AmplitudeConfig a;
  std::size_t component = 1;
  read(j, "component", component);
  if (component < 1) throw ValidationError("amplitude components are numbered from 1");
  a.component = component - 1;
  if (j.contains("method")) a.method = parse_amplitude_method(j.at("method").get<std::string>());
  if (j.contains("orientation")) a.orientation = parse_orientation(j.at("orientation").get<std::string>());
  read(j, "baseline", a.baseline);
  if (j.contains("baseline_component") && !j.at("baseline_component").is_null()) {
    const auto k = j.at("baseline_component").get<std::size_t>();
    if (k < 1) throw ValidationError("baseline components are numbered from 1");
    a.baseline_component = k - 1;
  }
  if (j.contains("window_source")) a.window_source = parse_source(j.at("window_source").get<std::string>());
  if (j.contains("window") && !j.at("window").is_null()) a.window = window_from(j.at("window"));
  return a;
}

RunConfig parse(const json& j) {
  only_keys(j, "config",
            {"seed", "windows", "normalized_windows", "design", "link", "priors", "mcem", "chains", "proposals", "init",
             "threads", "summary", "generator", "replicates"});
  RunConfig c;
  read(j, "seed", c.seed);
  c.mcem.seed = c.seed;
  if (j.contains("windows"))
    for (const json& w : j.at("windows")) c.windows.push_back(window_from(w));
  read(j, "normalized_windows", c.normalized_windows);
  if (j.contains("design")) {
    const json& d = j.at("design");
    only_keys(d, "design", {"kind", "baseline"});
    if (d.contains("kind")) c.design = parse_design(d.at("kind").get<std::string>());
    read(d, "baseline", c.baseline_group);
  }
  if (j.contains("link")) c.link = Link::parse(j.at("link").get<std::string>()).kind();
  if (j.contains("priors")) {
    const json& p = j.at("priors");
    only_keys(p, "priors",
              {"beta0_mean", "beta0_sd", "beta_mean", "beta_sd", "eta_shape", "eta_rate", "sigma_shape", "sigma_scale",
               "fixed_eta"});
    read(p, "beta0_mean", c.priors.beta0_mean);
    read(p, "beta0_sd", c.priors.beta0_sd);
    read(p, "beta_mean", c.priors.beta_mean);
    read(p, "beta_sd", c.priors.beta_sd);
    read(p, "eta_shape", c.priors.eta_shape);
    read(p, "eta_rate", c.priors.eta_rate);
    read(p, "sigma_shape", c.priors.sigma_shape);
    read(p, "sigma_scale", c.priors.sigma_scale);
    read(p, "fixed_eta", c.priors.fixed_eta);
  }
  McemConfig& m = c.mcem;
  if (j.contains("mcem")) {
    const json& e = j.at("mcem");
    only_keys(e, "mcem",
              {"estep_draws", "estep_burn_in", "subsample", "epsilon", "max_iterations", "warmup_sweeps",
               "reweight_switch", "reweight_after", "min_ess_fraction", "tau0_init", "h_init", "step_floor",
               "step_ceiling", "xtol", "max_evaluations"});
    read(e, "estep_draws", m.estep_draws);
    read(e, "estep_burn_in", m.estep_burn_in);
    read(e, "subsample", m.subsample);
    read(e, "epsilon", m.epsilon);
    read(e, "max_iterations", m.max_iterations);
    read(e, "warmup_sweeps", m.warmup_sweeps);
    read(e, "reweight_switch", m.reweight_switch);
    read(e, "reweight_after", m.reweight_after);
    read(e, "min_ess_fraction", m.min_ess_fraction);
    read(e, "tau0_init", m.tau0_init);
    read(e, "h_init", m.h_init);
    read(e, "step_floor", m.step_floor);
    read(e, "step_ceiling", m.step_ceiling);
    read(e, "xtol", m.optimizer.xtol);
    read(e, "max_evaluations", m.optimizer.max_evaluations);
  }
  if (j.contains("chains")) {
    const json& f = j.at("chains");
    only_keys(f, "chains", {"chains", "total", "burn_in", "thin"});
    read(f, "chains", m.final_chains.chains);
    read(f, "total", m.final_chains.total);
    read(f, "burn_in", m.final_chains.burn_in);
    read(f, "thin", m.final_chains.thin);
  }
  if (j.contains("proposals")) {
    const json& p = j.at("proposals");
    only_keys(p, "proposals",
              {"adapt_every", "adapt_factor", "t_low", "t_high", "low", "high", "uniform_mix", "min_separation"});
    read(p, "adapt_every", m.adapt.every);
    read(p, "adapt_factor", m.adapt.factor);
    read(p, "t_low", m.adapt.t_low);
    read(p, "t_high", m.adapt.t_high);
    read(p, "low", m.adapt.low);
    read(p, "high", m.adapt.high);
    read(p, "uniform_mix", m.sampler.uniform_mix);
    read(p, "min_separation", m.sampler.min_separation_fraction);
  }
  if (j.contains("init")) {
    const json& i = j.at("init");
    only_keys(i, "init", {"eta", "sigma2"});
    read(i, "eta", m.init.eta);
    read(i, "sigma2", m.init.sigma2);
  }
  read(j, "threads", m.threads);
  if (j.contains("summary")) {
    const json& s = j.at("summary");
    only_keys(s, "summary", {"alpha", "max_draws", "contrasts", "amplitudes", "bands"});
    read(s, "alpha", c.summary.alpha);
    read(s, "max_draws", c.summary.max_draws);
    read(s, "bands", c.summary.bands);
    if (s.contains("contrasts")) {
      for (const json& x : s.at("contrasts")) {
        only_keys(x, "summary.contrasts entry", {"group1", "component1", "group2", "component2"});
        ContrastRequest r;
        const auto g1 = x.at("group1").get<std::size_t>();
        const auto g2 = x.at("group2").get<std::size_t>();
        const auto m1 = x.at("component1").get<std::size_t>();
        const auto m2 = x.contains("component2") ? x.at("component2").get<std::size_t>() : m1;
        if (g1 < 1 || g2 < 1 || m1 < 1 || m2 < 1) throw ValidationError("contrast indices are numbered from 1");
        r.g1 = g1 - 1;
        r.g2 = g2 - 1;
        r.m1 = m1 - 1;
        r.m2 = m2 - 1;
        c.summary.contrasts.push_back(r);
      }
    }
    if (s.contains("amplitudes"))
      for (const json& a : s.at("amplitudes")) c.summary.amplitudes.push_back(amplitude_from(a));
  }
  if (j.contains("generator")) c.generator = generator_from(j.at("generator"));
  read(j, "replicates", c.replicates);
  return c;
}

}  // namespace

void RunConfig::validate() const {
  try {
    mcem.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
  for (const Window& w : windows)
    if (!(w.a < w.b)) throw ValidationError("every window needs a < b");
  if (!(summary.alpha > 0.0 && summary.alpha < 1.0)) throw ValidationError("summary.alpha must lie in (0, 1)");
  if (summary.max_draws < 1) throw ValidationError("summary.max_draws must be positive");
  if (replicates < 1) throw ValidationError("replicates must be at least 1");
  if (!(priors.beta_sd > 0.0)) throw ValidationError("priors.beta_sd must be positive");
  for (double sd : priors.beta0_sd)
    if (!(sd > 0.0)) throw ValidationError("priors.beta0_sd must be positive");
  try {
    generator.validate();
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

json to_json(const RunConfig& c) {
  json windows = json::array();
  for (const Window& w : c.windows) windows.push_back(window_json(w));
  const McemConfig& m = c.mcem;
  json priors{{"beta0_mean", c.priors.beta0_mean}, {"beta0_sd", c.priors.beta0_sd},
              {"beta_mean", c.priors.beta_mean},   {"beta_sd", c.priors.beta_sd},
              {"eta_shape", c.priors.eta_shape},   {"eta_rate", c.priors.eta_rate},
              {"sigma_shape", c.priors.sigma_shape}, {"sigma_scale", c.priors.sigma_scale},
              {"fixed_eta", optional_json(c.priors.fixed_eta)}};
  json contrasts = json::array();
  for (const ContrastRequest& r : c.summary.contrasts)
    contrasts.push_back({{"group1", r.g1 + 1}, {"component1", r.m1 + 1}, {"group2", r.g2 + 1}, {"component2", r.m2 + 1}});
  json amplitudes = json::array();
  for (const AmplitudeConfig& a : c.summary.amplitudes) amplitudes.push_back(amplitude_json(a));
  json design{{"kind", design_name(c.design)}};
  design["baseline"] = c.baseline_group ? json(*c.baseline_group) : json(nullptr);
  return {{"seed", c.seed},
          {"windows", windows},
          {"normalized_windows", c.normalized_windows},
          {"design", design},
          {"link", Link(c.link).name()},
          {"priors", priors},
          {"mcem",
           {{"estep_draws", m.estep_draws},
            {"estep_burn_in", m.estep_burn_in},
            {"subsample", m.subsample},
            {"epsilon", m.epsilon},
            {"max_iterations", m.max_iterations},
            {"warmup_sweeps", m.warmup_sweeps},
            {"reweight_switch", m.reweight_switch},
            {"reweight_after", m.reweight_after},
            {"min_ess_fraction", m.min_ess_fraction},
            {"tau0_init", optional_json(m.tau0_init)},
            {"h_init", optional_json(m.h_init)},
            {"step_floor", m.step_floor},
            {"step_ceiling", m.step_ceiling},
            {"xtol", m.optimizer.xtol},
            {"max_evaluations", m.optimizer.max_evaluations}}},
          {"chains",
           {{"chains", m.final_chains.chains},
            {"total", m.final_chains.total},
            {"burn_in", m.final_chains.burn_in},
            {"thin", m.final_chains.thin}}},
          {"proposals",
           {{"adapt_every", m.adapt.every},
            {"adapt_factor", m.adapt.factor},
            {"t_low", m.adapt.t_low},
            {"t_high", m.adapt.t_high},
            {"low", m.adapt.low},
            {"high", m.adapt.high},
            {"uniform_mix", m.sampler.uniform_mix},
            {"min_separation", m.sampler.min_separation_fraction}}},
          {"init", {{"eta", m.init.eta}, {"sigma2", m.init.sigma2}}},
          {"threads", m.threads},
          {"summary",
           {{"alpha", c.summary.alpha},
            {"max_draws", c.summary.max_draws},
            {"contrasts", contrasts},
            {"amplitudes", amplitudes},
            {"bands", c.summary.bands}}},
          {"generator", generator_json(c.generator)},
          {"replicates", c.replicates}};
}

RunConfig config_from_json(const json& j) {
  RunConfig c;
  try {
    c = parse(j);
  } catch (const ValidationError&) {
    throw;
  } catch (const std::exception& e) {
    throw ValidationError(std::string("invalid config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path.string() + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ValidationError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  // a fit manifest carries its configuration under "config"
  if (j.is_object() && j.contains("config") && j.contains("checksum")) j = j.at("config");
  try {
    return config_from_json(j);
  } catch (const ValidationError& e) {
    throw ValidationError("config file '" + path.string() + "': " + e.what());
  }
}

SearchWindows resolve_windows(const RunConfig& config, const WaveformDataset& data) {
  SearchWindows w;
  if (config.windows.empty()) {
    const double mid = 0.5 * (data.grid.front() + data.grid.back());
    w.windows = {{data.grid.front(), mid}, {mid, data.grid.back()}};
    return w;
  }
  w.windows = config.windows;
  return config.normalized_windows ? windows_from_normalized(w, data.grid) : w;
}

Model build_model(const RunConfig& config, const WaveformDataset& data) {
  try {
    const SearchWindows windows = resolve_windows(config, data);
    FactorDesign design = encode_design(data, config.design, config.baseline_group);
    const auto M = static_cast<Eigen::Index>(windows.size());
    const auto P = static_cast<Eigen::Index>(design.column_count());
    Priors priors = default_priors(design, windows.size());
    CoefficientPrior& cp = priors.coefficients;
    auto per_component = [&](const std::vector<double>& v, Eigen::VectorXd& out, const char* name) {
      if (v.empty()) return;
      if (static_cast<Eigen::Index>(v.size()) != M)
        throw ValidationError(std::string("priors.") + name + " needs one value per window");
      out = Eigen::Map<const Eigen::VectorXd>(v.data(), M);
    };
    per_component(config.priors.beta0_mean, cp.mu0, "beta0_mean");
    per_component(config.priors.beta0_sd, cp.sd0, "beta0_sd");
    cp.mu1 = Eigen::MatrixXd::Constant(P, M, config.priors.beta_mean);
    cp.sd1 = Eigen::MatrixXd::Constant(P, M, config.priors.beta_sd);
    priors.eta_shape = config.priors.eta_shape;
    priors.eta_rate = config.priors.eta_rate;
    priors.sigma_shape = config.priors.sigma_shape;
    priors.sigma_scale = config.priors.sigma_scale;
    priors.fixed_eta = config.priors.fixed_eta;
    return make_model(data, windows, std::move(design), Link(config.link), std::move(priors));
  } catch (const ValidationError&) {
    throw;
  } catch (const std::invalid_argument& e) {
    throw ValidationError(e.what());
  }
}

std::vector<AmplitudeConfig> resolve_amplitudes(const RunConfig& config, std::size_t components) {
  if (!config.summary.amplitudes.empty()) {
    for (const AmplitudeConfig& a : config.summary.amplitudes) {
      if (a.component >= components) throw ValidationError("amplitude request for a component that does not exist");
      if (a.baseline_component && *a.baseline_component >= components)
        throw ValidationError("amplitude baseline refers to a component that does not exist");
    }
    return config.summary.amplitudes;
  }
  std::vector<AmplitudeConfig> out;
  for (std::size_t m = 0; m < components; ++m) {
    AmplitudeConfig a;
    a.component = m;
    a.orientation = m % 2 == 0 ? Orientation::dip : Orientation::peak;
    out.push_back(a);
  }
  return out;
}

}  // namespace slam
