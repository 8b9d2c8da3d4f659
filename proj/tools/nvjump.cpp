// nvjump: simulate and analyze NV-center nuclear-spin quantum-jump experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numeric or fit failure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "nvjump/analysis.hpp"
#include "nvjump/io.hpp"
#include "nvjump/relaxation.hpp"
#include "nvjump/scenarios.hpp"
#include "nvjump/spin_model.hpp"

namespace fs = std::filesystem;
using nvjump::io::json;
using nvjump::io::quantity;

namespace {

constexpr int exit_ok = 0;
constexpr int exit_config = 2;
constexpr int exit_io = 3;
constexpr int exit_numeric = 4;

struct Flags {
  std::string scenario;
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = ".";
  std::string thresholds;
  std::optional<std::size_t> bins;
  std::string field_grid;
  std::string input;    // trace file for analyze / fit-histograms
  std::string dataset;  // T1 dataset for scan-field
  std::optional<double> field;
  std::optional<double> polarization;
  std::optional<std::size_t> points;
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

json load_config(const std::string& path) {
  if (path.empty()) return json::object();
  auto in = nvjump::io::open_input(path);
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    auto j = json::parse(buf.str());
    if (!j.is_object()) throw nvjump::InvalidConfig(path + ": top level must be a JSON object");
    return j;
  } catch (const json::parse_error& e) {
    throw nvjump::InvalidConfig(path + ": " + e.what());
  }
}

// Reads `key` from `block` as a number, rejecting other types with the field path in the message.
double number_field(const json& block, const std::string& key, const std::string& where) {
  const auto& v = block.at(key);
  if (!v.is_number()) throw nvjump::InvalidConfig(where + "." + key + ": expected a number");
  return v.get<double>();
}

void reject_unknown(const json& block, const std::vector<std::string>& known, const std::string& where) {
  if (!block.is_object()) throw nvjump::InvalidConfig(where + ": expected an object");
  for (const auto& [key, value] : block.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end())
      throw nvjump::InvalidConfig(where + "." + key + ": unknown field");
  }
}

std::vector<double> parse_pair(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw nvjump::InvalidConfig(what + ": '" + item + "' is not a number");
    }
  }
  return out;
}

// "start:stop:step" or a comma-separated list of fields in G.
std::vector<double> parse_field_grid(const std::string& text) {
  std::vector<double> grid;
  if (text.find(':') != std::string::npos) {
    std::string spec = text;
    std::replace(spec.begin(), spec.end(), ':', ',');
    const auto p = parse_pair(spec, "--field-grid");
    if (p.size() != 3 || !(p[2] > 0.0) || !(p[1] >= p[0]))
      throw nvjump::InvalidConfig("--field-grid: expected start:stop:step with step > 0 and stop >= start");
    const auto n = static_cast<std::size_t>(std::floor((p[1] - p[0]) / p[2] + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) grid.push_back(p[0] + static_cast<double>(i) * p[2]);
  } else {
    grid = parse_pair(text, "--field-grid");
  }
  if (grid.empty()) throw nvjump::InvalidConfig("--field-grid: empty grid");
  return grid;
}

std::uint64_t resolve_seed(const Flags& f, const json& cfg) {
  if (f.seed) return *f.seed;
  if (cfg.contains("seed")) {
    if (!cfg["seed"].is_number_unsigned()) throw nvjump::InvalidConfig("seed: expected a non-negative integer");
    return cfg["seed"].get<std::uint64_t>();
  }
  if (const char* env = std::getenv("NVJUMP_SEED")) {
    try {
      std::size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string(env).size()) throw std::invalid_argument(env);
      return v;
    } catch (const std::exception&) {
      throw nvjump::InvalidConfig(std::string("NVJUMP_SEED: not an unsigned integer: '") + env + "'");
    }
  }
  return 1;
}

std::string resolve_scenario(const Flags& f, const json& cfg, const std::string& fallback) {
  if (!f.scenario.empty()) return f.scenario;
  if (cfg.contains("scenario")) {
    if (!cfg["scenario"].is_string()) throw nvjump::InvalidConfig("scenario: expected a string");
    return cfg["scenario"].get<std::string>();
  }
  return fallback;
}

nvjump::TraceScenario trace_scenario_or_throw(const std::string& name) {
  auto s = nvjump::trace_scenario(name);
  if (!s) throw nvjump::InvalidConfig("scenario: '" + name + "' is not a trace scenario (c13-fig2, c13-380kHz, register-fig4)");
  return *s;
}

void apply_simulation_overrides(nvjump::TraceScenario& s, const json& cfg) {
  if (!cfg.contains("simulation")) return;
  const auto& b = cfg["simulation"];
  const std::string w = "simulation";
  reject_unknown(b,
                 {"t1_bright_s", "t1_dark_s", "mu_dark", "mu_bright", "sigma2_dark", "sigma2_bright", "bin_time_s",
                  "c13_flip_rate_bright", "c13_flip_rate_dark", "n14_flip_rate", "n_bins"},
                 w);
  auto set = [&](const char* key, double& target) {
    if (b.contains(key)) target = number_field(b, key, w);
  };
  set("t1_bright_s", s.t1_bright);
  set("t1_dark_s", s.t1_dark);
  set("mu_dark", s.emission.mu_dark);
  set("mu_bright", s.emission.mu_bright);
  set("sigma2_dark", s.emission.sigma2_dark);
  set("sigma2_bright", s.emission.sigma2_bright);
  set("bin_time_s", s.bin_time);
  set("c13_flip_rate_bright", s.register_cfg.c13_flip_rate_bright);
  set("c13_flip_rate_dark", s.register_cfg.c13_flip_rate_dark);
  set("n14_flip_rate", s.register_cfg.n14_flip_rate);
  if (b.contains("n_bins")) {
    if (!b["n_bins"].is_number_unsigned()) throw nvjump::InvalidConfig("simulation.n_bins: expected a positive integer");
    s.n_bins = b["n_bins"].get<std::size_t>();
  }
  s.register_cfg.mu_dark = s.emission.mu_dark;
  s.register_cfg.mu_bright = s.emission.mu_bright;
  s.register_cfg.sigma2_dark = s.emission.sigma2_dark;
  s.register_cfg.sigma2_bright = s.emission.sigma2_bright;
  s.register_cfg.bin_time = s.bin_time;
  s.emission.lambda_dark_T = s.bin_time / s.t1_dark;
  s.emission.lambda_bright_T = s.bin_time / s.t1_bright;

  if (!(s.t1_bright > 0.0 && s.t1_dark > 0.0 && s.bin_time > 0.0)) throw nvjump::InvalidConfig("simulation: T1 values and bin time must be positive");
  try {
    s.emission_model().validate(2);
    s.register_cfg.validate();
  } catch (const nvjump::InvalidArgument& e) {
    throw nvjump::InvalidConfig(std::string("simulation: ") + e.what());
  }
}

nvjump::InitThresholds resolve_thresholds(const Flags& f, const json& cfg, nvjump::InitThresholds fallback) {
  std::vector<double> p;
  if (!f.thresholds.empty()) {
    p = parse_pair(f.thresholds, "--thresholds");
  } else if (cfg.contains("thresholds")) {
    if (!cfg["thresholds"].is_array()) throw nvjump::InvalidConfig("thresholds: expected [dark, bright]");
    for (const auto& v : cfg["thresholds"]) {
      if (!v.is_number()) throw nvjump::InvalidConfig("thresholds: expected numbers");
      p.push_back(v.get<double>());
    }
  } else {
    return fallback;
  }
  if (p.size() != 2 || !(p[0] < p[1])) throw nvjump::InvalidConfig("thresholds: expected two ordered values dark,bright");
  return {p[0], p[1]};
}

json scenario_echo(const nvjump::TraceScenario& s, std::uint64_t seed) {
  json j;
  j["scenario"] = s.name;
  j["seed"] = seed;
  j["n_bins"] = s.n_bins;
  j["bin_time_s"] = s.bin_time;
  if (s.kind == nvjump::TraceKind::register_six_state) {
    j["c13_flip_rate_bright"] = s.register_cfg.c13_flip_rate_bright;
    j["c13_flip_rate_dark"] = s.register_cfg.c13_flip_rate_dark;
    j["n14_flip_rate"] = s.register_cfg.n14_flip_rate;
    j["dark_state"] = nvjump::register_label(s.register_cfg.dark_state_label);
  } else {
    j["t1_bright_s"] = s.t1_bright;
    j["t1_dark_s"] = s.t1_dark;
  }
  j["mu_dark"] = s.emission.mu_dark;
  j["mu_bright"] = s.emission.mu_bright;
  j["sigma2_dark"] = s.emission.sigma2_dark;
  j["sigma2_bright"] = s.emission.sigma2_bright;
  j["thresholds"] = {s.thresholds.dark, s.thresholds.bright};
  return j;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  auto out = nvjump::io::open_output(path);
  body(out);
  nvjump::io::finish(out, path);
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

nvjump::TraceScenario configured_trace_scenario(const Flags& f, const json& cfg) {
  reject_unknown(cfg, {"scenario", "seed", "simulation", "thresholds", "analysis"}, "config");
  auto s = trace_scenario_or_throw(resolve_scenario(f, cfg, "c13-fig2"));
  apply_simulation_overrides(s, cfg);
  if (f.bins) s.n_bins = *f.bins;
  if (s.n_bins == 0) throw nvjump::InvalidConfig("bins: must be positive");
  s.thresholds = resolve_thresholds(f, cfg, s.thresholds);
  return s;
}

int cmd_simulate(const Flags& f) {
  const json cfg = load_config(f.config_path);
  const auto s = configured_trace_scenario(f, cfg);
  const auto seed = resolve_seed(f, cfg);
  const auto trace = nvjump::simulate_scenario(s, seed);
  const fs::path path = fs::path(f.out) / "trace.csv";
  write_file(path, [&](std::ostream& o) { nvjump::io::write_trace_csv(o, trace, scenario_echo(s, seed)); });
  std::cout << "wrote " << path.string() << " (" << trace.size() << " bins, " << trace.bin_time << " s)\n";
  return exit_ok;
}

struct AnalysisSetup {
  nvjump::AnalysisOptions options;
  json echo;
  std::optional<nvjump::TraceScenario> scenario;
};

AnalysisSetup analysis_setup(const Flags& f, const json& cfg, const nvjump::io::TraceFile& file) {
  reject_unknown(cfg, {"scenario", "seed", "simulation", "thresholds", "analysis"}, "config");
  AnalysisSetup a;
  std::string name = f.scenario.empty() && cfg.contains("scenario") ? cfg["scenario"].get<std::string>() : f.scenario;
  if (name.empty() && file.header.contains("scenario") && file.header["scenario"].is_string())
    name = file.header["scenario"].get<std::string>();
  nvjump::InitThresholds fallback{};
  if (!name.empty()) {
    a.scenario = trace_scenario_or_throw(name);
    fallback = a.scenario->thresholds;
    a.options.source = a.scenario->fidelity_source;
    a.options.bin_width = a.scenario->hist_bin_width;
  }
  a.options.thresholds = resolve_thresholds(f, cfg, fallback);
  if (cfg.contains("analysis")) {
    const auto& b = cfg["analysis"];
    reject_unknown(b, {"bin_width", "fidelity_source", "initialization_correction", "run_hmm"}, "analysis");
    if (b.contains("bin_width")) a.options.bin_width = number_field(b, "bin_width", "analysis");
    if (b.contains("fidelity_source")) {
      const auto src = b["fidelity_source"].get<std::string>();
      if (src == "fitted_model") a.options.source = nvjump::FidelitySource::fitted_model;
      else if (src == "raw_histogram") a.options.source = nvjump::FidelitySource::raw_histogram;
      else throw nvjump::InvalidConfig("analysis.fidelity_source: expected fitted_model or raw_histogram");
    }
    if (b.contains("initialization_correction")) a.options.fit.initialization_correction = b["initialization_correction"].get<bool>();
    if (b.contains("run_hmm")) a.options.run_hmm = b["run_hmm"].get<bool>();
  }
  if (!(a.options.bin_width > 0.0)) throw nvjump::InvalidConfig("analysis.bin_width: must be positive");
  a.echo["input"] = f.input;
  a.echo["trace_header"] = file.header;
  a.echo["scenario"] = name.empty() ? json(nullptr) : json(name);
  a.echo["thresholds"] = {a.options.thresholds.dark, a.options.thresholds.bright};
  a.echo["bin_width"] = a.options.bin_width;
  a.echo["fidelity_source"] = a.options.source == nvjump::FidelitySource::fitted_model ? "fitted_model" : "raw_histogram";
  a.echo["initialization_correction"] = a.options.fit.initialization_correction;
  return a;
}

nvjump::io::TraceFile read_trace(const std::string& path) {
  if (path.empty()) throw nvjump::InvalidConfig("a trace file is required (--input)");
  auto in = nvjump::io::open_input(path);
  return nvjump::io::read_trace_csv(in);
}

json t1_json(const nvjump::T1Estimate& t) {
  json j;
  j["dark"] = nvjump::io::to_json(t.dark);
  j["bright"] = nvjump::io::to_json(t.bright);
  return j;
}

std::optional<nvjump::DwellClusters> dwell_clusters(const std::vector<int>& path, double bin_time) {
  const auto runs = nvjump::run_lengths(path, bin_time, 2);
  std::vector<double> all;
  for (const auto& r : runs) all.insert(all.end(), r.begin(), r.end());
  try {
    return nvjump::cluster_dwell_times(all);
  } catch (const nvjump::InsufficientData&) {
    return std::nullopt;
  }
}

struct AnalysisOutput {
  json report;
  nvjump::AnalysisResult result;
  std::optional<nvjump::DwellClusters> clusters;
};

AnalysisOutput run_analysis(const nvjump::JumpTrace& trace, const AnalysisSetup& setup, const fs::path& out_dir) {
  AnalysisOutput out;
  out.result = nvjump::analyze_trace(trace, setup.options);
  const auto& r = out.result;

  json& rep = out.report;
  rep["config"] = setup.echo;
  rep["n_bins"] = quantity(static_cast<double>(trace.size()), "bins");
  rep["bin_time"] = quantity(trace.bin_time, "s");
  rep["pairs_dark"] = quantity(static_cast<double>(r.histograms.dark.n_samples), "pairs");
  rep["pairs_bright"] = quantity(static_cast<double>(r.histograms.bright.n_samples), "pairs");
  if (r.count_fit) rep["count_fit"] = nvjump::io::to_json(*r.count_fit);
  if (r.t1_count_fit) rep["t1_count_fit"] = t1_json(*r.t1_count_fit);
  if (r.fidelity_available) rep["fidelity"] = nvjump::io::to_json(r.fidelity);
  if (r.hmm) {
    rep["t1_hmm"] = t1_json(*r.t1_hmm);
    rep["hmm_iterations"] = quantity(r.hmm->iterations, "iterations");
    rep["hmm_converged"] = r.hmm->converged;
    rep["hmm_identified"] = {{"dark", r.hmm->identified[0]}, {"bright", r.hmm->identified[1]}};
    const auto path = nvjump::viterbi<2>(trace.bin_counts, r.hmm->model);
    out.clusters = dwell_clusters(path, trace.bin_time);
    if (out.clusters) {
      rep["dwell_clusters"] = {{"fast_mean", quantity(out.clusters->fast_mean, "s")},
                               {"slow_mean", quantity(out.clusters->slow_mean, "s")},
                               {"fast_count", quantity(static_cast<double>(out.clusters->fast_count), "dwells")},
                               {"slow_count", quantity(static_cast<double>(out.clusters->slow_count), "dwells")},
                               {"separation", quantity(out.clusters->separation(), "ratio")}};
    }
    write_file(out_dir / "trace_decoded.csv",
               [&](std::ostream& o) { nvjump::io::write_trace_csv(o, trace, setup.echo, path); });
  }
  rep["warnings"] = r.warnings;
  if (!r.fidelity_available) return out;

  json hist_header;
  hist_header["thresholds"] = {setup.options.thresholds.dark, setup.options.thresholds.bright};
  hist_header["state"] = "dark";
  write_file(out_dir / "hist_dark.csv", [&](std::ostream& o) { nvjump::io::write_histogram_csv(o, r.histograms.dark, hist_header); });
  hist_header["state"] = "bright";
  write_file(out_dir / "hist_bright.csv", [&](std::ostream& o) { nvjump::io::write_histogram_csv(o, r.histograms.bright, hist_header); });
  write_file(out_dir / "fidelity.csv", [&](std::ostream& o) { nvjump::io::write_fidelity_csv(o, r.fidelity, setup.echo); });
  return out;
}

int cmd_analyze(const Flags& f) {
  const json cfg = load_config(f.config_path);
  const auto file = read_trace(f.input);
  const auto setup = analysis_setup(f, cfg, file);
  const fs::path out_dir(f.out);
  const auto out = run_analysis(file.trace, setup, out_dir);
  write_file(out_dir / "report.json", [&](std::ostream& o) { nvjump::io::write_json(o, out.report); });
  const auto& fr = out.result.fidelity;
  if (out.result.fidelity_available)
    std::cout << "optimal threshold " << fr.optimal_threshold << " counts, F = " << fr.f_at_optimum << '\n';
  if (out.result.t1_hmm)
    std::cout << "HMM T1 dark " << out.result.t1_hmm->dark.t1 << " s, bright " << out.result.t1_hmm->bright.t1 << " s\n";
  for (const auto& w : out.result.warnings) std::cerr << "warning: " << w << '\n';
  return exit_ok;
}

int cmd_fit_histograms(const Flags& f) {
  const json cfg = load_config(f.config_path);
  const auto file = read_trace(f.input);
  const auto setup = analysis_setup(f, cfg, file);
  nvjump::PairSelection sel;
  sel.init_threshold_dark = setup.options.thresholds.dark;
  sel.init_threshold_bright = setup.options.thresholds.bright;
  const auto h = nvjump::conditional_histograms(file.trace, sel, setup.options.bin_width);
  const auto fit = nvjump::fit_params(h, std::nullopt, setup.options.fit);
  json rep;
  rep["config"] = setup.echo;
  rep["count_fit"] = nvjump::io::to_json(fit);
  rep["t1_dark"] = quantity(file.trace.bin_time / fit.params.lambda_dark_T, "s");
  rep["t1_bright"] = quantity(file.trace.bin_time / fit.params.lambda_bright_T, "s");
  const fs::path out_dir(f.out);
  json hh;
  hh["thresholds"] = {sel.init_threshold_dark, sel.init_threshold_bright};
  hh["state"] = "dark";
  write_file(out_dir / "hist_dark.csv", [&](std::ostream& o) { nvjump::io::write_histogram_csv(o, h.dark, hh); });
  hh["state"] = "bright";
  write_file(out_dir / "hist_bright.csv", [&](std::ostream& o) { nvjump::io::write_histogram_csv(o, h.bright, hh); });
  write_file(out_dir / "fit.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep); });
  std::cout << "lambda_dark_T " << fit.params.lambda_dark_T << ", lambda_bright_T " << fit.params.lambda_bright_T
            << ", chi2 " << fit.chi2 << " / " << fit.dof << '\n';
  return exit_ok;
}

// Interior local minima of T1 along the grid.
std::vector<double> t1_minima(const std::vector<nvjump::T1Point>& curve) {
  std::vector<double> out;
  for (std::size_t i = 1; i + 1 < curve.size(); ++i)
    if (curve[i].t1 < curve[i - 1].t1 && curve[i].t1 <= curve[i + 1].t1) out.push_back(curve[i].b);
  return out;
}

nvjump::RateWeights weights_from_json(const json& b, const std::string& where) {
  reject_unknown(b, {"alpha_ani", "alpha_gs", "alpha_es"}, where);
  nvjump::RateWeights w;
  if (b.contains("alpha_ani")) w.alpha_ani = number_field(b, "alpha_ani", where);
  if (b.contains("alpha_gs")) w.alpha_gs = number_field(b, "alpha_gs", where);
  if (b.contains("alpha_es")) w.alpha_es = number_field(b, "alpha_es", where);
  try {
    w.validate();
  } catch (const nvjump::InvalidArgument& e) {
    throw nvjump::InvalidConfig(where + ": " + e.what());
  }
  return w;
}

int cmd_scan_field(const Flags& f) {
  const json cfg = load_config(f.config_path);
  reject_unknown(cfg, {"scenario", "seed", "field_grid", "weights", "a_ani_khz", "dataset"}, "config");
  const auto name = resolve_scenario(f, cfg, "t1-scan-fig3");
  if (name != "t1-scan-fig3") throw nvjump::InvalidConfig("scenario: scan-field supports only t1-scan-fig3");
  auto s = nvjump::t1_scan_fig3();
  if (cfg.contains("a_ani_khz")) s.tensor.a_ani = number_field(cfg, "a_ani_khz", "config");
  if (cfg.contains("weights")) {
    reject_unknown(cfg["weights"], {"bright", "dark"}, "weights");
    if (cfg["weights"].contains("bright")) s.bright = weights_from_json(cfg["weights"]["bright"], "weights.bright");
    if (cfg["weights"].contains("dark")) s.dark = weights_from_json(cfg["weights"]["dark"], "weights.dark");
  }
  if (!f.field_grid.empty()) {
    s.field_grid = parse_field_grid(f.field_grid);
  } else if (cfg.contains("field_grid")) {
    if (!cfg["field_grid"].is_string()) throw nvjump::InvalidConfig("field_grid: expected \"start:stop:step\" or a comma list");
    s.field_grid = parse_field_grid(cfg["field_grid"].get<std::string>());
  }
  for (std::size_t i = 0; i < s.field_grid.size(); ++i)
    if (!(s.field_grid[i] > 0.0) || (i > 0 && !(s.field_grid[i] > s.field_grid[i - 1])))
      throw nvjump::InvalidConfig("field grid: fields must be positive and strictly ascending");

  const auto bright = nvjump::t1_curve(s.bright, s.tensor, s.constants, s.field_grid);
  const auto dark = nvjump::t1_curve(s.dark, s.tensor, s.constants, s.field_grid);

  json echo;
  echo["scenario"] = name;
  echo["a_zz_khz"] = s.tensor.a_zz;
  echo["a_ani_khz"] = s.tensor.a_ani;
  echo["n_fields"] = s.field_grid.size();
  const fs::path out_dir(f.out);
  write_file(out_dir / "t1_curve.csv", [&](std::ostream& o) { nvjump::io::write_t1_curve_csv(o, bright, dark, echo); });

  json rep;
  rep["config"] = echo;
  rep["weights"]["bright"] = nvjump::io::to_json(s.bright);
  rep["weights"]["dark"] = nvjump::io::to_json(s.dark);
  json minima = json::array();
  for (double b : t1_minima(bright)) minima.push_back(quantity(b, "G"));
  rep["t1_minima_bright"] = minima;

  std::string dataset = f.dataset;
  if (dataset.empty() && cfg.contains("dataset")) dataset = cfg["dataset"].get<std::string>();
  if (!dataset.empty()) {
    auto in = nvjump::io::open_input(dataset);
    const auto data = nvjump::io::read_t1_dataset(in);
    const auto fit = nvjump::fit_weights(data, s.tensor, s.constants, s.tensor.a_ani);
    rep["dataset"] = dataset;
    json fitted;
    fitted["bright"] = nvjump::io::to_json(fit.bright);
    fitted["dark"] = nvjump::io::to_json(fit.dark);
    rep["fit"] = fitted;
    write_file(out_dir / "weights.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep["fit"]); });
  }
  write_file(out_dir / "report.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep); });
  std::cout << "wrote " << (out_dir / "t1_curve.csv").string() << " (" << bright.size() << " fields)\n";
  return exit_ok;
}

int cmd_spectrum(const Flags& f) {
  const json cfg = load_config(f.config_path);
  reject_unknown(cfg, {"b_gauss", "linewidth_khz", "contrast", "span_mhz", "points", "c13_up_population"}, "config");
  nvjump::RegisterConfig reg;
  double b = 2000.0, linewidth = 200.0, contrast = nvjump::default_esr_contrast, span = 8.0;
  std::size_t points = 4001;
  nvjump::LinePopulations pops;
  if (cfg.contains("b_gauss")) b = number_field(cfg, "b_gauss", "config");
  if (cfg.contains("linewidth_khz")) linewidth = number_field(cfg, "linewidth_khz", "config");
  if (cfg.contains("contrast")) contrast = number_field(cfg, "contrast", "config");
  if (cfg.contains("span_mhz")) span = number_field(cfg, "span_mhz", "config");
  if (cfg.contains("c13_up_population")) pops.c13_up = number_field(cfg, "c13_up_population", "config");
  if (cfg.contains("points")) points = cfg["points"].get<std::size_t>();
  if (f.field) b = *f.field;
  if (f.points) points = *f.points;
  if (points == 0) throw nvjump::InvalidConfig("points: frequency grid is empty");
  if (!(linewidth > 0.0) || !(span > 0.0)) throw nvjump::InvalidConfig("linewidth_khz and span_mhz must be positive");
  if (!(pops.c13_up >= 0.0 && pops.c13_up <= 1.0)) throw nvjump::InvalidConfig("c13_up_population must lie in [0, 1]");

  const auto lines = nvjump::esr_lines(reg, b, pops);
  const double center = std::abs(reg.constants.d_gs - reg.constants.gamma_e * b);
  std::vector<double> grid(points);
  for (std::size_t i = 0; i < points; ++i)
    grid[i] = points == 1 ? center : center - 0.5 * span + span * static_cast<double>(i) / static_cast<double>(points - 1);
  const auto y = nvjump::esr_spectrum(lines, linewidth, contrast, grid);

  json echo{{"b_gauss", b}, {"linewidth_khz", linewidth}, {"contrast", contrast}, {"span_mhz", span}, {"points", points}};
  const fs::path out_dir(f.out);
  write_file(out_dir / "spectrum.csv", [&](std::ostream& o) { nvjump::io::write_xy_csv(o, grid, y, echo, "frequency_mhz", "pl_ratio"); });
  json rep;
  rep["config"] = echo;
  json jl = json::array();
  for (const auto& l : lines)
    jl.push_back({{"frequency", quantity(l.frequency, "MHz")},
                  {"m_n14", l.n14_projection},
                  {"c13", l.c13_state == nvjump::C13State::up ? "up" : "down"},
                  {"weight", quantity(l.weight, "1")}});
  rep["lines"] = jl;
  write_file(out_dir / "spectrum.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep); });
  std::cout << "wrote " << (out_dir / "spectrum.csv").string() << " (" << points << " points)\n";
  return exit_ok;
}

int cmd_fid(const Flags& f) {
  const json cfg = load_config(f.config_path);
  reject_unknown(cfg, {"polarization", "detuning_mhz", "split_mhz", "t2_star_us", "span_us", "points"}, "config");
  double pol = 0.4, detuning = 1.0, split = 0.258, t2 = 2.9, span = 40.0;
  std::size_t points = 4096;
  if (cfg.contains("polarization")) pol = number_field(cfg, "polarization", "config");
  if (cfg.contains("detuning_mhz")) detuning = number_field(cfg, "detuning_mhz", "config");
  if (cfg.contains("split_mhz")) split = number_field(cfg, "split_mhz", "config");
  if (cfg.contains("t2_star_us")) t2 = number_field(cfg, "t2_star_us", "config");
  if (cfg.contains("span_us")) span = number_field(cfg, "span_us", "config");
  if (cfg.contains("points")) points = cfg["points"].get<std::size_t>();
  if (f.polarization) pol = *f.polarization;
  if (f.points) points = *f.points;
  if (points == 0) throw nvjump::InvalidConfig("points: time grid is empty");
  if (!(pol >= -1.0 && pol <= 1.0)) throw nvjump::InvalidConfig("polarization must lie in [-1, 1]");
  if (!(span > 0.0)) throw nvjump::InvalidConfig("span_us must be positive");

  const double nyquist = 0.5 * static_cast<double>(points) / span;
  if (std::max(std::abs(detuning), std::abs(detuning + split)) >= nyquist)
    throw nvjump::ResolutionError("FID grid undersampled: lines up to " + nvjump::io::format_number(std::abs(detuning) + std::abs(split)) +
                                  " MHz exceed the Nyquist frequency " + nvjump::io::format_number(nyquist) +
                                  " MHz; use more --points");
  // The up line sits one splitting below the down line.
  nvjump::FidComponents c{{detuning, detuning + split}, {0.5 * (1.0 + pol), 0.5 * (1.0 - pol)}, t2};
  std::vector<double> tau(points);
  for (std::size_t i = 0; i < points; ++i) tau[i] = span * static_cast<double>(i) / static_cast<double>(points);
  const auto signal = nvjump::fid_signal(c, tau);

  json echo{{"polarization", pol}, {"detuning_mhz", detuning}, {"split_mhz", split}, {"t2_star_us", t2},
            {"span_us", span}, {"points", points}};
  const fs::path out_dir(f.out);
  write_file(out_dir / "fid.csv", [&](std::ostream& o) { nvjump::io::write_xy_csv(o, tau, signal, echo, "tau_us", "signal"); });

  json rep;
  rep["config"] = echo;
  if (points >= 4) {
    const auto [freqs, spec] = nvjump::cosine_spectrum(signal, tau);
    write_file(out_dir / "fid_spectrum.csv", [&](std::ostream& o) { nvjump::io::write_xy_csv(o, freqs, spec, echo, "frequency_mhz", "amplitude"); });
    nvjump::PolarizationOptions opt;
    opt.split_mhz = split;
    const auto est = nvjump::estimate_polarization(signal, tau, opt);
    rep["polarization"] = quantity(est.polarization, "1");
    rep["polarization_uncertainty"] = quantity(est.uncertainty, "1");
    rep["f_up"] = quantity(est.f_up, "MHz");
    rep["f_down"] = quantity(est.f_down, "MHz");
    rep["linewidth_sigma"] = quantity(est.width, "MHz");
    std::cout << "P = " << est.polarization << " +/- " << est.uncertainty << '\n';
  }
  write_file(out_dir / "report.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep); });
  return exit_ok;
}

json check(bool pass, double value, const std::string& unit, const std::string& expected) {
  json j = quantity(value, unit);
  j["expected"] = expected;
  j["pass"] = pass;
  return j;
}

int cmd_reproduce(const Flags& f) {
  const json cfg = load_config(f.config_path);
  const auto name = resolve_scenario(f, cfg, "");
  if (name.empty()) throw nvjump::InvalidConfig("reproduce needs --scenario");
  const fs::path out_dir(f.out);
  json rep;
  json checks;
  if (name == "t1-scan-fig3") {
    Flags g = f;
    if (g.field_grid.empty()) g.field_grid = "300:1300:0.01";
    const auto s = nvjump::t1_scan_fig3();
    const auto grid = parse_field_grid(g.field_grid);
    const auto curve = nvjump::t1_curve(s.bright, s.tensor, s.constants, grid);
    const auto minima = t1_minima(curve);
    auto near = [&](double target) {
      double best = INFINITY;
      for (double b : minima) best = std::abs(b - target) < std::abs(best - target) ? b : best;
      return best;
    };
    const double es = near(s.constants.d_es / s.constants.gamma_e), gs = near(s.constants.d_gs / s.constants.gamma_e);
    checks["esr_anticrossing_minimum"] = check(std::abs(es - 507.1) <= 5.0, es, "G", "507.1 +/- 5");
    checks["gs_anticrossing_minimum"] = check(std::abs(gs - 1025.0) <= 5.0, gs, "G", "1025.0 +/- 5");
    rep["scenario"] = name;
  } else {
    const auto s = configured_trace_scenario(f, cfg);
    const auto seed = resolve_seed(f, cfg);
    const auto trace = nvjump::simulate_scenario(s, seed);
    const auto echo = scenario_echo(s, seed);
    write_file(out_dir / "trace.csv", [&](std::ostream& o) { nvjump::io::write_trace_csv(o, trace, echo); });
    AnalysisSetup setup;
    setup.options.thresholds = s.thresholds;
    setup.options.source = s.fidelity_source;
    setup.options.bin_width = s.hist_bin_width;
    setup.echo = echo;
    const auto out = run_analysis(trace, setup, out_dir);
    if (!out.result.fidelity_available)
      throw nvjump::InsufficientData("reproduce: one spin state never appears in the trace; use a longer trace (--bins)", 0, 0);
    rep = out.report;
    const auto& fr = out.result.fidelity;
    if (name == "c13-fig2") {
      checks["optimal_threshold"] = check(std::abs(fr.optimal_threshold - 735.0) <= 30.0, fr.optimal_threshold, "counts", "735 +/- 30");
      checks["readout_fidelity"] = check(std::abs(fr.f_at_optimum - 0.96) <= 0.03, fr.f_at_optimum, "probability", "0.96 +/- 0.03");
      checks["init_fidelity_dark"] = check(fr.init_fidelity_dark > 0.99, fr.init_fidelity_dark, "probability", "> 0.99");
      checks["init_fidelity_bright"] = check(fr.init_fidelity_bright > 0.99, fr.init_fidelity_bright, "probability", "> 0.99");
      if (out.result.t1_hmm) {
        const double d = out.result.t1_hmm->dark.t1, b = out.result.t1_hmm->bright.t1;
        checks["t1_hmm_dark"] = check(std::abs(d - s.t1_dark) <= 0.2 * s.t1_dark, d, "s", "T1 dark +/- 20%");
        checks["t1_hmm_bright"] = check(std::abs(b - s.t1_bright) <= 0.2 * s.t1_bright, b, "s", "T1 bright +/- 20%");
      }
    } else if (name == "c13-380kHz") {
      checks["readout_fidelity"] = check(fr.f_at_optimum >= 0.70 && fr.f_at_optimum <= 0.85, fr.f_at_optimum, "probability", "[0.70, 0.85]");
    } else if (name == "register-fig4") {
      checks["optimal_threshold"] = check(std::abs(fr.optimal_threshold - 135.0) <= 10.0, fr.optimal_threshold, "counts", "135 +/- 10");
      checks["readout_fidelity"] = check(fr.f_at_optimum >= 0.78 && fr.f_at_optimum <= 0.88, fr.f_at_optimum, "probability", "[0.78, 0.88]");
      checks["init_fidelity_dark"] = check(fr.init_fidelity_dark > 0.98, fr.init_fidelity_dark, "probability", "> 0.98");
      if (out.clusters)
        checks["dwell_separation"] = check(out.clusters->separation() >= 10.0, out.clusters->separation(), "ratio", ">= 10");
    }
  }
  rep["checks"] = checks;
  write_file(out_dir / "report.json", [&](std::ostream& o) { nvjump::io::write_json(o, rep); });
  for (const auto& [key, c] : checks.items())
    std::cout << (c["pass"].get<bool>() ? "PASS " : "FAIL ") << key << " = " << c["value"] << ' ' << c["unit"].get<std::string>()
              << " (expected " << c["expected"].get<std::string>() << ")\n";
  return exit_ok;
}

int exit_code_for(const nvjump::Error& e) {
  switch (e.kind()) {
    case nvjump::Error::Kind::invalid_config:
    case nvjump::Error::Kind::invalid_argument:
      return exit_config;
    case nvjump::Error::Kind::io:
      return exit_io;
    default:
      return exit_numeric;
  }
}

void add_common(CLI::App* cmd, Flags& f) {
  cmd->add_option("--scenario", f.scenario, "preset: c13-fig2, c13-380kHz, register-fig4, t1-scan-fig3");
  cmd->add_option("--config", f.config_path, "JSON config file");
  cmd->add_option("--seed", f.seed, "RNG seed (falls back to NVJUMP_SEED)");
  cmd->add_option("-o,--out", f.out, "output directory");
  cmd->add_option("--thresholds", f.thresholds, "initialization thresholds dark,bright");
  cmd->add_option("--bins", f.bins, "number of trace bins");
  cmd->add_option("--field-grid", f.field_grid, "fields in G: start:stop:step or a comma list");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NV-center nuclear-spin quantum-jump simulator and analysis"};
  app.require_subcommand(1);
  Flags f;

  auto* simulate = app.add_subcommand("simulate", "simulate a quantum-jump trace");
  auto* analyze = app.add_subcommand("analyze", "histograms, count fit, fidelities and HMM T1 from a trace");
  auto* fit_hist = app.add_subcommand("fit-histograms", "conditional histograms and count-model fit only");
  auto* scan = app.add_subcommand("scan-field", "T1 versus magnetic field, optionally fitting rate weights");
  auto* spectrum = app.add_subcommand("spectrum", "six-line ESR spectrum");
  auto* fid = app.add_subcommand("fid", "FID signal, its spectrum and the 13C polarization");
  auto* reproduce = app.add_subcommand("reproduce", "run a preset end to end and check it against expected ranges");
  for (auto* c : {simulate, analyze, fit_hist, scan, spectrum, fid, reproduce}) add_common(c, f);
  for (auto* c : {analyze, fit_hist}) c->add_option("-i,--input", f.input, "trace CSV")->required();
  scan->add_option("--dataset", f.dataset, "T1 dataset CSV to fit");
  spectrum->add_option("--field", f.field, "magnetic field in G");
  fid->add_option("--polarization", f.polarization, "13C polarization in [-1, 1]");
  for (auto* c : {spectrum, fid}) c->add_option("--points", f.points, "number of grid points");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return exit_config;
  }

  try {
    if (simulate->parsed()) return cmd_simulate(f);
    if (analyze->parsed()) return cmd_analyze(f);
    if (fit_hist->parsed()) return cmd_fit_histograms(f);
    if (scan->parsed()) return cmd_scan_field(f);
    if (spectrum->parsed()) return cmd_spectrum(f);
    if (fid->parsed()) return cmd_fid(f);
    if (reproduce->parsed()) return cmd_reproduce(f);
  } catch (const nvjump::InsufficientData& e) {
    std::cerr << "error: " << e.what() << " (dark " << e.dark_count << ", bright " << e.bright_count
              << "); use a longer trace, e.g. a larger --bins\n";
    return exit_numeric;
  } catch (const nvjump::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_code_for(e);
  } catch (const json::exception& e) {
    std::cerr << "error: config: " << e.what() << '\n';
    return exit_config;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return exit_numeric;
  }
  return exit_config;
}
