#pragma once

// CSV and JSON serialization for traces, histograms, plot data and reports.
// Every CSV starts with one `# {json}` line carrying the producing config.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "nvjump/counting_stats.hpp"
#include "nvjump/error.hpp"
#include "nvjump/inference.hpp"
#include "nvjump/jump_sim.hpp"
#include "nvjump/relaxation.hpp"

namespace nvjump::io {

using json = nlohmann::ordered_json;

// Shortest representation that round-trips, so reruns are byte-identical.
inline std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

inline double parse_number(std::string_view s, std::size_t line) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s == "inf") return INFINITY;
  if (s == "-inf") return -INFINITY;
  if (s == "nan") return NAN;
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw IoError("line " + std::to_string(line) + ": not a number: '" + std::string(s) + "'");
  return v;
}

inline std::vector<std::string_view> split_fields(std::string_view row) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= row.size(); ++i) {
    if (i == row.size() || row[i] == ',') {
      out.push_back(row.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

// A number with its unit; reports never carry bare numbers.
inline json quantity(double value, std::string_view unit) {
  json q;
  q["value"] = std::isfinite(value) ? json(value) : json(format_number(value));
  q["unit"] = std::string(unit);
  return q;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

inline void finish(std::ostream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

inline void write_header(std::ostream& out, const json& header) { out << "# " << header.dump() << '\n'; }

// Reads an optional leading `# {json}` line; returns an empty object when absent.
inline json read_header(std::istream& in, std::size_t& line_no) {
  if (in.peek() != '#') return json::object();
  std::string line;
  std::getline(in, line);
  ++line_no;
  try {
    return json::parse(line.substr(1));
  } catch (const json::parse_error& e) {
    throw IoError("line 1: malformed JSON header: " + std::string(e.what()));
  }
}

// ---------------------------------------------------------------------------
// Traces
// ---------------------------------------------------------------------------

struct TraceFile {
  JumpTrace trace;
  json header;
  std::optional<std::vector<int>> decoded_states;
};

inline void write_trace_csv(std::ostream& out, const JumpTrace& trace, json header,
                            std::span<const int> decoded = {}) {
  if (!decoded.empty() && decoded.size() != trace.size())
    throw InvalidArgument("write_trace_csv: decoded path length differs from trace length");
  header["seed"] = trace.seed;
  header["bin_time_s"] = trace.bin_time;
  header["n_bins"] = trace.size();
  write_header(out, header);
  const bool latent = trace.latent_states.has_value();
  out << "bin_index,t_start_s,counts";
  if (latent) out << ",latent_state";
  if (!decoded.empty()) out << ",decoded_state";
  out << '\n';
  for (std::size_t k = 0; k < trace.size(); ++k) {
    out << k << ',' << format_number(static_cast<double>(k) * trace.bin_time) << ',' << format_number(trace.bin_counts[k]);
    if (latent) out << ',' << (*trace.latent_states)[k];
    if (!decoded.empty()) out << ',' << decoded[k];
    out << '\n';
  }
}

inline TraceFile read_trace_csv(std::istream& in) {
  TraceFile file;
  std::size_t line_no = 0;
  file.header = read_header(in, line_no);
  std::string line;
  if (!std::getline(in, line)) throw IoError("trace file: missing column header");
  ++line_no;
  const auto cols = split_fields(line);
  int col_counts = -1, col_time = -1, col_latent = -1, col_decoded = -1;
  for (std::size_t i = 0; i < cols.size(); ++i) {
    std::string_view c = cols[i];
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.remove_suffix(1);
    if (c == "counts") col_counts = static_cast<int>(i);
    if (c == "t_start_s") col_time = static_cast<int>(i);
    if (c == "latent_state") col_latent = static_cast<int>(i);
    if (c == "decoded_state") col_decoded = static_cast<int>(i);
  }
  if (col_counts < 0) throw IoError("trace file: no 'counts' column");
  if (col_latent >= 0) file.trace.latent_states.emplace();
  if (col_decoded >= 0) file.decoded_states.emplace();
  std::vector<double> times;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (f.size() != cols.size())
      throw IoError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols.size()) + " fields");
    file.trace.bin_counts.push_back(parse_number(f[static_cast<std::size_t>(col_counts)], line_no));
    if (col_time >= 0) times.push_back(parse_number(f[static_cast<std::size_t>(col_time)], line_no));
    if (col_latent >= 0)
      file.trace.latent_states->push_back(static_cast<int>(parse_number(f[static_cast<std::size_t>(col_latent)], line_no)));
    if (col_decoded >= 0)
      file.decoded_states->push_back(static_cast<int>(parse_number(f[static_cast<std::size_t>(col_decoded)], line_no)));
  }
  if (file.trace.bin_counts.empty()) throw IoError("trace file: no data rows");
  if (file.header.contains("bin_time_s")) {
    file.trace.bin_time = file.header["bin_time_s"].get<double>();
  } else if (times.size() >= 2) {
    file.trace.bin_time = times[1] - times[0];
  } else {
    throw IoError("trace file: bin time not recoverable (no header and fewer than two rows)");
  }
  if (!(file.trace.bin_time > 0.0)) throw IoError("trace file: bin time must be positive");
  if (file.header.contains("seed")) file.trace.seed = file.header["seed"].get<std::uint64_t>();
  return file;
}

// ---------------------------------------------------------------------------
// Histograms, plot data, datasets
// ---------------------------------------------------------------------------

inline void write_histogram_csv(std::ostream& out, const CountHistogram& h, json header) {
  header["n_samples"] = h.n_samples;
  header["bin_width"] = h.bin_width;
  write_header(out, header);
  out << "bin_left,bin_right,frequency\n";
  for (std::size_t j = 0; j < h.bins(); ++j)
    out << format_number(h.bin_edges[j]) << ',' << format_number(h.bin_edges[j + 1]) << ','
        << format_number(h.frequencies[j]) << '\n';
}

inline void write_xy_csv(std::ostream& out, std::span<const double> x, std::span<const double> y, const json& header,
                         std::string_view x_name = "x", std::string_view y_name = "y") {
  if (x.size() != y.size()) throw InvalidArgument("write_xy_csv: column lengths differ");
  write_header(out, header);
  out << x_name << ',' << y_name << '\n';
  for (std::size_t i = 0; i < x.size(); ++i) out << format_number(x[i]) << ',' << format_number(y[i]) << '\n';
}

inline void write_fidelity_csv(std::ostream& out, const FidelityReport& r, const json& header) {
  write_header(out, header);
  out << "threshold,f_dark,f_bright\n";
  for (std::size_t i = 0; i < r.threshold_grid.size(); ++i)
    out << format_number(r.threshold_grid[i]) << ',' << format_number(r.f_dark_curve[i]) << ','
        << format_number(r.f_bright_curve[i]) << '\n';
}

inline void write_t1_curve_csv(std::ostream& out, std::span<const T1Point> bright, std::span<const T1Point> dark,
                               const json& header) {
  if (bright.size() != dark.size()) throw InvalidArgument("write_t1_curve_csv: curve lengths differ");
  write_header(out, header);
  out << "b_gauss,t1_bright_s,t1_dark_s\n";
  for (std::size_t i = 0; i < bright.size(); ++i)
    out << format_number(bright[i].b) << ',' << format_number(bright[i].t1) << ',' << format_number(dark[i].t1) << '\n';
}

inline T1Dataset read_t1_dataset(std::istream& in) {
  std::size_t line_no = 0;
  read_header(in, line_no);
  std::string line;
  if (!std::getline(in, line)) throw IoError("T1 dataset: missing column header");
  ++line_no;
  const auto cols = split_fields(line);
  const std::vector<std::string_view> expected = {"b_gauss", "t1_bright_s", "t1_dark_s", "err_bright_s", "err_dark_s"};
  std::vector<int> index(expected.size(), -1);
  for (std::size_t i = 0; i < cols.size(); ++i) {
    std::string_view c = cols[i];
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ')) c.remove_suffix(1);
    for (std::size_t e = 0; e < expected.size(); ++e)
      if (c == expected[e]) index[e] = static_cast<int>(i);
  }
  for (std::size_t e = 0; e < expected.size(); ++e)
    if (index[e] < 0) throw IoError("T1 dataset: missing column '" + std::string(expected[e]) + "'");
  T1Dataset data;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto f = split_fields(line);
    if (f.size() != cols.size())
      throw IoError("line " + std::to_string(line_no) + ": expected " + std::to_string(cols.size()) + " fields");
    auto get = [&](std::size_t e) { return parse_number(f[static_cast<std::size_t>(index[e])], line_no); };
    data.points.push_back({get(0), get(1), get(2), get(3), get(4)});
  }
  return data;
}

// ---------------------------------------------------------------------------
// Report fragments
// ---------------------------------------------------------------------------

inline json to_json(const T1Value& v) {
  json j = quantity(v.t1, "s");
  if (v.infinite) j["flag"] = "infinite";
  if (v.sub_bin) j["flag"] = "sub_bin";
  return j;
}

inline json to_json(const CountModelParams& p) {
  json j;
  j["mu_dark"] = quantity(p.mu_dark, "counts");
  j["mu_bright"] = quantity(p.mu_bright, "counts");
  j["sigma2_dark"] = quantity(p.sigma2_dark, "counts^2");
  j["sigma2_bright"] = quantity(p.sigma2_bright, "counts^2");
  j["lambda_dark_T"] = quantity(p.lambda_dark_T, "1");
  j["lambda_bright_T"] = quantity(p.lambda_bright_T, "1");
  return j;
}

inline json to_json(const CountFit& f) {
  json j;
  j["params"] = to_json(f.params);
  j["chi2"] = quantity(f.chi2, "1");
  j["dof"] = quantity(f.dof, "1");
  j["truncation_bound_dark"] = quantity(f.truncation_bound_dark, "probability");
  j["truncation_bound_bright"] = quantity(f.truncation_bound_bright, "probability");
  j["initialization_error_dark"] = quantity(f.initialization_error_dark, "probability");
  j["initialization_error_bright"] = quantity(f.initialization_error_bright, "probability");
  j["warnings"] = f.warnings;
  return j;
}

inline json to_json(const FidelityReport& r) {
  json j;
  j["optimal_threshold"] = quantity(r.optimal_threshold, "counts");
  j["f_dark_at_optimum"] = quantity(r.f_dark_at_optimum, "probability");
  j["f_bright_at_optimum"] = quantity(r.f_bright_at_optimum, "probability");
  j["f_at_optimum"] = quantity(r.f_at_optimum, "probability");
  j["init_threshold_dark"] = quantity(r.init_threshold_dark, "counts");
  j["init_threshold_bright"] = quantity(r.init_threshold_bright, "counts");
  j["init_fidelity_dark"] = quantity(r.init_fidelity_dark, "probability");
  j["init_fidelity_bright"] = quantity(r.init_fidelity_bright, "probability");
  j["retained_fraction_dark"] = quantity(r.retained_fraction_dark, "fraction of bins");
  j["retained_fraction_bright"] = quantity(r.retained_fraction_bright, "fraction of bins");
  return j;
}

inline json to_json(const RateWeights& w) {
  json j;
  j["alpha_ani"] = quantity(w.alpha_ani, "1/s");
  j["alpha_gs"] = quantity(w.alpha_gs, "1/s");
  j["alpha_es"] = quantity(w.alpha_es, "1/s");
  return j;
}

inline json to_json(const SeriesFit& f) {
  json j;
  j["weights"] = to_json(f.weights);
  j["std_error"] = to_json(f.std_error);
  j["chi2"] = quantity(f.chi2, "1");
  j["converged"] = f.converged;
  j["degenerate"] = f.degenerate;
  j["condition_number"] = quantity(f.condition_number, "1");
  return j;
}

inline void write_json(std::ostream& out, const json& j) { out << j.dump(2) << '\n'; }

}  // namespace nvjump::io
