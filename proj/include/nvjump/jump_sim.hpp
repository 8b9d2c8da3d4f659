#pragma once

// Quantum-jump photoluminescence traces: a continuous-time Markov chain over
// nuclear-spin states, binned into photon counts with the dwell-fraction
// weighted Normal mixture
//   count = sum_s f_s X_s,  X_s ~ Normal(mu_s, sigma_s^2),
// where f_s is the share of the bin spent in state s.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "nvjump/error.hpp"
#include "nvjump/random.hpp"
#include "nvjump/spin_model.hpp"

namespace nvjump {

struct MarkovSpec {
  std::vector<std::string> state_labels;
  std::vector<std::vector<double>> generator;  // rates in 1/s, rows sum to zero
  std::vector<double> initial_distribution;

  std::size_t size() const { return state_labels.size(); }

  void validate() const {
    const std::size_t n = size();
    if (n == 0 || generator.size() != n || initial_distribution.size() != n)
      throw InvalidArgument("MarkovSpec: inconsistent dimensions");
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (generator[i].size() != n) throw InvalidArgument("MarkovSpec: generator must be square");
      double row = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        if (i != j && !(generator[i][j] >= 0.0)) throw InvalidArgument("MarkovSpec: negative off-diagonal rate");
        row += generator[i][j];
      }
      if (std::abs(row) > 1e-12 * std::max(1.0, std::abs(generator[i][i])))
        throw InvalidArgument("MarkovSpec: generator rows must sum to zero");
      if (!(initial_distribution[i] >= 0.0)) throw InvalidArgument("MarkovSpec: negative initial probability");
      total += initial_distribution[i];
    }
    if (std::abs(total - 1.0) > 1e-9) throw InvalidArgument("MarkovSpec: initial distribution must sum to one");
  }
};

struct EmissionModel {
  std::vector<double> means;      // counts per bin, per state
  std::vector<double> variances;  // counts^2
  double bin_time = 0.12;         // s

  void validate(std::size_t n_states) const {
    if (means.size() != n_states || variances.size() != n_states)
      throw InvalidArgument("EmissionModel: one mean and variance per state required");
    for (std::size_t s = 0; s < n_states; ++s)
      if (!(means[s] > 0.0) || !(variances[s] > 0.0)) throw InvalidArgument("EmissionModel: means and variances must be positive");
    if (!(bin_time > 0.0)) throw InvalidArgument("EmissionModel: bin_time must be positive");
  }
};

struct Dwell {
  std::size_t state = 0;
  double duration = 0.0;  // s
};

struct DwellPath {
  std::vector<Dwell> dwells;
  double total_duration = 0.0;
};

struct JumpTrace {
  std::vector<double> bin_counts;
  double bin_time = 0.12;                          // s
  std::optional<std::vector<int>> latent_states;  // plurality state per bin
  std::uint64_t seed = 0;
  std::size_t size() const { return bin_counts.size(); }
};

// Gillespie path: exponential dwell at rate -Q[s][s], next state drawn from
// the normalized off-diagonal row. Absorbing states hold until `duration`.
inline DwellPath simulate_ctmc(const MarkovSpec& spec, double duration, std::uint64_t seed) {
  spec.validate();
  if (!(duration > 0.0)) throw InvalidArgument("simulate_ctmc: duration must be positive");
  Rng rng(seed);

  const auto draw_categorical = [&](const std::vector<double>& weights, double total) {
    const double u = rng.uniform() * total;
    double acc = 0.0;
    std::size_t last = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      last = i;
      acc += weights[i];
      if (u < acc) return i;
    }
    return last;
  };

  DwellPath path;
  path.total_duration = duration;
  std::size_t state = draw_categorical(spec.initial_distribution, 1.0);
  double t = 0.0;
  while (t < duration) {
    const double rate = -spec.generator[state][state];
    double dwell = rate > 0.0 ? rng.exponential(rate) : duration - t;
    const bool last = t + dwell >= duration;
    if (last) dwell = duration - t;
    if (dwell > 0.0) {
      if (!path.dwells.empty() && path.dwells.back().state == state)
        path.dwells.back().duration += dwell;
      else
        path.dwells.push_back({state, dwell});
    }
    t += dwell;
    if (last) break;
    std::vector<double> row = spec.generator[state];
    row[state] = 0.0;
    state = draw_categorical(row, rate);
  }
  return path;
}

inline JumpTrace bin_counts(const DwellPath& path, const EmissionModel& emission, std::uint64_t seed) {
  std::size_t n_states = emission.means.size();
  emission.validate(n_states);
  for (const auto& d : path.dwells)
    if (d.state >= n_states) throw InvalidArgument("bin_counts: path state without emission parameters");
  if (emission.bin_time > path.total_duration * (1.0 + 1e-12))
    throw InvalidArgument("bin_counts: bin_time exceeds path duration");

  const auto n_bins = static_cast<std::size_t>(std::floor(path.total_duration / emission.bin_time + 1e-9));
  Rng rng(seed);
  JumpTrace trace;
  trace.bin_time = emission.bin_time;
  trace.seed = seed;
  trace.bin_counts.reserve(n_bins);
  std::vector<int> latent;
  latent.reserve(n_bins);

  std::vector<double> occupancy(n_states);
  std::size_t cursor = 0;
  double dwell_start = 0.0;
  for (std::size_t k = 0; k < n_bins; ++k) {
    const double bin_start = static_cast<double>(k) * emission.bin_time;
    const double bin_end = bin_start + emission.bin_time;
    std::fill(occupancy.begin(), occupancy.end(), 0.0);
    while (cursor < path.dwells.size()) {
      const auto& d = path.dwells[cursor];
      const double dwell_end = dwell_start + d.duration;
      const double overlap = std::min(dwell_end, bin_end) - std::max(dwell_start, bin_start);
      if (overlap > 0.0) occupancy[d.state] += overlap;
      if (dwell_end > bin_end) break;
      dwell_start = dwell_end;
      ++cursor;
    }
    double count = 0.0;
    double occupied = 0.0;
    for (std::size_t s = 0; s < n_states; ++s) occupied += occupancy[s];
    for (std::size_t s = 0; s < n_states; ++s) {
      if (occupancy[s] <= 0.0) continue;
      count += occupancy[s] / occupied * rng.normal(emission.means[s], emission.variances[s]);
    }
    trace.bin_counts.push_back(std::max(count, 0.0));
    latent.push_back(static_cast<int>(std::max_element(occupancy.begin(), occupancy.end()) - occupancy.begin()));
  }
  trace.latent_states = std::move(latent);
  return trace;
}

// Index convention for two-state traces.
inline constexpr std::size_t dark_state = 0;
inline constexpr std::size_t bright_state = 1;

// Two-state emission with the bright variance pinned to its mean.
inline EmissionModel two_state_emission(double mu_dark, double mu_bright, double sigma2_dark, double bin_time,
                                        std::optional<double> sigma2_bright = std::nullopt) {
  return {{mu_dark, mu_bright}, {sigma2_dark, sigma2_bright.value_or(mu_bright)}, bin_time};
}

inline MarkovSpec two_state_spec(double t1_bright, double t1_dark, std::optional<std::size_t> start = std::nullopt) {
  const double rd = std::isinf(t1_dark) ? 0.0 : 1.0 / t1_dark;
  const double rb = std::isinf(t1_bright) ? 0.0 : 1.0 / t1_bright;
  std::vector<double> init;
  if (start)
    init = {*start == dark_state ? 1.0 : 0.0, *start == bright_state ? 1.0 : 0.0};
  else if (rd + rb > 0.0)
    init = {rb / (rd + rb), rd / (rd + rb)};  // stationary occupancy
  else
    init = {0.5, 0.5};
  return {{"dark", "bright"}, {{-rd, rd}, {rb, -rb}}, init};
}

// The two CTMC and count streams are derived from `seed` by splitting.
inline JumpTrace simulate_c13_trace(double t1_bright, double t1_dark, const EmissionModel& emission, std::size_t n_bins,
                                    std::uint64_t seed, std::optional<std::size_t> start = std::nullopt) {
  if (!(t1_bright > 0.0) || !(t1_dark > 0.0) || n_bins == 0)
    throw InvalidArgument("simulate_c13_trace: T1 values and bin count must be positive");
  const Rng root(seed);
  const double duration = static_cast<double>(n_bins) * emission.bin_time;
  const auto path = simulate_ctmc(two_state_spec(t1_bright, t1_dark, start), duration, root.split(0)());
  auto trace = bin_counts(path, emission, root.split(1)());
  trace.bin_counts.resize(std::min(trace.bin_counts.size(), n_bins));
  trace.latent_states->resize(trace.bin_counts.size());
  trace.seed = seed;
  return trace;
}

// Register states |m_N, c13> with m_N in {+1, 0, -1}; index = 2 * (1 - m_N) + (down ? 1 : 0).
inline constexpr std::size_t register_index(int m_n, C13State c13) {
  return static_cast<std::size_t>(2 * (1 - m_n) + (c13 == C13State::down ? 1 : 0));
}

inline std::string register_label(std::size_t index) {
  static const std::array<const char*, 6> labels = {"|+1,up>", "|+1,down>", "|0,up>", "|0,down>", "|-1,up>", "|-1,down>"};
  return labels.at(index);
}

struct RegisterSimConfig {
  double c13_flip_rate_bright = 1.0 / 2.4;  // 1/s, applies outside the dark state
  double c13_flip_rate_dark = 1.0 / 1.5;    // 1/s, applies in the dark state
  // 1/s, total rate of leaving an m_N level; split evenly over its nearest
  // neighbours, so every level has the same mean dwell
  double n14_flip_rate = 1.0 / 0.030;
  std::size_t dark_state_label = register_index(1, C13State::down);
  double mu_dark = 118.0;
  double mu_bright = 152.0;
  double sigma2_dark = 1.5 * 118.0;
  double sigma2_bright = 152.0;
  double bin_time = 0.020;
  std::vector<double> initial_distribution = std::vector<double>(6, 1.0 / 6.0);

  void validate() const {
    if (!(c13_flip_rate_bright >= 0.0) || !(c13_flip_rate_dark >= 0.0) || !(n14_flip_rate >= 0.0))
      throw InvalidConfig("register: rates must be non-negative");
    if (dark_state_label >= 6) throw InvalidConfig("register: dark_state_label must index one of the 6 states");
    if (initial_distribution.size() != 6) throw InvalidConfig("register: initial distribution needs 6 entries");
  }

  EmissionModel emission() const {
    EmissionModel e{std::vector<double>(6, mu_bright), std::vector<double>(6, sigma2_bright), bin_time};
    e.means[dark_state_label] = mu_dark;
    e.variances[dark_state_label] = sigma2_dark;
    return e;
  }
};

// Product chain of the 3-state 14N ladder and the 2-state 13C flip.
inline MarkovSpec register_markov_spec(const RegisterSimConfig& cfg) {
  cfg.validate();
  MarkovSpec spec;
  spec.generator.assign(6, std::vector<double>(6, 0.0));
  for (std::size_t i = 0; i < 6; ++i) spec.state_labels.push_back(register_label(i));
  for (int mn : {1, 0, -1}) {
    for (C13State c : {C13State::up, C13State::down}) {
      const auto i = register_index(mn, c);
      const auto flipped = register_index(mn, c == C13State::up ? C13State::down : C13State::up);
      spec.generator[i][flipped] += i == cfg.dark_state_label ? cfg.c13_flip_rate_dark : cfg.c13_flip_rate_bright;
      const double hop = mn == 0 ? 0.5 * cfg.n14_flip_rate : cfg.n14_flip_rate;
      for (int step : {-1, 1}) {
        const int target = mn + step;
        if (target < -1 || target > 1) continue;
        spec.generator[i][register_index(target, c)] += hop;
      }
    }
  }
  for (std::size_t i = 0; i < 6; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < 6; ++j)
      if (j != i) row += spec.generator[i][j];
    spec.generator[i][i] = -row;
  }
  spec.initial_distribution = cfg.initial_distribution;
  return spec;
}

inline JumpTrace simulate_register_trace(const RegisterSimConfig& cfg, std::size_t n_bins, std::uint64_t seed) {
  if (n_bins == 0) throw InvalidArgument("simulate_register_trace: n_bins must be positive");
  const auto spec = register_markov_spec(cfg);
  const Rng root(seed);
  const double duration = static_cast<double>(n_bins) * cfg.bin_time;
  const auto path = simulate_ctmc(spec, duration, root.split(0)());
  auto trace = bin_counts(path, cfg.emission(), root.split(1)());
  trace.bin_counts.resize(std::min(trace.bin_counts.size(), n_bins));
  trace.latent_states->resize(trace.bin_counts.size());
  trace.seed = seed;
  return trace;
}

// Collapses register latent states onto dark (0) / bright (1).
inline std::vector<int> coarse_states(const std::vector<int>& states, std::size_t dark_label) {
  std::vector<int> out;
  out.reserve(states.size());
  for (int s : states) out.push_back(static_cast<std::size_t>(s) == dark_label ? 0 : 1);
  return out;
}

// Durations of maximal runs of a per-bin state sequence, split by state.
inline std::vector<std::vector<double>> run_lengths(const std::vector<int>& states, double bin_time, std::size_t n_states) {
  std::vector<std::vector<double>> out(n_states);
  std::size_t start = 0;
  for (std::size_t k = 1; k <= states.size(); ++k) {
    if (k == states.size() || states[k] != states[start]) {
      out.at(static_cast<std::size_t>(states[start])).push_back(static_cast<double>(k - start) * bin_time);
      start = k;
    }
  }
  return out;
}

}  // namespace nvjump
