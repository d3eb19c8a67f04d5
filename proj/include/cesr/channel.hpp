#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "cesr/error.hpp"
#include "cesr/rng.hpp"

#ifndef CESR_PROFILE_DIR
#define CESR_PROFILE_DIR "data/profiles"
#endif

namespace cesr {

using cplx = std::complex<double>;

/// Row-major complex matrix; rows are subcarriers, columns timeslots.
struct ComplexGrid {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<cplx> data;

  ComplexGrid() = default;
  ComplexGrid(std::size_t r, std::size_t c, cplx fill = {}) : rows(r), cols(c), data(r * c, fill) {}

  cplx& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
  std::size_t size() const noexcept { return data.size(); }

  friend bool operator==(const ComplexGrid&, const ComplexGrid&) = default;
};

using ChannelGrid = ComplexGrid;

struct OfdmConfig {
  std::size_t subcarriers = 128;
  std::size_t timeslots = 28;
  double subcarrier_spacing = 15e3;
  double carrier_frequency = 2e9;
  double cp_fraction = 0.07;

  double symbol_duration() const { return (1.0 + cp_fraction) / subcarrier_spacing; }

  void validate() const {
    if (subcarriers == 0 || timeslots == 0) throw DataError("ofdm: grid dimensions must be positive");
    if (!(subcarrier_spacing > 0) || !(carrier_frequency > 0) || !(cp_fraction >= 0) ||
        !std::isfinite(subcarrier_spacing) || !std::isfinite(carrier_frequency))
      throw DataError("ofdm: spacing, carrier frequency must be positive and finite");
  }
};

struct PilotPattern {
  std::vector<std::size_t> freq;  // subcarrier indices
  std::vector<std::size_t> time;  // timeslot indices

  std::size_t rows() const noexcept { return freq.size(); }
  std::size_t cols() const noexcept { return time.size(); }

  /// Lattice anchored at index 0 with the given intervals.
  static PilotPattern uniform(const OfdmConfig& cfg, std::size_t freq_interval, std::size_t time_interval) {
    if (freq_interval == 0 || time_interval == 0) throw DataError("pilot intervals must be positive");
    PilotPattern p;
    for (std::size_t k = 0; k < cfg.subcarriers; k += freq_interval) p.freq.push_back(k);
    for (std::size_t t = 0; t < cfg.timeslots; t += time_interval) p.time.push_back(t);
    return p;
  }

  void validate(const OfdmConfig& cfg) const {
    auto check = [](const std::vector<std::size_t>& idx, std::size_t bound, const char* axis) {
      if (idx.empty()) throw DataError(std::string("pilot pattern: no ") + axis + " pilots");
      for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= bound) throw DataError(std::string("pilot pattern: ") + axis + " index out of grid");
        if (i > 0 && idx[i] <= idx[i - 1])
          throw DataError(std::string("pilot pattern: ") + axis + " indices must be strictly increasing");
      }
    };
    check(freq, cfg.subcarriers, "frequency");
    check(time, cfg.timeslots, "time");
  }
};

enum class Fading { rayleigh, rician };

struct Tap {
  double delay = 0.0;     // normalized to the delay spread
  double power_db = 0.0;  // as listed in the profile
  double power = 0.0;     // linear, normalized over the profile
  Fading fading = Fading::rayleigh;
  double k_factor_db = 0.0;  // rician only
};

struct TdlProfile {
  std::string name;
  std::vector<Tap> taps;
  double delay_spread = 100e-9;
  double max_doppler = 0.0;
  double los_angle = std::numbers::pi / 4;  // arrival angle of the LOS ray, radians
};

inline double doppler_from_speed(double speed_kmh, double carrier_frequency) {
  constexpr double c = 299'792'458.0;
  return speed_kmh / 3.6 * carrier_frequency / c;
}

/// Parses `delay_normalized power_db fading{rayleigh|rician:K_db}` lines.
inline TdlProfile parse_tdl_profile(std::istream& in, std::string name) {
  TdlProfile profile;
  profile.name = std::move(name);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string delay_s, power_s, fading_s, extra;
    if (!(ls >> delay_s)) continue;
    auto fail = [&](const std::string& why) {
      throw DataError("profile '" + profile.name + "' line " + std::to_string(line_no) + ": " + why);
    };
    if (!(ls >> power_s >> fading_s) || (ls >> extra)) fail("expected `delay power_db fading`");
    Tap tap;
    try {
      std::size_t used = 0;
      tap.delay = std::stod(delay_s, &used);
      if (used != delay_s.size()) fail("malformed delay");
      tap.power_db = std::stod(power_s, &used);
      if (used != power_s.size()) fail("malformed power");
    } catch (const std::logic_error&) {
      fail("malformed number");
    }
    std::string kind = fading_s;
    std::transform(kind.begin(), kind.end(), kind.begin(), [](unsigned char c) { return std::tolower(c); });
    if (kind == "rayleigh") {
      tap.fading = Fading::rayleigh;
    } else if (kind.rfind("rician:", 0) == 0) {
      tap.fading = Fading::rician;
      try {
        std::size_t used = 0;
        const std::string k = kind.substr(7);
        tap.k_factor_db = std::stod(k, &used);
        if (used != k.size()) fail("malformed K-factor");
      } catch (const std::logic_error&) {
        fail("malformed K-factor");
      }
    } else {
      fail("unknown fading kind '" + fading_s + "'");
    }
    if (!std::isfinite(tap.delay) || !std::isfinite(tap.power_db) || !std::isfinite(tap.k_factor_db))
      fail("non-finite value");
    if (tap.delay < 0) fail("negative delay");
    profile.taps.push_back(tap);
  }
  if (profile.taps.empty()) throw DataError("profile '" + profile.name + "' has no taps");

  double total = 0.0;
  for (auto& t : profile.taps) total += std::pow(10.0, t.power_db / 10.0);
  for (auto& t : profile.taps) t.power = std::pow(10.0, t.power_db / 10.0) / total;
  return profile;
}

inline std::filesystem::path profile_directory() {
  if (const char* env = std::getenv("CESR_PROFILE_DIR")) return env;
  return CESR_PROFILE_DIR;
}

/// Built-in names (TDL-A, TDL-D, case-insensitive) resolve to the shipped
/// tables; anything else is treated as a file path.
inline TdlProfile load_tdl_profile(std::string_view name_or_path) {
  std::string lower(name_or_path);
  std::transform(lower.begin(), lower.end(), lower.begin(), [](unsigned char c) { return std::tolower(c); });
  std::filesystem::path path;
  std::string name;
  if (lower == "tdl-a" || lower == "tdl-d") {
    path = profile_directory() / (lower + ".txt");
    name = lower == "tdl-a" ? "TDL-A" : "TDL-D";
  } else {
    path = std::string(name_or_path);
    name = path.stem().string();
    if (!std::filesystem::exists(path)) throw DataError("unknown profile '" + std::string(name_or_path) + "'");
  }
  std::ifstream in(path);
  if (!in) throw DataError("cannot open profile file " + path.string());
  return parse_tdl_profile(in, name);
}

namespace detail {

// Clarke/Jakes sum of sinusoids with unit mean power.
struct SumOfSinusoids {
  static constexpr std::size_t count = 32;
  double doppler_angle[count];
  double phase[count];

  explicit SumOfSinusoids(Rng& rng) {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    for (std::size_t m = 0; m < count; ++m) {
      doppler_angle[m] = two_pi * (static_cast<double>(m) + uniform01(rng)) / count - std::numbers::pi;
      phase[m] = two_pi * uniform01(rng);
    }
  }

  cplx at(double max_doppler, double time) const {
    constexpr double two_pi = 2.0 * std::numbers::pi;
    cplx acc{};
    for (std::size_t m = 0; m < count; ++m)
      acc += std::polar(1.0, two_pi * max_doppler * std::cos(doppler_angle[m]) * time + phase[m]);
    return acc / std::sqrt(static_cast<double>(count));
  }
};

}  // namespace detail

/// H[k,t] = sum_p a_p(t) exp(-j 2 pi k df tau_p), tau_p = delay_p * DS.
inline ChannelGrid generate_channel(const TdlProfile& profile, const OfdmConfig& cfg, Rng& rng) {
  cfg.validate();
  constexpr double two_pi = 2.0 * std::numbers::pi;
  const std::size_t nf = cfg.subcarriers, nt = cfg.timeslots;
  const double ts = cfg.symbol_duration();

  ChannelGrid h(nf, nt);
  std::vector<cplx> gains(nt);
  std::vector<cplx> steering(nf);
  for (const auto& tap : profile.taps) {
    const double tau = tap.delay * profile.delay_spread;
    const double max_phase = two_pi * static_cast<double>(nf) * cfg.subcarrier_spacing * tau;
    if (!std::isfinite(max_phase) || !std::isfinite(profile.max_doppler))
      throw NumericalError("channel: non-finite phase for profile '" + profile.name + "'");

    detail::SumOfSinusoids sos(rng);
    if (tap.fading == Fading::rayleigh) {
      for (std::size_t t = 0; t < nt; ++t)
        gains[t] = std::sqrt(tap.power) * sos.at(profile.max_doppler, static_cast<double>(t) * ts);
    } else {
      const double k = std::pow(10.0, tap.k_factor_db / 10.0);
      const double los = std::sqrt(tap.power * k / (k + 1.0));
      const double diffuse = std::sqrt(tap.power / (k + 1.0));
      const double los_doppler = profile.max_doppler * std::cos(profile.los_angle);
      for (std::size_t t = 0; t < nt; ++t) {
        const double time = static_cast<double>(t) * ts;
        gains[t] = los * std::polar(1.0, two_pi * los_doppler * time) + diffuse * sos.at(profile.max_doppler, time);
      }
    }
    for (std::size_t k = 0; k < nf; ++k)
      steering[k] = std::polar(1.0, -two_pi * static_cast<double>(k) * cfg.subcarrier_spacing * tau);
    for (std::size_t k = 0; k < nf; ++k)
      for (std::size_t t = 0; t < nt; ++t) h(k, t) += gains[t] * steering[k];
  }
  return h;
}

/// Channel entries at the pilot lattice.
inline ComplexGrid pilot_subgrid(const ChannelGrid& h, const PilotPattern& pattern) {
  ComplexGrid out(pattern.rows(), pattern.cols());
  for (std::size_t i = 0; i < pattern.rows(); ++i)
    for (std::size_t j = 0; j < pattern.cols(); ++j) {
      if (pattern.freq[i] >= h.rows || pattern.time[j] >= h.cols) throw DataError("pilot index outside grid");
      out(i, j) = h(pattern.freq[i], pattern.time[j]);
    }
  return out;
}

struct PilotObservation {
  ComplexGrid pilots;    // transmitted unit-modulus QPSK symbols
  ComplexGrid received;  // pilots * H_p + noise
  ComplexGrid estimate;  // LS estimate; empty until ls_estimate()
  double noise_variance = 0.0;
  double snr_db = std::numeric_limits<double>::infinity();
};

/// snr_db = +inf disables noise. Noise variance is 10^(-snr/10) per entry.
inline PilotObservation make_pilot_observation(const ChannelGrid& h, const PilotPattern& pattern, double snr_db,
                                               Rng& rng) {
  PilotObservation obs;
  const ComplexGrid hp = pilot_subgrid(h, pattern);
  obs.snr_db = snr_db;
  const bool noiseless = std::isinf(snr_db) && snr_db > 0;
  obs.noise_variance = noiseless ? 0.0 : std::pow(10.0, -snr_db / 10.0);
  obs.pilots = ComplexGrid(hp.rows, hp.cols);
  obs.received = ComplexGrid(hp.rows, hp.cols);
  const double a = 1.0 / std::numbers::sqrt2;
  std::uniform_int_distribution<int> bit(0, 1);
  for (std::size_t i = 0; i < hp.size(); ++i) {
    const double re = bit(rng) ? a : -a;
    const double im = bit(rng) ? a : -a;
    obs.pilots.data[i] = {re, im};
  }
  for (std::size_t i = 0; i < hp.size(); ++i) {
    obs.received.data[i] = obs.pilots.data[i] * hp.data[i];
    if (!noiseless) obs.received.data[i] += complex_normal(rng, obs.noise_variance);
  }
  return obs;
}

/// Elementwise Y_p / S_p; also stored into obs.estimate.
inline const ComplexGrid& ls_estimate(PilotObservation& obs) {
  if (obs.pilots.rows != obs.received.rows || obs.pilots.cols != obs.received.cols)
    throw DataError("ls_estimate: pilot and received shapes differ");
  ComplexGrid est(obs.pilots.rows, obs.pilots.cols);
  for (std::size_t i = 0; i < est.size(); ++i) {
    if (obs.pilots.data[i] == cplx{}) throw DataError("ls_estimate: zero pilot symbol");
    est.data[i] = obs.received.data[i] / obs.pilots.data[i];
  }
  obs.estimate = std::move(est);
  return obs.estimate;
}

namespace detail {

// Linear interpolation through (positions, values) with edge-slope
// extrapolation; requires >= 2 strictly increasing positions.
inline cplx interp_linear(const std::vector<std::size_t>& pos, const std::vector<cplx>& val, double x) {
  std::size_t seg = 0;
  while (seg + 2 < pos.size() && x > static_cast<double>(pos[seg + 1])) ++seg;
  const double x0 = static_cast<double>(pos[seg]), x1 = static_cast<double>(pos[seg + 1]);
  return val[seg] + (val[seg + 1] - val[seg]) * ((x - x0) / (x1 - x0));
}

}  // namespace detail

/// Separable linear interpolation of the pilot estimate onto the full grid:
/// along frequency at each pilot timeslot, then along time per subcarrier.
inline ChannelGrid interpolate_bilinear(const ComplexGrid& pilots, const PilotPattern& pattern,
                                        const OfdmConfig& cfg) {
  if (pattern.rows() < 2 || pattern.cols() < 2)
    throw DataError("interpolate_bilinear: need at least 2 pilots per dimension");
  if (pilots.rows != pattern.rows() || pilots.cols != pattern.cols())
    throw DataError("interpolate_bilinear: estimate shape does not match pilot pattern");
  const std::size_t nf = cfg.subcarriers, nt = cfg.timeslots;
  ComplexGrid by_freq(nf, pattern.cols());
  std::vector<cplx> column(pattern.rows());
  for (std::size_t j = 0; j < pattern.cols(); ++j) {
    for (std::size_t i = 0; i < pattern.rows(); ++i) column[i] = pilots(i, j);
    for (std::size_t k = 0; k < nf; ++k)
      by_freq(k, j) = detail::interp_linear(pattern.freq, column, static_cast<double>(k));
  }
  ChannelGrid out(nf, nt);
  std::vector<cplx> row(pattern.cols());
  for (std::size_t k = 0; k < nf; ++k) {
    for (std::size_t j = 0; j < pattern.cols(); ++j) row[j] = by_freq(k, j);
    for (std::size_t t = 0; t < nt; ++t) out(k, t) = detail::interp_linear(pattern.time, row, static_cast<double>(t));
  }
  return out;
}

/// First m columns of the unitary n-point DFT: (k,l) -> exp(-j2 pi kl/n)/sqrt(n).
inline ComplexGrid dft_matrix(std::size_t n, std::size_t m) {
  if (m > n) throw DataError("dft_matrix: m must not exceed n");
  if (n == 0) throw DataError("dft_matrix: n must be positive");
  ComplexGrid f(n, m);
  const double norm = 1.0 / std::sqrt(static_cast<double>(n));
  for (std::size_t k = 0; k < n; ++k)
    for (std::size_t l = 0; l < m; ++l)
      f(k, l) = std::polar(norm, -2.0 * std::numbers::pi * static_cast<double>((k * l) % n) / static_cast<double>(n));
  return f;
}

}  // namespace cesr
