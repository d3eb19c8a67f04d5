#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cesr/channel.hpp"
#include "cesr/error.hpp"
#include "cesr/io.hpp"
#include "cesr/rng.hpp"

namespace cesr {

/// One training pair: LS pilot estimate and the true full-grid channel,
/// both row-major complex<float>.
struct Sample {
  std::vector<std::complex<float>> pilot_estimate;
  std::vector<std::complex<float>> channel;
};

struct Dataset {
  std::uint32_t subcarriers = 0;
  std::uint32_t timeslots = 0;
  std::uint32_t pilot_rows = 0;
  std::uint32_t pilot_cols = 0;
  std::vector<Sample> samples;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  bool same_shape(const Dataset& o) const {
    return subcarriers == o.subcarriers && timeslots == o.timeslots && pilot_rows == o.pilot_rows &&
           pilot_cols == o.pilot_cols;
  }

  void append(const Sample& s) {
    if (s.pilot_estimate.size() != std::size_t{pilot_rows} * pilot_cols ||
        s.channel.size() != std::size_t{subcarriers} * timeslots)
      throw DataError("dataset: sample shape does not match header");
    samples.push_back(s);
  }
};

inline constexpr std::uint32_t dataset_version = 1;

/// Seeds for sample `index`: the channel depends on (seed, domain, profile,
/// index); the noise additionally on the SNR, so SNR sweeps share channels.
struct SampleSeeds {
  std::uint64_t channel;
  std::uint64_t noise;
};

inline SampleSeeds sample_seeds(std::uint64_t seed, SeedDomain domain, const std::string& profile, double snr_db,
                                std::uint64_t index) {
  const std::uint64_t base = derive_seed(seed, {tag(domain), fnv1a(profile), index});
  return {base, derive_seed(base, {tag(SeedDomain::noise), tag(snr_db)})};
}

/// Draws one channel and its LS pilot estimate.
inline std::pair<ChannelGrid, ComplexGrid> draw_sample(const TdlProfile& profile, const OfdmConfig& cfg,
                                                       const PilotPattern& pattern, double snr_db,
                                                       const SampleSeeds& seeds) {
  Rng channel_rng(seeds.channel);
  ChannelGrid h = generate_channel(profile, cfg, channel_rng);
  Rng noise_rng(seeds.noise);
  auto obs = make_pilot_observation(h, pattern, snr_db, noise_rng);
  ls_estimate(obs);
  return {std::move(h), std::move(obs.estimate)};
}

inline std::vector<std::complex<float>> to_float(const ComplexGrid& g) {
  std::vector<std::complex<float>> out(g.size());
  for (std::size_t i = 0; i < g.size(); ++i)
    out[i] = {static_cast<float>(g.data[i].real()), static_cast<float>(g.data[i].imag())};
  return out;
}

inline ComplexGrid to_grid(const std::vector<std::complex<float>>& v, std::size_t rows, std::size_t cols) {
  if (v.size() != rows * cols) throw DataError("to_grid: size mismatch");
  ComplexGrid g(rows, cols);
  for (std::size_t i = 0; i < v.size(); ++i) g.data[i] = {v[i].real(), v[i].imag()};
  return g;
}

inline Dataset generate_dataset(const TdlProfile& profile, const OfdmConfig& cfg, const PilotPattern& pattern,
                                double snr_db, std::size_t count, std::uint64_t seed, SeedDomain domain) {
  if (count == 0) throw DataError("dataset: sample count must be positive");
  pattern.validate(cfg);
  Dataset ds;
  ds.subcarriers = static_cast<std::uint32_t>(cfg.subcarriers);
  ds.timeslots = static_cast<std::uint32_t>(cfg.timeslots);
  ds.pilot_rows = static_cast<std::uint32_t>(pattern.rows());
  ds.pilot_cols = static_cast<std::uint32_t>(pattern.cols());
  ds.samples.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    auto [h, est] = draw_sample(profile, cfg, pattern, snr_db, sample_seeds(seed, domain, profile.name, snr_db, i));
    ds.samples.push_back(Sample{to_float(est), to_float(h)});
  }
  return ds;
}

/// "CHDS" | version | N | Nf | Nt | Nfp | Ntp | per sample: Hp then H,
/// interleaved re/im float32, all little-endian.
inline std::vector<char> encode_dataset(const Dataset& ds) {
  io::ByteWriter w;
  w.magic("CHDS");
  w.u32(dataset_version);
  w.u32(static_cast<std::uint32_t>(ds.samples.size()));
  w.u32(ds.subcarriers);
  w.u32(ds.timeslots);
  w.u32(ds.pilot_rows);
  w.u32(ds.pilot_cols);
  for (const auto& s : ds.samples) {
    for (auto v : s.pilot_estimate) {
      w.f32(v.real());
      w.f32(v.imag());
    }
    for (auto v : s.channel) {
      w.f32(v.real());
      w.f32(v.imag());
    }
  }
  return w.bytes();
}

inline Dataset decode_dataset(std::vector<char> bytes, const std::string& source) {
  io::ByteReader r(std::move(bytes), source);
  r.expect_magic("CHDS");
  if (auto v = r.u32(); v != dataset_version)
    throw DataError(source + ": unsupported dataset version " + std::to_string(v));
  Dataset ds;
  const std::uint32_t n = r.u32();
  ds.subcarriers = r.u32();
  ds.timeslots = r.u32();
  ds.pilot_rows = r.u32();
  ds.pilot_cols = r.u32();
  const std::size_t pilot = std::size_t{ds.pilot_rows} * ds.pilot_cols;
  const std::size_t full = std::size_t{ds.subcarriers} * ds.timeslots;
  if (n == 0 || pilot == 0 || full == 0) throw DataError(source + ": empty dataset header");
  if (r.remaining() != std::size_t{n} * (pilot + full) * 8) throw DataError(source + ": payload size mismatch");
  ds.samples.resize(n);
  for (auto& s : ds.samples) {
    s.pilot_estimate.resize(pilot);
    s.channel.resize(full);
    for (auto& v : s.pilot_estimate) {
      const float re = r.f32();
      v = {re, r.f32()};
    }
    for (auto& v : s.channel) {
      const float re = r.f32();
      v = {re, r.f32()};
    }
  }
  return ds;
}

inline void save_dataset(const std::filesystem::path& path, const Dataset& ds, bool overwrite) {
  io::write_file_atomic(path, encode_dataset(ds), overwrite);
}

inline Dataset load_dataset(const std::filesystem::path& path) { return decode_dataset(io::read_file(path), path.string()); }

}  // namespace cesr
