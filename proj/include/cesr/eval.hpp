#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "cesr/channel.hpp"
#include "cesr/dataset.hpp"
#include "cesr/error.hpp"
#include "cesr/model.hpp"

namespace cesr {

/// (1/M) sum_m ||H_m - Hhat_m||_F^2 / ||H_m||_F^2
inline double nmse(const std::vector<ChannelGrid>& truth, const std::vector<ChannelGrid>& estimates) {
  if (truth.empty() || truth.size() != estimates.size())
    throw DataError("nmse: need equal-length, nonempty lists");
  double acc = 0.0;
  for (std::size_t m = 0; m < truth.size(); ++m) {
    const auto& h = truth[m];
    const auto& e = estimates[m];
    if (h.rows != e.rows || h.cols != e.cols) throw DataError("nmse: grid shape mismatch at sample " + std::to_string(m));
    double err = 0.0, power = 0.0;
    for (std::size_t i = 0; i < h.size(); ++i) {
      err += std::norm(h.data[i] - e.data[i]);
      power += std::norm(h.data[i]);
    }
    if (power == 0.0) throw DataError("nmse: zero-power truth at sample " + std::to_string(m));
    acc += err / power;
  }
  return acc / static_cast<double>(truth.size());
}

inline double to_db(double linear) { return 10.0 * std::log10(linear); }

/// Maps an LS pilot estimate to a full-grid estimate.
using Estimator = std::function<ChannelGrid(const ComplexGrid& pilot_estimate)>;

inline Estimator ls_bilinear_estimator(const PilotPattern& pattern, const OfdmConfig& cfg) {
  return [pattern, cfg](const ComplexGrid& est) { return interpolate_bilinear(est, pattern, cfg); };
}

template <typename T>
Estimator model_estimator(const ModelParams<T>& params, ForwardOptions opts = {}) {
  auto shared = std::make_shared<ModelParams<T>>(params);
  return [shared, opts](const ComplexGrid& est) {
    const auto& g = shared->geometry;
    if (est.rows != g.pilot_rows || est.cols != g.pilot_cols)
      throw DataError("model estimator: pilot grid does not match model geometry");
    auto input = to_planes<T, double>(est.data, est.rows, est.cols);
    return from_planes(predict(*shared, input, opts));
  };
}

struct EvalReport {
  std::string scheme;
  std::string profile;
  std::vector<double> snr_db;
  std::vector<double> nmse_linear;
  std::vector<double> nmse_db;
  std::size_t mc = 0;
  std::uint64_t seed = 0;
};

struct SweepSettings {
  std::vector<double> snr_db{0, 3, 6, 9, 12, 15};
  std::size_t mc = 500;
  std::uint64_t seed = 1;
  SeedDomain domain = SeedDomain::test;
};

/// NMSE per SNR on freshly drawn test channels. Sample m uses profile
/// m % profiles.size(), so a two-profile list gives a 50/50 mixture. The
/// channel draw depends only on (seed, domain, profile, index), so every
/// SNR point sees the same channels.
inline EvalReport sweep(const std::string& scheme, const Estimator& estimator, const std::vector<TdlProfile>& profiles,
                        const OfdmConfig& cfg, const PilotPattern& pattern, const SweepSettings& settings) {
  if (profiles.empty()) throw UsageError("sweep: no profiles");
  if (settings.mc == 0) throw UsageError("sweep: Monte-Carlo count must be positive");
  EvalReport report;
  report.scheme = scheme;
  for (std::size_t i = 0; i < profiles.size(); ++i) report.profile += (i ? "+" : "") + profiles[i].name;
  report.mc = settings.mc;
  report.seed = settings.seed;
  for (double snr : settings.snr_db) {
    std::vector<ChannelGrid> truth, estimates;
    truth.reserve(settings.mc);
    estimates.reserve(settings.mc);
    for (std::size_t m = 0; m < settings.mc; ++m) {
      const auto& profile = profiles[m % profiles.size()];
      const auto seeds = sample_seeds(settings.seed, settings.domain, profile.name, snr, m / profiles.size());
      auto [h, est] = draw_sample(profile, cfg, pattern, snr, seeds);
      estimates.push_back(estimator(est));
      truth.push_back(std::move(h));
    }
    const double v = nmse(truth, estimates);
    report.snr_db.push_back(snr);
    report.nmse_linear.push_back(v);
    report.nmse_db.push_back(to_db(v));
  }
  return report;
}

/// Same statistic over a stored dataset (its own SNR).
inline double dataset_nmse(const Estimator& estimator, const Dataset& data) {
  std::vector<ChannelGrid> truth, estimates;
  for (const auto& s : data.samples) {
    truth.push_back(to_grid(s.channel, data.subcarriers, data.timeslots));
    estimates.push_back(estimator(to_grid(s.pilot_estimate, data.pilot_rows, data.pilot_cols)));
  }
  return nmse(truth, estimates);
}

inline constexpr const char* report_csv_header = "scheme,profile,snr_db,nmse_linear,nmse_db,mc,seed";

inline std::string format_number(double v) {
  std::ostringstream os;
  os << std::setprecision(10) << v;
  return os.str();
}

inline void append_csv_rows(std::ostringstream& os, const EvalReport& r) {
  for (std::size_t i = 0; i < r.snr_db.size(); ++i)
    os << r.scheme << ',' << r.profile << ',' << format_number(r.snr_db[i]) << ',' << format_number(r.nmse_linear[i])
       << ',' << format_number(r.nmse_db[i]) << ',' << r.mc << ',' << r.seed << '\n';
}

inline std::string to_csv(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  os << report_csv_header << '\n';
  for (const auto& r : reports) append_csv_rows(os, r);
  return os.str();
}

/// Named estimators for the four continual-learning schemes.
struct ForgettingInputs {
  Estimator post_task1;
  Estimator naive;
  Estimator cl;
  Estimator multitask;
};

struct ForgettingReport {
  std::vector<EvalReport> rows;  // scheme x eval set, each over the SNR grid
  std::vector<double> snr_db;
  std::vector<double> naive_task1_degradation_db;  // naive - post-task-I on task I
  std::vector<double> cl_task1_degradation_db;     // CL - post-task-I on task I

  const EvalReport& find(const std::string& scheme, const std::string& profile) const {
    for (const auto& r : rows)
      if (r.scheme == scheme && r.profile == profile) return r;
    throw DataError("forgetting report: no row for " + scheme + " on " + profile);
  }
};

inline ForgettingReport forgetting_report(const ForgettingInputs& in, const TdlProfile& task1, const TdlProfile& task2,
                                          const OfdmConfig& cfg, const PilotPattern& pattern,
                                          const SweepSettings& settings) {
  if (!in.post_task1 || !in.naive || !in.cl || !in.multitask)
    throw DataError("forgetting report: all four schemes are required");
  const std::vector<std::pair<std::string, const Estimator*>> schemes{
      {"post-task-I", &in.post_task1}, {"naive", &in.naive}, {"cl", &in.cl}, {"multitask", &in.multitask}};
  const std::vector<std::vector<TdlProfile>> sets{{task1}, {task2}, {task1, task2}};
  ForgettingReport out;
  out.snr_db = settings.snr_db;
  for (const auto& [name, est] : schemes)
    for (const auto& set : sets) out.rows.push_back(sweep(name, *est, set, cfg, pattern, settings));
  const auto& ref = out.find("post-task-I", task1.name);
  const auto& naive = out.find("naive", task1.name);
  const auto& cl = out.find("cl", task1.name);
  for (std::size_t i = 0; i < settings.snr_db.size(); ++i) {
    out.naive_task1_degradation_db.push_back(naive.nmse_db[i] - ref.nmse_db[i]);
    out.cl_task1_degradation_db.push_back(cl.nmse_db[i] - ref.nmse_db[i]);
  }
  return out;
}

inline std::string retention_csv(const ForgettingReport& r) {
  std::ostringstream os;
  os << "snr_db,naive_task1_degradation_db,cl_task1_degradation_db,retention_delta_db\n";
  for (std::size_t i = 0; i < r.snr_db.size(); ++i)
    os << format_number(r.snr_db[i]) << ',' << format_number(r.naive_task1_degradation_db[i]) << ','
       << format_number(r.cl_task1_degradation_db[i]) << ','
       << format_number(r.naive_task1_degradation_db[i] - r.cl_task1_degradation_db[i]) << '\n';
  return os.str();
}

}  // namespace cesr
