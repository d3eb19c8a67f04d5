#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "cesr/eval.hpp"

using namespace cesr;

namespace {

ChannelGrid random_grid(std::size_t r, std::size_t c, std::uint64_t seed) {
  Rng rng(seed);
  ChannelGrid g(r, c);
  for (auto& v : g.data) v = complex_normal(rng);
  return g;
}

// Perturbed copy of h; estimator simulating a fixed error field.
Estimator fixed_error_estimator(const PilotPattern& pattern, const OfdmConfig& cfg, double amount) {
  return [pattern, cfg, amount](const ComplexGrid& est) {
    auto out = interpolate_bilinear(est, pattern, cfg);
    for (auto& v : out.data) v *= (1.0 + amount);
    return out;
  };
}

}  // namespace

TEST(Nmse, PerfectAndZeroEstimates) {
  std::vector<ChannelGrid> h{random_grid(4, 3, 1), random_grid(4, 3, 2)};
  EXPECT_EQ(nmse(h, h), 0.0);
  std::vector<ChannelGrid> zero{ChannelGrid(4, 3), ChannelGrid(4, 3)};
  EXPECT_EQ(nmse(h, zero), 1.0);
}

TEST(Nmse, HandBuiltOneByOne) {
  std::vector<ChannelGrid> h{ChannelGrid(1, 1, 1.0), ChannelGrid(1, 1, 2.0)};
  std::vector<ChannelGrid> e{ChannelGrid(1, 1, 0.0), ChannelGrid(1, 1, 2.0)};
  EXPECT_DOUBLE_EQ(nmse(h, e), 0.5);
  EXPECT_DOUBLE_EQ(to_db(0.1), -10.0);
}

TEST(Nmse, Errors) {
  std::vector<ChannelGrid> h{ChannelGrid(2, 2)};
  EXPECT_THROW(nmse(h, h), DataError);
  EXPECT_THROW(nmse({}, {}), DataError);
  std::vector<ChannelGrid> a{random_grid(2, 2, 1)}, b{random_grid(2, 3, 1)};
  EXPECT_THROW(nmse(a, b), DataError);
  EXPECT_THROW(nmse(a, {}), DataError);
}

TEST(Nmse, InvariantToJointComplexScaling) {
  std::vector<ChannelGrid> h{random_grid(5, 4, 3)}, e{random_grid(5, 4, 4)};
  const double base = nmse(h, e);
  for (cplx c : {cplx{2, 0}, cplx{0, -1}, cplx{1e-3, 5e-4}}) {
    auto hs = h, es = e;
    for (auto& v : hs[0].data) v *= c;
    for (auto& v : es[0].data) v *= c;
    EXPECT_NEAR(nmse(hs, es), base, 1e-12 * base);
  }
  // Same property through a float round trip.
  auto hf = to_grid(to_float(h[0]), 5, 4), ef = to_grid(to_float(e[0]), 5, 4);
  for (auto& v : hf.data) v *= cplx{3, 4};
  for (auto& v : ef.data) v *= cplx{3, 4};
  EXPECT_NEAR(nmse({hf}, {ef}), base, 1e-6);
}

TEST(Nmse, QuadraticInSmallPerturbation) {
  auto h = random_grid(8, 8, 5);
  auto err = random_grid(8, 8, 6);
  auto at = [&](double eps) {
    auto e = h;
    for (std::size_t i = 0; i < e.size(); ++i) e.data[i] += eps * err.data[i];
    return nmse({h}, {e});
  };
  EXPECT_NEAR(at(1e-3) / at(5e-4), 4.0, 1e-6);
}

TEST(Sweep, LsOnFlatStaticChannelIsExact) {
  std::istringstream in("0 0 rayleigh\n");
  auto flat = parse_tdl_profile(in, "flat");
  OfdmConfig cfg;
  auto pattern = PilotPattern::uniform(cfg, 9, 5);
  SweepSettings s;
  s.snr_db = {INFINITY};
  s.mc = 20;
  auto r = sweep("ls", ls_bilinear_estimator(pattern, cfg), {flat}, cfg, pattern, s);
  ASSERT_EQ(r.nmse_linear.size(), 1u);
  EXPECT_LT(r.nmse_linear[0], 1e-10);
}

TEST(Sweep, LsImprovesWithSnrAndIsReproducible) {
  OfdmConfig cfg;
  auto pattern = PilotPattern::uniform(cfg, 9, 5);
  auto a = load_tdl_profile("TDL-A");
  a.max_doppler = 92.6;
  SweepSettings s;
  s.mc = 50;
  auto r1 = sweep("ls", ls_bilinear_estimator(pattern, cfg), {a}, cfg, pattern, s);
  auto r2 = sweep("ls", ls_bilinear_estimator(pattern, cfg), {a}, cfg, pattern, s);
  EXPECT_EQ(to_csv({r1}), to_csv({r2}));
  EXPECT_LE(r1.nmse_linear.back(), r1.nmse_linear.front());
  for (std::size_t i = 0; i < r1.snr_db.size(); ++i) {
    EXPECT_GE(r1.nmse_linear[i], 0.0);
    EXPECT_DOUBLE_EQ(r1.nmse_db[i], to_db(r1.nmse_linear[i]));
  }
  s.seed = 2;
  auto r3 = sweep("ls", ls_bilinear_estimator(pattern, cfg), {a}, cfg, pattern, s);
  EXPECT_NE(r1.nmse_linear[0], r3.nmse_linear[0]);
}

TEST(Sweep, MixedSetLabelsAndAlternatesProfiles) {
  OfdmConfig cfg;
  cfg.subcarriers = 32;
  cfg.timeslots = 14;
  auto pattern = PilotPattern::uniform(cfg, 9, 5);
  auto a = load_tdl_profile("TDL-A"), d = load_tdl_profile("TDL-D");
  SweepSettings s;
  s.snr_db = {10};
  s.mc = 40;
  auto ls = ls_bilinear_estimator(pattern, cfg);
  auto mixed = sweep("ls", ls, {a, d}, cfg, pattern, s);
  EXPECT_EQ(mixed.profile, "TDL-A+TDL-D");
  s.mc = 20;
  const double na = sweep("ls", ls, {a}, cfg, pattern, s).nmse_linear[0];
  const double nd = sweep("ls", ls, {d}, cfg, pattern, s).nmse_linear[0];
  EXPECT_NEAR(mixed.nmse_linear[0], 0.5 * (na + nd), 1e-12);
}

TEST(Sweep, TestDomainIsDisjointFromTraining) {
  for (std::uint64_t i = 0; i < 100; ++i) {
    auto train = sample_seeds(1, SeedDomain::train, "TDL-A", 10, i);
    for (std::uint64_t j = 0; j < 100; ++j) ASSERT_NE(train.channel, sample_seeds(1, SeedDomain::test, "TDL-A", 10, j).channel);
  }
  // SNR changes the noise only.
  auto lo = sample_seeds(1, SeedDomain::test, "TDL-A", 0, 5), hi = sample_seeds(1, SeedDomain::test, "TDL-A", 15, 5);
  EXPECT_EQ(lo.channel, hi.channel);
  EXPECT_NE(lo.noise, hi.noise);
}

TEST(Sweep, Errors) {
  OfdmConfig cfg;
  auto pattern = PilotPattern::uniform(cfg, 9, 5);
  SweepSettings s;
  EXPECT_THROW(sweep("ls", ls_bilinear_estimator(pattern, cfg), {}, cfg, pattern, s), UsageError);
  s.mc = 0;
  EXPECT_THROW(sweep("ls", ls_bilinear_estimator(pattern, cfg), {load_tdl_profile("TDL-A")}, cfg, pattern, s),
               UsageError);
  auto wrong = zero_params<float>(ModelGeometry{4, 3, 32, 14});
  s.mc = 1;
  EXPECT_THROW(sweep("m", model_estimator(wrong), {load_tdl_profile("TDL-A")}, cfg, pattern, s), DataError);
}

TEST(Csv, SchemaAndFormatting) {
  EvalReport r;
  r.scheme = "ls";
  r.profile = "TDL-A";
  r.snr_db = {0, 15};
  r.nmse_linear = {0.5, 0.03125};
  r.nmse_db = {to_db(0.5), to_db(0.03125)};
  r.mc = 500;
  r.seed = 7;
  const auto csv = to_csv({r});
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "scheme,profile,snr_db,nmse_linear,nmse_db,mc,seed");
  EXPECT_NE(csv.find("ls,TDL-A,0,0.5,-3.010299957,500,7\n"), std::string::npos);
  EXPECT_NE(csv.find("ls,TDL-A,15,0.03125,-15.05149978,500,7\n"), std::string::npos);
}

TEST(Forgetting, ReportLayoutAndDegradation) {
  OfdmConfig cfg;
  cfg.subcarriers = 32;
  cfg.timeslots = 14;
  auto pattern = PilotPattern::uniform(cfg, 9, 5);
  auto a = load_tdl_profile("TDL-A"), d = load_tdl_profile("TDL-D");
  SweepSettings s;
  s.snr_db = {0, 10};
  s.mc = 10;
  ForgettingInputs in{ls_bilinear_estimator(pattern, cfg), fixed_error_estimator(pattern, cfg, 0.5),
                      ls_bilinear_estimator(pattern, cfg), ls_bilinear_estimator(pattern, cfg)};
  auto rep = forgetting_report(in, a, d, cfg, pattern, s);
  EXPECT_EQ(rep.rows.size(), 12u);
  EXPECT_EQ(rep.find("cl", "TDL-A+TDL-D").nmse_linear, rep.find("post-task-I", "TDL-A+TDL-D").nmse_linear);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(rep.cl_task1_degradation_db[i], 0.0);
    EXPECT_GT(rep.naive_task1_degradation_db[i], 0.0);
  }
  const auto csv = retention_csv(rep);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "snr_db,naive_task1_degradation_db,cl_task1_degradation_db,retention_delta_db");
  EXPECT_THROW(rep.find("oracle", "TDL-A"), DataError);
  in.cl = nullptr;
  EXPECT_THROW(forgetting_report(in, a, d, cfg, pattern, s), DataError);
}
