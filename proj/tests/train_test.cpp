#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "cesr/train.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace cesr;

namespace {

// 32x14 grid with the default pilot intervals -> 4x3 pilot lattice.
struct Reduced {
  OfdmConfig cfg;
  PilotPattern pattern;
  ModelGeometry geometry;

  Reduced() {
    cfg.subcarriers = 32;
    cfg.timeslots = 14;
    pattern = PilotPattern::uniform(cfg, 9, 5);
    geometry = ModelGeometry::from(cfg, pattern);
  }

  Dataset data(const char* profile, std::size_t n, std::uint64_t seed = 1) const {
    auto p = load_tdl_profile(profile);
    p.max_doppler = 92.6;
    return generate_dataset(p, cfg, pattern, 10.0, n, seed, SeedDomain::train);
  }

  template <typename T>
  ModelParams<T> model(std::uint64_t seed = 1) const {
    Rng rng(seed);
    return init_params<T>(geometry, rng);
  }
};

TrainConfig quick(std::size_t epochs, std::size_t batch = 4) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = batch;
  c.seed = 9;
  return c;
}

template <typename T>
bool same_params(const ModelParams<T>& a, const ModelParams<T>& b) {
  for (std::size_t i = 0; i < a.tensors.size(); ++i)
    if (!(a.tensors[i].value == b.tensors[i].value)) return false;
  return true;
}

template <typename T>
FisherDiag<T> zero_fisher(const ModelParams<T>& p) {
  FisherDiag<T> f;
  for (const auto& t : p.tensors) {
    f.fisher.emplace_back(t.value.shape());
    f.anchor.push_back(t.value);
  }
  return f;
}

template <typename T>
double ewc_value(ModelParams<T>& p, const FisherDiag<T>& f, T lambda) {
  Graph<T> g;
  auto bound = bind(g, p);
  return static_cast<double>(ewc_loss(g, bound, f, lambda).value()[0]);
}

}  // namespace

TEST(TrainTask, ZeroLearningRateIsNoOp) {
  Reduced r;
  auto data = r.data("TDL-A", 6);
  auto p = r.model<float>();
  const auto before = p;
  auto cfg = quick(3);
  cfg.learning_rate = 0;
  train_task(p, data, cfg);
  EXPECT_TRUE(same_params(p, before));
}

TEST(TrainTask, SingleSampleOverfits) {
  Reduced r;
  auto data = r.data("TDL-A", 1);
  auto p = r.model<float>(3);
  auto cfg = quick(200, 1);
  cfg.verification = true;
  auto trace = train_task(p, data, cfg);
  ASSERT_EQ(trace.size(), 200u);
  EXPECT_LT(trace.back().loss, 0.01 * trace.front().loss);
}

TEST(TrainTask, DeterministicAndDecreasing) {
  Reduced r;
  auto data = r.data("TDL-D", 16);
  auto a = r.model<float>(), b = r.model<float>();
  auto ta = train_task(a, data, quick(8));
  auto tb = train_task(b, data, quick(8));
  EXPECT_TRUE(same_params(a, b));
  for (std::size_t e = 0; e < ta.size(); ++e) EXPECT_EQ(ta[e].loss, tb[e].loss);
  EXPECT_LE(ta.back().loss, ta.front().loss);
}

TEST(TrainTask, Errors) {
  Reduced r;
  auto p = r.model<float>();
  Dataset empty;
  EXPECT_THROW(train_task(p, empty, quick(1)), DataError);
  auto full = zero_params<float>(ModelGeometry{});
  EXPECT_THROW(train_task(full, r.data("TDL-A", 2), quick(1)), DataError);
  auto bad = r.data("TDL-A", 2);
  bad.samples[1].channel[0] = {NAN, 0};
  EXPECT_THROW(train_task(p, bad, quick(1)), NumericalError);
  auto cfg = quick(1);
  cfg.batch_size = 0;
  EXPECT_THROW(train_task(p, r.data("TDL-A", 2), cfg), UsageError);
}

TEST(Fisher, NonNegativeAndAnchored) {
  Reduced r;
  auto data = r.data("TDL-A", 12);
  auto p = r.model<float>();
  auto f = estimate_fisher(p, data, quick(1, 5));
  EXPECT_EQ(f.task, "I");
  f.validate_against(p);
  double total = 0;
  for (std::size_t i = 0; i < f.fisher.size(); ++i) {
    EXPECT_EQ(f.anchor[i], p.tensors[i].value);
    for (float v : f.fisher[i].data()) {
      EXPECT_GE(v, 0.0f);
      total += v;
    }
  }
  EXPECT_GT(total, 0.0);
}

TEST(Fisher, QuadraticToyMatchesHandComputation) {
  // With every weight zero the output is the deconvolution bias broadcast
  // over each plane, so only those two entries see a gradient:
  // dL/db_c = 2 sum_pixels (b_c - target_c).
  Reduced r;
  auto data = r.data("TDL-D", 5);
  auto p = zero_params<double>(r.geometry);
  p[Slot::us_deconv_b].value[0] = 0.3;
  p[Slot::us_deconv_b].value[1] = -0.2;
  auto cfg = quick(1, 2);
  auto f = estimate_fisher(p, data, cfg);

  double expected[2] = {0, 0};
  for (std::size_t start = 0; start < 5; start += 2) {
    const std::size_t stop = std::min<std::size_t>(5, start + 2);
    double g[2] = {0, 0};
    for (std::size_t s = start; s < stop; ++s)
      for (const auto& h : data.samples[s].channel) {
        g[0] += 2 * (0.3 - double(h.real()));
        g[1] += 2 * (-0.2 - double(h.imag()));
      }
    for (int c = 0; c < 2; ++c) expected[c] += std::pow(g[c] / double(stop - start), 2);
  }
  for (int c = 0; c < 2; ++c) EXPECT_NEAR(f.fisher[std::size_t(Slot::us_deconv_b)][c], expected[c] / 3, 1e-6 * expected[c]);
  for (std::size_t i = 0; i < slot_count; ++i)
    if (i != std::size_t(Slot::us_deconv_b)) {
      for (double v : f.fisher[i].data()) EXPECT_EQ(v, 0.0) << p.tensors[i].name;
    }
}

TEST(Fisher, InvariantToOrderWithinFixedBatches) {
  Reduced r;
  auto data = r.data("TDL-A", 12);
  auto p = r.model<double>();
  auto f = estimate_fisher(p, data, quick(1, 4));
  // Reverse batch order and shuffle inside each batch.
  Dataset permuted = data;
  permuted.samples.clear();
  for (int b = 2; b >= 0; --b)
    for (int i : {3, 1, 0, 2}) permuted.samples.push_back(data.samples[b * 4 + i]);
  auto g = estimate_fisher(p, permuted, quick(1, 4));
  for (std::size_t i = 0; i < slot_count; ++i)
    for (std::size_t k = 0; k < f.fisher[i].size(); ++k)
      ASSERT_NEAR(f.fisher[i][k], g.fisher[i][k], 1e-6 * std::max(1.0, f.fisher[i][k]));
}

TEST(Ewc, ZeroAtAnchorAndWithZeroFisher) {
  Reduced r;
  auto p = r.model<double>();
  auto f = zero_fisher(p);
  for (auto& t : f.fisher) t.fill(1.5);
  EXPECT_EQ(ewc_value(p, f, 10.0), 0.0);

  auto moved = r.model<double>(2);
  EXPECT_GT(ewc_value(moved, f, 10.0), 0.0);
  for (auto& t : f.fisher) t.fill(0.0);
  EXPECT_EQ(ewc_value(moved, f, 10.0), 0.0);
}

TEST(Ewc, ScalarCase) {
  Reduced r;
  auto p = zero_params<double>(r.geometry);
  auto f = zero_fisher(p);
  f.fisher[0][0] = 3.0;
  f.anchor[0][0] = 0.25;
  p.tensors[0].value[0] = 0.75;
  EXPECT_DOUBLE_EQ(ewc_value(p, f, 2.0), 0.75);
}

TEST(Ewc, ShapeMismatchRejected) {
  Reduced r;
  auto p = r.model<double>();
  auto f = zero_fisher(p);
  f.anchor[3] = Tensor<double>(Shape{5});
  EXPECT_THROW(ewc_value(p, f, 1.0), DataError);
}

TEST(Ewc, TotalLossGradientMatchesFiniteDifferences) {
  Reduced r;
  auto anchor = r.model<double>(4);
  std::mt19937_64 rng(4);
  auto f = zero_fisher(anchor);
  for (auto& t : f.fisher)
    for (auto& v : t.data()) v = std::uniform_real_distribution<double>(0, 2)(rng);
  const auto ff = [&] {
    FisherDiag<float> out;
    for (std::size_t i = 0; i < slot_count; ++i) {
      out.fisher.push_back(f.fisher[i].cast<float>());
      out.anchor.push_back(f.anchor[i].cast<float>());
    }
    return out;
  }();
  auto now = r.model<double>(5);
  std::vector<Tensor<double>> inputs;
  for (const auto& t : now.tensors) inputs.push_back(t.value);
  const auto x = oracle::random_tensor<double>({2, 4, 3}, rng);
  const auto target = oracle::random_tensor<double>({1, 2, 32, 14}, rng);
  const double lambda = 3.0, alpha = 0.7;

  auto build = [&](auto& g, const auto& v) {
    using T = typename std::decay_t<decltype(g)>::value_type;
    BoundParams<T> bound;
    for (std::size_t i = 0; i < slot_count; ++i) bound.vars[i] = v[i];
    auto out = reshape(forward(g.constant(x.cast<T>()), bound, r.geometry), Shape{1, 2, 32, 14});
    auto lh = mse_loss(out, g.constant(target.cast<T>()));
    const FisherDiag<T>* fd;
    if constexpr (std::is_same_v<T, double>)
      fd = &f;
    else
      fd = &ff;
    return add(lh, scale(ewc_loss(g, bound, *fd, static_cast<T>(lambda)), static_cast<T>(alpha)));
  };
  EXPECT_LT(gradcheck::gradient_error<double>(build, inputs, 1e-5), 1e-5);
}

TEST(TrainCl, ZeroLambdaIsBitIdenticalToPlainTraining) {
  Reduced r;
  auto task1 = r.data("TDL-A", 8, 1);
  auto task2 = r.data("TDL-D", 8, 2);
  auto start = r.model<float>();
  train_task(start, task1, quick(2));
  auto f = estimate_fisher(start, task1, quick(1));

  auto plain = start, cl = start;
  auto cfg = quick(3);
  train_task(plain, task2, cfg);
  cfg.lambda = 0;
  train_task_cl(cl, task2, f, cfg);
  EXPECT_TRUE(same_params(plain, cl));
}

TEST(TrainCl, ChainedWithZeroWeightsEqualsTwoPlainTrainings) {
  Reduced r;
  auto task1 = r.data("TDL-A", 8, 1);
  auto task2 = r.data("TDL-D", 8, 2);
  auto chained = r.model<float>(), sequential = r.model<float>();
  auto cfg = quick(2);
  cfg.lambda = 0;
  cfg.alpha = 0;

  train_task(chained, task1, cfg);
  auto f = estimate_fisher(chained, task1, cfg);
  train_task_cl(chained, task2, f, cfg);

  train_task(sequential, task1, cfg);
  train_task(sequential, task2, cfg);
  EXPECT_TRUE(same_params(chained, sequential));
}

TEST(TrainCl, HugeLambdaPinsHighFisherParameters) {
  Reduced r;
  auto task1 = r.data("TDL-A", 16, 1);
  auto task2 = r.data("TDL-D", 16, 2);
  auto p = r.model<float>();
  train_task(p, task1, quick(5));
  auto f = estimate_fisher(p, task1, quick(1));
  auto cfg = quick(5);
  cfg.lambda = 1e12;
  train_task_cl(p, task2, f, cfg);

  float fmax = 0;
  for (const auto& t : f.fisher)
    for (float v : t.data()) fmax = std::max(fmax, v);
  std::size_t checked = 0;
  double worst = 0;
  for (std::size_t i = 0; i < slot_count; ++i)
    for (std::size_t k = 0; k < f.fisher[i].size(); ++k)
      if (f.fisher[i][k] >= 1e-6f * fmax) {
        ++checked;
        worst = std::max(worst, double(std::abs(p.tensors[i].value[k] - f.anchor[i][k])));
      }
  EXPECT_GT(checked, 1000u);
  EXPECT_LT(worst, 1e-3);
}

TEST(Multitask, UnionWithItselfEqualsDoubledDataset) {
  Reduced r;
  auto data = r.data("TDL-A", 6);
  Dataset doubled = data;
  for (const auto& s : data.samples) doubled.append(s);
  auto a = r.model<float>(), b = r.model<float>();
  train_multitask(a, data, data, quick(2));
  train_task(b, doubled, quick(2));
  EXPECT_TRUE(same_params(a, b));
}

TEST(Multitask, EveryEpochVisitsBothTasksOnce) {
  for (std::size_t epoch = 0; epoch < 5; ++epoch) {
    auto order = detail::epoch_order(40, 3, epoch);
    std::vector<std::size_t> sorted = order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < 40; ++i) ASSERT_EQ(sorted[i], i);
    const auto first = std::count_if(order.begin(), order.end(), [](std::size_t i) { return i < 20; });
    EXPECT_EQ(first, 20);
  }
  EXPECT_NE(detail::epoch_order(40, 3, 0), detail::epoch_order(40, 3, 1));
}

TEST(Multitask, ShapeMismatchRejected) {
  Reduced r;
  auto a = r.data("TDL-A", 2);
  auto b = a;
  b.timeslots = 28;
  auto p = r.model<float>();
  EXPECT_THROW(train_multitask(p, a, b, quick(1)), DataError);
}

TEST(Clip, GlobalNormScaling) {
  Reduced r;
  auto p = zero_params<double>(r.geometry);
  p.tensors[0].grad[0] = 30;
  p.tensors[5].grad[0] = 40;
  EXPECT_DOUBLE_EQ(detail::clip_global_norm(p, 10.0), 50.0);
  EXPECT_DOUBLE_EQ(p.tensors[0].grad[0], 6.0);
  EXPECT_DOUBLE_EQ(p.tensors[5].grad[0], 8.0);
  EXPECT_DOUBLE_EQ(detail::clip_global_norm(p, 0.0), 10.0);
  EXPECT_DOUBLE_EQ(p.tensors[0].grad[0], 6.0);
}
