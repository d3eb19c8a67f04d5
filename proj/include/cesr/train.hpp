#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cesr/adam.hpp"
#include "cesr/autodiff.hpp"
#include "cesr/dataset.hpp"
#include "cesr/error.hpp"
#include "cesr/model.hpp"
#include "cesr/rng.hpp"

namespace cesr {

struct TrainConfig {
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  double learning_rate = 1e-3;
  double lambda = 0.0;  // EWC importance
  double alpha = 1.0;   // EWC mixing weight
  std::uint64_t seed = 1;
  double clip_norm = 10.0;    // global-norm clip; <= 0 disables
  bool verification = false;  // disables clipping
  bool attention = true;

  void validate() const {
    if (batch_size == 0) throw UsageError("train: batch size must be >= 1");
    if (!(lambda >= 0) || !(alpha >= 0)) throw UsageError("train: lambda and alpha must be >= 0");
    if (!(learning_rate >= 0)) throw UsageError("train: learning rate must be >= 0");
  }
};

struct EpochLoss {
  std::size_t epoch = 0;
  double loss = 0.0;        // reconstruction loss
  double ewc_loss = 0.0;    // unweighted EWC penalty
  double total_loss = 0.0;  // loss + alpha * ewc_loss
};

/// Diagonal empirical Fisher and the parameters it was measured at.
template <typename T>
struct FisherDiag {
  std::string task;
  std::vector<Tensor<T>> fisher;
  std::vector<Tensor<T>> anchor;

  void validate_against(const ModelParams<T>& params) const {
    if (fisher.size() != params.tensors.size() || anchor.size() != params.tensors.size())
      throw DataError("fisher: parameter count does not match model");
    for (std::size_t i = 0; i < fisher.size(); ++i)
      if (fisher[i].shape() != params.tensors[i].value.shape() || anchor[i].shape() != params.tensors[i].value.shape())
        throw DataError("fisher: shape mismatch for '" + params.tensors[i].name + "'");
  }
};

namespace detail {

inline void check_dataset(const Dataset& data, const ModelGeometry& g) {
  if (data.empty()) throw DataError("training dataset is empty");
  if (data.pilot_rows != g.pilot_rows || data.pilot_cols != g.pilot_cols || data.subcarriers != g.out_rows ||
      data.timeslots != g.out_cols)
    throw DataError("dataset grid " + std::to_string(data.pilot_rows) + "x" + std::to_string(data.pilot_cols) + " -> " +
                    std::to_string(data.subcarriers) + "x" + std::to_string(data.timeslots) +
                    " does not match model geometry");
}

/// Adds d(weight * per-sample loss)/dTheta into the parameter gradients and
/// returns the per-sample loss sum_i (pred_i - target_i)^2.
template <typename T>
double accumulate_sample_gradient(ModelParams<T>& params, const Sample& s, T weight, ForwardOptions opts) {
  const auto& g = params.geometry;
  Graph<T> graph;
  auto bound = bind(graph, params);
  auto input = graph.constant(to_planes<T, float>(s.pilot_estimate, g.pilot_rows, g.pilot_cols));
  auto target = to_planes<T, float>(s.channel, g.out_rows, g.out_cols);
  auto pred = forward(input, bound, g, opts);
  auto loss = mse_loss(reshape(pred, Shape{1, 2, g.out_rows, g.out_cols}),
                       graph.constant(target.reshaped(Shape{1, 2, g.out_rows, g.out_cols})));
  const double value = static_cast<double>(loss.value()[0]);
  if (!std::isfinite(value)) throw NumericalError("non-finite reconstruction loss");
  graph.backward(loss, weight);
  return value;
}

template <typename T>
double clip_global_norm(ModelParams<T>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params.tensors)
    for (T v : p.grad.data()) sq += static_cast<double>(v) * static_cast<double>(v);
  const double norm = std::sqrt(sq);
  if (!std::isfinite(norm)) throw NumericalError("non-finite gradient norm");
  if (max_norm > 0 && norm > max_norm) {
    const T factor = static_cast<T>(max_norm / norm);
    for (auto& p : params.tensors)
      for (auto& v : p.grad.data()) v *= factor;
  }
  return norm;
}

inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(derive_seed(seed, {tag(SeedDomain::shuffle), epoch}));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

}  // namespace detail

/// sum_i (lambda/2) F_i (theta_i - anchor_i)^2 as a differentiable scalar.
template <typename T>
Var<T> ewc_loss(Graph<T>& graph, const BoundParams<T>& bound, const FisherDiag<T>& fisher, T lambda) {
  if (fisher.fisher.size() != slot_count || fisher.anchor.size() != slot_count)
    throw DataError("ewc_loss: fisher does not cover every parameter");
  double acc = 0.0;
  for (std::size_t i = 0; i < slot_count; ++i) {
    const auto& theta = bound.vars[i].value();
    if (theta.shape() != fisher.anchor[i].shape() || theta.shape() != fisher.fisher[i].shape())
      throw DataError("ewc_loss: shape mismatch with anchor at parameter " + std::to_string(i));
    for (std::size_t k = 0; k < theta.size(); ++k) {
      const double d = static_cast<double>(theta[k]) - static_cast<double>(fisher.anchor[i][k]);
      acc += static_cast<double>(fisher.fisher[i][k]) * d * d;
    }
  }
  const T value = static_cast<T>(0.5 * static_cast<double>(lambda) * acc);
  auto vars = bound.vars;
  // Not a registered op: gradient flows straight to each parameter leaf.
  Var<T> first = vars[0];
  Var<T> out = graph.record(Tensor<T>(Shape{1}, value), {first}, [vars, &fisher, lambda](Graph<T>& g, const Tensor<T>& dout) {
    for (std::size_t i = 0; i < slot_count; ++i) {
      auto* sink = g.grad_sink(vars[i]);
      if (!sink) continue;
      const auto& theta = vars[i].value();
      for (std::size_t k = 0; k < theta.size(); ++k)
        (*sink)[k] += dout[0] * lambda * fisher.fisher[i][k] * (theta[k] - fisher.anchor[i][k]);
    }
  });
  return out;
}

/// Mini-batch Adam on the reconstruction loss, optionally plus alpha * EWC.
/// Returns the per-epoch mean losses.
template <typename T>
std::vector<EpochLoss> train_loop(ModelParams<T>& params, const Dataset& data, const TrainConfig& cfg,
                                  const FisherDiag<T>* fisher) {
  cfg.validate();
  detail::check_dataset(data, params.geometry);
  if (fisher) fisher->validate_against(params);
  Adam<T> adam(AdamOptions{cfg.learning_rate});
  const ForwardOptions opts{cfg.attention};
  const double clip = cfg.verification ? 0.0 : cfg.clip_norm;

  std::vector<EpochLoss> trace;
  params.zero_grad();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = detail::epoch_order(data.size(), cfg.seed, epoch);
    EpochLoss rec;
    rec.epoch = epoch + 1;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const T weight = T{1} / static_cast<T>(stop - start);
      double batch_loss = 0.0;
      for (std::size_t i = start; i < stop; ++i)
        batch_loss += detail::accumulate_sample_gradient(params, data.samples[order[i]], weight, opts);
      batch_loss /= static_cast<double>(stop - start);

      // Only the data term is clipped; clipping the sum would let a stiff
      // penalty shrink every other update and loosen the anchor.
      detail::clip_global_norm(params, clip);

      double penalty = 0.0;
      if (fisher) {
        Graph<T> graph;
        auto bound = bind(graph, params);
        auto e = ewc_loss(graph, bound, *fisher, static_cast<T>(cfg.lambda));
        penalty = static_cast<double>(e.value()[0]);
        graph.backward(e, static_cast<T>(cfg.alpha));
      }
      const double total = batch_loss + cfg.alpha * penalty;
      if (!std::isfinite(total))
        throw NumericalError("non-finite loss at epoch " + std::to_string(epoch + 1) + ", batch " +
                             std::to_string(batches + 1));
      adam.step(params.tensors);

      rec.loss += batch_loss;
      rec.ewc_loss += penalty;
      rec.total_loss += total;
      ++batches;
    }
    rec.loss /= static_cast<double>(batches);
    rec.ewc_loss /= static_cast<double>(batches);
    rec.total_loss /= static_cast<double>(batches);
    trace.push_back(rec);
  }
  return trace;
}

template <typename T>
std::vector<EpochLoss> train_task(ModelParams<T>& params, const Dataset& data, const TrainConfig& cfg) {
  return train_loop<T>(params, data, cfg, nullptr);
}

/// Task-II training with the EWC penalty anchored at task I.
template <typename T>
std::vector<EpochLoss> train_task_cl(ModelParams<T>& params, const Dataset& data, const FisherDiag<T>& fisher,
                                     const TrainConfig& cfg) {
  return train_loop<T>(params, data, cfg, &fisher);
}

/// Plain training on the union of both datasets (shuffled every epoch).
template <typename T>
std::vector<EpochLoss> train_multitask(ModelParams<T>& params, const Dataset& first, const Dataset& second,
                                       const TrainConfig& cfg) {
  if (!first.same_shape(second)) throw DataError("multitask: datasets have different grid shapes");
  Dataset merged = first;
  merged.samples.insert(merged.samples.end(), second.samples.begin(), second.samples.end());
  return train_task(params, merged, cfg);
}

/// F_i = mean over batches of (dL_h/dTheta_i)^2, batches taken in dataset
/// order with the training batch size.
template <typename T>
FisherDiag<T> estimate_fisher(ModelParams<T>& params, const Dataset& data, const TrainConfig& cfg,
                              std::string task = "I") {
  cfg.validate();
  detail::check_dataset(data, params.geometry);
  const ForwardOptions opts{cfg.attention};
  FisherDiag<T> out;
  out.task = std::move(task);
  for (const auto& p : params.tensors) {
    out.fisher.emplace_back(p.value.shape());
    out.anchor.push_back(p.value);
  }
  std::size_t batches = 0;
  params.zero_grad();
  for (std::size_t start = 0; start < data.size(); start += cfg.batch_size) {
    const std::size_t stop = std::min(data.size(), start + cfg.batch_size);
    const T weight = T{1} / static_cast<T>(stop - start);
    for (std::size_t i = start; i < stop; ++i) detail::accumulate_sample_gradient(params, data.samples[i], weight, opts);
    for (std::size_t k = 0; k < params.tensors.size(); ++k) {
      auto grad = params.tensors[k].grad.data();
      auto f = out.fisher[k].data();
      for (std::size_t j = 0; j < f.size(); ++j) f[j] += grad[j] * grad[j];
    }
    params.zero_grad();
    ++batches;
  }
  for (auto& f : out.fisher)
    for (auto& v : f.data()) v /= static_cast<T>(batches);
  return out;
}

}  // namespace cesr
