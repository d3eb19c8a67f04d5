// Finite-difference gradient checking for graph-built scalar functions.
#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "cesr/autodiff.hpp"
#include "oracles.hpp"

namespace gradcheck {

using cesr::Graph;
using cesr::Shape;
using cesr::Tensor;
using cesr::Var;

/// Reduces v to a scalar with fixed pseudo-random weights so every output
/// element contributes a distinct amount.
template <typename T>
Var<T> probe(Var<T> v, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  auto w = oracle::random_tensor<T>(v.shape(), rng, 0.5, 1.5);
  return cesr::sum(cesr::mul(v, v.graph().constant(std::move(w))));
}

inline std::vector<double> flatten(const std::vector<Tensor<double>>& ts) {
  std::vector<double> flat;
  for (const auto& t : ts) flat.insert(flat.end(), t.data().begin(), t.data().end());
  return flat;
}

inline std::vector<Tensor<double>> unflatten(const std::vector<double>& flat, const std::vector<Tensor<double>>& like) {
  std::vector<Tensor<double>> out;
  std::size_t pos = 0;
  for (const auto& t : like) {
    std::vector<double> d(flat.begin() + pos, flat.begin() + pos + t.size());
    pos += t.size();
    out.emplace_back(t.shape(), std::move(d));
  }
  return out;
}

/// Analytic gradient in precision T of `build(graph, leaves)` w.r.t. every
/// input, versus central differences of the same function in double.
template <typename T, typename Build>
double gradient_error(Build build, const std::vector<Tensor<double>>& inputs, double step = 1e-3) {
  std::vector<double> analytic;
  {
    Graph<T> g;
    std::vector<Var<T>> leaves;
    for (const auto& t : inputs) leaves.push_back(g.input(t.template cast<T>()));
    auto loss = build(g, leaves);
    g.backward(loss);
    for (const auto& v : leaves)
      for (T x : g.grad(v).data()) analytic.push_back(static_cast<double>(x));
  }
  auto f = [&](const std::vector<double>& flat) {
    Graph<double> g;
    std::vector<Var<double>> leaves;
    for (auto& t : unflatten(flat, inputs)) leaves.push_back(g.input(std::move(t)));
    return build(g, leaves).value()[0];
  };
  auto numeric = oracle::finite_difference(f, flatten(inputs), step);
  return oracle::relative_error(analytic, numeric);
}

}  // namespace gradcheck
