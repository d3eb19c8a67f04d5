#pragma once

#include <array>
#include <cmath>
#include <complex>
#include <cstddef>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cesr/autodiff.hpp"
#include "cesr/channel.hpp"
#include "cesr/error.hpp"
#include "cesr/rng.hpp"
#include "cesr/tensor.hpp"

namespace cesr {

/// Spatial geometry of the super-resolution mapping: pilot grid in,
/// full grid out, with a deconvolution of the given kernel and stride.
struct ModelGeometry {
  std::size_t pilot_rows = 15;
  std::size_t pilot_cols = 6;
  std::size_t out_rows = 128;
  std::size_t out_cols = 28;
  std::size_t stride_rows = 9;
  std::size_t stride_cols = 5;
  std::size_t kernel_rows = 9;
  std::size_t kernel_cols = 5;

  /// Kernel equals the pilot interval; the lattice must be uniform.
  static ModelGeometry from(const OfdmConfig& cfg, const PilotPattern& pattern) {
    pattern.validate(cfg);
    auto interval = [](const std::vector<std::size_t>& idx) -> std::size_t {
      if (idx.size() < 2) return 1;
      const std::size_t step = idx[1] - idx[0];
      for (std::size_t i = 1; i < idx.size(); ++i)
        if (idx[i] - idx[i - 1] != step) throw DataError("model geometry requires a uniform pilot lattice");
      return step;
    };
    ModelGeometry g;
    g.pilot_rows = pattern.rows();
    g.pilot_cols = pattern.cols();
    g.out_rows = cfg.subcarriers;
    g.out_cols = cfg.timeslots;
    g.stride_rows = g.kernel_rows = interval(pattern.freq);
    g.stride_cols = g.kernel_cols = interval(pattern.time);
    g.validate();
    return g;
  }

  std::size_t upsampled_rows() const { return (pilot_rows - 1) * stride_rows + kernel_rows; }
  std::size_t upsampled_cols() const { return (pilot_cols - 1) * stride_cols + kernel_cols; }

  void validate() const {
    if (pilot_rows == 0 || pilot_cols == 0 || out_rows == 0 || out_cols == 0 || stride_rows == 0 ||
        stride_cols == 0 || kernel_rows == 0 || kernel_cols == 0)
      throw DataError("model geometry: all sizes must be positive");
    if (upsampled_rows() < out_rows || upsampled_cols() < out_cols)
      throw DataError("model geometry: target " + std::to_string(out_rows) + "x" + std::to_string(out_cols) +
                      " exceeds upsampled size " + std::to_string(upsampled_rows()) + "x" +
                      std::to_string(upsampled_cols()));
  }

  friend bool operator==(const ModelGeometry&, const ModelGeometry&) = default;
};

/// Parameter order; also the index order of Fisher entries.
enum class Slot : std::size_t {
  ca_conv1_w, ca_conv1_b,
  ca_conv2_w, ca_conv2_b,
  sa_conv_w, sa_conv_b,
  fe_conv1_w, fe_conv1_b,
  fe_conv2_w, fe_conv2_b,
  fe_conv3_w, fe_conv3_b,
  fe_conv4_w, fe_conv4_b,
  us_deconv_w, us_deconv_b,
  count
};

inline constexpr std::size_t slot_count = static_cast<std::size_t>(Slot::count);

struct ParamSpec {
  std::string name;
  Shape shape;
};

inline std::vector<ParamSpec> param_specs(const ModelGeometry& g) {
  return {
      {"ca_conv1.weight", {16, 2, 3, 3}},  {"ca_conv1.bias", {16}},
      {"ca_conv2.weight", {2, 16, 3, 3}},  {"ca_conv2.bias", {2}},
      {"sa_conv.weight", {1, 2, 7, 7}},    {"sa_conv.bias", {1}},
      {"fe_conv1.weight", {32, 2, 5, 5}},  {"fe_conv1.bias", {32}},
      {"fe_conv2.weight", {16, 32, 1, 1}}, {"fe_conv2.bias", {16}},
      {"fe_conv3.weight", {16, 16, 3, 3}}, {"fe_conv3.bias", {16}},
      {"fe_conv4.weight", {32, 16, 1, 1}}, {"fe_conv4.bias", {32}},
      {"us_deconv.weight", {32, 2, g.kernel_rows, g.kernel_cols}}, {"us_deconv.bias", {2}},
  };
}

template <typename T>
struct ModelParams {
  ModelGeometry geometry;
  std::vector<Parameter<T>> tensors;

  Parameter<T>& operator[](Slot s) { return tensors[static_cast<std::size_t>(s)]; }
  const Parameter<T>& operator[](Slot s) const { return tensors[static_cast<std::size_t>(s)]; }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : tensors) n += p.value.size();
    return n;
  }

  void zero_grad() {
    for (auto& p : tensors) p.zero_grad();
  }

  /// Every parameter name and shape matches the geometry's layout.
  void validate() const {
    const auto specs = param_specs(geometry);
    if (tensors.size() != specs.size()) throw DataError("model: wrong number of parameter tensors");
    for (std::size_t i = 0; i < specs.size(); ++i) {
      if (tensors[i].name != specs[i].name || tensors[i].value.shape() != specs[i].shape)
        throw DataError("model: parameter " + std::to_string(i) + " is '" + tensors[i].name + "' " +
                        to_string(tensors[i].value.shape()) + ", expected '" + specs[i].name + "' " +
                        to_string(specs[i].shape));
      if (!tensors[i].value.all_finite()) throw NumericalError("model: parameter '" + specs[i].name + "' not finite");
    }
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    out.geometry = geometry;
    for (const auto& p : tensors) out.tensors.emplace_back(p.name, p.value.template cast<U>());
    return out;
  }
};

template <typename T>
ModelParams<T> zero_params(const ModelGeometry& geometry) {
  geometry.validate();
  ModelParams<T> params;
  params.geometry = geometry;
  for (auto& spec : param_specs(geometry)) params.tensors.emplace_back(spec.name, Tensor<T>(spec.shape));
  return params;
}

/// Fan-in of one output element. For the deconvolution each output receives
/// Cin * ceil(kH/sH) * ceil(kW/sW) products.
inline std::size_t fan_in(const ParamSpec& spec, const ModelGeometry& g) {
  const auto& s = spec.shape;
  if (spec.name == "us_deconv.weight") {
    const std::size_t oh = (g.kernel_rows + g.stride_rows - 1) / g.stride_rows;
    const std::size_t ow = (g.kernel_cols + g.stride_cols - 1) / g.stride_cols;
    return s[0] * oh * ow;
  }
  return s[1] * s[2] * s[3];
}

/// He-scaled uniform weights (variance 2/fan_in), zero biases.
template <typename T>
ModelParams<T> init_params(const ModelGeometry& geometry, Rng& rng) {
  ModelParams<T> params = zero_params<T>(geometry);
  const auto specs = param_specs(geometry);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    if (specs[i].shape.size() != 4) continue;
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in(specs[i], geometry)));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : params.tensors[i].value.data()) v = static_cast<T>(u(rng));
  }
  return params;
}

/// Graph leaves for every parameter of one forward pass.
template <typename T>
struct BoundParams {
  std::array<Var<T>, slot_count> vars;
  Var<T> operator[](Slot s) const { return vars[static_cast<std::size_t>(s)]; }
};

/// Parameters become differentiable leaves when `trainable`, constants otherwise.
template <typename T>
BoundParams<T> bind(Graph<T>& g, ModelParams<T>& params, bool trainable = true) {
  BoundParams<T> b;
  for (std::size_t i = 0; i < slot_count; ++i)
    b.vars[i] = trainable ? g.parameter(params.tensors[i]) : g.constant(params.tensors[i].value);
  return b;
}

namespace detail {
template <typename T>
void expect_planes(Var<T> x, std::size_t channels, const char* stage) {
  const auto& s = x.shape();
  if (s.size() != 3 || s[0] != channels)
    throw DataError(std::string(stage) + ": expected [" + std::to_string(channels) + ",h,w] input, got " +
                    to_string(s));
}
}  // namespace detail

/// Per-plane gate g = sigmoid(avgpool(conv2(relu(conv1(x))))), output g_c * x_c.
template <typename T>
Var<T> channel_attention(Var<T> x, const BoundParams<T>& p) {
  detail::expect_planes(x, 2, "channel_attention");
  auto m = conv2d(relu(conv2d(x, p[Slot::ca_conv1_w], p[Slot::ca_conv1_b])), p[Slot::ca_conv2_w],
                  p[Slot::ca_conv2_b]);
  auto gate = sigmoid(pool_spatial(m, Pool::avg));
  return scale_channels(x, gate);
}

/// Location gate s = sigmoid(conv7x7([maxpool_c(x); avgpool_c(x)])), output x * s.
template <typename T>
Var<T> spatial_attention(Var<T> x, const BoundParams<T>& p) {
  detail::expect_planes(x, 2, "spatial_attention");
  auto pooled = concat_channels(pool_channel(x, Pool::max), pool_channel(x, Pool::avg));
  auto s = sigmoid(conv2d(pooled, p[Slot::sa_conv_w], p[Slot::sa_conv_b]));
  return mul(x, s);
}

template <typename T>
Var<T> feature_extract(Var<T> x, const BoundParams<T>& p) {
  detail::expect_planes(x, 2, "feature_extract");
  auto a = relu(conv2d(x, p[Slot::fe_conv1_w], p[Slot::fe_conv1_b]));
  auto b = relu(conv2d(a, p[Slot::fe_conv2_w], p[Slot::fe_conv2_b]));
  auto c = relu(conv2d(b, p[Slot::fe_conv3_w], p[Slot::fe_conv3_b]));
  auto d = conv2d(c, p[Slot::fe_conv4_w], p[Slot::fe_conv4_b]);
  return relu(add(a, d));
}

template <typename T>
Var<T> upsample(Var<T> x, const BoundParams<T>& p, const ModelGeometry& g) {
  detail::expect_planes(x, 32, "upsample");
  auto y = conv2d_transpose(x, p[Slot::us_deconv_w], p[Slot::us_deconv_b], g.stride_rows, g.stride_cols);
  return crop(y, g.out_rows, g.out_cols);
}

struct ForwardOptions {
  bool attention = true;  // false bypasses both attention stages (ablation)
};

/// [2, pilot_rows, pilot_cols] -> [2, out_rows, out_cols]; plane 0 real, plane 1 imaginary.
template <typename T>
Var<T> forward(Var<T> input, const BoundParams<T>& p, const ModelGeometry& g, ForwardOptions opts = {}) {
  const auto& s = input.shape();
  if (s != Shape{2, g.pilot_rows, g.pilot_cols})
    throw DataError("forward: input " + to_string(s) + " does not match geometry [2," + std::to_string(g.pilot_rows) +
                    "," + std::to_string(g.pilot_cols) + "]");
  auto x = input;
  if (opts.attention) x = spatial_attention(channel_attention(x, p), p);
  return upsample(feature_extract(x, p), p, g);
}

/// Inference without gradient tracking.
template <typename T>
Tensor<T> predict(ModelParams<T>& params, const Tensor<T>& input, ForwardOptions opts = {}) {
  Graph<T> g;
  auto bound = bind(g, params, false);
  return forward(g.constant(input), bound, params.geometry, opts).value();
}

/// Complex grid -> [2,rows,cols] planes.
template <typename T, typename C>
Tensor<T> to_planes(std::span<const std::complex<C>> values, std::size_t rows, std::size_t cols) {
  if (values.size() != rows * cols) throw DataError("to_planes: size mismatch");
  Tensor<T> out(Shape{2, rows, cols});
  const std::size_t plane = rows * cols;
  for (std::size_t i = 0; i < plane; ++i) {
    out[i] = static_cast<T>(values[i].real());
    out[plane + i] = static_cast<T>(values[i].imag());
  }
  return out;
}

template <typename T>
ComplexGrid from_planes(const Tensor<T>& planes) {
  if (planes.rank() != 3 || planes.dim(0) != 2) throw DataError("from_planes: expected [2,h,w]");
  ComplexGrid out(planes.dim(1), planes.dim(2));
  const std::size_t plane = out.size();
  for (std::size_t i = 0; i < plane; ++i)
    out.data[i] = {static_cast<double>(planes[i]), static_cast<double>(planes[plane + i])};
  return out;
}

}  // namespace cesr
