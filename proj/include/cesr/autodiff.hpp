#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "cesr/error.hpp"
#include "cesr/tensor.hpp"

namespace cesr {

template <typename T>
class Graph;

/// Handle to a node of a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, std::size_t id) : graph_(graph), id_(id) {}

  const Tensor<T>& value() const { return graph_->value(id_); }
  const Shape& shape() const { return value().shape(); }
  Graph<T>& graph() const { return *graph_; }
  std::size_t id() const noexcept { return id_; }

 private:
  Graph<T>* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Tape for reverse-mode differentiation. Nodes are appended in creation
/// order, which is a topological order, so backward is a reverse sweep.
template <typename T>
class Graph {
 public:
  using value_type = T;
  using BackwardFn = std::function<void(Graph&, const Tensor<T>& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  Var<T> constant(Tensor<T> value) { return push(std::move(value), false, nullptr, {}); }

  /// Leaf whose gradient is kept and readable through grad().
  Var<T> input(Tensor<T> value) { return push(std::move(value), true, nullptr, {}); }

  /// Leaf bound to a Parameter; backward() accumulates into param.grad.
  Var<T> parameter(Parameter<T>& param) {
    if (param.grad.shape() != param.value.shape()) param.grad = Tensor<T>(param.value.shape());
    return push(param.value, true, &param, {});
  }

  /// Records an op result. `backward` runs only if some input requires grad.
  Var<T> record(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
    bool needs = false;
    for (const auto& v : inputs) needs = needs || nodes_[v.id()].requires_grad;
    return push(std::move(value), needs, nullptr, needs ? std::move(backward) : BackwardFn{});
  }

  const Tensor<T>& value(std::size_t id) const { return nodes_.at(id).value; }
  bool requires_grad(Var<T> v) const { return nodes_.at(v.id()).requires_grad; }
  std::size_t size() const noexcept { return nodes_.size(); }

  /// Gradient of the last backward() w.r.t. v (zeros if unreached).
  const Tensor<T>& grad(Var<T> v) {
    auto& node = nodes_.at(v.id());
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return node.grad;
  }

  /// Gradient buffer for accumulation from an op's backward; null when the
  /// input does not participate in differentiation.
  Tensor<T>* grad_sink(Var<T> v) {
    auto& node = nodes_[v.id()];
    if (!node.requires_grad) return nullptr;
    if (node.grad.empty()) node.grad = Tensor<T>(node.value.shape());
    return &node.grad;
  }

  /// Propagates d(seed * loss)/d(node) to every reachable node. Parameter
  /// gradients accumulate across calls; intermediate gradients are reset.
  void backward(Var<T> loss, T seed = T{1}) {
    if (loss.value().size() != 1)
      throw DataError("backward requires a scalar loss, got shape " + to_string(loss.shape()));
    for (auto& node : nodes_) node.grad = Tensor<T>();
    auto& root = nodes_[loss.id()];
    if (!root.requires_grad) return;
    root.grad = Tensor<T>(root.value.shape(), seed);
    for (std::size_t k = loss.id() + 1; k-- > 0;) {
      auto& node = nodes_[k];
      if (node.grad.empty()) continue;
      if (node.backward) node.backward(*this, node.grad);
      if (node.param) {
        auto dst = node.param->grad.data();
        auto src = node.grad.data();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
      }
    }
  }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool requires_grad = false;
    Parameter<T>* param = nullptr;
    BackwardFn backward;
  };

  Var<T> push(Tensor<T> value, bool requires_grad, Parameter<T>* param, BackwardFn backward) {
    nodes_.push_back(Node{std::move(value), Tensor<T>(), requires_grad, param, std::move(backward)});
    return Var<T>(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

enum class Pool { max, avg };

namespace detail {

inline void check_shape(bool ok, const std::string& op, const Shape& a, const Shape& b) {
  if (!ok) throw DataError(op + ": incompatible shapes " + to_string(a) + " and " + to_string(b));
}

template <typename T>
void add_into(Tensor<T>* dst, const Tensor<T>& src, T scale = T{1}) {
  if (!dst) return;
  auto d = dst->data();
  auto s = src.data();
  for (std::size_t i = 0; i < d.size(); ++i) d[i] += scale * s[i];
}

// im2col for stride-1 "same" zero padding. cols is [Cin*kH*kW, H*W].
template <typename T>
void im2col_same(const T* in, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                 T* cols) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (long ky = 0; ky < static_cast<long>(kh); ++ky)
      for (long kx = 0; kx < static_cast<long>(kw); ++kx, ++row) {
        T* dst = cols + row * h * w;
        for (long y = 0; y < H; ++y) {
          const long iy = y + ky - ph;
          for (long x = 0; x < W; ++x) {
            const long ix = x + kx - pw;
            dst[y * W + x] = (iy >= 0 && iy < H && ix >= 0 && ix < W) ? in[(c * h + iy) * w + ix] : T{0};
          }
        }
      }
}

template <typename T>
void col2im_same_add(const T* cols, std::size_t cin, std::size_t h, std::size_t w, std::size_t kh, std::size_t kw,
                     T* out) {
  const long ph = static_cast<long>(kh / 2), pw = static_cast<long>(kw / 2);
  const long H = static_cast<long>(h), W = static_cast<long>(w);
  std::size_t row = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (long ky = 0; ky < static_cast<long>(kh); ++ky)
      for (long kx = 0; kx < static_cast<long>(kw); ++kx, ++row) {
        const T* src = cols + row * h * w;
        for (long y = 0; y < H; ++y) {
          const long iy = y + ky - ph;
          if (iy < 0 || iy >= H) continue;
          for (long x = 0; x < W; ++x) {
            const long ix = x + kx - pw;
            if (ix >= 0 && ix < W) out[(c * h + iy) * w + ix] += src[y * W + x];
          }
        }
      }
}

// out[m][p] += sum_k a[m][k] * b[k][p]
template <typename T>
void gemm_nn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    T* o = out + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const T s = a[i * k + j];
      if (s == T{0}) continue;
      const T* bj = b + j * n;
      for (std::size_t p = 0; p < n; ++p) o[p] += s * bj[p];
    }
  }
}

// out[k][p] += sum_m a[m][k] * b[m][p]   (a transposed)
template <typename T>
void gemm_tn(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* bi = b + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const T s = a[i * k + j];
      if (s == T{0}) continue;
      T* o = out + j * n;
      for (std::size_t p = 0; p < n; ++p) o[p] += s * bi[p];
    }
  }
}

// out[m][k] += sum_p a[m][p] * b[k][p]   (b transposed)
template <typename T>
void gemm_nt(std::size_t m, std::size_t k, std::size_t n, const T* a, const T* b, T* out) {
  for (std::size_t i = 0; i < m; ++i) {
    const T* ai = a + i * n;
    for (std::size_t j = 0; j < k; ++j) {
      const T* bj = b + j * n;
      T acc{0};
      for (std::size_t p = 0; p < n; ++p) acc += ai[p] * bj[p];
      out[i * k + j] += acc;
    }
  }
}

}  // namespace detail

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  detail::check_shape(a.shape() == b.shape(), "add", a.shape(), b.shape());
  Tensor<T> out = a.value();
  detail::add_into(&out, b.value());
  return a.graph().record(std::move(out), {a, b}, [a, b](Graph<T>& g, const Tensor<T>& dout) {
    detail::add_into(g.grad_sink(a), dout);
    detail::add_into(g.grad_sink(b), dout);
  });
}

template <typename T>
Var<T> scale(Var<T> a, T factor) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= factor;
  return a.graph().record(std::move(out), {a}, [a, factor](Graph<T>& g, const Tensor<T>& dout) {
    detail::add_into(g.grad_sink(a), dout, factor);
  });
}

/// Elementwise product; b broadcasts along any axis where its size is 1.
template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  bool ok = sa.size() == sb.size();
  for (std::size_t i = 0; ok && i < sa.size(); ++i) ok = sb[i] == sa[i] || sb[i] == 1;
  detail::check_shape(ok, "mul", sa, sb);

  // Map each index of a to its broadcast index in b.
  auto index_map = std::make_shared<std::vector<std::size_t>>(numel(sa));
  {
    std::vector<std::size_t> strides(sb.size(), 1);
    for (std::size_t i = sb.size(); i-- > 1;) strides[i - 1] = strides[i] * sb[i];
    std::vector<std::size_t> idx(sa.size(), 0);
    for (std::size_t flat = 0; flat < index_map->size(); ++flat) {
      std::size_t off = 0;
      for (std::size_t d = 0; d < sa.size(); ++d) off += (sb[d] == 1 ? 0 : idx[d]) * strides[d];
      (*index_map)[flat] = off;
      for (std::size_t d = sa.size(); d-- > 0;) {
        if (++idx[d] < sa[d]) break;
        idx[d] = 0;
      }
    }
  }
  Tensor<T> out(sa);
  const auto& av = a.value();
  const auto& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[(*index_map)[i]];
  return a.graph().record(std::move(out), {a, b}, [a, b, index_map](Graph<T>& g, const Tensor<T>& dout) {
    const auto& av = a.value();
    const auto& bv = b.value();
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < dout.size(); ++i) (*ga)[i] += dout[i] * bv[(*index_map)[i]];
    if (auto* gb = g.grad_sink(b))
      for (std::size_t i = 0; i < dout.size(); ++i) (*gb)[(*index_map)[i]] += dout[i] * av[i];
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v > T{0} ? v : T{0};
  return x.graph().record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    const auto& xv = x.value();
    // Subgradient at exactly 0 is 0.
    for (std::size_t i = 0; i < dout.size(); ++i)
      if (xv[i] > T{0}) (*gx)[i] += dout[i];
  });
}

template <typename T>
Var<T> sigmoid(Var<T> x) {
  Tensor<T> out = x.value();
  for (auto& v : out.data()) v = v >= T{0} ? T{1} / (T{1} + std::exp(-v)) : std::exp(v) / (T{1} + std::exp(v));
  auto y = std::make_shared<Tensor<T>>(out);
  return x.graph().record(std::move(out), {x}, [x, y](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    for (std::size_t i = 0; i < dout.size(); ++i) (*gx)[i] += dout[i] * (*y)[i] * (T{1} - (*y)[i]);
  });
}

/// x[C,H,W] * gate[C] per channel.
template <typename T>
Var<T> scale_channels(Var<T> x, Var<T> gate) {
  const auto& sx = x.shape();
  detail::check_shape(sx.size() == 3 && gate.shape() == Shape{sx[0]}, "scale_channels", sx, gate.shape());
  const std::size_t plane = sx[1] * sx[2];
  Tensor<T> out = x.value();
  for (std::size_t c = 0; c < sx[0]; ++c)
    for (std::size_t p = 0; p < plane; ++p) out[c * plane + p] *= gate.value()[c];
  return x.graph().record(std::move(out), {x, gate}, [x, gate, plane](Graph<T>& g, const Tensor<T>& dout) {
    const std::size_t channels = gate.value().size();
    if (auto* gx = g.grad_sink(x))
      for (std::size_t c = 0; c < channels; ++c)
        for (std::size_t p = 0; p < plane; ++p) (*gx)[c * plane + p] += dout[c * plane + p] * gate.value()[c];
    if (auto* gg = g.grad_sink(gate))
      for (std::size_t c = 0; c < channels; ++c) {
        T acc{0};
        for (std::size_t p = 0; p < plane; ++p) acc += dout[c * plane + p] * x.value()[c * plane + p];
        (*gg)[c] += acc;
      }
  });
}

/// Reduces [C,H,W] over the spatial axes to [C]. Max routes its gradient to
/// the first maximal element in row-major order.
template <typename T>
Var<T> pool_spatial(Var<T> x, Pool kind) {
  const auto& sx = x.shape();
  detail::check_shape(sx.size() == 3, "pool_spatial", sx, sx);
  const std::size_t channels = sx[0], plane = sx[1] * sx[2];
  const auto& xv = x.value();
  Tensor<T> out(Shape{channels});
  auto argmax = std::make_shared<std::vector<std::size_t>>(channels, 0);
  for (std::size_t c = 0; c < channels; ++c) {
    const T* src = &xv[c * plane];
    if (kind == Pool::avg) {
      T acc{0};
      for (std::size_t p = 0; p < plane; ++p) acc += src[p];
      out[c] = acc / static_cast<T>(plane);
    } else {
      std::size_t best = 0;
      for (std::size_t p = 1; p < plane; ++p)
        if (src[p] > src[best]) best = p;
      (*argmax)[c] = c * plane + best;
      out[c] = src[best];
    }
  }
  return x.graph().record(std::move(out), {x}, [x, kind, plane, argmax](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    for (std::size_t c = 0; c < dout.size(); ++c) {
      if (kind == Pool::avg) {
        const T share = dout[c] / static_cast<T>(plane);
        for (std::size_t p = 0; p < plane; ++p) (*gx)[c * plane + p] += share;
      } else {
        (*gx)[(*argmax)[c]] += dout[c];
      }
    }
  });
}

/// Reduces [C,H,W] over channels to [1,H,W].
template <typename T>
Var<T> pool_channel(Var<T> x, Pool kind) {
  const auto& sx = x.shape();
  detail::check_shape(sx.size() == 3, "pool_channel", sx, sx);
  const std::size_t channels = sx[0], plane = sx[1] * sx[2];
  const auto& xv = x.value();
  Tensor<T> out(Shape{1, sx[1], sx[2]});
  auto argmax = std::make_shared<std::vector<std::size_t>>(plane, 0);
  for (std::size_t p = 0; p < plane; ++p) {
    if (kind == Pool::avg) {
      T acc{0};
      for (std::size_t c = 0; c < channels; ++c) acc += xv[c * plane + p];
      out[p] = acc / static_cast<T>(channels);
    } else {
      std::size_t best = p;
      for (std::size_t c = 1; c < channels; ++c)
        if (xv[c * plane + p] > xv[best]) best = c * plane + p;
      (*argmax)[p] = best;
      out[p] = xv[best];
    }
  }
  return x.graph().record(std::move(out), {x}, [x, kind, channels, argmax](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    const std::size_t plane = dout.size();
    for (std::size_t p = 0; p < plane; ++p) {
      if (kind == Pool::avg) {
        const T share = dout[p] / static_cast<T>(channels);
        for (std::size_t c = 0; c < channels; ++c) (*gx)[c * plane + p] += share;
      } else {
        (*gx)[(*argmax)[p]] += dout[p];
      }
    }
  });
}

/// Stacks [Ca,H,W] and [Cb,H,W] into [Ca+Cb,H,W].
template <typename T>
Var<T> concat_channels(Var<T> a, Var<T> b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  detail::check_shape(sa.size() == 3 && sb.size() == 3 && sa[1] == sb[1] && sa[2] == sb[2], "concat_channels",
                      sa, sb);
  std::vector<T> data(a.value().vector());
  data.insert(data.end(), b.value().vector().begin(), b.value().vector().end());
  Tensor<T> out(Shape{sa[0] + sb[0], sa[1], sa[2]}, std::move(data));
  const std::size_t split = a.value().size();
  return a.graph().record(std::move(out), {a, b}, [a, b, split](Graph<T>& g, const Tensor<T>& dout) {
    if (auto* ga = g.grad_sink(a))
      for (std::size_t i = 0; i < split; ++i) (*ga)[i] += dout[i];
    if (auto* gb = g.grad_sink(b))
      for (std::size_t i = split; i < dout.size(); ++i) (*gb)[i - split] += dout[i];
  });
}

/// Stride-1 cross-correlation with zero "same" padding.
/// x: [Cin,H,W], kernel: [Cout,Cin,kH,kW], bias: [Cout] -> [Cout,H,W].
template <typename T>
Var<T> conv2d(Var<T> x, Var<T> kernel, Var<T> bias) {
  const auto& sx = x.shape();
  const auto& sk = kernel.shape();
  detail::check_shape(sx.size() == 3 && sk.size() == 4 && sk[1] == sx[0], "conv2d", sx, sk);
  detail::check_shape(bias.shape() == Shape{sk[0]}, "conv2d bias", sk, bias.shape());
  if (sk[2] % 2 == 0 || sk[3] % 2 == 0) throw DataError("conv2d: kernel sizes must be odd, got " + to_string(sk));

  const std::size_t cin = sx[0], h = sx[1], w = sx[2], cout = sk[0], kh = sk[2], kw = sk[3];
  const std::size_t plane = h * w, rows = cin * kh * kw;
  auto cols = std::make_shared<std::vector<T>>(rows * plane);
  detail::im2col_same(x.value().data().data(), cin, h, w, kh, kw, cols->data());

  Tensor<T> out(Shape{cout, h, w});
  for (std::size_t c = 0; c < cout; ++c)
    std::fill_n(&out[c * plane], plane, bias.value()[c]);
  detail::gemm_nn(cout, rows, plane, kernel.value().data().data(), cols->data(), out.data().data());

  return x.graph().record(
      std::move(out), {x, kernel, bias},
      [x, kernel, bias, cols, cin, h, w, cout, kh, kw, plane, rows](Graph<T>& g, const Tensor<T>& dout) {
        const T* dy = dout.data().data();
        if (auto* gb = g.grad_sink(bias))
          for (std::size_t c = 0; c < cout; ++c) {
            T acc{0};
            for (std::size_t p = 0; p < plane; ++p) acc += dy[c * plane + p];
            (*gb)[c] += acc;
          }
        if (auto* gk = g.grad_sink(kernel)) detail::gemm_nt(cout, rows, plane, dy, cols->data(), gk->data().data());
        if (auto* gx = g.grad_sink(x)) {
          std::vector<T> dcols(rows * plane, T{0});
          detail::gemm_tn(cout, rows, plane, kernel.value().data().data(), dy, dcols.data());
          detail::col2im_same_add(dcols.data(), cin, h, w, kh, kw, gx->data().data());
        }
      });
}

/// Fractionally strided convolution (adjoint of a strided valid conv2d).
/// x: [Cin,h,w], kernel: [Cin,Cout,kH,kW], bias: [Cout]
/// -> [Cout, (h-1)*sH+kH, (w-1)*sW+kW].
template <typename T>
Var<T> conv2d_transpose(Var<T> x, Var<T> kernel, Var<T> bias, std::size_t stride_h, std::size_t stride_w) {
  const auto& sx = x.shape();
  const auto& sk = kernel.shape();
  detail::check_shape(sx.size() == 3 && sk.size() == 4 && sk[0] == sx[0], "conv2d_transpose", sx, sk);
  detail::check_shape(bias.shape() == Shape{sk[1]}, "conv2d_transpose bias", sk, bias.shape());
  if (stride_h == 0 || stride_w == 0) throw DataError("conv2d_transpose: stride must be >= 1");

  const std::size_t cin = sx[0], h = sx[1], w = sx[2], cout = sk[1], kh = sk[2], kw = sk[3];
  const std::size_t oh = (h - 1) * stride_h + kh, ow = (w - 1) * stride_w + kw;
  const std::size_t plane = h * w, rows = cout * kh * kw;

  // vals[(co,ky,kx)][(i,j)] = sum_ci K[ci][(co,ky,kx)] * x[ci][(i,j)]
  std::vector<T> vals(rows * plane, T{0});
  detail::gemm_tn(cin, rows, plane, kernel.value().data().data(), x.value().data().data(), vals.data());

  Tensor<T> out(Shape{cout, oh, ow});
  for (std::size_t c = 0; c < cout; ++c) std::fill_n(&out[c * oh * ow], oh * ow, bias.value()[c]);
  for (std::size_t co = 0; co < cout; ++co)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* src = &vals[((co * kh + ky) * kw + kx) * plane];
        for (std::size_t i = 0; i < h; ++i)
          for (std::size_t j = 0; j < w; ++j)
            out[(co * oh + i * stride_h + ky) * ow + j * stride_w + kx] += src[i * w + j];
      }

  return x.graph().record(
      std::move(out), {x, kernel, bias},
      [x, kernel, bias, cin, h, w, cout, kh, kw, oh, ow, plane, rows, stride_h, stride_w](
          Graph<T>& g, const Tensor<T>& dout) {
        if (auto* gb = g.grad_sink(bias))
          for (std::size_t c = 0; c < cout; ++c) {
            T acc{0};
            for (std::size_t p = 0; p < oh * ow; ++p) acc += dout[c * oh * ow + p];
            (*gb)[c] += acc;
          }
        auto* gk = g.grad_sink(kernel);
        auto* gx = g.grad_sink(x);
        if (!gk && !gx) return;
        std::vector<T> dvals(rows * plane);
        for (std::size_t co = 0; co < cout; ++co)
          for (std::size_t ky = 0; ky < kh; ++ky)
            for (std::size_t kx = 0; kx < kw; ++kx) {
              T* dst = &dvals[((co * kh + ky) * kw + kx) * plane];
              for (std::size_t i = 0; i < h; ++i)
                for (std::size_t j = 0; j < w; ++j)
                  dst[i * w + j] = dout[(co * oh + i * stride_h + ky) * ow + j * stride_w + kx];
            }
        if (gk) detail::gemm_nt(cin, rows, plane, x.value().data().data(), dvals.data(), gk->data().data());
        if (gx) detail::gemm_nn(cin, rows, plane, kernel.value().data().data(), dvals.data(), gx->data().data());
      });
}

/// Top-left crop of [C,H,W] to [C,h,w].
template <typename T>
Var<T> crop(Var<T> x, std::size_t height, std::size_t width) {
  const auto& sx = x.shape();
  if (sx.size() != 3 || height > sx[1] || width > sx[2] || height == 0 || width == 0)
    throw DataError("crop: target " + std::to_string(height) + "x" + std::to_string(width) + " exceeds " +
                    to_string(sx));
  const std::size_t channels = sx[0], in_h = sx[1], in_w = sx[2];
  Tensor<T> out(Shape{channels, height, width});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < height; ++y)
      for (std::size_t xx = 0; xx < width; ++xx) out.at(c, y, xx) = x.value().at(c, y, xx);
  return x.graph().record(std::move(out), {x}, [x, channels, in_h, in_w](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    const std::size_t height = dout.dim(1), width = dout.dim(2);
    for (std::size_t c = 0; c < channels; ++c)
      for (std::size_t y = 0; y < height; ++y)
        for (std::size_t xx = 0; xx < width; ++xx) (*gx)[(c * in_h + y) * in_w + xx] += dout.at(c, y, xx);
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Tensor<T> out = x.value().reshaped(std::move(shape));
  return x.graph().record(std::move(out), {x}, [x](Graph<T>& g, const Tensor<T>& dout) {
    detail::add_into(g.grad_sink(x), dout.reshaped(x.shape()));
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  T acc{0};
  for (T v : x.value().data()) acc += v;
  return x.graph().record(Tensor<T>(Shape{1}, acc), {x}, [x](Graph<T>& g, const Tensor<T>& dout) {
    auto* gx = g.grad_sink(x);
    for (auto& v : gx->data()) v += dout[0];
  });
}

/// Leading axis is the batch: sum of squared differences divided by dim(0).
template <typename T>
Var<T> mse_loss(Var<T> pred, Var<T> target) {
  detail::check_shape(pred.shape() == target.shape(), "mse_loss", pred.shape(), target.shape());
  const T inv_batch = T{1} / static_cast<T>(pred.shape()[0]);
  const auto& p = pred.value();
  const auto& t = target.value();
  T acc{0};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const T d = p[i] - t[i];
    acc += d * d;
  }
  return pred.graph().record(
      Tensor<T>(Shape{1}, acc * inv_batch), {pred, target}, [pred, target, inv_batch](Graph<T>& g, const Tensor<T>& dout) {
        const auto& p = pred.value();
        const auto& t = target.value();
        const T k = T{2} * inv_batch * dout[0];
        if (auto* gp = g.grad_sink(pred))
          for (std::size_t i = 0; i < p.size(); ++i) (*gp)[i] += k * (p[i] - t[i]);
        if (auto* gt = g.grad_sink(target))
          for (std::size_t i = 0; i < p.size(); ++i) (*gt)[i] -= k * (p[i] - t[i]);
      });
}

}  // namespace cesr
