#pragma once

// Toy trainable encoders: a rectifier MLP for vector inputs and a
// permutation-invariant set encoder (shared per-point MLP, masked max
// pooling, head MLP) for point clouds. Templated on the scalar type so the
// same code runs in single or double precision.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "ctp/error.hpp"
#include "ctp/matrix.hpp"
#include "ctp/point_cloud.hpp"

namespace ctp {

template <typename T>
struct Layer {
  Matrix<T> weight;  // out x in
  std::vector<T> bias;

  std::size_t in_dim() const { return weight.cols(); }
  std::size_t out_dim() const { return weight.rows(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

/// Affine layers with a rectifier between them and a linear output.
template <typename T>
struct Mlp {
  std::vector<Layer<T>> layers;

  std::size_t in_dim() const { return layers.empty() ? 0 : layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.empty() ? 0 : layers.back().out_dim(); }

  void validate() const {
    require(!layers.empty(), Errc::invalid_argument, "mlp has no layers");
    for (std::size_t l = 0; l < layers.size(); ++l) {
      require(layers[l].bias.size() == layers[l].out_dim(), Errc::dimension_mismatch,
              "mlp layer " + std::to_string(l) + ": bias size mismatch");
      if (l > 0)
        require(layers[l].in_dim() == layers[l - 1].out_dim(), Errc::dimension_mismatch,
                "mlp layer " + std::to_string(l) + ": input does not chain");
    }
  }

  /// Same shapes, all zeros.
  Mlp zeros_like() const {
    Mlp z;
    for (const auto& l : layers)
      z.layers.push_back({Matrix<T>(l.out_dim(), l.in_dim()), std::vector<T>(l.out_dim())});
    return z;
  }

  friend bool operator==(const Mlp&, const Mlp&) = default;
};

/// Glorot-uniform weights in +-sqrt(6 / (fan_in + fan_out)), zero biases.
/// `sizes` lists every width from input to output.
template <typename T>
Mlp<T> init_mlp(const std::vector<std::size_t>& sizes, std::uint64_t seed) {
  require(sizes.size() >= 2, Errc::invalid_argument, "mlp needs at least input and output size");
  for (std::size_t s : sizes) require(s >= 1, Errc::invalid_argument, "mlp widths must be >= 1");
  std::mt19937_64 rng(seed);
  Mlp<T> mlp;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    Layer<T> layer{Matrix<T>(out, in), std::vector<T>(out, T{0})};
    for (T& w : layer.weight.flat()) w = static_cast<T>(dist(rng));
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

/// Activations kept from a forward pass for the backward pass.
template <typename T>
struct MlpTrace {
  std::vector<std::vector<T>> inputs;  // input to each layer (post-activation)
};

template <typename T>
std::vector<T> mlp_forward(const Mlp<T>& mlp, std::span<const std::type_identity_t<T>> x,
                           MlpTrace<T>* trace = nullptr) {
  require(!mlp.layers.empty(), Errc::invalid_argument, "mlp has no layers");
  require(x.size() == mlp.in_dim(), Errc::dimension_mismatch,
          "mlp input has dimension " + std::to_string(x.size()) + ", expected " +
              std::to_string(mlp.in_dim()));
  std::vector<T> cur(x.begin(), x.end());
  if (trace) trace->inputs.clear();
  for (std::size_t l = 0; l < mlp.layers.size(); ++l) {
    const auto& layer = mlp.layers[l];
    if (trace) trace->inputs.push_back(cur);
    std::vector<T> next(layer.out_dim());
    for (std::size_t o = 0; o < next.size(); ++o) {
      T acc = layer.bias[o];
      const auto w = layer.weight.row(o);
      for (std::size_t n = 0; n < cur.size(); ++n) acc += w[n] * cur[n];
      next[o] = acc;
    }
    if (l + 1 < mlp.layers.size())
      for (T& v : next) v = v > T{0} ? v : T{0};
    cur = std::move(next);
  }
  return cur;
}

/// Accumulates parameter gradients into `grads` (same shapes as `mlp`) and
/// optionally writes dL/dx into `d_input`.
template <typename T>
void mlp_backward(const Mlp<T>& mlp, const MlpTrace<T>& trace,
                  std::span<const std::type_identity_t<T>> d_out,
                  Mlp<T>& grads, std::vector<T>* d_input = nullptr) {
  std::vector<T> delta(d_out.begin(), d_out.end());
  for (std::size_t l = mlp.layers.size(); l-- > 0;) {
    const auto& layer = mlp.layers[l];
    auto& g = grads.layers[l];
    const auto& in = trace.inputs[l];
    for (std::size_t o = 0; o < delta.size(); ++o) {
      const T d = delta[o];
      if (d == T{0}) continue;
      g.bias[o] += d;
      auto gw = g.weight.row(o);
      for (std::size_t n = 0; n < in.size(); ++n) gw[n] += d * in[n];
    }
    if (l == 0 && !d_input) break;
    std::vector<T> prev(layer.in_dim(), T{0});
    for (std::size_t o = 0; o < delta.size(); ++o) {
      const T d = delta[o];
      if (d == T{0}) continue;
      const auto w = layer.weight.row(o);
      for (std::size_t n = 0; n < prev.size(); ++n) prev[n] += d * w[n];
    }
    if (l > 0) {
      // rectifier: the input to layer l is relu(pre-activation of layer l-1)
      for (std::size_t n = 0; n < prev.size(); ++n)
        if (!(in[n] > T{0})) prev[n] = T{0};
    } else {
      *d_input = std::move(prev);
      break;
    }
    delta = std::move(prev);
  }
}

template <typename T>
struct SetEncoder {
  Mlp<T> point_mlp;  // 3 -> pooled width
  Mlp<T> head;       // pooled width -> d

  void validate() const {
    point_mlp.validate();
    head.validate();
    require(point_mlp.in_dim() == 3, Errc::dimension_mismatch, "point mlp must take 3 inputs");
    require(head.in_dim() == point_mlp.out_dim(), Errc::dimension_mismatch,
            "head input must match pooled width");
  }
  SetEncoder zeros_like() const { return {point_mlp.zeros_like(), head.zeros_like()}; }
  friend bool operator==(const SetEncoder&, const SetEncoder&) = default;
};

template <typename T>
struct SetTrace {
  std::vector<MlpTrace<T>> point_traces;  // indexed by point row; empty for padding
  std::vector<std::size_t> argmax;        // pooled coordinate -> point row
  MlpTrace<T> head_trace;
};

/// Per-point MLP on valid rows, coordinate-wise max over valid rows, head MLP.
template <typename T>
std::vector<T> set_encode(const SetEncoder<T>& enc, const PointCloudSample& pc,
                          SetTrace<T>* trace = nullptr) {
  require(pc.points.cols() == 3 && pc.valid.size() == pc.points.rows(),
          Errc::dimension_mismatch, "malformed point cloud sample");
  const std::size_t width = enc.point_mlp.out_dim();
  std::vector<T> pooled(width);
  std::vector<std::size_t> argmax(width, pc.size());
  if (trace) {
    trace->point_traces.assign(pc.size(), {});
  }
  bool any = false;
  for (std::size_t r = 0; r < pc.size(); ++r) {
    if (!pc.valid[r]) continue;
    const T xyz[3] = {static_cast<T>(pc.points(r, 0)), static_cast<T>(pc.points(r, 1)),
                      static_cast<T>(pc.points(r, 2))};
    const auto h = mlp_forward(enc.point_mlp, std::span<const T>(xyz, 3),
                               trace ? &trace->point_traces[r] : nullptr);
    for (std::size_t c = 0; c < width; ++c) {
      if (!any || h[c] > pooled[c]) {
        pooled[c] = h[c];
        argmax[c] = r;
      }
    }
    any = true;
  }
  require(any, Errc::degenerate_input, "point cloud has no valid points");
  if (trace) trace->argmax = argmax;
  return mlp_forward(enc.head, std::span<const T>(pooled), trace ? &trace->head_trace : nullptr);
}

template <typename T>
void set_backward(const SetEncoder<T>& enc, const SetTrace<T>& trace,
                  std::span<const std::type_identity_t<T>> d_out,
                  SetEncoder<T>& grads) {
  std::vector<T> d_pooled;
  mlp_backward(enc.head, trace.head_trace, d_out, grads.head, &d_pooled);
  const std::size_t width = enc.point_mlp.out_dim();
  // Group pooled-coordinate gradients by the point that won the max.
  std::vector<std::vector<T>> per_point(trace.point_traces.size());
  for (std::size_t c = 0; c < width; ++c) {
    const std::size_t r = trace.argmax[c];
    if (per_point[r].empty()) per_point[r].assign(width, T{0});
    per_point[r][c] += d_pooled[c];
  }
  for (std::size_t r = 0; r < per_point.size(); ++r) {
    if (per_point[r].empty()) continue;
    mlp_backward(enc.point_mlp, trace.point_traces[r], std::span<const T>(per_point[r]),
                 grads.point_mlp);
  }
}

}  // namespace ctp
