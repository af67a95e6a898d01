#pragma once

// The three encoders plus the learnable log logit scale, batched encoding of
// triplet records, and end-to-end loss gradients with respect to every
// encoder parameter.

#include <cstddef>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "ctp/dataset.hpp"
#include "ctp/diff.hpp"
#include "ctp/encoders.hpp"
#include "ctp/loss.hpp"
#include "ctp/point_cloud.hpp"
#include "ctp/similarity.hpp"

namespace ctp {

struct EncoderConfig {
  std::size_t text_in = 32;
  std::size_t image_in = 32;
  std::size_t embed_dim = 32;
  std::vector<std::size_t> text_hidden{64};
  std::vector<std::size_t> image_hidden{64};
  std::vector<std::size_t> point_widths{32, 48};  // per-point MLP widths after the 3 inputs
  std::vector<std::size_t> head_hidden{64};
  std::size_t n_points = 32;                       // pad / downsample target
  std::size_t fps_start = 0;

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

template <typename T>
struct EncoderParams {
  Mlp<T> text;
  Mlp<T> image;
  SetEncoder<T> point;
  T log_scale = static_cast<T>(kInitLogScale);

  EncoderParams zeros_like() const {
    return {text.zeros_like(), image.zeros_like(), point.zeros_like(), T{0}};
  }
  void validate() const {
    text.validate();
    image.validate();
    point.validate();
    require(text.out_dim() == image.out_dim() && text.out_dim() == point.head.out_dim(),
            Errc::dimension_mismatch, "encoders must share the embedding dimension");
  }
  std::size_t embed_dim() const { return text.out_dim(); }

  template <typename U>
  EncoderParams<U> cast() const {
    auto mlp = [](const Mlp<T>& m) {
      Mlp<U> out;
      for (const auto& l : m.layers) {
        Layer<U> nl{l.weight.template cast<U>(), {}};
        for (T x : l.bias) nl.bias.push_back(static_cast<U>(x));
        out.layers.push_back(std::move(nl));
      }
      return out;
    };
    return {mlp(text), mlp(image), {mlp(point.point_mlp), mlp(point.head)},
            static_cast<U>(log_scale)};
  }

  friend bool operator==(const EncoderParams&, const EncoderParams&) = default;
};

/// Which encoders are held fixed during training.
struct FreezeSet {
  bool text = false;
  bool image = false;
  bool point = false;

  bool frozen(Modality m) const {
    return m == Modality::text ? text : m == Modality::image ? image : point;
  }
  friend bool operator==(const FreezeSet&, const FreezeSet&) = default;
};

/// Visits every parameter block as (name, modality-or-none, span) in a fixed
/// order. The log scale is reported with `is_scale = true`.
template <typename P, typename Fn>
void for_each_param(P& params, Fn&& fn) {
  auto mlp = [&](auto& m, const std::string& prefix, Modality mod) {
    for (std::size_t l = 0; l < m.layers.size(); ++l) {
      fn(prefix + "." + std::to_string(l) + ".weight", mod, false, m.layers[l].weight.flat());
      fn(prefix + "." + std::to_string(l) + ".bias", mod, false, std::span(m.layers[l].bias));
    }
  };
  mlp(params.text, "text", Modality::text);
  mlp(params.image, "image", Modality::image);
  mlp(params.point.point_mlp, "point.point_mlp", Modality::point);
  mlp(params.point.head, "point.head", Modality::point);
  fn(std::string("log_scale"), Modality::text, true, std::span(&params.log_scale, 1));
}

/// Name -> flattened values, in visit order.
template <typename T>
std::map<std::string, std::vector<T>> parameter_map(const EncoderParams<T>& p) {
  std::map<std::string, std::vector<T>> out;
  for_each_param(p, [&](const std::string& name, Modality, bool, auto values) {
    out[name] = std::vector<T>(values.begin(), values.end());
  });
  return out;
}

template <typename T>
EncoderParams<T> init_encoders(const EncoderConfig& cfg, std::uint64_t seed) {
  auto widths = [](std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
  };
  require(!cfg.point_widths.empty(), Errc::invalid_argument, "point mlp needs widths");
  std::vector<std::size_t> point_sizes{3};
  point_sizes.insert(point_sizes.end(), cfg.point_widths.begin(), cfg.point_widths.end());
  EncoderParams<T> p;
  // Distinct, seed-derived streams per encoder.
  p.text = init_mlp<T>(widths(cfg.text_in, cfg.text_hidden, cfg.embed_dim), seed * 4 + 1);
  p.image = init_mlp<T>(widths(cfg.image_in, cfg.image_hidden, cfg.embed_dim), seed * 4 + 2);
  p.point.point_mlp = init_mlp<T>(point_sizes, seed * 4 + 3);
  p.point.head = init_mlp<T>(widths(cfg.point_widths.back(), cfg.head_hidden, cfg.embed_dim),
                             seed * 4 + 4);
  p.log_scale = static_cast<T>(kInitLogScale);
  p.validate();
  return p;
}

/// Raw encoder inputs for one batch; row r of each field is record r.
struct BatchInputs {
  Matrix<double> text;
  Matrix<double> image;
  std::vector<PointCloudSample> points;

  std::size_t size() const { return text.rows(); }
};

inline BatchInputs prepare_batch(std::span<const TripletRecord> records, const EncoderConfig& cfg) {
  require(!records.empty(), Errc::invalid_argument, "empty batch");
  const std::size_t b = records.size();
  BatchInputs in{Matrix<double>(b, cfg.text_in), Matrix<double>(b, cfg.image_in), {}};
  in.points.reserve(b);
  for (std::size_t r = 0; r < b; ++r) {
    const auto& rec = records[r];
    require(rec.text_vec.size() == cfg.text_in, Errc::dimension_mismatch,
            rec.id + ": text_vec has " + std::to_string(rec.text_vec.size()) +
                " entries, encoder expects " + std::to_string(cfg.text_in));
    require(rec.image_vec.size() == cfg.image_in, Errc::dimension_mismatch,
            rec.id + ": image_vec has " + std::to_string(rec.image_vec.size()) +
                " entries, encoder expects " + std::to_string(cfg.image_in));
    std::copy(rec.text_vec.begin(), rec.text_vec.end(), in.text.row(r).begin());
    std::copy(rec.image_vec.begin(), rec.image_vec.end(), in.image.row(r).begin());
    in.points.push_back(pad_or_sample(rec.points, cfg.n_points,
                                      std::min(cfg.fps_start, rec.points.size() - 1)));
  }
  return in;
}

inline BatchInputs prepare_batch(const std::vector<TripletRecord>& all,
                                 std::span<const std::size_t> indices, const EncoderConfig& cfg) {
  std::vector<TripletRecord> picked;
  picked.reserve(indices.size());
  for (std::size_t n : indices) picked.push_back(all.at(n));
  return prepare_batch(std::span<const TripletRecord>(picked), cfg);
}

/// Unnormalized encoder outputs for a batch (double precision).
struct RawFeatures {
  Matrix<double> text, image, point;
};

template <typename T>
std::vector<double> to_double(const std::vector<T>& v) {
  return std::vector<double>(v.begin(), v.end());
}

template <typename T>
std::vector<T> row_as(std::span<const double> r) {
  return std::vector<T>(r.begin(), r.end());
}

template <typename T>
RawFeatures encode_raw(const EncoderParams<T>& params, const BatchInputs& in) {
  const std::size_t b = in.size(), d = params.embed_dim();
  RawFeatures f{Matrix<double>(b, d), Matrix<double>(b, d), Matrix<double>(b, d)};
  parallel_for(b, [&](std::size_t r) {
    const auto t = to_double(mlp_forward(params.text, row_as<T>(in.text.row(r))));
    const auto i = to_double(mlp_forward(params.image, row_as<T>(in.image.row(r))));
    const auto p = to_double(set_encode(params.point, in.points[r]));
    std::copy(t.begin(), t.end(), f.text.row(r).begin());
    std::copy(i.begin(), i.end(), f.image.row(r).begin());
    std::copy(p.begin(), p.end(), f.point.row(r).begin());
  });
  return f;
}

struct EncodedBatch {
  FeatureBatch text, image, point;
};

/// Forward passes for every modality followed by row normalization.
template <typename T>
EncodedBatch encode_batch(const EncoderParams<T>& params, const BatchInputs& in) {
  const auto raw = encode_raw(params, in);
  return {FeatureBatch::unit(raw.text, Modality::text),
          FeatureBatch::unit(raw.image, Modality::image),
          FeatureBatch::unit(raw.point, Modality::point)};
}

template <typename T>
EncodedBatch encode_batch(const EncoderParams<T>& params,
                          std::span<const TripletRecord> records, const EncoderConfig& cfg) {
  return encode_batch(params, prepare_batch(records, cfg));
}

template <typename T>
struct ModelGradient {
  LossBreakdown breakdown;
  EncoderParams<T> grads;

  double loss() const { return breakdown.total; }
};

/// Loss of a batch and its gradient with respect to every encoder parameter
/// and the log scale. Frozen encoders get zero gradients and are not
/// back-propagated through.
template <typename T>
ModelGradient<T> model_loss_grad(const LossSpec& spec, const EncoderParams<T>& params,
                                 const BatchInputs& in, const FreezeSet& freeze = {}) {
  const std::size_t b = in.size(), d = params.embed_dim();
  std::vector<MlpTrace<T>> tt(b), it(b);
  std::vector<SetTrace<T>> pt(b);
  RawFeatures f{Matrix<double>(b, d), Matrix<double>(b, d), Matrix<double>(b, d)};
  for (std::size_t r = 0; r < b; ++r) {
    const auto t = to_double(mlp_forward(params.text, row_as<T>(in.text.row(r)), &tt[r]));
    const auto i = to_double(mlp_forward(params.image, row_as<T>(in.image.row(r)), &it[r]));
    const auto p = to_double(set_encode(params.point, in.points[r], &pt[r]));
    std::copy(t.begin(), t.end(), f.text.row(r).begin());
    std::copy(i.begin(), i.end(), f.image.row(r).begin());
    std::copy(p.begin(), p.end(), f.point.row(r).begin());
  }
  const auto fg = feature_loss_grad(spec, f.text, f.image, f.point,
                                    static_cast<double>(params.log_scale));
  ModelGradient<T> out{fg.breakdown, params.zeros_like()};
  for (std::size_t r = 0; r < b; ++r) {
    if (!freeze.text)
      mlp_backward(params.text, tt[r], std::span<const T>(row_as<T>(fg.d_text.row(r))),
                   out.grads.text);
    if (!freeze.image)
      mlp_backward(params.image, it[r], std::span<const T>(row_as<T>(fg.d_image.row(r))),
                   out.grads.image);
    if (!freeze.point)
      set_backward(params.point, pt[r], std::span<const T>(row_as<T>(fg.d_point.row(r))),
                   out.grads.point);
  }
  out.grads.log_scale = static_cast<T>(fg.d_log_scale);
  return out;
}

/// Loss only, same path as model_loss_grad's forward.
template <typename T>
double model_loss(const LossSpec& spec, const EncoderParams<T>& params, const BatchInputs& in) {
  const auto raw = encode_raw(params, in);
  return feature_loss(spec, raw.text, raw.image, raw.point, static_cast<double>(params.log_scale));
}

}  // namespace ctp
