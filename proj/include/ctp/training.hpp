#pragma once

// AdamW with decoupled weight decay, linear-warmup-then-constant learning
// rate, checkpoints, and the training loop shared by every loss variant.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctp/dataset.hpp"
#include "ctp/diff.hpp"
#include "ctp/model.hpp"

namespace ctp {

struct AdamHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// One AdamW update of a parameter block. `step` is the 1-based update
/// count used for bias correction. Decay is applied as p -= lr * wd * p,
/// separately from the adaptive step.
template <typename T>
void adamw_update(std::span<T> param, std::span<const T> grad, std::span<T> m, std::span<T> v,
                  std::uint64_t step, const AdamHyper& h, bool decay = true) {
  require(param.size() == grad.size() && param.size() == m.size() && param.size() == v.size(),
          Errc::dimension_mismatch, "adamw: shape mismatch");
  require(step >= 1, Errc::invalid_argument, "adamw: step counts from 1");
  const double c1 = 1.0 - std::pow(h.beta1, static_cast<double>(step));
  const double c2 = 1.0 - std::pow(h.beta2, static_cast<double>(step));
  for (std::size_t n = 0; n < param.size(); ++n) {
    const double g = static_cast<double>(grad[n]);
    const double mn = h.beta1 * static_cast<double>(m[n]) + (1.0 - h.beta1) * g;
    const double vn = h.beta2 * static_cast<double>(v[n]) + (1.0 - h.beta2) * g * g;
    m[n] = static_cast<T>(mn);
    v[n] = static_cast<T>(vn);
    double p = static_cast<double>(param[n]);
    if (decay) p -= h.lr * h.weight_decay * p;
    p -= h.lr * (mn / c1) / (std::sqrt(vn / c2) + h.eps);
    param[n] = static_cast<T>(p);
  }
}

template <typename T>
struct AdamState {
  EncoderParams<T> m;
  EncoderParams<T> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const EncoderParams<T>& p) { return {p.zeros_like(), p.zeros_like(), 0}; }
  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// Updates every non-frozen block. The log scale is never decayed and is
/// capped at ln(100) afterwards.
template <typename T>
void adamw_step(EncoderParams<T>& params, const EncoderParams<T>& grads, AdamState<T>& state,
                const AdamHyper& h, const FreezeSet& freeze = {}) {
  ++state.step;
  std::vector<std::span<T>> ps, ms, vs;
  std::vector<std::span<const T>> gs;
  std::vector<bool> decay, frozen;
  for_each_param(params, [&](const std::string&, Modality mod, bool is_scale, std::span<T> s) {
    ps.push_back(s);
    decay.push_back(!is_scale);
    frozen.push_back(!is_scale && freeze.frozen(mod));
  });
  for_each_param(grads, [&](const std::string&, Modality, bool, std::span<const T> s) { gs.push_back(s); });
  for_each_param(state.m, [&](const std::string&, Modality, bool, std::span<T> s) { ms.push_back(s); });
  for_each_param(state.v, [&](const std::string&, Modality, bool, std::span<T> s) { vs.push_back(s); });
  for (std::size_t n = 0; n < ps.size(); ++n) {
    if (frozen[n]) continue;
    adamw_update(ps[n], gs[n], ms[n], vs[n], state.step, h, decay[n]);
  }
  params.log_scale = std::min(params.log_scale, static_cast<T>(kMaxLogScale));
}

/// Linear ramp from 0 to base_lr over ceil(warmup_ratio * total_steps)
/// steps, constant afterwards. Steps count from 0.
inline double lr_at(std::uint64_t step, std::uint64_t total_steps, double warmup_ratio,
                    double base_lr) {
  require(total_steps >= 1, Errc::invalid_argument, "total_steps must be >= 1");
  const auto warmup =
      static_cast<std::uint64_t>(std::ceil(warmup_ratio * static_cast<double>(total_steps)));
  if (warmup == 0 || step >= warmup) return base_lr;
  return base_lr * static_cast<double>(step) / static_cast<double>(warmup);
}

struct TrainConfig {
  std::string loss = "ctp_mask";
  std::optional<Coefficients> coefficients;  // default: equal thirds
  Reduction reduction = Reduction::sum;
  double lr = 1e-3;
  double weight_decay = 0.0;
  double warmup_ratio = 0.1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t epochs = 50;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  FreezeSet freeze;
  double clip_grad_norm = 0.0;  // 0 disables
  EncoderConfig encoder;

  /// Settings for large-batch runs.
  static TrainConfig large_profile() {
    TrainConfig c;
    c.lr = 5e-4;
    c.weight_decay = 0.2;
    c.warmup_ratio = 0.1;
    c.batch_size = 192;
    c.epochs = 20;
    return c;
  }

  LossSpec loss_spec() const {
    LossSpec s = loss_from_tag(loss);
    if (coefficients) {
      if (s.kind == LossKind::pairwise) s.pairwise = *coefficients;
      else s.tensor.coefficients = *coefficients;
    }
    s.tensor.reduction = reduction;
    return s;
  }

  void validate() const {
    (void)loss_spec();
    require(std::isfinite(lr) && lr > 0.0, Errc::invalid_argument, "lr must be > 0");
    require(weight_decay >= 0.0, Errc::invalid_argument, "weight_decay must be >= 0");
    require(warmup_ratio >= 0.0 && warmup_ratio <= 1.0, Errc::invalid_argument,
            "warmup_ratio must lie in [0, 1]");
    require(batch_size >= 2, Errc::invalid_argument, "batch_size must be >= 2");
    require(batch_size <= kDefaultMaxBatch, Errc::invalid_argument, "batch_size exceeds tensor limit");
    require(clip_grad_norm >= 0.0, Errc::invalid_argument, "clip_grad_norm must be >= 0");
  }
};

inline const char* reduction_name(Reduction r) { return r == Reduction::sum ? "sum" : "mean"; }

inline nlohmann::json config_to_json(const TrainConfig& c) {
  nlohmann::json j;
  j["loss"] = c.loss;
  const auto coeffs = c.loss_spec().kind == LossKind::pairwise ? c.loss_spec().pairwise
                                                               : c.loss_spec().tensor.coefficients;
  j["coefficients"] = {coeffs.a, coeffs.b, coeffs.c};
  j["reduction"] = reduction_name(c.reduction);
  j["lr"] = c.lr;
  j["weight_decay"] = c.weight_decay;
  j["warmup_ratio"] = c.warmup_ratio;
  j["beta1"] = c.beta1;
  j["beta2"] = c.beta2;
  j["adam_eps"] = c.adam_eps;
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["freeze"] = {{"text", c.freeze.text}, {"image", c.freeze.image}, {"point", c.freeze.point}};
  j["clip_grad_norm"] = c.clip_grad_norm;
  const auto& e = c.encoder;
  j["encoder"] = {{"text_in", e.text_in},         {"image_in", e.image_in},
                  {"embed_dim", e.embed_dim},     {"text_hidden", e.text_hidden},
                  {"image_hidden", e.image_hidden}, {"point_widths", e.point_widths},
                  {"head_hidden", e.head_hidden}, {"n_points", e.n_points},
                  {"fps_start", e.fps_start}};
  return j;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  c.loss = j.at("loss").get<std::string>();
  const auto co = j.at("coefficients").get<std::vector<double>>();
  require(co.size() == 3, Errc::parse, "coefficients must have 3 entries");
  c.coefficients = Coefficients{co[0], co[1], co[2]};
  const auto red = j.at("reduction").get<std::string>();
  require(red == "sum" || red == "mean", Errc::parse, "reduction must be sum or mean");
  c.reduction = red == "sum" ? Reduction::sum : Reduction::mean;
  c.lr = j.at("lr").get<double>();
  c.weight_decay = j.at("weight_decay").get<double>();
  c.warmup_ratio = j.at("warmup_ratio").get<double>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_eps = j.at("adam_eps").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto& f = j.at("freeze");
  c.freeze = {f.at("text").get<bool>(), f.at("image").get<bool>(), f.at("point").get<bool>()};
  c.clip_grad_norm = j.at("clip_grad_norm").get<double>();
  const auto& e = j.at("encoder");
  c.encoder.text_in = e.at("text_in").get<std::size_t>();
  c.encoder.image_in = e.at("image_in").get<std::size_t>();
  c.encoder.embed_dim = e.at("embed_dim").get<std::size_t>();
  c.encoder.text_hidden = e.at("text_hidden").get<std::vector<std::size_t>>();
  c.encoder.image_hidden = e.at("image_hidden").get<std::vector<std::size_t>>();
  c.encoder.point_widths = e.at("point_widths").get<std::vector<std::size_t>>();
  c.encoder.head_hidden = e.at("head_hidden").get<std::vector<std::size_t>>();
  c.encoder.n_points = e.at("n_points").get<std::size_t>();
  c.encoder.fps_start = e.at("fps_start").get<std::size_t>();
  return c;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  int version = kCheckpointVersion;
  TrainConfig config;
  EncoderParams<double> params;
  AdamState<double> optimizer;
};

namespace detail {

inline nlohmann::json mlp_to_json(const Mlp<double>& m) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& l : m.layers)
    layers.push_back({{"rows", l.weight.rows()},
                      {"cols", l.weight.cols()},
                      {"weight", l.weight.storage()},
                      {"bias", l.bias}});
  return layers;
}

inline Mlp<double> mlp_from_json(const nlohmann::json& j) {
  Mlp<double> m;
  for (const auto& l : j) {
    const auto rows = l.at("rows").get<std::size_t>();
    const auto cols = l.at("cols").get<std::size_t>();
    Layer<double> layer{Matrix<double>(rows, cols), l.at("bias").get<std::vector<double>>()};
    auto w = l.at("weight").get<std::vector<double>>();
    require(w.size() == rows * cols, Errc::parse, "checkpoint weight size mismatch");
    layer.weight.storage() = std::move(w);
    m.layers.push_back(std::move(layer));
  }
  m.validate();
  return m;
}

inline nlohmann::json params_to_json(const EncoderParams<double>& p) {
  return {{"text", mlp_to_json(p.text)},
          {"image", mlp_to_json(p.image)},
          {"point", {{"point_mlp", mlp_to_json(p.point.point_mlp)}, {"head", mlp_to_json(p.point.head)}}},
          {"log_scale", p.log_scale}};
}

inline EncoderParams<double> params_from_json(const nlohmann::json& j) {
  EncoderParams<double> p;
  p.text = mlp_from_json(j.at("text"));
  p.image = mlp_from_json(j.at("image"));
  p.point.point_mlp = mlp_from_json(j.at("point").at("point_mlp"));
  p.point.head = mlp_from_json(j.at("point").at("head"));
  p.log_scale = j.at("log_scale").get<double>();
  return p;
}

}  // namespace detail

inline nlohmann::json checkpoint_to_json(const Checkpoint& c) {
  return {{"format", "ctp-checkpoint"},
          {"version", c.version},
          {"config", config_to_json(c.config)},
          {"params", detail::params_to_json(c.params)},
          {"optimizer",
           {{"step", c.optimizer.step},
            {"m", detail::params_to_json(c.optimizer.m)},
            {"v", detail::params_to_json(c.optimizer.v)}}}};
}

inline Checkpoint checkpoint_from_json(const nlohmann::json& j) {
  try {
    require(j.value("format", "") == "ctp-checkpoint", Errc::parse, "not a checkpoint file");
    Checkpoint c;
    c.version = j.at("version").get<int>();
    require(c.version == kCheckpointVersion, Errc::unsupported,
            "unsupported checkpoint version " + std::to_string(c.version));
    c.config = config_from_json(j.at("config"));
    c.params = detail::params_from_json(j.at("params"));
    c.params.validate();
    const auto& o = j.at("optimizer");
    c.optimizer.step = o.at("step").get<std::uint64_t>();
    c.optimizer.m = detail::params_from_json(o.at("m"));
    c.optimizer.v = detail::params_from_json(o.at("v"));
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, std::string("malformed checkpoint: ") + e.what());
  }
}

inline std::string checkpoint_bytes(const Checkpoint& c) { return checkpoint_to_json(c).dump(1) + "\n"; }

inline void save_checkpoint(const Checkpoint& c, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), Errc::io, "cannot open '" + path + "' for writing");
  out << checkpoint_bytes(c);
  require(out.good(), Errc::io, "write to '" + path + "' failed");
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), Errc::io, "cannot open checkpoint '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::parse, path + ": " + e.what());
  }
  return checkpoint_from_json(j);
}

// ---------------------------------------------------------------------------
// Training loop

struct EpochLog {
  std::size_t epoch = 0;
  double mean_loss = 0.0;
  double logit_scale = 0.0;
  double lr = 0.0;  // learning rate of the epoch's last step

  nlohmann::json to_json() const {
    return {{"epoch", epoch}, {"mean_loss", mean_loss}, {"logit_scale", logit_scale}, {"lr", lr}};
  }
};

struct TrainResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> log;
};

inline Checkpoint initial_checkpoint(const TrainConfig& cfg) {
  Checkpoint c;
  c.config = cfg;
  c.params = init_encoders<double>(cfg.encoder, cfg.seed);
  c.optimizer = AdamState<double>::zeros_like(c.params);
  return c;
}

inline double global_norm(const EncoderParams<double>& g) {
  double acc = 0.0;
  for_each_param(g, [&](const std::string&, Modality, bool, std::span<const double> s) {
    for (double x : s) acc += x * x;
  });
  return std::sqrt(acc);
}

/// Epochs of shuffled batches -> encoders -> loss -> gradients -> AdamW.
/// `on_epoch`, when set, sees every epoch's log entry as it is produced.
inline TrainResult train(const TrainConfig& cfg, const std::vector<TripletRecord>& records,
                         const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  require(records.size() >= cfg.batch_size, Errc::invalid_argument,
          "need at least batch_size training records");
  const LossSpec spec = cfg.loss_spec();
  TrainResult result{initial_checkpoint(cfg), {}};
  auto& params = result.checkpoint.params;
  auto& opt = result.checkpoint.optimizer;

  const std::uint64_t steps_per_epoch = records.size() / cfg.batch_size;  // drop_last
  const std::uint64_t total_steps = std::max<std::uint64_t>(1, steps_per_epoch * cfg.epochs);
  AdamHyper hyper{cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay};
  std::uint64_t global_step = 0;

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto batches =
        batch_iter(records.size(), cfg.batch_size, cfg.seed * 1000003ULL + epoch, true);
    double loss_sum = 0.0;
    for (std::size_t bi = 0; bi < batches.size(); ++bi) {
      auto where = [&] {
        std::ostringstream msg;
        msg << "epoch " << epoch << ", batch " << bi << ", step " << global_step;
        return msg.str();
      };
      const auto inputs = prepare_batch(records, batches[bi], cfg.encoder);
      ModelGradient<double> mg;
      try {
        mg = model_loss_grad(spec, params, inputs, cfg.freeze);
      } catch (const Error& e) {
        // zero-norm rows and bad scales usually come from NaN/inf upstream
        if (e.code() != Errc::non_finite && e.code() != Errc::degenerate_input) throw;
        fail(Errc::non_finite, std::string(e.what()) + " at " + where());
      }
      require(std::isfinite(mg.loss()), Errc::non_finite, "non-finite loss at " + where());
      if (cfg.clip_grad_norm > 0.0) {
        const double norm = global_norm(mg.grads);
        if (norm > cfg.clip_grad_norm) {
          const double s = cfg.clip_grad_norm / norm;
          for_each_param(mg.grads, [&](const std::string&, Modality, bool, std::span<double> g) {
            for (double& x : g) x *= s;
          });
        }
      }
      hyper.lr = lr_at(global_step, total_steps, cfg.warmup_ratio, cfg.lr);
      adamw_step(params, mg.grads, opt, hyper, cfg.freeze);
      loss_sum += mg.loss();
      ++global_step;
    }
    EpochLog entry{epoch, batches.empty() ? 0.0 : loss_sum / static_cast<double>(batches.size()),
                   logit_scale(params.log_scale), hyper.lr};
    result.log.push_back(entry);
    if (on_epoch) on_epoch(entry);
  }
  return result;
}

}  // namespace ctp
