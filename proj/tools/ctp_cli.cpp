// ctp: command-line front end.
//
//   ctp gen-data     synthetic manifests + prototype table
//   ctp train        train encoders, write checkpoint and epoch log
//   ctp eval         zero-shot accuracy of a checkpoint
//   ctp gradcheck    analytic vs finite-difference gradients
//   ctp oracle-check vectorized vs brute-force tensor loss
//   ctp compare      multi-seed comparison of the losses
//   ctp bench        loss/gradient timings by batch size
//
// Every command writes <out>/<command>.config.toml holding its resolved
// settings; passing that file back with --config reproduces the run.
// Exit codes: 0 ok, 2 invalid arguments or config, 3 check failed,
// 4 I/O or runtime failure.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <limits>
#include <map>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "ctp/ctp.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitInvalid = 2;
constexpr int kExitCheckFailed = 3;
constexpr int kExitRuntime = 4;

// Resolved settings, written as a TOML document the config loader reads back.
class Echo {
 public:
  void top(const std::string& key, const std::string& value) { top_.push_back(key + " = " + value); }
  void kv(const std::string& key, const std::string& value) { body_.push_back(key + " = " + value); }
  void kv(const std::string& key, const char* value) { kv(key, quote(value)); }
  void str(const std::string& key, const std::string& value) { kv(key, quote(value)); }
  void num(const std::string& key, double v) {
    std::ostringstream os;
    os << std::setprecision(std::numeric_limits<double>::max_digits10) << v;
    kv(key, os.str());
  }
  void num(const std::string& key, std::uint64_t v) { kv(key, std::to_string(v)); }
  void flag(const std::string& key, bool v) { kv(key, v ? "true" : "false"); }

  void write(const fs::path& path, const std::string& section) const {
    std::ofstream f(path);
    ctp::require(static_cast<bool>(f), ctp::Errc::io, "cannot write " + path.string());
    for (const auto& l : top_) f << l << '\n';
    f << '[' << section << "]\n";
    for (const auto& l : body_) f << l << '\n';
    ctp::require(static_cast<bool>(f), ctp::Errc::io, "write failed: " + path.string());
  }

  static std::string quote(const std::string& s) { return nlohmann::json(s).dump(); }

 private:
  std::vector<std::string> top_, body_;
};

template <typename T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (std::size_t n = 0; n < v.size(); ++n) os << (n ? "," : "") << v[n];
  return os.str();
}

std::vector<std::string> split(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::vector<std::size_t> parse_sizes(const std::string& s, const std::string& what) {
  std::vector<std::size_t> out;
  for (const auto& item : split(s)) {
    std::size_t pos = 0;
    unsigned long long v = 0;
    try {
      v = std::stoull(item, &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    ctp::require(pos == item.size() && pos > 0, ctp::Errc::invalid_argument,
                 what + ": '" + item + "' is not a non-negative integer");
    out.push_back(static_cast<std::size_t>(v));
  }
  return out;
}

ctp::Coefficients parse_coeffs(const std::string& s) {
  const auto parts = split(s);
  ctp::require(parts.size() == 3, ctp::Errc::invalid_argument, "--coeffs needs three values a,b,c");
  double v[3];
  for (int k = 0; k < 3; ++k) {
    std::size_t pos = 0;
    try {
      v[k] = std::stod(parts[k], &pos);
    } catch (const std::exception&) {
      pos = 0;
    }
    ctp::require(pos == parts[k].size() && pos > 0, ctp::Errc::invalid_argument,
                 "--coeffs: '" + parts[k] + "' is not a number");
  }
  ctp::Coefficients c{v[0], v[1], v[2]};
  c.validate();
  return c;
}

ctp::FreezeSet parse_freeze(const std::string& s) {
  ctp::FreezeSet f;
  for (const auto& item : split(s)) {
    if (item == "none") continue;
    if (item == "text") f.text = true;
    else if (item == "image") f.image = true;
    else if (item == "point") f.point = true;
    else ctp::fail(ctp::Errc::invalid_argument, "--freeze: unknown encoder '" + item + "'");
  }
  return f;
}

std::string freeze_string(const ctp::FreezeSet& f) {
  std::vector<std::string> v;
  if (f.text) v.push_back("text");
  if (f.image) v.push_back("image");
  if (f.point) v.push_back("point");
  return v.empty() ? "none" : join(v);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  ctp::require(!ec && fs::is_directory(dir), ctp::Errc::io,
               "cannot create output directory " + dir.string());
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path);
  ctp::require(static_cast<bool>(f), ctp::Errc::io, "cannot write " + path.string());
  f << text;
  ctp::require(static_cast<bool>(f), ctp::Errc::io, "write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Shared option groups

struct Common {
  std::string out;
  std::size_t threads = 1;
};

// Each command owns its --out: config sections for commands not being run
// are still applied, so a shared target could be overwritten.
void add_out(CLI::App* cmd, std::map<CLI::App*, std::string>& outs) {
  cmd->add_option("--out", outs[cmd], "output directory")->required();
}

struct SynthOpts {
  ctp::SynthConfig cfg;
  std::size_t min_points = 0;
  double min_visibility = 0.0;
};

void add_synth_options(CLI::App* cmd, SynthOpts& o, const std::string& seed_flag) {
  auto& c = o.cfg;
  cmd->add_option("--classes", c.num_classes, "number of classes (>= 2)")->capture_default_str();
  cmd->add_option("--latent-dim", c.latent_dim, "latent prototype dimension")->capture_default_str();
  cmd->add_option("--text-dim", c.text_dim, "raw text vector dimension")->capture_default_str();
  cmd->add_option("--image-dim", c.image_dim, "raw image vector dimension")->capture_default_str();
  cmd->add_option("--sigma-text", c.sigma_text, "text noise")->capture_default_str();
  cmd->add_option("--sigma-image", c.sigma_image, "image noise")->capture_default_str();
  cmd->add_option("--sigma-point", c.sigma_point, "point jitter")->capture_default_str();
  cmd->add_option("--parts", c.parts_per_class, "3D part centers per class")->capture_default_str();
  cmd->add_option("--points-min", c.points_min, "fewest points per cloud")->capture_default_str();
  cmd->add_option("--points-max", c.points_max, "most points per cloud")->capture_default_str();
  cmd->add_option("--train", c.n_train, "training records")->capture_default_str();
  cmd->add_option("--test", c.n_test, "test records")->capture_default_str();
  cmd->add_option(seed_flag, c.seed, "generator seed")->capture_default_str();
  cmd->add_option("--min-points", o.min_points, "drop clouds with fewer points")->capture_default_str();
  cmd->add_option("--min-visibility", o.min_visibility,
                  "accepted for compatibility; synthetic data has no visibility")
      ->capture_default_str();
}

void echo_synth(Echo& e, const SynthOpts& o, const std::string& seed_key) {
  const auto& c = o.cfg;
  e.num("classes", c.num_classes);
  e.num("latent-dim", c.latent_dim);
  e.num("text-dim", c.text_dim);
  e.num("image-dim", c.image_dim);
  e.num("sigma-text", c.sigma_text);
  e.num("sigma-image", c.sigma_image);
  e.num("sigma-point", c.sigma_point);
  e.num("parts", c.parts_per_class);
  e.num("points-min", c.points_min);
  e.num("points-max", c.points_max);
  e.num("train", c.n_train);
  e.num("test", c.n_test);
  e.num(seed_key, c.seed);
  e.num("min-points", o.min_points);
  e.num("min-visibility", o.min_visibility);
}

// Training flags as given; resolved against the profile after parsing.
struct TrainOpts {
  ctp::TrainConfig cfg;
  std::string profile = "desk";
  std::string coeffs;
  std::string reduction = "sum";
  std::string freeze = "none";
  std::string text_hidden, image_hidden, point_widths, head_hidden;
  CLI::App* cmd = nullptr;
};

void add_train_options(CLI::App* cmd, TrainOpts& o, bool with_loss) {
  o.cmd = cmd;
  auto& c = o.cfg;
  o.text_hidden = join(c.encoder.text_hidden);
  o.image_hidden = join(c.encoder.image_hidden);
  o.point_widths = join(c.encoder.point_widths);
  o.head_hidden = join(c.encoder.head_hidden);
  cmd->add_option("--profile", o.profile, "desk | large (large: lr 5e-4, wd 0.2, b 192, 20 epochs)")
      ->check(CLI::IsMember({"desk", "large"}))
      ->capture_default_str();
  if (with_loss)
    cmd->add_option("--loss", c.loss, "ctp_mask | ctp_nm | ctp_cosine | ctp_cosine_nm | pairwise")
        ->capture_default_str();
  cmd->add_option("--coeffs", o.coeffs, "loss weights a,b,c (default equal thirds)");
  cmd->add_option("--reduction", o.reduction, "sum | mean over planes")
      ->check(CLI::IsMember({"sum", "mean"}))
      ->capture_default_str();
  cmd->add_option("--lr", c.lr, "peak learning rate")->capture_default_str();
  cmd->add_option("--weight-decay", c.weight_decay, "decoupled weight decay")->capture_default_str();
  cmd->add_option("--warmup-ratio", c.warmup_ratio, "fraction of steps in linear warmup")
      ->capture_default_str();
  cmd->add_option("--beta1", c.beta1)->capture_default_str();
  cmd->add_option("--beta2", c.beta2)->capture_default_str();
  cmd->add_option("--adam-eps", c.adam_eps)->capture_default_str();
  cmd->add_option("--epochs", c.epochs)->capture_default_str();
  cmd->add_option("--batch-size", c.batch_size)->capture_default_str();
  if (with_loss) cmd->add_option("--seed", c.seed, "init and shuffle seed")->capture_default_str();
  cmd->add_option("--freeze", o.freeze, "comma list of encoders to hold fixed: text,image,point")
      ->capture_default_str();
  cmd->add_option("--clip-grad-norm", c.clip_grad_norm, "global norm cap, 0 disables")
      ->capture_default_str();
  cmd->add_option("--embed-dim", c.encoder.embed_dim)->capture_default_str();
  cmd->add_option("--text-hidden", o.text_hidden, "hidden widths, comma list")->capture_default_str();
  cmd->add_option("--image-hidden", o.image_hidden, "hidden widths, comma list")->capture_default_str();
  cmd->add_option("--point-widths", o.point_widths, "per-point MLP widths, comma list")
      ->capture_default_str();
  cmd->add_option("--head-hidden", o.head_hidden, "point head hidden widths, comma list")
      ->capture_default_str();
  cmd->add_option("--n-points", c.encoder.n_points, "points per cloud after pad/FPS")
      ->capture_default_str();
  cmd->add_option("--fps-start", c.encoder.fps_start)->capture_default_str();
}

bool given(const TrainOpts& o, const char* name) { return o.cmd->get_option(name)->count() > 0; }

ctp::TrainConfig resolve_train(TrainOpts& o) {
  auto& c = o.cfg;
  if (o.profile == "large") {
    const auto p = ctp::TrainConfig::large_profile();
    if (!given(o, "--lr")) c.lr = p.lr;
    if (!given(o, "--weight-decay")) c.weight_decay = p.weight_decay;
    if (!given(o, "--warmup-ratio")) c.warmup_ratio = p.warmup_ratio;
    if (!given(o, "--batch-size")) c.batch_size = p.batch_size;
    if (!given(o, "--epochs")) c.epochs = p.epochs;
  }
  c.coefficients.reset();
  if (!o.coeffs.empty()) c.coefficients = parse_coeffs(o.coeffs);
  c.reduction = o.reduction == "mean" ? ctp::Reduction::mean : ctp::Reduction::sum;
  c.freeze = parse_freeze(o.freeze);
  c.encoder.text_hidden = parse_sizes(o.text_hidden, "--text-hidden");
  c.encoder.image_hidden = parse_sizes(o.image_hidden, "--image-hidden");
  c.encoder.point_widths = parse_sizes(o.point_widths, "--point-widths");
  c.encoder.head_hidden = parse_sizes(o.head_hidden, "--head-hidden");
  c.validate();
  return c;
}

void echo_train(Echo& e, const TrainOpts& o, const ctp::TrainConfig& c, bool with_loss) {
  e.str("profile", o.profile);
  if (with_loss) e.str("loss", c.loss);
  if (c.coefficients) e.str("coeffs", join(std::vector<double>{c.coefficients->a, c.coefficients->b,
                                                               c.coefficients->c}));
  e.str("reduction", ctp::reduction_name(c.reduction));
  e.num("lr", c.lr);
  e.num("weight-decay", c.weight_decay);
  e.num("warmup-ratio", c.warmup_ratio);
  e.num("beta1", c.beta1);
  e.num("beta2", c.beta2);
  e.num("adam-eps", c.adam_eps);
  e.num("epochs", std::uint64_t{c.epochs});
  e.num("batch-size", std::uint64_t{c.batch_size});
  if (with_loss) e.num("seed", c.seed);
  e.str("freeze", freeze_string(c.freeze));
  e.num("clip-grad-norm", c.clip_grad_norm);
  e.num("embed-dim", std::uint64_t{c.encoder.embed_dim});
  e.str("text-hidden", join(c.encoder.text_hidden));
  e.str("image-hidden", join(c.encoder.image_hidden));
  e.str("point-widths", join(c.encoder.point_widths));
  e.str("head-hidden", join(c.encoder.head_hidden));
  e.num("n-points", std::uint64_t{c.encoder.n_points});
  e.num("fps-start", std::uint64_t{c.encoder.fps_start});
}

// Encoder input widths come from the data.
void fit_inputs(ctp::TrainConfig& c, const std::vector<ctp::TripletRecord>& records) {
  ctp::require(!records.empty(), ctp::Errc::invalid_argument, "training manifest is empty");
  c.encoder.text_in = records.front().text_vec.size();
  c.encoder.image_in = records.front().image_vec.size();
}

void top_echo(Echo& e, const Common& c) { e.top("threads", std::to_string(c.threads)); }

// ---------------------------------------------------------------------------
// Commands

int run_gen_data(const Common& com, SynthOpts& o) {
  o.cfg.validate();
  const fs::path out(com.out);
  ensure_dir(out);
  auto data = ctp::generate_synthetic(o.cfg);
  data.train = ctp::filter_min_points(std::move(data.train), o.min_points);
  data.test = ctp::filter_min_points(std::move(data.test), o.min_points);
  ctp::write_manifest(data.train, (out / "train.jsonl").string());
  ctp::write_manifest(data.test, (out / "test.jsonl").string());
  ctp::write_prototypes(data.prototypes, (out / "prototypes.json").string());
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  echo_synth(e, o, "seed");
  e.write(out / "gen-data.config.toml", "gen-data");
  std::cout << "wrote " << data.train.size() << " train and " << data.test.size()
            << " test records, " << data.prototypes.classes.size() << " classes to " << out.string()
            << '\n';
  return 0;
}

int run_train(const Common& com, TrainOpts& o, const std::string& manifest) {
  auto cfg = resolve_train(o);
  const auto records = ctp::read_manifest(manifest);
  fit_inputs(cfg, records);
  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("manifest", manifest);
  echo_train(e, o, cfg, true);
  e.write(out / "train.config.toml", "train");

  std::ofstream log(out / "training_log.jsonl");
  ctp::require(static_cast<bool>(log), ctp::Errc::io, "cannot write training log");
  const auto t0 = std::chrono::steady_clock::now();
  const auto result = ctp::train(cfg, records, [&](const ctp::EpochLog& entry) {
    log << entry.to_json().dump() << '\n';
    log.flush();
    std::cout << "epoch " << entry.epoch << "  loss " << entry.mean_loss << "  scale "
              << entry.logit_scale << '\n';
  });
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ctp::save_checkpoint(result.checkpoint, (out / "checkpoint.json").string());
  std::cout << "trained " << cfg.loss << " for " << cfg.epochs << " epochs in " << std::fixed
            << std::setprecision(1) << secs << " s; checkpoint at "
            << (out / "checkpoint.json").string() << '\n';
  return 0;
}

struct EvalOpts {
  std::string checkpoint, manifest, prototypes, mode = "all";
};

int run_eval(const Common& com, const EvalOpts& o) {
  std::vector<ctp::EvalMode> modes;
  if (o.mode == "all") modes = ctp::all_eval_modes();
  else modes.push_back(ctp::eval_mode_from_name(o.mode));
  const auto ckpt = ctp::load_checkpoint(o.checkpoint);
  const auto test = ctp::read_manifest(o.manifest);
  const auto table = ctp::read_prototypes(o.prototypes);
  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("checkpoint", o.checkpoint);
  e.str("manifest", o.manifest);
  e.str("prototypes", o.prototypes);
  e.str("mode", o.mode);
  e.write(out / "eval.config.toml", "eval");

  const auto reports = ctp::evaluate(ckpt, test, table, modes);
  std::string lines;
  for (const auto& r : reports) lines += r.to_json().dump() + "\n";
  write_text(out / "metrics.jsonl", lines);
  const auto tbl = ctp::format_report_table(reports);
  write_text(out / "eval_table.txt", tbl);
  std::cout << tbl;
  return 0;
}

struct GradOpts {
  std::string variants = join(ctp::all_loss_tags());
  std::size_t seeds = 20;
  std::size_t b = 4;
  std::size_t d = 8;
  double epsilon = ctp::kDefaultFdEpsilon;
  double tol = 1e-6;
  double abs_tol = 0.0;
  bool allow_rounding = false;
  std::string precision = "double";
  bool sign_flip = false;
};

int run_gradcheck(const Common& com, const GradOpts& o) {
  const auto variants = split(o.variants);
  ctp::require(!variants.empty(), ctp::Errc::invalid_argument, "no variants");
  for (const auto& v : variants) (void)ctp::loss_from_tag(v);
  ctp::require(o.seeds >= 1 && o.b >= 2 && o.d >= 1, ctp::Errc::invalid_argument,
               "need seeds >= 1, b >= 2, d >= 1");
  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("variants", o.variants);
  e.num("seeds", std::uint64_t{o.seeds});
  e.num("b", std::uint64_t{o.b});
  e.num("d", std::uint64_t{o.d});
  e.num("epsilon", o.epsilon);
  e.num("tol", o.tol);
  e.num("abs-tol", o.abs_tol);
  e.flag("allow-rounding", o.allow_rounding);
  e.str("precision", o.precision);
  e.write(out / "gradcheck.config.toml", "gradcheck");

  std::ofstream log(out / "gradcheck.jsonl");
  ctp::require(static_cast<bool>(log), ctp::Errc::io, "cannot write gradcheck report");
  std::size_t failures = 0, total = 0;
  double worst = 0.0;
  for (const auto& v : variants) {
    for (std::uint64_t s = 0; s < o.seeds; ++s) {
      // The self-test flips one gradient entry of the first case only.
      const bool flip = o.sign_flip && total == 0;
      const auto c = o.precision == "float"
                         ? ctp::model_gradcheck<float>(v, s, o.b, o.d, o.epsilon, o.tol, o.abs_tol, flip)
                         : ctp::model_gradcheck<double>(v, s, o.b, o.d, o.epsilon, o.tol, o.abs_tol, flip);
      ++total;
      worst = std::max(worst, c.report.max_rel_error);
      const double floor = std::max(
          o.abs_tol, o.allow_rounding ? ctp::fd_rounding_floor(c.loss, o.epsilon) : 0.0);
      const std::size_t bad = c.report.violations(o.tol, floor);
      log << nlohmann::json{{"variant", v},
                            {"seed", s},
                            {"loss", c.loss},
                            {"max_rel_error", c.report.max_rel_error},
                            {"max_abs_error", c.report.max_abs_error},
                            {"abs_floor", floor},
                            {"violations", bad},
                            {"worst_parameter", c.report.worst_parameter},
                            {"worst_index", c.report.worst_index},
                            {"coordinates", c.report.coordinates},
                            {"passed", bad == 0}}
                 .dump()
          << '\n';
      if (bad) {
        ++failures;
        std::cout << "FAIL variant=" << v << " seed=" << s << " max_rel_error="
                  << c.report.max_rel_error << " at " << c.report.worst_parameter << "["
                  << c.report.worst_index << "], " << bad << " of " << c.report.coordinates << " coordinates over tolerance\n";
      }
    }
  }
  std::cout << "gradcheck: " << total - failures << "/" << total << " passed, worst relative error "
            << worst << " (tol " << o.tol << ")\n";
  return failures ? kExitCheckFailed : 0;
}

struct OracleOpts {
  std::string b = "6";
  std::size_t d = 8;
  std::size_t seeds = 20;
  double tol = 1e-10;
};

int run_oracle(const Common& com, const OracleOpts& o) {
  const auto bs = parse_sizes(o.b, "--b");
  ctp::require(!bs.empty() && o.seeds >= 1 && o.d >= 1, ctp::Errc::invalid_argument,
               "need at least one batch size, seeds >= 1, d >= 1");
  for (std::size_t b : bs)
    ctp::require(b >= 1 && b <= ctp::kOracleMaxBatch, ctp::Errc::out_of_range,
                 "oracle batch size must lie in [1, " + std::to_string(ctp::kOracleMaxBatch) + "]");
  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("b", o.b);
  e.num("d", std::uint64_t{o.d});
  e.num("seeds", std::uint64_t{o.seeds});
  e.num("tol", o.tol);
  e.write(out / "oracle-check.config.toml", "oracle-check");

  std::ofstream log(out / "oracle.jsonl");
  ctp::require(static_cast<bool>(log), ctp::Errc::io, "cannot write oracle report");
  std::size_t failures = 0, total = 0;
  double worst = 0.0;
  for (std::size_t b : bs) {
    for (std::uint64_t s = 0; s < o.seeds; ++s) {
      for (const auto& c : ctp::oracle_sweep(b, o.d, s, o.tol)) {
        const char* metric = c.metric == ctp::Metric::cosine ? "cosine" : "l2";
        const char* strat = c.strategy == ctp::Flatten::mask ? "mask" : "nm";
        ++total;
        worst = std::max(worst, c.abs_error());
        log << nlohmann::json{{"b", b},          {"seed", s},          {"metric", metric},
                              {"strategy", strat}, {"fast", c.fast},     {"oracle", c.oracle},
                              {"abs_error", c.abs_error()}, {"passed", c.passed}}
                   .dump()
            << '\n';
        if (!c.passed) {
          ++failures;
          std::cout << "FAIL b=" << b << " seed=" << s << " metric=" << metric
                    << " strategy=" << strat << " abs_error=" << c.abs_error() << '\n';
        }
      }
    }
  }
  std::cout << "oracle-check: " << total - failures << "/" << total
            << " passed, worst absolute error " << worst << " (tol " << o.tol << ")\n";
  return failures ? kExitCheckFailed : 0;
}

struct CompareOpts {
  std::string data;  // directory from gen-data; empty = generate in memory
  SynthOpts synth;
  std::string losses = join(ctp::compared_losses());
  std::size_t seeds = 3;
  std::uint64_t seed_base = 0;
};

int run_compare(const Common& com, CompareOpts& o, TrainOpts& t) {
  auto cfg = resolve_train(t);
  ctp::require(o.seeds >= 1, ctp::Errc::invalid_argument, "--seeds must be >= 1");
  const auto losses = split(o.losses);
  for (const auto& l : losses) (void)ctp::loss_from_tag(l);
  std::vector<ctp::TripletRecord> train_set, test_set;
  ctp::PrototypeTable table;
  if (!o.data.empty()) {
    const fs::path dir(o.data);
    train_set = ctp::read_manifest((dir / "train.jsonl").string());
    test_set = ctp::read_manifest((dir / "test.jsonl").string());
    table = ctp::read_prototypes((dir / "prototypes.json").string());
  } else {
    o.synth.cfg.validate();
    auto data = ctp::generate_synthetic(o.synth.cfg);
    train_set = ctp::filter_min_points(std::move(data.train), o.synth.min_points);
    test_set = ctp::filter_min_points(std::move(data.test), o.synth.min_points);
    table = std::move(data.prototypes);
  }
  fit_inputs(cfg, train_set);
  std::vector<std::uint64_t> seeds;
  for (std::size_t k = 0; k < o.seeds; ++k) seeds.push_back(o.seed_base + k);

  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("data", o.data);
  if (o.data.empty()) echo_synth(e, o.synth, "data-seed");
  e.str("losses", o.losses);
  e.num("seeds", std::uint64_t{o.seeds});
  e.num("seed-base", o.seed_base);
  echo_train(e, t, cfg, false);
  e.write(out / "compare.config.toml", "compare");

  const auto result = ctp::compare_losses(
      cfg, losses, seeds, train_set, test_set, table,
      [](const std::string& loss, std::uint64_t seed, const std::vector<ctp::EvalReport>& reps) {
        std::cout << loss << " seed " << seed;
        for (const auto& r : reps)
          std::cout << "  " << ctp::eval_mode_name(r.mode) << " " << std::fixed
                    << std::setprecision(2) << r.avg_accuracy;
        std::cout << '\n';
      });
  write_text(out / "compare.json", result.to_json().dump(1) + "\n");
  const auto tbl = ctp::format_compare_table(result);
  write_text(out / "compare_table.txt", tbl);
  std::cout << '\n' << tbl;
  return 0;
}

struct BenchOpts {
  std::string b = "8,16,32,64";
  std::size_t d = 32;
  std::size_t reps = 3;
};

int run_bench(const Common& com, const BenchOpts& o) {
  const auto bs = parse_sizes(o.b, "--b");
  ctp::require(!bs.empty() && o.d >= 1 && o.reps >= 1, ctp::Errc::invalid_argument,
               "need batch sizes, d >= 1, reps >= 1");
  const fs::path out(com.out);
  ensure_dir(out);
  Echo e;
  top_echo(e, com);
  e.str("out", com.out);
  e.str("b", o.b);
  e.num("d", std::uint64_t{o.d});
  e.num("reps", std::uint64_t{o.reps});
  e.write(out / "bench.config.toml", "bench");

  std::ofstream log(out / "bench.jsonl");
  ctp::require(static_cast<bool>(log), ctp::Errc::io, "cannot write bench report");
  std::cout << std::left << std::setw(16) << "loss" << std::right << std::setw(6) << "b"
            << std::setw(14) << "forward ms" << std::setw(14) << "fwd+bwd ms" << '\n';
  for (const auto& tag : ctp::all_loss_tags()) {
    const auto spec = ctp::loss_from_tag(tag);
    for (std::size_t b : bs) {
      ctp::require(b >= 1 && b <= ctp::kDefaultMaxBatch, ctp::Errc::out_of_range,
                   "bench batch size out of range");
      std::mt19937_64 rng(b);
      const auto t = ctp::random_matrix(b, o.d, rng), i = ctp::random_matrix(b, o.d, rng),
                 p = ctp::random_matrix(b, o.d, rng);
      double fwd = 1e300, bwd = 1e300;
      for (std::size_t r = 0; r < o.reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        (void)ctp::feature_loss(spec, t, i, p, ctp::kInitLogScale);
        auto t1 = std::chrono::steady_clock::now();
        (void)ctp::feature_loss_grad(spec, t, i, p, ctp::kInitLogScale);
        auto t2 = std::chrono::steady_clock::now();
        fwd = std::min(fwd, std::chrono::duration<double, std::milli>(t1 - t0).count());
        bwd = std::min(bwd, std::chrono::duration<double, std::milli>(t2 - t1).count());
      }
      log << nlohmann::json{{"loss", tag}, {"b", b}, {"d", o.d}, {"forward_ms", fwd},
                            {"forward_backward_ms", bwd}}
                 .dump()
          << '\n';
      std::cout << std::left << std::setw(16) << tag << std::right << std::setw(6) << b
                << std::fixed << std::setprecision(3) << std::setw(14) << fwd << std::setw(14)
                << bwd << '\n';
    }
  }
  return 0;
}

// "--set key=value" is shorthand for "--key value".
std::vector<std::string> expand_set(int argc, char** argv) {
  std::vector<std::string> args;
  for (int n = 1; n < argc; ++n) {
    std::string a = argv[n];
    std::string kv;
    if (a == "--set" && n + 1 < argc) kv = argv[++n];
    else if (a.rfind("--set=", 0) == 0) kv = a.substr(6);
    else {
      args.push_back(a);
      continue;
    }
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) {
      args.push_back("--set");  // let the parser reject it
      args.push_back(kv);
      continue;
    }
    args.push_back("--" + kv.substr(0, eq));
    args.push_back(kv.substr(eq + 1));
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contrastive tensor pre-training toolkit"};
  app.name("ctp");
  app.set_config("--config", "", "TOML/INI file, one [section] per command");
  app.allow_config_extras(CLI::config_extras_mode::error);
  app.require_subcommand(1);
  // a repeated option (e.g. from --set) overrides the earlier value
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  Common com;
  std::map<CLI::App*, std::string> outs;
  app.add_option("--threads", com.threads, "worker threads (0 = all cores)")->capture_default_str();

  auto* gen = app.add_subcommand("gen-data", "write synthetic train/test manifests and prototypes");
  SynthOpts synth;
  add_out(gen, outs);
  add_synth_options(gen, synth, "--seed");

  auto* trn = app.add_subcommand("train", "train the encoders");
  TrainOpts topts;
  std::string manifest;
  add_out(trn, outs);
  trn->add_option("--manifest", manifest, "training manifest (JSON lines)")->required();
  add_train_options(trn, topts, true);

  auto* ev = app.add_subcommand("eval", "zero-shot accuracy of a checkpoint");
  EvalOpts eopts;
  add_out(ev, outs);
  ev->add_option("--checkpoint", eopts.checkpoint)->required();
  ev->add_option("--manifest", eopts.manifest, "test manifest")->required();
  ev->add_option("--prototypes", eopts.prototypes, "class prototype table")->required();
  ev->add_option("--mode", eopts.mode, "T_I | T_P | T_IP | all")
      ->check(CLI::IsMember({"T_I", "T_P", "T_IP", "all"}))
      ->capture_default_str();

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient sweep");
  GradOpts gopts;
  add_out(gc, outs);
  gc->add_option("--variants", gopts.variants, "comma list of loss tags")->capture_default_str();
  gc->add_option("--seeds", gopts.seeds)->capture_default_str();
  gc->add_option("--b", gopts.b, "batch size")->capture_default_str();
  gc->add_option("--d", gopts.d, "embedding dimension")->capture_default_str();
  gc->add_option("--epsilon", gopts.epsilon)->capture_default_str();
  gc->add_option("--tol", gopts.tol, "max relative error")->capture_default_str();
  gc->add_option("--abs-tol", gopts.abs_tol,
                 "also accept coordinates whose absolute error is at most this (0: off)")
      ->capture_default_str();
  gc->add_flag("--allow-rounding", gopts.allow_rounding,
               "also accept coordinates within the rounding noise of the differences");
  gc->add_option("--precision", gopts.precision)
      ->check(CLI::IsMember({"double", "float"}))
      ->capture_default_str();
  gc->add_flag("--inject-sign-flip", gopts.sign_flip)->group("");

  auto* oc = app.add_subcommand("oracle-check", "vectorized vs brute-force loss sweep");
  OracleOpts oopts;
  add_out(oc, outs);
  oc->add_option("--b", oopts.b, "batch size(s), comma list")->capture_default_str();
  oc->add_option("--d", oopts.d)->capture_default_str();
  oc->add_option("--seeds", oopts.seeds)->capture_default_str();
  oc->add_option("--tol", oopts.tol, "max absolute error")->capture_default_str();

  auto* cmp = app.add_subcommand("compare", "multi-seed comparison of the losses");
  CompareOpts copts;
  TrainOpts ctopts;
  add_out(cmp, outs);
  cmp->add_option("--data", copts.data, "directory written by gen-data (default: generate)");
  add_synth_options(cmp, copts.synth, "--data-seed");
  cmp->add_option("--losses", copts.losses)->capture_default_str();
  cmp->add_option("--seeds", copts.seeds, "number of seeds")->capture_default_str();
  cmp->add_option("--seed-base", copts.seed_base)->capture_default_str();
  add_train_options(cmp, ctopts, false);

  auto* bench = app.add_subcommand("bench", "loss and gradient timings");
  BenchOpts bopts;
  add_out(bench, outs);
  bench->add_option("--b", bopts.b, "batch sizes, comma list")->capture_default_str();
  bench->add_option("--d", bopts.d)->capture_default_str();
  bench->add_option("--reps", bopts.reps)->capture_default_str();

  auto args = expand_set(argc, argv);
  std::reverse(args.begin(), args.end());
  try {
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitInvalid;
  }

  try {
    for (auto* sub : app.get_subcommands()) com.out = outs[sub];
    ctp::set_num_threads(com.threads ? com.threads
                                     : std::max(1u, std::thread::hardware_concurrency()));
    if (gen->parsed()) return run_gen_data(com, synth);
    if (trn->parsed()) return run_train(com, topts, manifest);
    if (ev->parsed()) return run_eval(com, eopts);
    if (gc->parsed()) return run_gradcheck(com, gopts);
    if (oc->parsed()) return run_oracle(com, oopts);
    if (cmp->parsed()) return run_compare(com, copts, ctopts);
    if (bench->parsed()) return run_bench(com, bopts);
  } catch (const ctp::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    switch (e.code()) {
      case ctp::Errc::io:
      case ctp::Errc::parse:
      case ctp::Errc::non_finite:
        return kExitRuntime;
      default:
        return kExitInvalid;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
  return kExitInvalid;
}
