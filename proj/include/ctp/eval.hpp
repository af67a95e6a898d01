#pragma once

// Zero-shot classification: class texts are encoded once; each sample is
// assigned the class whose text feature scores highest against it. Joint
// image+point input uses the mapped L2 tensor similarity; single-modality
// input uses cosine similarity.

#include <cstddef>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctp/dataset.hpp"
#include "ctp/model.hpp"
#include "ctp/similarity.hpp"
#include "ctp/training.hpp"

namespace ctp {

enum class EvalMode { T_I, T_P, T_IP };

inline const char* eval_mode_name(EvalMode m) {
  switch (m) {
    case EvalMode::T_I: return "T_I";
    case EvalMode::T_P: return "T_P";
    case EvalMode::T_IP: return "T_IP";
  }
  return "?";
}

inline EvalMode eval_mode_from_name(const std::string& s) {
  if (s == "T_I") return EvalMode::T_I;
  if (s == "T_P") return EvalMode::T_P;
  if (s == "T_IP") return EvalMode::T_IP;
  fail(Errc::invalid_argument, "unknown eval mode '" + s + "'");
}

/// Raw text inputs for the given classes, in the given order.
inline std::vector<std::vector<double>> build_class_texts(const std::vector<std::string>& classes,
                                                          const PrototypeTable& table) {
  require(!classes.empty(), Errc::invalid_argument, "class list is empty");
  std::set<std::string> seen;
  std::vector<std::vector<double>> out;
  for (const auto& c : classes) {
    require(seen.insert(c).second, Errc::invalid_argument, "duplicate class '" + c + "'");
    out.push_back(table.text_vecs[table.index_of(c)]);
  }
  return out;
}

struct Classification {
  std::size_t label = 0;
  std::vector<double> scores;
};

namespace detail {

inline std::size_t first_argmax(const std::vector<double>& s) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < s.size(); ++c)
    if (s[c] > s[best]) best = c;  // strict: smallest index wins ties
  return best;
}

}  // namespace detail

/// Scores every class text against the (image, point) pair with the mapped
/// L2 tensor similarity and returns the best class.
inline Classification classify_pair(const FeatureBatch& text_feats, std::span<const double> img,
                                    std::span<const double> pc) {
  require(text_feats.batch() >= 1, Errc::invalid_argument, "no class texts");
  require(text_feats.normalized, Errc::invalid_argument, "class text features must be normalized");
  require(img.size() == text_feats.dim() && pc.size() == text_feats.dim(),
          Errc::dimension_mismatch, "classify_pair: dimension mismatch");
  Classification out;
  out.scores.resize(text_feats.batch());
  const double ip = detail::distance(img, pc);
  for (std::size_t c = 0; c < text_feats.batch(); ++c) {
    const auto t = text_feats.row(c);
    out.scores[c] = map_l2(detail::distance(t, img) + detail::distance(t, pc) + ip, 3);
  }
  out.label = detail::first_argmax(out.scores);
  return out;
}

/// Cosine nearest class text.
inline Classification classify_single(const FeatureBatch& text_feats, std::span<const double> feat) {
  require(text_feats.batch() >= 1, Errc::invalid_argument, "no class texts");
  require(feat.size() == text_feats.dim(), Errc::dimension_mismatch,
          "classify_single: dimension mismatch");
  Classification out;
  out.scores.resize(text_feats.batch());
  for (std::size_t c = 0; c < text_feats.batch(); ++c) out.scores[c] = dot(text_feats.row(c), feat);
  out.label = detail::first_argmax(out.scores);
  return out;
}

struct EvalReport {
  EvalMode mode = EvalMode::T_IP;
  std::vector<std::string> classes;
  std::size_t n_samples = 0;
  std::size_t correct = 0;
  double avg_accuracy = 0.0;    // micro, percent
  double macro_accuracy = 0.0;  // mean of per-class, percent
  std::map<std::string, double> per_class_accuracy;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]

  nlohmann::json to_json() const {
    nlohmann::json pc = nlohmann::json::object();
    for (const auto& [k, v] : per_class_accuracy) pc[k] = v;
    return {{"mode", eval_mode_name(mode)},   {"n_samples", n_samples},
            {"correct", correct},             {"avg_accuracy", avg_accuracy},
            {"macro_accuracy", macro_accuracy}, {"per_class_accuracy", pc},
            {"classes", classes},             {"confusion", confusion}};
  }
};

/// Builds the report from true/predicted class indices.
inline EvalReport make_report(EvalMode mode, const std::vector<std::string>& classes,
                              const std::vector<std::size_t>& truth,
                              const std::vector<std::size_t>& predicted) {
  const std::size_t m = classes.size();
  EvalReport r;
  r.mode = mode;
  r.classes = classes;
  r.n_samples = truth.size();
  r.confusion.assign(m, std::vector<std::size_t>(m, 0));
  for (std::size_t n = 0; n < truth.size(); ++n) {
    ++r.confusion[truth[n]][predicted[n]];
    r.correct += truth[n] == predicted[n] ? 1 : 0;
  }
  r.avg_accuracy = r.n_samples ? 100.0 * static_cast<double>(r.correct) / static_cast<double>(r.n_samples) : 0.0;
  double macro = 0.0;
  std::size_t present = 0;
  for (std::size_t c = 0; c < m; ++c) {
    std::size_t row = 0;
    for (std::size_t x : r.confusion[c]) row += x;
    if (row == 0) continue;
    const double acc = 100.0 * static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
    r.per_class_accuracy[classes[c]] = acc;
    macro += acc;
    ++present;
  }
  r.macro_accuracy = present ? macro / static_cast<double>(present) : 0.0;
  return r;
}

/// Encodes every test record once and classifies it under each requested mode.
template <typename T>
std::vector<EvalReport> evaluate(const EncoderParams<T>& params, const EncoderConfig& enc,
                                 const std::vector<TripletRecord>& test, const PrototypeTable& table,
                                 const std::vector<EvalMode>& modes) {
  require(!test.empty(), Errc::invalid_argument, "no test records");
  const auto class_texts = build_class_texts(table.classes, table);
  Matrix<double> text_raw = Matrix<double>::from_rows(class_texts);
  require(text_raw.cols() == enc.text_in, Errc::dimension_mismatch,
          "prototype text vectors do not match the text encoder input");
  Matrix<double> text_out(text_raw.rows(), params.embed_dim());
  for (std::size_t c = 0; c < text_raw.rows(); ++c) {
    const auto f = to_double(mlp_forward(params.text, row_as<T>(text_raw.row(c))));
    std::copy(f.begin(), f.end(), text_out.row(c).begin());
  }
  const auto text_feats = FeatureBatch::unit(text_out, Modality::text);

  std::vector<std::size_t> truth;
  truth.reserve(test.size());
  for (const auto& rec : test) truth.push_back(table.index_of(rec.class_label));

  const auto enc_batch = encode_batch(params, std::span<const TripletRecord>(test), enc);
  std::vector<EvalReport> reports;
  for (EvalMode mode : modes) {
    std::vector<std::size_t> predicted(test.size());
    parallel_for(test.size(), [&](std::size_t n) {
      switch (mode) {
        case EvalMode::T_IP:
          predicted[n] = classify_pair(text_feats, enc_batch.image.row(n), enc_batch.point.row(n)).label;
          break;
        case EvalMode::T_I:
          predicted[n] = classify_single(text_feats, enc_batch.image.row(n)).label;
          break;
        case EvalMode::T_P:
          predicted[n] = classify_single(text_feats, enc_batch.point.row(n)).label;
          break;
      }
    });
    reports.push_back(make_report(mode, table.classes, truth, predicted));
  }
  return reports;
}

inline std::vector<EvalReport> evaluate(const Checkpoint& ckpt, const std::vector<TripletRecord>& test,
                                        const PrototypeTable& table,
                                        const std::vector<EvalMode>& modes) {
  return evaluate(ckpt.params, ckpt.config.encoder, test, table, modes);
}

/// Fixed-width table: one row per report, Avg. then one column per class.
inline std::string format_report_table(const std::vector<EvalReport>& reports) {
  std::ostringstream os;
  if (reports.empty()) return {};
  const auto& classes = reports.front().classes;
  os << std::left << std::setw(8) << "Mode" << std::right << std::setw(9) << "Avg." << std::setw(9)
     << "Macro";
  for (const auto& c : classes) os << std::setw(10) << c.substr(0, 9);
  os << '\n';
  os << std::fixed << std::setprecision(2);
  for (const auto& r : reports) {
    os << std::left << std::setw(8) << eval_mode_name(r.mode) << std::right << std::setw(9)
       << r.avg_accuracy << std::setw(9) << r.macro_accuracy;
    for (const auto& c : classes) {
      const auto it = r.per_class_accuracy.find(c);
      if (it == r.per_class_accuracy.end()) os << std::setw(10) << "-";
      else os << std::setw(10) << it->second;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ctp
