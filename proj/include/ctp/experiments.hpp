#pragma once

// Multi-seed loss comparison: every loss is trained on the same records with
// the same seed list and evaluated in all three modes.

#include <cmath>
#include <cstdint>
#include <functional>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctp/dataset.hpp"
#include "ctp/eval.hpp"
#include "ctp/training.hpp"

namespace ctp {

inline const std::vector<std::string>& compared_losses() {
  static const std::vector<std::string> l{"ctp_mask", "ctp_nm", "ctp_cosine", "pairwise"};
  return l;
}

inline const std::vector<EvalMode>& all_eval_modes() {
  static const std::vector<EvalMode> m{EvalMode::T_I, EvalMode::T_P, EvalMode::T_IP};
  return m;
}

/// Sample mean and standard deviation (n - 1 denominator; 0 for n < 2).
struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd r;
  if (xs.empty()) return r;
  for (double x : xs) r.mean += x;
  r.mean /= static_cast<double>(xs.size());
  if (xs.size() < 2) return r;
  double ss = 0.0;
  for (double x : xs) ss += (x - r.mean) * (x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  return r;
}

struct CompareRow {
  std::string loss;
  // accuracy[mode index][seed index], micro percent
  std::vector<std::vector<double>> accuracy;

  MeanStd stats(std::size_t mode) const { return mean_std(accuracy.at(mode)); }
};

struct CompareResult {
  std::vector<std::uint64_t> seeds;
  std::vector<CompareRow> rows;

  const CompareRow& row(const std::string& loss) const {
    for (const auto& r : rows)
      if (r.loss == loss) return r;
    fail(Errc::invalid_argument, "no comparison row for '" + loss + "'");
  }

  nlohmann::json to_json() const {
    nlohmann::json j{{"seeds", seeds}, {"rows", nlohmann::json::array()}};
    for (const auto& r : rows) {
      nlohmann::json jr{{"loss", r.loss}};
      for (std::size_t m = 0; m < all_eval_modes().size(); ++m) {
        const auto s = r.stats(m);
        nlohmann::json cell{{"per_seed", r.accuracy[m]}, {"mean", s.mean}};
        if (seeds.size() > 1) cell["std"] = s.std;
        jr[eval_mode_name(all_eval_modes()[m])] = cell;
      }
      j["rows"].push_back(jr);
    }
    return j;
  }
};

/// Trains `base` once per (loss, seed) and evaluates on `test`. `progress`
/// is called after each run with the loss tag, seed and its reports.
inline CompareResult compare_losses(
    const TrainConfig& base, const std::vector<std::string>& losses,
    const std::vector<std::uint64_t>& seeds, const std::vector<TripletRecord>& train_records,
    const std::vector<TripletRecord>& test_records, const PrototypeTable& table,
    const std::function<void(const std::string&, std::uint64_t, const std::vector<EvalReport>&)>&
        progress = {}) {
  require(!losses.empty(), Errc::invalid_argument, "no losses to compare");
  require(!seeds.empty(), Errc::invalid_argument, "no seeds");
  CompareResult out;
  out.seeds = seeds;
  for (const auto& loss : losses) {
    CompareRow row{loss, std::vector<std::vector<double>>(all_eval_modes().size())};
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.loss = loss;
      cfg.seed = seed;
      const auto result = train(cfg, train_records);
      const auto reports = evaluate(result.checkpoint, test_records, table, all_eval_modes());
      for (std::size_t m = 0; m < reports.size(); ++m) row.accuracy[m].push_back(reports[m].avg_accuracy);
      if (progress) progress(loss, seed, reports);
    }
    out.rows.push_back(std::move(row));
  }
  return out;
}

/// One row per loss, one column group per mode; std columns only with two or
/// more seeds.
inline std::string format_compare_table(const CompareResult& r) {
  const bool with_std = r.seeds.size() > 1;
  std::ostringstream os;
  os << std::left << std::setw(16) << "Loss" << std::right;
  for (EvalMode m : all_eval_modes()) {
    os << std::setw(9) << eval_mode_name(m);
    if (with_std) os << std::setw(8) << "std";
  }
  os << '\n' << std::fixed << std::setprecision(2);
  for (const auto& row : r.rows) {
    os << std::left << std::setw(16) << row.loss << std::right;
    for (std::size_t m = 0; m < all_eval_modes().size(); ++m) {
      const auto s = row.stats(m);
      os << std::setw(9) << s.mean;
      if (with_std) os << std::setw(8) << s.std;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace ctp
