#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "rulforge/errors.hpp"

namespace rulforge::metrics {

struct EvalRecord {
  double y_true = 0.0;      // observed RUL, cycles
  double y_pred = 0.0;      // predicted RUL, cycles
  double cycle_life = 0.0;  // MAPE denominator
  std::string cell_id;
};

inline double rmse(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("rmse of zero records");
  double acc = 0.0;
  for (const auto& r : records) {
    const double d = r.y_true - r.y_pred;
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(records.size()));
}

// Percent error against each record's cycle life (not the per-sample RUL), so
// records at end of life (y_true = 0) are well-defined.
inline double mape(const std::vector<EvalRecord>& records) {
  if (records.empty()) throw ContractError("mape of zero records");
  double acc = 0.0;
  for (const auto& r : records) {
    if (r.cycle_life <= 0.0) throw ContractError("mape needs positive cycle lives");
    acc += std::abs(r.y_true - r.y_pred) / r.cycle_life;
  }
  return acc / static_cast<double>(records.size()) * 100.0;
}

inline double r2(const std::vector<EvalRecord>& records) {
  if (records.size() < 2) throw ContractError("r2 needs at least 2 records");
  double mean = 0.0;
  for (const auto& r : records) mean += r.y_true;
  mean /= static_cast<double>(records.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& r : records) {
    ss_res += (r.y_true - r.y_pred) * (r.y_true - r.y_pred);
    ss_tot += (r.y_true - mean) * (r.y_true - mean);
  }
  if (ss_tot == 0.0) throw ContractError("r2 undefined: constant observed values");
  return 1.0 - ss_res / ss_tot;
}

}  // namespace rulforge::metrics
