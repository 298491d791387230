#pragma once

#include <string>
#include <vector>

#include "rulforge/config.hpp"
#include "rulforge/training.hpp"

namespace rulforge::sweep {

enum class SweepAxis {
  kDelta,
  kWindow,
  kFeatures,
  kActivation,
  kIntegrator,
  kKernel,
  kHidden,
  kRt
};

inline SweepAxis sweep_axis_from_string(const std::string& name) {
  if (name == "delta") return SweepAxis::kDelta;
  if (name == "window") return SweepAxis::kWindow;
  if (name == "features") return SweepAxis::kFeatures;
  if (name == "activation") return SweepAxis::kActivation;
  if (name == "integrator") return SweepAxis::kIntegrator;
  if (name == "kernel") return SweepAxis::kKernel;
  if (name == "hidden") return SweepAxis::kHidden;
  if (name == "rt") return SweepAxis::kRt;
  throw ConfigError("unknown sweep axis: " + name);
}

// "1..10" expands to 1,2,...,10; otherwise a comma-separated list.
inline std::vector<std::string> parse_sweep_values(const std::string& spec) {
  std::vector<std::string> out;
  const auto dots = spec.find("..");
  if (dots != std::string::npos && spec.find(',') == std::string::npos) {
    const int lo = config::detail::to_int("values", spec.substr(0, dots));
    const int hi = config::detail::to_int("values", spec.substr(dots + 2));
    if (hi < lo) throw ConfigError("empty sweep range: " + spec);
    for (int v = lo; v <= hi; ++v) out.push_back(std::to_string(v));
    return out;
  }
  std::istringstream ss(spec);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (!token.empty()) out.push_back(token);
  }
  if (out.empty()) throw ConfigError("no sweep values in: " + spec);
  return out;
}

// Which fused-feature rows stay active; excluded rows are zeroed in every
// sample before scaling. Parsed from tokens like "I+V+Q+dQ".
struct FeatureMask {
  bool current = true;
  bool voltage = true;
  bool capacity = true;
  bool qdot = true;

  bool all() const { return current && voltage && capacity && qdot; }

  static FeatureMask parse(const std::string& spec) {
    FeatureMask mask{false, false, false, false};
    std::istringstream ss(spec);
    std::string token;
    while (std::getline(ss, token, '+')) {
      if (token == "I") mask.current = true;
      else if (token == "V") mask.voltage = true;
      else if (token == "Q") mask.capacity = true;
      else if (token == "dQ") mask.qdot = true;
      else throw ConfigError("unknown feature token: '" + token + "' (expected I, V, Q, dQ)");
    }
    if (!mask.current && !mask.voltage && !mask.capacity && !mask.qdot) {
      throw ConfigError("feature set must keep at least one row");
    }
    return mask;
  }

  void apply(std::vector<data::Sample>& samples) const {
    if (all()) return;
    const bool keep[4] = {current, voltage, capacity, qdot};
    for (auto& s : samples) {
      for (int t = 0; t < s.n_steps; ++t) {
        for (int row = 0; row < 4; ++row) {
          if (keep[row]) continue;
          for (int col = 0; col < 6; ++col) {
            s.features[static_cast<std::size_t>((t * 4 + row) * 6 + col)] = 0.0;
          }
        }
      }
    }
  }
};

struct SweepPoint {
  std::string value;
  double rmse = 0.0;
  double r2 = 0.0;
  double mape_percent = 0.0;
  int n_test_samples = 0;
};

struct SweepResult {
  std::vector<SweepPoint> points;
  std::vector<std::string> warnings;
};

// Full pipeline per value over one shared cell split and shared seeds.
inline SweepResult run_sweep(SweepAxis axis, const std::vector<std::string>& values,
                             const std::vector<data::CellHistory>& cells,
                             const config::AppConfig& base) {
  const auto [train_cells, test_cells] =
      data::split_train_test(cells, base.data.holdout_fraction, base.data.split_seed);
  SweepResult result;
  for (const std::string& value : values) {
    config::AppConfig cfg = base;
    FeatureMask mask;
    switch (axis) {
      case SweepAxis::kDelta:
        cfg.prep.window.delta = config::detail::to_int("delta", value);
        break;
      case SweepAxis::kWindow:
        cfg.prep.denoise.window = config::detail::to_int("window", value);
        break;
      case SweepAxis::kFeatures:
        mask = FeatureMask::parse(value);
        break;
      case SweepAxis::kActivation:
        cfg.model.activation = core::activation_from_string(value);
        break;
      case SweepAxis::kIntegrator:
        cfg.model.integrator = model::integrator_from_string(value);
        break;
      case SweepAxis::kKernel:
        cfg.model.kernel = config::detail::to_int("kernel", value);
        break;
      case SweepAxis::kHidden:
        cfg.model.hidden = config::detail::to_int("hidden", value);
        break;
      case SweepAxis::kRt:
        cfg.model.rt_mode = model::rt_mode_from_string(value);
        break;
    }
    auto train_built = data::make_dataset(train_cells, cfg.prep);
    auto test_built = data::make_dataset(test_cells, cfg.prep);
    for (auto& w : train_built.warnings) result.warnings.push_back(value + ": " + w);
    for (auto& w : test_built.warnings) result.warnings.push_back(value + ": " + w);
    if (train_built.samples.empty() || test_built.samples.empty()) {
      throw DataError("sweep value " + value + ": no samples on one side of the split");
    }
    mask.apply(train_built.samples);
    mask.apply(test_built.samples);
    const auto scaler = data::fit_scaler(train_built.samples);
    const auto train_scaled = data::apply_scaler(scaler, train_built.samples);
    const auto test_scaled = data::apply_scaler(scaler, test_built.samples);
    const auto ens = train::ensemble_predict(train_scaled, test_scaled, cfg.model, cfg.train);

    std::vector<metrics::EvalRecord> records;
    records.reserve(test_scaled.size());
    for (std::size_t i = 0; i < test_scaled.size(); ++i) {
      records.push_back({test_scaled[i].label_rul, ens.predictions[i],
                         static_cast<double>(test_scaled[i].cycle_life),
                         test_scaled[i].cell_id});
    }
    SweepPoint point;
    point.value = value;
    point.rmse = metrics::rmse(records);
    point.r2 = metrics::r2(records);
    point.mape_percent = metrics::mape(records);
    point.n_test_samples = static_cast<int>(records.size());
    result.points.push_back(point);
  }
  return result;
}

}  // namespace rulforge::sweep
