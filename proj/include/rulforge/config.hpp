#pragma once

#include <fstream>
#include <sstream>
#include <string>

#include <json.hpp>

#include "rulforge/dataset.hpp"
#include "rulforge/model.hpp"
#include "rulforge/training.hpp"

namespace rulforge::config {

struct DataSplitConfig {
  double holdout_fraction = 0.25;
  std::uint64_t split_seed = 1;
};

// Aggregate tool configuration; file keys mirror the field paths one-to-one,
// e.g. `model.hidden = 64` or `prep.denoise.window = 191`.
struct AppConfig {
  model::ModelConfig model;
  train::TrainConfig train;
  data::PrepConfig prep;
  DataSplitConfig data;
  data::SynthConfig synth;
};

namespace detail {

inline int to_int(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const int v = std::stoi(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + value + "'");
  }
}

inline double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + value + "'");
  }
}

inline std::uint64_t to_u64(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const std::uint64_t v = std::stoull(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected unsigned integer, got '" + value + "'");
  }
}

}  // namespace detail

inline void apply_kv(AppConfig& cfg, const std::string& key, const std::string& value) {
  using detail::to_double;
  using detail::to_int;
  using detail::to_u64;
  if (key == "model.hidden") cfg.model.hidden = to_int(key, value);
  else if (key == "model.kernel") cfg.model.kernel = to_int(key, value);
  else if (key == "model.alstm_hidden") cfg.model.alstm_hidden = to_int(key, value);
  else if (key == "model.odelstm_hidden") cfg.model.odelstm_hidden = to_int(key, value);
  else if (key == "model.dropout") cfg.model.dropout = to_double(key, value);
  else if (key == "model.activation") cfg.model.activation = core::activation_from_string(value);
  else if (key == "model.integrator") cfg.model.integrator = model::integrator_from_string(value);
  else if (key == "model.ode_substeps") cfg.model.ode_substeps = to_int(key, value);
  else if (key == "model.rt_mode") cfg.model.rt_mode = model::rt_mode_from_string(value);
  else if (key == "model.output_scale") cfg.model.output_scale = to_double(key, value);
  else if (key == "model.seq_len") cfg.model.seq_len = to_int(key, value);
  else if (key == "model.feat_dim") cfg.model.feat_dim = to_int(key, value);
  else if (key == "train.epochs") cfg.train.epochs = to_int(key, value);
  else if (key == "train.batch_size") cfg.train.batch_size = to_int(key, value);
  else if (key == "train.learning_rate") cfg.train.learning_rate = to_double(key, value);
  else if (key == "train.weight_decay") cfg.train.weight_decay = to_double(key, value);
  else if (key == "train.beta1") cfg.train.beta1 = to_double(key, value);
  else if (key == "train.beta2") cfg.train.beta2 = to_double(key, value);
  else if (key == "train.eps") cfg.train.eps = to_double(key, value);
  else if (key == "train.n_runs") cfg.train.n_runs = to_int(key, value);
  else if (key == "train.base_seed") cfg.train.base_seed = to_u64(key, value);
  else if (key == "prep.delta") cfg.prep.window.delta = to_int(key, value);
  else if (key == "prep.sample_window") cfg.prep.window.window = to_int(key, value);
  else if (key == "prep.n_selected") cfg.prep.window.n_selected = to_int(key, value);
  else if (key == "prep.cycle_stride") cfg.prep.window.stride = to_int(key, value);
  else if (key == "prep.grid_size") cfg.prep.grid_size = to_int(key, value);
  else if (key == "prep.sample_stride") cfg.prep.sample_stride = to_int(key, value);
  else if (key == "prep.denoise.method")
    cfg.prep.denoise.method = prep::denoise_method_from_string(value);
  else if (key == "prep.denoise.window") cfg.prep.denoise.window = to_int(key, value);
  else if (key == "prep.denoise.polyorder") cfg.prep.denoise.polyorder = to_int(key, value);
  else if (key == "prep.denoise.gaussian_sigma")
    cfg.prep.denoise.gaussian_sigma = to_double(key, value);
  else if (key == "data.holdout_fraction") cfg.data.holdout_fraction = to_double(key, value);
  else if (key == "data.split_seed") cfg.data.split_seed = to_u64(key, value);
  else if (key == "synth.n_cells") cfg.synth.n_cells = to_int(key, value);
  else if (key == "synth.seed") cfg.synth.seed = to_u64(key, value);
  else if (key == "synth.fade_a_min") cfg.synth.fade_a_min = to_double(key, value);
  else if (key == "synth.fade_a_max") cfg.synth.fade_a_max = to_double(key, value);
  else if (key == "synth.fade_b_min") cfg.synth.fade_b_min = to_double(key, value);
  else if (key == "synth.fade_b_max") cfg.synth.fade_b_max = to_double(key, value);
  else if (key == "synth.noise_level") cfg.synth.noise_level = to_double(key, value);
  else if (key == "synth.life_min") cfg.synth.life_min = to_int(key, value);
  else if (key == "synth.life_max") cfg.synth.life_max = to_int(key, value);
  else if (key == "synth.points_per_cycle") cfg.synth.points_per_cycle = to_int(key, value);
  else if (key == "synth.nominal_capacity_ah")
    cfg.synth.nominal_capacity_ah = to_double(key, value);
  else if (key == "synth.discharge_rate_high")
    cfg.synth.discharge_rate_high = to_double(key, value);
  else if (key == "synth.discharge_rate_low")
    cfg.synth.discharge_rate_low = to_double(key, value);
  else if (key == "synth.current_ripple") cfg.synth.current_ripple = to_double(key, value);
  else throw ConfigError("unknown config key: " + key);
}

// Line-oriented `key = value` file; '#' starts a comment.
inline AppConfig load_config_file(const std::string& path, AppConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    const auto strip = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      const auto e = s.find_last_not_of(" \t\r");
      return s.substr(b, e - b + 1);
    };
    const std::string stripped = strip(line);
    if (stripped.empty()) continue;
    const auto eq = stripped.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(path + ":" + std::to_string(line_no) + ": expected key = value");
    }
    apply_kv(base, strip(stripped.substr(0, eq)), strip(stripped.substr(eq + 1)));
  }
  return base;
}

inline nlohmann::json config_to_json(const AppConfig& cfg) {
  nlohmann::json j;
  j["model"] = {{"hidden", cfg.model.hidden},
                {"kernel", cfg.model.kernel},
                {"alstm_hidden", cfg.model.alstm_hidden},
                {"odelstm_hidden", cfg.model.odelstm_hidden},
                {"dropout", cfg.model.dropout},
                {"activation", core::to_string(cfg.model.activation)},
                {"integrator", model::to_string(cfg.model.integrator)},
                {"ode_substeps", cfg.model.ode_substeps},
                {"rt_mode", model::to_string(cfg.model.rt_mode)},
                {"output_scale", cfg.model.output_scale},
                {"seq_len", cfg.model.seq_len},
                {"feat_dim", cfg.model.feat_dim}};
  j["train"] = {{"epochs", cfg.train.epochs},
                {"batch_size", cfg.train.batch_size},
                {"learning_rate", cfg.train.learning_rate},
                {"weight_decay", cfg.train.weight_decay},
                {"beta1", cfg.train.beta1},
                {"beta2", cfg.train.beta2},
                {"eps", cfg.train.eps},
                {"n_runs", cfg.train.n_runs},
                {"base_seed", cfg.train.base_seed}};
  j["prep"] = {{"delta", cfg.prep.window.delta},
               {"sample_window", cfg.prep.window.window},
               {"n_selected", cfg.prep.window.n_selected},
               {"cycle_stride", cfg.prep.window.stride},
               {"grid_size", cfg.prep.grid_size},
               {"sample_stride", cfg.prep.sample_stride},
               {"denoise",
                {{"method", prep::to_string(cfg.prep.denoise.method)},
                 {"window", cfg.prep.denoise.window},
                 {"polyorder", cfg.prep.denoise.polyorder},
                 {"gaussian_sigma", cfg.prep.denoise.gaussian_sigma}}}};
  j["data"] = {{"holdout_fraction", cfg.data.holdout_fraction},
               {"split_seed", cfg.data.split_seed}};
  j["synth"] = {{"n_cells", cfg.synth.n_cells},
                {"seed", cfg.synth.seed},
                {"fade_a_min", cfg.synth.fade_a_min},
                {"fade_a_max", cfg.synth.fade_a_max},
                {"fade_b_min", cfg.synth.fade_b_min},
                {"fade_b_max", cfg.synth.fade_b_max},
                {"noise_level", cfg.synth.noise_level},
                {"life_min", cfg.synth.life_min},
                {"life_max", cfg.synth.life_max},
                {"points_per_cycle", cfg.synth.points_per_cycle},
                {"nominal_capacity_ah", cfg.synth.nominal_capacity_ah},
                {"discharge_rate_high", cfg.synth.discharge_rate_high},
                {"discharge_rate_low", cfg.synth.discharge_rate_low},
                {"current_ripple", cfg.synth.current_ripple}};
  return j;
}

}  // namespace rulforge::config
