#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "rulforge/errors.hpp"
#include "rulforge/rng.hpp"
#include "rulforge/signal_prep.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace rulforge::data {

using prep::DenoiseConfig;
using prep::FeatureVector6;
using prep::RawCycleSignals;
using prep::SampleWindowConfig;

// Labels are scaled by this factor; cycle lives at or above it are rejected
// so that scaled labels stay inside [0, 1).
inline constexpr double kRulScale = 3000.0;

struct CellHistory {
  std::string cell_id;
  std::vector<RawCycleSignals> cycles;  // cycle i is cycles[i-1]
  int cycle_life = 0;
  double nominal_capacity_ah = std::numeric_limits<double>::quiet_NaN();

  void validate() const {
    if (cell_id.empty()) throw DataError("cell without an id");
    if (cycle_life < 1) throw DataError("cell " + cell_id + ": cycle_life must be positive");
    if (cycle_life >= static_cast<int>(kRulScale)) {
      throw DataError("cell " + cell_id + ": cycle_life " + std::to_string(cycle_life) +
                      " breaks the RUL scaling bound " + std::to_string(static_cast<int>(kRulScale)));
    }
    for (std::size_t k = 0; k < cycles.size(); ++k) {
      try {
        cycles[k].validate();
      } catch (const DataError& e) {
        throw DataError("cell " + cell_id + ", cycle " + std::to_string(k + 1) + ": " + e.what());
      }
    }
  }
};

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

enum class FileFormat { kCsv, kJsonl };

inline FileFormat file_format_from_string(const std::string& name) {
  if (name == "csv") return FileFormat::kCsv;
  if (name == "jsonl") return FileFormat::kJsonl;
  throw ConfigError("unknown dataset format: " + name);
}

namespace detail {

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_double(const std::string& text, const std::string& where) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw std::invalid_argument(text);
    return v;
  } catch (const std::exception&) {
    throw DataError(where + ": bad number '" + text + "'");
  }
}

}  // namespace detail

// One CSV file per cell plus a sidecar metadata file `<cell>.meta.csv`.
inline void write_cell_csv(const CellHistory& cell, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto data_path = dir / (cell.cell_id + ".csv");
  std::ofstream out(data_path);
  if (!out) throw DataError("cannot write " + data_path.string());
  out << "cell_id,cycle,t_s,current_a,voltage_v,capacity_ah,phase\n";
  for (std::size_t k = 0; k < cell.cycles.size(); ++k) {
    const RawCycleSignals& c = cell.cycles[k];
    for (std::size_t r = 0; r < c.size(); ++r) {
      const bool discharge = c.has_discharge_segment() && r >= c.discharge_begin;
      out << cell.cell_id << ',' << (k + 1) << ',' << detail::format_double(c.t[r]) << ','
          << detail::format_double(c.current[r]) << ',' << detail::format_double(c.voltage[r])
          << ',' << detail::format_double(c.capacity[r]) << ','
          << (discharge ? "discharge" : "charge") << '\n';
    }
  }
  const auto meta_path = dir / (cell.cell_id + ".meta.csv");
  std::ofstream meta(meta_path);
  if (!meta) throw DataError("cannot write " + meta_path.string());
  meta << "cell_id,cycle_life,nominal_capacity_ah\n";
  meta << cell.cell_id << ',' << cell.cycle_life << ','
       << (std::isnan(cell.nominal_capacity_ah) ? std::string()
                                                : detail::format_double(cell.nominal_capacity_ah))
       << '\n';
}

// One JSONL file per cell: a metadata object first, then one object per
// cycle with arrays t, i, v, q and fields cell_id, cycle, phase_boundaries.
inline void write_cell_jsonl(const CellHistory& cell, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto path = dir / (cell.cell_id + ".jsonl");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  nlohmann::json meta{{"cell_id", cell.cell_id}, {"cycle_life", cell.cycle_life}};
  if (!std::isnan(cell.nominal_capacity_ah)) meta["nominal_capacity_ah"] = cell.nominal_capacity_ah;
  out << meta.dump() << '\n';
  for (std::size_t k = 0; k < cell.cycles.size(); ++k) {
    const RawCycleSignals& c = cell.cycles[k];
    nlohmann::json rec{{"cell_id", cell.cell_id}, {"cycle", k + 1}};
    rec["t"] = c.t;
    rec["i"] = c.current;
    rec["v"] = c.voltage;
    rec["q"] = c.capacity;
    rec["phase_boundaries"] = c.has_discharge_segment()
                                  ? nlohmann::json::array({c.discharge_begin})
                                  : nlohmann::json::array();
    out << rec.dump() << '\n';
  }
}

inline void write_cells(const std::vector<CellHistory>& cells, const std::filesystem::path& dir,
                        FileFormat format = FileFormat::kCsv) {
  for (const auto& cell : cells) {
    if (format == FileFormat::kCsv) {
      write_cell_csv(cell, dir);
    } else {
      write_cell_jsonl(cell, dir);
    }
  }
}

inline std::optional<CellHistory> load_cell_csv(const std::filesystem::path& data_path) {
  std::ifstream in(data_path);
  if (!in) throw DataError("cannot open " + data_path.string());
  std::string line;
  std::size_t line_no = 0;
  if (!std::getline(in, line)) return std::nullopt;  // empty file: no cell
  ++line_no;
  const auto header = detail::split_csv_line(line);
  const std::vector<std::string> expected{"cell_id", "cycle",      "t_s",  "current_a",
                                          "voltage_v", "capacity_ah", "phase"};
  if (header != expected) {
    throw DataError(data_path.string() + ":1: bad or missing column header");
  }

  CellHistory cell;
  int current_cycle = 0;
  RawCycleSignals sig;
  bool saw_discharge = false;
  auto flush_cycle = [&]() {
    if (current_cycle == 0) return;
    if (!saw_discharge) sig.discharge_begin = RawCycleSignals::kUnmarked;
    cell.cycles.push_back(std::move(sig));
    sig = RawCycleSignals{};
    saw_discharge = false;
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = data_path.string() + ":" + std::to_string(line_no);
    const auto fields = detail::split_csv_line(line);
    if (fields.size() != 7) {
      throw DataError(where + ": expected 7 columns, got " + std::to_string(fields.size()));
    }
    if (cell.cell_id.empty()) {
      cell.cell_id = fields[0];
    } else if (fields[0] != cell.cell_id) {
      throw DataError(where + ": mixed cell ids '" + fields[0] + "' and '" + cell.cell_id + "'");
    }
    const int cyc = static_cast<int>(detail::parse_double(fields[1], where));
    if (cyc != current_cycle) {
      if (cyc != current_cycle + 1) {
        throw DataError(where + ": cell " + cell.cell_id + ": cycle index gap, expected cycle " +
                        std::to_string(current_cycle + 1) + " but found " + std::to_string(cyc));
      }
      flush_cycle();
      current_cycle = cyc;
    }
    const double t = detail::parse_double(fields[2], where);
    if (!sig.t.empty() && !(t > sig.t.back())) {
      throw DataError(where + ": cell " + cell.cell_id + ", cycle " + std::to_string(cyc) +
                      ": time not strictly increasing");
    }
    if (fields[6] == "discharge") {
      if (!saw_discharge) {
        sig.discharge_begin = sig.t.size();
        saw_discharge = true;
      }
    } else if (fields[6] != "charge") {
      throw DataError(where + ": unknown phase '" + fields[6] + "'");
    } else if (saw_discharge) {
      throw DataError(where + ": charge row after discharge within cycle " + std::to_string(cyc));
    }
    sig.t.push_back(t);
    sig.current.push_back(detail::parse_double(fields[3], where));
    sig.voltage.push_back(detail::parse_double(fields[4], where));
    sig.capacity.push_back(detail::parse_double(fields[5], where));
  }
  flush_cycle();
  if (cell.cycles.empty()) return std::nullopt;

  // Sidecar metadata.
  auto meta_path = data_path;
  meta_path.replace_extension();
  meta_path += ".meta.csv";
  std::ifstream meta(meta_path);
  if (!meta) throw DataError("missing metadata file " + meta_path.string());
  std::string meta_line;
  std::getline(meta, meta_line);  // header
  if (!std::getline(meta, meta_line)) throw DataError(meta_path.string() + ": missing data row");
  const auto mf = detail::split_csv_line(meta_line);
  if (mf.size() < 2) throw DataError(meta_path.string() + ": expected cell_id,cycle_life[,nominal]");
  cell.cycle_life = static_cast<int>(detail::parse_double(mf[1], meta_path.string()));
  if (mf.size() > 2 && !mf[2].empty()) {
    cell.nominal_capacity_ah = detail::parse_double(mf[2], meta_path.string());
  }
  cell.validate();
  return cell;
}

inline std::optional<CellHistory> load_cell_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  CellHistory cell;
  std::string line;
  std::size_t line_no = 0;
  int expected_cycle = 1;
  bool has_meta = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const std::string where = path.string() + ":" + std::to_string(line_no);
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": bad json: " + e.what());
    }
    if (!rec.contains("cycle")) {
      // Metadata object.
      if (!rec.contains("cell_id") || !rec.contains("cycle_life")) {
        throw DataError(where + ": metadata object needs cell_id and cycle_life");
      }
      cell.cell_id = rec["cell_id"].get<std::string>();
      cell.cycle_life = rec["cycle_life"].get<int>();
      if (rec.contains("nominal_capacity_ah")) {
        cell.nominal_capacity_ah = rec["nominal_capacity_ah"].get<double>();
      }
      has_meta = true;
      continue;
    }
    const int cyc = rec["cycle"].get<int>();
    if (cyc != expected_cycle) {
      throw DataError(where + ": cycle index gap, expected cycle " +
                      std::to_string(expected_cycle) + " but found " + std::to_string(cyc));
    }
    ++expected_cycle;
    for (const char* key : {"t", "i", "v", "q"}) {
      if (!rec.contains(key)) throw DataError(where + ": missing array '" + key + "'");
    }
    RawCycleSignals sig;
    sig.t = rec["t"].get<std::vector<double>>();
    sig.current = rec["i"].get<std::vector<double>>();
    sig.voltage = rec["v"].get<std::vector<double>>();
    sig.capacity = rec["q"].get<std::vector<double>>();
    if (rec.contains("phase_boundaries") && !rec["phase_boundaries"].empty()) {
      sig.discharge_begin = rec["phase_boundaries"][0].get<std::size_t>();
    }
    cell.cycles.push_back(std::move(sig));
  }
  if (cell.cycles.empty() && !has_meta) return std::nullopt;
  if (!has_meta) throw DataError(path.string() + ": missing metadata line");
  cell.validate();
  return cell;
}

// Loads a single cell file or every cell file in a directory (sorted by
// filename for determinism).
inline std::vector<CellHistory> load_cells(const std::filesystem::path& path, FileFormat format) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::is_directory(path)) {
    const std::string ext = format == FileFormat::kCsv ? ".csv" : ".jsonl";
    for (const auto& entry : std::filesystem::directory_iterator(path)) {
      if (!entry.is_regular_file()) continue;
      const auto name = entry.path().filename().string();
      if (entry.path().extension() == ext && name.find(".meta.csv") == std::string::npos) {
        files.push_back(entry.path());
      }
    }
    std::sort(files.begin(), files.end());
  } else if (std::filesystem::exists(path)) {
    files.push_back(path);
  } else {
    throw DataError("dataset path does not exist: " + path.string());
  }
  std::vector<CellHistory> cells;
  for (const auto& file : files) {
    auto cell = format == FileFormat::kCsv ? load_cell_csv(file) : load_cell_jsonl(file);
    if (cell.has_value()) cells.push_back(std::move(*cell));
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Synthetic degradation generator
// ---------------------------------------------------------------------------

// Capacity fades as Qmax(i) = Q0 * (1 - a*(i/L)^b) plus seeded noise; a cell
// reaches end of life when Qmax crosses 0.8 * Q0. Every cycle is a CC-CV
// charge followed by a two-stage rippled discharge with an affine-plus-
// exponential voltage sag.
struct SynthConfig {
  int n_cells = 8;
  std::uint64_t seed = 1;
  double fade_a_min = 0.25;
  double fade_a_max = 0.45;
  double fade_b_min = 1.0;
  double fade_b_max = 1.6;
  double noise_level = 0.002;  // relative per-cycle capacity noise
  int life_min = 150;          // fade horizon L, cycles
  int life_max = 320;
  int points_per_cycle = 96;
  double nominal_capacity_ah = 1.1;
  double discharge_rate_high = 2.0;  // stage-1 C-rate
  double discharge_rate_low = 1.0;   // stage-2 C-rate
  double current_ripple = 0.05;

  void validate() const {
    if (n_cells < 1) throw ConfigError("n_cells must be positive");
    if (points_per_cycle < 64) throw ConfigError("points_per_cycle must be at least 64");
    if (life_min < 40 || life_max < life_min) throw ConfigError("bad cycle-life range");
    if (fade_a_min <= 0 || fade_a_max < fade_a_min) throw ConfigError("bad fade a range");
    if (fade_b_min <= 0 || fade_b_max < fade_b_min) throw ConfigError("bad fade b range");
    if (noise_level < 0) throw ConfigError("noise_level must be non-negative");
  }
};

namespace detail {

inline RawCycleSignals synth_cycle(const SynthConfig& cfg, double qmax, double age_fraction,
                                   double i_stage1, double i_stage2, double ripple_phase) {
  RawCycleSignals sig;
  const int n = cfg.points_per_cycle;
  const int n_charge = std::max(8, (2 * n) / 5);
  const int n_dis = n - n_charge;
  sig.t.reserve(static_cast<std::size_t>(n));
  sig.current.reserve(static_cast<std::size_t>(n));
  sig.voltage.reserve(static_cast<std::size_t>(n));
  sig.capacity.reserve(static_cast<std::size_t>(n));

  // Charge: constant current, then an exponential CV taper after 70%.
  const double i_cc = 3.6 * cfg.nominal_capacity_ah;
  double q = 0.0;
  double weight_total = 0.0;
  std::vector<double> currents(static_cast<std::size_t>(n_charge));
  for (int k = 0; k < n_charge; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(n_charge - 1);
    currents[static_cast<std::size_t>(k)] = s < 0.7 ? i_cc : i_cc * std::exp(-6.0 * (s - 0.7));
    weight_total += currents[static_cast<std::size_t>(k)];
  }
  const double t_charge = 900.0;
  for (int k = 0; k < n_charge; ++k) {
    const double s = static_cast<double>(k) / static_cast<double>(n_charge - 1);
    q += qmax * currents[static_cast<std::size_t>(k)] / weight_total;
    sig.t.push_back(s * t_charge);
    sig.current.push_back(currents[static_cast<std::size_t>(k)]);
    sig.voltage.push_back(3.0 + 0.55 * std::min(s / 0.7, 1.0) + 0.05 * s);
    sig.capacity.push_back(std::min(q, qmax));
  }

  // Discharge: two-stage current with a mild sinusoidal ripple; the voltage
  // sags affinely and then drops through an exponential knee near empty.
  sig.discharge_begin = sig.t.size();
  const double v_start = 3.28 - 0.06 * age_fraction;
  double t = t_charge;
  for (int k = 0; k < n_dis; ++k) {
    const double x = static_cast<double>(k + 1) / static_cast<double>(n_dis);
    const double stage = x < 0.5 ? i_stage1 : i_stage2;
    const double amps =
        stage * (1.0 + cfg.current_ripple * std::sin(6.283185307179586 * (3.0 * x + ripple_phase)));
    const double dq = qmax / static_cast<double>(n_dis);
    t += 3600.0 * dq / amps;
    sig.t.push_back(t);
    sig.current.push_back(-amps);
    sig.voltage.push_back(v_start - 0.62 * x - 0.45 * std::exp(7.0 * (x - 1.0)));
    sig.capacity.push_back(qmax * x);
  }
  return sig;
}

}  // namespace detail

inline std::vector<CellHistory> synthesize_cells(const SynthConfig& cfg) {
  cfg.validate();
  std::vector<CellHistory> cells;
  cells.reserve(static_cast<std::size_t>(cfg.n_cells));
  for (int c = 0; c < cfg.n_cells; ++c) {
    rng::Stream params(rng::mix(cfg.seed, static_cast<std::uint64_t>(c) * 2));
    rng::Stream noise(rng::mix(cfg.seed, static_cast<std::uint64_t>(c) * 2 + 1));

    const double horizon = static_cast<double>(params.uniform_int(cfg.life_min, cfg.life_max));
    const double fade_a = params.uniform(cfg.fade_a_min, cfg.fade_a_max);
    const double fade_b = params.uniform(cfg.fade_b_min, cfg.fade_b_max);
    const double i_stage1 =
        cfg.nominal_capacity_ah * cfg.discharge_rate_high * params.uniform(0.9, 1.1);
    const double i_stage2 =
        cfg.nominal_capacity_ah * cfg.discharge_rate_low * params.uniform(0.9, 1.1);
    const double ripple_phase = params.uniform();

    CellHistory cell;
    std::ostringstream id;
    id << "synth-" << cfg.seed << "-" << c;
    cell.cell_id = id.str();
    cell.nominal_capacity_ah = cfg.nominal_capacity_ah;

    const double q0 = cfg.nominal_capacity_ah;
    const double eol = 0.8 * q0;
    for (int i = 1;; ++i) {
      if (i >= static_cast<int>(kRulScale)) {
        throw ConfigError("synthesis parameters never reach end of life before cycle " +
                          std::to_string(static_cast<int>(kRulScale)) +
                          " (fade too shallow); adjust fade_a/life range");
      }
      const double frac = static_cast<double>(i) / horizon;
      const double fade = fade_b == 1.0 ? fade_a * frac : fade_a * std::pow(frac, fade_b);
      const double qmax = q0 * (1.0 - fade) + cfg.noise_level * q0 * noise.normal();
      cell.cycles.push_back(
          detail::synth_cycle(cfg, qmax, frac, i_stage1, i_stage2, ripple_phase));
      if (qmax <= eol) {
        cell.cycle_life = i;
        break;
      }
    }
    cell.validate();
    cells.push_back(std::move(cell));
  }
  return cells;
}

// ---------------------------------------------------------------------------
// Samples and dataset assembly
// ---------------------------------------------------------------------------

struct Sample {
  std::vector<double> features;  // n_steps x 4 x 6, row-major, chronological
  int n_steps = 0;
  double label_rul = 0.0;     // cycles
  double label_scaled = 0.0;  // label_rul / kRulScale
  std::string cell_id;
  int cycle_index = 0;
  int cycle_life = 0;
};

struct PrepConfig {
  DenoiseConfig denoise;
  SampleWindowConfig window;
  int grid_size = 1000;
  int sample_stride = 1;  // stride over anchor cycles i

  void validate() const {
    denoise.validate();
    window.validate();
    if (grid_size < 2) throw ConfigError("grid_size must be at least 2");
    if (sample_stride < 1) throw ConfigError("sample_stride must be >= 1");
  }
};

struct DatasetBuildResult {
  std::vector<Sample> samples;
  std::vector<std::string> warnings;
};

// One sample per valid anchor cycle per cell. Per-cycle statistics are
// computed once per cell and shared across overlapping windows; the result is
// identical to calling prep::build_sample per anchor.
inline DatasetBuildResult make_dataset(const std::vector<CellHistory>& cells,
                                       const PrepConfig& cfg) {
  cfg.validate();
  DatasetBuildResult result;
  for (const auto& cell : cells) {
    cell.validate();
    const int usable = std::min<int>(cell.cycle_life, static_cast<int>(cell.cycles.size()));
    const int min_i = cfg.window.min_valid_cycle();
    if (usable < min_i) {
      result.warnings.push_back("cell " + cell.cell_id + ": only " + std::to_string(usable) +
                                " usable cycles, needs " + std::to_string(min_i) +
                                "; skipped");
      continue;
    }
    // Cache per-cycle feature rows.
    const std::size_t n_cached = static_cast<std::size_t>(usable);
    std::vector<FeatureVector6> f_current(n_cached), f_voltage(n_cached), f_capacity(n_cached),
        f_qdot(n_cached);
#ifdef _OPENMP
#pragma omp parallel for schedule(dynamic)
#endif
    for (std::int64_t idx = 0; idx < static_cast<std::int64_t>(n_cached); ++idx) {
      const RawCycleSignals& cyc = cell.cycles[static_cast<std::size_t>(idx)];
      f_current[idx] = prep::statistical_features(prep::denoise(cyc.current, cfg.denoise));
      f_voltage[idx] = prep::statistical_features(prep::denoise(cyc.voltage, cfg.denoise));
      f_capacity[idx] = prep::statistical_features(prep::denoise(cyc.capacity, cfg.denoise));
      f_qdot[idx] = prep::qdot_features(cyc, cfg.denoise, cfg.grid_size);
    }
    for (int i = min_i; i <= usable; i += cfg.sample_stride) {
      const auto selected = prep::select_window_cycles(i, cfg.window);
      Sample s;
      s.n_steps = cfg.window.n_selected;
      s.features.reserve(selected.size() * 24);
      for (const int j : selected) {
        const std::size_t jj = static_cast<std::size_t>(j - 1);
        const std::size_t pp = static_cast<std::size_t>(j - cfg.window.delta - 1);
        prep::CycleFeatureMatrix m;
        m.current_stats = f_current[jj];
        m.voltage_stats = f_voltage[jj];
        m.capacity_stats = f_capacity[jj];
        m.qdot_delta = prep::delta_features(f_qdot[jj], f_qdot[pp]);
        const auto flat = m.flat();
        s.features.insert(s.features.end(), flat.begin(), flat.end());
      }
      s.label_rul = static_cast<double>(cell.cycle_life - i);
      s.label_scaled = s.label_rul / kRulScale;
      s.cell_id = cell.cell_id;
      s.cycle_index = i;
      s.cycle_life = cell.cycle_life;
      result.samples.push_back(std::move(s));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Min-max scaling over the 24 flattened feature dimensions
// ---------------------------------------------------------------------------

class MinMaxScaler {
 public:
  void fit(const std::vector<Sample>& train) {
    if (fitted_) throw StateError("scaler already fitted");
    if (train.empty()) throw ContractError("cannot fit scaler on an empty training set");
    dims_ = 24;
    min_.assign(dims_, std::numeric_limits<double>::infinity());
    max_.assign(dims_, -std::numeric_limits<double>::infinity());
    for (const auto& s : train) {
      if (s.features.size() % dims_ != 0) {
        throw ShapeError("sample feature length is not a multiple of 24");
      }
      for (std::size_t k = 0; k < s.features.size(); ++k) {
        const std::size_t d = k % dims_;
        min_[d] = std::min(min_[d], s.features[k]);
        max_[d] = std::max(max_[d], s.features[k]);
      }
    }
    fitted_ = true;
  }

  bool fitted() const { return fitted_; }
  const std::vector<double>& mins() const { return min_; }
  const std::vector<double>& maxs() const { return max_; }

  // x -> (x - min) / (max - min); constant dimensions map to 0; values
  // outside the fitted range are not clamped.
  void transform(std::vector<Sample>& samples) const {
    require_fitted();
    for (auto& s : samples) {
      for (std::size_t k = 0; k < s.features.size(); ++k) {
        const std::size_t d = k % dims_;
        const double span = max_[d] - min_[d];
        s.features[k] = span > 0.0 ? (s.features[k] - min_[d]) / span : 0.0;
      }
    }
  }

  void inverse_transform(std::vector<Sample>& samples) const {
    require_fitted();
    for (auto& s : samples) {
      for (std::size_t k = 0; k < s.features.size(); ++k) {
        const std::size_t d = k % dims_;
        const double span = max_[d] - min_[d];
        s.features[k] = span > 0.0 ? s.features[k] * span + min_[d] : min_[d];
      }
    }
  }

 private:
  void require_fitted() const {
    if (!fitted_) throw StateError("scaler used before fit");
  }

  std::vector<double> min_, max_;
  std::size_t dims_ = 0;
  bool fitted_ = false;
};

inline MinMaxScaler fit_scaler(const std::vector<Sample>& train) {
  MinMaxScaler scaler;
  scaler.fit(train);
  return scaler;
}

inline std::vector<Sample> apply_scaler(const MinMaxScaler& scaler, std::vector<Sample> samples) {
  scaler.transform(samples);
  return samples;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

// Median split by cycle life: lives strictly below the median go to the lower
// half, ties and above to the upper half.
inline std::pair<std::vector<CellHistory>, std::vector<CellHistory>> split_by_median(
    const std::vector<CellHistory>& cells) {
  if (cells.size() < 2) throw DataError("median split needs at least 2 cells");
  std::vector<double> lives;
  lives.reserve(cells.size());
  for (const auto& c : cells) lives.push_back(static_cast<double>(c.cycle_life));
  std::sort(lives.begin(), lives.end());
  const std::size_t n = lives.size();
  const double median =
      (n % 2 == 1) ? lives[n / 2] : 0.5 * (lives[n / 2 - 1] + lives[n / 2]);
  std::pair<std::vector<CellHistory>, std::vector<CellHistory>> out;
  for (const auto& c : cells) {
    if (static_cast<double>(c.cycle_life) < median) {
      out.first.push_back(c);
    } else {
      out.second.push_back(c);
    }
  }
  return out;
}

// Deterministic per-cell holdout split (seeded shuffle, then fraction).
inline std::pair<std::vector<CellHistory>, std::vector<CellHistory>> split_train_test(
    const std::vector<CellHistory>& cells, double holdout_fraction, std::uint64_t seed) {
  if (holdout_fraction < 0.0 || holdout_fraction >= 1.0) {
    throw ConfigError("holdout_fraction must be in [0,1)");
  }
  std::vector<std::size_t> order(cells.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng::Stream stream(rng::mix(seed, 0xda7a5e7));
  stream.shuffle(order.begin(), order.end());
  std::size_t n_test =
      static_cast<std::size_t>(std::llround(holdout_fraction * static_cast<double>(cells.size())));
  if (holdout_fraction > 0.0 && cells.size() >= 2) {
    n_test = std::clamp<std::size_t>(n_test, 1, cells.size() - 1);
  }
  std::pair<std::vector<CellHistory>, std::vector<CellHistory>> out;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < order.size() - n_test) {
      out.first.push_back(cells[order[i]]);
    } else {
      out.second.push_back(cells[order[i]]);
    }
  }
  return out;
}

}  // namespace rulforge::data
