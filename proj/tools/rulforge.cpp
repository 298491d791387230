// rulforge: battery remaining-useful-life prognostics toolkit.
//
// Subcommands: synth, preprocess, train, transfer, sweep, ic-curve. Every run
// writes a manifest.json next to its outputs; all outputs are deterministic
// given flags and seeds.

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "rulforge/config.hpp"
#include "rulforge/dataset.hpp"
#include "rulforge/metrics.hpp"
#include "rulforge/run_manifest.hpp"
#include "rulforge/signal_prep.hpp"
#include "rulforge/sweep.hpp"
#include "rulforge/training.hpp"
#include "rulforge/version.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace fs = std::filesystem;
using namespace rulforge;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  }
};

std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

void apply_thread_cap() {
#ifdef _OPENMP
  if (const char* env = std::getenv("RULFORGE_THREADS")) {
    const int cap = std::atoi(env);
    if (cap > 0) omp_set_num_threads(std::min(cap, omp_get_max_threads()));
  }
#endif
}

config::AppConfig load_config(const std::string& config_path) {
  config::AppConfig cfg;
  if (!config_path.empty()) cfg = config::load_config_file(config_path);
  return cfg;
}

data::FileFormat parse_format(const std::string& name) {
  return data::file_format_from_string(name);
}

void write_predictions_csv(const fs::path& path, const train::CaseReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << "cell_id,cycle,rul_true,rul_pred\n";
  for (std::size_t i = 0; i < report.records.size(); ++i) {
    const auto& r = report.records[i];
    out << r.cell_id << ',' << report.cycles[i] << ',' << fmt_double(r.y_true) << ','
        << fmt_double(r.y_pred) << '\n';
  }
}

nlohmann::json metrics_json(const train::CaseReport& report, const config::AppConfig& cfg) {
  return nlohmann::json{{"case", report.case_id},
                        {"rmse", report.rmse},
                        {"r2", report.r2},
                        {"mape_percent", report.mape_percent},
                        {"n_test_samples", report.n_test_samples},
                        {"seeds", report.seeds},
                        {"config", config::config_to_json(cfg)}};
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
}

// ---------------------------------------------------------------------------

int cmd_synth(int cells, std::uint64_t seed, const std::string& out_dir,
              const std::string& format, const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  cfg.synth.n_cells = cells;
  cfg.synth.seed = seed;
  const auto generated = data::synthesize_cells(cfg.synth);
  const auto fmt = parse_format(format);
  fs::create_directories(out_dir);
  data::write_cells(generated, out_dir, fmt);

  config::RunManifest manifest;
  manifest.command = "synth";
  manifest.config = config::config_to_json(cfg);
  manifest.seeds = {seed};
  for (const auto& cell : generated) {
    manifest.output_paths.push_back(
        (fs::path(out_dir) / (cell.cell_id + (fmt == data::FileFormat::kCsv ? ".csv" : ".jsonl")))
            .string());
  }
  manifest.duration_seconds = timer.seconds();
  manifest.write(fs::path(out_dir) / "manifest.json");
  std::cout << "wrote " << generated.size() << " cells to " << out_dir << "\n";
  return 0;
}

int cmd_preprocess(const std::string& data_dir, const std::string& out_dir,
                   const std::string& format, const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  const auto cells = data::load_cells(data_dir, parse_format(format));
  auto built = data::make_dataset(cells, cfg.prep);
  print_warnings(built.warnings);
  fs::create_directories(out_dir);
  const fs::path features_path = fs::path(out_dir) / "features.csv";
  std::ofstream out(features_path);
  if (!out) throw DataError("cannot write " + features_path.string());
  out << "cell_id,cycle,rul";
  const int n_feat = cfg.prep.window.n_selected * 24;
  for (int f = 0; f < n_feat; ++f) out << ",f" << f;
  out << "\n";
  for (const auto& s : built.samples) {
    out << s.cell_id << ',' << s.cycle_index << ',' << fmt_double(s.label_rul);
    for (const double v : s.features) out << ',' << fmt_double(v);
    out << '\n';
  }
  out.close();

  config::RunManifest manifest;
  manifest.command = "preprocess";
  manifest.config = config::config_to_json(cfg);
  manifest.input_paths = {data_dir};
  manifest.output_paths = {features_path.string()};
  manifest.duration_seconds = timer.seconds();
  manifest.write(fs::path(out_dir) / "manifest.json");
  std::cout << "wrote " << built.samples.size() << " samples to " << features_path.string()
            << "\n";
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir, const std::string& format,
              const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  const auto cells = data::load_cells(data_dir, parse_format(format));
  if (cells.empty()) throw DataError("no cells found in " + data_dir);
  const auto [train_cells, test_cells] =
      data::split_train_test(cells, cfg.data.holdout_fraction, cfg.data.split_seed);

  auto train_built = data::make_dataset(train_cells, cfg.prep);
  auto test_built = data::make_dataset(test_cells, cfg.prep);
  print_warnings(train_built.warnings);
  print_warnings(test_built.warnings);
  if (train_built.samples.empty()) throw DataError("no training samples after preprocessing");
  if (test_built.samples.empty()) throw DataError("no held-out samples after preprocessing");
  const auto scaler = data::fit_scaler(train_built.samples);
  const auto train_scaled = data::apply_scaler(scaler, train_built.samples);
  const auto test_scaled = data::apply_scaler(scaler, test_built.samples);

  const auto ensemble = train::ensemble_predict(train_scaled, test_scaled, cfg.model, cfg.train);

  train::CaseReport report;
  report.case_id = "1";
  report.seeds = ensemble.seeds;
  for (std::size_t i = 0; i < test_scaled.size(); ++i) {
    report.records.push_back({test_scaled[i].label_rul, ensemble.predictions[i],
                              static_cast<double>(test_scaled[i].cycle_life),
                              test_scaled[i].cell_id});
    report.cycles.push_back(test_scaled[i].cycle_index);
  }
  report.n_test_samples = static_cast<int>(report.records.size());
  report.rmse = metrics::rmse(report.records);
  report.r2 = metrics::r2(report.records);
  report.mape_percent = metrics::mape(report.records);

  fs::create_directories(out_dir);
  std::vector<std::string> outputs;
  for (std::size_t run = 0; run < ensemble.runs.size(); ++run) {
    const fs::path ckpt = fs::path(out_dir) / ("run" + std::to_string(run) + ".ckpt");
    core::save_checkpoint(ensemble.runs[run].params, ckpt.string());
    outputs.push_back(ckpt.string());
  }

  const fs::path pred_path = fs::path(out_dir) / "predictions.csv";
  write_predictions_csv(pred_path, report);
  const fs::path metrics_path = fs::path(out_dir) / "metrics.json";
  write_json(metrics_path, metrics_json(report, cfg));

  config::RunManifest manifest;
  manifest.command = "train";
  manifest.config = config::config_to_json(cfg);
  manifest.seeds = report.seeds;
  manifest.input_paths = {data_dir};
  outputs.push_back(pred_path.string());
  outputs.push_back(metrics_path.string());
  manifest.output_paths = outputs;
  manifest.duration_seconds = timer.seconds();
  manifest.write(fs::path(out_dir) / "manifest.json");
  std::cout << "rmse=" << report.rmse << " r2=" << report.r2
            << " mape_percent=" << report.mape_percent << "\n";
  return 0;
}

int cmd_transfer(const std::string& case_id, const std::string& source_dir,
                 const std::string& target_dir, const std::string& freeze_names,
                 const std::string& out_dir, const std::string& format,
                 const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  const auto freeze = train::FreezeMask::from_names(freeze_names);
  const auto tc = train::TransferCase::from_id(case_id, freeze);

  const auto fmt = parse_format(format);
  auto load_split = [&](const std::string& dir) {
    const auto cells = data::load_cells(dir, fmt);
    if (cells.empty()) throw DataError("no cells found in " + dir);
    auto [train_cells, test_cells] =
        data::split_train_test(cells, cfg.data.holdout_fraction, cfg.data.split_seed);
    return train::SplitDataset{std::move(train_cells), std::move(test_cells)};
  };

  const auto source = load_split(source_dir);
  train::SplitDataset target;
  if (tc.direct) {
    if (!target_dir.empty()) {
      std::cerr << "warning: case " << case_id << " trains and tests on --source; --target is ignored\n";
    }
  } else {
    if (target_dir.empty()) throw ConfigError("case " + case_id + " requires --target");
    target = load_split(target_dir);
  }

  auto report = train::run_case(tc, source, target, cfg.prep, cfg.model, cfg.train);
  print_warnings(report.warnings);

  fs::create_directories(out_dir);
  const fs::path pred_path = fs::path(out_dir) / "predictions.csv";
  write_predictions_csv(pred_path, report);
  const fs::path metrics_path = fs::path(out_dir) / "metrics.json";
  auto mj = metrics_json(report, cfg);
  mj["freeze"] = freeze.to_string();
  write_json(metrics_path, mj);

  config::RunManifest manifest;
  manifest.command = "transfer";
  manifest.config = config::config_to_json(cfg);
  manifest.seeds = report.seeds;
  manifest.input_paths = {source_dir};
  if (!target_dir.empty()) manifest.input_paths.push_back(target_dir);
  manifest.output_paths = {pred_path.string(), metrics_path.string()};
  manifest.duration_seconds = timer.seconds();
  manifest.write(fs::path(out_dir) / "manifest.json");
  std::cout << "case=" << report.case_id << " rmse=" << report.rmse << " r2=" << report.r2
            << " mape_percent=" << report.mape_percent << "\n";
  return 0;
}

int cmd_sweep(const std::string& data_dir, const std::string& axis_name,
              const std::string& values_spec, const std::string& out_dir,
              const std::string& format, const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  const auto axis = sweep::sweep_axis_from_string(axis_name);
  const auto values = sweep::parse_sweep_values(values_spec);
  const auto cells = data::load_cells(data_dir, parse_format(format));
  if (cells.empty()) throw DataError("no cells found in " + data_dir);

  const auto result = sweep::run_sweep(axis, values, cells, cfg);
  print_warnings(result.warnings);

  fs::create_directories(out_dir);
  const fs::path csv_path = fs::path(out_dir) / "sweep.csv";
  std::ofstream out(csv_path);
  if (!out) throw DataError("cannot write " + csv_path.string());
  out << "value,rmse,r2,mape_percent,n_test_samples\n";
  for (const auto& p : result.points) {
    out << p.value << ',' << fmt_double(p.rmse) << ',' << fmt_double(p.r2) << ','
        << fmt_double(p.mape_percent) << ',' << p.n_test_samples << '\n';
  }
  out.close();

  for (const auto& p : result.points) {
    config::RunManifest manifest;
    manifest.command = "sweep";
    manifest.config = config::config_to_json(cfg);
    manifest.config["sweep_axis"] = axis_name;
    manifest.config["sweep_value"] = p.value;
    manifest.seeds = {cfg.train.base_seed};
    manifest.input_paths = {data_dir};
    manifest.output_paths = {csv_path.string()};
    manifest.duration_seconds = timer.seconds();
    std::string safe = p.value;
    for (auto& c : safe) {
      if (c == '+' || c == '/' || c == '\\') c = '_';
    }
    manifest.write(fs::path(out_dir) / ("manifest_" + safe + ".json"));
  }
  std::cout << "wrote " << result.points.size() << " sweep rows to " << csv_path.string() << "\n";
  return 0;
}

int cmd_ic_curve(const std::string& data_dir, const std::string& cell_id,
                 const std::string& cycles_spec, const std::string& out_file,
                 const std::string& format, const std::string& config_path) {
  Timer timer;
  config::AppConfig cfg = load_config(config_path);
  const auto cells = data::load_cells(data_dir, parse_format(format));
  const data::CellHistory* cell = nullptr;
  for (const auto& c : cells) {
    if (c.cell_id == cell_id) {
      cell = &c;
      break;
    }
  }
  if (!cell) throw ConfigError("unknown cell id: " + cell_id);

  std::vector<int> cycle_list;
  for (const auto& v : sweep::parse_sweep_values(cycles_spec)) {
    cycle_list.push_back(config::detail::to_int("cycles", v));
  }
  std::sort(cycle_list.begin(), cycle_list.end());

  std::ofstream out(out_file);
  if (!out) throw DataError("cannot write " + out_file);
  out << "cycle,voltage_v,dqdv\n";
  for (const int cyc : cycle_list) {
    if (cyc < 1 || static_cast<std::size_t>(cyc) > cell->cycles.size()) {
      throw ConfigError("cell " + cell_id + " has no cycle " + std::to_string(cyc));
    }
    const auto& sig = cell->cycles[static_cast<std::size_t>(cyc - 1)];
    // Charging segment: rows before the discharge boundary (whole cycle when
    // unmarked).
    const std::size_t n_charge = sig.has_discharge_segment() ? sig.discharge_begin : sig.size();
    if (n_charge < 3) throw DataError("cycle " + std::to_string(cyc) + ": charge segment too short");
    std::vector<double> v(sig.voltage.begin(), sig.voltage.begin() + static_cast<std::ptrdiff_t>(n_charge));
    std::vector<double> q(sig.capacity.begin(), sig.capacity.begin() + static_cast<std::ptrdiff_t>(n_charge));
    const auto [grid, dqdv] = prep::incremental_capacity_curve(v, q, cfg.prep.denoise);
    for (std::size_t k = 0; k < grid.size(); ++k) {
      out << cyc << ',' << fmt_double(grid[k]) << ',' << fmt_double(dqdv[k]) << '\n';
    }
  }
  out.close();

  config::RunManifest manifest;
  manifest.command = "ic-curve";
  manifest.config = config::config_to_json(cfg);
  manifest.input_paths = {data_dir};
  manifest.output_paths = {out_file};
  manifest.duration_seconds = timer.seconds();
  manifest.write(fs::path(out_file).parent_path().empty()
                     ? fs::path("manifest.json")
                     : fs::path(out_file).parent_path() / "manifest.json");
  std::cout << "wrote ic curves for " << cycle_list.size() << " cycles to " << out_file << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  apply_thread_cap();
  CLI::App app{"rulforge: battery remaining-useful-life prognostics toolkit"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  app.fallthrough();  // --config/--format may follow the subcommand name

  std::string config_path, format = "csv";
  app.add_option("--config", config_path, "key = value configuration file")->capture_default_str();
  app.add_option("--format", format, "dataset file format: csv or jsonl")->capture_default_str();

  auto* synth = app.add_subcommand("synth", "generate a synthetic degradation dataset");
  int synth_cells = 8;
  std::uint64_t synth_seed = 1;
  std::string synth_out;
  synth->add_option("--cells", synth_cells, "number of cells")->check(CLI::PositiveNumber);
  synth->add_option("--seed", synth_seed, "generator seed");
  synth->add_option("--out", synth_out, "output directory")->required();

  auto* preprocess = app.add_subcommand("preprocess", "build feature samples from a dataset");
  std::string pre_data, pre_out;
  preprocess->add_option("--data", pre_data, "dataset directory")->required();
  preprocess->add_option("--out", pre_out, "output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "train the RUL model with ensemble averaging");
  std::string train_data, train_out;
  train_cmd->add_option("--data", train_data, "dataset directory")->required();
  train_cmd->add_option("--out", train_out, "output directory")->required();

  auto* transfer = app.add_subcommand("transfer", "run a pre-train/fine-tune transfer case");
  std::string tr_case, tr_source, tr_target, tr_freeze = "alstm", tr_out;
  transfer->add_option("--case", tr_case, "case id: 1,2,3.1,3.2,4,5,6,7.1,7.2,8")->required();
  transfer->add_option("--source", tr_source, "pre-training dataset directory")->required();
  transfer->add_option("--target", tr_target, "fine-tune/test dataset directory");
  transfer->add_option("--freeze", tr_freeze, "comma-separated frozen blocks")
      ->capture_default_str();
  transfer->add_option("--out", tr_out, "output directory")->required();

  auto* sweep_cmd = app.add_subcommand("sweep", "sweep one configuration axis");
  std::string sw_data, sw_axis, sw_values, sw_out;
  sweep_cmd->add_option("--data", sw_data, "dataset directory")->required();
  sweep_cmd
      ->add_option("--axis", sw_axis,
                   "axis: delta|window|features|activation|integrator|kernel|hidden|rt")
      ->required();
  sweep_cmd->add_option("--values", sw_values, "comma list or lo..hi range")->required();
  sweep_cmd->add_option("--out", sw_out, "output directory")->required();

  auto* ic = app.add_subcommand("ic-curve", "export smoothed incremental-capacity curves");
  std::string ic_data, ic_cell, ic_cycles, ic_out;
  ic->add_option("--data", ic_data, "dataset directory")->required();
  ic->add_option("--cell", ic_cell, "cell id")->required();
  ic->add_option("--cycles", ic_cycles, "comma list or lo..hi range of cycle indices")->required();
  ic->add_option("--out", ic_out, "output CSV file")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (*synth) return cmd_synth(synth_cells, synth_seed, synth_out, format, config_path);
    if (*preprocess) return cmd_preprocess(pre_data, pre_out, format, config_path);
    if (*train_cmd) return cmd_train(train_data, train_out, format, config_path);
    if (*transfer) {
      return cmd_transfer(tr_case, tr_source, tr_target, tr_freeze, tr_out, format, config_path);
    }
    if (*sweep_cmd) return cmd_sweep(sw_data, sw_axis, sw_values, sw_out, format, config_path);
    if (*ic) return cmd_ic_curve(ic_data, ic_cell, ic_cycles, ic_out, format, config_path);
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
