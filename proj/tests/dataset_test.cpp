#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "rulforge/dataset.hpp"

using namespace rulforge;
using namespace rulforge::data;

namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Cell with a linear capacity ramp per cycle; amplitude declines with age.
CellHistory handmade_cell(const std::string& id, int n_cycles, int cycle_life,
                          std::size_t points = 24) {
  CellHistory cell;
  cell.cell_id = id;
  cell.cycle_life = cycle_life;
  cell.nominal_capacity_ah = 1.1;
  for (int i = 1; i <= n_cycles; ++i) {
    prep::RawCycleSignals c;
    const double amp = 1.1 * (1.0 - 0.002 * i);
    for (std::size_t k = 0; k < points; ++k) {
      const double s = static_cast<double>(k) / static_cast<double>(points - 1);
      c.t.push_back(static_cast<double>(k) * 10.0);
      c.current.push_back(k < points / 2 ? 2.0 - 0.01 * static_cast<double>(k)
                                         : -1.5 - 0.01 * static_cast<double>(k));
      c.voltage.push_back(3.4 - 0.8 * s);
      c.capacity.push_back(amp * s);
    }
    c.discharge_begin = points / 2;
    cell.cycles.push_back(std::move(c));
  }
  return cell;
}

PrepConfig quick_prep() {
  PrepConfig cfg;
  cfg.denoise.window = 11;
  cfg.grid_size = 32;
  return cfg;
}

}  // namespace

TEST_CASE("csv round trip preserves values and phase boundaries") {
  TempDir dir("rulforge_csv_rt");
  const CellHistory cell = handmade_cell("cellA", 40, 40);
  write_cells({cell}, dir.path, FileFormat::kCsv);
  const auto cells = load_cells(dir.path, FileFormat::kCsv);
  REQUIRE(cells.size() == 1);
  const CellHistory& back = cells[0];
  CHECK(back.cell_id == "cellA");
  CHECK(back.cycle_life == 40);
  CHECK(back.nominal_capacity_ah == doctest::Approx(1.1));
  REQUIRE(back.cycles.size() == cell.cycles.size());
  for (std::size_t k = 0; k < cell.cycles.size(); ++k) {
    CHECK(back.cycles[k].t == cell.cycles[k].t);
    CHECK(back.cycles[k].current == cell.cycles[k].current);
    CHECK(back.cycles[k].voltage == cell.cycles[k].voltage);
    CHECK(back.cycles[k].capacity == cell.cycles[k].capacity);
    CHECK(back.cycles[k].discharge_begin == cell.cycles[k].discharge_begin);
  }
}

TEST_CASE("jsonl round trip") {
  TempDir dir("rulforge_jsonl_rt");
  const CellHistory cell = handmade_cell("cellJ", 12, 12);
  write_cells({cell}, dir.path, FileFormat::kJsonl);
  const auto cells = load_cells(dir.path, FileFormat::kJsonl);
  REQUIRE(cells.size() == 1);
  CHECK(cells[0].cycle_life == 12);
  CHECK(cells[0].cycles[3].capacity == cell.cycles[3].capacity);
  CHECK(cells[0].cycles[3].discharge_begin == cell.cycles[3].discharge_begin);
}

TEST_CASE("empty file loads as an empty list") {
  TempDir dir("rulforge_empty");
  std::ofstream(dir.path / "nothing.csv").close();
  CHECK(load_cells(dir.path, FileFormat::kCsv).empty());
  CHECK(load_cells(dir.path / "nothing.csv", FileFormat::kCsv).empty());
}

TEST_CASE("cycle index gap is a parse error naming the missing cycle") {
  TempDir dir("rulforge_gap");
  const CellHistory cell = handmade_cell("gappy", 4, 4);
  write_cells({cell}, dir.path, FileFormat::kCsv);
  // Rewrite, renumbering cycle 3 to 4 (gap: 1,2,4).
  const auto path = dir.path / "gappy.csv";
  std::ifstream in(path);
  std::string line, content;
  std::getline(in, line);
  content = line + "\n";
  while (std::getline(in, line)) {
    const auto fields_start = line.find(',');
    const auto fields_end = line.find(',', fields_start + 1);
    const std::string cyc = line.substr(fields_start + 1, fields_end - fields_start - 1);
    if (cyc == "4") continue;
    if (cyc == "3") line = line.substr(0, fields_start + 1) + "4" + line.substr(fields_end);
    content += line + "\n";
  }
  in.close();
  std::ofstream(path) << content;
  CHECK_THROWS_WITH_AS(load_cells(path, FileFormat::kCsv), doctest::Contains("cycle 3"),
                       DataError);
}

TEST_CASE("parse errors identify the file and line") {
  TempDir dir("rulforge_badcsv");
  const auto path = dir.path / "bad.csv";
  std::ofstream(path) << "cell_id,cycle,t_s,current_a\n";
  CHECK_THROWS_WITH_AS(load_cells(path, FileFormat::kCsv), doctest::Contains("column"),
                       DataError);

  std::ofstream(path) << "cell_id,cycle,t_s,current_a,voltage_v,capacity_ah,phase\n"
                      << "c,1,0,1,3,0,charge\n"
                      << "c,1,0,1,3,0.1,charge\n";  // t not increasing
  CHECK_THROWS_WITH_AS(load_cells(path, FileFormat::kCsv),
                       doctest::Contains("strictly increasing"), DataError);
}

TEST_CASE("cell validation enforces the scaling bound") {
  CellHistory cell = handmade_cell("big", 2, 2);
  cell.cycle_life = 3000;
  CHECK_THROWS_WITH_AS(cell.validate(), doctest::Contains("3000"), DataError);
  cell.cycle_life = 2999;
  CHECK_NOTHROW(cell.validate());
}

TEST_CASE("synthesize_cells: closed-form end of life with linear fade") {
  SynthConfig cfg;
  cfg.n_cells = 1;
  cfg.seed = 3;
  cfg.life_min = cfg.life_max = 100;
  cfg.fade_a_min = cfg.fade_a_max = 0.3;
  cfg.fade_b_min = cfg.fade_b_max = 1.0;
  cfg.noise_level = 0.0;
  cfg.points_per_cycle = 64;
  const auto cells = synthesize_cells(cfg);
  REQUIRE(cells.size() == 1);
  // ceil(0.2 * L / a) = ceil(66.67) = 67
  CHECK(cells[0].cycle_life == 67);
  CHECK(cells[0].cycles.size() == 67);
  CHECK(cells[0].nominal_capacity_ah == doctest::Approx(1.1));
}

TEST_CASE("synthesize_cells: determinism and distinct lives") {
  SynthConfig cfg;
  cfg.n_cells = 8;
  cfg.seed = 7;
  cfg.life_min = 60;
  cfg.life_max = 200;
  cfg.points_per_cycle = 64;
  const auto a = synthesize_cells(cfg);
  const auto b = synthesize_cells(cfg);
  REQUIRE(a.size() == 8);
  std::set<int> lives;
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].cycle_life == b[i].cycle_life);
    lives.insert(a[i].cycle_life);
    REQUIRE(a[i].cycles.size() == b[i].cycles.size());
    for (std::size_t k = 0; k < a[i].cycles.size(); ++k) {
      CHECK(a[i].cycles[k].capacity == b[i].cycles[k].capacity);  // bitwise
      CHECK(a[i].cycles[k].voltage == b[i].cycles[k].voltage);
    }
  }
  CHECK(lives.size() == 8);  // 8 distinct cycle lives

  SynthConfig other = cfg;
  other.seed = 8;
  const auto c = synthesize_cells(other);
  CHECK(c[0].cycles[0].capacity != a[0].cycles[0].capacity);
}

TEST_CASE("synthesize_cells rejects parameters that never reach end of life") {
  SynthConfig cfg;
  cfg.n_cells = 1;
  // Linear fade hits 80% only near cycle 0.2/a * L = 4000, past the bound.
  cfg.fade_a_min = cfg.fade_a_max = 0.003;
  cfg.fade_b_min = cfg.fade_b_max = 1.0;
  cfg.noise_level = 0.0;
  cfg.life_min = cfg.life_max = 60;
  cfg.points_per_cycle = 64;
  CHECK_THROWS_AS(synthesize_cells(cfg), ConfigError);
}

TEST_CASE("make_dataset: labels, bounds, and warnings") {
  const PrepConfig cfg = quick_prep();
  // cycle_life 40 with defaults (min i = 37) yields labels {3,2,1,0}.
  const auto result = make_dataset({handmade_cell("c40", 40, 40)}, cfg);
  REQUIRE(result.samples.size() == 4);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(result.samples[k].cycle_index == 37 + static_cast<int>(k));
    CHECK(result.samples[k].label_rul == doctest::Approx(3.0 - static_cast<double>(k)));
    CHECK(result.samples[k].label_scaled >= 0.0);
    CHECK(result.samples[k].label_scaled < 1.0);
    CHECK(result.samples[k].label_scaled ==
          doctest::Approx(result.samples[k].label_rul / 3000.0));
    CHECK(result.samples[k].cell_id == "c40");
    CHECK(result.samples[k].cycle_life == 40);
  }
  CHECK(result.warnings.empty());

  // A 36-cycle cell yields no samples plus a warning, not an error.
  const auto shorty = make_dataset({handmade_cell("c36", 36, 36)}, cfg);
  CHECK(shorty.samples.empty());
  REQUIRE(shorty.warnings.size() == 1);
  CHECK(shorty.warnings[0].find("c36") != std::string::npos);

  // Labels decrease strictly with the anchor cycle within one cell.
  const auto longer = make_dataset({handmade_cell("c60", 60, 60)}, cfg);
  for (std::size_t k = 1; k < longer.samples.size(); ++k) {
    CHECK(longer.samples[k].label_rul < longer.samples[k - 1].label_rul);
    CHECK(longer.samples[k].label_rul >= 0.0);
  }
}

TEST_CASE("make_dataset matches build_sample exactly") {
  const PrepConfig cfg = quick_prep();
  const CellHistory cell = handmade_cell("agree", 45, 45);
  const auto result = make_dataset({cell}, cfg);
  REQUIRE(!result.samples.empty());
  for (const auto& s : result.samples) {
    const auto direct =
        prep::build_sample(cell.cycles, s.cycle_index, cfg.window, cfg.denoise, cfg.grid_size);
    CHECK(s.features == direct);
  }
}

TEST_CASE("scaler: affine map, span, extrapolation, round trip") {
  // Two synthetic samples with a known dimension range {1,3}.
  Sample a, b;
  a.n_steps = b.n_steps = 1;
  a.features.assign(24, 1.0);
  b.features.assign(24, 3.0);
  MinMaxScaler scaler = fit_scaler({a, b});
  std::vector<Sample> scaled = apply_scaler(scaler, {a, b});
  CHECK(scaled[0].features[0] == doctest::Approx(0.0));
  CHECK(scaled[1].features[0] == doctest::Approx(1.0));
  Sample mid;
  mid.n_steps = 1;
  mid.features.assign(24, 2.0);
  CHECK(apply_scaler(scaler, {mid})[0].features[5] == doctest::Approx(0.5));

  // Out-of-range test value maps beyond [0,1] unclamped: 5 -> 2.0.
  Sample t;
  t.n_steps = 1;
  t.features.assign(24, 5.0);
  const auto t_scaled = apply_scaler(scaler, {t});
  CHECK(t_scaled[0].features[0] == doctest::Approx(2.0));

  // Round trip within 1e-9.
  std::vector<Sample> round = t_scaled;
  scaler.inverse_transform(round);
  for (std::size_t k = 0; k < 24; ++k) {
    CHECK(round[0].features[k] == doctest::Approx(5.0).epsilon(1e-12));
  }

  CHECK_THROWS_AS(scaler.fit({a}), StateError);
  MinMaxScaler unfitted;
  std::vector<Sample> v{a};
  CHECK_THROWS_AS(unfitted.transform(v), StateError);
  CHECK_THROWS_AS(fit_scaler({}), ContractError);
}

TEST_CASE("scaler: constant dimensions map to zero") {
  Sample a, b;
  a.n_steps = b.n_steps = 1;
  a.features.assign(24, 7.0);
  b.features.assign(24, 7.0);
  b.features[3] = 9.0;  // only dim 3 varies
  MinMaxScaler scaler = fit_scaler({a, b});
  auto out = apply_scaler(scaler, {a, b});
  CHECK(out[0].features[0] == 0.0);
  CHECK(out[1].features[0] == 0.0);
  CHECK(out[1].features[3] == doctest::Approx(1.0));
}

TEST_CASE("scaler: training span is exactly [0,1] on real samples") {
  const PrepConfig cfg = quick_prep();
  const auto built = make_dataset({handmade_cell("span", 50, 50)}, cfg);
  MinMaxScaler scaler = fit_scaler(built.samples);
  const auto scaled = apply_scaler(scaler, built.samples);
  std::vector<double> lo(24, 1e300), hi(24, -1e300);
  for (const auto& s : scaled) {
    for (std::size_t k = 0; k < s.features.size(); ++k) {
      lo[k % 24] = std::min(lo[k % 24], s.features[k]);
      hi[k % 24] = std::max(hi[k % 24], s.features[k]);
    }
  }
  for (std::size_t d = 0; d < 24; ++d) {
    if (scaler.maxs()[d] > scaler.mins()[d]) {
      CHECK(lo[d] == doctest::Approx(0.0).epsilon(1e-9));
      CHECK(hi[d] == doctest::Approx(1.0).epsilon(1e-9));
    }
  }
}

TEST_CASE("split_by_median: order statistics and tie handling") {
  std::vector<CellHistory> cells;
  for (int life : {100, 200, 300, 400}) {
    cells.push_back(handmade_cell("c" + std::to_string(life), 2, life));
  }
  const auto [lower, upper] = split_by_median(cells);
  REQUIRE(lower.size() == 2);
  REQUIRE(upper.size() == 2);
  CHECK(lower[0].cycle_life == 100);
  CHECK(lower[1].cycle_life == 200);
  CHECK(upper[0].cycle_life == 300);
  CHECK(upper[1].cycle_life == 400);

  // All equal lives: ties go to the upper half.
  std::vector<CellHistory> same{handmade_cell("a", 2, 50), handmade_cell("b", 2, 50)};
  const auto [lo2, up2] = split_by_median(same);
  CHECK(lo2.empty());
  CHECK(up2.size() == 2);

  // Partition property.
  CHECK(lower.size() + upper.size() == cells.size());
  std::set<std::string> ids;
  for (const auto& c : lower) ids.insert(c.cell_id);
  for (const auto& c : upper) ids.insert(c.cell_id);
  CHECK(ids.size() == cells.size());

  CHECK_THROWS_AS(split_by_median({handmade_cell("solo", 2, 100)}), DataError);
}

TEST_CASE("split_train_test is deterministic and covers all cells") {
  std::vector<CellHistory> cells;
  for (int k = 0; k < 8; ++k) cells.push_back(handmade_cell("c" + std::to_string(k), 2, 100 + k));
  const auto [train1, test1] = split_train_test(cells, 0.25, 11);
  const auto [train2, test2] = split_train_test(cells, 0.25, 11);
  CHECK(test1.size() == 2);
  CHECK(train1.size() == 6);
  REQUIRE(test1.size() == test2.size());
  for (std::size_t i = 0; i < test1.size(); ++i) CHECK(test1[i].cell_id == test2[i].cell_id);
}
