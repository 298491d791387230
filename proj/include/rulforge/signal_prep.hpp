#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rulforge/errors.hpp"

namespace rulforge::prep {

// Four equal-length series for one charge-discharge cycle: time (s), current
// (A), voltage (V), capacity (Ah). `discharge_begin` is the index of the first
// discharge row; kUnmarked when the record carries no phase information.
struct RawCycleSignals {
  static constexpr std::size_t kUnmarked = static_cast<std::size_t>(-1);

  std::vector<double> t;
  std::vector<double> current;
  std::vector<double> voltage;
  std::vector<double> capacity;
  std::size_t discharge_begin = kUnmarked;

  std::size_t size() const { return t.size(); }

  bool has_discharge_segment() const {
    return discharge_begin != kUnmarked && discharge_begin < t.size();
  }

  void validate(std::size_t min_len = 8) const {
    const std::size_t n = t.size();
    if (current.size() != n || voltage.size() != n || capacity.size() != n) {
      throw DataError("cycle series lengths differ");
    }
    if (n < min_len) {
      throw DataError("cycle has " + std::to_string(n) + " points, need at least " +
                      std::to_string(min_len));
    }
    for (std::size_t i = 1; i < n; ++i) {
      if (!(t[i] > t[i - 1])) {
        throw DataError("time not strictly increasing at row " + std::to_string(i));
      }
    }
  }
};

// Capacity interpolated onto an evenly spaced current grid.
struct DerivedCapacity {
  std::vector<double> grid_current;  // ascending, uniform
  std::vector<double> qdot;
};

struct FeatureVector6 {
  double mean = 0.0;
  double stddev = 0.0;
  double min = 0.0;
  double max = 0.0;
  double variance = 0.0;
  double median = 0.0;

  std::array<double, 6> as_array() const { return {mean, stddev, min, max, variance, median}; }
};

inline std::array<double, 6> operator-(const FeatureVector6& a, const FeatureVector6& b) {
  std::array<double, 6> out{};
  const auto av = a.as_array(), bv = b.as_array();
  for (std::size_t i = 0; i < 6; ++i) out[i] = av[i] - bv[i];
  return out;
}

// Fused per-cycle feature matrix; row order is fixed: current, voltage,
// capacity, derived-capacity delta.
struct CycleFeatureMatrix {
  FeatureVector6 current_stats;
  FeatureVector6 voltage_stats;
  FeatureVector6 capacity_stats;
  std::array<double, 6> qdot_delta{};

  std::array<double, 24> flat() const {
    std::array<double, 24> out{};
    const std::array<std::array<double, 6>, 4> rows = {
        current_stats.as_array(), voltage_stats.as_array(), capacity_stats.as_array(),
        qdot_delta};
    for (std::size_t r = 0; r < 4; ++r) {
      for (std::size_t c = 0; c < 6; ++c) out[r * 6 + c] = rows[r][c];
    }
    return out;
  }
};

enum class DenoiseMethod { kSavitzkyGolay, kGaussian, kNone };

inline DenoiseMethod denoise_method_from_string(const std::string& name) {
  if (name == "savitzky_golay") return DenoiseMethod::kSavitzkyGolay;
  if (name == "gaussian") return DenoiseMethod::kGaussian;
  if (name == "none") return DenoiseMethod::kNone;
  throw ConfigError("unknown denoise method: " + name);
}

inline std::string to_string(DenoiseMethod m) {
  switch (m) {
    case DenoiseMethod::kSavitzkyGolay: return "savitzky_golay";
    case DenoiseMethod::kGaussian: return "gaussian";
    case DenoiseMethod::kNone: return "none";
  }
  return "?";
}

struct DenoiseConfig {
  DenoiseMethod method = DenoiseMethod::kSavitzkyGolay;
  int window = 191;          // odd
  int polyorder = 3;         // < window
  double gaussian_sigma = 0.0;  // <= 0: window / 6

  void validate() const {
    if (window < 1 || window % 2 == 0) {
      throw ConfigError("denoise window must be odd and positive, got " + std::to_string(window));
    }
    if (polyorder < 0 || polyorder >= window) {
      throw ConfigError("polyorder must satisfy 0 <= polyorder < window");
    }
  }
};

namespace detail {

// Solves the dense symmetric system M z = rhs in place (partial pivoting).
inline std::vector<double> solve_dense(std::vector<double> m, std::vector<double> rhs) {
  const std::size_t n = rhs.size();
  for (std::size_t col = 0; col < n; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < n; ++r) {
      if (std::abs(m[r * n + col]) > std::abs(m[pivot * n + col])) pivot = r;
    }
    if (m[pivot * n + col] == 0.0) throw DataError("singular normal equations");
    if (pivot != col) {
      for (std::size_t c = 0; c < n; ++c) std::swap(m[col * n + c], m[pivot * n + c]);
      std::swap(rhs[col], rhs[pivot]);
    }
    const double inv = 1.0 / m[col * n + col];
    for (std::size_t r = col + 1; r < n; ++r) {
      const double f = m[r * n + col] * inv;
      if (f == 0.0) continue;
      for (std::size_t c = col; c < n; ++c) m[r * n + c] -= f * m[col * n + c];
      rhs[r] -= f * rhs[col];
    }
  }
  std::vector<double> z(n);
  for (std::size_t r = n; r-- > 0;) {
    double acc = rhs[r];
    for (std::size_t c = r + 1; c < n; ++c) acc -= m[r * n + c] * z[c];
    z[r] = acc / m[r * n + r];
  }
  return z;
}

// Least-squares polynomial fit over the given offsets evaluated at offset 0.
// Offsets are normalized by `scale` for conditioning.
inline std::vector<double> fit_coefficients(const std::vector<double>& offsets, int polyorder,
                                            double scale) {
  const std::size_t npts = offsets.size();
  const int p = std::min<int>(polyorder, static_cast<int>(npts) - 1);
  const std::size_t terms = static_cast<std::size_t>(p) + 1;
  // A[i][m] = (offsets[i]/scale)^m
  std::vector<double> a(npts * terms);
  for (std::size_t i = 0; i < npts; ++i) {
    const double u = offsets[i] / scale;
    double pw = 1.0;
    for (std::size_t m = 0; m < terms; ++m) {
      a[i * terms + m] = pw;
      pw *= u;
    }
  }
  std::vector<double> ata(terms * terms, 0.0);
  for (std::size_t i = 0; i < npts; ++i) {
    for (std::size_t r = 0; r < terms; ++r) {
      for (std::size_t c = 0; c < terms; ++c) {
        ata[r * terms + c] += a[i * terms + r] * a[i * terms + c];
      }
    }
  }
  std::vector<double> e0(terms, 0.0);
  e0[0] = 1.0;
  const std::vector<double> z = solve_dense(std::move(ata), std::move(e0));
  std::vector<double> coef(npts, 0.0);
  for (std::size_t i = 0; i < npts; ++i) {
    for (std::size_t m = 0; m < terms; ++m) coef[i] += a[i * terms + m] * z[m];
  }
  return coef;
}

struct SgKernel {
  std::vector<double> interior;               // length = window
  std::vector<std::vector<double>> left_edge;  // row c: window [0, c+half]
};

// Kernels depend only on (window, polyorder); cached per thread.
inline const SgKernel& sg_kernel(int window, int polyorder) {
  thread_local std::map<std::pair<int, int>, SgKernel> cache;
  const auto key = std::make_pair(window, polyorder);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const int half = (window - 1) / 2;
  const double scale = std::max(1, half);
  SgKernel kernel;
  {
    std::vector<double> offsets(window);
    for (int j = 0; j < window; ++j) offsets[j] = j - half;
    kernel.interior = fit_coefficients(offsets, polyorder, scale);
  }
  kernel.left_edge.resize(static_cast<std::size_t>(half));
  for (int c = 0; c < half; ++c) {
    std::vector<double> offsets(static_cast<std::size_t>(c + half + 1));
    for (int j = 0; j <= c + half; ++j) offsets[static_cast<std::size_t>(j)] = j - c;
    kernel.left_edge[static_cast<std::size_t>(c)] = fit_coefficients(offsets, polyorder, scale);
  }
  return cache.emplace(key, std::move(kernel)).first->second;
}

inline std::vector<double> savitzky_golay(const std::vector<double>& x, int window,
                                          int polyorder) {
  const std::size_t n = x.size();
  if (n <= 2) return x;
  // Shrink to the largest odd window <= n; shrink polyorder below the window.
  int w = std::min<int>(window, static_cast<int>(n));
  if (w % 2 == 0) --w;
  const int p = std::min(polyorder, w - 1);
  const int half = (w - 1) / 2;
  const SgKernel& kernel = sg_kernel(w, p);

  std::vector<double> out(n);
  // Left edge: one-sided truncated windows.
  for (int c = 0; c < half; ++c) {
    const auto& coef = kernel.left_edge[static_cast<std::size_t>(c)];
    double acc = 0.0;
    for (std::size_t j = 0; j < coef.size(); ++j) acc += coef[j] * x[j];
    out[static_cast<std::size_t>(c)] = acc;
  }
  // Interior: fixed convolution kernel.
  for (std::size_t c = static_cast<std::size_t>(half); c + static_cast<std::size_t>(half) < n;
       ++c) {
    double acc = 0.0;
    const double* xp = x.data() + c - static_cast<std::size_t>(half);
    for (int j = 0; j < w; ++j) acc += kernel.interior[static_cast<std::size_t>(j)] * xp[j];
    out[c] = acc;
  }
  // Right edge by mirror symmetry of the left-edge kernels.
  for (int c = 0; c < half; ++c) {
    const auto& coef = kernel.left_edge[static_cast<std::size_t>(c)];
    const std::size_t center = n - 1 - static_cast<std::size_t>(c);
    double acc = 0.0;
    for (std::size_t j = 0; j < coef.size(); ++j) acc += coef[j] * x[n - 1 - j];
    out[center] = acc;
  }
  return out;
}

inline std::vector<double> gaussian_smooth(const std::vector<double>& x, int window,
                                           double sigma) {
  const std::size_t n = x.size();
  if (n <= 1) return x;
  int w = std::min<int>(window, static_cast<int>(n));
  if (w % 2 == 0) --w;
  const int half = (w - 1) / 2;
  const double sg = sigma > 0.0 ? sigma : w / 6.0;
  std::vector<double> kern(static_cast<std::size_t>(w));
  double norm = 0.0;
  for (int j = -half; j <= half; ++j) {
    const double v = std::exp(-0.5 * (j / sg) * (j / sg));
    kern[static_cast<std::size_t>(j + half)] = v;
    norm += v;
  }
  for (auto& v : kern) v /= norm;

  // Symmetric reflection at the boundaries: ... x2 x1 | x0 x1 x2 ...
  auto reflect = [n](std::int64_t i) {
    const std::int64_t m = static_cast<std::int64_t>(n);
    while (i < 0 || i >= m) {
      if (i < 0) i = -i - 1;
      if (i >= m) i = 2 * m - 1 - i;
    }
    return static_cast<std::size_t>(i);
  };
  std::vector<double> out(n);
  for (std::size_t c = 0; c < n; ++c) {
    double acc = 0.0;
    for (int j = -half; j <= half; ++j) {
      acc += kern[static_cast<std::size_t>(j + half)] * x[reflect(static_cast<std::int64_t>(c) + j)];
    }
    out[c] = acc;
  }
  return out;
}

}  // namespace detail

// Sorts (current, capacity) pairs by current (duplicates averaged), then
// linearly interpolates capacity onto `grid_size` evenly spaced current
// values spanning [min(I), max(I)].
inline DerivedCapacity capacity_derivative_tracking(const std::vector<double>& current,
                                                    const std::vector<double>& capacity,
                                                    int grid_size) {
  if (current.size() != capacity.size()) throw DataError("current/capacity length mismatch");
  if (current.size() < 2) {
    throw DataError("capacity derivative tracking needs at least 2 points, got " +
                    std::to_string(current.size()));
  }
  if (grid_size < 2) throw ConfigError("grid_size must be at least 2");

  std::vector<std::size_t> order(current.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return current[a] < current[b]; });

  // Collapse duplicate abscissae by averaging their capacities.
  std::vector<double> xs, ys;
  xs.reserve(order.size());
  ys.reserve(order.size());
  std::size_t i = 0;
  while (i < order.size()) {
    const double x = current[order[i]];
    double sum = 0.0;
    std::size_t count = 0;
    while (i < order.size() && current[order[i]] == x) {
      sum += capacity[order[i]];
      ++count;
      ++i;
    }
    xs.push_back(x);
    ys.push_back(sum / static_cast<double>(count));
  }
  if (xs.front() == xs.back()) throw DataError("constant current series: degenerate range");

  DerivedCapacity out;
  out.grid_current.resize(static_cast<std::size_t>(grid_size));
  out.qdot.resize(static_cast<std::size_t>(grid_size));
  const double lo = xs.front(), hi = xs.back();
  std::size_t seg = 0;
  for (int g = 0; g < grid_size; ++g) {
    const double u = lo + (hi - lo) * static_cast<double>(g) / static_cast<double>(grid_size - 1);
    out.grid_current[static_cast<std::size_t>(g)] = u;
    while (seg + 2 < xs.size() && xs[seg + 1] <= u) ++seg;
    const double x0 = xs[seg], x1 = xs[seg + 1];
    const double w = (u - x0) / (x1 - x0);
    out.qdot[static_cast<std::size_t>(g)] = ys[seg] + w * (ys[seg + 1] - ys[seg]);
  }
  // Pin the endpoints exactly.
  out.grid_current.front() = lo;
  out.grid_current.back() = hi;
  out.qdot.front() = ys.front();
  out.qdot.back() = ys.back();
  return out;
}

inline std::vector<double> denoise(const std::vector<double>& x, const DenoiseConfig& cfg) {
  cfg.validate();
  switch (cfg.method) {
    case DenoiseMethod::kNone: return x;
    case DenoiseMethod::kSavitzkyGolay: return detail::savitzky_golay(x, cfg.window, cfg.polyorder);
    case DenoiseMethod::kGaussian: return detail::gaussian_smooth(x, cfg.window, cfg.gaussian_sigma);
  }
  return x;
}

// Population statistics (divide by n); median averages the two central order
// statistics for even n.
inline FeatureVector6 statistical_features(const std::vector<double>& x) {
  if (x.empty()) throw DataError("statistical features of an empty series");
  FeatureVector6 f;
  const std::size_t n = x.size();
  double sum = 0.0;
  f.min = x[0];
  f.max = x[0];
  for (const double v : x) {
    sum += v;
    f.min = std::min(f.min, v);
    f.max = std::max(f.max, v);
  }
  f.mean = sum / static_cast<double>(n);
  double sq = 0.0;
  for (const double v : x) {
    const double d = v - f.mean;
    sq += d * d;
  }
  f.variance = sq / static_cast<double>(n);
  f.stddev = std::sqrt(f.variance);
  std::vector<double> sorted = x;
  std::sort(sorted.begin(), sorted.end());
  f.median = (n % 2 == 1) ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  return f;
}

inline std::array<double, 6> delta_features(const FeatureVector6& now,
                                            const FeatureVector6& past) {
  return now - past;
}

// Derived-capacity statistics for one cycle: CDT on the discharge segment when
// the record marks one (full cycle otherwise), then denoise, then statistics.
inline FeatureVector6 qdot_features(const RawCycleSignals& cycle, const DenoiseConfig& cfg,
                                    int grid_size) {
  std::vector<double> i_seg, q_seg;
  if (cycle.has_discharge_segment()) {
    i_seg.assign(cycle.current.begin() + static_cast<std::ptrdiff_t>(cycle.discharge_begin),
                 cycle.current.end());
    q_seg.assign(cycle.capacity.begin() + static_cast<std::ptrdiff_t>(cycle.discharge_begin),
                 cycle.capacity.end());
  } else {
    i_seg = cycle.current;
    q_seg = cycle.capacity;
  }
  const DerivedCapacity derived = capacity_derivative_tracking(i_seg, q_seg, grid_size);
  return statistical_features(denoise(derived.qdot, cfg));
}

// Full fused matrix for cycle i given the already-derived features of cycle
// i - delta. Rows: F(I~), F(V~), F(Q~), dF(Qdot~).
inline CycleFeatureMatrix fuse_cycle(const RawCycleSignals& cycle,
                                     const FeatureVector6& past_qdot_features,
                                     const DenoiseConfig& cfg, int grid_size) {
  CycleFeatureMatrix m;
  m.current_stats = statistical_features(denoise(cycle.current, cfg));
  m.voltage_stats = statistical_features(denoise(cycle.voltage, cfg));
  m.capacity_stats = statistical_features(denoise(cycle.capacity, cfg));
  m.qdot_delta = delta_features(qdot_features(cycle, cfg, grid_size), past_qdot_features);
  return m;
}

struct SampleWindowConfig {
  int delta = 9;         // cycle interval for delta features
  int window = 30;       // most-recent-cycles window
  int n_selected = 10;   // cycles taken from the window
  int stride = 3;        // spacing of selected cycles

  void validate() const {
    if (delta < 1) throw ConfigError("delta must be >= 1");
    if (n_selected < 1 || stride < 1) throw ConfigError("n_selected and stride must be >= 1");
    if ((n_selected - 1) * stride + 1 > window) {
      throw ConfigError("selection span exceeds the cycle window");
    }
  }

  // Smallest 1-based cycle index with a full window and valid delta lookups.
  int min_valid_cycle() const {
    return std::max(window, window - stride + delta + 1);
  }
};

// Selected cycle indices for a sample anchored at cycle i: newest included,
// stepping back by `stride`, returned in chronological order.
inline std::vector<int> select_window_cycles(int i, const SampleWindowConfig& cfg) {
  cfg.validate();
  if (i < cfg.min_valid_cycle()) {
    throw ContractError("cycle " + std::to_string(i) + " is below the minimum valid index " +
                        std::to_string(cfg.min_valid_cycle()));
  }
  std::vector<int> out(static_cast<std::size_t>(cfg.n_selected));
  for (int k = 0; k < cfg.n_selected; ++k) {
    out[static_cast<std::size_t>(cfg.n_selected - 1 - k)] = i - k * cfg.stride;
  }
  return out;
}

// Feature tensor for one sample: n_selected x 4 x 6, row-major, chronological
// slices. `cycles` holds the cell's cycles with 1-based indexing.
inline std::vector<double> build_sample(const std::vector<RawCycleSignals>& cycles, int i,
                                        const SampleWindowConfig& window_cfg,
                                        const DenoiseConfig& denoise_cfg, int grid_size) {
  const std::vector<int> selected = select_window_cycles(i, window_cfg);
  if (static_cast<std::size_t>(i) > cycles.size()) {
    throw ContractError("cycle " + std::to_string(i) + " beyond recorded history of " +
                        std::to_string(cycles.size()));
  }
  std::vector<double> out;
  out.reserve(selected.size() * 24);
  for (const int j : selected) {
    const RawCycleSignals& cur = cycles[static_cast<std::size_t>(j - 1)];
    const RawCycleSignals& past = cycles[static_cast<std::size_t>(j - window_cfg.delta - 1)];
    const FeatureVector6 past_qdot = qdot_features(past, denoise_cfg, grid_size);
    const CycleFeatureMatrix m = fuse_cycle(cur, past_qdot, denoise_cfg, grid_size);
    const auto flat = m.flat();
    out.insert(out.end(), flat.begin(), flat.end());
  }
  return out;
}

// Smoothed incremental-capacity curve: dQ/dV on the sorted voltage grid of a
// charging segment, denoised before and after differentiation.
inline std::pair<std::vector<double>, std::vector<double>> incremental_capacity_curve(
    const std::vector<double>& voltage, const std::vector<double>& capacity,
    const DenoiseConfig& cfg) {
  if (voltage.size() != capacity.size()) throw DataError("voltage/capacity length mismatch");
  std::vector<std::size_t> order(voltage.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return voltage[a] < voltage[b]; });
  std::vector<double> vs, qs;
  std::size_t i = 0;
  while (i < order.size()) {
    const double v = voltage[order[i]];
    double sum = 0.0;
    std::size_t count = 0;
    while (i < order.size() && voltage[order[i]] == v) {
      sum += capacity[order[i]];
      ++count;
      ++i;
    }
    vs.push_back(v);
    qs.push_back(sum / static_cast<double>(count));
  }
  if (vs.size() < 3) {
    throw DataError("incremental capacity needs at least 3 distinct voltages, got " +
                    std::to_string(vs.size()));
  }
  const std::vector<double> q_sm = denoise(qs, cfg);
  const std::size_t n = vs.size();
  std::vector<double> dqdv(n);
  dqdv[0] = (q_sm[1] - q_sm[0]) / (vs[1] - vs[0]);
  for (std::size_t k = 1; k + 1 < n; ++k) {
    dqdv[k] = (q_sm[k + 1] - q_sm[k - 1]) / (vs[k + 1] - vs[k - 1]);
  }
  dqdv[n - 1] = (q_sm[n - 1] - q_sm[n - 2]) / (vs[n - 1] - vs[n - 2]);
  return {std::move(vs), denoise(dqdv, cfg)};
}

}  // namespace rulforge::prep
