#pragma once

// Independent Savitzky-Golay oracle: per-window dense least squares solved via
// Gauss-Jordan elimination, evaluating the fitted polynomial at the window
// center. Shares no code with the library implementation.

#include <cmath>
#include <cstddef>
#include <vector>

namespace testutil {

// Fits y ~ poly(order) over points (u_j, y_j) and returns the value at u = 0.
inline double lsq_fit_at_zero(const std::vector<double>& u, const std::vector<double>& y,
                              int order) {
  const std::size_t npts = u.size();
  const int p = std::min<int>(order, static_cast<int>(npts) - 1);
  const std::size_t terms = static_cast<std::size_t>(p) + 1;
  std::vector<double> ata(terms * terms, 0.0), aty(terms, 0.0);
  for (std::size_t i = 0; i < npts; ++i) {
    std::vector<double> row(terms);
    double pw = 1.0;
    for (std::size_t m = 0; m < terms; ++m) {
      row[m] = pw;
      pw *= u[i];
    }
    for (std::size_t r = 0; r < terms; ++r) {
      aty[r] += row[r] * y[i];
      for (std::size_t c = 0; c < terms; ++c) ata[r * terms + c] += row[r] * row[c];
    }
  }
  // Gauss-Jordan with partial pivoting.
  std::vector<double> aug(terms * (terms + 1));
  for (std::size_t r = 0; r < terms; ++r) {
    for (std::size_t c = 0; c < terms; ++c) aug[r * (terms + 1) + c] = ata[r * terms + c];
    aug[r * (terms + 1) + terms] = aty[r];
  }
  for (std::size_t col = 0; col < terms; ++col) {
    std::size_t pivot = col;
    for (std::size_t r = col + 1; r < terms; ++r) {
      if (std::abs(aug[r * (terms + 1) + col]) > std::abs(aug[pivot * (terms + 1) + col])) {
        pivot = r;
      }
    }
    for (std::size_t c = 0; c <= terms; ++c) {
      std::swap(aug[col * (terms + 1) + c], aug[pivot * (terms + 1) + c]);
    }
    const double d = aug[col * (terms + 1) + col];
    for (std::size_t c = 0; c <= terms; ++c) aug[col * (terms + 1) + c] /= d;
    for (std::size_t r = 0; r < terms; ++r) {
      if (r == col) continue;
      const double f = aug[r * (terms + 1) + col];
      for (std::size_t c = 0; c <= terms; ++c) {
        aug[r * (terms + 1) + c] -= f * aug[col * (terms + 1) + c];
      }
    }
  }
  // beta_0 is the fitted value at u = 0.
  return aug[terms];
}

// Full-signal oracle matching the shrink and truncated-edge conventions.
inline std::vector<double> savgol_oracle(const std::vector<double>& x, int window,
                                         int polyorder) {
  const int n = static_cast<int>(x.size());
  if (n <= 2) return x;
  int w = std::min(window, n);
  if (w % 2 == 0) --w;
  const int p = std::min(polyorder, w - 1);
  const int half = (w - 1) / 2;
  const double scale = std::max(1, half);
  std::vector<double> out(x.size());
  for (int c = 0; c < n; ++c) {
    const int lo = std::max(0, c - half);
    const int hi = std::min(n - 1, c + half);
    std::vector<double> u, y;
    for (int j = lo; j <= hi; ++j) {
      u.push_back((j - c) / scale);
      y.push_back(x[static_cast<std::size_t>(j)]);
    }
    out[static_cast<std::size_t>(c)] = lsq_fit_at_zero(u, y, p);
  }
  return out;
}

}  // namespace testutil
