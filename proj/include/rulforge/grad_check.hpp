#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "rulforge/ops.hpp"
#include "rulforge/tape.hpp"

namespace rulforge::core {

// Builds a scalar loss from leaf variables created over `inputs`.
template <typename T>
using LossFn = std::function<Var<T>(Tape<T>&, const std::vector<Var<T>>&)>;

// Compares analytic gradients against central finite differences. Returns the
// maximum over all input elements of |analytic - numeric| divided by
// max(1, |analytic|, |numeric|). Meant to run in double precision.
template <typename T>
double grad_check(const LossFn<T>& fn, std::vector<Tensor<T>> inputs, double step = 1e-5) {
  // Analytic pass.
  Tape<T> tape;
  std::vector<Var<T>> leaves;
  leaves.reserve(inputs.size());
  for (const auto& input : inputs) leaves.push_back(tape.leaf(input, true));
  Var<T> loss = fn(tape, leaves);
  if (loss.value().numel() != 1) throw ContractError("grad_check loss must be scalar");
  tape.backward(loss);
  std::vector<Tensor<T>> analytic;
  analytic.reserve(leaves.size());
  for (auto leaf : leaves) {
    analytic.push_back(tape.has_grad(leaf) ? tape.grad(leaf) : Tensor<T>(leaf.value().shape()));
  }

  auto eval = [&fn](const std::vector<Tensor<T>>& points) {
    Tape<T> local;
    std::vector<Var<T>> vars;
    vars.reserve(points.size());
    for (const auto& point : points) vars.push_back(local.leaf(point, false));
    return static_cast<double>(fn(local, vars).value()[0]);
  };

  double max_err = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    for (std::int64_t e = 0; e < inputs[i].numel(); ++e) {
      const T saved = inputs[i][e];
      inputs[i][e] = saved + static_cast<T>(step);
      const double up = eval(inputs);
      inputs[i][e] = saved - static_cast<T>(step);
      const double down = eval(inputs);
      inputs[i][e] = saved;
      const double numeric = (up - down) / (2.0 * step);
      const double exact = static_cast<double>(analytic[i][e]);
      const double denom = std::max({1.0, std::abs(exact), std::abs(numeric)});
      max_err = std::max(max_err, std::abs(exact - numeric) / denom);
    }
  }
  return max_err;
}

}  // namespace rulforge::core
