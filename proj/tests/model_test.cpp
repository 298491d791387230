#include <doctest.h>

#include <cmath>

#include "rulforge/grad_check.hpp"
#include "rulforge/model.hpp"
#include "support/reference_lstm.hpp"
#include "support/test_util.hpp"

using namespace rulforge;
using namespace rulforge::core;
using namespace rulforge::model;

namespace {

ModelConfig tiny_config() {
  ModelConfig cfg;
  cfg.hidden = 2;        // conv channels 2, 4, 8
  cfg.alstm_hidden = 4;
  cfg.odelstm_hidden = 8;
  return cfg;
}

// Scalar field f(h, t) = h: weight rows [h; t] -> [1, 0], bias 0.
struct ScalarField {
  Tape<double> tape;
  Var<double> w, b;
  ScalarField() {
    w = tape.leaf(Tensor<double>({2, 1}, {1.0, 0.0}), false);
    b = tape.leaf(Tensor<double>({1}), false);
  }
  double increment(Integrator integ, int substeps) {
    auto h = tape.leaf(Tensor<double>({1, 1}, {1.0}), false);
    auto inc = ode_evolve(tape, h, 0.0, 1.0, w, b, integ, substeps);
    return inc.value()[0];
  }
};

}  // namespace

TEST_CASE("config validation and derived sizes") {
  ModelConfig cfg;
  CHECK(cfg.conv_channels(0) == 64);
  CHECK(cfg.conv_channels(2) == 256);
  CHECK(cfg.alstm_input(0) == 257);  // 256 + RT scalar in first mode
  CHECK(cfg.alstm_input(1) == 128);
  CHECK(cfg.head_input() == 384);
  cfg.rt_mode = RtMode::kAll;
  CHECK(cfg.alstm_input(1) == 129);
  cfg.rt_mode = RtMode::kNone;
  CHECK(cfg.alstm_input(0) == 256);

  ModelConfig bad;
  bad.kernel = 4;
  CHECK_THROWS_AS(RulNet<float>{bad}, ConfigError);
  bad = ModelConfig{};
  bad.dropout = 1.0;
  CHECK_THROWS_AS(RulNet<float>{bad}, ConfigError);
}

TEST_CASE("init_params: determinism, bounds, and naming") {
  RulNet<float> net(ModelConfig{});
  auto a = net.init_params(12);
  auto b = net.init_params(12);
  auto c = net.init_params(13);
  const auto& wa = a.value("cnn.0.weight");
  CHECK(wa.shape() == Shape{64, 24, 5});
  // fan_in = 24 * 5 = 120 -> bound 1/sqrt(120) ~ 0.0913
  const float bound = 1.0f / std::sqrt(120.0f);
  for (std::int64_t i = 0; i < wa.numel(); ++i) {
    CHECK(std::abs(wa[i]) <= bound);
  }
  CHECK(a.value("cnn.0.weight").vec() == b.value("cnn.0.weight").vec());  // bitwise
  CHECK(a.value("cnn.0.weight").vec() != c.value("cnn.0.weight").vec());

  // Spec'd parameter paths exist.
  for (const char* name : {"cnn.0.weight", "cnn.2.bn.gamma", "alstm.1.W_a", "alstm.0.v",
                           "odelstm.0.f_theta.weight", "odelstm.1.W_c", "head.weight",
                           "head.bias"}) {
    CHECK(a.contains(name));
  }
  // Buffers are not trainable.
  CHECK_FALSE(a.at("cnn.0.bn.running_mean").trainable);
  CHECK(a.at("cnn.0.weight").trainable);
  // Gate matrices carry no bias in the ODE-LSTM cells.
  CHECK_FALSE(a.contains("odelstm.0.b_i"));
}

TEST_CASE("block output shapes at the paper's default sizes") {
  ModelConfig cfg;  // hidden 64 -> channels 64/128/256
  RulNet<float> net(cfg);
  auto store = net.init_params(5);
  Tape<float> tape;
  auto pv = net.register_params(tape, store);
  rng::Stream data_rng(77);
  const std::int64_t batch = 2;
  auto x = tape.constant(testutil::random_tensor<float>({batch, 24, 10}, data_rng, 0.0, 1.0));

  auto feat = net.cnn_block(tape, store, pv, x, Mode::kEval, nullptr);
  CHECK(feat.value().shape() == Shape{batch, 256, 10});  // length-10 map, 256 channels

  auto b1 = net.alstm_block(tape, pv, feat, Mode::kEval, nullptr);
  CHECK(b1.value().shape() == Shape{batch, 128});

  auto b2 = net.odelstm_block(tape, pv, x, uniform_times(10), Mode::kEval, nullptr);
  CHECK(b2.value().shape() == Shape{batch, 256});
}

TEST_CASE("attention rows are probability distributions") {
  RulNet<float> net(tiny_config());
  auto store = net.init_params(9);
  Tape<float> tape;
  auto pv = net.register_params(tape, store);
  rng::Stream data_rng(5);
  auto x = tape.constant(testutil::random_tensor<float>({3, 8, 10}, data_rng, -1.0, 1.0));
  std::vector<Tensor<float>> rows;
  net.alstm_block(tape, pv, x, Mode::kEval, nullptr, &rows);
  // Two cells, steps t=2..10 each: 18 softmax invocations of widths 1..9.
  CHECK(rows.size() == 18);
  for (const auto& alpha : rows) {
    for (std::int64_t r = 0; r < alpha.dim(0); ++r) {
      double sum = 0.0;
      for (std::int64_t j = 0; j < alpha.dim(1); ++j) sum += alpha[r * alpha.dim(1) + j];
      CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
    }
  }
}

TEST_CASE("zero-weight network: zero cnn output, mid-scale prediction") {
  ModelConfig cfg = tiny_config();
  RulNet<float> net(cfg);
  auto store = net.init_params(3);
  for (auto& [name, param] : store) {
    if (name.find("bn.gamma") != std::string::npos ||
        name.find("bn.running_var") != std::string::npos) {
      continue;  // gamma = 1, running_var = 1
    }
    for (std::int64_t i = 0; i < param.value.numel(); ++i) param.value[i] = 0.0f;
  }
  Tape<float> tape;
  auto pv = net.register_params(tape, store);
  rng::Stream data_rng(6);
  auto x = tape.constant(testutil::random_tensor<float>({2, 24, 10}, data_rng, 0.0, 1.0));
  auto feat = net.cnn_block(tape, store, pv, x, Mode::kEval, nullptr);
  for (std::int64_t i = 0; i < feat.value().numel(); ++i) CHECK(feat.value()[i] == 0.0f);

  const Tensor<float> batch = testutil::random_tensor<float>({4, 10, 24}, data_rng, 0.0, 1.0);
  auto pred = net.forward(tape, store, pv, batch, Mode::kEval, nullptr);
  for (std::int64_t i = 0; i < pred.value().numel(); ++i) {
    CHECK(pred.value()[i] == doctest::Approx(1500.0));  // sigmoid(0) * 3000
  }
}

TEST_CASE("forward: bounds, determinism, and layout contract") {
  ModelConfig cfg = tiny_config();
  RulNet<float> net(cfg);
  auto store = net.init_params(21);
  rng::Stream data_rng(8);
  const Tensor<float> flat = testutil::random_tensor<float>({5, 10, 24}, data_rng, 0.0, 1.0);
  const Tensor<float> nested = flat.reshaped({5, 10, 4, 6});

  auto run = [&](const Tensor<float>& input) {
    Tape<float> tape;
    auto pv = net.register_params(tape, store);
    return net.forward(tape, store, pv, input, Mode::kEval, nullptr).value();
  };
  const auto p1 = run(flat);
  const auto p2 = run(flat);
  const auto p3 = run(nested);
  CHECK(p1.vec() == p2.vec());  // eval forward is a pure function
  CHECK(p1.vec() == p3.vec());  // reshape is layout-only
  for (std::int64_t i = 0; i < p1.numel(); ++i) {
    CHECK(p1[i] > 0.0f);
    CHECK(p1[i] < 3000.0f);
  }

  Tensor<float> bad = flat;
  bad[0] = std::numeric_limits<float>::quiet_NaN();
  Tape<float> tape;
  auto pv = net.register_params(tape, store);
  CHECK_THROWS_AS(net.forward(tape, store, pv, bad, Mode::kEval, nullptr), ContractError);
  CHECK_THROWS_AS(net.forward(tape, store, pv, flat, Mode::kTrain, nullptr), ContractError);
}

TEST_CASE("ode_evolve: zero field, constant field, and h'=h stages") {
  Tape<double> tape;
  auto zero_w = tape.constant(Tensor<double>({3, 2}));
  auto zero_b = tape.constant(Tensor<double>({2}));
  auto h = tape.constant(Tensor<double>({1, 2}, {0.4, -0.7}));
  for (Integrator integ : {Integrator::kEuler, Integrator::kMidpoint, Integrator::kHeun2,
                           Integrator::kHeun3, Integrator::kRk4}) {
    auto inc = ode_evolve(tape, h, 0.0, 0.5, zero_w, zero_b, integ, 2);
    CHECK(inc.value()[0] == 0.0);
    CHECK(inc.value()[1] == 0.0);
  }

  // Constant field c: Euler with 1 substep gives c * (t1 - t0).
  auto const_w = tape.constant(Tensor<double>({3, 2}));
  auto const_b = tape.constant(Tensor<double>({2}, {2.5, -1.0}));
  auto inc = ode_evolve(tape, h, 0.25, 0.75, const_w, const_b, Integrator::kEuler, 1);
  CHECK(inc.value()[0] == doctest::Approx(1.25));
  CHECK(inc.value()[1] == doctest::Approx(-0.5));

  // f(h) = h from h0=1 over [0,1].
  ScalarField field;
  CHECK(field.increment(Integrator::kEuler, 1) == doctest::Approx(1.0));
  CHECK(field.increment(Integrator::kRk4, 1) == doctest::Approx(1.0 + 1.0 / 2 + 1.0 / 6 + 1.0 / 24));
  CHECK(field.increment(Integrator::kRk4, 16) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-6));
  CHECK(std::abs(field.increment(Integrator::kRk4, 16) - (std::exp(1.0) - 1.0)) < 1e-3);
}

TEST_CASE("integrator convergence orders on h'=h") {
  ScalarField field;
  const double exact = std::exp(1.0) - 1.0;
  auto err = [&](Integrator integ, int n) { return std::abs(field.increment(integ, n) - exact); };

  // Euler: first order, halving the step halves the error.
  const double r1 = err(Integrator::kEuler, 8) / err(Integrator::kEuler, 16);
  const double r2 = err(Integrator::kEuler, 16) / err(Integrator::kEuler, 32);
  CHECK(r1 > 1.8);
  CHECK(r1 < 2.2);
  CHECK(r2 > 1.8);
  CHECK(r2 < 2.2);

  // Midpoint and Heun2: second order (ratio ~4); Heun3: third order (~8).
  for (Integrator integ : {Integrator::kMidpoint, Integrator::kHeun2}) {
    const double r = err(integ, 8) / err(integ, 16);
    CHECK(r > 3.5);
    CHECK(r < 4.5);
  }
  const double r3 = err(Integrator::kHeun3, 8) / err(Integrator::kHeun3, 16);
  CHECK(r3 > 7.0);
  CHECK(r3 < 9.0);
}

TEST_CASE("odelstm_block with zeroed field matches a plain bias-free LSTM bitwise") {
  ModelConfig cfg = tiny_config();
  RulNet<float> net(cfg);
  rng::Stream data_rng(41);
  for (int trial = 0; trial < 10; ++trial) {
    auto store = net.init_params(100 + static_cast<std::uint64_t>(trial));
    for (int cell = 0; cell < 2; ++cell) {
      const std::string base = "odelstm." + std::to_string(cell) + ".f_theta.";
      auto& w = store.value(base + "weight");
      auto& b = store.value(base + "bias");
      for (std::int64_t i = 0; i < w.numel(); ++i) w[i] = 0.0f;
      for (std::int64_t i = 0; i < b.numel(); ++i) b[i] = 0.0f;
    }
    const auto seq = testutil::random_tensor<float>({5, 24, 10}, data_rng, -1.0, 1.0);
    Tape<float> tape;
    auto pv = net.register_params(tape, store);
    auto out = net.odelstm_block(tape, pv, tape.constant(seq), uniform_times(10), Mode::kEval,
                                 nullptr);
    const auto reference = testutil::reference_plain_lstm_stack(seq, store, cfg.odelstm_hidden);
    REQUIRE(out.value().numel() == static_cast<std::int64_t>(reference.size()));
    for (std::int64_t i = 0; i < out.value().numel(); ++i) {
      CHECK(out.value()[i] == reference[static_cast<std::size_t>(i)]);  // bitwise
    }
  }
}

TEST_CASE("odelstm_block rejects non-increasing times") {
  RulNet<float> net(tiny_config());
  auto store = net.init_params(1);
  Tape<float> tape;
  auto pv = net.register_params(tape, store);
  rng::Stream data_rng(2);
  auto x = tape.constant(testutil::random_tensor<float>({1, 24, 10}, data_rng));
  std::vector<double> times = uniform_times(10);
  times[4] = times[3];
  CHECK_THROWS_AS(net.odelstm_block(tape, pv, x, times, Mode::kEval, nullptr), ContractError);
  CHECK_THROWS_AS(net.odelstm_block(tape, pv, x, {0.0, 1.0}, Mode::kEval, nullptr),
                  ContractError);
}

TEST_CASE("full-model gradient check at the tiny configuration") {
  ModelConfig cfg = tiny_config();
  RulNet<double> net(cfg);
  auto store = net.init_params(77);
  rng::Stream data_rng(78);
  const Tensor<double> batch = testutil::random_tensor<double>({2, 10, 24}, data_rng, 0.0, 1.0);
  const Tensor<double> labels = testutil::random_tensor<double>({2}, data_rng, 0.0, 0.3);

  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, param] : store) {
    if (param.trainable) {
      names.push_back(name);
      inputs.push_back(param.value);
    }
  }
  LossFn<double> fn = [&](Tape<double>& tape, const std::vector<Var<double>>& leaves) {
    ParamStore<double> local = store;  // fresh buffers per evaluation
    RulNet<double>::ParamVars pv;
    for (std::size_t i = 0; i < names.size(); ++i) pv.emplace(names[i], leaves[i]);
    auto pred = net.forward_scaled(tape, local, pv, batch, Mode::kEval, nullptr);
    auto diff = sub(pred, tape.constant(labels));
    return mean_all(mul(diff, diff));
  };
  const double err = grad_check<double>(fn, inputs, 1e-4);
  CHECK(err < 1e-3);
}

TEST_CASE("train-mode gradient check covers batchnorm and dropout") {
  ModelConfig cfg = tiny_config();
  cfg.dropout = 0.2;
  RulNet<double> net(cfg);
  auto store = net.init_params(55);
  rng::Stream data_rng(56);
  const Tensor<double> batch = testutil::random_tensor<double>({3, 10, 24}, data_rng, 0.0, 1.0);

  std::vector<std::string> names;
  std::vector<Tensor<double>> inputs;
  for (const auto& [name, param] : store) {
    if (param.trainable) {
      names.push_back(name);
      inputs.push_back(param.value);
    }
  }
  LossFn<double> fn = [&](Tape<double>& tape, const std::vector<Var<double>>& leaves) {
    ParamStore<double> local = store;
    RulNet<double>::ParamVars pv;
    for (std::size_t i = 0; i < names.size(); ++i) pv.emplace(names[i], leaves[i]);
    rng::Stream drop_rng(999);  // fixed mask across evaluations
    auto pred = net.forward_scaled(tape, local, pv, batch, Mode::kTrain, &drop_rng);
    return mean_all(mul(pred, pred));
  };
  const double err = grad_check<double>(fn, inputs, 1e-4);
  CHECK(err < 1e-3);
}
