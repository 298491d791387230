#include <doctest.h>

#include <cmath>

#include "rulforge/ops.hpp"
#include "rulforge/param_store.hpp"
#include "rulforge/tape.hpp"
#include "support/test_util.hpp"

using namespace rulforge;
using namespace rulforge::core;

TEST_CASE("tensor shape and data invariants") {
  Tensor<float> t({2, 3});
  CHECK(t.numel() == 6);
  CHECK(t.rank() == 2);
  CHECK_THROWS_AS(Tensor<float>({2, 3}, {1.f, 2.f}), ShapeError);
  CHECK_THROWS_AS(Tensor<float>({0, 3}), ShapeError);
  CHECK(t.all_finite());
  t[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_FALSE(t.all_finite());

  Tensor<float> r = Tensor<float>::ones({4, 6}).reshaped({24});
  CHECK(r.rank() == 1);
  CHECK_THROWS_AS(r.reshaped({5}), ShapeError);
}

TEST_CASE("matmul identity and hand-computed product") {
  Tape<float> tape;
  auto eye = tape.constant(Tensor<float>({2, 2}, {1, 0, 0, 1}));
  auto m = tape.constant(Tensor<float>({2, 2}, {1, 2, 3, 4}));
  auto y = matmul(eye, m);
  CHECK(y.value().vec() == std::vector<float>{1, 2, 3, 4});

  auto a = tape.constant(Tensor<float>({1, 2}, {1, 2}));
  auto b = tape.constant(Tensor<float>({2, 1}, {3, 4}));
  CHECK(matmul(a, b).value()[0] == doctest::Approx(11.0));

  auto bad = tape.constant(Tensor<float>({3, 2}));
  CHECK_THROWS_WITH_AS(matmul(a, bad), doctest::Contains("[1x2]"), ShapeError);
}

TEST_CASE("conv1d identity kernel and hand convolution") {
  Tape<float> tape;
  // Center-tap delta kernel reproduces the input.
  auto x = tape.constant(Tensor<float>({1, 5}, {1, 2, 3, 4, 5}));
  auto w = tape.constant(Tensor<float>({1, 1, 3}, {0, 1, 0}));
  auto b = tape.constant(Tensor<float>({1}));
  CHECK(conv1d(x, w, b).value().vec() == std::vector<float>{1, 2, 3, 4, 5});

  // All-ones kernel over [1,1,1] with zero padding.
  auto x2 = tape.constant(Tensor<float>({1, 3}, {1, 1, 1}));
  auto w2 = tape.constant(Tensor<float>({1, 1, 3}, {1, 1, 1}));
  CHECK(conv1d(x2, w2, b).value().vec() == std::vector<float>{2, 3, 2});

  // Same padding preserves length for any odd kernel.
  rng::Stream rng(11);
  for (std::int64_t k : {1, 3, 5, 7, 9}) {
    auto xr = tape.constant(testutil::random_tensor<float>({2, 3, 17}, rng));
    auto wr = tape.constant(testutil::random_tensor<float>({4, 3, k}, rng));
    auto br = tape.constant(testutil::random_tensor<float>({4}, rng));
    CHECK(conv1d(xr, wr, br).value().shape() == Shape{2, 4, 17});
  }

  auto w_even = tape.constant(Tensor<float>({1, 1, 4}));
  CHECK_THROWS_AS(conv1d(x2, w_even, b), ConfigError);
}

TEST_CASE("batchnorm1d normalization values") {
  // gamma=1, beta=0, zero input stays zero.
  {
    Tape<float> tape;
    Tensor<float> rm({1}), rv = Tensor<float>::ones({1});
    auto x = tape.constant(Tensor<float>({1, 1, 4}));
    auto g = tape.constant(Tensor<float>::ones({1}));
    auto b = tape.constant(Tensor<float>({1}));
    auto y = batchnorm1d(x, g, b, rm, rv, Mode::kTrain);
    for (std::int64_t i = 0; i < 4; ++i) CHECK(y.value()[i] == doctest::Approx(0.0));
  }
  // Per-channel values {1,3} normalize to about +-0.99999 in train mode.
  {
    Tape<double> tape;
    Tensor<double> rm({1}), rv = Tensor<double>::ones({1});
    auto x = tape.constant(Tensor<double>({1, 1, 2}, {1.0, 3.0}));
    auto g = tape.constant(Tensor<double>::ones({1}));
    auto b = tape.constant(Tensor<double>({1}));
    auto y = batchnorm1d(x, g, b, rm, rv, Mode::kTrain);
    const double expected = 1.0 / std::sqrt(1.0 + 1e-5);
    CHECK(y.value()[0] == doctest::Approx(-expected).epsilon(1e-12));
    CHECK(y.value()[1] == doctest::Approx(expected).epsilon(1e-12));
    CHECK(y.value()[0] == doctest::Approx(-0.99999).epsilon(1e-5));
    // Running stats: momentum 0.1, unbiased variance (n=2 -> var*2).
    CHECK(rm[0] == doctest::Approx(0.2));
    CHECK(rv[0] == doctest::Approx(0.9 + 0.1 * 2.0));
  }
  // Eval mode applies the stored stats exactly.
  {
    Tape<double> tape;
    Tensor<double> rm({1}, {0.5}), rv({1}, {4.0});
    auto x = tape.constant(Tensor<double>({1, 1, 3}, {0.0, 1.0, 2.0}));
    auto g = tape.constant(Tensor<double>({1}, {2.0}));
    auto b = tape.constant(Tensor<double>({1}, {-1.0}));
    auto y = batchnorm1d(x, g, b, rm, rv, Mode::kEval);
    for (std::int64_t i = 0; i < 3; ++i) {
      const double xi = static_cast<double>(i);
      CHECK(y.value()[i] ==
            doctest::Approx(2.0 * (xi - 0.5) / std::sqrt(4.0 + 1e-5) - 1.0).epsilon(1e-12));
    }
    // Eval does not touch the running stats.
    CHECK(rm[0] == 0.5);
    CHECK(rv[0] == 4.0);
  }
  // Degenerate batch rejected in train mode.
  {
    Tape<float> tape;
    Tensor<float> rm({1}), rv = Tensor<float>::ones({1});
    auto x = tape.constant(Tensor<float>({1, 1, 1}));
    auto g = tape.constant(Tensor<float>::ones({1}));
    auto b = tape.constant(Tensor<float>({1}));
    CHECK_THROWS_AS(batchnorm1d(x, g, b, rm, rv, Mode::kTrain), ContractError);
  }
}

TEST_CASE("activation values") {
  Tape<double> tape;
  auto x = tape.constant(Tensor<double>({4}, {0.0, -1.0, 2.0, 0.0}));
  CHECK(activation(x, Activation::kSigmoid).value()[0] == doctest::Approx(0.5));
  auto lr = activation(x, Activation::kLeakyRelu);
  CHECK(lr.value()[1] == doctest::Approx(-0.01));
  CHECK(lr.value()[2] == doctest::Approx(2.0));
  CHECK(activation(x, Activation::kTanh).value()[3] == doctest::Approx(0.0));
  CHECK(activation(x, Activation::kRelu).value()[1] == doctest::Approx(0.0));
  // GELU and HardSwish fixed points / known values.
  CHECK(activation(x, Activation::kGelu).value()[0] == doctest::Approx(0.0));
  CHECK(activation(x, Activation::kHardswish).value()[2] == doctest::Approx(2.0 * 5.0 / 6.0));
  CHECK(activation_from_string("gelu") == Activation::kGelu);
  CHECK_THROWS_AS(activation_from_string("swish?"), ConfigError);
}

TEST_CASE("dropout eval identity, zero rate, and empirical drop fraction") {
  rng::Stream rng(42);
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>::ones({100}));
  auto eval_out = dropout(x, 0.3, Mode::kEval, rng);
  CHECK(eval_out.id == x.id);  // identity, no new node
  auto zero_rate = dropout(x, 0.0, Mode::kTrain, rng);
  CHECK(zero_rate.id == x.id);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, rng), ConfigError);

  auto big = tape.constant(Tensor<float>::ones({100000}));
  auto dropped = dropout(big, 0.3, Mode::kTrain, rng);
  std::int64_t zeros = 0;
  const float scaled = 1.0f / 0.7f;
  for (std::int64_t i = 0; i < dropped.value().numel(); ++i) {
    const float v = dropped.value()[i];
    if (v == 0.0f) {
      ++zeros;
    } else {
      CHECK(v == doctest::Approx(scaled));
    }
  }
  const double frac = static_cast<double>(zeros) / 100000.0;
  CHECK(frac == doctest::Approx(0.3).epsilon(0.034));  // 0.3 +- 0.01 absolute
  CHECK(std::abs(frac - 0.3) < 0.01);
}

TEST_CASE("softmax rows sum to one") {
  rng::Stream rng(3);
  Tape<double> tape;
  auto x = tape.constant(testutil::random_tensor<double>({5, 7}, rng, -4.0, 4.0));
  auto y = softmax_rows(x);
  for (std::int64_t r = 0; r < 5; ++r) {
    double sum = 0.0;
    for (std::int64_t j = 0; j < 7; ++j) sum += y.value()[r * 7 + j];
    CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("slicing and stacking round trips") {
  Tape<float> tape;
  auto x = tape.constant(Tensor<float>({2, 3, 4}, {0,  1,  2,  3,  4,  5,  6,  7,
                                                   8,  9,  10, 11, 12, 13, 14, 15,
                                                   16, 17, 18, 19, 20, 21, 22, 23}));
  auto s = select_last(x, 2);
  CHECK(s.value().shape() == Shape{2, 3});
  CHECK(s.value().vec() == std::vector<float>{2, 6, 10, 14, 18, 22});

  auto m = tape.constant(Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6}));
  auto col = select_col(m, 1);
  CHECK(col.value().vec() == std::vector<float>{2, 5});

  auto v1 = tape.constant(Tensor<float>({2}, {1, 2}));
  auto v2 = tape.constant(Tensor<float>({2}, {3, 4}));
  auto stacked = stack_cols(std::vector<Var<float>>{v1, v2});
  CHECK(stacked.value().vec() == std::vector<float>{1, 3, 2, 4});

  auto cat = concat_cols(m, stacked);
  CHECK(cat.value().shape() == Shape{2, 5});
  CHECK(cat.value().vec() == std::vector<float>{1, 2, 3, 1, 3, 4, 5, 6, 2, 4});
}

TEST_CASE("checkpoint round trip") {
  ParamStore<float> store;
  rng::Stream rng(5);
  store.insert("head.weight", testutil::random_tensor<float>({12, 1}, rng));
  store.insert("cnn.0.bn.running_mean", testutil::random_tensor<float>({4}, rng), false);
  store.insert("alstm.0.W_a", testutil::random_tensor<float>({3, 3}, rng));

  const std::string path = "ckpt_test.rfckpt";
  save_checkpoint(store, path);
  ParamStore<float> loaded = load_checkpoint(path);
  CHECK(loaded.size() == store.size());
  for (const auto& [name, param] : store) {
    const auto& restored = loaded.value(name);
    REQUIRE(restored.shape() == param.value.shape());
    for (std::int64_t i = 0; i < restored.numel(); ++i) CHECK(restored[i] == param.value[i]);
  }
  // Names iterate lexicographically.
  const auto names = store.names();
  CHECK(names.front() == "alstm.0.W_a");
  CHECK(names.back() == "head.weight");
  CHECK_THROWS_AS(store.insert("head.weight", Tensor<float>({1})), ConfigError);
  std::remove(path.c_str());
  std::remove((path + ".bin").c_str());
}
