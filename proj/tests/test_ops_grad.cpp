#include <doctest.h>

#include <cmath>

#include "knotseg/ops.hpp"
#include "testutil.hpp"

using knotseg::Act;
using knotseg::BnState;
using knotseg::Mode;
using knotseg::Rng;
using knotseg::Tape;
using knotseg::Tensor;
using testutil::check_gradients;
using testutil::fill_uniform;
using testutil::T64;

TEST_CASE("conv2d: identity kernel passes input through") {
  auto x = T64::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  auto w = T64::zeros({1, 1, 3, 3});
  w[4] = 1.0;  // center tap
  auto b = T64::zeros({1});
  auto y = knotseg::conv2d(x, w, b, static_cast<Tape<double>*>(nullptr));
  for (std::int64_t i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(x[i]));
}

TEST_CASE("conv2d: all-ones 3x3 kernel on all-ones 3x3 input counts the "
          "kernel footprint") {
  auto x = T64::full({1, 1, 3, 3}, 1.0);
  auto w = T64::full({1, 1, 3, 3}, 1.0);
  auto y = knotseg::conv2d(x, w, static_cast<Tape<double>*>(nullptr));
  // corners see 4 valid pixels, edges 6, the center all 9
  const double expect[9] = {4, 6, 4, 6, 9, 6, 4, 6, 4};
  for (std::int64_t i = 0; i < 9; ++i) CHECK(y[i] == doctest::Approx(expect[i]));
}

TEST_CASE("conv2d: rejects channel mismatch naming both shapes") {
  auto x = T64::zeros({1, 4, 5, 5});
  auto w = T64::zeros({3, 5, 3, 3});
  CHECK_THROWS_WITH_AS(
      knotseg::conv2d(x, w, static_cast<Tape<double>*>(nullptr)),
      doctest::Contains("Cin"), std::invalid_argument);
}

TEST_CASE("conv2d: gradients match finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto x = T64::zeros({2, 4, 5, 5}).set_requires_grad().set_name("x");
    auto w = T64::zeros({3, 4, 3, 3}).set_requires_grad().set_name("w");
    auto b = T64::zeros({3}).set_requires_grad().set_name("b");
    auto m = T64::zeros({2, 3, 5, 5});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -0.5, 0.5);
    fill_uniform(b, rng, -0.5, 0.5);
    fill_uniform(m, rng, -1.0, 1.0);
    auto build = [&](Tape<double>* tape) {
      auto y = knotseg::conv2d(x, w, b, tape);
      return knotseg::sum(knotseg::mul(y, m, tape), tape);
    };
    auto res = check_gradients({x, w, b}, build);
    CAPTURE(seed);
    CAPTURE(res.worst);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}

TEST_CASE("batchnorm2d: train mode normalizes to zero mean, unit variance") {
  Rng rng(7);
  auto x = T64::zeros({2, 3, 4, 4});
  fill_uniform(x, rng, -3.0, 5.0);
  auto gamma = T64::full({3}, 1.0);
  auto beta = T64::zeros({3});
  BnState<double> bn(3);
  auto y = knotseg::batchnorm2d(x, gamma, beta, bn, Mode::kTrain,
                                static_cast<Tape<double>*>(nullptr));
  const std::int64_t m = 2 * 4 * 4;
  for (std::int64_t c = 0; c < 3; ++c) {
    double s = 0.0, s2 = 0.0;
    for (std::int64_t n = 0; n < 2; ++n) {
      for (std::int64_t j = 0; j < 16; ++j) {
        const double v = y[(n * 3 + c) * 16 + j];
        s += v;
        s2 += v * v;
      }
    }
    const double mean = s / m;
    const double var = s2 / m - mean * mean;
    CHECK(std::abs(mean) <= 1e-5);
    CHECK(std::abs(var - 1.0) <= 1e-4);
  }
  CHECK(bn.batches_tracked == 1);
}

TEST_CASE("batchnorm2d: eval mode applies running statistics") {
  auto x = T64::full({1, 1, 2, 2}, 4.0);
  auto gamma = T64::full({1}, 1.0);
  auto beta = T64::zeros({1});
  BnState<double> bn(1);
  bn.running_mean[0] = 2.0;
  bn.running_var[0] = 4.0;
  bn.batches_tracked = 1;
  auto y = knotseg::batchnorm2d(x, gamma, beta, bn, Mode::kEval,
                                static_cast<Tape<double>*>(nullptr));
  const double expect = (4.0 - 2.0) / std::sqrt(4.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(expect).epsilon(1e-9));
  CHECK(y[0] == doctest::Approx(0.99999).epsilon(1e-4));
}

TEST_CASE("batchnorm2d: eval before any stats is an error") {
  auto x = T64::zeros({1, 1, 2, 2});
  auto gamma = T64::full({1}, 1.0);
  auto beta = T64::zeros({1});
  BnState<double> bn(1);
  CHECK_THROWS_WITH_AS(
      knotseg::batchnorm2d(x, gamma, beta, bn, Mode::kEval,
                           static_cast<Tape<double>*>(nullptr)),
      doctest::Contains("checkpoint"), std::runtime_error);
}

TEST_CASE("batchnorm2d: gradients match finite differences over 10 seeds") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto x = T64::zeros({2, 2, 3, 3}).set_requires_grad().set_name("x");
    auto gamma = T64::zeros({2}).set_requires_grad().set_name("gamma");
    auto beta = T64::zeros({2}).set_requires_grad().set_name("beta");
    auto m = T64::zeros({2, 2, 3, 3});
    fill_uniform(x, rng, -2.0, 2.0);
    fill_uniform(gamma, rng, 0.5, 1.5);
    fill_uniform(beta, rng, -0.5, 0.5);
    fill_uniform(m, rng, -1.0, 1.0);
    auto build = [&](Tape<double>* tape) {
      BnState<double> bn(2);  // fresh stats; train output ignores them
      auto y = knotseg::batchnorm2d(x, gamma, beta, bn, Mode::kTrain, tape);
      return knotseg::sum(knotseg::mul(y, m, tape), tape);
    };
    auto res = check_gradients({x, gamma, beta}, build);
    CAPTURE(seed);
    CAPTURE(res.worst);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}

TEST_CASE("maxpool2: forward max, backward routes to argmax only") {
  auto x = T64::from({1, 1, 2, 2}, {1, 2, 3, 4}).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::maxpool2(x, &tape);
  CHECK(y.numel() == 1);
  CHECK(y[0] == 4.0);
  auto loss = knotseg::sum(y, &tape);
  knotseg::backward(tape, loss);
  const double expect[4] = {0, 0, 0, 1};
  for (int i = 0; i < 4; ++i) CHECK(x.grad()[i] == expect[i]);
}

TEST_CASE("maxpool2: all-equal window ties break to first cell in row-major "
          "order") {
  auto x = T64::full({1, 1, 2, 2}, 5.0).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::maxpool2(x, &tape);
  CHECK(y[0] == 5.0);
  auto loss = knotseg::sum(y, &tape);
  knotseg::backward(tape, loss);
  CHECK(x.grad()[0] == 1.0);
  CHECK(x.grad()[1] == 0.0);
  CHECK(x.grad()[2] == 0.0);
  CHECK(x.grad()[3] == 0.0);
}

TEST_CASE("maxpool2: odd extents rejected") {
  auto x = T64::zeros({1, 1, 3, 4});
  CHECK_THROWS_AS(knotseg::maxpool2(x, static_cast<Tape<double>*>(nullptr)),
                  std::invalid_argument);
}

TEST_CASE("upsample_nearest2: replicates pixels, backward sums the block") {
  auto x = T64::from({1, 1, 1, 1}, {5.0}).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::upsample_nearest2(x, &tape);
  for (int i = 0; i < 4; ++i) CHECK(y[i] == 5.0);
  auto wgt = T64::from({1, 1, 2, 2}, {1, 2, 3, 4});
  auto loss = knotseg::sum(knotseg::mul(y, wgt, &tape), &tape);
  knotseg::backward(tape, loss);
  CHECK(x.grad()[0] == 10.0);
}

TEST_CASE("maxpool2(upsample_nearest2(x)) is the identity") {
  Rng rng(3);
  auto x = T64::zeros({2, 3, 4, 4});
  fill_uniform(x, rng, -2.0, 2.0);
  auto y = knotseg::maxpool2(
      knotseg::upsample_nearest2(x, static_cast<Tape<double>*>(nullptr)),
      static_cast<Tape<double>*>(nullptr));
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
}

TEST_CASE("shape algebra: conv preserves, pool halves, upsample doubles, and "
          "the 3-pool/3-upsample round trip restores 192x192") {
  auto x = T64::zeros({1, 1, 192, 192});
  auto p1 = knotseg::maxpool2(x, static_cast<Tape<double>*>(nullptr));
  auto p2 = knotseg::maxpool2(p1, static_cast<Tape<double>*>(nullptr));
  auto p3 = knotseg::maxpool2(p2, static_cast<Tape<double>*>(nullptr));
  CHECK(p3.shape() == knotseg::Shape{1, 1, 24, 24});
  auto u = knotseg::upsample_nearest2(
      knotseg::upsample_nearest2(
          knotseg::upsample_nearest2(p3, static_cast<Tape<double>*>(nullptr)),
          static_cast<Tape<double>*>(nullptr)),
      static_cast<Tape<double>*>(nullptr));
  CHECK(u.shape() == knotseg::Shape{1, 1, 192, 192});

  auto w = T64::zeros({2, 1, 3, 3});
  auto y = knotseg::conv2d(x, w, static_cast<Tape<double>*>(nullptr));
  CHECK(y.shape() == knotseg::Shape{1, 2, 192, 192});
}

TEST_CASE("activations: fixed points and symmetry") {
  auto x = T64::from({3}, {0.0, 0.0, -1.0});
  CHECK(knotseg::sigmoid(x, static_cast<Tape<double>*>(nullptr))[0] == 0.5);
  CHECK(knotseg::tanh_act(x, static_cast<Tape<double>*>(nullptr))[1] == 0.0);
  CHECK(knotseg::relu(x, static_cast<Tape<double>*>(nullptr))[2] == 0.0);

  Rng rng(11);
  for (int i = 0; i < 64; ++i) {
    const double v = rng.uniform(-10.0, 10.0);
    auto a = T64::scalar(v);
    auto b = T64::scalar(-v);
    const double sp =
        knotseg::sigmoid(a, static_cast<Tape<double>*>(nullptr))[0];
    const double sn =
        knotseg::sigmoid(b, static_cast<Tape<double>*>(nullptr))[0];
    CHECK(std::abs(sp + sn - 1.0) <= 1e-6);
  }
}

TEST_CASE("activations: gradients match finite differences over 10 seeds") {
  for (auto kind : {Act::kRelu, Act::kSigmoid, Act::kTanh}) {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
      Rng rng(seed * 13 + static_cast<int>(kind));
      auto x = T64::zeros({4, 5}).set_requires_grad().set_name("x");
      auto m = T64::zeros({4, 5});
      // keep relu inputs away from the kink where FD is undefined
      fill_uniform(x, rng, -2.0, 2.0, kind == Act::kRelu ? 0.05 : 0.0);
      fill_uniform(m, rng, -1.0, 1.0);
      auto build = [&](Tape<double>* tape) {
        auto y = knotseg::activation(x, kind, tape);
        return knotseg::sum(knotseg::mul(y, m, tape), tape);
      };
      auto res = check_gradients({x}, build);
      CAPTURE(static_cast<int>(kind));
      CAPTURE(res.worst);
      CHECK(res.ok);
      CHECK(res.max_rel_err <= 1e-3);
    }
  }
}

TEST_CASE("dropout: p=0 and eval mode are the identity") {
  Rng rng(5);
  auto x = T64::from({4}, {1, 2, 3, 4});
  auto a = knotseg::dropout(x, 0.0, Mode::kTrain, rng,
                            static_cast<Tape<double>*>(nullptr));
  auto b = knotseg::dropout(x, 0.1, Mode::kEval, rng,
                            static_cast<Tape<double>*>(nullptr));
  CHECK(a.same_storage(x));
  CHECK(b.same_storage(x));
}

TEST_CASE("dropout: inverted scaling keeps the mean at one") {
  Rng rng(123);
  auto x = T64::full({1000000}, 1.0);
  auto y = knotseg::dropout(x, 0.1, Mode::kTrain, rng,
                            static_cast<Tape<double>*>(nullptr));
  double s = 0.0;
  for (std::int64_t i = 0; i < y.numel(); ++i) s += y[i];
  CHECK(std::abs(s / y.numel() - 1.0) <= 0.01);
}

TEST_CASE("dropout: p >= 1 rejected") {
  Rng rng(1);
  auto x = T64::zeros({2});
  CHECK_THROWS_AS(knotseg::dropout(x, 1.0, Mode::kTrain, rng,
                                   static_cast<Tape<double>*>(nullptr)),
                  std::invalid_argument);
}

TEST_CASE("dropout: gradient is the saved mask") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    Rng data_rng(seed);
    auto x = T64::zeros({6, 6}).set_requires_grad().set_name("x");
    fill_uniform(x, data_rng, -1.0, 1.0);
    auto build = [&](Tape<double>* tape) {
      Rng rng(seed + 1000);  // identical mask on every rebuild
      auto y = knotseg::dropout(x, 0.3, Mode::kTrain, rng, tape);
      return knotseg::sum(y, tape);
    };
    auto res = check_gradients({x}, build);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}

TEST_CASE("bce_with_logits: frozen values and stable extremes") {
  auto z = T64::scalar(0.0);
  auto y = T64::scalar(1.0);
  auto l = knotseg::bce_with_logits(z, y, static_cast<Tape<double>*>(nullptr));
  CHECK(l[0] == doctest::Approx(0.6931472).epsilon(1e-6));

  auto z_hi = T64::scalar(50.0);
  auto l_hi =
      knotseg::bce_with_logits(z_hi, y, static_cast<Tape<double>*>(nullptr));
  CHECK(l_hi[0] == doctest::Approx(0.0).epsilon(1e-12));

  auto z_lo = T64::scalar(-50.0);
  auto l_lo =
      knotseg::bce_with_logits(z_lo, y, static_cast<Tape<double>*>(nullptr));
  CHECK(l_lo[0] == doctest::Approx(50.0).epsilon(1e-9));
}

TEST_CASE("bce_with_logits: rejects non-binary targets") {
  auto z = T64::scalar(0.0);
  auto y = T64::scalar(0.5);
  CHECK_THROWS_AS(
      knotseg::bce_with_logits(z, y, static_cast<Tape<double>*>(nullptr)),
      std::invalid_argument);
}

TEST_CASE("bce_with_logits: gradient equals (sigmoid(z)-y)/N and matches "
          "finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto z = T64::zeros({3, 4}).set_requires_grad().set_name("z");
    auto y = T64::zeros({3, 4});
    fill_uniform(z, rng, -4.0, 4.0);
    for (std::int64_t i = 0; i < y.numel(); ++i) {
      y[i] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    }
    auto build = [&](Tape<double>* tape) {
      return knotseg::bce_with_logits(z, y, tape);
    };
    auto res = check_gradients({z}, build);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);

    z.zero_grad();
    Tape<double> tape;
    auto loss = knotseg::bce_with_logits(z, y, &tape);
    knotseg::backward(tape, loss);
    for (std::int64_t i = 0; i < z.numel(); ++i) {
      const double expect =
          (knotseg::stable_sigmoid(z[i]) - y[i]) / static_cast<double>(z.numel());
      CHECK(z.grad()[i] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
}

TEST_CASE("backward: a random op chain matches finite differences") {
  for (std::uint64_t seed = 1; seed <= 10; ++seed) {
    Rng rng(seed);
    auto x = T64::zeros({1, 2, 4, 4}).set_requires_grad().set_name("x");
    auto w = T64::zeros({3, 2, 3, 3}).set_requires_grad().set_name("w");
    auto m = T64::zeros({1, 3, 2, 2});
    fill_uniform(x, rng, -1.0, 1.0);
    fill_uniform(w, rng, -0.5, 0.5);
    fill_uniform(m, rng, -1.0, 1.0);
    auto build = [&](Tape<double>* tape) {
      auto y = knotseg::conv2d(x, w, tape);       // op 1
      auto p = knotseg::maxpool2(y, tape);        // op 2
      auto s = knotseg::tanh_act(p, tape);        // op 3
      return knotseg::sum(knotseg::mul(s, m, tape), tape);
    };
    auto res = check_gradients({x, w}, build);
    CAPTURE(res.worst);
    CHECK(res.ok);
    CHECK(res.max_rel_err <= 1e-3);
  }
}

TEST_CASE("concat_channels: U-Net arithmetic and split gradients") {
  auto a = T64::from({1, 2, 1, 2}, {1, 2, 3, 4}).set_requires_grad();
  auto b = T64::from({1, 1, 1, 2}, {5, 6}).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::concat_channels(a, b, &tape);
  CHECK(y.shape() == knotseg::Shape{1, 3, 1, 2});
  CHECK(y[4] == 5.0);
  auto wgt = T64::from({1, 3, 1, 2}, {1, 1, 1, 1, 2, 2});
  auto loss = knotseg::sum(knotseg::mul(y, wgt, &tape), &tape);
  knotseg::backward(tape, loss);
  CHECK(a.grad()[0] == 1.0);
  CHECK(b.grad()[0] == 2.0);
}

TEST_CASE("slice0/concat0 round trip with gradients") {
  Rng rng(17);
  auto x = T64::zeros({3, 2, 2, 2}).set_requires_grad().set_name("x");
  fill_uniform(x, rng, -1.0, 1.0);
  Tape<double> tape;
  std::vector<T64> parts;
  for (int t = 0; t < 3; ++t) parts.push_back(knotseg::slice0(x, t, &tape));
  auto y = knotseg::concat0(parts, &tape);
  REQUIRE(y.shape() == x.shape());
  for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y[i] == x[i]);
  auto loss = knotseg::sum(y, &tape);
  knotseg::backward(tape, loss);
  for (auto g : x.grad()) CHECK(g == 1.0);
}
