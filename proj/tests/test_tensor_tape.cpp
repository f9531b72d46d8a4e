#include <doctest.h>

#include <cstring>

#include "knotseg/ops.hpp"
#include "knotseg/tape.hpp"
#include "knotseg/tensor.hpp"
#include "testutil.hpp"

using knotseg::Tape;
using knotseg::Tensor;
using testutil::T64;

TEST_CASE("tensor basics: shape, strides, numel") {
  auto t = Tensor<float>::zeros({2, 3, 4, 5});
  CHECK(t.numel() == 120);
  CHECK(t.strides() == knotseg::Shape{60, 20, 5, 1});
  t.at(1, 2, 3, 4) = 7.0f;
  CHECK(t[119] == 7.0f);
}

TEST_CASE("tensor: grad allocates lazily with matching shape") {
  auto t = Tensor<float>::zeros({3, 3});
  CHECK(!t.has_grad());
  t.grad()[4] = 1.0f;
  CHECK(t.has_grad());
  CHECK(t.grad().size() == 9);
}

TEST_CASE("tensor: from rejects mismatched payload") {
  CHECK_THROWS_AS(Tensor<float>::from({2, 2}, {1.0f, 2.0f, 3.0f}),
                  std::invalid_argument);
}

TEST_CASE("backward: loss = sum(x) gives all-ones gradient") {
  auto x = T64::from({2, 3}, {1, 2, 3, 4, 5, 6}).set_requires_grad();
  Tape<double> tape;
  auto loss = knotseg::sum(x, &tape);
  knotseg::backward(tape, loss);
  for (auto g : x.grad()) CHECK(g == 1.0);
}

TEST_CASE("backward: fan-out accumulates additively (x + x)") {
  auto x = T64::from({4}, {1, 2, 3, 4}).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::add(x, x, &tape);
  auto loss = knotseg::sum(y, &tape);
  knotseg::backward(tape, loss);
  for (auto g : x.grad()) CHECK(g == 2.0);
}

TEST_CASE("backward rejects non-scalar seed") {
  auto x = T64::from({2}, {1, 2}).set_requires_grad();
  Tape<double> tape;
  auto y = knotseg::add(x, x, &tape);
  CHECK_THROWS_AS(knotseg::backward(tape, y), std::invalid_argument);
}

TEST_CASE("tape soundness: forward-only graph records nothing and touches no "
          "gradient") {
  auto x = T64::from({2, 2}, {1, 2, 3, 4});  // requires_grad not set
  Tape<double> tape;
  auto y = knotseg::mul(x, x, &tape);
  auto z = knotseg::sum(y, &tape);
  CHECK(tape.size() == 0);
  CHECK(!x.has_grad());
  CHECK(!y.has_grad());
  CHECK(!y.requires_grad());
  CHECK(z[0] == 30.0);
}

TEST_CASE("tape: recorded entries are topologically ordered") {
  auto x = T64::from({3}, {0.5, -0.25, 1.5}).set_requires_grad();
  Tape<double> tape;
  auto a = knotseg::sigmoid(x, &tape);
  auto b = knotseg::mul(a, x, &tape);
  auto loss = knotseg::sum(b, &tape);
  knotseg::backward(tape, loss);
  CHECK(tape.size() == 3);
  for (const auto& e : tape.entries()) {
    for (auto in : e.input_nodes) {
      CHECK(in < e.output_node);
    }
  }
}

TEST_CASE("determinism: identical seeds give bitwise-identical forward and "
          "backward") {
  auto run = [](std::uint64_t seed, std::vector<float>& out,
                std::vector<float>& grads) {
    knotseg::Rng rng(seed);
    auto x = Tensor<float>::zeros({1, 2, 4, 4});
    auto w = Tensor<float>::uniform_fan_in({3, 2, 3, 3}, 18, rng)
                 .set_requires_grad();
    for (std::int64_t i = 0; i < x.numel(); ++i) {
      x[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    }
    Tape<float> tape;
    auto y = knotseg::conv2d(x, w, &tape);
    auto s = knotseg::sigmoid(y, &tape);
    auto loss = knotseg::sum(s, &tape);
    knotseg::backward(tape, loss);
    out = s.vec();
    grads = w.grad();
  };
  std::vector<float> o1, g1, o2, g2;
  run(99, o1, g1);
  run(99, o2, g2);
  CHECK(std::memcmp(o1.data(), o2.data(), o1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(float)) == 0);
}
