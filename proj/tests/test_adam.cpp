#include <doctest.h>

#include <cmath>

#include "knotseg/adam.hpp"

using knotseg::AdamState;
using knotseg::Tensor;

TEST_CASE("adam: first step moves by ~ -lr * sign(g) for |g| >> eps") {
  for (double g : {0.5, -2.0, 10.0}) {
    auto p = Tensor<double>::from({1}, {1.0}).set_requires_grad();
    std::vector<Tensor<double>> params{p};
    AdamState<double> st;
    st.lr = 0.001;
    st.attach(params);
    p.grad()[0] = g;
    knotseg::adam_step(params, st);
    const double delta = p[0] - 1.0;
    const double expect = -st.lr * (g > 0 ? 1.0 : -1.0);
    CHECK(std::abs(delta - expect) <= 1e-6);
    CHECK(st.t == 1);
  }
}

TEST_CASE("adam: zero gradient leaves the parameter unchanged") {
  auto p = Tensor<double>::from({2}, {3.0, -1.0}).set_requires_grad();
  std::vector<Tensor<double>> params{p};
  AdamState<double> st;
  st.attach(params);
  p.grad();  // allocated, all zeros
  knotseg::adam_step(params, st);
  CHECK(p[0] == 3.0);
  CHECK(p[1] == -1.0);
}

TEST_CASE("adam: minimizes (w-3)^2 from 0 within 5000 steps at lr=0.01") {
  auto w = Tensor<double>::from({1}, {0.0}).set_requires_grad();
  std::vector<Tensor<double>> params{w};
  AdamState<double> st;
  st.lr = 0.01;
  st.attach(params);
  int steps = 0;
  for (; steps < 5000; ++steps) {
    w.zero_grad();
    w.grad()[0] = 2.0 * (w[0] - 3.0);
    knotseg::adam_step(params, st);
    if (std::abs(w[0] - 3.0) < 0.01) break;
  }
  CHECK(std::abs(w[0] - 3.0) < 0.01);
  CHECK(steps < 5000);
}

TEST_CASE("adam: NaN gradient aborts with the parameter name") {
  auto p = Tensor<double>::from({1}, {1.0}).set_requires_grad();
  p.set_name("enc0.conv.w");
  std::vector<Tensor<double>> params{p};
  AdamState<double> st;
  st.attach(params);
  p.grad()[0] = std::nan("");
  CHECK_THROWS_WITH_AS(knotseg::adam_step(params, st),
                       doctest::Contains("enc0.conv.w"), std::runtime_error);
  CHECK(p[0] == 1.0);
}
