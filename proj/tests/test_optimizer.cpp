// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "hexflow/optimizer.hpp"

using namespace hexflow;

TEST_SUITE("optimizer") {

TEST_CASE("adam: zero gradient leaves fresh parameters unchanged") {
  std::vector<double> params{1.0, -2.0, 3.0};
  const std::vector<double> grads{0.0, 0.0, 0.0};
  AdamState<double> state;
  state.init(3);
  adam_step<double>(params, grads, state, 0.1);
  CHECK(params[0] == 1.0);
  CHECK(params[1] == -2.0);
  CHECK(params[2] == 3.0);
}

TEST_CASE("adam: first step moves by ~lr in the sign direction") {
  std::vector<double> params{0.0, 0.0};
  const std::vector<double> grads{0.7, -1.3};
  AdamState<double> state;
  state.init(2);
  adam_step<double>(params, grads, state, 0.01);
  CHECK(params[0] == doctest::Approx(-0.01).epsilon(1e-6));
  CHECK(params[1] == doctest::Approx(0.01).epsilon(1e-6));
}

TEST_CASE("adam: quadratic converges below 1e-3 within 500 steps") {
  std::vector<double> x{1.0};
  AdamState<double> state;
  state.init(1);
  for (int i = 0; i < 500; ++i) {
    const std::vector<double> g{2.0 * x[0]};
    adam_step<double>(x, g, state, 0.01);
  }
  CHECK(std::abs(x[0]) < 1e-3);
}

TEST_CASE("adam: shape mismatch is an error") {
  std::vector<double> params{1.0};
  const std::vector<double> grads{1.0, 2.0};
  AdamState<double> state;
  state.init(1);
  CHECK_THROWS_AS(adam_step<double>(params, grads, state, 0.1),
                  std::invalid_argument);
}

TEST_CASE("grad_check: exact for linear functions") {
  auto fn = [](std::span<const double> x) { return 3.0 * x[0] - 2.0 * x[1]; };
  const std::vector<double> x{0.4, -0.7};
  const std::vector<double> analytic{3.0, -2.0};
  const auto report = grad_check(fn, x, analytic, 1e-4, 1e-6, 1e-10);
  CHECK(report.pass);
  CHECK(report.max_abs_err < 1e-8);
}

TEST_CASE("grad_check: product rule at (2,3)") {
  auto fn = [](std::span<const double> x) { return x[0] * x[1]; };
  const std::vector<double> x{2.0, 3.0};
  const std::vector<double> analytic{3.0, 2.0};
  const auto report = grad_check(fn, x, analytic, 1e-4, 1e-8, 1e-10);
  CHECK(report.pass);
}

TEST_CASE("grad_check: deliberately wrong gradient is reported") {
  auto fn = [](std::span<const double> x) { return x[0] * x[0]; };
  const std::vector<double> x{1.5};
  const std::vector<double> wrong{17.0};  // true gradient is 3.0
  const auto report = grad_check(fn, x, wrong, 1e-4, 1e-4, 1e-8);
  CHECK_FALSE(report.pass);
  REQUIRE(report.failing_indices.size() == 1);
  CHECK(report.failing_indices[0] == 0);
  CHECK(report.worst_analytic == 17.0);
  CHECK(report.worst_fd == doctest::Approx(3.0).epsilon(1e-6));
}

TEST_CASE("lr_schedule decays to the target factor") {
  CHECK(lr_schedule(1.0, 0.1, 0, 100) == doctest::Approx(1.0));
  CHECK(lr_schedule(1.0, 0.1, 100, 100) == doctest::Approx(0.1));
  CHECK(lr_schedule(1.0, 0.1, 50, 100) == doctest::Approx(std::sqrt(0.1)));
  CHECK(lr_schedule(1.0, 0.1, 200, 100) == doctest::Approx(0.1));
}

}  // TEST_SUITE
