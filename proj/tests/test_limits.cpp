#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "opq/error.hpp"
#include "opq/limits.hpp"
#include "opq/optimal_path.hpp"
#include "opq/phase.hpp"

using namespace opq;

namespace {

std::vector<double> periodic_grid(std::size_t n) {
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) g[i] = kTwoPi * static_cast<double>(i) / static_cast<double>(n);
  return g;
}

// Trapezoid on a periodic grid, spectrally accurate for smooth densities.
double periodic_integral(const std::vector<double>& f) {
  double s = 0.0;
  for (double v : f) s += v;
  return s * kTwoPi / static_cast<double>(f.size());
}

// Zero-energy drive-following path from theta_i, integrated as an independent oracle.
EndState zero_energy_end(double tau, double theta_i, double theta_f) {
  const auto s = SystemSpec::driven_z(tau, 1.0);
  const double T = traversal_time(s, theta_i, theta_f, 0.0);
  return integrate_end(s, {theta_i, p_forward(s, theta_i, 0.0)}, T);
}

}  // namespace

TEST_CASE("time expansion: full revolutions and the deterministic limit") {
  CHECK(rabi_time_approx({2.0, 50.0, 0.3, 0.3 + kTwoPi}) == doctest::Approx(kPi).epsilon(1e-14));
  CHECK(rabi_time_approx({1.0, 50.0, 0.0, kTwoPi}) == doctest::Approx(kTwoPi).epsilon(1e-14));
  CHECK(std::abs(rabi_time_approx({1e9, 1.0, 0.0, kPi / 2.0})) < 1e-8);
}

TEST_CASE("time expansion matches the numeric zero-energy traversal") {
  const auto s = SystemSpec::driven_z(50.0, 1.0);
  const double numeric = traversal_time(s, 0.0, kPi / 2.0, 0.0);
  CHECK(rabi_time_approx({1.0, 50.0, 0.0, kPi / 2.0}) == doctest::Approx(numeric).epsilon(0.01));
}

TEST_CASE("time residual falls as the inverse square of delta tau") {
  double res[3];
  const double taus[3] = {25.0, 50.0, 100.0};
  for (int k = 0; k < 3; ++k) {
    const auto s = SystemSpec::driven_z(taus[k], 1.0);
    res[k] = std::abs(rabi_time_approx({1.0, taus[k], 0.0, kPi / 2.0}) -
                      traversal_time(s, 0.0, kPi / 2.0, 0.0));
  }
  for (int k = 0; k < 2; ++k) {
    CHECK(res[k] / res[k + 1] > 3.0);
    CHECK(res[k] / res[k + 1] < 5.0);
  }
}

TEST_CASE("action expansion: substitution, integration and the deterministic limit") {
  CHECK(rabi_action_A({1.0, 50.0, 0.0, kTwoPi}) == doctest::Approx(-0.0314159).epsilon(1e-6));
  CHECK(rabi_action_A({1.0, 50.0, 0.7, 0.7}) == 0.0);
  const auto end = zero_energy_end(50.0, 0.0, kPi / 2.0);
  CHECK(end.theta == doctest::Approx(kPi / 2.0).epsilon(1e-7));
  CHECK(rabi_action_A({1.0, 50.0, 0.0, kPi / 2.0}) == doctest::Approx(end.S).epsilon(0.02));
  double prev = -1.0;
  for (double tau : {5.0, 10.0, 50.0, 200.0, 1000.0}) {
    const double sa = rabi_action_A({1.0, tau, 0.0, kPi / 2.0});
    CHECK(sa < 0.0);
    CHECK(sa > prev);
    prev = sa;
  }
}

TEST_CASE("counter-drive action: substitution, sign and pole divergence") {
  CHECK(rabi_action_C({1.0, 50.0, kPi / 2.0, kPi / 4.0}) == doctest::Approx(-100.0).epsilon(1e-12));
  CHECK(rabi_action_C({1.0, 50.0, 1.1, 1.1}) == 0.0);
  for (double th_f : {0.3, 1.2, 2.0, 2.9}) CHECK(rabi_action_C({1.0, 50.0, kPi / 2.0, th_f}) <= 0.0);
  CHECK(std::abs(rabi_action_C({1.0, 50.0, kPi / 2.0, kPi - 1e-3})) > 1e3);
  for (double pole : {0.0, kPi, -kTwoPi + 5e-7}) {
    try {
      rabi_action_C({1.0, 50.0, kPi / 2.0, pole});
      FAIL("expected PoleDivergence");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::PoleDivergence);
    }
  }
  CHECK(rabi_p_plus({1.0, 50.0, 0.0, 0.0}, kPi / 2.0) == doctest::Approx(0.01));
  CHECK(RabiLimitInputs{1.0, 9.0, 0.0, 1.0}.in_asymptotic_regime() == false);
  CHECK(RabiLimitInputs{1.0, 10.0, 0.0, 1.0}.in_asymptotic_regime());
}

TEST_CASE("wrapped Gaussian is a normalized, symmetric density") {
  const auto grid = periodic_grid(512);
  for (double var : {0.05, 0.5, 2.0, 10.0}) {
    const auto f = wrapped_gaussian(1.3, 1.0, var, grid);
    CHECK(periodic_integral(f) == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(*std::min_element(f.begin(), f.end()) >= 0.0);
    for (double d : {0.1, 0.9, 2.5}) {
      const auto pair = wrapped_gaussian(1.3, 1.0, var, {1.3 + d, 1.3 - d});
      CHECK(pair[0] == doctest::Approx(pair[1]).epsilon(1e-13));
    }
  }
}

TEST_CASE("wrapped Gaussian limits") {
  const auto grid = periodic_grid(64);
  const auto flat = wrapped_gaussian(0.4, 1.0, 30.0, grid);
  for (double v : flat) CHECK(std::abs(v - 1.0 / kTwoPi) < 1e-6);
  const auto spike = wrapped_gaussian(0.4, 1.0, 1e-4, {0.4, 0.5, 0.4 + kPi});
  CHECK(spike[0] == doctest::Approx(1.0 / std::sqrt(kTwoPi * 1e-4)));
  CHECK(spike[1] < 1e-20);
  CHECK(spike[2] == 0.0);
}

TEST_CASE("five windings suffice up to T / tau = 10") {
  const auto grid = periodic_grid(97);
  for (double var : {0.1, 1.0, 5.0, 10.0}) {
    const auto a = wrapped_gaussian(2.0, 2.0, 2.0 * var, grid, 5);
    const auto b = wrapped_gaussian(2.0, 2.0, 2.0 * var, grid, 12);
    for (std::size_t i = 0; i < grid.size(); ++i) CHECK(std::abs(a[i] - b[i]) < 1e-10);
  }
}

TEST_CASE("wrapped Gaussian CDF integrates the density") {
  const double th_i = 5.9, tau = 1.0, T = 0.8;
  CHECK(wrapped_gaussian_cdf(th_i, tau, T, 0.0) == doctest::Approx(0.0).scale(1.0).epsilon(1e-14));
  CHECK(wrapped_gaussian_cdf(th_i, tau, T, kTwoPi - 1e-12) == doctest::Approx(1.0).epsilon(1e-10));
  for (double th : {0.5, 2.0, 4.0, 6.0}) {
    const std::size_t n = 20'001;
    std::vector<double> g(n);
    for (std::size_t i = 0; i < n; ++i) g[i] = th * static_cast<double>(i) / static_cast<double>(n - 1);
    const auto f = wrapped_gaussian(th_i, tau, T, g);
    const double integral = simpson_uniform(f, g[1] - g[0]);
    CHECK(wrapped_gaussian_cdf(th_i, tau, T, th) == doctest::Approx(integral).epsilon(1e-10));
  }
  CHECK_THROWS_AS(wrapped_gaussian_cdf(th_i, 0.0, T, 1.0), Error);
  CHECK_THROWS_AS(wrapped_gaussian(th_i, tau, -1.0, {1.0}), Error);
}
