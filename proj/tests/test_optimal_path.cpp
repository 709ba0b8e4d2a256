#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/optimal_path.hpp"

using namespace opq;

namespace {

// Fixed-step classical RK4 on (theta, p, S); an independent reference.
EndState rk4(const SystemSpec& s, PhasePoint x, double T, int steps) {
  double th = x.theta, p = x.p, S = 0.0;
  const double h = T / steps;
  auto f = [&](double a, double b) {
    const auto v = hamilton_rhs(s, {a, b});
    return std::array<double, 3>{v.dtheta_dt, v.dp_dt, sdot(s, {a, b})};
  };
  for (int i = 0; i < steps; ++i) {
    const auto k1 = f(th, p);
    const auto k2 = f(th + 0.5 * h * k1[0], p + 0.5 * h * k1[1]);
    const auto k3 = f(th + 0.5 * h * k2[0], p + 0.5 * h * k2[1]);
    const auto k4 = f(th + h * k3[0], p + h * k3[1]);
    th += h / 6.0 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]);
    p += h / 6.0 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]);
    S += h / 6.0 * (k1[2] + 2 * k2[2] + 2 * k3[2] + k4[2]);
  }
  return {th, p, S};
}

}  // namespace

TEST_CASE("adaptive integration agrees with a fine fixed-step RK4") {
  const SystemSpec systems[] = {SystemSpec::two_observable(1.0, 2.0), SystemSpec::driven_z(1.0, 1.0)};
  const PhasePoint starts[] = {{kPi - 0.5, -0.44247943}, {kPi / 2.0, 0.77637}};
  for (int k = 0; k < 2; ++k) {
    const auto ref = rk4(systems[k], starts[k], 9.0, 90'000);
    const auto end = integrate_end(systems[k], starts[k], 9.0);
    CHECK(end.theta == doctest::Approx(ref.theta).epsilon(1e-8));
    CHECK(end.p == doctest::Approx(ref.p).epsilon(1e-8));
    CHECK(end.S == doctest::Approx(ref.S).epsilon(1e-8));
    const auto path = integrate(systems[k], starts[k], 9.0);
    CHECK(path.back().theta == doctest::Approx(end.theta).epsilon(1e-9));  // rtol 1e-10 per run
    CHECK(path.samples.size() == 2000);
    CHECK(path.front().t == 0.0);
    CHECK(path.back().t == doctest::Approx(9.0));
  }
}

TEST_CASE("paths conserve energy and satisfy the action and trajectory identities") {
  const auto s = SystemSpec::two_observable(1.0, 2.0);
  for (double p : {-0.46, -0.2, 0.1, 0.6, 0.93}) {
    const auto path = integrate(s, {kPi - 0.5, p}, 18.0);
    CHECK(path.max_energy_drift <= 1e-8);
    CHECK(path.energy == doctest::Approx(hamiltonian(s, path.start())));
    CHECK(action_consistency(path) <= 1e-6);
    CHECK(trajectory_residual(path) <= 1e-5);
    for (std::size_t i = 1; i < path.samples.size(); ++i) {
      CHECK(path.samples[i].S <= path.samples[i - 1].S);  // Sdot <= 0
    }
  }
}

TEST_CASE("an impossible energy tolerance raises EnergyDrift") {
  IntegrateOptions o;
  o.energy_tol = 1e-30;
  try {
    integrate(SystemSpec::two_observable(1.0, 2.0), {0.3, 0.7}, 20.0, o);
    FAIL("expected EnergyDrift");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::EnergyDrift);
  }
}

TEST_CASE("a path running into a driven pole stalls with StepUnderflow") {
  try {
    integrate_end(SystemSpec::driven_z(1.0, 1.0), {kPi / 2.0, -3.0}, 8.0);
    FAIL("expected StepUnderflow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::StepUnderflow);
    CHECK(e.detail() > 0.0);
    CHECK(e.detail() < 8.0);
  }
}

TEST_CASE("Simpson quadrature is exact on cubics for both interval parities") {
  for (std::size_t n : {9u, 10u, 101u, 102u}) {
    const double h = 2.0 / static_cast<double>(n - 1);
    std::vector<double> y(n);
    for (std::size_t i = 0; i < n; ++i) {
      const double x = -1.0 + h * i;
      y[i] = 3 * x * x * x - x * x + 2 * x + 5;
    }
    // Integral over [-1, 1]: -2/3 + 10.
    CHECK(simpson_uniform(y, h) == doctest::Approx(10.0 - 2.0 / 3.0).epsilon(1e-13));
  }
}

TEST_CASE("fourth-order differences are exact on quartics, ends included") {
  const std::size_t n = 12;
  const double h = 0.3;
  std::vector<double> y(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = h * i;
    y[i] = x * x * x * x - 2 * x * x * x + x;
  }
  const auto d = derivative_uniform(y, h);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = h * i;
    CHECK(d[i] == doctest::Approx(4 * x * x * x - 6 * x * x + 1).epsilon(1e-9).scale(1.0));
  }
}

TEST_CASE("path CSV and sidecar carry the documented columns") {
  const auto s = SystemSpec::driven_z(1.0, 1.0);
  const auto path = integrate(s, {kPi / 2.0, 0.3}, 2.0);
  const auto file = std::filesystem::temp_directory_path() / "opq_test_path" / "path.csv";
  write_path_csv(path, file);
  std::ifstream in(file);
  std::string header;
  std::getline(in, header);
  CHECK(header == "t,theta,p,S");
  const auto j = path_sidecar(path);
  for (const char* key : {"system", "energy", "max_energy_drift", "tolerances"}) CHECK(j.contains(key));
  CHECK(j["tolerances"].contains("rtol"));
}
