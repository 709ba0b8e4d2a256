#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/limits.hpp"
#include "opq/trajectory.hpp"
#include "opq/verify.hpp"

using namespace opq;

namespace {

const SystemSpec kIsland = SystemSpec::two_observable(1.0, 2.0);

SimConfig base(std::size_t n, double T) {
  SimConfig c;
  c.system = kIsland;
  c.t_final = T;
  c.n_trajectories = n;
  c.seed = 11;
  c.theta_i = kPi - 0.5;
  return c;
}

bool identical(const Ensemble& a, const Ensemble& b) {
  if (a.trajectories.size() != b.trajectories.size()) return false;
  for (std::size_t i = 0; i < a.trajectories.size(); ++i) {
    const auto& x = a.trajectories[i];
    const auto& y = b.trajectories[i];
    if (x.theta != y.theta) return false;
    if (std::memcmp(&x.final_state, &y.final_state, sizeof x.final_state) != 0) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("noise streams are reproducible and have variance dt") {
  NoiseStream a(5, 3, 1e-3), b(5, 3, 1e-3), c(5, 4, 1e-3);
  bool same = true, differs = false;
  for (int i = 0; i < 100; ++i) {
    const double x = a.next(), y = b.next(), z = c.next();
    same = same && x == y;
    differs = differs || x != z;
  }
  CHECK(same);
  CHECK(differs);
  NoiseStream d(9, 0, 1e-3);
  const int n = 200'000;
  double s1 = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double w = d.next();
    s1 += w;
    s2 += w * w;
  }
  CHECK(std::abs(s1 / n) < 5.0 * std::sqrt(1e-3 / n));
  CHECK(s2 / n == doctest::Approx(1e-3).epsilon(0.02));
}

TEST_CASE("ensembles are bit-identical for any worker count") {
  auto c = base(96, 0.5);
  c.execution = Execution::Serial;
  const auto serial = simulate_ensemble(c);
  c.execution = Execution::Parallel;
  const auto parallel = simulate_ensemble(c);
  CHECK(identical(serial, parallel));
  c.formulation = Formulation::SmeIto;
  c.execution = Execution::Serial;
  const auto ito_a = simulate_ensemble(c);
  c.execution = Execution::Parallel;
  CHECK(identical(ito_a, simulate_ensemble(c)));
  c.seed = 12;
  CHECK_FALSE(identical(ito_a, simulate_ensemble(c)));
}

TEST_CASE("readouts carry the state expectation plus scaled noise") {
  const BlochState s{0.6, 0.0, 0.8};
  const auto r = noisy_readouts(kIsland, s, 0.01, -0.02, 1e-3);
  CHECK(r.r_x == doctest::Approx(0.6 + std::sqrt(1.0) * 0.01 / 1e-3));
  CHECK(r.r_z == doctest::Approx(0.8 + std::sqrt(2.0) * -0.02 / 1e-3));
}

TEST_CASE("without noise a weakly measured driven qubit Rabi-rotates in the yz-plane") {
  SimConfig c;
  c.system = SystemSpec::driven_z(1e6, 1.0);
  c.t_final = 2.0;
  c.n_trajectories = 2;
  c.noiseless = true;
  c.record_bloch = true;
  c.theta_i = 0.0;
  for (auto f : {Formulation::BayesianStratonovich, Formulation::SmeIto}) {
    c.formulation = f;
    const auto e = simulate_ensemble(c);
    for (const auto& b : e.trajectories[0].bloch) CHECK(b.x == 0.0);
    CHECK(e.trajectories[0].theta_final == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(e.trajectories[0].final_state.y == doctest::Approx(std::sin(2.0)).epsilon(1e-5));
  }
}

TEST_CASE("Heun keeps purity to round-off before renormalization") {
  auto c = base(64, 1.0);
  const auto e = simulate_ensemble(c);
  CHECK(e.max_purity_drift <= 1e-6);
}

TEST_CASE("a one-step purity guard violation is an UnstableStep") {
  auto c = base(4, 0.1);
  c.formulation = Formulation::SmeIto;
  c.purity_guard = 1e-30;
  try {
    simulate_ensemble(c);
    FAIL("expected UnstableStep");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::UnstableStep);
  }
}

namespace {

double mean_terminal_gap(double dt) {
  auto c = base(400, 1.0);
  c.dt = dt;
  const auto strat = simulate_ensemble(c);
  c.formulation = Formulation::SmeIto;
  const auto ito = simulate_ensemble(c);
  double sum = 0.0;
  for (std::size_t i = 0; i < strat.trajectories.size(); ++i) {
    sum += std::abs(strat.trajectories[i].theta_final - ito.trajectories[i].theta_final);
  }
  return sum / static_cast<double>(strat.trajectories.size());
}

}  // namespace

TEST_CASE("formulations driven by the same noise agree within O(dt)") {
  // Expected to fail: Euler-Maruyama converges pathwise only as sqrt(dt).
  const double g1 = mean_terminal_gap(1e-3);
  const double g2 = mean_terminal_gap(5e-4);
  CHECK(g1 <= 10.0 * 1e-3);
  CHECK(g2 <= 10.0 * 5e-4);
  CHECK(g1 / g2 > 1.6);  // ratio near 2
  CHECK(g1 / g2 < 2.4);
}

TEST_CASE("the pathwise gap between formulations shrinks as sqrt(dt)") {
  const double g1 = mean_terminal_gap(1e-3);
  const double g2 = mean_terminal_gap(2.5e-4);
  CHECK(g1 <= 0.5 * std::sqrt(1e-3));
  CHECK(g1 / g2 > 1.6);  // ratio near 2
  CHECK(g1 / g2 < 2.4);
}

TEST_CASE("equal strengths diffuse as a wrapped Gaussian") {
  SimConfig c;
  c.system = SystemSpec::two_observable(1.0, 1.0);
  c.t_final = 1.0;
  c.n_trajectories = 4000;
  c.seed = 3;
  c.theta_i = 0.4;
  std::vector<double> finals;
  for (const auto& r : simulate_ensemble(c).trajectories) finals.push_back(wrap_angle(r.theta_final));
  const double ks = ks_statistic(finals, [&](double th) { return wrapped_gaussian_cdf(0.4, 1.0, 1.0, th); });
  CHECK(ks < 1.63 / std::sqrt(4000.0));  // 1% critical value
}

TEST_CASE("pure z measurement leaves the mean of z unchanged") {
  for (auto f : {Formulation::BayesianStratonovich, Formulation::SmeIto}) {
    SimConfig c;
    c.system = SystemSpec::driven_z(1.0, 0.0);
    c.t_final = 1.0;
    c.n_trajectories = 4000;
    c.seed = 21;
    c.theta_i = 1.0;
    c.formulation = f;
    const auto e = simulate_ensemble(c);
    double s1 = 0.0, s2 = 0.0;
    for (const auto& r : e.trajectories) {
      s1 += r.final_state.z;
      s2 += r.final_state.z * r.final_state.z;
    }
    const double n = static_cast<double>(e.trajectories.size());
    const double mean = s1 / n;
    const double sigma = std::sqrt((s2 / n - mean * mean) / n);
    CHECK(std::abs(mean - std::cos(1.0)) <= 3.0 * sigma);
  }
}

TEST_CASE("post-selection and its errors") {
  const auto e = simulate_ensemble(base(200, 1.0));
  CHECK(postselect(e, 1.0, kPi).trajectories.size() == 200);
  const auto sel = postselect(e, kPi - 0.5, 0.3);
  CHECK(sel.trajectories.size() > 0);
  CHECK(sel.trajectories.size() < 200);
  for (const auto& r : sel.trajectories) {
    CHECK(std::abs(angle_difference(r.theta_final, kPi - 0.5)) <= 0.3);
  }
  CHECK(acceptance_fraction(e, sel) == doctest::Approx(sel.trajectories.size() / 200.0));
  const auto short_run = simulate_ensemble(base(50, 0.05));
  try {
    postselect(short_run, 0.07, 0.05);  // far from pi - 0.5 after 0.05 us
    FAIL("expected EmptySelection");
  } catch (const Error& err) {
    CHECK(err.kind() == ErrorKind::EmptySelection);
    CHECK(err.detail() == 0.0);
  }
}

TEST_CASE("density histogram is max-normalized and tracks a single trajectory") {
  const auto e = simulate_ensemble(base(300, 2.0));
  const auto h = density_histogram(e, 20, 30);
  double top = 0.0;
  for (double v : h.values) {
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    top = std::max(top, v);
  }
  CHECK(top == 1.0);

  Ensemble one = e;
  one.trajectories.resize(1);
  const auto h1 = density_histogram(one, 20, 30);
  for (std::size_t it = 0; it < h1.n_time; ++it) {
    std::size_t nonzero = 0;
    for (std::size_t ith = 0; ith < h1.n_theta; ++ith) nonzero += h1.at(it, ith) > 0.0;
    CHECK(nonzero == 1);
    const long bin = h1.theta_bin(track_theta(one, one.trajectories[0], h1.t_center(it)));
    REQUIRE(bin >= 0);
    CHECK(h1.at(it, static_cast<std::size_t>(bin)) == 1.0);
  }
}

TEST_CASE("ridges and branch counts on a known ensemble") {
  // Trajectories that all follow one optimal path put every ridge on it.
  const auto path = integrate(kIsland, {kPi - 0.5, -0.44247943}, 9.0);
  Ensemble e;
  e.config = base(20, 9.0);
  for (std::size_t k = 0; k <= 90; ++k) e.times.push_back(0.1 * k);
  for (std::uint64_t id = 0; id < 20; ++id) {
    TrajectoryRecord r;
    r.id = id;
    for (double t : e.times) {
      const auto i = static_cast<std::size_t>(std::lround(t / 9.0 * (path.samples.size() - 1)));
      r.theta.push_back(static_cast<float>(path.samples[i].theta + 1e-3 * (static_cast<double>(id) - 10.0)));
    }
    r.theta_final = r.theta.back();
    e.trajectories.push_back(r);
  }
  const auto h = density_histogram(e, 30, 60);
  CHECK(ridge_fraction(h, path) == 1.0);

  MultipathSolution sol;
  sol.system = kIsland;
  Branch b;
  b.kind = BranchKind::MLP;
  b.path = path;
  sol.branches.push_back(b);
  const auto counts = branch_count_check(e, sol);
  CHECK(counts.counts[0] == 20);
  CHECK(counts.fractions[0] == 1.0);
  CHECK(counts.fractions_mlp_only[0] == 1.0);
}

TEST_CASE("terminal L1 distance is a metric on histograms") {
  const auto e = simulate_ensemble(base(500, 1.0));
  CHECK(terminal_l1_distance(e, e) == 0.0);
  auto c = base(500, 1.0);
  c.seed = 99;
  const double d = terminal_l1_distance(e, simulate_ensemble(c));
  CHECK(d > 0.0);
  CHECK(d <= 2.0);
}

TEST_CASE("sim config validation and strict JSON") {
  auto c = base(10, 1.0);
  c.dt = 0.02;  // above min(tau) / 100
  CHECK_THROWS_AS(c.validate(), Error);
  c = base(0, 1.0);
  CHECK_THROWS_AS(c.validate(), Error);
  c = base(10, 1.0);
  c.formulation = Formulation::SmeIto;
  const nlohmann::json j = c;
  CHECK(j.at("formulation") == "sme_ito");
  const auto back = j.get<SimConfig>();
  CHECK(back.system == c.system);
  CHECK(back.seed == c.seed);
  CHECK(back.formulation == Formulation::SmeIto);
  auto bad = j;
  bad["unexpected"] = 1;
  CHECK_THROWS_AS(bad.get<SimConfig>(), Error);
  CHECK_THROWS_AS(formulation_from_string("euler"), Error);
}
