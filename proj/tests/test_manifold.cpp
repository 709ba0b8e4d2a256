#include <doctest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "opq/error.hpp"
#include "opq/manifold.hpp"
#include "opq/phase.hpp"

using namespace opq;

namespace {

const SystemSpec kIsland = SystemSpec::two_observable(1.0, 2.0);
constexpr double kThetaI = kPi - 0.5;

bool same_bits(double a, double b) { return std::memcmp(&a, &b, sizeof a) == 0; }

}  // namespace

TEST_CASE("serial and parallel manifold evolution are bit-identical") {
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  RefinementOptions serial;
  serial.execution = Execution::Serial;
  RefinementOptions parallel;
  parallel.execution = Execution::Parallel;
  for (double t : {3.15, 9.0}) {
    const auto a = evolve_manifold(kIsland, kThetaI, lo, hi, t, serial);
    const auto b = evolve_manifold(kIsland, kThetaI, lo, hi, t, parallel);
    REQUIRE(a.points.size() == b.points.size());
    bool identical = true;
    for (std::size_t i = 0; i < a.points.size(); ++i) {
      identical = identical && same_bits(a.points[i].p_i, b.points[i].p_i) &&
                  same_bits(a.points[i].theta, b.points[i].theta) &&
                  same_bits(a.points[i].p, b.points[i].p) && same_bits(a.points[i].S, b.points[i].S);
    }
    CHECK(identical);
    CHECK(a.fold_markers == b.fold_markers);
  }
}

TEST_CASE("snapshots are refined, ordered and exact at t = 0") {
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  const auto snap0 = evolve_manifold(kIsland, kThetaI, lo, hi, 0.0);
  for (std::size_t i = 0; i < snap0.points.size(); ++i) {
    CHECK(snap0.points[i].theta == kThetaI);
    CHECK(snap0.points[i].p == snap0.points[i].p_i);
    CHECK(jacobian_dthetaf_dpi(snap0, i) == 0.0);
  }
  const RefinementOptions opts;
  const auto snap = evolve_manifold(kIsland, kThetaI, lo, hi, 9.0, opts);
  CHECK(snap.unresolved_segments == 0);
  for (std::size_t i = 1; i < snap.points.size(); ++i) {
    const auto& a = snap.points[i - 1];
    const auto& b = snap.points[i];
    CHECK(b.p_i > a.p_i);
    CHECK(std::hypot(b.theta - a.theta, b.p - a.p) <= opts.max_gap * (1.0 + 1e-12));
  }
}

TEST_CASE("variational and finite-difference Jacobians agree") {
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  const auto snap = evolve_manifold(kIsland, kThetaI, lo, hi, 5.0);
  std::size_t checked = 0;
  for (std::size_t i = 1; i + 1 < snap.points.size(); i += 7) {
    const double fd = jacobian_dthetaf_dpi(snap, i);
    const double var = snap.points[i].dtheta_dpi;
    CHECK(fd == doctest::Approx(var).epsilon(1e-3).scale(1.0));
    ++checked;
  }
  CHECK(checked > 10);
  // A direct central difference at one momentum.
  const double p = 0.3, h = 1e-6;
  const auto one = evolve_manifold(kIsland, kThetaI, p - h, p + h, 5.0);
  const double direct = (one.points.back().theta - one.points.front().theta) / (2 * h);
  CHECK(direct == doctest::Approx(one.points.front().dtheta_dpi).epsilon(1e-5));
}

TEST_CASE("the manifold first folds at the caustic onset") {
  const double onset = caustic_onset(kIsland, kThetaI);
  CHECK(onset == doctest::Approx(6.32).epsilon(0.05 / 6.32));
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  CHECK(evolve_manifold(kIsland, kThetaI, lo, hi, 0.98 * onset).fold_markers.empty());
  const auto after = evolve_manifold(kIsland, kThetaI, lo, hi, 1.05 * onset);
  REQUIRE_FALSE(after.fold_markers.empty());
  CHECK(std::isinf(van_vleck(after, after.fold_markers.front())));
  CHECK(caustic_onset_bisection(kIsland, kThetaI) == doctest::Approx(onset).epsilon(1e-3));
  CHECK_THROWS_AS(caustic_onset(SystemSpec::driven_z(1.0, 1.0), kPi / 2.0), Error);
}

TEST_CASE("island momentum range touches the separatrix") {
  const auto [lo, hi] = island_momentum_range(kIsland, kThetaI);
  const double E_c = island_spec(kIsland)->E_c;
  CHECK(hamiltonian(kIsland, {kThetaI, lo}) == doctest::Approx(E_c).epsilon(1e-8));
  CHECK(hamiltonian(kIsland, {kThetaI, hi}) == doctest::Approx(E_c).epsilon(1e-8));
  CHECK(hamiltonian(kIsland, {kThetaI, lo}) < E_c);
  CHECK(hamiltonian(kIsland, {kThetaI, hi}) < E_c);
}

TEST_CASE("every multipath root reaches the target under independent integration") {
  for (double T : {9.0, 18.0}) {
    const auto sol = find_multipaths(kIsland, kThetaI, 3.5, T);
    CHECK(sol.branches.size() == (T == 9.0 ? 3u : 5u));
    double total = 0.0;
    for (const auto& b : sol.branches) {
      // The reference runs at 100x the solver's tolerance.
      const auto end = integrate_end(kIsland, {kThetaI, b.p_i}, T, 1e-12, 1e-14);
      CHECK(end.theta == doctest::Approx(3.5 + kTwoPi * b.winding).epsilon(1e-8));
      CHECK(end.S == doctest::Approx(b.S).epsilon(1e-8));
      CHECK(b.path.back().theta == doctest::Approx(end.theta).epsilon(1e-8));
      total += b.weight;
    }
    CHECK(total == doctest::Approx(1.0));
    const auto mlp = branch_weights(sol, false);
    CHECK(std::accumulate(mlp.begin(), mlp.end(), 0.0) == doctest::Approx(1.0));
    for (std::size_t i = 0; i < mlp.size(); ++i) {
      if (sol.branches[i].kind == BranchKind::LLP) CHECK(mlp[i] == 0.0);
    }
  }
}

TEST_CASE("winding branches of the driven system") {
  const auto s = SystemSpec::driven_z(1.0, 1.0);
  const auto sol = find_multipaths(s, kPi / 2.0, 11.0 * kPi / 6.0, 8.0);
  REQUIRE(sol.branches.size() == 3);
  CHECK(sol.branches[0].winding == 0);
  CHECK(sol.branches[1].winding == 1);
  CHECK(sol.branches[2].winding == 2);
  // Each weight is the softmax of the actions.
  double z = 0.0;
  for (const auto& b : sol.branches) z += std::exp(b.S);
  for (const auto& b : sol.branches) CHECK(b.weight == doctest::Approx(std::exp(b.S) / z));
}

TEST_CASE("most likely final state has vanishing final momentum") {
  const auto s = SystemSpec::driven_z(1.0, 1.0);
  const auto f = most_likely_final(s, kPi / 2.0, 8.0);
  const auto end = integrate_end(s, {kPi / 2.0, f.p_i}, 8.0);
  CHECK(std::abs(end.p) < 1e-8);
  CHECK(end.theta == doctest::Approx(f.theta_T));
  CHECK(f.theta_T == doctest::Approx(9.90).epsilon(0.02 / 9.9));
}

TEST_CASE("solver errors") {
  try {
    find_multipaths(kIsland, kThetaI, 0.5, 2.0);
    FAIL("expected NoSolution");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::NoSolution);
  }
  RefinementOptions tight;
  tight.initial_points = 16;
  tight.max_points = 64;
  const auto [lo, hi] = default_search_range(kIsland, kThetaI);
  try {
    evolve_manifold(kIsland, kThetaI, lo, hi, 27.0, tight);
    FAIL("expected RefinementBudgetExceeded");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::RefinementBudgetExceeded);
  }
}
