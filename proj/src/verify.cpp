#include "opq/verify.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>

#include <boost/math/tools/roots.hpp>
#include <fmt/format.h>

#include "opq/classifier.hpp"
#include "opq/error.hpp"
#include "opq/limits.hpp"
#include "opq/optimal_path.hpp"
#include "opq/phase.hpp"
#include "opq/trajectory.hpp"

namespace opq {

namespace {

struct GoldenBranch {
  double p_i;
  BranchKind kind;
  double percent_all;  // weights with the LLP in the normalization
};

struct GoldenSet {
  double T;
  std::vector<GoldenBranch> branches;
};

// Island multipaths for tau_z = 2, tau_x = 1, theta_i = pi - 1/2, theta_f = 3.5.
const std::array<GoldenSet, 3> kGoldenSets = {{
    {9.0,
     {{-0.44247943, BranchKind::MLP, 41.4},
      {0.10592792, BranchKind::LLP, 24.4},
      {0.90882604, BranchKind::MLP, 34.2}}},
    {18.0,
     {{-0.46340433, BranchKind::MLP, 44.2},
      {-0.44816125, BranchKind::MLP, 12.9},
      {0.12631625, BranchKind::LLP, 2.6},
      {0.89614502, BranchKind::MLP, 4.0},
      {0.93875909, BranchKind::MLP, 36.3}}},
    {27.0,
     {{-0.46343702, BranchKind::MLP, 44.6},
      {-0.46284337, BranchKind::MLP, 12.3},
      {-0.43987448, BranchKind::MLP, 1.3},
      {-0.33363249, BranchKind::LLP, 0.5},
      {0.91225871, BranchKind::MLP, 1.1},
      {0.93735002, BranchKind::MLP, 3.7},
      {0.93880374, BranchKind::MLP, 36.5}}},
}};

constexpr double kIslandThetaI = kPi - 0.5;
constexpr double kIslandThetaF = 3.5;

SystemSpec island_system() { return SystemSpec::two_observable(1.0, 2.0); }
SystemSpec winding_system() { return SystemSpec::driven_z(1.0, 1.0); }

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// State shared between checks so expensive solutions are computed once.
struct Context {
  VerifyOptions opts;
  std::vector<MultipathSolution> island;  // T = 9, 18, 27
  std::optional<MultipathSolution> winding;
  double island_seconds = 0.0;
};

const std::vector<MultipathSolution>& island_solutions(Context& ctx) {
  if (ctx.island.empty()) {
    const auto t0 = Clock::now();
    for (const auto& g : kGoldenSets) {
      ctx.island.push_back(find_multipaths(island_system(), kIslandThetaI, kIslandThetaF, g.T));
    }
    ctx.island_seconds = seconds_since(t0);
  }
  return ctx.island;
}

// The first winding branch reaches 11 pi / 6, one pi / 3 short of the most
// likely final angle after one revolution.
const MultipathSolution& winding_solution(Context& ctx) {
  if (!ctx.winding) {
    ctx.winding = find_multipaths(winding_system(), kPi / 2.0, 11.0 * kPi / 6.0, 8.0);
  }
  return *ctx.winding;
}

CheckResult check_caustic_onset(Context&) {
  const auto spec = island_system();
  const double formula = caustic_onset(spec, kIslandThetaI);
  const double bisect = caustic_onset_bisection(spec, kIslandThetaI);
  const double rel = std::abs(bisect - formula) / formula;
  CheckResult r{"caustic-onset"};
  r.pass = std::abs(formula - 6.32) <= 0.05 && rel <= 1e-3;
  r.detail = fmt::format("onset {:.6f} (target 6.32 +- 0.05), bisection {:.6f}, rel {:.2e}", formula,
                         bisect, rel);
  return r;
}

CheckResult check_root_sets(Context& ctx) {
  const auto& sols = island_solutions(ctx);
  CheckResult r{"multipath-root-sets"};
  bool ok = true;
  double worst = 0.0;
  std::string counts;
  for (std::size_t k = 0; k < sols.size(); ++k) {
    const auto& got = sols[k].branches;
    const auto& want = kGoldenSets[k].branches;
    counts += fmt::format("{}{}", k ? "/" : "", got.size());
    if (got.size() != want.size()) {
      ok = false;
      continue;
    }
    for (std::size_t j = 0; j < got.size(); ++j) {
      worst = std::max(worst, std::abs(got[j].p_i - want[j].p_i));
    }
  }
  r.pass = ok && worst <= 1e-3 && ctx.island_seconds <= 120.0;
  r.detail = fmt::format("roots {} (want 3/5/7), max |dp_i| {:.2e}, solve time {:.1f} s", counts,
                         worst, ctx.island_seconds);
  return r;
}

CheckResult check_classification(Context& ctx) {
  const auto& sols = island_solutions(ctx);
  CheckResult r{"classification"};
  bool kinds_ok = true;
  double worst = 0.0;
  for (std::size_t k = 0; k < sols.size(); ++k) {
    const auto& got = sols[k].branches;
    const auto& want = kGoldenSets[k].branches;
    if (got.size() != want.size()) {
      kinds_ok = false;
      continue;
    }
    for (std::size_t j = 0; j < got.size(); ++j) {
      kinds_ok = kinds_ok && got[j].kind == want[j].kind;
      worst = std::max(worst, std::abs(100.0 * got[j].weight - want[j].percent_all));
    }
  }
  const auto& t9 = sols.front().branches;
  std::string triple;
  for (const auto& b : t9) triple += fmt::format(" {}:{:.2f}", to_string(b.kind), 100.0 * b.weight);
  r.pass = kinds_ok && worst <= 0.5;
  r.detail = fmt::format("kinds {}, max |d weight| {:.2f} pts, T=9{}", kinds_ok ? "match" : "differ",
                         worst, triple);
  return r;
}

CheckResult check_winding(Context& ctx) {
  const auto final_state = most_likely_final(winding_system(), kPi / 2.0, 8.0);
  const auto& sol = winding_solution(ctx);
  CheckResult r{"winding-multipath"};
  const std::array<double, 3> S_want = {-2.82, -2.94, -15.68};
  bool ok = std::abs(final_state.theta_T - 9.90) <= 0.02 && sol.branches.size() == 3;
  std::string actions, weights;
  if (sol.branches.size() == 3) {
    for (std::size_t j = 0; j < 3; ++j) {
      const auto& b = sol.branches[j];
      ok = ok && std::abs(b.S - S_want[j]) <= 0.02;
      actions += fmt::format("{}{:.4f}", j ? " " : "", b.S);
      weights += fmt::format("{}{:.4g}", j ? " " : "", b.weight);
    }
    const double w3 = sol.branches[2].weight;
    ok = ok && std::abs(sol.branches[0].weight - 0.53) <= 0.01 &&
         std::abs(sol.branches[1].weight - 0.47) <= 0.01 && w3 >= 1.38e-6 / 2.0 &&
         w3 <= 1.38e-6 * 2.0;
  }
  r.pass = ok;
  r.detail = fmt::format("theta_T {:.5f}, {} branches, S [{}], weights [{}]", final_state.theta_T,
                         sol.branches.size(), actions, weights);
  return r;
}

bool sdot_nonpositive(const SystemSpec& spec) {
  for (int i = 0; i < 200; ++i) {
    for (int j = 0; j < 200; ++j) {
      const double theta = kTwoPi * i / 200.0;
      const double p = -3.0 + 6.0 * j / 199.0;
      if (sdot(spec, {theta, p}) > 0.0) return false;
    }
  }
  return true;
}

CheckResult check_analytic_structure(Context&) {
  CheckResult r{"analytic-structure"};
  auto table_ok = [](double tau_x, double tau_z) {
    const auto isl = island_spec(SystemSpec::two_observable(tau_x, tau_z));
    const double strong = std::min(tau_x, tau_z), weak = std::max(tau_x, tau_z);
    return isl && isl->E_c == -1.0 / (2.0 * weak) && isl->E_m == -1.0 / (2.0 * strong);
  };
  const bool table = table_ok(1.0, 2.0) && table_ok(2.0, 1.0) && table_ok(1.6, 1.4) &&
                     table_ok(1.4, 1.6);
  double fp_err = 0.0, flow_err = 0.0, estar_err = 0.0;
  for (double tau : {0.5, 1.0, 2.0}) {
    for (double delta : {0.5, 1.0, 3.0}) {
      const auto spec = SystemSpec::driven_z(tau, delta);
      const auto fp = driven_fixed_point(spec);
      fp_err = std::max({fp_err, std::abs(fp.theta - std::atan(tau * delta)),
                         std::abs(fp.p + tau * delta)});
      const auto v = hamilton_rhs(spec, fp);
      flow_err = std::max({flow_err, std::abs(v.dtheta_dt), std::abs(v.dp_dt)});
      const double estar = -tau * delta * delta / 2.0;
      estar_err = std::max({estar_err, std::abs(driven_separatrix_energy(spec) - estar),
                            std::abs(hamiltonian(spec, fp) - estar) / std::abs(estar)});
    }
  }
  const bool fp_ok = fp_err <= 1e-14 && flow_err <= 1e-13 && estar_err <= 1e-14;
  const bool sdot_ok = sdot_nonpositive(island_system()) && sdot_nonpositive(winding_system());
  r.pass = table && fp_ok && sdot_ok;
  r.detail = fmt::format(
      "island table {}, fixed point err {:.1e}, flow {:.1e}, E* err {:.1e}, Sdot <= 0 {}",
      table ? "exact" : "wrong", fp_err, flow_err, estar_err, sdot_ok ? "yes" : "no");
  return r;
}

CheckResult check_zero_energy(Context&) {
  CheckResult r{"zero-energy-optimality"};
  bool ok = true;
  for (double tau : {0.5, 1.0, 2.0}) {
    const auto spec = SystemSpec::driven_z(tau, 1.0);
    const double estar = driven_separatrix_energy(spec);
    // Symmetric grid across E = 0 that does not contain it.
    std::vector<double> grid(50);
    for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = 0.9 * estar * (1.0 - 2.0 * i / 49.0);
    const auto rows = scan_T2pi_and_S(spec, grid);
    const auto best = std::max_element(rows.begin(), rows.end(),
                                       [](const auto& a, const auto& b) { return a.S < b.S; });
    const double spacing = std::abs(grid[1] - grid[0]);
    ok = ok && std::abs(best->E) <= spacing;
    r.detail += fmt::format("{}tau {}: argmax E {:.4f} (spacing {:.4f})", r.detail.empty() ? "" : "; ",
                            tau, best->E, spacing);
  }
  r.pass = ok;
  return r;
}

CheckResult check_periods(Context&) {
  CheckResult r{"period-cross-validation"};
  const auto spec = island_system();
  double worst = 0.0;
  for (double E : island_energy_grid(spec, 10)) {
    const double q = island_period(spec, E);
    const double o = full_orbit_period(spec, E);
    worst = std::max(worst, std::abs(q - o) / o);
  }
  const auto isl = *island_spec(spec);
  std::vector<double> grid;
  for (int i = 1; i <= 40; ++i) grid.push_back(isl.E_m + (isl.E_c - isl.E_m) * i / 41.0);
  const auto rows = scan_periods(spec, grid);
  bool monotone = true;
  for (std::size_t i = 1; i < rows.size(); ++i) monotone = monotone && rows[i].period > rows[i - 1].period;
  r.pass = worst <= 1e-4 && monotone;
  r.detail = fmt::format("max rel diff {:.2e} over 10 energies; period {} toward E_m ({:.4f} -> {:.4f})",
                         worst, monotone ? "decreases" : "is not monotone", rows.back().period,
                         rows.front().period);
  return r;
}

CheckResult check_stochastic_laws(Context& ctx) {
  CheckResult r{"stochastic-laws"};
  // Equal strengths: theta diffuses freely with variance T / tau.
  SimConfig eq;
  eq.system = SystemSpec::two_observable(1.0, 1.0);
  eq.t_final = 2.0;
  eq.n_trajectories = ctx.opts.n_trajectories;
  eq.seed = ctx.opts.seed + 1;
  eq.theta_i = 0.3;
  eq.record_stride = eq.steps();
  eq.execution = ctx.opts.execution;
  const auto t0 = Clock::now();
  const auto free = simulate_ensemble(eq);
  const double t_eq = seconds_since(t0);
  std::vector<double> finals;
  finals.reserve(free.trajectories.size());
  for (const auto& tr : free.trajectories) finals.push_back(wrap_angle(tr.theta_final));
  const double ks = ks_statistic(finals, [&](double th) {
    return wrapped_gaussian_cdf(eq.theta_i, 1.0, eq.t_final, th);
  });

  // Both formulations on the unequal-strength system with the same noise.
  SimConfig mixed = eq;
  mixed.system = island_system();
  mixed.theta_i = kIslandThetaI;
  mixed.seed = ctx.opts.seed + 2;
  const auto t1 = Clock::now();
  const auto strat = simulate_ensemble(mixed);
  const double t_strat = seconds_since(t1);
  mixed.formulation = Formulation::SmeIto;
  const auto ito = simulate_ensemble(mixed);
  const double l1 = terminal_l1_distance(strat, ito);

  r.pass = ks <= 0.01 && l1 <= 0.02 && t_eq <= 300.0 && t_strat <= 300.0;
  r.detail = fmt::format("KS {:.4f} (N={}), Ito vs Stratonovich L1 {:.4f}", ks,
                         free.trajectories.size(), l1);
  return r;
}

CheckResult check_density(Context& ctx) {
  CheckResult r{"op-vs-density"};
  SimConfig c;
  c.system = island_system();
  c.t_final = 9.0;
  c.theta_i = kIslandThetaI;
  c.n_trajectories = ctx.opts.n_trajectories;
  c.seed = ctx.opts.seed;
  c.execution = ctx.opts.execution;
  const auto ensemble = simulate_ensemble(c);
  const auto selected = postselect(ensemble, kIslandThetaF, 0.05);
  const auto& sol = island_solutions(ctx).front();
  // 40 theta bins keep about 25 counts in an occupied bin at N = 1e5.
  const auto h = density_histogram(selected, 60, 40);
  std::vector<double> ridge;
  bool ok = sol.branches.size() == 3 && c.n_trajectories >= 100'000;
  for (const auto& b : sol.branches) {
    const double f = ridge_fraction(h, b.path);
    ridge.push_back(f);
    ok = ok && (b.kind == BranchKind::MLP ? f >= 0.8 : f < 0.8);
  }
  const auto counts = branch_count_check(selected, sol);
  const std::array<double, 3> want = {54.8, 0.0, 45.2};
  double worst = 0.0;
  for (std::size_t j = 0; j < counts.fractions_mlp_only.size() && j < 3; ++j) {
    if (sol.branches[j].kind != BranchKind::MLP) continue;
    worst = std::max(worst, std::abs(100.0 * counts.fractions_mlp_only[j] - want[j]));
  }
  ok = ok && worst <= 5.0;
  r.pass = ok;
  std::string fr;
  for (std::size_t j = 0; j < ridge.size(); ++j) {
    fr += fmt::format("{}{}:{:.3f}", j ? " " : "", to_string(sol.branches[j].kind), ridge[j]);
  }
  std::string split;
  for (std::size_t j = 0; j < counts.fractions_mlp_only.size(); ++j) {
    if (sol.branches[j].kind != BranchKind::MLP) continue;
    split += fmt::format("{}{:.1f}", split.empty() ? "" : "/", 100.0 * counts.fractions_mlp_only[j]);
  }
  r.detail = fmt::format("selected {} ({:.2f}%), ridge fractions [{}], MLP split {} (want 54.8/45.2 +- 5)",
                         selected.trajectories.size(),
                         100.0 * acceptance_fraction(ensemble, selected), fr, split);
  return r;
}

CheckResult check_limits(Context&) {
  CheckResult r{"rabi-limits"};
  auto numeric = [](double tau, double theta_f) {
    return traversal_action(SystemSpec::driven_z(tau, 1.0), 0.0, theta_f, 0.0);
  };
  const RabiLimitInputs in50{1.0, 50.0, 0.0, kPi / 2.0};
  const auto n50 = numeric(50.0, kPi / 2.0);
  const double t_rel = std::abs(rabi_time_approx(in50) - n50.T) / n50.T;
  const double s_rel = std::abs(rabi_action_A(in50) - n50.S) / std::abs(n50.S);
  std::array<double, 3> res{};
  const std::array<double, 3> taus = {25.0, 50.0, 100.0};
  for (std::size_t k = 0; k < 3; ++k) {
    res[k] = std::abs(rabi_time_approx({1.0, taus[k], 0.0, kPi / 2.0}) - numeric(taus[k], kPi / 2.0).T);
  }
  const double q1 = res[0] / res[1];
  const double q2 = res[1] / res[2];
  const double near = rabi_action_C({1.0, 50.0, kPi / 2.0, kPi - 1e-3});
  bool pole = false;
  try {
    rabi_action_C({1.0, 50.0, kPi / 2.0, kPi});
  } catch (const Error& e) {
    pole = e.kind() == ErrorKind::PoleDivergence;
  }
  r.pass = t_rel <= 0.01 && s_rel <= 0.02 && q1 > 3.0 && q1 < 5.0 && q2 > 3.0 && q2 < 5.0 &&
           std::abs(near) > 1e3 && near < 0.0 && pole;
  r.detail = fmt::format(
      "time rel {:.2e}, action rel {:.2e}, residual ratios {:.2f} {:.2f}, S_C near pole {:.3g}, "
      "pole {}",
      t_rel, s_rel, q1, q2, near, pole ? "detected" : "missed");
  return r;
}

CheckResult check_path_integrity(Context& ctx) {
  CheckResult r{"path-integrity"};
  std::vector<const OptimalPath*> paths;
  for (const auto& s : island_solutions(ctx)) {
    for (const auto& b : s.branches) paths.push_back(&b.path);
  }
  for (const auto& b : winding_solution(ctx).branches) paths.push_back(&b.path);
  double drift = 0.0, action = 0.0, residual = 0.0;
  for (const auto* p : paths) {
    drift = std::max(drift, p->max_energy_drift);
    action = std::max(action, action_consistency(*p));
    residual = std::max(residual, trajectory_residual(*p));
  }
  r.pass = drift <= 1e-8 && action <= 1e-6 && residual <= 1e-5;
  r.detail = fmt::format("{} paths: energy drift {:.1e}, action consistency {:.1e}, residual {:.1e}",
                         paths.size(), drift, action, residual);
  return r;
}

}  // namespace

double full_orbit_period(const SystemSpec& spec, double E) {
  const auto isl = island_spec(spec);
  if (!isl) throw Error(ErrorKind::NotInIsland, "system has no islands");
  const double c = isl->center_theta;
  const double chunk = kTwoPi / island_linear_frequency(spec);
  IntegrateOptions o;
  o.n_samples = 2001;
  PhasePoint from{c, p_branches(spec, c, E).p_plus};
  double t0 = 0.0;
  bool far_side = false;
  for (int k = 0; k < 100'000; ++k) {
    const auto path = integrate(spec, from, chunk, o);
    for (std::size_t i = 1; i < path.samples.size(); ++i) {
      const auto& s0 = path.samples[i - 1];
      const double y1 = path.samples[i].theta - c;
      if (y1 < 0.0) far_side = true;
      if (!far_side || s0.theta - c >= 0.0 || y1 < 0.0) continue;
      const PhasePoint base{s0.theta, s0.p};
      auto f = [&](double dt) {
        return dt <= 0.0 ? base.theta - c : integrate_end(spec, base, dt).theta - c;
      };
      std::uintmax_t iters = 200;
      const auto [lo, hi] = boost::math::tools::toms748_solve(
          f, 0.0, path.samples[i].t - s0.t, boost::math::tools::eps_tolerance<double>(52), iters);
      return t0 + s0.t + 0.5 * (lo + hi);
    }
    t0 += chunk;
    from = path.end();
  }
  throw Error(ErrorKind::NoSolution, "orbit did not close");
}

double ks_statistic(std::vector<double> samples, const std::function<double(double)>& cdf) {
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0.0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double F = cdf(samples[i]);
    d = std::max({d, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
  }
  return d;
}

std::string format_check(const CheckResult& r) {
  const char* status = r.skipped ? "SKIP" : (r.pass ? "PASS" : "FAIL");
  return fmt::format("{}  {:<26} [{:7.1f} s]  {}", status, r.name, r.seconds, r.detail);
}

std::vector<CheckResult> run_acceptance(const VerifyOptions& opts,
                                        const std::function<void(const CheckResult&)>& on_result) {
  using Check = CheckResult (*)(Context&);
  struct Entry {
    const char* name;
    Check fn;
    bool stochastic;
  };
  const std::array<Entry, 11> entries = {{
      {"caustic-onset", check_caustic_onset, false},
      {"multipath-root-sets", check_root_sets, false},
      {"classification", check_classification, false},
      {"winding-multipath", check_winding, false},
      {"analytic-structure", check_analytic_structure, false},
      {"zero-energy-optimality", check_zero_energy, false},
      {"period-cross-validation", check_periods, false},
      {"stochastic-laws", check_stochastic_laws, true},
      {"op-vs-density", check_density, true},
      {"rabi-limits", check_limits, false},
      {"path-integrity", check_path_integrity, false},
  }};
  Context ctx;
  ctx.opts = opts;
  std::vector<CheckResult> out;
  for (const auto& e : entries) {
    CheckResult r{e.name};
    if (e.stochastic && !opts.stochastic) {
      r.skipped = true;
      r.detail = "Monte-Carlo checks disabled";
    } else {
      const auto t0 = Clock::now();
      try {
        r = e.fn(ctx);
      } catch (const std::exception& ex) {
        r.pass = false;
        r.detail = fmt::format("threw {}", ex.what());
      }
      r.seconds = seconds_since(t0);
    }
    // The caustic-onset criterion carries its own 30 s budget.
    if (r.name == "caustic-onset" && r.seconds > 30.0) r.pass = false;
    if (on_result) on_result(r);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace opq
