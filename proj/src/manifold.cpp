#include "opq/manifold.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <string>

#include <boost/math/tools/minima.hpp>
#include <boost/math/tools/roots.hpp>
#include <nlohmann/json.hpp>

#include "opq/error.hpp"
#include "opq/io.hpp"
#include "opq/ode.hpp"
#include "opq/phase.hpp"

namespace opq {

namespace {

using Var = std::array<double, 5>;  // theta, p, S, dtheta/dp_i, dp/dp_i

ManifoldPoint evaluate(const SystemSpec& spec, double theta_i, double p_i, double t,
                       double rtol, double atol) {
  if (t == 0.0) return {p_i, theta_i, p_i, 0.0, 0.0};
  auto rhs = [&spec](double, const Var& y, Var& dy) {
    const auto k = coefficients(spec, y[0]);
    const double p = y[1];
    dy[0] = 2.0 * p * k.a + k.b;
    dy[1] = -(p * p - 1.0) * k.da - p * k.db;
    dy[2] = -(1.0 + p * p) * k.a;
    dy[3] = (2.0 * p * k.da + k.db) * y[3] + 2.0 * k.a * y[4];
    dy[4] = (-(p * p - 1.0) * k.d2a - p * k.d2b) * y[3] - (2.0 * p * k.da + k.db) * y[4];
  };
  const double grid[2] = {0.0, t};
  ode::Options o;
  o.rtol = rtol;
  o.atol = atol;
  ManifoldPoint out{p_i, theta_i, p_i, 0.0, 0.0};
  ode::integrate<5>(rhs, Var{theta_i, p_i, 0.0, 0.0, 1.0}, grid, o,
                    [&](std::size_t, double, const Var& y) {
                      out = {p_i, y[0], y[1], y[2], y[3]};
                    });
  return out;
}

// Evaluates every p_i; the parallel and serial paths produce identical output.
std::vector<ManifoldPoint> evaluate_batch(const SystemSpec& spec, double theta_i,
                                          const std::vector<double>& ps, double t,
                                          const RefinementOptions& opts) {
  std::vector<ManifoldPoint> out(ps.size());
  std::exception_ptr failure;
  const auto n = static_cast<long>(ps.size());
  const bool parallel = opts.execution == Execution::Parallel;
#pragma omp parallel for schedule(dynamic, 4) if (parallel)
  for (long i = 0; i < n; ++i) {
    try {
      out[i] = evaluate(spec, theta_i, ps[i], t, opts.rtol, opts.atol);
    } catch (...) {
#pragma omp critical(opq_manifold_failure)
      if (!failure) failure = std::current_exception();
    }
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

double gap(const ManifoldPoint& a, const ManifoldPoint& b) {
  return std::hypot(b.theta - a.theta, b.p - a.p);
}

double turn(const ManifoldPoint& a, const ManifoldPoint& b, const ManifoldPoint& c) {
  const double ux = b.theta - a.theta, uy = b.p - a.p;
  const double vx = c.theta - b.theta, vy = c.p - b.p;
  return std::abs(std::atan2(ux * vy - uy * vx, ux * vx + uy * vy));
}

void mark_folds(ManifoldSnapshot& snap) {
  snap.fold_markers.clear();
  const auto& pts = snap.points;
  for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
    const double d0 = pts[i].theta - pts[i - 1].theta;
    const double d1 = pts[i + 1].theta - pts[i].theta;
    if (d0 * d1 < 0.0) snap.fold_markers.push_back(i);
  }
}

double theta_at(const SystemSpec& spec, double theta_i, double p_i, double T,
                const RefinementOptions& opts) {
  return evaluate(spec, theta_i, p_i, T, opts.rtol, opts.atol).theta;
}

struct Root {
  double p_i;
  double value;  // residual at p_i
};

// Root of g on [lo, hi] given g(lo), g(hi) of opposite sign (or one zero).
template <class G>
Root polish(G g, double lo, double hi, double g_lo, double g_hi) {
  if (g_lo == 0.0) return {lo, 0.0};
  if (g_hi == 0.0) return {hi, 0.0};
  std::uintmax_t iters = 200;
  const auto r = boost::math::tools::toms748_solve(
      g, lo, hi, g_lo, g_hi, boost::math::tools::eps_tolerance<double>(52), iters);
  const double a = g(r.first);
  const double b = g(r.second);
  return std::abs(a) <= std::abs(b) ? Root{r.first, a} : Root{r.second, b};
}

// Inserts the exact interior extremum of theta(p_i) at every fold marker so
// that theta is monotone between consecutive points.
std::vector<ManifoldPoint> monotone_pieces(const SystemSpec& spec, const ManifoldSnapshot& snap,
                                           const RefinementOptions& opts) {
  std::vector<ManifoldPoint> out;
  out.reserve(snap.points.size() + 2 * snap.fold_markers.size());
  std::size_t next = 0;
  for (std::size_t i = 0; i < snap.points.size(); ++i) {
    if (next < snap.fold_markers.size() && snap.fold_markers[next] == i) {
      ++next;
      const auto& a = snap.points[i - 1];
      const auto& c = snap.points[i + 1];
      const bool is_max = snap.points[i].theta > a.theta;
      auto f = [&](double p) {
        const double th = theta_at(spec, snap.theta_i, p, snap.t, opts);
        return is_max ? -th : th;
      };
      std::uintmax_t iters = 100;
      const auto m = boost::math::tools::brent_find_minima(f, a.p_i, c.p_i, 40, iters);
      const auto ext = evaluate(spec, snap.theta_i, m.first, snap.t, opts.rtol, opts.atol);
      if (ext.p_i < snap.points[i].p_i && ext.p_i > a.p_i) out.push_back(ext);
      out.push_back(snap.points[i]);
      if (ext.p_i > snap.points[i].p_i && ext.p_i < c.p_i) out.push_back(ext);
      continue;
    }
    out.push_back(snap.points[i]);
  }
  return out;
}

}  // namespace

ManifoldSnapshot evolve_manifold(const SystemSpec& spec, double theta_i, double p_lo,
                                 double p_hi, double t, const RefinementOptions& opts) {
  spec.validate();
  if (!std::isfinite(p_lo) || !std::isfinite(p_hi) || !(p_hi > p_lo)) {
    throw Error(ErrorKind::Usage, "p_range must be finite and increasing");
  }
  if (!(t >= 0.0)) throw Error(ErrorKind::Usage, "t must be >= 0");
  const std::size_t n0 = std::max<std::size_t>(opts.initial_points, 3);

  ManifoldSnapshot snap;
  snap.system = spec;
  snap.theta_i = theta_i;
  snap.t = t;

  std::vector<double> ps(n0);
  for (std::size_t i = 0; i < n0; ++i) {
    ps[i] = p_lo + (p_hi - p_lo) * static_cast<double>(i) / static_cast<double>(n0 - 1);
  }
  ps.back() = p_hi;
  snap.points = evaluate_batch(spec, theta_i, ps, t, opts);
  if (t == 0.0) return snap;

  const double dp_floor = 1e-13 * (p_hi - p_lo);
  const double short_segment = 1e-3 * opts.max_gap;
  for (;;) {
    auto& pts = snap.points;
    const std::size_t m = pts.size();
    std::vector<char> split(m - 1, 0);
    for (std::size_t i = 0; i + 1 < m; ++i) {
      if (gap(pts[i], pts[i + 1]) > opts.max_gap) split[i] = 1;
    }
    for (std::size_t i = 1; i + 1 < m; ++i) {
      if (gap(pts[i - 1], pts[i]) < short_segment && gap(pts[i], pts[i + 1]) < short_segment) {
        continue;
      }
      if (turn(pts[i - 1], pts[i], pts[i + 1]) > opts.max_turn) split[i - 1] = split[i] = 1;
    }
    std::vector<double> mids;
    std::size_t unresolved = 0;
    for (std::size_t i = 0; i + 1 < m; ++i) {
      if (!split[i]) continue;
      if (pts[i + 1].p_i - pts[i].p_i <= dp_floor) {
        ++unresolved;
        continue;
      }
      mids.push_back(0.5 * (pts[i].p_i + pts[i + 1].p_i));
    }
    snap.unresolved_segments = unresolved;
    if (mids.empty()) break;
    if (m + mids.size() > opts.max_points) {
      throw Error(ErrorKind::RefinementBudgetExceeded,
                  "manifold needs more than " + std::to_string(opts.max_points) + " points",
                  static_cast<double>(m + mids.size()));
    }
    const auto fresh = evaluate_batch(spec, theta_i, mids, t, opts);
    std::vector<ManifoldPoint> merged;
    merged.reserve(m + fresh.size());
    std::merge(pts.begin(), pts.end(), fresh.begin(), fresh.end(), std::back_inserter(merged),
               [](const ManifoldPoint& a, const ManifoldPoint& b) { return a.p_i < b.p_i; });
    pts = std::move(merged);
  }
  mark_folds(snap);
  return snap;
}

double jacobian_dthetaf_dpi(const ManifoldSnapshot& snap, std::size_t index) {
  const auto& pts = snap.points;
  if (pts.size() < 2 || index >= pts.size()) {
    throw Error(ErrorKind::Usage, "manifold index out of range");
  }
  if (snap.t == 0.0) return +0.0;
  if (index == 0) return (pts[1].theta - pts[0].theta) / (pts[1].p_i - pts[0].p_i);
  if (index + 1 == pts.size()) {
    return (pts[index].theta - pts[index - 1].theta) / (pts[index].p_i - pts[index - 1].p_i);
  }
  // Three-point derivative on a non-uniform grid.
  const double h1 = pts[index].p_i - pts[index - 1].p_i;
  const double h2 = pts[index + 1].p_i - pts[index].p_i;
  const double fm = pts[index - 1].theta, f0 = pts[index].theta, fp = pts[index + 1].theta;
  return (h1 * h1 * fp - h2 * h2 * fm + (h2 * h2 - h1 * h1) * f0) / (h1 * h2 * (h1 + h2));
}

double van_vleck(const ManifoldSnapshot& snap, std::size_t index) {
  if (std::binary_search(snap.fold_markers.begin(), snap.fold_markers.end(), index)) {
    return std::numeric_limits<double>::infinity();
  }
  const double j = std::abs(jacobian_dthetaf_dpi(snap, index));
  const double v = 1.0 / j;
  return v > kVanVleckCap ? std::numeric_limits<double>::infinity() : v;
}

std::pair<double, double> island_momentum_range(const SystemSpec& spec, double theta_i,
                                                double margin) {
  island_center_near(spec, theta_i);
  const auto is = *island_spec(spec);
  const auto br = p_branches(spec, theta_i, is.E_c);
  const double lo = std::min(br.p_plus, br.p_minus);
  const double hi = std::max(br.p_plus, br.p_minus);
  const double shrink = margin * (hi - lo);
  return {lo + shrink, hi - shrink};
}

std::pair<double, double> default_search_range(const SystemSpec& spec, double theta_i) {
  if (island_spec(spec)) return island_momentum_range(spec, theta_i);
  if (spec.kind == SystemKind::DrivenZ && spec.delta > 0.0 &&
      coeff_a(spec, theta_i) > 1e-12 / spec.min_tau()) {
    // Region A: paths above the separatrix through theta_i move forward for all time.
    const auto br = p_branches(spec, theta_i, driven_separatrix_energy(spec));
    const double lo = std::max(br.p_plus, br.p_minus);
    const double width = 3.0 * std::max(1.0, spec.tau * spec.delta);
    return {lo + 1e-9 * width, lo + width};
  }
  const double width = 3.0;
  return {-width, width};
}

double caustic_onset(const SystemSpec& spec, double theta_i) {
  island_center_near(spec, theta_i);
  const auto is = *island_spec(spec);
  const auto k = coefficients(spec, theta_i);
  // The vertical line touches the orbit through the discriminant minimum p = -b/2a.
  const double E = -k.a - k.b * k.b / (4.0 * k.a);
  const double scale = std::abs(is.E_c - is.E_m);
  if (E - is.E_m <= 1e-12 * scale) return kPi / island_linear_frequency(spec);
  if (E >= is.E_c) return std::numeric_limits<double>::infinity();
  return 0.5 * island_period(spec, E);
}

double caustic_onset_bisection(const SystemSpec& spec, double theta_i,
                               const RefinementOptions& opts, double t_tol) {
  const auto [lo_p, hi_p] = island_momentum_range(spec, theta_i);
  const auto is = *island_spec(spec);
  const double scale = std::abs(is.E_c - is.E_m);
  const double window = 3.0 * island_period(spec, is.E_m + 1e-6 * scale);

  // Most negative dtheta/dp_i on the manifold, polished around the sampled minimum.
  auto min_jacobian = [&](double t) {
    const auto snap = evolve_manifold(spec, theta_i, lo_p, hi_p, t, opts);
    const auto& pts = snap.points;
    std::size_t k = 0;
    for (std::size_t i = 1; i < pts.size(); ++i) {
      if (pts[i].dtheta_dpi < pts[k].dtheta_dpi) k = i;
    }
    const double a = pts[k == 0 ? 0 : k - 1].p_i;
    const double b = pts[std::min(k + 1, pts.size() - 1)].p_i;
    auto f = [&](double p) { return evaluate(spec, theta_i, p, t, opts.rtol, opts.atol).dtheta_dpi; };
    std::uintmax_t iters = 100;
    const auto m = boost::math::tools::brent_find_minima(f, a, b, 40, iters);
    return std::min(m.second, pts[k].dtheta_dpi);
  };

  double lo = 0.0;
  double hi = window;
  if (!(min_jacobian(hi) < 0.0)) {
    throw Error(ErrorKind::NoSolution, "manifold does not fold inside the search window", hi);
  }
  while (hi - lo > t_tol * std::max(1.0, hi)) {
    const double mid = 0.5 * (lo + hi);
    (min_jacobian(mid) < 0.0 ? hi : lo) = mid;
  }
  return 0.5 * (lo + hi);
}

const char* to_string(BranchKind kind) {
  switch (kind) {
    case BranchKind::MLP: return "MLP";
    case BranchKind::LLP: return "LLP";
    case BranchKind::SP: return "SP";
    case BranchKind::Unclassified: return "unclassified";
  }
  return "unclassified";
}

std::vector<double> branch_weights(const MultipathSolution& solution, bool include_llp) {
  const auto& br = solution.branches;
  std::vector<double> w(br.size(), 0.0);
  auto included = [&](const Branch& b) {
    return include_llp || b.kind == BranchKind::MLP || b.kind == BranchKind::Unclassified;
  };
  double s_max = -std::numeric_limits<double>::infinity();
  for (const auto& b : br) {
    if (included(b)) s_max = std::max(s_max, b.S);
  }
  double total = 0.0;
  for (std::size_t i = 0; i < br.size(); ++i) {
    if (!included(br[i])) continue;
    w[i] = std::exp(br[i].S - s_max);
    total += w[i];
  }
  if (total > 0.0) {
    for (auto& x : w) x /= total;
  }
  return w;
}

MultipathSolution find_multipaths(const SystemSpec& spec, double theta_i, double theta_f,
                                  double T, const MultipathOptions& opts) {
  if (!(T > 0.0)) throw Error(ErrorKind::Usage, "T must be positive");
  const auto range = opts.p_range ? *opts.p_range : default_search_range(spec, theta_i);

  MultipathSolution sol;
  sol.system = spec;
  sol.theta_i = theta_i;
  sol.theta_f = wrap_angle(theta_f);
  sol.T = T;
  sol.p_lo = range.first;
  sol.p_hi = range.second;

  const auto snap = evolve_manifold(spec, theta_i, range.first, range.second, T, opts.refinement);
  const auto pts = monotone_pieces(spec, snap, opts.refinement);

  struct Candidate {
    double p_i;
    long n;
    double residual;
  };
  std::vector<Candidate> found;
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double ta = pts[i].theta, tb = pts[i + 1].theta;
    const double lo = std::min(ta, tb), hi = std::max(ta, tb);
    const auto n_lo = static_cast<long>(std::ceil((lo - sol.theta_f) / kTwoPi));
    const auto n_hi = static_cast<long>(std::floor((hi - sol.theta_f) / kTwoPi));
    for (long n = std::max(n_lo, -opts.max_winding); n <= std::min(n_hi, opts.max_winding); ++n) {
      const double target = sol.theta_f + kTwoPi * static_cast<double>(n);
      // Count a root sitting exactly on a sample only in the segment to its left.
      if (ta == target && i > 0) continue;
      auto g = [&](double p) { return theta_at(spec, theta_i, p, T, opts.refinement) - target; };
      const auto r = polish(g, pts[i].p_i, pts[i + 1].p_i, ta - target, tb - target);
      if (std::abs(r.value) > opts.theta_tol) {
        throw Error(ErrorKind::AmbiguousBracket,
                    "root near p_i = " + io::format_double(r.p_i) + " did not converge",
                    r.p_i);
      }
      found.push_back({r.p_i, n, std::abs(r.value)});
    }
  }
  if (found.empty()) {
    throw Error(ErrorKind::NoSolution, "no p_i reaches theta_f in the search range");
  }
  std::sort(found.begin(), found.end(),
            [](const Candidate& a, const Candidate& b) { return a.p_i < b.p_i; });

  IntegrateOptions io;
  io.rtol = opts.refinement.rtol;
  io.atol = opts.refinement.atol;
  io.n_samples = opts.path_samples;
  sol.branches.resize(found.size());
  for (std::size_t k = 0; k < found.size(); ++k) {
    auto& b = sol.branches[k];
    b.p_i = found[k].p_i;
    b.winding = found[k].n;
    b.residual = found[k].residual;
    b.path = integrate(spec, {theta_i, b.p_i}, T, io);
    b.S = b.path.back().S;
    b.theta_T = b.path.back().theta;
    try {
      b.variation = classify(b.path);
      b.kind = b.variation->kind == PathKind::MLP   ? BranchKind::MLP
               : b.variation->kind == PathKind::LLP ? BranchKind::LLP
                                                    : BranchKind::SP;
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::SingularLegendre) throw;
      b.kind = BranchKind::Unclassified;
    }
  }
  const auto w_all = branch_weights(sol, true);
  const auto w_mlp = branch_weights(sol, false);
  for (std::size_t k = 0; k < sol.branches.size(); ++k) {
    sol.branches[k].weight = w_all[k];
    sol.branches[k].weight_mlp_only = w_mlp[k];
    sol.branches[k].negligible = w_all[k] < opts.weight_floor;
  }
  return sol;
}

FinalState most_likely_final(const SystemSpec& spec, double theta_i, double T,
                             std::optional<std::pair<double, double>> p_range,
                             const RefinementOptions& opts) {
  const auto range = p_range ? *p_range : default_search_range(spec, theta_i);
  const auto snap = evolve_manifold(spec, theta_i, range.first, range.second, T, opts);
  const auto& pts = snap.points;
  bool any = false;
  FinalState best;
  best.S = -std::numeric_limits<double>::infinity();
  auto g = [&](double p) { return evaluate(spec, theta_i, p, T, opts.rtol, opts.atol).p; };
  for (std::size_t i = 0; i + 1 < pts.size(); ++i) {
    const double a = pts[i].p, b = pts[i + 1].p;
    if (!(a * b < 0.0 || b == 0.0)) continue;
    const auto r = polish(g, pts[i].p_i, pts[i + 1].p_i, a, b);
    const auto e = evaluate(spec, theta_i, r.p_i, T, opts.rtol, opts.atol);
    any = true;
    if (e.S > best.S) best = {e.theta, r.p_i, e.S};
  }
  if (pts.front().p == 0.0) {
    any = true;
    if (pts.front().S > best.S) best = {pts.front().theta, pts.front().p_i, pts.front().S};
  }
  if (!any) throw Error(ErrorKind::NoSolution, "p(T) has no root in the search range");
  return best;
}

void write_snapshot_csv(const ManifoldSnapshot& snap, const std::filesystem::path& file) {
  io::CsvWriter csv(file, {"p_i", "theta", "p", "S", "fold_flag"});
  std::size_t next = 0;
  for (std::size_t i = 0; i < snap.points.size(); ++i) {
    const auto& q = snap.points[i];
    const bool fold = next < snap.fold_markers.size() && snap.fold_markers[next] == i;
    if (fold) ++next;
    csv << q.p_i << q.theta << q.p << q.S << (fold ? 1 : 0);
    csv.end_row();
  }
}

nlohmann::json solution_json(const MultipathSolution& s) {
  nlohmann::json branches = nlohmann::json::array();
  for (std::size_t k = 0; k < s.branches.size(); ++k) {
    const auto& b = s.branches[k];
    nlohmann::json j = {{"p_i", b.p_i},
                        {"winding", b.winding},
                        {"S", b.S},
                        {"theta_T", b.theta_T},
                        {"residual", b.residual},
                        {"kind", to_string(b.kind)},
                        {"weight", b.weight},
                        {"weight_mlp_only", b.weight_mlp_only},
                        {"negligible", b.negligible},
                        {"energy", b.path.energy},
                        {"path_csv", "branch_" + std::to_string(k) + ".csv"}};
    if (b.variation) {
      j["variation"] = {{"delta2_sine", b.variation->delta2_sine},
                        {"delta2_poly", b.variation->delta2_poly},
                        {"kind", to_string(b.variation->kind)}};
    }
    branches.push_back(std::move(j));
  }
  return {{"system", s.system},
          {"boundary", {{"theta_i", s.theta_i}, {"theta_f", s.theta_f}, {"T", s.T}}},
          {"p_range", {s.p_lo, s.p_hi}},
          {"branches", std::move(branches)}};
}

void write_solution(const MultipathSolution& s, const std::filesystem::path& dir,
                    const nlohmann::json& config) {
  auto j = solution_json(s);
  j["config"] = config;
  io::write_json(dir / "multipath.json", j);
  for (std::size_t k = 0; k < s.branches.size(); ++k) {
    write_path_csv(s.branches[k].path, dir / ("branch_" + std::to_string(k) + ".csv"));
  }
}

}  // namespace opq
