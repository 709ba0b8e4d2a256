#include "opq/phase.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/quadrature/gauss_kronrod.hpp>
#include <boost/math/quadrature/tanh_sinh.hpp>

#include "opq/error.hpp"
#include "opq/io.hpp"

namespace opq {

namespace {

// Below this a(theta) is treated as zero (in units of the fastest rate).
double singular_a(const SystemSpec& spec) { return 1e-14 / spec.min_tau(); }

// Two-observable coefficients in terms of s = sin^2 theta:
// a = alpha + beta s, and D = 4 [alpha (alpha + E) + beta s (2 alpha + beta + E)].
struct LinearForm {
  double alpha, beta;
};

LinearForm linear_form(const SystemSpec& spec) {
  return {0.5 / spec.tau_x, 0.5 * (1.0 / spec.tau_z - 1.0 / spec.tau_x)};
}

double p_backward(const Coefficients& k, double E, double sqrt_d) {
  if (k.b <= 0.0) return -2.0 * (k.a + E) / (sqrt_d - k.b);
  return (-k.b - sqrt_d) / (2.0 * k.a);
}

double p_forward_k(const Coefficients& k, double E, double sqrt_d) {
  if (k.b >= 0.0) return 2.0 * (k.a + E) / (sqrt_d + k.b);
  return (sqrt_d - k.b) / (2.0 * k.a);
}

void require_two_observable_island(const SystemSpec& spec) {
  if (spec.kind != SystemKind::TwoObservable || spec.tau_x == spec.tau_z) {
    throw Error(ErrorKind::NotInIsland, "system has no elliptic islands");
  }
}

void check_forbidden(const SystemSpec& spec, double theta_i, double theta_f, double E) {
  const double span = std::abs(theta_f - theta_i);
  const auto n = static_cast<std::size_t>(std::max(64.0, 256.0 * span));
  for (std::size_t j = 0; j <= n; ++j) {
    const double th = theta_i + (theta_f - theta_i) * static_cast<double>(j) / n;
    if (discriminant(spec, th, E) < 0.0) {
      throw Error(ErrorKind::ForbiddenRegion,
                  "path crosses a forbidden region at theta = " + io::format_double(th), th);
    }
  }
}

template <class F>
double adaptive(F f, double lo, double hi, double* err) {
  return boost::math::quadrature::gauss_kronrod<double, 31>::integrate(f, lo, hi, 20, 1e-13,
                                                                       err);
}

}  // namespace

double discriminant(const SystemSpec& spec, double theta, double E) {
  const auto k = coefficients(spec, theta);
  return 4.0 * k.a * (k.a + E) + k.b * k.b;
}

MomentumBranches p_branches(const SystemSpec& spec, double theta, double E) {
  const auto k = coefficients(spec, theta);
  if (k.a <= singular_a(spec)) {
    throw Error(ErrorKind::SingularCoefficient, "a(theta) vanishes", theta);
  }
  const double d = 4.0 * k.a * (k.a + E) + k.b * k.b;
  if (d < 0.0) throw Error(ErrorKind::NoRealBranch, "negative discriminant", theta);
  const double r = std::sqrt(d);
  return {p_forward_k(k, E, r), p_backward(k, E, r)};
}

double p_forward(const SystemSpec& spec, double theta, double E) {
  const auto k = coefficients(spec, theta);
  const double d = 4.0 * k.a * (k.a + E) + k.b * k.b;
  if (d < 0.0) throw Error(ErrorKind::NoRealBranch, "negative discriminant", theta);
  const double r = std::sqrt(d);
  if (k.b < 0.0 && k.a <= singular_a(spec)) {
    throw Error(ErrorKind::SingularCoefficient, "a(theta) vanishes", theta);
  }
  return p_forward_k(k, E, r);
}

std::optional<IslandSpec> island_spec(const SystemSpec& spec) {
  if (spec.kind != SystemKind::TwoObservable || spec.tau_x == spec.tau_z) return std::nullopt;
  IslandSpec is;
  if (spec.tau_z > spec.tau_x) {
    // z is measured more weakly: centers on the z eigenstates.
    is.E_c = -0.5 / spec.tau_z;
    is.E_m = -0.5 / spec.tau_x;
    is.center_theta = 0.0;
    is.hyperbolic_theta = 0.5 * kPi;
  } else {
    is.E_c = -0.5 / spec.tau_x;
    is.E_m = -0.5 / spec.tau_z;
    is.center_theta = 0.5 * kPi;
    is.hyperbolic_theta = 0.0;
  }
  return is;
}

double island_center_near(const SystemSpec& spec, double theta) {
  require_two_observable_island(spec);
  const auto is = *island_spec(spec);
  const double k = std::round((theta - is.center_theta) / kPi);
  const double center = is.center_theta + k * kPi;
  if (std::abs(theta - center) >= 0.5 * kPi * (1.0 - 1e-12)) {
    throw Error(ErrorKind::NotInIsland, "theta sits on a hyperbolic point", theta);
  }
  return center;
}

double island_half_width(const SystemSpec& spec, double E) {
  require_two_observable_island(spec);
  const auto is = *island_spec(spec);
  const double lo = std::min(is.E_m, is.E_c);
  const double hi = std::max(is.E_m, is.E_c);
  if (!(E >= lo && E <= hi)) {
    throw Error(ErrorKind::OutOfIslandRange, "energy outside [E_m, E_c]", E);
  }
  // tan^2(theta) = -tau_z^2 (1 + 2 E tau_x) / (tau_x^2 (1 + 2 E tau_z)); the
  // two factors have opposite signs inside the island.
  const double num = spec.tau_z * std::sqrt(std::abs(1.0 + 2.0 * E * spec.tau_x));
  const double den = spec.tau_x * std::sqrt(std::abs(1.0 + 2.0 * E * spec.tau_z));
  const double theta_abs = std::atan2(num, den);
  return is.center_theta == 0.0 ? theta_abs : 0.5 * kPi - theta_abs;
}

std::pair<double, double> turning_points(const SystemSpec& spec, double E,
                                         double center_hint) {
  const double w = island_half_width(spec, E);
  const double c = island_center_near(spec, center_hint);
  return {c - w, c + w};
}

double island_period(const SystemSpec& spec, double E) {
  require_two_observable_island(spec);
  const auto is = *island_spec(spec);
  if (!(E > is.E_m && E < is.E_c)) {
    throw Error(ErrorKind::OutOfIslandRange, "energy outside (E_m, E_c)", E);
  }
  const double w = island_half_width(spec, E);
  const auto lf = linear_form(spec);
  // D = K (sin^2 w - sin^2 phi) = K sin(w - phi) sin(w + phi), phi = theta - center.
  const double K = 4.0 * std::abs(lf.beta) * (0.5 / spec.tau_x + 0.5 / spec.tau_z + E);
  // phi = w sin u removes the inverse-square-root endpoint singularity.
  auto f = [&](double u) {
    const double s = std::sin(u);
    const double c = std::cos(u);
    const double one_minus_s = c * c / (1.0 + s);
    const double d = K * std::sin(w * one_minus_s) * std::sin(w * (1.0 + s));
    return w * c / std::sqrt(d);
  };
  boost::math::quadrature::tanh_sinh<double> integrator(15);
  double err = 0.0;
  double l1 = 0.0;
  const double q = integrator.integrate(f, 0.0, 0.5 * kPi, 1e-12, &err, &l1);
  if (!std::isfinite(q) || err > 1e-8 * std::abs(q)) {
    throw Error(ErrorKind::QuadratureFailure, "period quadrature did not converge", E);
  }
  return 4.0 * q;
}

double island_linear_frequency(const SystemSpec& spec) {
  require_two_observable_island(spec);
  const auto k = coefficients(spec, island_spec(spec)->center_theta);
  return std::sqrt(-(k.db * k.db + 2.0 * k.a * k.d2a));
}

double traversal_time(const SystemSpec& spec, double theta_i, double theta_f, double E) {
  return traversal_action(spec, theta_i, theta_f, E).T;
}

TimeAction traversal_action(const SystemSpec& spec, double theta_i, double theta_f,
                            double E) {
  if (theta_i == theta_f) return {};
  check_forbidden(spec, theta_i, theta_f, E);
  const bool forward = theta_f > theta_i;
  auto inv_speed = [&](double th) {
    const double d = discriminant(spec, th, E);
    if (d <= 0.0) {
      throw Error(ErrorKind::ForbiddenRegion, "path crosses a forbidden region", th);
    }
    return 1.0 / std::sqrt(d);
  };
  auto momentum = [&](double th) {
    const auto k = coefficients(spec, th);
    const double r = std::sqrt(std::max(0.0, 4.0 * k.a * (k.a + E) + k.b * k.b));
    return forward ? p_forward_k(k, E, r) : p_backward(k, E, r);
  };
  const double lo = std::min(theta_i, theta_f);
  const double hi = std::max(theta_i, theta_f);
  double err = 0.0;
  const double T = adaptive(inv_speed, lo, hi, &err);
  double p_int = adaptive(momentum, lo, hi, &err);
  if (!forward) p_int = -p_int;
  if (!std::isfinite(T) || !std::isfinite(p_int)) {
    throw Error(ErrorKind::QuadratureFailure, "traversal quadrature diverged", E);
  }
  return {T, E * T - p_int};
}

std::vector<ScanRow> scan_T2pi_and_S(const SystemSpec& spec, const std::vector<double>& E_grid,
                                     double theta_i) {
  std::vector<ScanRow> rows(E_grid.size());
  for (std::size_t i = 0; i < E_grid.size(); ++i) {
    const auto ta = traversal_action(spec, theta_i, theta_i + kTwoPi, E_grid[i]);
    rows[i] = {E_grid[i], ta.T, ta.S};
  }
  return rows;
}

std::vector<double> island_energy_grid(const SystemSpec& spec, std::size_t n) {
  require_two_observable_island(spec);
  const auto is = *island_spec(spec);
  std::vector<double> grid(n);
  // Distance below E_c log-spaced from (E_c - E_m)(1 - 1e-4) down to 1e-6 of it.
  const double width = is.E_c - is.E_m;
  for (std::size_t i = 0; i < n; ++i) {
    const double f = n == 1 ? 0.0 : static_cast<double>(i) / static_cast<double>(n - 1);
    const double r = (1.0 - 1e-4) * std::pow(1e-6 / (1.0 - 1e-4), f);
    grid[i] = is.E_c - width * r;
  }
  return grid;
}

std::vector<PeriodRow> scan_periods(const SystemSpec& spec, const std::vector<double>& E_grid) {
  std::vector<PeriodRow> rows(E_grid.size());
  for (std::size_t i = 0; i < E_grid.size(); ++i) {
    rows[i] = {E_grid[i], island_period(spec, E_grid[i])};
  }
  return rows;
}

std::vector<FieldSample> sample_field(const SystemSpec& spec, double theta_min,
                                      double theta_max, std::size_t n_theta, double p_min,
                                      double p_max, std::size_t n_p) {
  std::vector<FieldSample> out;
  out.reserve(n_theta * n_p);
  auto at = [](double lo, double hi, std::size_t i, std::size_t n) {
    return n == 1 ? lo : lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  };
  for (std::size_t i = 0; i < n_theta; ++i) {
    const double th = at(theta_min, theta_max, i, n_theta);
    for (std::size_t j = 0; j < n_p; ++j) {
      const double p = at(p_min, p_max, j, n_p);
      out.push_back({th, p, hamiltonian(spec, {th, p}), sdot(spec, {th, p})});
    }
  }
  return out;
}

void write_scan_csv(const std::vector<ScanRow>& rows, const std::filesystem::path& file) {
  io::CsvWriter csv(file, {"E", "T_2pi", "S"});
  for (const auto& r : rows) {
    csv << r.E << r.T_2pi << r.S;
    csv.end_row();
  }
}

void write_periods_csv(const std::vector<PeriodRow>& rows, const std::filesystem::path& file) {
  io::CsvWriter csv(file, {"E", "period"});
  for (const auto& r : rows) {
    csv << r.E << r.period;
    csv.end_row();
  }
}

void write_sdot_csv(const std::vector<FieldSample>& field, const std::filesystem::path& file) {
  io::CsvWriter csv(file, {"theta", "p", "sdot"});
  for (const auto& f : field) {
    csv << f.theta << f.p << f.sdot;
    csv.end_row();
  }
}

}  // namespace opq
