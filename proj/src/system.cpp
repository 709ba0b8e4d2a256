#include "opq/system.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "opq/error.hpp"

namespace opq {

SystemSpec SystemSpec::two_observable(double tau_x, double tau_z) {
  SystemSpec spec;
  spec.kind = SystemKind::TwoObservable;
  spec.tau_x = tau_x;
  spec.tau_z = tau_z;
  spec.validate();
  return spec;
}

SystemSpec SystemSpec::driven_z(double tau, double delta) {
  SystemSpec spec;
  spec.kind = SystemKind::DrivenZ;
  spec.tau = tau;
  spec.delta = delta;
  spec.validate();
  return spec;
}

void SystemSpec::validate() const {
  auto positive = [](double v) { return std::isfinite(v) && v > 0.0; };
  if (kind == SystemKind::TwoObservable) {
    if (!positive(tau_x) || !positive(tau_z)) {
      throw Error(ErrorKind::InvalidSpec, "tau_x and tau_z must be positive");
    }
  } else {
    if (!positive(tau)) throw Error(ErrorKind::InvalidSpec, "tau must be positive");
    if (!std::isfinite(delta) || delta < 0.0) {
      throw Error(ErrorKind::InvalidSpec, "delta must be >= 0");
    }
  }
}

double SystemSpec::min_tau() const {
  return kind == SystemKind::TwoObservable ? std::min(tau_x, tau_z) : tau;
}

Coefficients coefficients(const SystemSpec& spec, double theta) {
  const double s2 = std::sin(2.0 * theta);
  const double c2 = std::cos(2.0 * theta);
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  Coefficients k;
  if (spec.kind == SystemKind::TwoObservable) {
    const double u = 1.0 / spec.tau_z;
    const double v = 1.0 / spec.tau_x;
    k.a = 0.5 * (s * s * u + c * c * v);
    k.da = 0.5 * s2 * (u - v);
    k.d2a = c2 * (u - v);
    k.b = 0.5 * s2 * (v - u);
    k.db = c2 * (v - u);
    k.d2b = -2.0 * s2 * (v - u);
  } else {
    const double w = 1.0 / spec.tau;
    k.a = 0.5 * s * s * w;
    k.da = 0.5 * s2 * w;
    k.d2a = c2 * w;
    k.b = spec.delta - 0.5 * s2 * w;
    k.db = -c2 * w;
    k.d2b = 2.0 * s2 * w;
  }
  return k;
}

double coeff_a(const SystemSpec& spec, double theta) {
  return coefficients(spec, theta).a;
}

double coeff_b(const SystemSpec& spec, double theta) {
  return coefficients(spec, theta).b;
}

double hamiltonian(const SystemSpec& spec, PhasePoint point) {
  const auto k = coefficients(spec, point.theta);
  return (point.p * point.p - 1.0) * k.a + point.p * k.b;
}

PhaseVelocity hamilton_rhs(const SystemSpec& spec, PhasePoint point) {
  const auto k = coefficients(spec, point.theta);
  const double p = point.p;
  return {2.0 * p * k.a + k.b, -(p * p - 1.0) * k.da - p * k.db};
}

double sdot(const SystemSpec& spec, PhasePoint point) {
  return -(1.0 + point.p * point.p) * coeff_a(spec, point.theta);
}

Readouts optimal_readouts(const SystemSpec& spec, PhasePoint point) {
  const double s = std::sin(point.theta);
  const double c = std::cos(point.theta);
  Readouts r;
  r.r_z = c - point.p * s;
  if (spec.kind == SystemKind::TwoObservable) r.r_x = s + point.p * c;
  return r;
}

double raw_hamiltonian(const SystemSpec& spec, PhasePoint point, Readouts r) {
  const double s = std::sin(point.theta);
  const double c = std::cos(point.theta);
  const double p = point.p;
  if (spec.kind == SystemKind::TwoObservable) {
    return p * (r.r_x * c / spec.tau_x - r.r_z * s / spec.tau_z) -
           (r.r_z * r.r_z - 2.0 * r.r_z * c + 1.0) / (2.0 * spec.tau_z) -
           (r.r_x * r.r_x - 2.0 * r.r_x * s + 1.0) / (2.0 * spec.tau_x);
  }
  return p * (spec.delta - r.r_z * s / spec.tau) -
         (r.r_z * r.r_z - 2.0 * r.r_z * c + 1.0) / (2.0 * spec.tau);
}

std::array<double, 2> raw_hamiltonian_readout_gradient(const SystemSpec& spec,
                                                       PhasePoint point,
                                                       Readouts r) {
  const double s = std::sin(point.theta);
  const double c = std::cos(point.theta);
  const double p = point.p;
  if (spec.kind == SystemKind::TwoObservable) {
    return {p * c / spec.tau_x - (r.r_x - s) / spec.tau_x,
            -p * s / spec.tau_z - (r.r_z - c) / spec.tau_z};
  }
  return {0.0, -p * s / spec.tau - (r.r_z - c) / spec.tau};
}

BlochVelocity bloch_rhs(const SystemSpec& spec, const BlochState& q, Readouts r) {
  const double x = q.x;
  const double y = q.y;
  const double z = q.z;
  if (spec.kind == SystemKind::TwoObservable) {
    const double gx = r.r_x / spec.tau_x;
    const double gz = r.r_z / spec.tau_z;
    return {(1.0 - x * x) * gx - x * z * gz, -y * (z * gz + x * gx),
            (1.0 - z * z) * gz - x * z * gx};
  }
  const double gz = r.r_z / spec.tau;
  return {-x * z * gz, spec.delta * z - y * z * gz,
          -spec.delta * y + (1.0 - z * z) * gz};
}

BlochState bloch_from_theta(const SystemSpec& spec, double theta) {
  const double s = std::sin(theta);
  const double c = std::cos(theta);
  if (spec.kind == SystemKind::TwoObservable) return {s, 0.0, c};
  return {0.0, s, c};
}

double theta_from_bloch(const SystemSpec& spec, const BlochState& q) {
  return spec.kind == SystemKind::TwoObservable ? std::atan2(q.x, q.z)
                                                : std::atan2(q.y, q.z);
}

PhasePoint driven_fixed_point(const SystemSpec& spec) {
  const double td = spec.tau * spec.delta;
  return {std::atan(td), -td};
}

double driven_separatrix_energy(const SystemSpec& spec) {
  return -0.5 * spec.tau * spec.delta * spec.delta;
}

double wrap_angle(double theta) {
  double w = std::fmod(theta, kTwoPi);
  if (w < 0.0) w += kTwoPi;
  if (w >= kTwoPi) w = 0.0;
  return w;
}

double angle_difference(double a, double b) {
  double d = std::remainder(a - b, kTwoPi);
  if (d <= -kPi) d += kTwoPi;
  return d;
}

void to_json(nlohmann::json& j, const SystemSpec& spec) {
  if (spec.kind == SystemKind::TwoObservable) {
    j = {{"kind", "two_observable"}, {"tau_x", spec.tau_x}, {"tau_z", spec.tau_z}};
  } else {
    j = {{"kind", "driven_z"}, {"tau", spec.tau}, {"delta", spec.delta}};
  }
}

void from_json(const nlohmann::json& j, SystemSpec& spec) {
  if (!j.is_object()) throw Error(ErrorKind::InvalidSpec, "system must be a JSON object");
  const auto kind = j.at("kind").get<std::string>();
  std::set<std::string> allowed;
  SystemSpec out;
  try {
    if (kind == "two_observable") {
      allowed = {"kind", "tau_x", "tau_z"};
      out.kind = SystemKind::TwoObservable;
      out.tau_x = j.at("tau_x").get<double>();
      out.tau_z = j.at("tau_z").get<double>();
    } else if (kind == "driven_z") {
      allowed = {"kind", "tau", "delta"};
      out.kind = SystemKind::DrivenZ;
      out.tau = j.at("tau").get<double>();
      out.delta = j.at("delta").get<double>();
    } else {
      throw Error(ErrorKind::InvalidSpec, "unknown system kind '" + kind + "'");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::InvalidSpec, e.what());
  }
  for (const auto& item : j.items()) {
    if (!allowed.contains(item.key())) {
      throw Error(ErrorKind::InvalidSpec, "unknown system key '" + item.key() + "'");
    }
  }
  out.validate();
  spec = out;
}

}  // namespace opq
