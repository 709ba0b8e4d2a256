#include "opq/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "opq/error.hpp"

namespace opq {

namespace {

struct Eta {
  double value, rate;
};

Eta eta_at(EtaKind kind, double t, double T) {
  if (kind == EtaKind::Sine) {
    const double w = kPi / T;
    return {std::sin(w * t), w * std::cos(w * t)};
  }
  return {t * t - t * T, 2.0 * t - T};
}

double step(const OptimalPath& path) { return path.samples[1].t - path.samples[0].t; }

void require_regular(const OptimalPath& path) {
  if (path.samples.size() < 5) {
    throw Error(ErrorKind::Usage, "path needs at least 5 samples for the second variation");
  }
  const double floor = 1e-12 / path.system.min_tau();
  for (const auto& s : path.samples) {
    if (coeff_a(path.system, s.theta) <= floor) {
      throw Error(ErrorKind::SingularLegendre, "a(theta) vanishes on the path", s.t);
    }
  }
  // The driven system's a = sin^2(theta) / 2 tau also vanishes between
  // samples whenever the path crosses a pole.
  if (path.system.kind == SystemKind::DrivenZ) {
    for (std::size_t i = 1; i < path.samples.size(); ++i) {
      if (std::floor(path.samples[i - 1].theta / kPi) != std::floor(path.samples[i].theta / kPi)) {
        throw Error(ErrorKind::SingularLegendre, "path crosses a pole", path.samples[i].t);
      }
    }
  }
}

}  // namespace

const char* to_string(PathKind kind) {
  switch (kind) {
    case PathKind::MLP: return "MLP";
    case PathKind::LLP: return "LLP";
    case PathKind::SP: return "SP";
  }
  return "SP";
}

double lagrangian(const SystemSpec& spec, double Q, double Qdot) {
  const auto k = coefficients(spec, Q);
  const double v = Qdot - k.b;
  return k.a + v * v / (4.0 * k.a);
}

LagrangianHessian lagrangian_hessian(const SystemSpec& spec, double Q, double Qdot) {
  const auto k = coefficients(spec, Q);
  // L = a + f g with f = (Qdot - b)^2 and g = 1 / (4a).
  const double v = Qdot - k.b;
  const double f = v * v;
  const double df = -2.0 * v * k.db;
  const double d2f = 2.0 * k.db * k.db - 2.0 * v * k.d2b;
  const double g = 0.25 / k.a;
  const double dg = -k.da / (4.0 * k.a * k.a);
  const double d2g = -k.d2a / (4.0 * k.a * k.a) + k.da * k.da / (2.0 * k.a * k.a * k.a);
  LagrangianHessian h;
  h.L_QQ = k.d2a + d2f * g + 2.0 * df * dg + f * d2g;
  h.L_QQdot = -k.db / (2.0 * k.a) - v * k.da / (2.0 * k.a * k.a);
  h.L_QdotQdot = 0.5 / k.a;
  return h;
}

double second_variation(const OptimalPath& path, EtaKind eta) {
  require_regular(path);
  const double T = path.duration();
  std::vector<double> integrand(path.samples.size());
  for (std::size_t i = 0; i < path.samples.size(); ++i) {
    const auto& s = path.samples[i];
    const double qdot = hamilton_rhs(path.system, {s.theta, s.p}).dtheta_dt;
    const auto h = lagrangian_hessian(path.system, s.theta, qdot);
    const auto e = eta_at(eta, s.t, T);
    integrand[i] = e.value * e.value * h.L_QQ + 2.0 * e.value * e.rate * h.L_QQdot +
                   e.rate * e.rate * h.L_QdotQdot;
  }
  return -simpson_uniform(integrand, step(path));
}

VariationReport classify(const OptimalPath& path) {
  VariationReport r;
  r.delta2_sine = second_variation(path, EtaKind::Sine);
  r.delta2_poly = second_variation(path, EtaKind::Poly);
  const double band = 1e-8 * (1.0 + std::abs(path.back().S));
  auto sign = [&](double v) { return std::abs(v) <= band ? 0 : (v < 0.0 ? -1 : 1); };
  const int a = sign(r.delta2_sine);
  const int b = sign(r.delta2_poly);
  if (a == -1 && b == -1) {
    r.kind = PathKind::MLP;
  } else if (a == 1 && b == 1) {
    r.kind = PathKind::LLP;
  } else {
    r.kind = PathKind::SP;
    r.probes_disagree = a != 0 && b != 0;
  }
  return r;
}

double perturbed_action(const OptimalPath& path, EtaKind eta, double eps) {
  require_regular(path);
  const double T = path.duration();
  const double h = step(path);
  std::vector<double> q(path.samples.size());
  for (std::size_t i = 0; i < q.size(); ++i) {
    q[i] = path.samples[i].theta + eps * eta_at(eta, path.samples[i].t, T).value;
  }
  const auto qdot = derivative_uniform(q, h);
  std::vector<double> L(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) L[i] = lagrangian(path.system, q[i], qdot[i]);
  return -simpson_uniform(L, h);
}

}  // namespace opq
