#pragma once

// Second variation of the action along an optimal path. With the
// Lagrangian L(Q, Qdot) = a + (Qdot - b)^2 / (4a) the action is S = -int L dt,
// so a negative second variation marks a local maximum of S (most likely
// path) and a positive one a local minimum (least likely path).

#include "opq/optimal_path.hpp"

namespace opq {

enum class EtaKind { Sine, Poly };

/// delta^2 S for eta = sin(pi t / T) or eta = t^2 - t T. Throws
/// SingularLegendre where a(theta) vanishes on the path.
double second_variation(const OptimalPath& path, EtaKind eta);

enum class PathKind { MLP, LLP, SP };
const char* to_string(PathKind kind);

struct VariationReport {
  double delta2_sine = 0.0;
  double delta2_poly = 0.0;
  PathKind kind = PathKind::SP;
  bool probes_disagree = false;
};

VariationReport classify(const OptimalPath& path);

/// Lagrangian second derivatives at one point of a path.
struct LagrangianHessian {
  double L_QQ = 0.0;
  double L_QQdot = 0.0;
  double L_QdotQdot = 0.0;
};
LagrangianHessian lagrangian_hessian(const SystemSpec& spec, double Q, double Qdot);

double lagrangian(const SystemSpec& spec, double Q, double Qdot);

/// -int L dt along the path displaced by eps * eta, with Qdot from a
/// fourth-order finite difference of the displaced samples.
double perturbed_action(const OptimalPath& path, EtaKind eta, double eps);

}  // namespace opq
