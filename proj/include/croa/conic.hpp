#pragma once

#include <Eigen/Core>
#include <Eigen/SparseCore>
#include <optional>
#include <string>
#include <vector>

namespace croa {

/// Rotated second-order-cone block over an affine image of the variables:
/// y = C x + d with y = (u, v, w...), feasible iff u >= 0, v >= 0 and
/// ||w||^2 <= u * v.
struct RotatedConeBlock {
  Eigen::SparseMatrix<double> C;  // dim x num_vars, dim >= 3
  Eigen::VectorXd d;
};

/// Convex subproblem in canonical form:
///   minimize    0.5 x' P x + q' x
///   subject to  A x = b,  G x <= h,  cone blocks.
struct ConicProgram {
  int num_vars = 0;
  Eigen::SparseMatrix<double> P;  // symmetric PSD, num_vars x num_vars
  Eigen::VectorXd q;
  Eigen::SparseMatrix<double> A;
  Eigen::VectorXd b;
  Eigen::SparseMatrix<double> G;
  Eigen::VectorXd h;
  std::vector<RotatedConeBlock> cones;

  /// Row-major decimal text form for solver triage.
  std::string dump() const;
};

enum class SolveStatus { Optimal, Infeasible, MaxIters, NumericalFailure };

const char* to_string(SolveStatus s);

struct KktResiduals {
  double stationarity = 0.0;
  double primal_eq = 0.0;
  double primal_ineq = 0.0;  // includes cone violation
  double complementarity = 0.0;
};

struct Solution {
  Eigen::VectorXd values;
  SolveStatus status = SolveStatus::NumericalFailure;
  double objective = 0.0;
  KktResiduals kkt;
  int newton_iterations = 0;
};

struct SolveOptions {
  double tol = 1e-7;
  int max_iters = 200;
  /// Optional starting point; used directly when strictly feasible,
  /// otherwise as the phase-I seed.
  std::optional<Eigen::VectorXd> initial_point;
  /// When set, the program text dump is written to this path before solving.
  std::optional<std::string> dump_path;
};

Solution solve(const ConicProgram& program, const SolveOptions& options = {});

}  // namespace croa
