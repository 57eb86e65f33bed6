#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include "windmpc/errors.hpp"

namespace windmpc {

using SpMat = Eigen::SparseMatrix<double>;

/// Convex QP: minimize 0.5 z'Hz + g'z subject to A_eq z = b_eq,
/// A_in z <= b_in and lb <= z <= ub. H must be symmetric PSD.
struct QpProblem {
  SpMat H;
  Eigen::VectorXd g;
  SpMat A_eq;
  Eigen::VectorXd b_eq;
  SpMat A_in;
  Eigen::VectorXd b_in;
  Eigen::VectorXd lb, ub;  // empty means unbounded
  int n = 0;

  /// Dimension/symmetry checks always; eigenvalue PSD check (O(n^3)) only
  /// when requested — tests use it, the solver hot path does not.
  void validate(bool check_psd = false) const;
};

enum class QpStatus { Optimal, MaxIter, Infeasible };

struct QpSolution {
  Eigen::VectorXd z;
  Eigen::VectorXd y_eq;   // equality multipliers
  Eigen::VectorXd y_in;   // inequality multipliers (>= 0 at optimum)
  Eigen::VectorXd y_box;  // signed: negative at lower bound, positive at upper
  QpStatus status = QpStatus::MaxIter;
  double kkt_residual = std::numeric_limits<double>::infinity();
  double primal_residual = std::numeric_limits<double>::infinity();
  double dual_residual = std::numeric_limits<double>::infinity();
  int iterations = 0;
  double objective = std::numeric_limits<double>::quiet_NaN();
  bool polished = false;
};

struct QpSettings {
  int max_iter = 4000;
  double eps_prim = 1e-7;  // scaled primal feasibility at Optimal
  double eps_dual = 1e-6;  // scaled stationarity at Optimal
  double eps_infeas = 1e-9;
  double sigma = 1e-6;
  double rho = 0.1;
  double rho_eq_scale = 1e3;  // stiffer rho on equality rows
  double alpha = 1.6;         // over-relaxation
  int check_every = 25;
  int scaling_iters = 10;
  bool adaptive_rho = true;
  bool polish = true;
};

/// Operator-splitting (ADMM) solver with diagonal (Ruiz) preconditioning
/// and an active-set polish step through a reduced KKT solve. Instances own
/// their workspace; use one per concurrent scenario.
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  QpSolution solve(const QpProblem& problem,
                   const Eigen::VectorXd* warm_start = nullptr);

  const QpSettings& settings() const { return settings_; }
  QpSettings& settings() { return settings_; }

 private:
  QpSettings settings_;
};

struct QpValidation {
  bool feasible = false;
  double worst_violation = 0.0;  // signed, scaled; <= 0 means margin
};

/// Max scaled constraint violation of z; scale per row is
/// max(1, |rhs|). Negative worst_violation reports the margin.
QpValidation validate(const QpProblem& problem, const Eigen::VectorXd& z,
                      double tol = 1e-7);

double objective_value(const QpProblem& problem, const Eigen::VectorXd& z);

/// Matrix-market-style text dump for offline debugging.
void dump_problem(const QpProblem& problem, const std::filesystem::path& file);

}  // namespace windmpc
