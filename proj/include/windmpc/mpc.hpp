#pragma once

#include <array>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "windmpc/envelope.hpp"
#include "windmpc/linearize.hpp"
#include "windmpc/qp.hpp"
#include "windmpc/turbine.hpp"

namespace windmpc {

enum class Strategy {
  MaxKineticEnergy,
  MinThrust,
  ConstantTipSpeedRatio,
  ConstantRotorSpeed,
};

std::string to_string(Strategy s);
Strategy strategy_from_string(const std::string& name);

/// Receding-horizon controller configuration. The alpha weights follow the
/// paper-style seven-entry layout; exactly one of alpha5/alpha6/alpha7 may be
/// nonzero and must match the strategy. Power terms are normalized by
/// P_g_rated and energy terms by (J/2) omega_g_rated^2 inside the cost, so
/// the weights are dimensionless.
struct MpcConfig {
  std::array<double, 7> alphas = {10.0, 0.1, 0.1, 0.1, 0.1, 0.0, 0.0};
  double T = 20.0;    // horizon length [s]
  double Ts = 0.2;    // control sampling time [s]
  double delta = 0.0; // stall margin [N m / rad]
  Strategy strategy = Strategy::MaxKineticEnergy;
  double lambda_opt = 7.55;       // for ConstantTipSpeedRatio
  double omega_ref_const = 1.03;  // rotor-side setpoint [rad/s]
  bool stall_constraint = true;
  double stall_penalty = 1e6;  // per unit of normalized stall violation
  double tie_break = 1e-9;     // uniqueness regularization
  bool thrust_quadratic = false;  // quadratic reading of the min-CT term
  int torque_cuts = 8;

  int horizon_steps() const;
  void validate() const;
};

/// Zeroes the strategy weights Table-style: only the entry matching the
/// strategy survives (alpha5 for MaxKineticEnergy, alpha7 for MinThrust,
/// alpha6 for the two tracking strategies).
std::array<double, 7> mask_strategy_weights(const std::array<double, 7>& a,
                                            Strategy s);

/// K_ref from the strategy: lambda_opt and current wind for
/// ConstantTipSpeedRatio, the fixed rotor-speed setpoint for
/// ConstantRotorSpeed. Only meaningful when alpha6 is active; the
/// tip-speed-ratio value is returned otherwise.
double kinetic_reference(const TurbineParams& params, const MpcConfig& cfg,
                         double v);

/// Pitch command via the inverse Cp lookup at the measured kinetic energy,
/// Cp_target = P_r / (0.5 rho A v^3); clamped to the pitch limits and falls
/// back to the argmax pitch when the target is unachievable.
double pitch_command(const AeroSurface& surface, const TurbineParams& params,
                     double P_r, double K, double v);

/// T_g = P_g / (eta_g sqrt(2K/J)), clamped to [0, T_g_max].
double torque_command(const TurbineParams& params, double P_g, double K);

struct HorizonPlan {
  std::vector<double> P_r;      // rotor power, length N [W]
  std::vector<double> P_g;      // generator power, length N [W]
  std::vector<double> K;        // kinetic energy, length N+1 (K[0] measured)
  std::vector<double> s_K;      // rated-K overage slack, length N
  std::vector<double> s_stall;  // stall softening slack (normalized), length N
  std::vector<double> F_extra;  // thrust epigraph, length N (MinThrust only)
};

struct Measurement {
  double K = 0.0;      // [J]
  double theta = 0.0;  // [rad]
  double v = 0.0;      // [m/s]
};

struct LinearModels {
  std::optional<AffineThrust> thrust;
  std::optional<AffineStall> stall;
};

/// Discretized horizon QP: tracking/rate/strategy costs, exact dynamics
/// equalities K[i+1] = K[i] + Ts (P_r[i] - P_g[i]/eta_g), PWA available
/// power and torque-limit cuts, soft stall rows, box bounds.
QpProblem build_problem(double K0, double v,
                        std::span<const double> P_ref_horizon,
                        const MpcConfig& cfg, const PwaEnvelope& env,
                        const LinearModels& lin, const TurbineParams& params,
                        double prev_P_r, double prev_P_g);

HorizonPlan extract_plan(const Eigen::VectorXd& z, int N, double K0,
                         bool stall_on, bool thrust_on);

struct StepDiagnostics {
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  double kkt_residual = 0.0;
  double worst_violation = 0.0;  // scaled feasibility from qp validate
  double strategy_term = 0.0;    // active strategy objective value
  double stall_slack_max = 0.0;
  bool pitch_authority_lost = false;
  bool held_previous = false;
};

struct ControlOutput {
  ActuatorCommand command;
  HorizonPlan plan;
  StepDiagnostics diag;
};

/// One controller instance per simulation; owns warm starts, the previous
/// command for degraded-mode holds, and the last valid linear models.
class MpcController {
 public:
  MpcController(TurbineParams params, const AeroSurface* surface,
                const PwaEnvelope* envelope, MpcConfig cfg);

  ControlOutput control_step(const Measurement& meas,
                             std::span<const double> P_ref_horizon);

  const MpcConfig& config() const { return cfg_; }
  QpSettings& solver_settings() { return solver_.settings(); }
  int hold_count() const { return hold_count_; }
  int authority_lost_count() const { return authority_lost_count_; }
  const QpProblem& last_problem() const { return last_problem_; }

 private:
  TurbineParams params_;
  const AeroSurface* surface_;
  const PwaEnvelope* env_;
  MpcConfig cfg_;
  QpSolver solver_;
  LinearModels models_;
  bool have_prev_cmd_ = false;
  ActuatorCommand prev_cmd_;
  double prev_P_r_ = 0.0, prev_P_g_ = 0.0;
  bool have_prev_inputs_ = false;
  Eigen::VectorXd prev_z_;
  QpProblem last_problem_;
  int hold_count_ = 0;
  int authority_lost_count_ = 0;
};

}  // namespace windmpc
