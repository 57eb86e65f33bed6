#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "windmpc/envelope.hpp"
#include "windmpc/mpc.hpp"
#include "windmpc/turbine.hpp"

namespace windmpc {

/// Piecewise-linear schedule over time; duplicated knot times encode jumps
/// (right-continuous at the jump).
struct Schedule {
  std::vector<std::pair<double, double>> knots;  // (t, value), t non-decreasing
  double value(double t) const;
  void validate() const;
};

enum class RefKind { Step, Ramp, Profile };

struct RefParams {
  double level_before = 0.0;  // [W]
  double level_after = 0.0;   // [W]
  double switch_time = 300.0; // [s]
  double ramp_duration = 10.0;
  double t_end = 600.0;
  std::vector<std::pair<double, double>> knots;  // for Profile
};

Schedule reference_signal(RefKind kind, const RefParams& rp);

/// The documented synthetic saturation profile: 0.75 * P_av,max until the
/// saturation instant, then a 10 s ramp to 1.25 * P_av,max held to t_end,
/// with P_av,max taken from the envelope at the scenario wind speed.
Schedule default_reference(const TurbineParams& params, const PwaEnvelope& env,
                           double wind, double saturation_time, double t_end,
                           double ramp_duration = 10.0);

struct Scenario {
  Schedule wind;           // constant or time series [m/s]
  Schedule p_ref;          // reference power [W]
  double t_end = 600.0;
  double saturation_time = 300.0;
  unsigned seed = 1;       // reserved for randomized components
  double settling_time = 60.0;
  double tracking_tol = 0.02;

  void validate(const TurbineParams& params) const;
};

struct SimMetrics {
  double mean_K_before = 0.0;        // [J], over [settling, saturation)
  double mean_thrust_before = 0.0;   // [N]
  double tracking_time_after_saturation = 0.0;  // [s]
  double tracking_rmse_before = 0.0;            // [W]
  int constraint_violation_count = 0;
};

/// One row per controller step.
struct TimeSeries {
  std::vector<double> t, v, omega_g, K, theta, T_g, theta_cmd, P_r, P_g,
      P_ref, P_av_hat, F_T, dtr_dtheta, e_balance;
  std::size_t size() const { return t.size(); }
};

struct DiagnosticsRow {
  double t = 0.0;
  int status = 0;  // 0 Optimal, 1 MaxIter, 2 Infeasible
  int iterations = 0;
  double kkt_residual = 0.0;
  double worst_violation = 0.0;
  double strategy_term = 0.0;
  double stall_slack_max = 0.0;
  int pitch_authority_lost = 0;
  int held_previous = 0;
};

struct RunResult {
  TimeSeries series;
  std::vector<DiagnosticsRow> diagnostics;
  SimMetrics metrics;
};

struct RunOptions {
  double plant_dt = 0.01;
  std::filesystem::path qp_dump_dir;  // empty: no dumps
  int qp_dump_mode = 0;               // 0 none, 1 first, 2 all
};

/// Deterministic closed loop: plant at plant_dt, controller at cfg.Ts with
/// zero-order-held commands. Aborts with NumericalBlowup diagnostics if the
/// plant leaves its speed envelope.
RunResult run_scenario(const Scenario& scenario, const TurbineParams& params,
                       const AeroSurface& surface, const PwaEnvelope& env,
                       const MpcConfig& cfg, const RunOptions& opts = {});

/// Largest tau such that |P_g - P_ref|/P_ref <= tol on
/// [saturation_time, saturation_time + tau].
double tracking_time_after_saturation(const TimeSeries& series,
                                      double saturation_time, double tol);

SimMetrics summarize(const TimeSeries& series, const TurbineParams& params,
                     double saturation_time, double settling_time = 60.0,
                     double tracking_tol = 0.02);

void write_run_csv(const std::filesystem::path& file, const TimeSeries& s);
void write_diagnostics_csv(const std::filesystem::path& file,
                           const std::vector<DiagnosticsRow>& rows);
void write_metrics_csv(const std::filesystem::path& file,
                       const std::vector<std::pair<std::string, SimMetrics>>& rows);
TimeSeries read_run_csv(const std::filesystem::path& file);

std::string format_double(double v);  // shortest round-trip representation

}  // namespace windmpc
