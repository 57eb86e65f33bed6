#include "windmpc/turbine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace windmpc {

void TurbineParams::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v))
      throw Error(std::string("TurbineParams: ") + name +
                  " must be strictly positive");
  };
  positive(J, "J");
  positive(gearbox_ratio, "gearbox_ratio");
  positive(rotor_radius, "rotor_radius");
  positive(rotor_area, "rotor_area");
  positive(air_density, "air_density");
  positive(eta_g, "eta_g");
  positive(theta_max, "theta_max");
  positive(omega_g_min, "omega_g_min");
  positive(omega_g_max, "omega_g_max");
  positive(omega_g_rated, "omega_g_rated");
  positive(T_g_max, "T_g_max");
  positive(P_g_rated, "P_g_rated");
  positive(theta_rate_max, "theta_rate_max");
  if (eta_g > 1.0) throw Error("TurbineParams: eta_g must be in (0, 1]");
  if (!(theta_min < theta_max))
    throw Error("TurbineParams: theta_min must be below theta_max");
  if (!(omega_g_min < omega_g_rated && omega_g_rated <= omega_g_max))
    throw Error(
        "TurbineParams: need omega_g_min < omega_g_rated <= omega_g_max");
  const double area = std::numbers::pi * rotor_radius * rotor_radius;
  if (std::abs(rotor_area - area) > 1e-6 * area)
    throw Error("TurbineParams: rotor_area inconsistent with pi R^2");
}

TurbineParams nrel5mw_params() {
  TurbineParams p;
  p.rotor_radius = 63.0;
  p.rotor_area = std::numbers::pi * p.rotor_radius * p.rotor_radius;
  p.gearbox_ratio = 97.0;
  p.J = 4653.5;
  p.air_density = 1.225;
  p.eta_g = 0.944;
  p.theta_min = 0.0;
  p.theta_max = 0.52;
  p.omega_g_rated = 122.9096;
  p.omega_g_min = 0.4 * p.omega_g_rated;
  p.omega_g_max = 1.2 * p.omega_g_rated;
  p.T_g_max = 47402.91;
  p.P_g_rated = 5.0e6;
  p.theta_rate_max = 0.14;
  p.validate();
  return p;
}

double kinetic_energy(const TurbineParams& params, double omega_g) {
  return 0.5 * params.J * omega_g * omega_g;
}

double rotor_power(const TurbineParams& params, const AeroSurface& surface,
                   double v, double omega_g, double theta) {
  if (!(v > 0.0)) throw Error("rotor_power: wind speed must be positive");
  const double lambda = params.tip_speed_ratio(omega_g, v);
  return 0.5 * params.air_density * params.rotor_area * v * v * v *
         surface.cp(lambda, theta);
}

double generator_power(const TurbineParams& params, double T_g,
                       double omega_g) {
  return params.eta_g * T_g * omega_g;
}

double thrust(const TurbineParams& params, const AeroSurface& surface,
              double v, double omega_g, double theta) {
  if (!(v > 0.0)) throw Error("thrust: wind speed must be positive");
  const double lambda = params.tip_speed_ratio(omega_g, v);
  return 0.5 * params.air_density * params.rotor_area * v * v *
         surface.ct(lambda, theta);
}

double rotor_torque(const TurbineParams& params, const AeroSurface& surface,
                    double v, double omega_g, double theta) {
  if (!(v > 0.0)) throw Error("rotor_torque: wind speed must be positive");
  const double lambda = params.tip_speed_ratio(omega_g, v);
  return 0.5 * params.air_density * params.rotor_area * params.rotor_radius *
         v * v * surface.cq(lambda, theta);
}

PlantState step(const TurbineParams& params, const AeroSurface& surface,
                const PlantState& state, const ActuatorCommand& cmd, double v,
                double dt) {
  if (!(dt > 0.0) || dt > 0.05)
    throw Error("step: dt must lie in (0, 0.05]");
  if (cmd.T_g < 0.0 || cmd.T_g > params.T_g_max + 1e-9)
    throw Error("step: generator torque command outside [0, T_g_max]");
  if (cmd.theta_cmd < params.theta_min - 1e-12 ||
      cmd.theta_cmd > params.theta_max + 1e-12)
    throw Error("step: pitch command outside [theta_min, theta_max]");

  // Rate-limited pitch trajectory over the step; linear until the command
  // is reached, constant afterwards.
  const double dtheta = cmd.theta_cmd - state.theta;
  auto theta_at = [&](double tau) {
    const double full = params.theta_rate_max * tau;
    double th;
    if (std::abs(dtheta) <= full)
      th = cmd.theta_cmd;
    else
      th = state.theta + std::copysign(full, dtheta);
    return std::clamp(th, params.theta_min, params.theta_max);
  };

  auto omega_dot = [&](double omega, double tau) {
    const double T_r = rotor_torque(params, surface, v, omega, theta_at(tau));
    return (T_r / params.gearbox_ratio - cmd.T_g) / params.J;
  };

  PlantState next;
  try {
    const double w = state.omega_g;
    const double k1 = omega_dot(w, 0.0);
    const double k2 = omega_dot(w + 0.5 * dt * k1, 0.5 * dt);
    const double k3 = omega_dot(w + 0.5 * dt * k2, 0.5 * dt);
    const double k4 = omega_dot(w + dt * k3, dt);
    next.omega_g = w + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
  } catch (const OutOfDomain&) {
    throw NumericalBlowup(
        "plant tip-speed ratio left the aero table domain at t = " +
        std::to_string(state.t));
  }
  next.theta = theta_at(dt);
  next.t = state.t + dt;

  if (!(next.omega_g > 0.0) || next.omega_g >= 2.0 * params.omega_g_max ||
      !std::isfinite(next.omega_g))
    throw NumericalBlowup("plant speed left (0, 2 omega_g_max) at t = " +
                          std::to_string(next.t));
  return next;
}

}  // namespace windmpc
