#pragma once

#include "windmpc/aero.hpp"
#include "windmpc/params.hpp"

namespace windmpc {

/// State of the rotating assembly; a plain value, `step` is pure.
struct PlantState {
  double omega_g = 0.0;  // generator speed [rad/s]
  double theta = 0.0;    // blade pitch [rad]
  double t = 0.0;        // simulation time [s]
};

struct ActuatorCommand {
  double T_g = 0.0;        // generator torque [N m]
  double theta_cmd = 0.0;  // pitch command [rad]
};

double kinetic_energy(const TurbineParams& params, double omega_g);

/// P_r = 0.5 rho A_r v^3 Cp(lambda, theta), lambda = R (omega_g/G_B) / v.
double rotor_power(const TurbineParams& params, const AeroSurface& surface,
                   double v, double omega_g, double theta);

/// P_g = eta_g T_g omega_g.
double generator_power(const TurbineParams& params, double T_g,
                       double omega_g);

/// F_T = 0.5 rho A_r v^2 Ct(lambda, theta).
double thrust(const TurbineParams& params, const AeroSurface& surface,
              double v, double omega_g, double theta);

/// Aerodynamic torque via the torque coefficient, T_r = 0.5 rho A_r R v^2 Cq.
double rotor_torque(const TurbineParams& params, const AeroSurface& surface,
                    double v, double omega_g, double theta);

/// One plant step: classical 4th-order integration of the torque balance
/// with the pitch actuator slewing toward theta_cmd at most theta_rate_max.
/// Throws NumericalBlowup if omega_g leaves (0, 2 omega_g_max).
PlantState step(const TurbineParams& params, const AeroSurface& surface,
                const PlantState& state, const ActuatorCommand& cmd, double v,
                double dt);

}  // namespace windmpc
