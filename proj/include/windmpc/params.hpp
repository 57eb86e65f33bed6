#pragma once

#include <cmath>

#include "windmpc/errors.hpp"

namespace windmpc {

/// Physical constants of the turbine. All rotational quantities are
/// referred to the high-speed (generator) shaft unless noted.
struct TurbineParams {
  double J = 4653.5;             // equivalent inertia, high-speed shaft [kg m^2]
  double gearbox_ratio = 97.0;   // G_B [-]
  double rotor_radius = 63.0;    // R [m]
  double rotor_area = 12468.981; // A_r [m^2], must equal pi R^2
  double air_density = 1.225;    // rho [kg/m^3]
  double eta_g = 0.944;          // generator efficiency (0,1]
  double theta_min = 0.0;        // pitch limits [rad]
  double theta_max = 0.52;
  double omega_g_min = 49.16384;   // generator speed limits [rad/s]
  double omega_g_max = 147.49152;
  double omega_g_rated = 122.9096; // rated generator speed [rad/s]
  double T_g_max = 47402.91;       // max generator torque [N m]
  double P_g_rated = 5.0e6;        // rated electrical power [W]
  double theta_rate_max = 0.14;    // pitch rate limit [rad/s]

  void validate() const;

  double kinetic_at(double omega_g) const { return 0.5 * J * omega_g * omega_g; }
  double omega_from_kinetic(double K) const { return std::sqrt(2.0 * K / J); }
  double kinetic_min() const { return kinetic_at(omega_g_min); }
  double kinetic_max() const { return kinetic_at(omega_g_max); }
  double kinetic_rated() const { return kinetic_at(omega_g_rated); }

  /// lambda = R * omega_r / v with omega_r = omega_g / G_B.
  double tip_speed_ratio(double omega_g, double v) const {
    return rotor_radius * (omega_g / gearbox_ratio) / v;
  }
  double tip_speed_ratio_from_kinetic(double K, double v) const {
    return tip_speed_ratio(omega_from_kinetic(K), v);
  }
};

/// NREL-5MW-like defaults; exact aeroelastic fidelity is out of scope and
/// every value is config-overridable.
TurbineParams nrel5mw_params();

}  // namespace windmpc
