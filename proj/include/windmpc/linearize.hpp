#pragma once

#include "windmpc/aero.hpp"
#include "windmpc/params.hpp"

namespace windmpc {

/// First-order Taylor models of Cp and Ct in (K, theta) around the current
/// operating point: C ~ q*theta + r*K + s. Intercepts reconstruct the
/// function values exactly at (K_star, theta_star).
struct TaylorCoeffs {
  double q_P = 0.0, r_P = 0.0, s_P = 0.0;  // Cp: [1/rad], [1/J], [-]
  double q_T = 0.0, r_T = 0.0, s_T = 0.0;  // Ct
  double K_star = 0.0;                     // expansion kinetic energy [J]
  double theta_star = 0.0;                 // expansion pitch [rad]
  double v = 0.0;                          // wind speed at expansion [m/s]
};

/// F_T ~ Q_FT * P_r + R_FT * K + S_FT after eliminating pitch through the
/// Cp model.
struct AffineThrust {
  double Q_FT = 0.0;  // [N/W]
  double R_FT = 0.0;  // [N/J]
  double S_FT = 0.0;  // [N]
};

/// dT_r/dtheta ~ Q_Tr * P_r + R_Tr * K + S_Tr; the stall constraint bounds
/// this above by -delta.
struct AffineStall {
  double Q_Tr = 0.0;  // [(N m/rad)/W]
  double R_Tr = 0.0;  // [(N m/rad)/J]
  double S_Tr = 0.0;  // [N m/rad]
};

/// Minimum pitch authority |dCp/dtheta| below which the eliminations above
/// are ill-posed and the controller must reuse its previous models.
inline constexpr double kPitchAuthorityEps = 1e-3;  // [1/rad]
inline constexpr double kKineticEps = 1.0;          // [J]

/// Partials in K arrive via the chain rule d lambda/dK =
/// R / (G_B v sqrt(2 J K)).
TaylorCoeffs taylor_coeffs(const AeroSurface& surface,
                           const TurbineParams& params, double v,
                           double K_star, double theta_star);

/// Throws PitchAuthorityLost when |q_P| < kPitchAuthorityEps.
AffineThrust thrust_affine(const TaylorCoeffs& coeffs,
                           const TurbineParams& params);

AffineStall stall_affine(const AeroSurface& surface,
                         const TurbineParams& params, double v, double K_star,
                         double theta_star);

}  // namespace windmpc
