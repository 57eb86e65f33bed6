#include "windmpc/linearize.hpp"

#include <cmath>

namespace windmpc {

TaylorCoeffs taylor_coeffs(const AeroSurface& surface,
                           const TurbineParams& params, double v,
                           double K_star, double theta_star) {
  if (!(v > 0.0)) throw Error("taylor_coeffs: wind speed must be positive");
  if (K_star < kKineticEps)
    throw DegenerateK("taylor_coeffs: expansion kinetic energy too small");
  const double lambda = params.tip_speed_ratio_from_kinetic(K_star, v);
  const SurfacePartials d = surface.partials(lambda, theta_star);
  const double cp0 = surface.cp(lambda, theta_star);
  const double ct0 = surface.ct(lambda, theta_star);
  const double dlambda_dK = params.rotor_radius /
                            (params.gearbox_ratio * v *
                             std::sqrt(2.0 * params.J * K_star));
  TaylorCoeffs c;
  c.q_P = d.dcp_dtheta;
  c.r_P = d.dcp_dlambda * dlambda_dK;
  c.s_P = cp0 - c.q_P * theta_star - c.r_P * K_star;
  c.q_T = d.dct_dtheta;
  c.r_T = d.dct_dlambda * dlambda_dK;
  c.s_T = ct0 - c.q_T * theta_star - c.r_T * K_star;
  c.K_star = K_star;
  c.theta_star = theta_star;
  c.v = v;
  return c;
}

AffineThrust thrust_affine(const TaylorCoeffs& c, const TurbineParams& params) {
  if (std::abs(c.q_P) < kPitchAuthorityEps)
    throw PitchAuthorityLost(
        "thrust_affine: pitch has no authority over Cp at the expansion point");
  const double half_rho_A_v2 =
      0.5 * params.air_density * params.rotor_area * c.v * c.v;
  AffineThrust t;
  t.Q_FT = c.q_T / (c.q_P * c.v);
  t.R_FT = half_rho_A_v2 * (c.r_T - c.r_P * c.q_T / c.q_P);
  t.S_FT = half_rho_A_v2 * (c.s_T - c.s_P * c.q_T / c.q_P);
  return t;
}

AffineStall stall_affine(const AeroSurface& surface,
                         const TurbineParams& params, double v, double K_star,
                         double theta_star) {
  const TaylorCoeffs c = taylor_coeffs(surface, params, v, K_star, theta_star);
  if (std::abs(c.q_P) < kPitchAuthorityEps)
    throw PitchAuthorityLost(
        "stall_affine: pitch has no authority over Cp at the expansion point");
  const double lambda = params.tip_speed_ratio_from_kinetic(K_star, v);
  const CpJet2 jet = surface.cp_jet2(lambda, theta_star);
  const double dlambda_dK = params.rotor_radius /
                            (params.gearbox_ratio * v *
                             std::sqrt(2.0 * params.J * K_star));

  // g(K, theta) = 0.5 rho A R v^2 dCq/dtheta with Cq = Cp/lambda, so
  // dCq/dtheta = (dCp/dtheta)/lambda and the (K, theta) partials follow
  // from the patch's second derivatives.
  const double scale = 0.5 * params.air_density * params.rotor_area *
                       params.rotor_radius * v * v;
  const double g0 = scale * jet.dcp_dtheta / lambda;
  const double dg_dtheta = scale * jet.d2cp_dtheta2 / lambda;
  const double dcq_t_dlambda =
      (jet.d2cp_dlambda_dtheta * lambda - jet.dcp_dtheta) / (lambda * lambda);
  const double dg_dK = scale * dcq_t_dlambda * dlambda_dK;

  // Linear model in (K, theta), then eliminate theta exactly as in the
  // thrust derivation: theta = (Cp_lin - r_P K - s_P) / q_P with
  // Cp_lin = P_r / (0.5 rho A v^3).
  const double q_G = dg_dtheta;
  const double r_G = dg_dK;
  const double s_G = g0 - q_G * theta_star - r_G * K_star;
  const double half_rho_A_v3 =
      0.5 * params.air_density * params.rotor_area * v * v * v;
  AffineStall a;
  a.Q_Tr = q_G / (c.q_P * half_rho_A_v3);
  a.R_Tr = r_G - q_G * c.r_P / c.q_P;
  a.S_Tr = s_G - q_G * c.s_P / c.q_P;
  return a;
}

}  // namespace windmpc
