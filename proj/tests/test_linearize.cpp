#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "windmpc/linearize.hpp"
#include "windmpc/turbine.hpp"

using namespace windmpc;

namespace {

AeroSurface constant_surface(double cp, double ct) {
  std::vector<double> lg = {2, 5, 8, 11, 14};
  std::vector<double> tg = {0.0, 0.1, 0.2, 0.3, 0.4};
  Eigen::MatrixXd cpv = Eigen::MatrixXd::Constant(5, 5, cp);
  Eigen::MatrixXd ctv = Eigen::MatrixXd::Constant(5, 5, ct);
  return AeroSurface::from_grids(std::move(lg), std::move(tg), std::move(cpv),
                                 std::move(ctv), SurfaceSource::UserTable);
}

// Surface with Cp linear in theta (authority) and Ct independent of theta.
AeroSurface theta_insensitive_ct() {
  std::vector<double> lg = {2, 5, 8, 11, 14};
  std::vector<double> tg = {0.0, 0.1, 0.2, 0.3, 0.4};
  Eigen::MatrixXd cpv(5, 5), ctv(5, 5);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      cpv(i, j) = 0.4 - 0.5 * tg[j];
      ctv(i, j) = 0.1 + 0.02 * lg[i];
    }
  return AeroSurface::from_grids(std::move(lg), std::move(tg), std::move(cpv),
                                 std::move(ctv), SurfaceSource::UserTable);
}

double lambda_of(const TurbineParams& p, double K, double v) {
  return p.tip_speed_ratio_from_kinetic(K, v);
}

}  // namespace

TEST_CASE("taylor coefficients") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0;
  const double K = p.kinetic_at(95.0);
  const double th = 0.05;
  const TaylorCoeffs c = taylor_coeffs(s, p, v, K, th);

  SUBCASE("reconstruction identity is exact") {
    const double lam = lambda_of(p, K, v);
    CHECK(c.q_P * th + c.r_P * K + c.s_P ==
          doctest::Approx(s.cp(lam, th)).epsilon(1e-14));
    CHECK(c.q_T * th + c.r_T * K + c.s_T ==
          doctest::Approx(s.ct(lam, th)).epsilon(1e-14));
  }
  SUBCASE("constant surface has zero sensitivities") {
    const auto cs = constant_surface(0.3, 0.6);
    const TaylorCoeffs cc = taylor_coeffs(cs, p, v, K, 0.2);
    CHECK(std::abs(cc.q_P) < 1e-12);
    CHECK(std::abs(cc.r_P) < 1e-20);
    CHECK(cc.s_P == doctest::Approx(0.3).epsilon(1e-14));
  }
  SUBCASE("finite differences of the composed K map") {
    const double hK = 1e-3 * K;
    auto cp_of_K = [&](double Kq) {
      return s.cp(lambda_of(p, Kq, v), th);
    };
    const double fd_K = (cp_of_K(K + hK) - cp_of_K(K - hK)) / (2 * hK);
    CHECK(c.r_P == doctest::Approx(fd_K).epsilon(1e-3));
    const double hT = 1e-6;
    const double lam = lambda_of(p, K, v);
    const double fd_T = (s.cp(lam, th + hT) - s.cp(lam, th - hT)) / (2 * hT);
    CHECK(c.q_P == doctest::Approx(fd_T).epsilon(1e-3));
  }
  SUBCASE("guards") {
    CHECK_THROWS_AS(taylor_coeffs(s, p, v, 0.1, th), DegenerateK);
    CHECK_THROWS_AS(taylor_coeffs(s, p, 8.0, p.kinetic_at(95.0), 0.518),
                    OutOfDomain);
  }
}

TEST_CASE("thrust affine model") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0;
  const double K = p.kinetic_at(95.0);
  const double th = 0.05;
  const TaylorCoeffs c = taylor_coeffs(s, p, v, K, th);
  const AffineThrust t = thrust_affine(c, p);

  SUBCASE("exact at the expansion point") {
    const double lam = lambda_of(p, K, v);
    const double Pr = 0.5 * p.air_density * p.rotor_area * v * v * v *
                      s.cp(lam, th);
    const double Ft = 0.5 * p.air_density * p.rotor_area * v * v *
                      s.ct(lam, th);
    CHECK(t.Q_FT * Pr + t.R_FT * K + t.S_FT ==
          doctest::Approx(Ft).epsilon(1e-9));
  }
  SUBCASE("theta-insensitive thrust gives zero power coupling") {
    const auto ts = theta_insensitive_ct();
    const TaylorCoeffs cc = taylor_coeffs(ts, p, v, K, 0.2);
    const AffineThrust tt = thrust_affine(cc, p);
    CHECK(std::abs(tt.Q_FT) < 1e-12);
  }
  SUBCASE("authority guard") {
    const auto cs = constant_surface(0.3, 0.6);
    const TaylorCoeffs cc = taylor_coeffs(cs, p, v, K, 0.2);
    CHECK_THROWS_AS(thrust_affine(cc, p), PitchAuthorityLost);
  }
  SUBCASE("theta elimination matches direct substitution identically") {
    // Substituting theta = (Cp - r_P K - s_P)/q_P into the Ct model must
    // reproduce the affine thrust for arbitrary (P_r, K).
    std::mt19937 rng(3);
    std::uniform_real_distribution<double> uP(1e5, 2e6), uK(1e7, 3e7);
    for (int i = 0; i < 20; ++i) {
      const double Pr = uP(rng), Kq = uK(rng);
      const double cp_lin = Pr / (0.5 * p.air_density * p.rotor_area * v * v * v);
      const double theta_rec = (cp_lin - c.r_P * Kq - c.s_P) / c.q_P;
      const double ct_lin = c.q_T * theta_rec + c.r_T * Kq + c.s_T;
      const double Ft_direct = 0.5 * p.air_density * p.rotor_area * v * v * ct_lin;
      const double Ft_affine = t.Q_FT * Pr + t.R_FT * Kq + t.S_FT;
      CHECK(Ft_affine == doctest::Approx(Ft_direct).epsilon(1e-12));
    }
  }
}

TEST_CASE("stall affine model") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0;

  SUBCASE("exact at the expansion point") {
    const double K = p.kinetic_at(95.0);
    const double th = 0.05;
    const AffineStall a = stall_affine(s, p, v, K, th);
    const double lam = lambda_of(p, K, v);
    const double Pr = 0.5 * p.air_density * p.rotor_area * v * v * v *
                      s.cp(lam, th);
    const double g = s.stall_margin(p, v, lam, th).dtr_dtheta;
    CHECK(a.Q_Tr * Pr + a.R_Tr * K + a.S_Tr ==
          doctest::Approx(g).epsilon(1e-6));
  }
  SUBCASE("predicted boundary lands on the ridge") {
    // dCq/dtheta and dCp/dtheta vanish together, so the elimination is
    // singular exactly on the ridge; expand just off it and check that the
    // affine model's zero crossing in P_r recovers the ridge pitch.
    const double lam = 10.0;
    double lo = 0.015, hi = 0.035;
    for (int i = 0; i < 60; ++i) {
      const double mid = 0.5 * (lo + hi);
      (s.partials(lam, mid).dcq_dtheta > 0 ? lo : hi) = mid;
    }
    const double th_ridge = 0.5 * (lo + hi);
    const double th = th_ridge + 0.008;  // attached side, authority intact
    const double omega = lam * v / p.rotor_radius * p.gearbox_ratio;
    const double K = p.kinetic_at(omega);
    const AffineStall a = stall_affine(s, p, v, K, th);
    REQUIRE(std::abs(a.Q_Tr) > 0.0);
    const double Pr_boundary = (-a.R_Tr * K - a.S_Tr) / a.Q_Tr;
    const double cp_boundary =
        Pr_boundary / (0.5 * p.air_density * p.rotor_area * v * v * v);
    // The ridge is the argmax, so the predicted boundary Cp approximates the
    // achievable maximum (from either side, to linearization accuracy).
    CHECK(cp_boundary == doctest::Approx(s.cp(lam, th_ridge)).epsilon(0.01));
    // And the affine value at the true boundary operating point is small.
    const double Pr_ridge = 0.5 * p.air_density * p.rotor_area * v * v * v *
                            s.cp(lam, th_ridge);
    const double scale = std::max({std::abs(a.Q_Tr) * Pr_ridge,
                                   std::abs(a.R_Tr) * K, std::abs(a.S_Tr)});
    CHECK(std::abs(a.Q_Tr * Pr_ridge + a.R_Tr * K + a.S_Tr) <= 2e-2 * scale);
  }
  SUBCASE("sign matches the nonlinear margin when attached") {
    const double K = p.kinetic_at(80.0);  // lambda ~ 6.5, deeply attached
    const double th = 0.03;
    const AffineStall a = stall_affine(s, p, v, K, th);
    const double lam = lambda_of(p, K, v);
    const double Pr = 0.5 * p.air_density * p.rotor_area * v * v * v *
                      s.cp(lam, th);
    CHECK(a.Q_Tr * Pr + a.R_Tr * K + a.S_Tr < 0.0);
    CHECK(s.stall_margin(p, v, lam, th).dtr_dtheta < 0.0);
  }
}

TEST_CASE("quadratic error decay of both affine models") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0;
  std::mt19937 rng(7);
  // Cell-interior expansion points: the patch is smooth within a cell, so
  // the asymptotic halving order is clean when perturbations stay inside.
  std::uniform_real_distribution<double> ulam(5.0, 11.0), uth(0.03, 0.2);
  int tested = 0;
  for (int trial = 0; trial < 200 && tested < 50; ++trial) {
    const double lam_c = std::round(ulam(rng) * 10.0) / 10.0 + 0.05;
    const double th_c = std::round(uth(rng) * 100.0) / 100.0 + 0.005;
    const double omega = lam_c * v / p.rotor_radius * p.gearbox_ratio;
    const double K = p.kinetic_at(omega);
    if (omega < p.omega_g_min || omega > p.omega_g_max) continue;

    TaylorCoeffs c;
    AffineThrust t;
    AffineStall a;
    try {
      c = taylor_coeffs(s, p, v, K, th_c);
      t = thrust_affine(c, p);
      a = stall_affine(s, p, v, K, th_c);
    } catch (const PitchAuthorityLost&) {
      continue;
    }

    const double dK0 = 0.0008 * K, dth0 = 0.0008;
    auto thrust_err = [&](double scale) {
      const double Kq = K + scale * dK0;
      const double thq = th_c + scale * dth0;
      const double lam = lambda_of(p, Kq, v);
      const double Pr = 0.5 * p.air_density * p.rotor_area * v * v * v *
                        s.cp(lam, thq);
      const double Ft = 0.5 * p.air_density * p.rotor_area * v * v *
                        s.ct(lam, thq);
      return std::abs(t.Q_FT * Pr + t.R_FT * Kq + t.S_FT - Ft);
    };
    auto stall_err = [&](double scale) {
      const double Kq = K + scale * dK0;
      const double thq = th_c + scale * dth0;
      const double lam = lambda_of(p, Kq, v);
      const double Pr = 0.5 * p.air_density * p.rotor_area * v * v * v *
                        s.cp(lam, thq);
      const double g = s.stall_margin(p, v, lam, thq).dtr_dtheta;
      return std::abs(a.Q_Tr * Pr + a.R_Tr * Kq + a.S_Tr - g);
    };
    const double te1 = thrust_err(1.0), te4 = thrust_err(0.25);
    const double se1 = stall_err(1.0), se4 = stall_err(0.25);
    if (te1 < 1e-10 || se1 < 1e-8) continue;  // degenerate direction
    const double thrust_order = std::log2(te1 / te4) / 2.0;
    const double stall_order = std::log2(se1 / se4) / 2.0;
    CHECK(thrust_order >= 1.8);
    CHECK(stall_order >= 1.8);
    ++tested;
  }
  CHECK(tested >= 50);
}
