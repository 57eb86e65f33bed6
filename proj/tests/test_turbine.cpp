#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "windmpc/turbine.hpp"

using namespace windmpc;

namespace {

AeroSurface constant_surface(double cp, double ct) {
  std::vector<double> lg = {1, 4, 8, 12, 16};
  std::vector<double> tg = {0.0, 0.1, 0.2, 0.3};
  Eigen::MatrixXd cpv = Eigen::MatrixXd::Constant(5, 4, cp);
  Eigen::MatrixXd ctv = Eigen::MatrixXd::Constant(5, 4, ct);
  return AeroSurface::from_grids(std::move(lg), std::move(tg), std::move(cpv),
                                 std::move(ctv), SurfaceSource::UserTable);
}

}  // namespace

TEST_CASE("kinetic energy") {
  TurbineParams p = nrel5mw_params();
  p.J = 2.0;
  CHECK(kinetic_energy(p, 10.0) == doctest::Approx(100.0).epsilon(1e-15));
  CHECK(kinetic_energy(p, 0.0) == 0.0);
  p.J = 4.37e5;  // high-speed-shaft referred
  const long double expect = 0.5L * 4.37e5L * 122.9L * 122.9L;
  CHECK(kinetic_energy(p, 122.9) ==
        doctest::Approx(static_cast<double>(expect)).epsilon(1e-12));
}

TEST_CASE("rotor power") {
  const TurbineParams p = nrel5mw_params();
  SUBCASE("zero cp gives zero power") {
    const auto s = constant_surface(0.0, 0.3);
    CHECK(rotor_power(p, s, 8.0, 100.0, 0.1) == doctest::Approx(0.0));
  }
  SUBCASE("cubic wind scaling at matched tip speed ratio") {
    const AeroSurface s = AeroSurface::parametric_default();
    const double w = 90.0;
    const double p1 = rotor_power(p, s, 8.0, w, 0.02);
    const double p2 = rotor_power(p, s, 16.0, 2.0 * w, 0.02);
    CHECK(p2 == doctest::Approx(8.0 * p1).epsilon(1e-12));
  }
  SUBCASE("optimum against a pitch scan") {
    const AeroSurface s = AeroSurface::parametric_default();
    // Dense scan oracle for max_theta Cp at the lambda implied by omega.
    const double v = 8.0, omega = 97.0;
    const double lam = p.tip_speed_ratio(omega, v);
    double cp_best = -1e9;
    double th_best = 0;
    for (double th = 0.0; th <= 0.52; th += 1e-4) {
      const double c = s.cp(lam, th);
      if (c > cp_best) { cp_best = c; th_best = th; }
    }
    const double expect = 0.5 * p.air_density * p.rotor_area * 512.0 * cp_best;
    CHECK(rotor_power(p, s, v, omega, th_best) ==
          doctest::Approx(expect).epsilon(1e-9));
  }
}

TEST_CASE("generator power") {
  TurbineParams p = nrel5mw_params();
  CHECK(generator_power(p, 0.0, 120.0) == 0.0);
  p.eta_g = 0.944;
  CHECK(generator_power(p, 1000.0, 100.0) == doctest::Approx(94400.0));
  // Parameter consistency: with unit efficiency and T_g_max = P_rated/omega,
  // rated torque at rated speed gives rated power.
  p.eta_g = 1.0;
  p.T_g_max = p.P_g_rated / p.omega_g_rated;
  CHECK(generator_power(p, p.T_g_max, p.omega_g_rated) ==
        doctest::Approx(p.P_g_rated).epsilon(1e-12));
}

TEST_CASE("thrust") {
  const TurbineParams p = nrel5mw_params();
  SUBCASE("zero ct") {
    const auto s = constant_surface(0.1, 0.0);
    CHECK(thrust(p, s, 8.0, 100.0, 0.1) == doctest::Approx(0.0));
  }
  SUBCASE("quadratic wind scaling at matched tip speed ratio") {
    const AeroSurface s = AeroSurface::parametric_default();
    const double f1 = thrust(p, s, 8.0, 90.0, 0.05);
    const double f2 = thrust(p, s, 16.0, 180.0, 0.05);
    CHECK(f2 == doctest::Approx(4.0 * f1).epsilon(1e-12));
  }
  SUBCASE("direct evaluation oracle") {
    const AeroSurface s = AeroSurface::parametric_default();
    const double v = 8.0, omega = 95.0, th = 0.01;
    const double lam = p.tip_speed_ratio(omega, v);
    const double expect =
        0.5 * p.air_density * p.rotor_area * v * v * s.ct(lam, th);
    CHECK(thrust(p, s, v, omega, th) == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("plant step") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0;

  SUBCASE("torque balance holds speed") {
    PlantState st{100.0, 0.05, 0.0};
    const double T_r = rotor_torque(p, s, v, st.omega_g, st.theta);
    ActuatorCommand cmd{T_r / p.gearbox_ratio, st.theta};
    const PlantState next = step(p, s, st, cmd, v, 0.01);
    CHECK(next.omega_g == doctest::Approx(st.omega_g).epsilon(1e-9));
  }
  SUBCASE("zero torque accelerates") {
    PlantState st{90.0, 0.0, 0.0};
    ActuatorCommand cmd{0.0, 0.0};
    const PlantState next = step(p, s, st, cmd, v, 0.01);
    CHECK(next.omega_g > st.omega_g);
  }
  SUBCASE("pitch rate limit") {
    PlantState st{100.0, 0.0, 0.0};
    ActuatorCommand cmd{1000.0, 0.4};
    PlantState next = st;
    for (int i = 0; i < 50; ++i) {
      const PlantState after = step(p, s, next, cmd, v, 0.01);
      CHECK(std::abs(after.theta - next.theta) <=
            p.theta_rate_max * 0.01 + 1e-12);
      next = after;
    }
    CHECK(next.theta > st.theta);
  }
  SUBCASE("blowup detection") {
    TurbineParams tiny = p;
    tiny.J = 1.0;  // absurdly light drivetrain
    PlantState st{0.4 * tiny.omega_g_max, 0.0, 0.0};
    ActuatorCommand cmd{0.0, 0.0};
    bool blew = false;
    try {
      for (int i = 0; i < 200000; ++i) st = step(tiny, s, st, cmd, v, 0.01);
    } catch (const NumericalBlowup&) {
      blew = true;
    }
    CHECK(blew);
  }
  SUBCASE("rejects bad dt and commands") {
    PlantState st{100.0, 0.0, 0.0};
    CHECK_THROWS_AS(step(p, s, st, {0.0, 0.0}, v, 0.2), Error);
    CHECK_THROWS_AS(step(p, s, st, {-1.0, 0.0}, v, 0.01), Error);
    CHECK_THROWS_AS(step(p, s, st, {0.0, 2.0}, v, 0.01), Error);
  }
  SUBCASE("determinism") {
    PlantState a{100.0, 0.02, 0.0}, b{100.0, 0.02, 0.0};
    ActuatorCommand cmd{20000.0, 0.08};
    for (int i = 0; i < 1000; ++i) {
      a = step(p, s, a, cmd, v, 0.01);
      b = step(p, s, b, cmd, v, 0.01);
    }
    CHECK(a.omega_g == b.omega_g);
    CHECK(a.theta == b.theta);
  }
}

TEST_CASE("energy bookkeeping against a fine reference") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  const double v = 8.0, dt = 0.01;
  PlantState st{95.0, 0.03, 0.0};
  ActuatorCommand cmd{15000.0, 0.06};

  // Coarse trajectory.
  PlantState coarse = st;
  double integral = 0.0;  // trapezoid of P_r - P_g/eta at dt
  double flow_prev = rotor_power(p, s, v, coarse.omega_g, coarse.theta) -
                     cmd.T_g * coarse.omega_g;
  const int n = 1000;  // 10 s
  for (int i = 0; i < n; ++i) {
    coarse = step(p, s, coarse, cmd, v, dt);
    const double flow = rotor_power(p, s, v, coarse.omega_g, coarse.theta) -
                        cmd.T_g * coarse.omega_g;
    integral += 0.5 * dt * (flow_prev + flow);
    flow_prev = flow;
  }
  const double dK = kinetic_energy(p, coarse.omega_g) - kinetic_energy(p, st.omega_g);
  CHECK(dK == doctest::Approx(integral).epsilon(1e-4));

  // Fine reference at dt/100 must agree on the terminal state.
  PlantState fine = st;
  for (int i = 0; i < n * 100; ++i) fine = step(p, s, fine, cmd, v, dt / 100.0);
  CHECK(kinetic_energy(p, fine.omega_g) ==
        doctest::Approx(kinetic_energy(p, coarse.omega_g)).epsilon(1e-4));

  // Pointwise identity P_r = T_r omega_r.
  const double Pr = rotor_power(p, s, v, coarse.omega_g, coarse.theta);
  const double Tr = rotor_torque(p, s, v, coarse.omega_g, coarse.theta);
  CHECK(Pr == doctest::Approx(Tr * coarse.omega_g / p.gearbox_ratio).epsilon(1e-12));
}

TEST_CASE("parameter validation") {
  TurbineParams p = nrel5mw_params();
  CHECK_NOTHROW(p.validate());
  p.rotor_area *= 1.01;
  CHECK_THROWS_AS(p.validate(), Error);
  p = nrel5mw_params();
  p.omega_g_min = p.omega_g_rated;
  CHECK_THROWS_AS(p.validate(), Error);
  p = nrel5mw_params();
  p.eta_g = 1.2;
  CHECK_THROWS_AS(p.validate(), Error);
}
