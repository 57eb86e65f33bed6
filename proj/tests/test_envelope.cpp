#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <vector>

#include "windmpc/envelope.hpp"

using namespace windmpc;

namespace {

double min_affine(const std::vector<AffineSegment>& segs, double K) {
  double m = std::numeric_limits<double>::infinity();
  for (const auto& s : segs) m = std::min(m, s.a * K + s.b);
  return m;
}

// Brute-force concave PWA fit oracle for k=3: enumerate both breakpoints on
// a fine grid, least-squares fit each partition, keep the best.
double sqrt_fit_oracle_residual(const std::vector<std::pair<double, double>>& s) {
  const int n = static_cast<int>(s.size());
  auto ls = [&](int lo, int hi, double& a, double& b) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const int m = hi - lo;
    for (int i = lo; i < hi; ++i) {
      sx += s[i].first;
      sy += s[i].second;
      sxx += s[i].first * s[i].first;
      sxy += s[i].first * s[i].second;
    }
    const double det = m * sxx - sx * sx;
    a = (m * sxy - sx * sy) / det;
    b = (sy - a * sx) / m;
  };
  double best = std::numeric_limits<double>::infinity();
  for (int b1 = 2; b1 < n - 4; ++b1) {
    for (int b2 = b1 + 2; b2 < n - 2; ++b2) {
      double a0, c0, a1, c1, a2, c2;
      ls(0, b1, a0, c0);
      ls(b1, b2, a1, c1);
      ls(b2, n, a2, c2);
      double resid = 0.0;
      for (const auto& [K, f] : s) {
        const double v =
            std::min({a0 * K + c0, a1 * K + c1, a2 * K + c2});
        resid = std::max(resid, std::abs(v - f));
      }
      best = std::min(best, resid);
    }
  }
  return best;
}

}  // namespace

TEST_CASE("available power") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();

  SUBCASE("theta-scan oracle at lambda_opt") {
    const double v = 8.0;
    // choose K so lambda(K) = 8.1
    const double omega = 8.1 * v / p.rotor_radius * p.gearbox_ratio;
    const double K = p.kinetic_at(omega);
    double cp_best = -1e9;
    for (double th = 0.0; th <= 0.52; th += 1e-4)
      cp_best = std::max(cp_best, s.cp(8.1, th));
    const double expect = 0.5 * p.air_density * p.rotor_area * 512.0 * cp_best;
    CHECK(available_power(p, s, v, K) == doctest::Approx(expect).epsilon(1e-6));
  }
  SUBCASE("wind monotonicity at matched lambda") {
    const double K8 = p.kinetic_at(8.0 * 8.0 / p.rotor_radius * p.gearbox_ratio);
    const double K10 = p.kinetic_at(8.0 * 10.0 / p.rotor_radius * p.gearbox_ratio);
    CHECK(available_power(p, s, 10.0, K10) > available_power(p, s, 8.0, K8));
  }
  SUBCASE("clamped at zero when every pitch brakes") {
    // Synthetic surface that is negative everywhere.
    std::vector<double> lg = {1, 4, 8, 12, 16};
    std::vector<double> tg = {0.0, 0.1, 0.2, 0.3};
    Eigen::MatrixXd cpv = Eigen::MatrixXd::Constant(5, 4, -0.05);
    Eigen::MatrixXd ctv = Eigen::MatrixXd::Constant(5, 4, 0.1);
    const auto neg = AeroSurface::from_grids(std::move(lg), std::move(tg),
                                             std::move(cpv), std::move(ctv),
                                             SurfaceSource::UserTable);
    const double K = p.kinetic_at(100.0);
    CHECK(available_power(p, neg, 8.0, K) == 0.0);
  }
  SUBCASE("domain guards") {
    CHECK_THROWS_AS(available_power(p, s, 8.0, 0.5 * p.kinetic_min()),
                    OutOfDomain);
    // lambda(K) above the grid at very low wind and high speed.
    CHECK_THROWS_AS(available_power(p, s, 2.0, p.kinetic_max()), OutOfDomain);
  }
}

TEST_CASE("fit_pwa") {
  SUBCASE("constant samples collapse to one duplicated piece") {
    std::vector<std::pair<double, double>> s;
    for (int i = 0; i < 20; ++i) s.emplace_back(1.0 + i, 5.0);
    const auto segs = fit_pwa(s, 3);
    CHECK(segs.size() == 3);
    for (const auto& seg : segs) {
      CHECK(seg.a == doctest::Approx(0.0).epsilon(1e-12));
      CHECK(seg.b == doctest::Approx(5.0).epsilon(1e-12));
    }
  }
  SUBCASE("linear samples") {
    std::vector<std::pair<double, double>> s;
    for (int i = 0; i < 20; ++i) s.emplace_back(i, 2.5 * i);
    const auto segs = fit_pwa(s, 3);
    for (const auto& seg : segs) {
      CHECK(seg.a == doctest::Approx(2.5).epsilon(1e-9));
      CHECK(std::abs(seg.b) < 1e-7);
    }
  }
  SUBCASE("sqrt fit against the brute-force oracle") {
    std::vector<std::pair<double, double>> s;
    const int n = 41;
    for (int i = 0; i < n; ++i) {
      const double K = 1.0 + 3.0 * i / (n - 1);
      s.emplace_back(K, std::sqrt(K));
    }
    const auto segs = fit_pwa(s, 3);
    double resid = 0.0, fmax = 0.0;
    for (const auto& [K, f] : s) {
      resid = std::max(resid, std::abs(min_affine(segs, K) - f));
      fmax = std::max(fmax, f);
    }
    CHECK(resid <= 0.01 * fmax);
    // Not worse than 2x the exhaustive-breakpoint reference.
    CHECK(resid <= 2.0 * sqrt_fit_oracle_residual(s) + 1e-12);
    // Canonical ordering.
    for (std::size_t j = 1; j < segs.size(); ++j) CHECK(segs[j].a < segs[j - 1].a);
  }
  SUBCASE("convex samples rejected") {
    std::vector<std::pair<double, double>> s;
    for (int i = 0; i < 20; ++i) s.emplace_back(i, 0.1 * i * i);
    CHECK_THROWS_AS(fit_pwa(s, 3), NotConcave);
  }
  SUBCASE("needs 2k samples") {
    std::vector<std::pair<double, double>> s = {{0, 0}, {1, 1}, {2, 1.5}};
    CHECK_THROWS_AS(fit_pwa(s, 2), Error);
  }
}

TEST_CASE("envelope build and evaluation") {
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  EnvelopeOptions opts;
  const PwaEnvelope env = build_envelope(p, s, opts);

  SUBCASE("wind grid structure") {
    CHECK(env.wind_grid.front() == doctest::Approx(3.0));
    CHECK(env.wind_grid.back() == doctest::Approx(25.0));
    CHECK(env.k == 6);
    for (const auto& segs : env.segments) {
      CHECK(!segs.empty());
      for (std::size_t j = 1; j < segs.size(); ++j)
        CHECK(segs[j].a < segs[j - 1].a);  // strictly decreasing slopes
    }
  }
  SUBCASE("exact on a grid point") {
    const auto [i1, i2, th] = env.locate_wind(8.0);
    CHECK(th == doctest::Approx(0.0).epsilon(1e-9));
    const double K = 2.0e7;
    const double direct = min_affine(env.segments[i1], K) * 512.0;
    CHECK(eval_envelope(env, 8.0, K) == doctest::Approx(std::max(direct, 0.0)));
  }
  SUBCASE("midpoint wind is the mean of neighbours") {
    const double K = 2.0e7;
    const double left = eval_envelope(env, 8.0, K);
    const double right = eval_envelope(env, 8.5, K);
    CHECK(eval_envelope(env, 8.25, K) ==
          doctest::Approx(0.5 * (left + right)).epsilon(1e-12));
  }
  SUBCASE("random points within 2 percent of the direct scan") {
    std::mt19937 rng(7);
    std::uniform_real_distribution<double> uv(6.0, 10.0);
    for (int i = 0; i < 60; ++i) {
      const double v = uv(rng);
      // Sample K inside the lambda-valid band for this wind speed.
      const double Klo = std::max(env.K_min, p.kinetic_at(2.0 * v / p.rotor_radius * p.gearbox_ratio));
      const double Khi = std::min(env.K_max, p.kinetic_at(14.5 * v / p.rotor_radius * p.gearbox_ratio));
      std::uniform_real_distribution<double> uk(Klo, Khi);
      const double K = uk(rng);
      const double direct = available_power(p, s, v, K);
      const double fitted = eval_envelope(env, v, K);
      const double scale = std::max(direct, 0.02 * 3.9e6);
      CHECK(std::abs(fitted - direct) <= 0.02 * std::max(scale, 1e3));
    }
  }
  SUBCASE("concavity of the interpolated envelope in K") {
    for (double v : {6.3, 8.0, 9.7}) {
      const double Klo = env.K_min, Khi = std::min(env.K_max, 3.4e7);
      const int n = 200;
      const double h = (Khi - Klo) / n;
      for (int i = 1; i + 1 < n; ++i) {
        const double K = Klo + i * h;
        const double second = eval_envelope(env, v, K + h) -
                              2.0 * eval_envelope(env, v, K) +
                              eval_envelope(env, v, K - h);
        CHECK(second <= 1e-9 * std::max(1.0, eval_envelope(env, v, K)));
      }
    }
  }
  SUBCASE("non-negative over the whole K range at every wind point") {
    for (double v : env.wind_grid)
      for (int i = 0; i <= 50; ++i) {
        const double K = env.K_min + (env.K_max - env.K_min) * i / 50.0;
        CHECK(eval_envelope(env, v, K) >= 0.0);
      }
  }
  SUBCASE("domain guards") {
    CHECK_THROWS_AS(eval_envelope(env, 2.0, 2e7), OutOfDomain);
    CHECK_THROWS_AS(eval_envelope(env, 8.0, 0.1 * env.K_min), OutOfDomain);
  }
}

TEST_CASE("torque limit cuts") {
  const TurbineParams p = nrel5mw_params();
  auto f = [&](double K) {
    return p.eta_g * std::sqrt(2.0 * K / p.J) * p.T_g_max;
  };
  std::vector<double> grid(8);
  for (int j = 0; j < 8; ++j) {
    const double w =
        p.omega_g_min * std::pow(p.omega_g_max / p.omega_g_min, j / 7.0);
    grid[j] = p.kinetic_at(w);
  }
  const auto cuts = torque_limit_cuts(p, grid);

  SUBCASE("tangency at the construction points") {
    for (int j = 0; j < 8; ++j)
      CHECK(cuts[j].a * grid[j] + cuts[j].b ==
            doctest::Approx(f(grid[j])).epsilon(1e-12));
  }
  SUBCASE("tangents majorize the concave curve") {
    for (int i = 0; i <= 100; ++i) {
      const double K = grid.front() + (grid.back() - grid.front()) * i / 100.0;
      CHECK(min_affine(cuts, K) >= f(K) - 1e-9 * f(K));
    }
  }
  SUBCASE("eight cuts stay within half a percent") {
    double worst = 0.0;
    for (int i = 0; i <= 2000; ++i) {
      const double K = grid.front() + (grid.back() - grid.front()) * i / 2000.0;
      worst = std::max(worst, (min_affine(cuts, K) - f(K)) / f(K));
    }
    CHECK(worst <= 0.005);
  }
  SUBCASE("needs three points") {
    CHECK_THROWS_AS(torque_limit_cuts(p, {1e6, 2e6}), Error);
  }
}

TEST_CASE("envelope cache round trip") {
  namespace fs = std::filesystem;
  const TurbineParams p = nrel5mw_params();
  const AeroSurface s = AeroSurface::parametric_default();
  EnvelopeOptions opts;
  opts.wind_min = 6.0;
  opts.wind_max = 10.0;  // small grid keeps the test fast
  const PwaEnvelope env = build_envelope(p, s, opts);
  const fs::path file = fs::temp_directory_path() / "windmpc_env_cache.txt";
  save_envelope(env, file);

  const auto loaded = load_envelope(file, env.source_hash);
  REQUIRE(loaded.has_value());
  CHECK(loaded->wind_grid == env.wind_grid);
  CHECK(loaded->K_min == env.K_min);
  CHECK(loaded->K_max == env.K_max);
  REQUIRE(loaded->segments.size() == env.segments.size());
  for (std::size_t i = 0; i < env.segments.size(); ++i)
    for (std::size_t j = 0; j < env.segments[i].size(); ++j) {
      CHECK(loaded->segments[i][j].a == env.segments[i][j].a);  // bit exact
      CHECK(loaded->segments[i][j].b == env.segments[i][j].b);
    }
  // Stale hash is refused.
  CHECK(!load_envelope(file, env.source_hash + 1).has_value());
}
