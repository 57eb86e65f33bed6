#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

#include "windmpc/aero.hpp"
#include "windmpc/params.hpp"

namespace windmpc {

/// One affine piece a*K + b of a min-of-affine approximation.
struct AffineSegment {
  double a = 0.0;  // slope [W/J] after the v^3 factor is applied
  double b = 0.0;  // intercept [W] after the v^3 factor is applied
};

struct EnvelopeOptions {
  double wind_min = 3.0;
  double wind_max = 25.0;
  double wind_step = 0.5;
  int segments = 6;       // affine pieces per wind speed
  int fit_samples = 80;   // K samples per wind speed for the fit
  bool conservative_inner = false;  // shift the fit to under-approximate
};

/// Concave piecewise-affine available-power envelope, one min-of-affine per
/// wind grid point in normalized form: P_hat_{av,vi}(K) = min_j(a_j K + b_j)
/// * vi^3. Immutable once built; evaluation clamps at zero.
struct PwaEnvelope {
  std::vector<double> wind_grid;                      // strictly increasing
  std::vector<std::vector<AffineSegment>> segments;   // per wind speed,
                                                      // slopes strictly
                                                      // decreasing
  std::vector<std::pair<double, double>> fit_range;   // fitted K interval per
                                                      // wind speed; pieces
                                                      // extend linearly
                                                      // outside it
  int k = 0;                                          // pieces per speed
  double K_min = 0.0, K_max = 0.0;                    // validity interval [J]
  std::uint64_t source_hash = 0;                      // surface+params hash

  /// Bracketing wind grid indices and interpolation factor Theta for v.
  std::tuple<int, int, double> locate_wind(double v) const;
};

/// P_av(v, K) = max over pitch of 0.5 rho A_r Cp(lambda(K), theta) v^3,
/// clamped at >= 0; grid scan plus golden-section refinement.
double available_power(const TurbineParams& params, const AeroSurface& surface,
                       double v, double K);

/// Least-squares concave PWA fit by alternating partition refinement,
/// deterministic restarts. Input samples must be concave within tolerance
/// (second differences), else NotConcave. Returned slopes are strictly
/// decreasing; effectively-equal pieces are duplicated to reach k.
std::vector<AffineSegment> fit_pwa(
    const std::vector<std::pair<double, double>>& samples, int k);

/// Builds the envelope for a (surface, params) pair. Per wind speed the fit
/// covers the K subinterval whose implied tip-speed ratio stays on the
/// surface grid; the affine pieces extend linearly outside it.
PwaEnvelope build_envelope(const TurbineParams& params,
                           const AeroSurface& surface,
                           const EnvelopeOptions& opts = {});

/// Cache key: surface content plus every parameter the envelope uses.
std::uint64_t envelope_cache_key(const TurbineParams& params,
                                 const AeroSurface& surface,
                                 const EnvelopeOptions& opts);

/// (1-Theta) * P_hat_{av,v1}(K) + Theta * P_hat_{av,v2}(K), clamped at >= 0.
double eval_envelope(const PwaEnvelope& env, double v, double K);

/// Tangent cuts to f(K) = eta_g sqrt(2K/J) T_g,max at each K grid point;
/// min-of-tangents over-approximates f (tangents majorize a concave f).
std::vector<AffineSegment> torque_limit_cuts(const TurbineParams& params,
                                             const std::vector<double>& K_grid);

/// Versioned plain-text cache. Loading verifies the version tag and the
/// stored source hash; a mismatch returns nullopt so callers regenerate.
void save_envelope(const PwaEnvelope& env, const std::filesystem::path& file);
std::optional<PwaEnvelope> load_envelope(const std::filesystem::path& file,
                                         std::uint64_t expected_hash);

}  // namespace windmpc
