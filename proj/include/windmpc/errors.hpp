#pragma once

#include <stdexcept>
#include <string>

namespace windmpc {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Query point lies outside a tabulated domain (grid, wind range, K range).
struct OutOfDomain : Error {
  using Error::Error;
};

/// Tip-speed ratio too close to zero for the Cq = Cp/lambda division.
struct DegenerateLambda : Error {
  using Error::Error;
};

/// Kinetic energy too close to zero for speed/torque recovery.
struct DegenerateK : Error {
  using Error::Error;
};

/// Requested power coefficient exceeds the achievable maximum.
struct Unachievable : Error {
  using Error::Error;
};

/// Sampled function fails the concavity check required for a PWA fit.
struct NotConcave : Error {
  using Error::Error;
};

/// |dCp/dtheta| below threshold at the expansion point; the affine
/// thrust/stall models divide by it.
struct PitchAuthorityLost : Error {
  using Error::Error;
};

/// Plant integration left the sane speed envelope; controller failure.
struct NumericalBlowup : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// Configuration file parse/validation failure (unknown keys are errors).
struct ConfigError : Error {
  using Error::Error;
};

}  // namespace windmpc
