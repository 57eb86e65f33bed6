#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "windmpc/errors.hpp"
#include "windmpc/params.hpp"

namespace windmpc {

enum class SurfaceSource { ParametricDefault, UserTable };

/// First-order partials of the coefficient surfaces at a point.
struct SurfacePartials {
  double dcp_dlambda = 0.0;
  double dcp_dtheta = 0.0;
  double dct_dlambda = 0.0;
  double dct_dtheta = 0.0;
  double dcq_dlambda = 0.0;
  double dcq_dtheta = 0.0;
};

/// Cp value and derivatives up to the second order needed by the stall
/// linearization (d2/dtheta2 and the cross term).
struct CpJet2 {
  double cp = 0.0;
  double dcp_dlambda = 0.0;
  double dcp_dtheta = 0.0;
  double d2cp_dtheta2 = 0.0;
  double d2cp_dlambda_dtheta = 0.0;
};

/// Stall-margin indicators at an operating point. Operation is attached
/// while dtr_dtheta < 0; the sign of dCq/dlambda tracks dCq/domega_r
/// (lambda and omega_r are positively proportional at fixed wind).
struct StallMargin {
  double dtr_dtheta = 0.0;  // dT_r/dtheta [N m / rad]
  int dcq_domega_sign = 0;  // in {-1, 0, +1}
};

/// Aerodynamic coefficient surfaces Cp(lambda, theta) and Ct(lambda, theta)
/// tabulated on rectangular grids and interpolated with C1 Hermite bicubic
/// patches (node slopes from central differences). Cq = Cp/lambda is always
/// derived, never stored. Immutable after construction.
class AeroSurface {
 public:
  /// Parametric default surface: exponential Cp model with induced
  /// tip-speed-ratio correction on lambda in [1,15] step 0.1 and
  /// theta in [0, 0.52] rad step 0.01, Cp clipped below at -0.2; thrust from
  /// a momentum-theory induction model clipped to [0, 2].
  static AeroSurface parametric_default();

  static AeroSurface from_grids(std::vector<double> lambda_grid,
                                std::vector<double> theta_grid,
                                Eigen::MatrixXd cp_values,
                                Eigen::MatrixXd ct_values,
                                SurfaceSource source);

  /// Plain-text table: `lambda:` and `theta:` header lines, then row-major
  /// Cp and Ct blocks (rows indexed by lambda). Validation errors carry
  /// row/column indices.
  static AeroSurface load_table(const std::filesystem::path& file);

  double cp(double lambda, double theta) const;
  double cq(double lambda, double theta) const;
  double ct(double lambda, double theta) const;

  /// Analytic partials of the interpolant; requires at least one grid cell
  /// of margin from the boundary.
  SurfacePartials partials(double lambda, double theta) const;
  CpJet2 cp_jet2(double lambda, double theta) const;

  StallMargin stall_margin(const TurbineParams& params, double v,
                           double lambda, double theta) const;

  /// Maximum of cp(lambda, .) over the pitch range: grid scan followed by
  /// golden-section refinement. Also used by the available-power envelope.
  double max_cp_over_theta(double lambda) const;
  double argmax_pitch(double lambda) const;

  /// Inverse lookup on the high-pitch branch (dCp/dtheta <= 0 side),
  /// |Cp - target| <= 1e-6 at the returned pitch. Targets above the maximum
  /// by <= tolerance return the argmax pitch; beyond that: Unachievable.
  double pitch_from_cp(double cp_target, double lambda,
                       double tolerance = 1e-6) const;

  const std::vector<double>& lambda_grid() const { return lambda_; }
  const std::vector<double>& theta_grid() const { return theta_; }
  const Eigen::MatrixXd& cp_values() const { return cp_; }
  const Eigen::MatrixXd& ct_values() const { return ct_; }
  SurfaceSource source() const { return source_; }

  double lambda_min() const { return lambda_.front(); }
  double lambda_max() const { return lambda_.back(); }
  double theta_min() const { return theta_.front(); }
  double theta_max() const { return theta_.back(); }

  /// FNV-1a over grids and coefficient bytes; keys the envelope cache.
  std::uint64_t content_hash() const;

  static constexpr double kLambdaEps = 1e-3;  // Cq division guard
  static constexpr double kBetzBound = 16.0 / 27.0;

 private:
  AeroSurface() = default;
  void build_derivative_tables();
  void check_interior(double lambda, double theta) const;

  std::vector<double> lambda_;
  std::vector<double> theta_;
  Eigen::MatrixXd cp_, ct_;                    // rows: lambda, cols: theta
  Eigen::MatrixXd cp_dl_, cp_dt_, cp_dlt_;     // node slopes for Hermite
  Eigen::MatrixXd ct_dl_, ct_dt_, ct_dlt_;
  SurfaceSource source_ = SurfaceSource::ParametricDefault;
};

/// The closed-form models behind parametric_default(), exposed so tests can
/// compare grid interpolation against direct evaluation.
namespace parametric {
double cp_model(double lambda, double theta);
double ct_model(double lambda, double theta);
}  // namespace parametric

}  // namespace windmpc
