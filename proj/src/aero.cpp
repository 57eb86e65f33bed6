#include "windmpc/aero.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace windmpc {

namespace {

constexpr double kDomainSlack = 1e-9;  // absolute slack on range checks

// Cubic Hermite basis and derivatives on t in [0,1].
struct HermiteBasis {
  double h00, h10, h01, h11;
  double d00, d10, d01, d11;
  double s00, s10, s01, s11;  // second derivatives
};

HermiteBasis hermite(double t) {
  const double t2 = t * t, t3 = t2 * t;
  HermiteBasis b;
  b.h00 = 1.0 - 3.0 * t2 + 2.0 * t3;
  b.h10 = t - 2.0 * t2 + t3;
  b.h01 = 3.0 * t2 - 2.0 * t3;
  b.h11 = t3 - t2;
  b.d00 = -6.0 * t + 6.0 * t2;
  b.d10 = 1.0 - 4.0 * t + 3.0 * t2;
  b.d01 = 6.0 * t - 6.0 * t2;
  b.d11 = -2.0 * t + 3.0 * t2;
  b.s00 = -6.0 + 12.0 * t;
  b.s10 = -4.0 + 6.0 * t;
  b.s01 = 6.0 - 12.0 * t;
  b.s11 = -2.0 + 6.0 * t;
  return b;
}

// Second-order node slopes on a possibly non-uniform grid.
Eigen::VectorXd grid_slopes(const std::vector<double>& x,
                            const Eigen::VectorXd& f) {
  const int n = static_cast<int>(x.size());
  Eigen::VectorXd d(n);
  for (int i = 1; i + 1 < n; ++i) {
    const double hl = x[i] - x[i - 1];
    const double hr = x[i + 1] - x[i];
    d[i] = (hl * hl * f[i + 1] + (hr * hr - hl * hl) * f[i] -
            hr * hr * f[i - 1]) /
           (hl * hr * (hl + hr));
  }
  {  // one-sided quadratic at the ends
    const double h0 = x[1] - x[0], h1 = x[2] - x[1];
    d[0] = (-(2.0 * h0 + h1) / (h0 * (h0 + h1))) * f[0] +
           ((h0 + h1) / (h0 * h1)) * f[1] - (h0 / (h1 * (h0 + h1))) * f[2];
    const double g1 = x[n - 2] - x[n - 3], g0 = x[n - 1] - x[n - 2];
    d[n - 1] = (g0 / (g1 * (g0 + g1))) * f[n - 3] -
               ((g0 + g1) / (g0 * g1)) * f[n - 2] +
               ((2.0 * g0 + g1) / (g0 * (g0 + g1))) * f[n - 1];
  }
  return d;
}

int locate_cell(const std::vector<double>& grid, double x) {
  // Largest i with grid[i] <= x, clamped to [0, n-2].
  auto it = std::upper_bound(grid.begin(), grid.end(), x);
  int i = static_cast<int>(it - grid.begin()) - 1;
  return std::clamp(i, 0, static_cast<int>(grid.size()) - 2);
}

struct PatchEval {
  double f, fx, fy, fyy, fxy;
};

// Tensor Hermite patch around (x, y): values plus the derivatives the
// linearizations consume.
PatchEval eval_patch(const std::vector<double>& xs,
                     const std::vector<double>& ys, const Eigen::MatrixXd& f,
                     const Eigen::MatrixXd& fx, const Eigen::MatrixXd& fy,
                     const Eigen::MatrixXd& fxy, double x, double y) {
  const int i = locate_cell(xs, x);
  const int j = locate_cell(ys, y);
  const double hx = xs[i + 1] - xs[i];
  const double hy = ys[j + 1] - ys[j];
  const HermiteBasis bu = hermite((x - xs[i]) / hx);
  const HermiteBasis bw = hermite((y - ys[j]) / hy);

  // Cell coefficients; rows [node i, node i+1, x-slope i, x-slope i+1],
  // columns [node j, node j+1, y-slope j, y-slope j+1].
  const double m[4][4] = {
      {f(i, j), f(i, j + 1), fy(i, j), fy(i, j + 1)},
      {f(i + 1, j), f(i + 1, j + 1), fy(i + 1, j), fy(i + 1, j + 1)},
      {fx(i, j), fx(i, j + 1), fxy(i, j), fxy(i, j + 1)},
      {fx(i + 1, j), fx(i + 1, j + 1), fxy(i + 1, j), fxy(i + 1, j + 1)}};

  // Weight vectors; slope rows/columns carry the cell width so that the
  // patch matches node slopes exactly.
  const double row_val[4] = {bu.h00, bu.h01, hx * bu.h10, hx * bu.h11};
  const double row_der[4] = {bu.d00 / hx, bu.d01 / hx, bu.d10, bu.d11};
  const double col_val[4] = {bw.h00, bw.h01, hy * bw.h10, hy * bw.h11};
  const double col_der[4] = {bw.d00 / hy, bw.d01 / hy, bw.d10, bw.d11};
  const double col_sec[4] = {bw.s00 / (hy * hy), bw.s01 / (hy * hy),
                             bw.s10 / hy, bw.s11 / hy};

  auto combine = [&m](const double* a, const double* b) {
    double acc = 0.0;
    for (int r = 0; r < 4; ++r)
      for (int c = 0; c < 4; ++c) acc += a[r] * m[r][c] * b[c];
    return acc;
  };

  PatchEval out;
  out.f = combine(row_val, col_val);
  out.fx = combine(row_der, col_val);
  out.fy = combine(row_val, col_der);
  out.fyy = combine(row_val, col_sec);
  out.fxy = combine(row_der, col_der);
  return out;
}

constexpr double kGolden = 0.6180339887498949;

}  // namespace

namespace parametric {

// Exponential Cp(lambda, theta) model with induced tip-speed-ratio
// correction; pitch enters in degrees. Coefficients are tuned so the
// surface peaks near lambda 8.0 at Cp 0.43, the pitch-stall pocket
// (dCq/dtheta > 0) opens above lambda ~9.5, and the available power stays
// concave in kinetic energy across the speed envelope. Clipped below at
// -0.2 to keep the braking region bounded.
double cp_model(double lambda, double theta) {
  const double beta = theta * 180.0 / std::numbers::pi;
  const double inv_li = 1.0 / (lambda + 0.010 * beta) -
                        0.0115 / (beta * beta * beta + 1.0);
  const double cp = 0.5176 *
                    (92.0 * inv_li - 0.10 * beta - 0.055 * beta * beta - 5.0) *
                    std::exp(-16.8 * inv_li) +
                    0.0012 * lambda;
  return std::max(cp, -0.2);
}

// Thrust from an axial-induction model: a grows with tip speed ratio and
// feathers out with pitch; Glauert-Buhl continuation above a = 0.4.
double ct_model(double lambda, double theta) {
  const double beta = theta * 180.0 / std::numbers::pi;
  const double a = 0.30 * std::pow(lambda / 8.0, 2.0) * std::exp(-0.07 * beta);
  double ct;
  if (a <= 0.4) {
    ct = 4.0 * a * (1.0 - a);
  } else {
    ct = 8.0 / 9.0 - (4.0 / 9.0) * a + (14.0 / 9.0) * a * a;
  }
  return std::clamp(ct, 0.0, 2.0);
}

}  // namespace parametric

AeroSurface AeroSurface::parametric_default() {
  const int nl = 141, nt = 53;
  std::vector<double> lg(nl), tg(nt);
  for (int i = 0; i < nl; ++i) lg[i] = 1.0 + 0.1 * i;
  for (int j = 0; j < nt; ++j) tg[j] = 0.01 * j;
  Eigen::MatrixXd cp(nl, nt), ct(nl, nt);
  for (int i = 0; i < nl; ++i) {
    for (int j = 0; j < nt; ++j) {
      cp(i, j) = parametric::cp_model(lg[i], tg[j]);
      ct(i, j) = parametric::ct_model(lg[i], tg[j]);
    }
  }
  return from_grids(std::move(lg), std::move(tg), std::move(cp), std::move(ct),
                    SurfaceSource::ParametricDefault);
}

AeroSurface AeroSurface::from_grids(std::vector<double> lambda_grid,
                                    std::vector<double> theta_grid,
                                    Eigen::MatrixXd cp_values,
                                    Eigen::MatrixXd ct_values,
                                    SurfaceSource source) {
  if (lambda_grid.size() < 4 || theta_grid.size() < 4)
    throw Error("AeroSurface: grids need at least 4 points per axis");
  for (std::size_t i = 1; i < lambda_grid.size(); ++i)
    if (!(lambda_grid[i] > lambda_grid[i - 1]))
      throw Error("AeroSurface: lambda grid not strictly increasing at index " +
                  std::to_string(i));
  for (std::size_t j = 1; j < theta_grid.size(); ++j)
    if (!(theta_grid[j] > theta_grid[j - 1]))
      throw Error("AeroSurface: theta grid not strictly increasing at index " +
                  std::to_string(j));
  const auto nl = static_cast<Eigen::Index>(lambda_grid.size());
  const auto nt = static_cast<Eigen::Index>(theta_grid.size());
  if (cp_values.rows() != nl || cp_values.cols() != nt ||
      ct_values.rows() != nl || ct_values.cols() != nt)
    throw DimensionMismatch("AeroSurface: coefficient grid shape mismatch");
  for (Eigen::Index i = 0; i < nl; ++i) {
    for (Eigen::Index j = 0; j < nt; ++j) {
      if (!std::isfinite(cp_values(i, j)) || !std::isfinite(ct_values(i, j)))
        throw Error("AeroSurface: non-finite coefficient at row " +
                    std::to_string(i) + " column " + std::to_string(j));
      if (cp_values(i, j) > kBetzBound + 1e-9)
        throw Error("AeroSurface: Cp exceeds Betz bound at row " +
                    std::to_string(i) + " column " + std::to_string(j));
    }
  }
  AeroSurface s;
  s.lambda_ = std::move(lambda_grid);
  s.theta_ = std::move(theta_grid);
  s.cp_ = std::move(cp_values);
  s.ct_ = std::move(ct_values);
  s.source_ = source;
  s.build_derivative_tables();
  return s;
}

void AeroSurface::build_derivative_tables() {
  const auto nl = cp_.rows(), nt = cp_.cols();
  auto make_tables = [&](const Eigen::MatrixXd& f, Eigen::MatrixXd& fl,
                         Eigen::MatrixXd& ft, Eigen::MatrixXd& flt) {
    fl.resize(nl, nt);
    ft.resize(nl, nt);
    flt.resize(nl, nt);
    for (Eigen::Index j = 0; j < nt; ++j)
      fl.col(j) = grid_slopes(lambda_, f.col(j));
    for (Eigen::Index i = 0; i < nl; ++i)
      ft.row(i) = grid_slopes(theta_, f.row(i).transpose()).transpose();
    for (Eigen::Index j = 0; j < nt; ++j)
      flt.col(j) = grid_slopes(lambda_, ft.col(j));
  };
  make_tables(cp_, cp_dl_, cp_dt_, cp_dlt_);
  make_tables(ct_, ct_dl_, ct_dt_, ct_dlt_);
}

void AeroSurface::check_interior(double lambda, double theta) const {
  const auto n = lambda_.size(), m = theta_.size();
  if (lambda < lambda_[1] || lambda > lambda_[n - 2] || theta < theta_[1] ||
      theta > theta_[m - 2])
    throw OutOfDomain(
        "partials require at least one grid cell of boundary margin");
}

double AeroSurface::cp(double lambda, double theta) const {
  if (lambda < lambda_min() - kDomainSlack || lambda > lambda_max() + kDomainSlack ||
      theta < theta_min() - kDomainSlack || theta > theta_max() + kDomainSlack)
    throw OutOfDomain("cp: (lambda, theta) outside surface grid");
  return eval_patch(lambda_, theta_, cp_, cp_dl_, cp_dt_, cp_dlt_, lambda,
                    theta)
      .f;
}

double AeroSurface::ct(double lambda, double theta) const {
  if (lambda < lambda_min() - kDomainSlack || lambda > lambda_max() + kDomainSlack ||
      theta < theta_min() - kDomainSlack || theta > theta_max() + kDomainSlack)
    throw OutOfDomain("ct: (lambda, theta) outside surface grid");
  return eval_patch(lambda_, theta_, ct_, ct_dl_, ct_dt_, ct_dlt_, lambda,
                    theta)
      .f;
}

double AeroSurface::cq(double lambda, double theta) const {
  if (lambda <= kLambdaEps)
    throw DegenerateLambda("cq: lambda below division guard");
  return cp(lambda, theta) / lambda;
}

SurfacePartials AeroSurface::partials(double lambda, double theta) const {
  check_interior(lambda, theta);
  const PatchEval p =
      eval_patch(lambda_, theta_, cp_, cp_dl_, cp_dt_, cp_dlt_, lambda, theta);
  const PatchEval t =
      eval_patch(lambda_, theta_, ct_, ct_dl_, ct_dt_, ct_dlt_, lambda, theta);
  SurfacePartials out;
  out.dcp_dlambda = p.fx;
  out.dcp_dtheta = p.fy;
  out.dct_dlambda = t.fx;
  out.dct_dtheta = t.fy;
  if (lambda <= kLambdaEps)
    throw DegenerateLambda("partials: lambda below division guard");
  out.dcq_dlambda = (p.fx * lambda - p.f) / (lambda * lambda);
  out.dcq_dtheta = p.fy / lambda;
  return out;
}

CpJet2 AeroSurface::cp_jet2(double lambda, double theta) const {
  check_interior(lambda, theta);
  const PatchEval p =
      eval_patch(lambda_, theta_, cp_, cp_dl_, cp_dt_, cp_dlt_, lambda, theta);
  return {p.f, p.fx, p.fy, p.fyy, p.fxy};
}

StallMargin AeroSurface::stall_margin(const TurbineParams& params, double v,
                                      double lambda, double theta) const {
  if (!(v > 0)) throw Error("stall_margin: wind speed must be positive");
  const SurfacePartials d = partials(lambda, theta);
  StallMargin m;
  m.dtr_dtheta = 0.5 * params.air_density * params.rotor_area *
                 params.rotor_radius * v * v * d.dcq_dtheta;
  m.dcq_domega_sign =
      (d.dcq_dlambda > 1e-12) ? 1 : (d.dcq_dlambda < -1e-12 ? -1 : 0);
  return m;
}

double AeroSurface::argmax_pitch(double lambda) const {
  // Grid scan, then golden-section refinement around the best node.
  int best = 0;
  double best_val = -std::numeric_limits<double>::infinity();
  for (std::size_t j = 0; j < theta_.size(); ++j) {
    const double v = cp(lambda, theta_[j]);
    if (v > best_val) {
      best_val = v;
      best = static_cast<int>(j);
    }
  }
  const int n = static_cast<int>(theta_.size());
  double lo = theta_[std::max(0, best - 1)];
  double hi = theta_[std::min(n - 1, best + 1)];
  double x1 = hi - kGolden * (hi - lo);
  double x2 = lo + kGolden * (hi - lo);
  double f1 = cp(lambda, x1), f2 = cp(lambda, x2);
  for (int it = 0; it < 60 && hi - lo > 1e-10; ++it) {
    if (f1 < f2) {
      lo = x1;
      x1 = x2;
      f1 = f2;
      x2 = lo + kGolden * (hi - lo);
      f2 = cp(lambda, x2);
    } else {
      hi = x2;
      x2 = x1;
      f2 = f1;
      x1 = hi - kGolden * (hi - lo);
      f1 = cp(lambda, x1);
    }
  }
  const double mid = 0.5 * (lo + hi);
  return cp(lambda, mid) >= best_val ? mid : theta_[best];
}

double AeroSurface::max_cp_over_theta(double lambda) const {
  return cp(lambda, argmax_pitch(lambda));
}

double AeroSurface::pitch_from_cp(double cp_target, double lambda,
                                  double tolerance) const {
  const double theta_star = argmax_pitch(lambda);
  const double cp_max = cp(lambda, theta_star);
  if (cp_target > cp_max + tolerance)
    throw Unachievable("pitch_from_cp: target Cp above achievable maximum");
  if (cp_target >= cp_max) return theta_star;

  double lo = theta_star, hi = theta_max();
  double f_lo = cp_max - cp_target;
  double f_hi = cp(lambda, hi) - cp_target;
  if (f_hi > 0.0) return hi;  // target below the feathered branch; clamp
  (void)f_lo;
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double f_mid = cp(lambda, mid) - cp_target;
    if (std::abs(f_mid) <= 1e-6 && (hi - lo) < 1e-7) return mid;
    if (f_mid > 0.0)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

std::uint64_t AeroSurface::content_hash() const {
  std::uint64_t h = 1469598103934665603ull;  // FNV-1a
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  mix(lambda_.data(), lambda_.size() * sizeof(double));
  mix(theta_.data(), theta_.size() * sizeof(double));
  mix(cp_.data(), static_cast<std::size_t>(cp_.size()) * sizeof(double));
  mix(ct_.data(), static_cast<std::size_t>(ct_.size()) * sizeof(double));
  const int tag = static_cast<int>(source_);
  mix(&tag, sizeof(tag));
  return h;
}

AeroSurface AeroSurface::load_table(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot open aero table file: " + file.string());

  auto read_header = [&](const std::string& key) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      std::string head;
      ss >> head;
      if (head != key)
        throw Error("aero table: expected '" + key + "' header, got '" + head +
                    "'");
      std::vector<double> vals;
      double v;
      while (ss >> v) vals.push_back(v);
      if (ss.fail() && !ss.eof())
        throw Error("aero table: malformed number in '" + key + "' header");
      return vals;
    }
    throw Error("aero table: missing '" + key + "' header");
  };

  const std::vector<double> lg = read_header("lambda:");
  const std::vector<double> tg = read_header("theta:");
  const auto nl = lg.size(), nt = tg.size();

  auto read_block = [&](const char* name) {
    Eigen::MatrixXd m(nl, nt);
    std::size_t idx = 0;
    std::string tok;
    while (idx < nl * nt) {
      if (!(in >> tok))
        throw Error(std::string("aero table: ") + name + " block truncated at row " +
                    std::to_string(idx / nt) + " column " +
                    std::to_string(idx % nt));
      if (tok[0] == '#') {  // comment to end of line
        std::string rest;
        std::getline(in, rest);
        continue;
      }
      try {
        std::size_t pos = 0;
        const double v = std::stod(tok, &pos);
        if (pos != tok.size()) throw std::invalid_argument(tok);
        m(static_cast<Eigen::Index>(idx / nt),
          static_cast<Eigen::Index>(idx % nt)) = v;
      } catch (const std::exception&) {
        throw Error(std::string("aero table: bad value '") + tok + "' in " +
                    name + " block at row " + std::to_string(idx / nt) +
                    " column " + std::to_string(idx % nt));
      }
      ++idx;
    }
    return m;
  };

  Eigen::MatrixXd cp = read_block("Cp");
  Eigen::MatrixXd ct = read_block("Ct");
  return from_grids(std::vector<double>(lg), std::vector<double>(tg),
                    std::move(cp), std::move(ct), SurfaceSource::UserTable);
}

}  // namespace windmpc
