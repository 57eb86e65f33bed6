#include "windmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <vector>

#include <Eigen/SparseCholesky>

namespace windmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Stacked {
  SpMat A;             // [A_eq; A_in; I]
  Eigen::VectorXd l, u;
  int me = 0, mi = 0, n = 0, m = 0;
};

Stacked stack_constraints(const QpProblem& p) {
  Stacked s;
  s.n = p.n;
  s.me = static_cast<int>(p.A_eq.rows());
  s.mi = static_cast<int>(p.A_in.rows());
  s.m = s.me + s.mi + s.n;
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(p.A_eq.nonZeros() + p.A_in.nonZeros() + s.n);
  for (int k = 0; k < p.A_eq.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.A_eq, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int k = 0; k < p.A_in.outerSize(); ++k)
    for (SpMat::InnerIterator it(p.A_in, k); it; ++it)
      trips.emplace_back(s.me + static_cast<int>(it.row()),
                         static_cast<int>(it.col()), it.value());
  for (int j = 0; j < s.n; ++j) trips.emplace_back(s.me + s.mi + j, j, 1.0);
  s.A.resize(s.m, s.n);
  s.A.setFromTriplets(trips.begin(), trips.end());
  s.l.setConstant(s.m, -kInf);
  s.u.setConstant(s.m, kInf);
  s.l.head(s.me) = p.b_eq;
  s.u.head(s.me) = p.b_eq;
  s.u.segment(s.me, s.mi) = p.b_in;
  if (p.lb.size() > 0) s.l.tail(s.n) = p.lb;
  if (p.ub.size() > 0) s.u.tail(s.n) = p.ub;
  return s;
}

struct Scaling {
  Eigen::VectorXd D;  // variable scaling, x = D x_hat
  Eigen::VectorXd E;  // row scaling
  double c = 1.0;     // cost scaling
};

// Modified Ruiz equilibration of [[H, A'], [A, 0]] plus cost normalization.
Scaling ruiz(SpMat& H, Eigen::VectorXd& g, SpMat& A, Eigen::VectorXd& l,
             Eigen::VectorXd& u, int iters) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  Scaling s;
  s.D.setOnes(n);
  s.E.setOnes(m);
  for (int it = 0; it < iters; ++it) {
    Eigen::VectorXd coln = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < H.outerSize(); ++k)
      for (SpMat::InnerIterator i(H, k); i; ++i)
        coln[static_cast<int>(i.col())] =
            std::max(coln[static_cast<int>(i.col())], std::abs(i.value()));
    Eigen::VectorXd rown = Eigen::VectorXd::Zero(m);
    for (int k = 0; k < A.outerSize(); ++k)
      for (SpMat::InnerIterator i(A, k); i; ++i) {
        coln[static_cast<int>(i.col())] =
            std::max(coln[static_cast<int>(i.col())], std::abs(i.value()));
        rown[static_cast<int>(i.row())] =
            std::max(rown[static_cast<int>(i.row())], std::abs(i.value()));
      }
    Eigen::VectorXd dx(n), de(m);
    for (int j = 0; j < n; ++j)
      dx[j] = coln[j] > 1e-12 ? 1.0 / std::sqrt(coln[j]) : 1.0;
    for (int i = 0; i < m; ++i)
      de[i] = rown[i] > 1e-12 ? 1.0 / std::sqrt(rown[i]) : 1.0;
    H = dx.asDiagonal() * H * dx.asDiagonal();
    g = dx.cwiseProduct(g);
    A = de.asDiagonal() * A * dx.asDiagonal();
    for (int i = 0; i < m; ++i) {
      if (std::isfinite(l[i])) l[i] *= de[i];
      if (std::isfinite(u[i])) u[i] *= de[i];
    }
    s.D = s.D.cwiseProduct(dx);
    s.E = s.E.cwiseProduct(de);

    // Cost scaling toward unit magnitude.
    double hmean = 0.0;
    Eigen::VectorXd hcol = Eigen::VectorXd::Zero(n);
    for (int k = 0; k < H.outerSize(); ++k)
      for (SpMat::InnerIterator i(H, k); i; ++i)
        hcol[static_cast<int>(i.col())] =
            std::max(hcol[static_cast<int>(i.col())], std::abs(i.value()));
    hmean = hcol.size() > 0 ? hcol.mean() : 0.0;
    const double gnorm = g.size() > 0 ? g.cwiseAbs().maxCoeff() : 0.0;
    const double denom = std::max(hmean, gnorm);
    if (denom > 1e-12) {
      const double gamma = 1.0 / denom;
      H *= gamma;
      g *= gamma;
      s.c *= gamma;
    }
  }
  return s;
}

SpMat build_kkt(const SpMat& H, const SpMat& A, double sigma,
                const Eigen::VectorXd& rho) {
  const int n = static_cast<int>(H.rows());
  const int m = static_cast<int>(A.rows());
  std::vector<Eigen::Triplet<double>> trips;
  trips.reserve(H.nonZeros() + 2 * A.nonZeros() + n + m);
  for (int k = 0; k < H.outerSize(); ++k)
    for (SpMat::InnerIterator it(H, k); it; ++it)
      trips.emplace_back(static_cast<int>(it.row()), static_cast<int>(it.col()),
                         it.value());
  for (int j = 0; j < n; ++j) trips.emplace_back(j, j, sigma);
  for (int k = 0; k < A.outerSize(); ++k)
    for (SpMat::InnerIterator it(A, k); it; ++it) {
      trips.emplace_back(n + static_cast<int>(it.row()),
                         static_cast<int>(it.col()), it.value());
      trips.emplace_back(static_cast<int>(it.col()),
                         n + static_cast<int>(it.row()), it.value());
    }
  for (int i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -1.0 / rho[i]);
  SpMat kkt(n + m, n + m);
  kkt.setFromTriplets(trips.begin(), trips.end());
  return kkt;
}

struct Residuals {
  double prim = kInf;  // scaled
  double dual = kInf;  // scaled
};

}  // namespace

void QpProblem::validate(bool check_psd) const {
  if (H.rows() != n || H.cols() != n)
    throw DimensionMismatch("QpProblem: H must be n x n");
  if (g.size() != n) throw DimensionMismatch("QpProblem: g size mismatch");
  if (A_eq.rows() != b_eq.size())
    throw DimensionMismatch("QpProblem: A_eq/b_eq mismatch");
  if (A_in.rows() != b_in.size())
    throw DimensionMismatch("QpProblem: A_in/b_in mismatch");
  if (A_eq.rows() > 0 && A_eq.cols() != n)
    throw DimensionMismatch("QpProblem: A_eq column count");
  if (A_in.rows() > 0 && A_in.cols() != n)
    throw DimensionMismatch("QpProblem: A_in column count");
  if (lb.size() != 0 && lb.size() != n)
    throw DimensionMismatch("QpProblem: lb size");
  if (ub.size() != 0 && ub.size() != n)
    throw DimensionMismatch("QpProblem: ub size");
  SpMat Ht = SpMat(H.transpose());
  SpMat diff = H - Ht;
  double asym = 0.0;
  for (int k = 0; k < diff.outerSize(); ++k)
    for (SpMat::InnerIterator it(diff, k); it; ++it)
      asym = std::max(asym, std::abs(it.value()));
  double hnorm = 0.0;
  for (int k = 0; k < H.outerSize(); ++k)
    for (SpMat::InnerIterator it(H, k); it; ++it)
      hnorm = std::max(hnorm, std::abs(it.value()));
  if (asym > 1e-12 * std::max(1.0, hnorm))
    throw Error("QpProblem: H not symmetric within tolerance");
  if (check_psd && n > 0) {
    Eigen::MatrixXd Hd(H);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hd);
    const double lo = es.eigenvalues().minCoeff();
    const double hi = std::max(1.0, es.eigenvalues().maxCoeff());
    if (lo < -1e-9 * hi) throw Error("QpProblem: H not PSD within tolerance");
  }
}

double objective_value(const QpProblem& p, const Eigen::VectorXd& z) {
  return 0.5 * z.dot(p.H * z) + p.g.dot(z);
}

QpValidation validate(const QpProblem& p, const Eigen::VectorXd& z,
                      double tol) {
  if (z.size() != p.n) throw DimensionMismatch("validate: z size mismatch");
  double worst = -kInf;
  if (p.A_eq.rows() > 0) {
    Eigen::VectorXd r = p.A_eq * z - p.b_eq;
    for (int i = 0; i < r.size(); ++i)
      worst = std::max(worst, std::abs(r[i]) / std::max(1.0, std::abs(p.b_eq[i])));
  }
  if (p.A_in.rows() > 0) {
    Eigen::VectorXd r = p.A_in * z - p.b_in;
    for (int i = 0; i < r.size(); ++i)
      worst = std::max(worst, r[i] / std::max(1.0, std::abs(p.b_in[i])));
  }
  for (int j = 0; j < p.lb.size(); ++j)
    if (std::isfinite(p.lb[j]))
      worst = std::max(worst, (p.lb[j] - z[j]) / std::max(1.0, std::abs(p.lb[j])));
  for (int j = 0; j < p.ub.size(); ++j)
    if (std::isfinite(p.ub[j]))
      worst = std::max(worst, (z[j] - p.ub[j]) / std::max(1.0, std::abs(p.ub[j])));
  if (worst == -kInf) worst = 0.0;
  return {worst <= tol, worst};
}

QpSolution QpSolver::solve(const QpProblem& problem,
                           const Eigen::VectorXd* warm_start) {
  problem.validate(false);
  const int n = problem.n;
  Stacked st = stack_constraints(problem);

  // Scaled working copies.
  SpMat Hs = problem.H;
  Eigen::VectorXd gs = problem.g;
  SpMat As = st.A;
  Eigen::VectorXd ls = st.l, us = st.u;
  Scaling sc = ruiz(Hs, gs, As, ls, us, settings_.scaling_iters);

  // Per-row rho: equalities get a stiffer penalty.
  double rho_bar = settings_.rho;
  Eigen::VectorXd rho(st.m);
  auto fill_rho = [&]() {
    for (int i = 0; i < st.m; ++i) {
      const bool eq = std::isfinite(ls[i]) && std::isfinite(us[i]) &&
                      (us[i] - ls[i]) < 1e-14 * std::max(1.0, std::abs(us[i]));
      rho[i] = eq ? rho_bar * settings_.rho_eq_scale : rho_bar;
    }
  };
  fill_rho();

  Eigen::SimplicialLDLT<SpMat> kkt;
  {
    SpMat K = build_kkt(Hs, As, settings_.sigma, rho);
    kkt.compute(K);
    if (kkt.info() != Eigen::Success)
      throw Error("QpSolver: KKT factorization failed");
  }

  Eigen::VectorXd xh = Eigen::VectorXd::Zero(n);
  if (warm_start != nullptr) {
    if (warm_start->size() != n)
      throw DimensionMismatch("QpSolver: warm start size mismatch");
    xh = warm_start->cwiseQuotient(sc.D);
  }
  Eigen::VectorXd zh = (As * xh).cwiseMax(ls).cwiseMin(us);
  Eigen::VectorXd yh = Eigen::VectorXd::Zero(st.m);
  Eigen::VectorXd dy = Eigen::VectorXd::Zero(st.m);

  QpSolution sol;
  sol.z = sc.D.cwiseProduct(xh);

  auto unscaled_residuals = [&](const Eigen::VectorXd& xh_, const Eigen::VectorXd& zh_,
                                const Eigen::VectorXd& yh_) {
    Eigen::VectorXd x = sc.D.cwiseProduct(xh_);
    Eigen::VectorXd z = zh_.cwiseQuotient(sc.E);
    Eigen::VectorXd y = sc.E.cwiseProduct(yh_) / sc.c;
    Eigen::VectorXd Ax = st.A * x;
    Eigen::VectorXd Hx = problem.H * x;
    Eigen::VectorXd Aty = st.A.transpose() * y;
    Residuals r;
    const double pn = (Ax - z).cwiseAbs().maxCoeff();
    r.prim = pn / std::max({1.0, Ax.cwiseAbs().maxCoeff(), z.cwiseAbs().maxCoeff()});
    const double dn = (Hx + problem.g + Aty).cwiseAbs().maxCoeff();
    r.dual = dn / std::max({1.0, Hx.cwiseAbs().maxCoeff(),
                            problem.g.size() ? problem.g.cwiseAbs().maxCoeff() : 0.0,
                            Aty.cwiseAbs().maxCoeff()});
    return r;
  };

  // Active-set polish: equality-solve on the constraints the iterate pins,
  // then keep the refined point only if it improves the KKT residuals.
  auto try_polish = [&](Eigen::VectorXd& xh_, Eigen::VectorXd& zh_,
                        Eigen::VectorXd& yh_, Residuals& best) {
    std::vector<int> act;
    std::vector<double> rhs_act;
    for (int i = 0; i < st.m; ++i) {
      const bool eq = std::isfinite(ls[i]) && std::isfinite(us[i]) &&
                      (us[i] - ls[i]) < 1e-14 * std::max(1.0, std::abs(us[i]));
      const double prox = 1e-6 * std::max(1.0, std::max(std::abs(ls[i]) * (std::isfinite(ls[i]) ? 1.0 : 0.0),
                                                        std::abs(us[i]) * (std::isfinite(us[i]) ? 1.0 : 0.0)));
      if (eq) {
        act.push_back(i);
        rhs_act.push_back(us[i]);
      } else if (std::isfinite(ls[i]) &&
                 (yh_[i] < -1e-12 || zh_[i] - ls[i] < prox)) {
        act.push_back(i);
        rhs_act.push_back(ls[i]);
      } else if (std::isfinite(us[i]) &&
                 (yh_[i] > 1e-12 || us[i] - zh_[i] < prox)) {
        act.push_back(i);
        rhs_act.push_back(us[i]);
      }
    }
    const int ma = static_cast<int>(act.size());
    std::vector<Eigen::Triplet<double>> trips;
    trips.reserve(Hs.nonZeros() + n + 2 * ma * 4 + ma);
    for (int k = 0; k < Hs.outerSize(); ++k)
      for (SpMat::InnerIterator it(Hs, k); it; ++it)
        trips.emplace_back(static_cast<int>(it.row()),
                           static_cast<int>(it.col()), it.value());
    const double delta = 1e-9;
    for (int j = 0; j < n; ++j) trips.emplace_back(j, j, delta);
    // Gather active rows of As.
    Eigen::VectorXi act_of_row = Eigen::VectorXi::Constant(st.m, -1);
    for (int a = 0; a < ma; ++a) act_of_row[act[a]] = a;
    for (int k = 0; k < As.outerSize(); ++k)
      for (SpMat::InnerIterator it(As, k); it; ++it) {
        const int a = act_of_row[static_cast<int>(it.row())];
        if (a < 0) continue;
        trips.emplace_back(n + a, static_cast<int>(it.col()), it.value());
        trips.emplace_back(static_cast<int>(it.col()), n + a, it.value());
      }
    for (int a = 0; a < ma; ++a) trips.emplace_back(n + a, n + a, -delta);
    SpMat K(n + ma, n + ma);
    K.setFromTriplets(trips.begin(), trips.end());
    Eigen::SimplicialLDLT<SpMat> fact(K);
    if (fact.info() != Eigen::Success) return false;
    Eigen::VectorXd rhs(n + ma);
    rhs.head(n) = -gs;
    for (int a = 0; a < ma; ++a) rhs[n + a] = rhs_act[a];
    Eigen::VectorXd sol_v = fact.solve(rhs);
    // Iterative refinement against the unregularized system.
    for (int pass = 0; pass < 3; ++pass) {
      Eigen::VectorXd resid(n + ma);
      Eigen::VectorXd xp = sol_v.head(n);
      Eigen::VectorXd yp = sol_v.tail(ma);
      Eigen::VectorXd Gx = Eigen::VectorXd::Zero(ma);
      Eigen::VectorXd Gty = Eigen::VectorXd::Zero(n);
      for (int k = 0; k < As.outerSize(); ++k)
        for (SpMat::InnerIterator it(As, k); it; ++it) {
          const int a = act_of_row[static_cast<int>(it.row())];
          if (a < 0) continue;
          Gx[a] += it.value() * xp[static_cast<int>(it.col())];
          Gty[static_cast<int>(it.col())] += it.value() * yp[a];
        }
      resid.head(n) = Hs * xp + Gty - rhs.head(n);
      resid.tail(ma) = Gx - rhs.tail(ma);
      sol_v -= fact.solve(resid);
    }
    Eigen::VectorXd xp = sol_v.head(n);
    Eigen::VectorXd yp_full = Eigen::VectorXd::Zero(st.m);
    for (int a = 0; a < ma; ++a) yp_full[act[a]] = sol_v[n + a];
    Eigen::VectorXd zp = (As * xp).cwiseMax(ls).cwiseMin(us);
    const Residuals rp = unscaled_residuals(xp, zp, yp_full);
    if (std::max(rp.prim, rp.dual) < std::max(best.prim, best.dual)) {
      xh_ = xp;
      zh_ = zp;
      yh_ = yp_full;
      best = rp;
      return true;
    }
    return false;
  };

  Residuals res;
  int refactor_count = 0;
  int polish_attempts = 0;
  bool converged = false;
  int iter = 0;
  for (iter = 1; iter <= settings_.max_iter; ++iter) {
    Eigen::VectorXd rhs(n + st.m);
    rhs.head(n) = settings_.sigma * xh - gs;
    rhs.tail(st.m) = zh - yh.cwiseQuotient(rho);
    Eigen::VectorXd w = kkt.solve(rhs);
    Eigen::VectorXd xt = w.head(n);
    Eigen::VectorXd nu = w.tail(st.m);
    Eigen::VectorXd zt = zh + (nu - yh).cwiseQuotient(rho);

    const double a = settings_.alpha;
    Eigen::VectorXd x_next = a * xt + (1.0 - a) * xh;
    Eigen::VectorXd z_relax = a * zt + (1.0 - a) * zh;
    Eigen::VectorXd z_next =
        (z_relax + yh.cwiseQuotient(rho)).cwiseMax(ls).cwiseMin(us);
    Eigen::VectorXd y_next = yh + rho.cwiseProduct(z_relax - z_next);

    dy = y_next - yh;
    xh = x_next;
    zh = z_next;
    yh = y_next;

    if (iter % settings_.check_every == 0 || iter == settings_.max_iter) {
      res = unscaled_residuals(xh, zh, yh);
      if (res.prim <= settings_.eps_prim && res.dual <= settings_.eps_dual) {
        if (settings_.polish) try_polish(xh, zh, yh, res);
        converged = true;
        break;
      }
      if (settings_.polish && polish_attempts < 8 &&
          res.prim <= 1e4 * settings_.eps_prim &&
          res.dual <= 1e4 * settings_.eps_dual) {
        ++polish_attempts;
        Residuals rr = res;
        if (try_polish(xh, zh, yh, rr)) {
          res = rr;
          if (res.prim <= settings_.eps_prim && res.dual <= settings_.eps_dual) {
            converged = true;
            break;
          }
        }
      }
      // Primal infeasibility certificate from the dual update direction.
      {
        Eigen::VectorXd dyu = sc.E.cwiseProduct(dy) / sc.c;
        const double dn = dyu.cwiseAbs().maxCoeff();
        if (dn > 1e-14) {
          dyu /= dn;
          const double aty = (st.A.transpose() * dyu).cwiseAbs().maxCoeff();
          double support = 0.0;
          bool bounded = true;
          for (int i = 0; i < st.m; ++i) {
            const double dp = std::max(dyu[i], 0.0);
            const double dm = std::min(dyu[i], 0.0);
            if (dp > settings_.eps_infeas && !std::isfinite(st.u[i])) bounded = false;
            if (dm < -settings_.eps_infeas && !std::isfinite(st.l[i])) bounded = false;
            if (std::isfinite(st.u[i])) support += st.u[i] * dp;
            if (std::isfinite(st.l[i])) support += st.l[i] * dm;
          }
          if (bounded && aty <= settings_.eps_infeas &&
              support <= -settings_.eps_infeas) {
            sol.status = QpStatus::Infeasible;
            sol.iterations = iter;
            sol.z = sc.D.cwiseProduct(xh);
            sol.kkt_residual = std::max(res.prim, res.dual);
            sol.primal_residual = res.prim;
            sol.dual_residual = res.dual;
            sol.objective = objective_value(problem, sol.z);
            sol.y_eq = Eigen::VectorXd::Zero(st.me);
            sol.y_in = Eigen::VectorXd::Zero(st.mi);
            sol.y_box = Eigen::VectorXd::Zero(st.n);
            return sol;
          }
        }
      }
      // Residual-balancing rho adaptation (refactors the KKT).
      if (settings_.adaptive_rho && refactor_count < 20 &&
          iter + settings_.check_every <= settings_.max_iter) {
        const double ratio = std::sqrt(res.prim / std::max(res.dual, 1e-300));
        const double cand = std::clamp(rho_bar * ratio, 1e-6, 1e6);
        if (cand > 5.0 * rho_bar || cand < rho_bar / 5.0) {
          rho_bar = cand;
          fill_rho();
          SpMat K = build_kkt(Hs, As, settings_.sigma, rho);
          kkt.compute(K);
          ++refactor_count;
          if (kkt.info() != Eigen::Success)
            throw Error("QpSolver: KKT refactorization failed");
        }
      }
    }
  }

  sol.iterations = std::min(iter, settings_.max_iter);
  sol.z = sc.D.cwiseProduct(xh);
  Eigen::VectorXd y = sc.E.cwiseProduct(yh) / sc.c;
  sol.y_eq = y.head(st.me);
  sol.y_in = y.segment(st.me, st.mi);
  sol.y_box = y.tail(st.n);
  sol.primal_residual = res.prim;
  sol.dual_residual = res.dual;
  sol.kkt_residual = std::max(res.prim, res.dual);
  sol.objective = objective_value(problem, sol.z);
  sol.status = converged ? QpStatus::Optimal : QpStatus::MaxIter;
  return sol;
}

void dump_problem(const QpProblem& p, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw Error("dump_problem: cannot open " + file.string());
  out.precision(17);
  auto write_sparse = [&](const char* name, const SpMat& M) {
    out << "%%MatrixMarket matrix coordinate real general\n";
    out << "% " << name << "\n";
    out << M.rows() << " " << M.cols() << " " << M.nonZeros() << "\n";
    for (int k = 0; k < M.outerSize(); ++k)
      for (SpMat::InnerIterator it(M, k); it; ++it)
        out << it.row() + 1 << " " << it.col() + 1 << " " << it.value() << "\n";
  };
  auto write_vec = [&](const char* name, const Eigen::VectorXd& v) {
    out << "%%MatrixMarket matrix array real general\n";
    out << "% " << name << "\n";
    out << v.size() << " 1\n";
    for (int i = 0; i < v.size(); ++i) out << v[i] << "\n";
  };
  write_sparse("H", p.H);
  write_vec("g", p.g);
  write_sparse("A_eq", p.A_eq);
  write_vec("b_eq", p.b_eq);
  write_sparse("A_in", p.A_in);
  write_vec("b_in", p.b_in);
  write_vec("lb", p.lb);
  write_vec("ub", p.ub);
}

}  // namespace windmpc
