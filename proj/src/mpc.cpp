#include "windmpc/mpc.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace windmpc {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Layout {
  int N = 0;
  bool stall = false;
  bool fextra = false;
  int pr(int i) const { return i; }
  int pg(int i) const { return N + i; }
  int K(int i) const { return 2 * N + (i - 1); }  // i in [1, N]
  int sK(int i) const { return 3 * N + (i - 1); } // i in [1, N]
  int sst(int i) const { return 4 * N + i; }      // i in [0, N)
  int fx(int i) const { return (stall ? 5 : 4) * N + i; }
  int size() const { return (4 + (stall ? 1 : 0) + (fextra ? 1 : 0)) * N; }
};

}  // namespace

std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::MaxKineticEnergy: return "max_kinetic_energy";
    case Strategy::MinThrust: return "min_thrust";
    case Strategy::ConstantTipSpeedRatio: return "constant_tip_speed_ratio";
    case Strategy::ConstantRotorSpeed: return "constant_rotor_speed";
  }
  return "unknown";
}

Strategy strategy_from_string(const std::string& name) {
  if (name == "max_kinetic_energy") return Strategy::MaxKineticEnergy;
  if (name == "min_thrust") return Strategy::MinThrust;
  if (name == "constant_tip_speed_ratio") return Strategy::ConstantTipSpeedRatio;
  if (name == "constant_rotor_speed") return Strategy::ConstantRotorSpeed;
  throw ConfigError("unknown strategy: " + name);
}

std::array<double, 7> mask_strategy_weights(const std::array<double, 7>& a,
                                            Strategy s) {
  std::array<double, 7> m = a;
  m[4] = (s == Strategy::MaxKineticEnergy) ? a[4] : 0.0;
  m[5] = (s == Strategy::ConstantTipSpeedRatio ||
          s == Strategy::ConstantRotorSpeed)
             ? a[5]
             : 0.0;
  m[6] = (s == Strategy::MinThrust) ? a[6] : 0.0;
  return m;
}

int MpcConfig::horizon_steps() const {
  return static_cast<int>(std::round(T / Ts));
}

void MpcConfig::validate() const {
  if (!(Ts > 0.0) || !(T > 0.0)) throw ConfigError("MpcConfig: T, Ts must be positive");
  const double ratio = T / Ts;
  if (std::abs(ratio - std::round(ratio)) > 1e-9 * ratio || std::round(ratio) < 2)
    throw ConfigError("MpcConfig: T/Ts must be an integer >= 2");
  if (!(alphas[0] > 0.0)) throw ConfigError("MpcConfig: alpha1 must be positive");
  for (double a : alphas)
    if (a < 0.0 || !std::isfinite(a))
      throw ConfigError("MpcConfig: weights must be finite and non-negative");
  const bool a5 = alphas[4] != 0.0, a6 = alphas[5] != 0.0, a7 = alphas[6] != 0.0;
  switch (strategy) {
    case Strategy::MaxKineticEnergy:
      if (!a5 || a6 || a7)
        throw ConfigError("MpcConfig: MaxKineticEnergy needs [a5, 0, 0]");
      break;
    case Strategy::MinThrust:
      if (a5 || a6 || !a7)
        throw ConfigError("MpcConfig: MinThrust needs [0, 0, a7]");
      break;
    case Strategy::ConstantTipSpeedRatio:
    case Strategy::ConstantRotorSpeed:
      if (a5 || !a6 || a7)
        throw ConfigError("MpcConfig: tracking strategies need [0, a6, 0]");
      break;
  }
  if (delta < 0.0) throw ConfigError("MpcConfig: delta must be >= 0");
  if (!(lambda_opt > 0.0)) throw ConfigError("MpcConfig: lambda_opt must be positive");
  if (!(omega_ref_const > 0.0))
    throw ConfigError("MpcConfig: omega_ref_const must be positive");
  if (torque_cuts < 3) throw ConfigError("MpcConfig: need >= 3 torque cuts");
}

double kinetic_reference(const TurbineParams& params, const MpcConfig& cfg,
                         double v) {
  if (!(v > 0.0)) throw Error("kinetic_reference: wind speed must be positive");
  if (cfg.strategy == Strategy::ConstantRotorSpeed) {
    const double omega_g = cfg.omega_ref_const * params.gearbox_ratio;
    return params.kinetic_at(omega_g);
  }
  const double omega_g_ref =
      cfg.lambda_opt * v / params.rotor_radius * params.gearbox_ratio;
  return params.kinetic_at(omega_g_ref);
}

double pitch_command(const AeroSurface& surface, const TurbineParams& params,
                     double P_r, double K, double v) {
  if (!(K > 0.0) || !(v > 0.0))
    throw Error("pitch_command: K and v must be positive");
  const double cp_target =
      P_r / (0.5 * params.air_density * params.rotor_area * v * v * v);
  double lambda = params.tip_speed_ratio_from_kinetic(K, v);
  lambda = std::clamp(lambda, surface.lambda_min(), surface.lambda_max());
  double theta;
  try {
    theta = surface.pitch_from_cp(cp_target, lambda);
  } catch (const Unachievable&) {
    theta = surface.argmax_pitch(lambda);
  }
  return std::clamp(theta, params.theta_min, params.theta_max);
}

double torque_command(const TurbineParams& params, double P_g, double K) {
  if (K < kKineticEps) throw DegenerateK("torque_command: K below guard");
  const double T_g = P_g / (params.eta_g * params.omega_from_kinetic(K));
  return std::clamp(T_g, 0.0, params.T_g_max);
}

QpProblem build_problem(double K0, double v,
                        std::span<const double> P_ref_horizon,
                        const MpcConfig& cfg, const PwaEnvelope& env,
                        const LinearModels& lin, const TurbineParams& params,
                        double prev_P_r, double prev_P_g) {
  const int N = cfg.horizon_steps();
  if (static_cast<int>(P_ref_horizon.size()) != N)
    throw DimensionMismatch("build_problem: P_ref horizon length != N");
  Layout L;
  L.N = N;
  L.stall = cfg.stall_constraint && lin.stall.has_value();
  L.fextra = cfg.strategy == Strategy::MinThrust && lin.thrust.has_value() &&
             !cfg.thrust_quadratic;
  const int n = L.size();

  const double P_scale = params.P_g_rated;
  const double K_scale = params.kinetic_rated();
  const double F_scale = 0.5 * params.air_density * params.rotor_area * v * v;
  const auto& a = cfg.alphas;

  std::vector<Eigen::Triplet<double>> Ht;
  Eigen::VectorXd g = Eigen::VectorXd::Zero(n);
  auto add_quad = [&](int i, int j, double coeff) {
    // cost += coeff * z_i * z_j  (H holds the Hessian)
    if (i == j) {
      Ht.emplace_back(i, i, 2.0 * coeff);
    } else {
      Ht.emplace_back(i, j, coeff);
      Ht.emplace_back(j, i, coeff);
    }
  };

  // Tracking and rate terms.
  const double c_track = a[0] / (P_scale * P_scale);
  const double c_rate_g = a[1] / (cfg.Ts * cfg.Ts * P_scale * P_scale);
  const double c_rate_r = a[2] / (cfg.Ts * cfg.Ts * P_scale * P_scale);
  for (int i = 0; i < N; ++i) {
    add_quad(L.pg(i), L.pg(i), c_track);
    g[L.pg(i)] += -2.0 * c_track * P_ref_horizon[i];
    const int gi = L.pg(i), ri = L.pr(i);
    if (i == 0) {
      add_quad(gi, gi, c_rate_g);
      g[gi] += -2.0 * c_rate_g * prev_P_g;
      add_quad(ri, ri, c_rate_r);
      g[ri] += -2.0 * c_rate_r * prev_P_r;
    } else {
      add_quad(gi, gi, c_rate_g);
      add_quad(L.pg(i - 1), L.pg(i - 1), c_rate_g);
      add_quad(gi, L.pg(i - 1), -c_rate_g);
      add_quad(ri, ri, c_rate_r);
      add_quad(L.pr(i - 1), L.pr(i - 1), c_rate_r);
      add_quad(ri, L.pr(i - 1), -c_rate_r);
    }
  }

  // Rated-overage, strategy, and softening terms.
  const double K_ref = kinetic_reference(params, cfg, v);
  for (int i = 1; i <= N; ++i) {
    g[L.sK(i)] += a[3] / K_scale;
    if (a[4] != 0.0) g[L.K(i)] += -a[4] / K_scale;
    if (a[5] != 0.0) {
      const double c6 = a[5] / (K_scale * K_scale);
      add_quad(L.K(i), L.K(i), c6);
      g[L.K(i)] += -2.0 * c6 * K_ref;
    }
    if (cfg.strategy == Strategy::MinThrust && cfg.thrust_quadratic &&
        lin.thrust.has_value()) {
      const double rk = lin.thrust->R_FT / F_scale;
      add_quad(L.K(i), L.K(i), a[6] * rk * rk);
    }
  }
  if (L.fextra)
    for (int i = 0; i < N; ++i) g[L.fx(i)] += a[6] / F_scale;
  if (L.stall)
    for (int i = 0; i < N; ++i) g[L.sst(i)] += cfg.stall_penalty;

  // Tie-break regularization keeps degenerate problems unique.
  for (int i = 0; i < N; ++i) {
    add_quad(L.pr(i), L.pr(i), cfg.tie_break / (P_scale * P_scale));
    add_quad(L.pg(i), L.pg(i), cfg.tie_break / (P_scale * P_scale));
    add_quad(L.K(i + 1), L.K(i + 1), cfg.tie_break / (K_scale * K_scale));
    add_quad(L.sK(i + 1), L.sK(i + 1), cfg.tie_break / (K_scale * K_scale));
    if (L.stall) add_quad(L.sst(i), L.sst(i), cfg.tie_break);
    if (L.fextra) add_quad(L.fx(i), L.fx(i), cfg.tie_break / (F_scale * F_scale));
  }

  QpProblem p;
  p.n = n;
  p.H.resize(n, n);
  p.H.setFromTriplets(Ht.begin(), Ht.end());
  p.g = g;

  // Dynamics equalities: K[i+1] - K[i] - Ts P_r[i] + (Ts/eta) P_g[i] = [K0|0].
  {
    std::vector<Eigen::Triplet<double>> At;
    Eigen::VectorXd be = Eigen::VectorXd::Zero(N);
    for (int i = 0; i < N; ++i) {
      At.emplace_back(i, L.K(i + 1), 1.0);
      At.emplace_back(i, L.pr(i), -cfg.Ts);
      At.emplace_back(i, L.pg(i), cfg.Ts / params.eta_g);
      if (i == 0)
        be[i] = K0;
      else
        At.emplace_back(i, L.K(i), -1.0);
    }
    p.A_eq.resize(N, n);
    p.A_eq.setFromTriplets(At.begin(), At.end());
    p.b_eq = be;
  }

  // Inequalities.
  std::vector<Eigen::Triplet<double>> At;
  std::vector<double> bi;
  auto row = static_cast<int>(0);
  auto push_row = [&](std::initializer_list<std::pair<int, double>> entries,
                      double rhs) {
    for (const auto& [col, val] : entries) At.emplace_back(row, col, val);
    bi.push_back(rhs);
    ++row;
  };

  // s_K epigraph of max(K - K_rated, 0).
  for (int i = 1; i <= N; ++i)
    push_row({{L.K(i), 1.0}, {L.sK(i), -1.0}}, params.kinetic_rated());

  // Available-power cuts. Exactly on a wind grid point a single set of k
  // cuts applies; between grid points every (piece, piece) combination is a
  // valid cut of the interpolated envelope and the active pair is tight.
  {
    const auto [i1, i2, th] = env.locate_wind(v);
    const double v1 = env.wind_grid[i1], v2 = env.wind_grid[i2];
    const double w1 = (1.0 - th) * v1 * v1 * v1, w2 = th * v2 * v2 * v2;
    std::vector<AffineSegment> cuts;
    if (th < 1e-12) {
      for (const auto& s : env.segments[i1]) cuts.push_back({s.a * w1, s.b * w1});
    } else if (th > 1.0 - 1e-12) {
      for (const auto& s : env.segments[i2]) cuts.push_back({s.a * w2, s.b * w2});
    } else {
      for (const auto& s1 : env.segments[i1])
        for (const auto& s2 : env.segments[i2])
          cuts.push_back({s1.a * w1 + s2.a * w2, s1.b * w1 + s2.b * w2});
    }
    const double pav0 = eval_envelope(env, v, K0);
    push_row({{L.pr(0), 1.0}}, pav0);
    for (int i = 1; i < N; ++i)
      for (const auto& c : cuts)
        push_row({{L.pr(i), 1.0}, {L.K(i), -c.a}}, c.b);
  }

  // Torque-limit tangents: P_g <= min_j(slope K + intercept). Geometric
  // speed spacing equalizes the over-approximation across the sqrt curve.
  {
    std::vector<double> Kg(cfg.torque_cuts);
    const double ratio = params.omega_g_max / params.omega_g_min;
    for (int j = 0; j < cfg.torque_cuts; ++j) {
      const double w = params.omega_g_min *
                       std::pow(ratio, double(j) / (cfg.torque_cuts - 1));
      Kg[j] = params.kinetic_at(w);
    }
    const auto cuts = torque_limit_cuts(params, Kg);
    double cap0 = kInf;
    for (const auto& c : cuts) cap0 = std::min(cap0, c.a * K0 + c.b);
    push_row({{L.pg(0), 1.0}}, cap0);
    for (int i = 1; i < N; ++i)
      for (const auto& c : cuts)
        push_row({{L.pg(i), 1.0}, {L.K(i), -c.a}}, c.b);
  }

  // Soft stall rows, normalized so the slack is dimensionless.
  if (L.stall) {
    const AffineStall& st = *lin.stall;
    const double nrm = std::max({std::abs(st.Q_Tr) * P_scale,
                                 std::abs(st.R_Tr) * K_scale,
                                 std::abs(st.S_Tr), 1e-12});
    const double q = st.Q_Tr / nrm, r = st.R_Tr / nrm;
    const double rhs = (-cfg.delta - st.S_Tr) / nrm;
    push_row({{L.pr(0), q}, {L.sst(0), -1.0}}, rhs - r * K0);
    for (int i = 1; i < N; ++i)
      push_row({{L.pr(i), q}, {L.K(i), r}, {L.sst(i), -1.0}}, rhs);
  }

  // Thrust epigraph for the min-CT strategy.
  if (L.fextra) {
    const AffineThrust& th = *lin.thrust;
    push_row({{L.pr(0), th.Q_FT}, {L.fx(0), -1.0}}, -th.S_FT - th.R_FT * K0);
    for (int i = 1; i < N; ++i)
      push_row({{L.pr(i), th.Q_FT}, {L.K(i), th.R_FT}, {L.fx(i), -1.0}},
               -th.S_FT);
  }

  p.A_in.resize(row, n);
  p.A_in.setFromTriplets(At.begin(), At.end());
  p.b_in = Eigen::Map<Eigen::VectorXd>(bi.data(), row);

  // Box bounds.
  p.lb = Eigen::VectorXd::Constant(n, -kInf);
  p.ub = Eigen::VectorXd::Constant(n, kInf);
  for (int i = 0; i < N; ++i) {
    p.lb[L.pr(i)] = 0.0;
    p.lb[L.pg(i)] = 0.0;
    p.ub[L.pg(i)] = params.P_g_rated;
    p.lb[L.K(i + 1)] = params.kinetic_min();
    p.ub[L.K(i + 1)] = params.kinetic_max();
    p.lb[L.sK(i + 1)] = 0.0;
    if (L.stall) p.lb[L.sst(i)] = 0.0;
    if (L.fextra) p.lb[L.fx(i)] = 0.0;
  }
  return p;
}

HorizonPlan extract_plan(const Eigen::VectorXd& z, int N, double K0,
                         bool stall_on, bool thrust_on) {
  Layout L;
  L.N = N;
  L.stall = stall_on;
  L.fextra = thrust_on;
  if (z.size() != L.size())
    throw DimensionMismatch("extract_plan: z size mismatch");
  HorizonPlan plan;
  plan.P_r.resize(N);
  plan.P_g.resize(N);
  plan.K.resize(N + 1);
  plan.s_K.resize(N);
  plan.K[0] = K0;
  for (int i = 0; i < N; ++i) {
    plan.P_r[i] = z[L.pr(i)];
    plan.P_g[i] = z[L.pg(i)];
    plan.K[i + 1] = z[L.K(i + 1)];
    plan.s_K[i] = z[L.sK(i + 1)];
  }
  if (stall_on) {
    plan.s_stall.resize(N);
    for (int i = 0; i < N; ++i) plan.s_stall[i] = z[L.sst(i)];
  }
  if (thrust_on) {
    plan.F_extra.resize(N);
    for (int i = 0; i < N; ++i) plan.F_extra[i] = z[L.fx(i)];
  }
  return plan;
}

MpcController::MpcController(TurbineParams params, const AeroSurface* surface,
                             const PwaEnvelope* envelope, MpcConfig cfg)
    : params_(std::move(params)),
      surface_(surface),
      env_(envelope),
      cfg_(std::move(cfg)) {
  params_.validate();
  cfg_.validate();
  solver_.settings().max_iter = 4000;
}

ControlOutput MpcController::control_step(
    const Measurement& meas, std::span<const double> P_ref_horizon) {
  const int N = cfg_.horizon_steps();
  ControlOutput out;
  out.diag.pitch_authority_lost = false;

  // Expansion point nudged into the interior so the derivative stencils
  // exist even when the plant sits on a pitch or tip-speed-ratio limit.
  const auto& lg = surface_->lambda_grid();
  const auto& tg = surface_->theta_grid();
  const double theta_star =
      std::clamp(meas.theta, tg[1], tg[tg.size() - 2]);
  auto K_of_lambda = [&](double lam) {
    const double omega_g = lam * meas.v * params_.gearbox_ratio / params_.rotor_radius;
    return params_.kinetic_at(omega_g);
  };
  const double K_star =
      std::clamp(meas.K, K_of_lambda(lg[1]), K_of_lambda(lg[lg.size() - 2]));
  try {
    const TaylorCoeffs tc =
        taylor_coeffs(*surface_, params_, meas.v, K_star, theta_star);
    models_.thrust = thrust_affine(tc, params_);
    models_.stall = stall_affine(*surface_, params_, meas.v, K_star, theta_star);
  } catch (const PitchAuthorityLost&) {
    out.diag.pitch_authority_lost = true;
    ++authority_lost_count_;  // previous models stay in use
  } catch (const OutOfDomain&) {
    out.diag.pitch_authority_lost = true;
    ++authority_lost_count_;
  }

  if (!have_prev_inputs_) {
    prev_P_g_ = P_ref_horizon.empty() ? 0.0 : P_ref_horizon[0];
    prev_P_r_ = prev_P_g_ / params_.eta_g;
    have_prev_inputs_ = true;
  }
  if (!have_prev_cmd_) {
    prev_cmd_.theta_cmd = std::clamp(meas.theta, params_.theta_min, params_.theta_max);
    prev_cmd_.T_g = torque_command(
        params_, P_ref_horizon.empty() ? 0.0 : P_ref_horizon[0], meas.K);
    have_prev_cmd_ = true;
  }

  last_problem_ = build_problem(meas.K, meas.v, P_ref_horizon, cfg_, *env_,
                                models_, params_, prev_P_r_, prev_P_g_);
  const QpProblem& qp = last_problem_;

  // Warm start: previous plan shifted one step forward.
  const bool stall_on = cfg_.stall_constraint && models_.stall.has_value();
  const bool fx_on = cfg_.strategy == Strategy::MinThrust &&
                     models_.thrust.has_value() && !cfg_.thrust_quadratic;
  Eigen::VectorXd warm;
  const Eigen::VectorXd* warm_ptr = nullptr;
  if (prev_z_.size() == qp.n) {
    warm = prev_z_;
    Layout L;
    L.N = N;
    L.stall = stall_on;
    L.fextra = fx_on;
    auto shift_block = [&](auto idx_of) {
      for (int i = 0; i + 1 < N; ++i) warm[idx_of(i)] = prev_z_[idx_of(i + 1)];
    };
    shift_block([&](int i) { return L.pr(i); });
    shift_block([&](int i) { return L.pg(i); });
    shift_block([&](int i) { return L.K(i + 1); });
    shift_block([&](int i) { return L.sK(i + 1); });
    if (stall_on) shift_block([&](int i) { return L.sst(i); });
    if (fx_on) shift_block([&](int i) { return L.fx(i); });
    warm_ptr = &warm;
  }

  QpSolution sol = solver_.solve(qp, warm_ptr);
  out.diag.status = sol.status;
  out.diag.iterations = sol.iterations;
  out.diag.kkt_residual = sol.kkt_residual;

  if (sol.status != QpStatus::Optimal) {
    ++hold_count_;
    out.diag.held_previous = true;
    out.command = prev_cmd_;
    out.plan = HorizonPlan{};
    return out;
  }

  out.diag.worst_violation = validate(qp, sol.z).worst_violation;
  out.plan = extract_plan(sol.z, N, meas.K, stall_on, fx_on);
  prev_z_ = sol.z;

  // Strategy objective value (diagnostic).
  {
    const double K_scale = params_.kinetic_rated();
    double term = 0.0;
    if (cfg_.alphas[4] != 0.0)
      for (std::size_t i = 1; i < out.plan.K.size(); ++i)
        term += cfg_.alphas[4] * out.plan.K[i] / K_scale;
    if (cfg_.alphas[5] != 0.0) {
      const double K_ref = kinetic_reference(params_, cfg_, meas.v);
      for (std::size_t i = 1; i < out.plan.K.size(); ++i) {
        const double d = (out.plan.K[i] - K_ref) / K_scale;
        term += cfg_.alphas[5] * d * d;
      }
    }
    if (cfg_.alphas[6] != 0.0 && fx_on) {
      const double F_scale =
          0.5 * params_.air_density * params_.rotor_area * meas.v * meas.v;
      for (double f : out.plan.F_extra) term += cfg_.alphas[6] * f / F_scale;
    }
    out.diag.strategy_term = term;
    out.diag.stall_slack_max =
        out.plan.s_stall.empty()
            ? 0.0
            : *std::max_element(out.plan.s_stall.begin(), out.plan.s_stall.end());
  }

  out.command.theta_cmd =
      pitch_command(*surface_, params_, out.plan.P_r[0], meas.K, meas.v);
  out.command.T_g = torque_command(params_, out.plan.P_g[0], meas.K);
  prev_cmd_ = out.command;
  prev_P_r_ = out.plan.P_r[0];
  prev_P_g_ = out.plan.P_g[0];
  return out;
}

}  // namespace windmpc
