#include "windmpc/harness.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

namespace windmpc {

std::string format_double(double v) {
  char buf[32];
  auto [p, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  (void)ec;
  return std::string(buf, p);
}

double Schedule::value(double t) const {
  if (knots.empty()) throw Error("Schedule: empty");
  if (t <= knots.front().first) return knots.front().second;
  if (t >= knots.back().first) return knots.back().second;
  // Right-continuous at duplicated knot times.
  std::size_t i = 0;
  while (i + 1 < knots.size() && knots[i + 1].first <= t) ++i;
  if (i + 1 == knots.size()) return knots.back().second;
  const auto& [t0, v0] = knots[i];
  const auto& [t1, v1] = knots[i + 1];
  if (t1 <= t0) return v1;
  const double w = (t - t0) / (t1 - t0);
  return (1.0 - w) * v0 + w * v1;
}

void Schedule::validate() const {
  if (knots.empty()) throw ConfigError("schedule: needs at least one knot");
  for (std::size_t i = 1; i < knots.size(); ++i)
    if (knots[i].first < knots[i - 1].first)
      throw ConfigError("schedule: knot times must be non-decreasing");
}

Schedule reference_signal(RefKind kind, const RefParams& rp) {
  Schedule s;
  switch (kind) {
    case RefKind::Step:
      s.knots = {{0.0, rp.level_before},
                 {rp.switch_time, rp.level_before},
                 {rp.switch_time, rp.level_after},
                 {rp.t_end, rp.level_after}};
      break;
    case RefKind::Ramp:
      if (!(rp.ramp_duration > 0.0))
        throw ConfigError("reference_signal: ramp_duration must be positive");
      s.knots = {{0.0, rp.level_before},
                 {rp.switch_time, rp.level_before},
                 {rp.switch_time + rp.ramp_duration, rp.level_after},
                 {rp.t_end, rp.level_after}};
      break;
    case RefKind::Profile:
      s.knots = rp.knots;
      break;
  }
  s.validate();
  return s;
}

Schedule default_reference(const TurbineParams& params, const PwaEnvelope& env,
                           double wind, double saturation_time, double t_end,
                           double ramp_duration) {
  // Peak of the PWA envelope at this wind speed, scanned over K.
  double p_max = 0.0;
  const int samples = 2000;
  for (int i = 0; i <= samples; ++i) {
    const double K = env.K_min + (env.K_max - env.K_min) * i / samples;
    p_max = std::max(p_max, eval_envelope(env, wind, K));
  }
  if (!(p_max > 0.0))
    throw Error("default_reference: envelope peak not positive");
  RefParams rp;
  rp.level_before = std::min(0.75 * p_max, params.P_g_rated);
  rp.level_after = std::min(1.25 * p_max, params.P_g_rated);
  rp.switch_time = saturation_time;
  rp.ramp_duration = ramp_duration;
  rp.t_end = t_end;
  return reference_signal(RefKind::Ramp, rp);
}

void Scenario::validate(const TurbineParams& params) const {
  wind.validate();
  p_ref.validate();
  if (!(saturation_time > 0.0) || !(t_end > saturation_time))
    throw ConfigError("scenario: need t_end > saturation_time > 0");
  for (const auto& [t, v] : p_ref.knots)
    if (v < 0.0 || v > params.P_g_rated + 1e-6)
      throw ConfigError("scenario: p_ref must stay within [0, P_g_rated]");
  for (const auto& [t, v] : wind.knots)
    if (!(v > 0.0)) throw ConfigError("scenario: wind must be positive");
  if (!(settling_time >= 0.0) || settling_time >= saturation_time)
    throw ConfigError("scenario: settling_time must be in [0, saturation_time)");
  if (!(tracking_tol > 0.0)) throw ConfigError("scenario: tracking_tol > 0");
}

RunResult run_scenario(const Scenario& scenario, const TurbineParams& params,
                       const AeroSurface& surface, const PwaEnvelope& env,
                       const MpcConfig& cfg, const RunOptions& opts) {
  params.validate();
  cfg.validate();
  scenario.validate(params);
  const int N = cfg.horizon_steps();
  const double dt = opts.plant_dt;
  const int sub = static_cast<int>(std::round(cfg.Ts / dt));
  if (sub < 1 || std::abs(sub * dt - cfg.Ts) > 1e-9)
    throw ConfigError("run_scenario: Ts must be an integer multiple of plant dt");
  const int n_ctrl = static_cast<int>(std::round(scenario.t_end / cfg.Ts));

  MpcController controller(params, &surface, &env, cfg);

  // Initial condition: tip-speed-ratio-optimal speed, pitch consistent with
  // the initial reference.
  const double v0 = scenario.wind.value(0.0);
  double omega0 = cfg.lambda_opt * v0 / params.rotor_radius * params.gearbox_ratio;
  omega0 = std::clamp(omega0, params.omega_g_min, params.omega_g_rated);
  const double K0 = params.kinetic_at(omega0);
  const double pref0 = scenario.p_ref.value(0.0);
  PlantState state;
  state.omega_g = omega0;
  state.theta = pitch_command(surface, params, pref0 / params.eta_g, K0, v0);
  state.t = 0.0;

  RunResult out;
  auto& s = out.series;
  auto reserve = [&](auto& vec) { vec.reserve(n_ctrl + 1); };
  reserve(s.t); reserve(s.v); reserve(s.omega_g); reserve(s.K);
  reserve(s.theta); reserve(s.T_g); reserve(s.theta_cmd); reserve(s.P_r);
  reserve(s.P_g); reserve(s.P_ref); reserve(s.P_av_hat); reserve(s.F_T);
  reserve(s.dtr_dtheta); reserve(s.e_balance);

  std::vector<double> horizon(N);
  double e_balance = 0.0;  // trapezoid of (P_r - P_g/eta) at plant rate
  ActuatorCommand cmd{};

  auto record = [&](double t, double v, const ActuatorCommand& c, double pref,
                    double pav) {
    const double K = kinetic_energy(params, state.omega_g);
    s.t.push_back(t);
    s.v.push_back(v);
    s.omega_g.push_back(state.omega_g);
    s.K.push_back(K);
    s.theta.push_back(state.theta);
    s.T_g.push_back(c.T_g);
    s.theta_cmd.push_back(c.theta_cmd);
    s.P_r.push_back(rotor_power(params, surface, v, state.omega_g, state.theta));
    s.P_g.push_back(generator_power(params, c.T_g, state.omega_g));
    s.P_ref.push_back(pref);
    s.P_av_hat.push_back(pav);
    s.F_T.push_back(thrust(params, surface, v, state.omega_g, state.theta));
    // Stall indicator on the nonlinear surface; clamp into the interior so
    // the derivative stencil exists at grid edges.
    {
      const auto& lg = surface.lambda_grid();
      const auto& tg = surface.theta_grid();
      const double lam = std::clamp(params.tip_speed_ratio(state.omega_g, v),
                                    lg[1], lg[lg.size() - 2]);
      const double th = std::clamp(state.theta, tg[1], tg[tg.size() - 2]);
      s.dtr_dtheta.push_back(
          surface.stall_margin(params, v, lam, th).dtr_dtheta);
    }
    s.e_balance.push_back(e_balance);
  };

  for (int k = 0; k < n_ctrl; ++k) {
    const double t = k * cfg.Ts;
    const double v = scenario.wind.value(t);
    Measurement meas{kinetic_energy(params, state.omega_g), state.theta, v};
    for (int i = 0; i < N; ++i)
      horizon[i] = scenario.p_ref.value(t + i * cfg.Ts);

    const ControlOutput co = controller.control_step(meas, horizon);
    cmd = co.command;

    if (opts.qp_dump_mode == 2 || (opts.qp_dump_mode == 1 && k == 0))
      dump_problem(controller.last_problem(),
                   opts.qp_dump_dir / ("qp_step_" + std::to_string(k) + ".mtx"));

    record(t, v, cmd, horizon[0], eval_envelope(env, v, meas.K));
    out.diagnostics.push_back({t, static_cast<int>(co.diag.status),
                               co.diag.iterations, co.diag.kkt_residual,
                               co.diag.worst_violation, co.diag.strategy_term,
                               co.diag.stall_slack_max,
                               co.diag.pitch_authority_lost ? 1 : 0,
                               co.diag.held_previous ? 1 : 0});

    // Plant integration over the control interval under the held command.
    double flow_prev =
        rotor_power(params, surface, v, state.omega_g, state.theta) -
        cmd.T_g * state.omega_g;  // P_r - P_g/eta
    for (int i = 0; i < sub; ++i) {
      const double v_sub = scenario.wind.value(t + i * dt);
      state = step(params, surface, state, cmd, v_sub, dt);
      const double flow =
          rotor_power(params, surface, v_sub, state.omega_g, state.theta) -
          cmd.T_g * state.omega_g;
      e_balance += 0.5 * dt * (flow_prev + flow);
      flow_prev = flow;
    }
  }
  {
    const double t = n_ctrl * cfg.Ts;
    const double v = scenario.wind.value(t);
    record(t, v, cmd, scenario.p_ref.value(t),
           eval_envelope(env, v, kinetic_energy(params, state.omega_g)));
  }

  out.metrics = summarize(out.series, params, scenario.saturation_time,
                          scenario.settling_time, scenario.tracking_tol);
  return out;
}

double tracking_time_after_saturation(const TimeSeries& series,
                                      double saturation_time, double tol) {
  double tau = 0.0;
  bool seen = false;
  for (std::size_t i = 0; i < series.size(); ++i) {
    if (series.t[i] < saturation_time) continue;
    const double ref = series.P_ref[i];
    const double rel =
        std::abs(series.P_g[i] - ref) / std::max(std::abs(ref), 1e-12);
    if (rel > tol) return seen ? series.t[i] - saturation_time : 0.0;
    seen = true;
    tau = series.t[i] - saturation_time;
  }
  return tau;
}

SimMetrics summarize(const TimeSeries& series, const TurbineParams& params,
                     double saturation_time, double settling_time,
                     double tracking_tol) {
  if (series.size() == 0) throw Error("summarize: empty series");
  SimMetrics m;
  double sumK = 0.0, sumF = 0.0, sumSq = 0.0;
  int count = 0;
  for (std::size_t i = 0; i < series.size(); ++i) {
    const double t = series.t[i];
    if (t >= settling_time && t < saturation_time) {
      sumK += series.K[i];
      sumF += series.F_T[i];
      const double e = series.P_g[i] - series.P_ref[i];
      sumSq += e * e;
      ++count;
    }
    const double lo = params.omega_g_min * (1.0 - 0.005);
    const double hi = params.omega_g_max * (1.0 + 0.005);
    if (series.omega_g[i] < lo || series.omega_g[i] > hi)
      ++m.constraint_violation_count;
  }
  if (count > 0) {
    m.mean_K_before = sumK / count;
    m.mean_thrust_before = sumF / count;
    m.tracking_rmse_before = std::sqrt(sumSq / count);
  }
  m.tracking_time_after_saturation =
      tracking_time_after_saturation(series, saturation_time, tracking_tol);
  return m;
}

namespace {
const char* kRunHeader =
    "t,v,omega_g,K,theta,T_g,theta_cmd,P_r,P_g,P_ref,P_av_hat,F_T,"
    "dtr_dtheta,e_balance";
}

void write_run_csv(const std::filesystem::path& file, const TimeSeries& s) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << kRunHeader << "\n";
  for (std::size_t i = 0; i < s.size(); ++i) {
    out << format_double(s.t[i]) << ',' << format_double(s.v[i]) << ','
        << format_double(s.omega_g[i]) << ',' << format_double(s.K[i]) << ','
        << format_double(s.theta[i]) << ',' << format_double(s.T_g[i]) << ','
        << format_double(s.theta_cmd[i]) << ',' << format_double(s.P_r[i])
        << ',' << format_double(s.P_g[i]) << ',' << format_double(s.P_ref[i])
        << ',' << format_double(s.P_av_hat[i]) << ','
        << format_double(s.F_T[i]) << ',' << format_double(s.dtr_dtheta[i])
        << ',' << format_double(s.e_balance[i]) << "\n";
  }
}

void write_diagnostics_csv(const std::filesystem::path& file,
                           const std::vector<DiagnosticsRow>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "t,status,iterations,kkt_residual,worst_violation,strategy_term,"
         "stall_slack_max,pitch_authority_lost,held_previous\n";
  for (const auto& r : rows) {
    out << format_double(r.t) << ',' << r.status << ',' << r.iterations << ','
        << format_double(r.kkt_residual) << ','
        << format_double(r.worst_violation) << ','
        << format_double(r.strategy_term) << ','
        << format_double(r.stall_slack_max) << ',' << r.pitch_authority_lost
        << ',' << r.held_previous << "\n";
  }
}

void write_metrics_csv(
    const std::filesystem::path& file,
    const std::vector<std::pair<std::string, SimMetrics>>& rows) {
  std::ofstream out(file);
  if (!out) throw Error("cannot write " + file.string());
  out << "strategy,mean_K_before,mean_thrust_before,"
         "tracking_time_after_saturation,tracking_rmse_before,"
         "constraint_violation_count\n";
  for (const auto& [name, m] : rows) {
    out << name << ',' << format_double(m.mean_K_before) << ','
        << format_double(m.mean_thrust_before) << ','
        << format_double(m.tracking_time_after_saturation) << ','
        << format_double(m.tracking_rmse_before) << ','
        << m.constraint_violation_count << "\n";
  }
}

TimeSeries read_run_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw Error("cannot read " + file.string());
  std::string line;
  if (!std::getline(in, line) || line != kRunHeader)
    throw Error("run csv: unexpected header in " + file.string());
  TimeSeries s;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> vals;
    while (std::getline(ss, cell, ',')) vals.push_back(std::stod(cell));
    if (vals.size() != 14) throw Error("run csv: bad row in " + file.string());
    int c = 0;
    s.t.push_back(vals[c++]);
    s.v.push_back(vals[c++]);
    s.omega_g.push_back(vals[c++]);
    s.K.push_back(vals[c++]);
    s.theta.push_back(vals[c++]);
    s.T_g.push_back(vals[c++]);
    s.theta_cmd.push_back(vals[c++]);
    s.P_r.push_back(vals[c++]);
    s.P_g.push_back(vals[c++]);
    s.P_ref.push_back(vals[c++]);
    s.P_av_hat.push_back(vals[c++]);
    s.F_T.push_back(vals[c++]);
    s.dtr_dtheta.push_back(vals[c++]);
    s.e_balance.push_back(vals[c++]);
  }
  return s;
}

}  // namespace windmpc
