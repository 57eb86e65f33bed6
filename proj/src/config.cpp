#include "windmpc/config.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace windmpc {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  auto e = s.find_last_not_of(" \t\r\n");
  return b == std::string::npos ? "" : s.substr(b, e - b + 1);
}

double to_double(const std::string& v, const std::string& key) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError("config: bad numeric value '" + v + "' for key " + key);
  }
}

bool to_bool(const std::string& v, const std::string& key) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("config: bad boolean value '" + v + "' for key " + key);
}

std::vector<std::pair<double, double>> parse_knots(const std::string& text,
                                                   const std::string& key) {
  std::vector<std::pair<double, double>> knots;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    const auto colon = item.find(':');
    if (colon == std::string::npos)
      throw ConfigError("config: knot '" + item + "' needs t:value in " + key);
    knots.emplace_back(to_double(trim(item.substr(0, colon)), key),
                       to_double(trim(item.substr(colon + 1)), key));
  }
  if (knots.empty())
    throw ConfigError("config: no knots parsed from " + key);
  return knots;
}

// Schema: known keys per section; anything else is rejected.
const std::map<std::string, std::set<std::string>> kSchema = {
    {"turbine",
     {"J", "gearbox_ratio", "rotor_radius", "air_density", "eta_g",
      "theta_min", "theta_max", "omega_g_min", "omega_g_max", "omega_g_rated",
      "T_g_max", "P_g_rated", "theta_rate_max"}},
    {"aero", {"surface", "table_file"}},
    {"envelope",
     {"wind_min", "wind_max", "wind_step", "segments", "fit_samples",
      "conservative_inner", "cache_file"}},
    {"mpc",
     {"alphas", "horizon", "sampling_time", "delta", "strategy", "lambda_opt",
      "omega_ref_const", "stall_constraint", "stall_penalty",
      "thrust_quadratic", "torque_cuts"}},
    {"scenario",
     {"wind", "wind_profile", "t_end", "saturation_time", "reference",
      "ref_before", "ref_after", "ramp_duration", "profile_knots", "seed",
      "settling_time", "tracking_tol"}},
    {"output", {"dir", "qp_dump"}},
};

}  // namespace

ConfigFile ConfigFile::parse(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file: " + file.string());
  ConfigFile cf;
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto comment = line.find_first_of("#;");
    if (comment != std::string::npos) line = line.substr(0, comment);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']')
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (!kSchema.count(section))
        throw ConfigError("config line " + std::to_string(lineno) +
                          ": unknown section [" + section + "]");
      cf.sections[section];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": expected key = value");
    if (section.empty())
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": key outside any section");
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (!kSchema.at(section).count(key))
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": unknown key '" + key + "' in [" + section + "]");
    if (cf.sections[section].count(key))
      throw ConfigError("config line " + std::to_string(lineno) +
                        ": duplicate key '" + key + "'");
    cf.sections[section][key] = val;
  }
  return cf;
}

MpcConfig AppConfig::make_mpc(Strategy s) const {
  MpcConfig cfg = mpc_base;
  cfg.strategy = s;
  cfg.alphas = mask_strategy_weights(raw_alphas, s);
  cfg.validate();
  return cfg;
}

AeroSurface AppConfig::make_surface() const {
  if (aero.surface == "parametric") return AeroSurface::parametric_default();
  if (aero.surface == "table") {
    if (aero.table_file.empty())
      throw ConfigError("config: [aero] table_file required for surface = table");
    return AeroSurface::load_table(aero.table_file);
  }
  throw ConfigError("config: [aero] surface must be parametric or table");
}

Scenario AppConfig::make_scenario(const PwaEnvelope& env) const {
  Scenario sc;
  sc.t_end = scenario.t_end;
  sc.saturation_time = scenario.saturation_time;
  sc.seed = scenario.seed;
  sc.settling_time = scenario.settling_time;
  sc.tracking_tol = scenario.tracking_tol;
  if (!scenario.wind_profile.empty()) {
    sc.wind.knots = parse_knots(scenario.wind_profile, "[scenario] wind_profile");
  } else {
    sc.wind.knots = {{0.0, scenario.wind}, {scenario.t_end, scenario.wind}};
  }
  RefParams rp;
  rp.switch_time = scenario.saturation_time;
  rp.ramp_duration = scenario.ramp_duration;
  rp.t_end = scenario.t_end;
  rp.level_before = scenario.ref_before;
  rp.level_after = scenario.ref_after;
  if (scenario.reference == "default") {
    sc.p_ref = default_reference(turbine, env, scenario.wind,
                                 scenario.saturation_time, scenario.t_end,
                                 scenario.ramp_duration);
  } else if (scenario.reference == "step") {
    sc.p_ref = reference_signal(RefKind::Step, rp);
  } else if (scenario.reference == "ramp") {
    sc.p_ref = reference_signal(RefKind::Ramp, rp);
  } else if (scenario.reference == "profile") {
    rp.knots = parse_knots(scenario.profile_knots, "[scenario] profile_knots");
    sc.p_ref = reference_signal(RefKind::Profile, rp);
  } else {
    throw ConfigError("config: [scenario] reference must be one of "
                      "default/step/ramp/profile");
  }
  sc.validate(turbine);
  return sc;
}

AppConfig default_config() { return AppConfig{}; }

AppConfig load_config(const std::filesystem::path& file) {
  const ConfigFile cf = ConfigFile::parse(file);
  AppConfig app;
  auto get = [&](const std::string& sec, const std::string& key,
                 auto&& setter) {
    auto s = cf.sections.find(sec);
    if (s == cf.sections.end()) return;
    auto k = s->second.find(key);
    if (k == s->second.end()) return;
    setter(k->second, sec + "." + key);
  };
  auto num = [&](const std::string& sec, const std::string& key, double& out) {
    get(sec, key, [&](const std::string& v, const std::string& kk) {
      out = to_double(v, kk);
    });
  };
  auto str = [&](const std::string& sec, const std::string& key,
                 std::string& out) {
    get(sec, key, [&](const std::string& v, const std::string&) { out = v; });
  };
  auto boolean = [&](const std::string& sec, const std::string& key, bool& out) {
    get(sec, key, [&](const std::string& v, const std::string& kk) {
      out = to_bool(v, kk);
    });
  };

  TurbineParams& t = app.turbine;
  num("turbine", "J", t.J);
  num("turbine", "gearbox_ratio", t.gearbox_ratio);
  get("turbine", "rotor_radius", [&](const std::string& v, const std::string& kk) {
    t.rotor_radius = to_double(v, kk);
    t.rotor_area = std::numbers::pi * t.rotor_radius * t.rotor_radius;
  });
  num("turbine", "air_density", t.air_density);
  num("turbine", "eta_g", t.eta_g);
  num("turbine", "theta_min", t.theta_min);
  num("turbine", "theta_max", t.theta_max);
  num("turbine", "omega_g_min", t.omega_g_min);
  num("turbine", "omega_g_max", t.omega_g_max);
  num("turbine", "omega_g_rated", t.omega_g_rated);
  num("turbine", "T_g_max", t.T_g_max);
  num("turbine", "P_g_rated", t.P_g_rated);
  num("turbine", "theta_rate_max", t.theta_rate_max);
  t.validate();

  str("aero", "surface", app.aero.surface);
  get("aero", "table_file", [&](const std::string& v, const std::string&) {
    app.aero.table_file = v;
  });

  num("envelope", "wind_min", app.envelope.wind_min);
  num("envelope", "wind_max", app.envelope.wind_max);
  num("envelope", "wind_step", app.envelope.wind_step);
  get("envelope", "segments", [&](const std::string& v, const std::string& kk) {
    app.envelope.segments = static_cast<int>(to_double(v, kk));
  });
  get("envelope", "fit_samples", [&](const std::string& v, const std::string& kk) {
    app.envelope.fit_samples = static_cast<int>(to_double(v, kk));
  });
  boolean("envelope", "conservative_inner", app.envelope.conservative_inner);
  get("envelope", "cache_file", [&](const std::string& v, const std::string&) {
    app.envelope_cache = v;
  });

  get("mpc", "alphas", [&](const std::string& v, const std::string& kk) {
    std::istringstream ss(v);
    for (int i = 0; i < 7; ++i)
      if (!(ss >> app.raw_alphas[i]))
        throw ConfigError("config: " + kk + " needs 7 numbers");
    double extra;
    if (ss >> extra) throw ConfigError("config: " + kk + " needs exactly 7 numbers");
  });
  num("mpc", "horizon", app.mpc_base.T);
  num("mpc", "sampling_time", app.mpc_base.Ts);
  num("mpc", "delta", app.mpc_base.delta);
  get("mpc", "strategy", [&](const std::string& v, const std::string&) {
    app.mpc_base.strategy = strategy_from_string(v);
  });
  num("mpc", "lambda_opt", app.mpc_base.lambda_opt);
  num("mpc", "omega_ref_const", app.mpc_base.omega_ref_const);
  boolean("mpc", "stall_constraint", app.mpc_base.stall_constraint);
  num("mpc", "stall_penalty", app.mpc_base.stall_penalty);
  boolean("mpc", "thrust_quadratic", app.mpc_base.thrust_quadratic);
  get("mpc", "torque_cuts", [&](const std::string& v, const std::string& kk) {
    app.mpc_base.torque_cuts = static_cast<int>(to_double(v, kk));
  });

  num("scenario", "wind", app.scenario.wind);
  str("scenario", "wind_profile", app.scenario.wind_profile);
  num("scenario", "t_end", app.scenario.t_end);
  num("scenario", "saturation_time", app.scenario.saturation_time);
  str("scenario", "reference", app.scenario.reference);
  num("scenario", "ref_before", app.scenario.ref_before);
  num("scenario", "ref_after", app.scenario.ref_after);
  num("scenario", "ramp_duration", app.scenario.ramp_duration);
  str("scenario", "profile_knots", app.scenario.profile_knots);
  get("scenario", "seed", [&](const std::string& v, const std::string& kk) {
    app.scenario.seed = static_cast<unsigned>(to_double(v, kk));
  });
  num("scenario", "settling_time", app.scenario.settling_time);
  num("scenario", "tracking_tol", app.scenario.tracking_tol);

  get("output", "dir", [&](const std::string& v, const std::string&) {
    app.output.dir = v;
  });
  str("output", "qp_dump", app.output.qp_dump);
  if (app.output.qp_dump != "none" && app.output.qp_dump != "first" &&
      app.output.qp_dump != "all")
    throw ConfigError("config: [output] qp_dump must be none/first/all");

  return app;
}

}  // namespace windmpc
