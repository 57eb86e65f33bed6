#pragma once

#include <array>
#include <filesystem>
#include <map>
#include <string>

#include "windmpc/envelope.hpp"
#include "windmpc/harness.hpp"
#include "windmpc/mpc.hpp"

namespace windmpc {

/// Minimal INI-style reader: `[section]` headers, `key = value` lines,
/// `#`/`;` comments. Sections and keys are validated against the known
/// schema; unknown keys are hard errors.
struct ConfigFile {
  std::map<std::string, std::map<std::string, std::string>> sections;
  static ConfigFile parse(const std::filesystem::path& file);
};

struct AeroOptions {
  std::string surface = "parametric";  // parametric | table
  std::filesystem::path table_file;
};

struct ScenarioOptions {
  double wind = 8.0;
  std::string wind_profile;  // optional "t:v, t:v, ..." knots
  double t_end = 600.0;
  double saturation_time = 300.0;
  std::string reference = "default";  // default | step | ramp | profile
  double ref_before = 0.0;
  double ref_after = 0.0;
  double ramp_duration = 10.0;
  std::string profile_knots;  // "t:value, ..."
  unsigned seed = 1;
  double settling_time = 60.0;
  double tracking_tol = 0.02;
};

struct OutputOptions {
  std::filesystem::path dir = "out";
  std::string qp_dump = "none";  // none | first | all
};

struct AppConfig {
  TurbineParams turbine = nrel5mw_params();
  AeroOptions aero;
  EnvelopeOptions envelope;
  std::filesystem::path envelope_cache;
  std::array<double, 7> raw_alphas = {10.0, 0.1, 0.1, 0.1, 0.1, 0.1, 0.01};
  MpcConfig mpc_base;  // strategy weights not yet masked
  ScenarioOptions scenario;
  OutputOptions output;

  /// MpcConfig for a concrete strategy with the Table-style weight masking
  /// applied; validates before returning.
  MpcConfig make_mpc(Strategy s) const;

  AeroSurface make_surface() const;
  Scenario make_scenario(const PwaEnvelope& env) const;
};

AppConfig load_config(const std::filesystem::path& file);
AppConfig default_config();

}  // namespace windmpc
