#include <filesystem>
#include <fstream>
#include <future>
#include <iostream>
#include <vector>

#include <CLI11.hpp>

#include "windmpc/config.hpp"
#include "windmpc/harness.hpp"

namespace fs = std::filesystem;
using namespace windmpc;

namespace {

struct Loaded {
  AppConfig app;
  AeroSurface surface;
  PwaEnvelope envelope;
};

Loaded load_all(const std::string& config_path) {
  AppConfig app =
      config_path.empty() ? default_config() : load_config(config_path);
  AeroSurface surface = app.make_surface();
  PwaEnvelope env;
  if (!app.envelope_cache.empty()) {
    // Reuse the cache only while the surface/params hash still matches.
    const auto key = envelope_cache_key(app.turbine, surface, app.envelope);
    if (auto cached = load_envelope(app.envelope_cache, key)) {
      env = std::move(*cached);
    } else {
      env = build_envelope(app.turbine, surface, app.envelope);
      save_envelope(env, app.envelope_cache);
    }
  } else {
    env = build_envelope(app.turbine, surface, app.envelope);
  }
  return {std::move(app), std::move(surface), std::move(env)};
}

RunOptions run_options(const AppConfig& app, const fs::path& dir) {
  RunOptions opts;
  opts.qp_dump_dir = dir;
  opts.qp_dump_mode =
      app.output.qp_dump == "all" ? 2 : (app.output.qp_dump == "first" ? 1 : 0);
  return opts;
}

int run_one(const Loaded& in, Strategy strat, const fs::path& dir) {
  fs::create_directories(dir);
  const MpcConfig cfg = in.app.make_mpc(strat);
  const Scenario scenario = in.app.make_scenario(in.envelope);
  const RunResult res = run_scenario(scenario, in.app.turbine, in.surface,
                                     in.envelope, cfg, run_options(in.app, dir));
  write_run_csv(dir / "run.csv", res.series);
  write_diagnostics_csv(dir / "diagnostics.csv", res.diagnostics);
  write_metrics_csv(dir / "metrics.csv", {{to_string(strat), res.metrics}});
  std::cout << to_string(strat)
            << ": tracking after saturation = "
            << format_double(res.metrics.tracking_time_after_saturation)
            << " s, mean K = " << format_double(res.metrics.mean_K_before)
            << " J, mean thrust = "
            << format_double(res.metrics.mean_thrust_before) << " N\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App cli{"Convex MPC down-regulation of a single wind turbine"};
  cli.require_subcommand(1);

  std::string config_path;
  std::string strategy = "";
  std::string out_dir = "out";

  auto* sim = cli.add_subcommand("simulate", "Run one closed-loop scenario");
  sim->add_option("--config", config_path, "Configuration file");
  sim->add_option("--strategy", strategy, "Override the configured strategy");
  sim->add_option("--out", out_dir, "Output directory");

  std::string batch_strategies = "all";
  auto* batch = cli.add_subcommand("batch", "Run several strategies");
  batch->add_option("--config", config_path, "Configuration file");
  batch->add_option("--strategies", batch_strategies,
                    "'all' or comma-separated strategy names");
  batch->add_option("--out", out_dir, "Output directory");

  std::string env_out = "envelope.txt";
  auto* envc = cli.add_subcommand("envelope", "Precompute the PWA envelope");
  envc->add_option("--config", config_path, "Configuration file");
  envc->add_option("--out", env_out, "Envelope cache file");

  std::string run_dir, figure = "power";
  auto* plot = cli.add_subcommand("plot-data", "Emit long-format plot files");
  plot->add_option("--run", run_dir, "Run directory containing run.csv")
      ->required();
  plot->add_option("--figure", figure, "power | stallmap | loads");
  plot->add_option("--config", config_path, "Configuration file (stallmap)");

  CLI11_PARSE(cli, argc, argv);

  try {
    if (sim->parsed()) {
      const Loaded in = load_all(config_path);
      const Strategy s = strategy.empty() ? in.app.mpc_base.strategy
                                          : strategy_from_string(strategy);
      return run_one(in, s, out_dir);
    }
    if (batch->parsed()) {
      const Loaded in = load_all(config_path);
      std::vector<Strategy> strategies;
      if (batch_strategies == "all") {
        strategies = {Strategy::MaxKineticEnergy, Strategy::MinThrust,
                      Strategy::ConstantTipSpeedRatio,
                      Strategy::ConstantRotorSpeed};
      } else {
        std::stringstream ss(batch_strategies);
        std::string item;
        while (std::getline(ss, item, ','))
          strategies.push_back(strategy_from_string(item));
      }
      fs::create_directories(out_dir);
      std::vector<std::future<SimMetrics>> futs;
      for (Strategy s : strategies)
        futs.push_back(std::async(std::launch::async, [&, s] {
          const fs::path dir = fs::path(out_dir) / to_string(s);
          fs::create_directories(dir);
          const MpcConfig cfg = in.app.make_mpc(s);
          const Scenario scenario = in.app.make_scenario(in.envelope);
          const RunResult res =
              run_scenario(scenario, in.app.turbine, in.surface, in.envelope,
                           cfg, run_options(in.app, dir));
          write_run_csv(dir / "run.csv", res.series);
          write_diagnostics_csv(dir / "diagnostics.csv", res.diagnostics);
          return res.metrics;
        }));
      std::vector<std::pair<std::string, SimMetrics>> rows;
      for (std::size_t i = 0; i < strategies.size(); ++i)
        rows.emplace_back(to_string(strategies[i]), futs[i].get());
      write_metrics_csv(fs::path(out_dir) / "metrics.csv", rows);
      for (const auto& [name, m] : rows)
        std::cout << name << ": tracking after saturation = "
                  << format_double(m.tracking_time_after_saturation)
                  << " s, mean K = " << format_double(m.mean_K_before)
                  << " J, mean thrust = "
                  << format_double(m.mean_thrust_before) << " N\n";
      return 0;
    }
    if (envc->parsed()) {
      AppConfig app =
          config_path.empty() ? default_config() : load_config(config_path);
      const AeroSurface surface = app.make_surface();
      const PwaEnvelope env = build_envelope(app.turbine, surface, app.envelope);
      save_envelope(env, env_out);
      std::cout << "envelope written to " << env_out << " ("
                << env.wind_grid.size() << " wind speeds)\n";
      return 0;
    }
    if (plot->parsed()) {
      const TimeSeries s = read_run_csv(fs::path(run_dir) / "run.csv");
      const fs::path out = fs::path(run_dir) / ("figure_" + figure + ".csv");
      std::ofstream f(out);
      if (!f) throw Error("cannot write " + out.string());
      if (figure == "power") {
        f << "t,series,value\n";
        for (std::size_t i = 0; i < s.size(); ++i) {
          f << format_double(s.t[i]) << ",P_g," << format_double(s.P_g[i]) << "\n";
          f << format_double(s.t[i]) << ",P_ref," << format_double(s.P_ref[i]) << "\n";
          f << format_double(s.t[i]) << ",P_av_hat,"
            << format_double(s.P_av_hat[i]) << "\n";
        }
      } else if (figure == "loads") {
        f << "t,series,value\n";
        for (std::size_t i = 0; i < s.size(); ++i)
          f << format_double(s.t[i]) << ",F_T," << format_double(s.F_T[i]) << "\n";
      } else if (figure == "stallmap") {
        AppConfig app =
            config_path.empty() ? default_config() : load_config(config_path);
        const AeroSurface surface = app.make_surface();
        f << "kind,lambda,theta,value\n";
        const auto& lg = surface.lambda_grid();
        const auto& tg = surface.theta_grid();
        for (std::size_t i = 1; i + 1 < lg.size(); i += 2)
          for (std::size_t j = 1; j + 1 < tg.size(); j += 2) {
            const auto d = surface.partials(lg[i], tg[j]);
            f << "grid," << format_double(lg[i]) << ',' << format_double(tg[j])
              << ',' << format_double(d.dcq_dtheta) << "\n";
          }
        for (std::size_t i = 0; i < s.size(); ++i) {
          const double lam = app.turbine.tip_speed_ratio(s.omega_g[i], s.v[i]);
          f << "trajectory," << format_double(lam) << ','
            << format_double(s.theta[i]) << ',' << format_double(s.t[i]) << "\n";
        }
      } else {
        throw Error("unknown figure kind: " + figure);
      }
      std::cout << "wrote " << out << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
