#include <cstdint>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "croa/cli_io.hpp"

namespace {

using namespace croa;

constexpr int kExitOk = 0;
constexpr int kExitValidation = 2;
constexpr int kExitSolver = 3;

PlannerConfig resolve_config(const std::string& config_path) {
  PlannerConfig cfg;
  if (!config_path.empty()) cfg = load_config(config_path);
  return cfg;
}

int cmd_run(const std::string& scenario_path, const std::string& planner,
            std::uint64_t seed, const std::string& out_dir, int max_steps,
            const std::string& config_path) {
  RunSpec spec;
  spec.scenario_path = scenario_path;
  spec.planners = {planner_from_name(planner)};
  spec.seeds = {seed};
  spec.config = resolve_config(config_path);
  spec.output_dir = out_dir;
  spec.max_steps = max_steps;
  const ExperimentSummary summary = run_experiment(spec);
  const RunSummaryRow& row = summary.rows.front();
  if (row.failed) {
    std::cerr << "run failed (seed " << row.seed << "): " << row.error
              << "\n";
    return kExitSolver;
  }
  // Plot products for the single run.
  std::vector<FrameRecord> records;
  {
    std::ifstream in(summary.frame_log_paths.front());
    std::string line;
    std::getline(in, line);  // meta line
    while (std::getline(in, line))
      if (!line.empty()) records.push_back(frame_from_jsonl(line));
  }
  emit_plot_data(records, out_dir + "/" + planner + "_seed" +
                              std::to_string(seed));
  const Metrics& m = row.metrics;
  std::cout << "planner=" << planner << " seed=" << seed
            << " frames=" << m.total_frames
            << " occlusion_ratio=" << format_double(m.occlusion_ratio)
            << " min_clearance_m="
            << format_double(m.min_clearance_overall)
            << (m.time_to_target
                    ? " time_to_target_s=" + format_double(*m.time_to_target)
                    : std::string(" time_to_target_s=none"))
            << "\n";
  return kExitOk;
}

int cmd_compare(const std::string& scenario_path,
                const std::vector<std::string>& planners,
                const std::vector<std::uint64_t>& seeds,
                const std::string& out_dir, int max_steps,
                const std::string& config_path, int threads) {
  RunSpec spec;
  spec.scenario_path = scenario_path;
  for (const auto& p : planners) spec.planners.push_back(planner_from_name(p));
  spec.seeds = seeds;
  spec.config = resolve_config(config_path);
  spec.output_dir = out_dir;
  spec.max_steps = max_steps;
  spec.threads = threads;
  const ExperimentSummary summary = run_experiment(spec);
  std::cout << "summary: " << summary.summary_csv_path << " ("
            << summary.rows.size() << " runs, " << summary.failed_runs()
            << " failed)\n";
  if (summary.failed_runs() > 0) {
    for (const auto& row : summary.rows)
      if (row.failed)
        std::cerr << "failed: planner=" << planner_name(row.planner)
                  << " seed=" << row.seed << " error=" << row.error << "\n";
    return kExitSolver;
  }
  return kExitOk;
}

int cmd_occlusion_field(const std::string& scenario_path,
                        const std::string& out_path, double x_min,
                        double x_max, double y_min, double y_max, double step,
                        int samples, std::uint64_t seed) {
  const Scenario sc = load_scenario(scenario_path);
  const SampleSet set = draw_samples(sc.target_belief, samples, seed);
  std::vector<OcclusionGeom> geoms;
  for (const auto& ob : sc.obstacles) geoms.push_back(occlusion_geom(ob));
  std::ofstream out(out_path, std::ios::binary);
  if (!out) {
    std::cerr << "cannot open " << out_path << "\n";
    return kExitValidation;
  }
  out << "x_m,y_m,occlusion_probability\n";
  for (double y = y_min; y <= y_max + 1e-12; y += step)
    for (double x = x_min; x <= x_max + 1e-12; x += step)
      out << format_double(x) << "," << format_double(y) << ","
          << format_double(occlusion_probability(Vec2(x, y), set, geoms))
          << "\n";
  std::cout << "wrote " << out_path << "\n";
  return kExitOk;
}

int cmd_validate(const std::string& scenario_path) {
  const Scenario sc = load_scenario(scenario_path);
  std::cout << scenario_path << ": ok (" << sc.obstacles.size()
            << " obstacles, target area "
            << format_double(sc.target_truth.area()) << " m^2)\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-aware receding-horizon planning toolkit"};
  app.require_subcommand(1);

  std::string scenario_path, out_dir = "out", config_path, planner = "croa";
  std::vector<std::string> planners = {"croa", "ompc", "tracking", "pf"};
  std::uint64_t seed = 1;
  std::vector<std::uint64_t> seeds;
  int max_steps = 0, threads = 1, field_samples = 500;
  double x_min = 0, x_max = 40, y_min = -10, y_max = 10, grid_step = 0.5;

  auto* run_cmd = app.add_subcommand("run", "single closed-loop run");
  run_cmd->add_option("--scenario", scenario_path, "scenario JSON")
      ->required();
  run_cmd->add_option("--planner", planner, "croa|ompc|tracking|pf");
  run_cmd->add_option("--seed", seed, "run seed");
  run_cmd->add_option("--out", out_dir, "output directory");
  run_cmd->add_option("--max-steps", max_steps, "frame cap (0 = scenario)");
  run_cmd->add_option("--config", config_path, "planner config JSON");

  auto* cmp_cmd = app.add_subcommand("compare", "multi-planner batch");
  cmp_cmd->add_option("--scenario", scenario_path, "scenario JSON")
      ->required();
  cmp_cmd->add_option("--planners", planners, "planner list");
  cmp_cmd->add_option("--seeds", seeds, "seed list (default 1..20)");
  cmp_cmd->add_option("--out", out_dir, "output directory");
  cmp_cmd->add_option("--max-steps", max_steps, "frame cap (0 = scenario)");
  cmp_cmd->add_option("--config", config_path, "planner config JSON");
  cmp_cmd->add_option("--threads", threads, "worker threads");

  auto* field_cmd =
      app.add_subcommand("occlusion-field", "grid occlusion probability");
  field_cmd->add_option("--scenario", scenario_path, "scenario JSON")
      ->required();
  field_cmd->add_option("--out", out_dir, "output CSV path");
  field_cmd->add_option("--x-min", x_min);
  field_cmd->add_option("--x-max", x_max);
  field_cmd->add_option("--y-min", y_min);
  field_cmd->add_option("--y-max", y_max);
  field_cmd->add_option("--step", grid_step);
  field_cmd->add_option("--samples", field_samples);
  field_cmd->add_option("--seed", seed);

  auto* val_cmd = app.add_subcommand("validate", "scenario lint");
  val_cmd->add_option("--scenario", scenario_path, "scenario JSON")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run_cmd->parsed())
      return cmd_run(scenario_path, planner, seed, out_dir, max_steps,
                     config_path);
    if (cmp_cmd->parsed()) {
      if (seeds.empty())
        for (std::uint64_t s = 1; s <= 20; ++s) seeds.push_back(s);
      return cmd_compare(scenario_path, planners, seeds, out_dir, max_steps,
                         config_path, threads);
    }
    if (field_cmd->parsed())
      return cmd_occlusion_field(scenario_path, out_dir, x_min, x_max, y_min,
                                 y_max, grid_step, field_samples, seed);
    if (val_cmd->parsed()) return cmd_validate(scenario_path);
  } catch (const ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvariantViolation& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const InvalidScenario& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitSolver;
  }
  return kExitOk;
}
