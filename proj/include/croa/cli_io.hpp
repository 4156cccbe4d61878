#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "croa/simulator.hpp"

namespace croa {

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ParseError : IoError {
  using IoError::IoError;
};
struct InvariantViolation : IoError {
  using IoError::IoError;
};

inline constexpr int kFormatVersion = 1;

/// Parse and invariant-check a scenario JSON file (vertex-list obstacles,
/// units in field names). Throws ParseError on malformed input and
/// InvariantViolation naming the offending obstacle on semantic errors.
Scenario load_scenario(const std::string& path);

/// Parse a scenario from an in-memory JSON string (same checks as
/// load_scenario).
Scenario parse_scenario(const std::string& text, const std::string& origin);

void save_scenario(const Scenario& scenario, const std::string& path);

/// Apply the scenario's per-obstacle jitter (uniform in [-perturb, perturb]
/// per axis) deterministically from the seed. Seed 0 leaves the scenario
/// untouched so the nominal geometry stays reachable.
Scenario perturb_scenario(const Scenario& scenario, std::uint64_t seed);

/// Planner-config overrides from a JSON file; unknown keys are rejected.
PlannerConfig load_config(const std::string& path, PlannerConfig base = {});
PlannerConfig parse_config(const std::string& text, const std::string& origin,
                           PlannerConfig base = {});

std::string planner_name(PlannerKind kind);
PlannerKind planner_from_name(const std::string& name);

struct RunSpec {
  std::string scenario_path;
  std::vector<PlannerKind> planners;
  std::vector<std::uint64_t> seeds;
  PlannerConfig config;
  std::string output_dir;
  int max_steps = 0;  // 0 keeps the scenario's max_sim_time
  int threads = 1;
};

struct RunSummaryRow {
  PlannerKind planner = PlannerKind::Croa;
  std::uint64_t seed = 0;
  bool failed = false;
  std::string error;
  Metrics metrics;
};

struct ExperimentSummary {
  std::vector<RunSummaryRow> rows;  // planner-major, then seed order
  std::string summary_csv_path;
  std::vector<std::string> frame_log_paths;

  int failed_runs() const {
    int n = 0;
    for (const auto& r : rows) n += r.failed ? 1 : 0;
    return n;
  }
};

/// Run every (planner, seed) pair, writing one JSONL frame log per run and a
/// single summary CSV. Outputs are byte-deterministic for a fixed spec
/// regardless of thread count. Individual run failures are recorded in the
/// summary rather than aborting the batch.
ExperimentSummary run_experiment(const RunSpec& spec);

/// Write plot inputs derived from one run: a point-count CDF table, a
/// per-frame occlusion timeline, and the trajectory polyline. Files are
/// named <base>_cdf.csv, <base>_timeline.csv, <base>_trajectory.csv.
void emit_plot_data(std::span<const FrameRecord> records,
                    const std::string& base_path);

/// One frame log line / parse inverse, exposed for exact-recomputation
/// checks against the summary CSV.
std::string frame_to_jsonl(const FrameRecord& rec);
FrameRecord frame_from_jsonl(const std::string& line);

/// %.17g rendering used for every emitted number.
std::string format_double(double v);

}  // namespace croa
