#include "croa/cli_io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <thread>

#include "json.hpp"

namespace croa {

namespace {

using nlohmann::json;

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
}

json parse_json_text(const std::string& text, const std::string& origin) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

std::vector<Vec2> vertices_from(const json& arr, const std::string& what) {
  if (!arr.is_array() || arr.size() < 3)
    throw InvariantViolation(what + ": needs at least 3 vertices, has " +
                             std::to_string(arr.is_array() ? arr.size() : 0));
  std::vector<Vec2> pts;
  for (const auto& v : arr) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() ||
        !v[1].is_number())
      throw ParseError(what + ": vertex must be a [x, y] number pair");
    pts.emplace_back(v[0].get<double>(), v[1].get<double>());
  }
  return pts;
}

ConvexPolytope polytope_from(const json& arr, const std::string& what) {
  const auto pts = vertices_from(arr, what);
  try {
    return polytope_from_vertices(pts);
  } catch (const GeometryError& e) {
    throw InvariantViolation(what + ": " + e.what());
  }
}

json vertices_to_json(const ConvexPolytope& poly) {
  json arr = json::array();
  for (const auto& v : poly.vertices) arr.push_back({v.x(), v.y()});
  return arr;
}

void check_scenario(const Scenario& sc, const std::string& origin) {
  if (sc.lidar.ray_count < 1)
    throw InvariantViolation(origin + ": lidar ray_count must be >= 1");
  if (!(sc.lidar.fov > 0.0) || sc.lidar.fov > 2.0 * M_PI + 1e-12)
    throw InvariantViolation(origin + ": lidar fov must lie in (0, 2pi]");
  if (!(sc.lidar.max_range > 0.0))
    throw InvariantViolation(origin + ": lidar max_range must be positive");
  // Belief mean close to the true body.
  const Vec2 m = sc.target_belief.mean;
  const ConvexPolytope dot = polytope_from_vertices(
      {m + Vec2(-1e-3, -1e-3), m + Vec2(1e-3, -1e-3), m + Vec2(1e-3, 1e-3),
       m + Vec2(-1e-3, 1e-3)});
  if (exact_distance(dot, sc.target_truth) > 3.0)
    throw InvariantViolation(origin +
                             ": target belief mean is more than 3 m from "
                             "the target body");
  // Start pose clear of every obstacle with the default safety distance.
  const ConvexPolytope ego0 =
      transform(sc.ego.body, sc.robot_start.heading,
                sc.robot_start.position());
  for (std::size_t k = 0; k < sc.obstacles.size(); ++k) {
    if (exact_distance(ego0, sc.obstacles[k]) < 1.0)
      throw InvariantViolation(origin + ": obstacle " + std::to_string(k) +
                               " is within the 1 m safety distance of the "
                               "start pose");
  }
}

Scenario scenario_from_json(const json& j, const std::string& origin) {
  try {
    if (!j.contains("format_version"))
      throw ParseError(origin + ": missing format_version");
    if (j.at("format_version").get<int>() != kFormatVersion)
      throw ParseError(origin + ": unsupported format_version");
    Scenario sc;
    const auto& rs = j.at("robot_start");
    sc.robot_start = State{rs.at("x_m").get<double>(),
                           rs.at("y_m").get<double>(),
                           rs.at("heading_rad").get<double>()};
    sc.target_truth =
        polytope_from(j.at("target_truth_vertices_m"), origin + ": target");
    const auto& tb = j.at("target_belief");
    sc.target_belief.mean = Vec2(tb.at("mean_m")[0].get<double>(),
                                 tb.at("mean_m")[1].get<double>());
    const auto& cov = tb.at("covariance_m2");
    sc.target_belief.covariance << cov[0][0].get<double>(),
        cov[0][1].get<double>(), cov[1][0].get<double>(),
        cov[1][1].get<double>();
    for (std::size_t k = 0; k < j.at("obstacles").size(); ++k)
      sc.obstacles.push_back(
          polytope_from(j.at("obstacles")[k].at("vertices_m"),
                        origin + ": obstacle " + std::to_string(k)));
    if (j.contains("ego_vertices_m"))
      sc.ego.body = polytope_from(j.at("ego_vertices_m"), origin + ": ego");
    if (j.contains("lidar")) {
      const auto& li = j.at("lidar");
      sc.lidar.ray_count = li.value("ray_count", sc.lidar.ray_count);
      sc.lidar.fov = li.value("fov_rad", sc.lidar.fov);
      sc.lidar.max_range = li.value("max_range_m", sc.lidar.max_range);
      sc.lidar.rate = li.value("rate_hz", sc.lidar.rate);
    }
    sc.max_sim_time = j.value("max_sim_time_s", sc.max_sim_time);
    sc.goal_radius = j.value("goal_radius_m", sc.goal_radius);
    sc.detect_threshold =
        j.value("detect_threshold_points", sc.detect_threshold);
    if (j.contains("perturbation")) {
      sc.perturb_x = j.at("perturbation").value("x_m", 0.0);
      sc.perturb_y = j.at("perturbation").value("y_m", 0.0);
    }
    check_scenario(sc, origin);
    return sc;
  } catch (const json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

std::string csv_safe(std::string s) {
  for (char& c : s)
    if (c == ',' || c == '\n') c = ';';
  return s;
}

}  // namespace

std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

Scenario parse_scenario(const std::string& text, const std::string& origin) {
  return scenario_from_json(parse_json_text(text, origin), origin);
}

Scenario load_scenario(const std::string& path) {
  return scenario_from_json(read_json(path), path);
}

void save_scenario(const Scenario& sc, const std::string& path) {
  nlohmann::ordered_json j;
  j["format_version"] = kFormatVersion;
  j["robot_start"] = {{"x_m", sc.robot_start.x},
                      {"y_m", sc.robot_start.y},
                      {"heading_rad", sc.robot_start.heading}};
  j["target_truth_vertices_m"] = vertices_to_json(sc.target_truth);
  j["target_belief"] = {
      {"mean_m", {sc.target_belief.mean.x(), sc.target_belief.mean.y()}},
      {"covariance_m2",
       {{sc.target_belief.covariance(0, 0), sc.target_belief.covariance(0, 1)},
        {sc.target_belief.covariance(1, 0),
         sc.target_belief.covariance(1, 1)}}}};
  j["obstacles"] = nlohmann::ordered_json::array();
  for (const auto& ob : sc.obstacles)
    j["obstacles"].push_back({{"vertices_m", vertices_to_json(ob)}});
  j["ego_vertices_m"] = vertices_to_json(sc.ego.body);
  j["lidar"] = {{"ray_count", sc.lidar.ray_count},
                {"fov_rad", sc.lidar.fov},
                {"max_range_m", sc.lidar.max_range},
                {"rate_hz", sc.lidar.rate}};
  j["max_sim_time_s"] = sc.max_sim_time;
  j["goal_radius_m"] = sc.goal_radius;
  j["detect_threshold_points"] = sc.detect_threshold;
  j["perturbation"] = {{"x_m", sc.perturb_x}, {"y_m", sc.perturb_y}};
  write_text(path, j.dump(2) + "\n");
}

Scenario perturb_scenario(const Scenario& scenario, std::uint64_t seed) {
  if (seed == 0 || (scenario.perturb_x == 0.0 && scenario.perturb_y == 0.0))
    return scenario;
  Scenario out = scenario;
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> ux(-scenario.perturb_x,
                                            scenario.perturb_x);
  std::uniform_real_distribution<double> uy(-scenario.perturb_y,
                                            scenario.perturb_y);
  for (auto& ob : out.obstacles) {
    const Vec2 shift(ux(rng), uy(rng));
    ob = transform(ob, 0.0, shift);
  }
  return out;
}

namespace {

PlannerConfig config_from_json(const json& j, const std::string& origin,
                               PlannerConfig cfg) {
  try {
    for (const auto& [key, val] : j.items()) {
      if (key == "rho") cfg.rho = val.get<double>();
      else if (key == "horizon") cfg.horizon = val.get<int>();
      else if (key == "dt_s") cfg.dt = val.get<double>();
      else if (key == "samples") cfg.samples = val.get<int>();
      else if (key == "d0_m") cfg.d0 = val.get<double>();
      else if (key == "ccp_iters") cfg.ccp_iters = val.get<int>();
      else if (key == "alt_iters") cfg.alt_iters = val.get<int>();
      else if (key == "penalty_occlusion") cfg.penalty_occlusion = val.get<double>();
      else if (key == "penalty_collision_slack") cfg.penalty_collision_slack = val.get<double>();
      else if (key == "nominal_speed_mps") cfg.nominal_speed = val.get<double>();
      else if (key == "seed") cfg.seed = val.get<std::uint64_t>();
      else if (key == "wheelbase_m") cfg.wheelbase = val.get<double>();
      else if (key == "heading_trust_region_rad") cfg.heading_trust_region = val.get<double>();
      else if (key == "collision_margin_m") cfg.collision_margin = val.get<double>();
      else if (key == "xi_in_step_a") cfg.xi_in_step_a = val.get<bool>();
      else if (key == "hard_occlusion_constraints") cfg.hard_occlusion_constraints = val.get<bool>();
      else if (key == "weight_mode") {
        const std::string m = val.get<std::string>();
        if (m == "density") cfg.weight_mode = WeightMode::DensityWeighted;
        else if (m == "uniform") cfg.weight_mode = WeightMode::Uniform;
        else throw ParseError(origin + ": unknown weight_mode '" + m + "'");
      } else if (key == "bounds") {
        cfg.bounds.min.speed = val.value("min_speed_mps", cfg.bounds.min.speed);
        cfg.bounds.max.speed = val.value("max_speed_mps", cfg.bounds.max.speed);
        cfg.bounds.min.steer = val.value("min_steer_rad", cfg.bounds.min.steer);
        cfg.bounds.max.steer = val.value("max_steer_rad", cfg.bounds.max.steer);
      } else {
        throw ParseError(origin + ": unknown config key '" + key + "'");
      }
    }
  } catch (const json::exception& e) {
    throw ParseError(origin + ": " + e.what());
  }
  return cfg;
}

}  // namespace

PlannerConfig parse_config(const std::string& text, const std::string& origin,
                           PlannerConfig base) {
  return config_from_json(parse_json_text(text, origin), origin, base);
}

PlannerConfig load_config(const std::string& path, PlannerConfig base) {
  return config_from_json(read_json(path), path, base);
}

std::string planner_name(PlannerKind kind) {
  switch (kind) {
    case PlannerKind::Croa: return "croa";
    case PlannerKind::Ompc: return "ompc";
    case PlannerKind::Tracking: return "tracking";
    case PlannerKind::Pathfollow: return "pf";
  }
  return "unknown";
}

PlannerKind planner_from_name(const std::string& name) {
  if (name == "croa") return PlannerKind::Croa;
  if (name == "ompc") return PlannerKind::Ompc;
  if (name == "tracking") return PlannerKind::Tracking;
  if (name == "pf" || name == "pathfollow") return PlannerKind::Pathfollow;
  throw ParseError("unknown planner '" + name + "'");
}

std::string frame_to_jsonl(const FrameRecord& r) {
  std::ostringstream os;
  os << "{\"time_s\":" << format_double(r.time)
     << ",\"x_m\":" << format_double(r.robot.x)
     << ",\"y_m\":" << format_double(r.robot.y)
     << ",\"heading_rad\":" << format_double(r.robot.heading)
     << ",\"speed_mps\":" << format_double(r.control.speed)
     << ",\"steer_rad\":" << format_double(r.control.steer)
     << ",\"target_points\":" << r.target_points
     << ",\"detectable\":" << (r.detectable ? "true" : "false")
     << ",\"occl_estimate\":" << format_double(r.occl_estimate)
     << ",\"min_clearance_m\":" << format_double(r.min_clearance)
     << ",\"solve_time_s\":" << format_double(r.solve_time)
     << ",\"solver_ok\":" << (r.solver_ok ? "true" : "false") << "}";
  return os.str();
}

FrameRecord frame_from_jsonl(const std::string& line) {
  const json j = parse_json_text(line, "frame line");
  try {
    FrameRecord r;
    r.time = j.at("time_s").get<double>();
    r.robot = State{j.at("x_m").get<double>(), j.at("y_m").get<double>(),
                    j.at("heading_rad").get<double>()};
    r.control = Control{j.at("speed_mps").get<double>(),
                        j.at("steer_rad").get<double>()};
    r.target_points = j.at("target_points").get<int>();
    r.detectable = j.at("detectable").get<bool>();
    r.occl_estimate = j.at("occl_estimate").get<double>();
    r.min_clearance = j.at("min_clearance_m").get<double>();
    r.solve_time = j.at("solve_time_s").get<double>();
    r.solver_ok = j.at("solver_ok").get<bool>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("frame line: ") + e.what());
  }
}

ExperimentSummary run_experiment(const RunSpec& spec) {
  if (spec.seeds.empty()) throw InvariantViolation("seed list is empty");
  if (spec.planners.empty()) throw InvariantViolation("planner list is empty");
  Scenario base = load_scenario(spec.scenario_path);
  if (spec.max_steps > 0)
    base.max_sim_time = spec.max_steps * spec.config.dt;
  std::filesystem::create_directories(spec.output_dir);

  struct Job {
    PlannerKind planner;
    std::uint64_t seed;
    RunSummaryRow row;
    std::vector<FrameRecord> records;
  };
  std::vector<Job> jobs;
  for (const PlannerKind pk : spec.planners)
    for (const std::uint64_t s : spec.seeds) jobs.push_back({pk, s, {}, {}});

  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      Job& job = jobs[i];
      job.row.planner = job.planner;
      job.row.seed = job.seed;
      try {
        const Scenario sc = perturb_scenario(base, job.seed);
        RunResult rr = run(sc, job.planner, spec.config, job.seed);
        job.row.metrics = rr.metrics;
        job.records = std::move(rr.records);
      } catch (const std::exception& e) {
        job.row.failed = true;
        job.row.error = e.what();
      }
    }
  };
  const int nthreads =
      std::max(1, std::min<int>(spec.threads,
                                static_cast<int>(jobs.size())));
  if (nthreads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }

  ExperimentSummary summary;
  std::ostringstream csv;
  csv << "format_version,planner,seed,status,total_frames,detectable_frames,"
         "occlusion_ratio,mean_points,median_points,top15_points,"
         "min_clearance_m,time_to_target_s,error\n";
  for (Job& job : jobs) {
    const std::string name = planner_name(job.planner);
    if (!job.row.failed) {
      const std::string log_path = spec.output_dir + "/frames_" + name +
                                   "_seed" + std::to_string(job.seed) +
                                   ".jsonl";
      std::ostringstream text;
      text << "{\"format_version\":" << kFormatVersion << ",\"planner\":\""
           << name << "\",\"seed\":" << job.seed << "}\n";
      for (const auto& rec : job.records) text << frame_to_jsonl(rec) << "\n";
      write_text(log_path, text.str());
      summary.frame_log_paths.push_back(log_path);
    }
    const Metrics& m = job.row.metrics;
    csv << kFormatVersion << "," << name << "," << job.row.seed << ","
        << (job.row.failed ? "failed" : "ok") << ",";
    if (job.row.failed) {
      csv << ",,,,,,,," << csv_safe(job.row.error) << "\n";
    } else {
      csv << m.total_frames << "," << m.detectable_frames << ","
          << format_double(m.occlusion_ratio) << ","
          << format_double(m.mean_points) << ","
          << format_double(m.median_points) << ","
          << format_double(m.top15_points) << ","
          << format_double(m.min_clearance_overall) << ","
          << (m.time_to_target ? format_double(*m.time_to_target) : "")
          << ",\n";
    }
    summary.rows.push_back(std::move(job.row));
  }
  summary.summary_csv_path = spec.output_dir + "/summary.csv";
  write_text(summary.summary_csv_path, csv.str());
  return summary;
}

void emit_plot_data(std::span<const FrameRecord> records,
                    const std::string& base_path) {
  if (records.empty())
    throw IoError("emit_plot_data: no records for " + base_path);

  std::vector<int> pts;
  for (const auto& r : records) pts.push_back(r.target_points);
  std::sort(pts.begin(), pts.end());
  std::ostringstream cdf;
  cdf << "point_count,cumulative_fraction\n";
  const double n = static_cast<double>(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    if (i + 1 < pts.size() && pts[i + 1] == pts[i]) continue;
    cdf << pts[i] << "," << format_double((i + 1) / n) << "\n";
  }
  write_text(base_path + "_cdf.csv", cdf.str());

  std::ostringstream tl;
  tl << "time_s,target_points,detectable,occl_estimate,solver_ok\n";
  for (const auto& r : records)
    tl << format_double(r.time) << "," << r.target_points << ","
       << (r.detectable ? 1 : 0) << "," << format_double(r.occl_estimate)
       << "," << (r.solver_ok ? 1 : 0) << "\n";
  write_text(base_path + "_timeline.csv", tl.str());

  std::ostringstream traj;
  traj << "time_s,x_m,y_m,heading_rad\n";
  for (const auto& r : records)
    traj << format_double(r.time) << "," << format_double(r.robot.x) << ","
         << format_double(r.robot.y) << "," << format_double(r.robot.heading)
         << "\n";
  write_text(base_path + "_trajectory.csv", traj.str());
}

}  // namespace croa
