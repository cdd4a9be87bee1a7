#include <CLI11.hpp>
#include <json.hpp>

#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>

#include "fpr/dataset.hpp"
#include "fpr/error.hpp"
#include "fpr/evaluation.hpp"
#include "fpr/forest_sim.hpp"
#include "fpr/io.hpp"
#include "fpr/log.hpp"
#include "fpr/run_config.hpp"
#include "fpr/tasks.hpp"
#include "fpr/trace.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitUnanchored = 4;

struct ConfigArgs {
  std::vector<std::string> files;
  std::vector<std::string> overrides;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", files, "Config documents, later ones override earlier ones");
    cmd->add_option("--set", overrides, "section.key=value override");
  }

  fpr::RunConfig load() const {
    fpr::RunConfig config;
    for (const auto& f : files) config.load(fs::path(f));
    for (const auto& o : overrides) config.set_override(o);
    return config;
  }
};

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw fpr::DataError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::ofstream open_out(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw fpr::DataError("cannot write " + path.string());
  return out;
}

std::vector<fpr::Vec3> graph_positions(const fpr::PoseGraph& graph) {
  std::vector<fpr::Vec3> out;
  for (const auto& [id, n] : graph.nodes()) out.push_back(n.pose.translation());
  return out;
}

std::vector<fpr::Vec3> positions(const std::vector<fpr::Pose>& poses) {
  std::vector<fpr::Vec3> out;
  for (const auto& p : poses) out.push_back(p.translation());
  return out;
}

// Ground-truth relative pose between two nodes of the given missions.
fpr::TruthLookup truth_lookup(const std::map<int, const fpr::Dataset*>& missions) {
  return [missions](fpr::NodeId a, fpr::NodeId b) -> std::optional<fpr::Pose> {
    auto pose_of = [&](fpr::NodeId id) -> std::optional<fpr::Pose> {
      const auto it = missions.find(static_cast<int>(id / 1'000'000));
      if (it == missions.end() || !it->second->ground_truth) return std::nullopt;
      const std::size_t k = id % 1'000'000;
      if (k >= it->second->ground_truth->size()) return std::nullopt;
      return (*it->second->ground_truth)[k];
    };
    const auto pa = pose_of(a);
    const auto pb = pose_of(b);
    if (!pa || !pb) return std::nullopt;
    return fpr::relative(*pa, *pb);
  };
}

std::vector<std::vector<double>> describe_all(const fpr::Dataset& data, const std::string& backend_tag) {
  const auto backend = fpr::make_backend(backend_tag);
  std::vector<std::vector<double>> out;
  for (const auto& scan : data.scans) out.push_back(backend->describe(scan));
  return out;
}

int cmd_sim_world(const std::string& preset, std::uint64_t seed, double half_size, const std::vector<double>& bounds,
                  const std::string& out) {
  fpr::WorldSpec spec;
  spec.preset = fpr::parse_preset(preset);
  spec.seed = seed;
  spec.min_corner = {-half_size, -half_size};
  spec.max_corner = {half_size, half_size};
  if (!bounds.empty()) {
    spec.min_corner = {bounds[0], bounds[1]};
    spec.max_corner = {bounds[2], bounds[3]};
  }
  const fpr::ForestWorld world = fpr::generate_world(spec);
  world.save_json(fs::path(out));
  std::cout << "world: " << world.trees.size() << " trees, " << world.clutter.size() << " clutter blobs, "
            << world.area_ha() << " ha\n";
  return 0;
}

struct TrajArgs {
  std::string world;
  std::string shape = "figure-eight";
  std::vector<double> center{0.0, 0.0};
  double radius = 20.0;
  double width = 40.0;
  double height = 40.0;
  double laps = 1.0;
  double offset = 0.0;
  double speed = 1.5;
  double rate = 1.0;
  double start_time = 0.0;
  bool reverse = false;
  double drift = 0.01;
  std::string sensor = "xt32";
  std::uint64_t seed = 1;
  std::string out;
};

int cmd_sim_traj(const TrajArgs& a) {
  const fpr::ForestWorld world = fpr::ForestWorld::load_json(fs::path(a.world));
  fpr::PathSpec path;
  if (a.shape == "figure-eight") path.shape = fpr::PathShape::kFigureEight;
  else if (a.shape == "circle") path.shape = fpr::PathShape::kCircle;
  else if (a.shape == "rectangle") path.shape = fpr::PathShape::kRectangle;
  else throw fpr::ConfigError("unknown path shape: " + a.shape);
  if (a.center.size() != 2) throw fpr::ConfigError("--center takes two values");
  path.center = {a.center[0], a.center[1]};
  path.radius = a.radius;
  path.width = a.width;
  path.height = a.height;
  path.laps = a.laps;
  path.lateral_offset = a.offset;
  path.speed = a.speed;
  path.keyframe_rate_hz = a.rate;
  path.start_time = a.start_time;
  path.reverse = a.reverse;
  fpr::DriftModel drift;
  drift.translation_fraction = a.drift;
  drift.seed = a.seed;
  if (a.drift == 0.0) drift = fpr::DriftModel::none();
  fpr::SensorModel sensor;
  if (a.sensor == "xt32") sensor = fpr::SensorModel::xt32();
  else if (a.sensor == "qt64") sensor = fpr::SensorModel::qt64();
  else throw fpr::ConfigError("unknown sensor: " + a.sensor);
  fpr::Trajectory traj = fpr::simulate_trajectory(world, path, drift);
  fpr::render_trajectory(world, sensor, a.seed, traj);
  fpr::write_dataset(fs::path(a.out), traj);
  std::cout << "trajectory: " << traj.size() << " keyframes over " << traj.length << " m\n";
  return 0;
}

fpr::MissionBundle run_mission(const fpr::Dataset& data, const std::string& name, int mission,
                               const fpr::PipelineConfig& config, std::vector<fpr::LoopCandidate>& trace) {
  const auto first = static_cast<fpr::NodeId>(mission) * 1'000'000;
  fpr::OnlineSlam slam(config, mission, first);
  slam.set_truth(truth_lookup({{mission, &data}}));
  auto nodes = fpr::prepare_nodes(first, mission, data.timestamps, data.odometry, data.scans, slam.backend(), config);
  for (fpr::NodeData& node : nodes) {
    auto r = slam.step(std::move(node));
    trace.insert(trace.end(), r.finished.begin(), r.finished.end());
  }
  auto rest = slam.flush();
  trace.insert(trace.end(), rest.begin(), rest.end());
  return std::move(slam).into_bundle(name);
}

int cmd_run_online(const ConfigArgs& cfg, const std::string& data_dir, const std::string& out_dir) {
  const fpr::PipelineConfig config = cfg.load().pipeline();
  const fpr::Dataset data = fpr::read_dataset(fs::path(data_dir));
  fs::create_directories(out_dir);
  std::vector<fpr::LoopCandidate> trace;
  const fpr::MissionBundle bundle = run_mission(data, fs::path(data_dir).filename().string(), 1, config, trace);
  bundle.graph.save(fs::path(out_dir) / "graph.txt");
  bundle.db.save(fs::path(out_dir) / "descriptors.db");
  fpr::write_trace(fs::path(out_dir) / "trace.jsonl", trace);

  std::size_t loops = 0;
  for (const auto& c : trace) loops += c.admitted() ? 1 : 0;
  json summary = {{"nodes", bundle.graph.size()}, {"admitted_loops", loops}, {"candidates", trace.size()}};
  if (data.ground_truth) {
    const auto gt = data.truth_positions();
    summary["ate_odometry"] = fpr::absolute_trajectory_error(positions(data.odometry), gt);
    summary["ate"] = fpr::absolute_trajectory_error(graph_positions(bundle.graph), gt);
  }
  write_json(fs::path(out_dir) / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_run_merge(const ConfigArgs& cfg, const std::vector<std::string>& dirs, const std::string& out_dir) {
  const fpr::PipelineConfig config = cfg.load().pipeline();
  if (dirs.size() < 2) throw fpr::ConfigError("run-merge needs at least two --data directories");
  std::vector<fpr::Dataset> data;
  for (const auto& d : dirs) data.push_back(fpr::read_dataset(fs::path(d)));
  std::map<int, const fpr::Dataset*> by_mission;
  for (std::size_t m = 0; m < data.size(); ++m) by_mission[static_cast<int>(m + 1)] = &data[m];
  fs::create_directories(out_dir);

  std::vector<fpr::LoopCandidate> trace;
  std::vector<fpr::MissionBundle> bundles;
  for (std::size_t m = 0; m < data.size(); ++m) {
    bundles.push_back(run_mission(data[m], fs::path(dirs[m]).filename().string(), static_cast<int>(m + 1), config, trace));
  }
  const fpr::MergeResult merged = fpr::merge_missions(bundles, config, truth_lookup(by_mission));
  trace.insert(trace.end(), merged.trace.begin(), merged.trace.end());
  merged.graph.save(fs::path(out_dir) / "graph.txt");
  fpr::write_trace(fs::path(out_dir) / "trace.jsonl", trace);

  json summary = {{"nodes", merged.graph.size()}, {"inter_mission_loops", merged.inter_loops.size()}};
  bool have_truth = true;
  std::vector<fpr::Vec3> gt;
  for (const auto& d : data) {
    if (!d.ground_truth) {
      have_truth = false;
      break;
    }
    for (const auto& p : *d.ground_truth) gt.push_back(p.translation());
  }
  if (have_truth) summary["ate"] = fpr::absolute_trajectory_error(graph_positions(merged.graph), gt);
  write_json(fs::path(out_dir) / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_run_reloc(const ConfigArgs& cfg, const std::string& map_dir, const std::string& live_dir,
                  const std::string& out_dir) {
  const fpr::PipelineConfig config = cfg.load().pipeline();
  const fpr::Dataset map_data = fpr::read_dataset(fs::path(map_dir));
  const fpr::Dataset live = fpr::read_dataset(fs::path(live_dir));
  fs::create_directories(out_dir);
  std::vector<fpr::LoopCandidate> trace;
  const fpr::MissionBundle map = run_mission(map_data, "map", 1, config, trace);
  trace.clear();

  const auto backend = fpr::make_backend(config.backend);
  fpr::RelocState state;
  std::ofstream fixes = open_out(fs::path(out_dir) / "fixes.txt");
  fixes.precision(17);
  std::size_t fix_count = 0;
  double max_error = 0.0;
  for (std::size_t k = 0; k < live.size(); ++k) {
    const fpr::NodeData node = fpr::prepare_node(2'000'000 + k, 2, live.timestamps[k], live.odometry[k], live.scans[k],
                                                 *backend, config);
    fpr::RelocStepResult r = fpr::relocalize_step(state, map, node, config, *backend);
    trace.insert(trace.end(), r.trace.begin(), r.trace.end());
    if (!r.fix) continue;
    ++fix_count;
    fixes << live.timestamps[k] << ' ' << fpr::io::format_pose(*r.fix) << '\n';
    if (live.ground_truth) max_error = std::max(max_error, ((*live.ground_truth)[k].translation() - r.fix->translation()).norm());
  }
  fpr::write_trace(fs::path(out_dir) / "trace.jsonl", trace);
  json summary = {{"steps", live.size()},
                  {"fixes", fix_count},
                  {"fix_rate", live.size() ? static_cast<double>(fix_count) / static_cast<double>(live.size()) : 0.0}};
  if (live.ground_truth) summary["max_fix_error"] = max_error;
  write_json(fs::path(out_dir) / "summary.json", summary);
  std::cout << summary.dump() << '\n';
  return 0;
}

int cmd_eval_pr(const std::string& data_dir, const std::string& backend, double gt_radius, double exclusion,
                const std::string& out) {
  const fpr::Dataset data = fpr::read_dataset(fs::path(data_dir), true);
  const auto descriptors = describe_all(data, backend);
  const auto gt = data.truth_positions();
  const auto samples = fpr::top1_samples(descriptors, gt, data.timestamps, exclusion, gt_radius);
  const fpr::PrCurve curve = fpr::pr_curve(samples);
  std::ofstream csv = open_out(fs::path(out));
  fpr::write_pr_csv(csv, curve);
  std::cout << "F1-max " << curve.best.f1 << " at tau_s " << curve.best.threshold << " (precision "
            << curve.best.precision << ", recall " << curve.best.recall << ")\n";
  return 0;
}

int cmd_eval_heatmap(const std::string& data_dir, const std::string& backend, double gt_radius,
                     const std::string& prefix) {
  const fpr::Dataset data = fpr::read_dataset(fs::path(data_dir), true);
  const fpr::Heatmap h = fpr::descriptor_heatmap(describe_all(data, backend), data.truth_positions(), gt_radius);
  std::ofstream sim = open_out(fs::path(prefix + "_similarity.csv"));
  fpr::write_matrix_csv(sim, h.similarity);
  std::ofstream adj = open_out(fs::path(prefix + "_adjacency.csv"));
  fpr::write_matrix_csv(adj, h.adjacency);
  return 0;
}

int cmd_eval_stats(const std::vector<std::string>& traces, bool full_angle, const std::string& out) {
  std::vector<fpr::TraceRecord> records;
  for (const auto& t : traces) {
    auto r = fpr::read_trace(fs::path(t));
    records.insert(records.end(), r.begin(), r.end());
  }
  const fpr::LoopStats stats = fpr::loop_stats(records, full_angle);
  std::ofstream csv = open_out(fs::path(out));
  fpr::write_loop_stats_csv(csv, stats);
  return 0;
}

int cmd_graph_opt(const ConfigArgs& cfg, const std::string& in, const std::string& out) {
  const fpr::PipelineConfig config = cfg.load().pipeline();
  const fpr::PoseGraph graph = fpr::PoseGraph::load(fs::path(in));
  const fpr::OptimizeResult r = fpr::optimize(graph, config.optimizer);
  r.graph.save(fs::path(out));
  std::cout << "cost " << r.initial_cost << " -> " << r.final_cost << " in " << r.iterations << " iterations\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Forest place recognition and loop-closure verification"};
  app.require_subcommand(1);

  std::string preset = "dense";
  std::uint64_t seed = 1;
  double half_size = 50.0;
  std::string out;
  auto* sim_world = app.add_subcommand("sim-world", "Generate a synthetic forest");
  sim_world->add_option("--preset", preset, "dense | sparse | hilly");
  sim_world->add_option("--seed", seed);
  std::vector<double> bounds;
  sim_world->add_option("--half-size", half_size, "Half extent of the square world, meters");
  sim_world->add_option("--bounds", bounds, "xmin ymin xmax ymax, overrides --half-size")->expected(4);
  sim_world->add_option("-o,--out", out, "World JSON")->required();

  TrajArgs traj;
  auto* sim_traj = app.add_subcommand("sim-traj", "Simulate a trajectory with scans and drifted odometry");
  sim_traj->add_option("--world", traj.world)->required();
  sim_traj->add_option("--shape", traj.shape, "figure-eight | circle | rectangle");
  sim_traj->add_option("--center", traj.center)->expected(2);
  sim_traj->add_option("--radius", traj.radius);
  sim_traj->add_option("--width", traj.width);
  sim_traj->add_option("--height", traj.height);
  sim_traj->add_option("--laps", traj.laps);
  sim_traj->add_option("--offset", traj.offset, "Lateral offset from the path, meters");
  sim_traj->add_option("--speed", traj.speed);
  sim_traj->add_option("--rate", traj.rate, "Keyframes per second");
  sim_traj->add_option("--start-time", traj.start_time);
  sim_traj->add_flag("--reverse", traj.reverse);
  sim_traj->add_option("--drift", traj.drift, "Translation drift fraction, 0 disables drift");
  sim_traj->add_option("--sensor", traj.sensor, "xt32 | qt64");
  sim_traj->add_option("--seed", traj.seed);
  sim_traj->add_option("-o,--out", traj.out, "Dataset directory")->required();

  ConfigArgs cfg;
  std::string data_dir;
  auto* run_online = app.add_subcommand("run-online", "Task A: online SLAM with verified loops");
  cfg.attach(run_online);
  run_online->add_option("--data", data_dir)->required();
  run_online->add_option("-o,--out", out)->required();

  std::vector<std::string> merge_dirs;
  auto* run_merge = app.add_subcommand("run-merge", "Task B: merge missions");
  cfg.attach(run_merge);
  run_merge->add_option("--data", merge_dirs, "Mission datasets in chronological order")->required();
  run_merge->add_option("-o,--out", out)->required();

  std::string map_dir;
  std::string live_dir;
  auto* run_reloc = app.add_subcommand("run-reloc", "Task C: relocalize a live sequence in a prior map");
  cfg.attach(run_reloc);
  run_reloc->add_option("--map", map_dir)->required();
  run_reloc->add_option("--live", live_dir)->required();
  run_reloc->add_option("-o,--out", out)->required();

  std::string backend = "scan_context";
  double gt_radius = 10.0;
  double exclusion = 30.0;
  auto* eval_pr = app.add_subcommand("eval-pr", "Top-1 precision-recall sweep");
  eval_pr->add_option("--data", data_dir)->required();
  eval_pr->add_option("--backend", backend);
  eval_pr->add_option("--gt-radius", gt_radius);
  eval_pr->add_option("--exclusion", exclusion, "Seconds");
  eval_pr->add_option("-o,--out", out, "CSV")->required();

  auto* eval_heatmap = app.add_subcommand("eval-heatmap", "All-pairs descriptor similarity");
  eval_heatmap->add_option("--data", data_dir)->required();
  eval_heatmap->add_option("--backend", backend);
  eval_heatmap->add_option("--gt-radius", gt_radius);
  eval_heatmap->add_option("-o,--out", out, "Output prefix")->required();

  std::vector<std::string> traces;
  bool full_angle = false;
  auto* eval_stats = app.add_subcommand("eval-stats", "Loop statistics by distance and angle per stage");
  eval_stats->add_option("--trace", traces)->required();
  eval_stats->add_flag("--full-angle", full_angle, "Bin by 3D rotation angle instead of yaw");
  eval_stats->add_option("-o,--out", out, "CSV")->required();

  std::string graph_in;
  auto* graph_opt = app.add_subcommand("graph-opt", "Optimize a pose-graph file");
  cfg.attach(graph_opt);
  graph_opt->add_option("--in", graph_in)->required();
  graph_opt->add_option("-o,--out", out)->required();

  auto* print_config = app.add_subcommand("print-config", "Print every config key with its value");
  cfg.attach(print_config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*sim_world) return cmd_sim_world(preset, seed, half_size, bounds, out);
    if (*sim_traj) return cmd_sim_traj(traj);
    if (*run_online) return cmd_run_online(cfg, data_dir, out);
    if (*run_merge) return cmd_run_merge(cfg, merge_dirs, out);
    if (*run_reloc) return cmd_run_reloc(cfg, map_dir, live_dir, out);
    if (*eval_pr) return cmd_eval_pr(data_dir, backend, gt_radius, exclusion, out);
    if (*eval_heatmap) return cmd_eval_heatmap(data_dir, backend, gt_radius, out);
    if (*eval_stats) return cmd_eval_stats(traces, full_angle, out);
    if (*graph_opt) return cmd_graph_opt(cfg, graph_in, out);
    if (*print_config) {
      cfg.load().write(std::cout);
      return 0;
    }
  } catch (const fpr::ConfigError& e) {
    fpr::log::error(e.what());
    return kExitConfig;
  } catch (const fpr::UnanchoredMissionError& e) {
    fpr::log::error(e.what());
    return kExitUnanchored;
  } catch (const fpr::DataError& e) {
    fpr::log::error(e.what());
    return kExitData;
  } catch (const std::exception& e) {
    fpr::log::error(e.what());
    return 1;
  }
  return 0;
}
