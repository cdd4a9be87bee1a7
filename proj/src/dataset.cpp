#include "fpr/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpr/error.hpp"
#include "fpr/io.hpp"
#include "fpr/pose_graph.hpp"

namespace fpr {
namespace {

std::string scan_name(std::size_t k) {
  char name[32];
  std::snprintf(name, sizeof(name), "scans/%06zu.ply", k);
  return name;
}

void write_poses(const std::filesystem::path& path, const std::vector<double>& t, const std::vector<Pose>& poses) {
  if (t.size() != poses.size()) throw DataError("timestamps and poses differ in length");
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  out.precision(17);
  for (std::size_t k = 0; k < poses.size(); ++k) out << t[k] << ' ' << io::format_pose(poses[k]) << '\n';
}

void read_poses(const std::filesystem::path& path, std::vector<double>& t, std::vector<Pose>& poses) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream s(line);
    double stamp = 0.0;
    if (!(s >> stamp)) throw DataError(path.string() + ":" + std::to_string(number) + ": missing timestamp");
    std::string rest;
    std::getline(s, rest);
    try {
      poses.push_back(io::parse_pose(rest));
    } catch (const DataError& e) {
      throw DataError(path.string() + ":" + std::to_string(number) + ": " + e.what());
    }
    t.push_back(stamp);
  }
}

}  // namespace

std::vector<Vec3> Dataset::truth_positions() const {
  if (!ground_truth) throw DataError("dataset has no ground truth");
  std::vector<Vec3> out;
  for (const Pose& p : *ground_truth) out.push_back(p.translation());
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Trajectory& trajectory) {
  std::filesystem::create_directories(dir / "scans");
  PoseGraph graph;
  const NoiseModel noise;
  for (std::size_t k = 0; k < trajectory.size(); ++k) {
    graph.add_node({k, trajectory.odometry[k], 1, trajectory.timestamps[k], scan_name(k)});
    if (k > 0) {
      graph.add_factor({FactorKind::kOdometry, k - 1, k,
                        relative(trajectory.odometry[k - 1], trajectory.odometry[k]), noise.odometry});
    }
  }
  graph.save(dir / "trajectory.graph");
  write_poses(dir / "ground_truth.txt", trajectory.timestamps, trajectory.ground_truth);
  for (std::size_t k = 0; k < trajectory.scans.size(); ++k) io::write_ply(dir / scan_name(k), trajectory.scans[k]);
}

Dataset read_dataset(const std::filesystem::path& dir, bool require_truth) {
  Dataset d;
  const PoseGraph graph = PoseGraph::load(dir / "trajectory.graph");
  for (const auto& [id, node] : graph.nodes()) {
    d.timestamps.push_back(node.timestamp);
    d.odometry.push_back(node.pose);
    if (node.scan.empty()) throw DataError(dir.string() + ": node " + std::to_string(id) + " has no scan");
    const auto path = dir / node.scan;
    if (!std::filesystem::exists(path)) throw DataError("missing scan " + path.string());
    d.scans.push_back(io::read_ply(path));
  }
  if (std::filesystem::exists(dir / "ground_truth.txt")) {
    std::vector<double> t;
    std::vector<Pose> gt;
    read_poses(dir / "ground_truth.txt", t, gt);
    if (t != d.timestamps) throw DataError(dir.string() + ": ground truth and odometry timestamps differ");
    d.ground_truth = std::move(gt);
  } else if (require_truth) {
    throw DataError(dir.string() + ": missing ground_truth.txt");
  }
  return d;
}

}  // namespace fpr
