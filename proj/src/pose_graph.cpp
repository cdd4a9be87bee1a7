#include "fpr/pose_graph.hpp"

#include <Eigen/Cholesky>
#include <Eigen/LU>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseCore>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <unordered_map>

#include "fpr/error.hpp"
#include "fpr/io.hpp"

namespace fpr {

std::string to_string(FactorKind kind) {
  switch (kind) {
    case FactorKind::kOdometry:
      return "odometry";
    case FactorKind::kIntraLoop:
      return "intra-loop";
    case FactorKind::kInterMissionLoop:
      return "inter-mission-loop";
    case FactorKind::kPrior:
      return "prior";
  }
  return "unknown";
}

FactorKind parse_factor_kind(const std::string& text) {
  if (text == "odometry") return FactorKind::kOdometry;
  if (text == "intra-loop") return FactorKind::kIntraLoop;
  if (text == "inter-mission-loop") return FactorKind::kInterMissionLoop;
  if (text == "prior") return FactorKind::kPrior;
  throw DataError("unknown factor kind: " + text);
}

Mat6 diagonal_information(double translation, double rotation) {
  Vec6 d;
  d << translation, translation, translation, rotation, rotation, rotation;
  return d.asDiagonal();
}

void PoseGraph::add_node(GraphNode node) {
  if (!node.pose.is_finite()) throw DataError("pose graph: non-finite pose for node " + std::to_string(node.id));
  if (!nodes_.emplace(node.id, std::move(node)).second) throw DataError("pose graph: duplicate node id");
}

void PoseGraph::add_factor(Factor factor) {
  if (!nodes_.contains(factor.a) || !nodes_.contains(factor.b)) {
    throw DataError("pose graph: factor references unknown node");
  }
  if ((factor.kind == FactorKind::kPrior) != (factor.a == factor.b)) {
    throw DataError("pose graph: only priors may be unary");
  }
  factors_.push_back(std::move(factor));
}

void PoseGraph::set_pose(NodeId id, const Pose& pose) {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) throw DataError("pose graph: unknown node " + std::to_string(id));
  it->second.pose = pose;
}

void PoseGraph::remove_priors_except(int mission) {
  std::erase_if(factors_, [&](const Factor& f) {
    return f.kind == FactorKind::kPrior && nodes_.at(f.a).mission != mission;
  });
}

const GraphNode& PoseGraph::node(NodeId id) const {
  const auto it = nodes_.find(id);
  if (it == nodes_.end()) throw DataError("pose graph: unknown node " + std::to_string(id));
  return it->second;
}

std::vector<const Factor*> PoseGraph::loops_of(NodeId id) const {
  std::vector<const Factor*> out;
  for (const Factor& f : factors_) {
    if (is_loop(f.kind) && (f.a == id || f.b == id)) out.push_back(&f);
  }
  return out;
}

void PoseGraph::save(std::ostream& out) const {
  out << std::setprecision(17);
  out << "# NODE id mission t tx ty tz qx qy qz qw [scan]\n";
  out << "# FACTOR kind a b tx ty tz qx qy qz qw info(upper triangle, 21 values)\n";
  for (const auto& [id, n] : nodes_) {
    out << "NODE " << id << ' ' << n.mission << ' ' << n.timestamp << ' ' << io::format_pose(n.pose);
    if (!n.scan.empty()) out << ' ' << n.scan;
    out << '\n';
  }
  for (const Factor& f : factors_) {
    out << "FACTOR " << to_string(f.kind) << ' ' << f.a << ' ' << f.b << ' ' << io::format_pose(f.measurement);
    for (int r = 0; r < 6; ++r) {
      for (int c = r; c < 6; ++c) out << ' ' << f.information(r, c);
    }
    out << '\n';
  }
}

void PoseGraph::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("pose graph: cannot open " + path.string());
  save(out);
}

PoseGraph PoseGraph::load(std::istream& in) {
  PoseGraph g;
  std::string line;
  std::size_t lineno = 0;
  std::vector<Factor> pending;
  while (std::getline(in, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ls(line);
    std::string tag;
    ls >> tag;
    try {
      if (tag == "NODE") {
        GraphNode n;
        ls >> n.id >> n.mission >> n.timestamp;
        if (!ls) throw DataError("bad NODE header");
        std::string rest;
        double v[7];
        for (double& x : v) {
          if (!(ls >> x)) throw DataError("bad NODE pose");
        }
        std::ostringstream pose;
        pose << std::setprecision(17);
        for (double x : v) pose << x << ' ';
        n.pose = io::parse_pose(pose.str());
        if (ls >> rest) n.scan = rest;
        g.add_node(std::move(n));
      } else if (tag == "FACTOR") {
        Factor f;
        std::string kind;
        ls >> kind >> f.a >> f.b;
        if (!ls) throw DataError("bad FACTOR header");
        f.kind = parse_factor_kind(kind);
        double v[7];
        for (double& x : v) {
          if (!(ls >> x)) throw DataError("bad FACTOR measurement");
        }
        std::ostringstream pose;
        pose << std::setprecision(17);
        for (double x : v) pose << x << ' ';
        f.measurement = io::parse_pose(pose.str());
        for (int r = 0; r < 6; ++r) {
          for (int c = r; c < 6; ++c) {
            if (!(ls >> f.information(r, c))) throw DataError("bad FACTOR information");
            f.information(c, r) = f.information(r, c);
          }
        }
        pending.push_back(f);
      } else {
        throw DataError("unknown record " + tag);
      }
    } catch (const DataError& e) {
      throw DataError("pose graph line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  for (Factor& f : pending) g.add_factor(std::move(f));
  return g;
}

PoseGraph PoseGraph::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("pose graph: cannot open " + path.string());
  return load(in);
}

Vec6 factor_residual(const Factor& factor, const Pose& xa, const Pose& xb) {
  if (factor.kind == FactorKind::kPrior) return se3_log(factor.measurement.inverse() * xa);
  return se3_log(factor.measurement.inverse() * xa.inverse() * xb);
}

void factor_jacobians(const Factor& factor, const Pose& xa, const Pose& xb, Mat6& ja, Mat6& jb) {
  const Vec6 r = factor_residual(factor, xa, xb);
  const Mat6 jr_inv = se3_right_jacobian(r).inverse();
  if (factor.kind == FactorKind::kPrior) {
    ja = jr_inv;
    jb.setZero();
    return;
  }
  jb = jr_inv;
  ja = -jr_inv * se3_adjoint(xb.inverse() * xa);
}

namespace {

struct Problem {
  std::vector<NodeId> ids;
  std::unordered_map<NodeId, int> index;
  std::vector<Pose> poses;
};

void check_structure(const PoseGraph& graph) {
  if (graph.size() == 0) throw DataError("pose graph is empty");
  bool has_prior = false;
  std::unordered_map<NodeId, std::size_t> slot;
  std::vector<NodeId> ids;
  for (const auto& [id, n] : graph.nodes()) {
    slot.emplace(id, ids.size());
    ids.push_back(id);
  }
  std::vector<std::size_t> parent(ids.size());
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  for (const Factor& f : graph.factors()) {
    const Eigen::LLT<Mat6> llt(f.information);
    if (llt.info() != Eigen::Success || !f.information.isApprox(f.information.transpose())) {
      throw DataError("pose graph: information matrix is not symmetric positive definite (" + to_string(f.kind) +
                      " " + std::to_string(f.a) + "-" + std::to_string(f.b) + ")");
    }
    if (f.kind == FactorKind::kPrior) {
      has_prior = true;
      continue;
    }
    const std::size_t ra = find(slot.at(f.a));
    const std::size_t rb = find(slot.at(f.b));
    if (ra != rb) parent[std::max(ra, rb)] = std::min(ra, rb);
  }
  if (!has_prior) throw DataError("pose graph has no prior factor: gauge is unconstrained");
  std::map<std::size_t, std::vector<NodeId>> components;
  for (std::size_t i = 0; i < ids.size(); ++i) components[find(i)].push_back(ids[i]);
  if (components.size() > 1) {
    std::ostringstream msg;
    msg << "pose graph is disconnected into " << components.size() << " components:";
    for (const auto& [root, members] : components) {
      msg << " {" << members.front();
      if (members.size() > 1) msg << ".." << members.back() << " (" << members.size() << " nodes)";
      msg << "}";
    }
    throw DataError(msg.str());
  }
}

double robust_weight(double whitened_norm, const std::optional<double>& delta) {
  if (!delta || whitened_norm <= *delta) return 1.0;
  return *delta / whitened_norm;
}

double factor_cost(const Factor& f, const Vec6& r, const std::optional<double>& delta) {
  const double e2 = r.dot(f.information * r);
  if (!delta) return e2;
  const double e = std::sqrt(e2);
  return e <= *delta ? e2 : 2.0 * *delta * e - *delta * *delta;
}

double total_cost(const PoseGraph& graph, const Problem& p, const std::optional<double>& delta) {
  double cost = 0.0;
  for (const Factor& f : graph.factors()) {
    const Pose& xa = p.poses[p.index.at(f.a)];
    const Pose& xb = p.poses[p.index.at(f.b)];
    cost += factor_cost(f, factor_residual(f, xa, xb), delta);
  }
  return cost;
}

}  // namespace

double graph_cost(const PoseGraph& graph) {
  double cost = 0.0;
  for (const Factor& f : graph.factors()) {
    const Vec6 r = factor_residual(f, graph.node(f.a).pose, graph.node(f.b).pose);
    cost += r.dot(f.information * r);
  }
  return cost;
}

OptimizeResult optimize(const PoseGraph& graph, const OptimizerConfig& config) {
  check_structure(graph);

  Problem p;
  for (const auto& [id, n] : graph.nodes()) {
    p.index.emplace(id, static_cast<int>(p.ids.size()));
    p.ids.push_back(id);
    p.poses.push_back(n.pose);
  }
  const int dim = 6 * static_cast<int>(p.ids.size());

  OptimizeResult out;
  double cost = total_cost(graph, p, config.huber_delta);
  out.initial_cost = cost;
  double lambda = config.initial_lambda;

  for (int it = 0; it < config.max_iterations; ++it) {
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(graph.factors().size() * 144);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(dim);
    for (const Factor& f : graph.factors()) {
      const int ia = p.index.at(f.a);
      const int ib = p.index.at(f.b);
      const Vec6 r = factor_residual(f, p.poses[ia], p.poses[ib]);
      Mat6 ja, jb;
      factor_jacobians(f, p.poses[ia], p.poses[ib], ja, jb);
      const double w = robust_weight(std::sqrt(r.dot(f.information * r)), config.huber_delta);
      const Mat6 info = w * f.information;
      const bool unary = f.kind == FactorKind::kPrior;
      const Mat6 haa = ja.transpose() * info * ja;
      g.segment<6>(6 * ia) += ja.transpose() * info * r;
      for (int rr = 0; rr < 6; ++rr) {
        for (int cc = 0; cc < 6; ++cc) triplets.emplace_back(6 * ia + rr, 6 * ia + cc, haa(rr, cc));
      }
      if (unary) continue;
      const Mat6 hbb = jb.transpose() * info * jb;
      const Mat6 hab = ja.transpose() * info * jb;
      g.segment<6>(6 * ib) += jb.transpose() * info * r;
      for (int rr = 0; rr < 6; ++rr) {
        for (int cc = 0; cc < 6; ++cc) {
          triplets.emplace_back(6 * ib + rr, 6 * ib + cc, hbb(rr, cc));
          triplets.emplace_back(6 * ia + rr, 6 * ib + cc, hab(rr, cc));
          triplets.emplace_back(6 * ib + cc, 6 * ia + rr, hab(rr, cc));
        }
      }
    }
    Eigen::SparseMatrix<double> h(dim, dim);
    h.setFromTriplets(triplets.begin(), triplets.end());
    const Eigen::VectorXd diag = h.diagonal();

    bool improved = false;
    double new_cost = cost;
    for (int attempt = 0; attempt < 12 && !improved; ++attempt) {
      Eigen::SparseMatrix<double> damped = h;
      for (int k = 0; k < dim; ++k) damped.coeffRef(k, k) += lambda * std::max(diag(k), 1e-9);
      Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> solver(damped);
      if (solver.info() != Eigen::Success) {
        lambda *= 10.0;
        continue;
      }
      const Eigen::VectorXd delta = solver.solve(-g);
      if (!delta.allFinite()) {
        lambda *= 10.0;
        continue;
      }
      Problem trial = p;
      for (std::size_t i = 0; i < p.poses.size(); ++i) {
        trial.poses[i] = p.poses[i] * se3_exp(delta.segment<6>(6 * static_cast<Eigen::Index>(i)));
      }
      new_cost = total_cost(graph, trial, config.huber_delta);
      if (new_cost < cost) {
        p.poses = std::move(trial.poses);
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = true;
      } else {
        lambda = std::min(lambda * 10.0, 1e12);
      }
    }
    out.iterations = it + 1;
    if (!improved) break;
    const double change = (cost - new_cost) / std::max(cost, 1e-300);
    cost = new_cost;
    out.cost_history.push_back(cost);
    if (change < config.relative_tolerance || cost < 1e-24) break;
  }

  out.final_cost = cost;
  out.graph = graph;
  for (std::size_t i = 0; i < p.ids.size(); ++i) out.graph.set_pose(p.ids[i], p.poses[i]);
  return out;
}

bool admit_loop(const PoseGraph& graph, NodeId a, NodeId b, double radius) {
  const Vec3 pa = graph.node(a).pose.translation();
  const Vec3 pb = graph.node(b).pose.translation();
  for (const Factor* f : graph.loops_of(a)) {
    const NodeId other = f->a == a ? f->b : f->a;
    if ((graph.node(other).pose.translation() - pb).norm() <= radius) return false;
  }
  for (const Factor* f : graph.loops_of(b)) {
    const NodeId other = f->a == b ? f->b : f->a;
    if ((graph.node(other).pose.translation() - pa).norm() <= radius) return false;
  }
  return true;
}

}  // namespace fpr
