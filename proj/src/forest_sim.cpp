#include "fpr/forest_sim.hpp"
#include "fpr/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>

#include "json.hpp"

#include "fpr/error.hpp"
#include "fpr/random.hpp"

namespace fpr {
namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kDeg = kPi / 180.0;

struct PresetParams {
  double trees_per_ha;
  double min_spacing;
  double clutter_per_ha;
  double relief;  // peak terrain amplitude, meters
};

PresetParams params_for(ForestPreset preset) {
  switch (preset) {
    case ForestPreset::kDense:
      return {550.0, 2.5, 600.0, 0.0};
    case ForestPreset::kSparse:
      return {120.0, 5.0, 50.0, 0.0};
    case ForestPreset::kHilly:
      return {350.0, 3.0, 200.0, 5.0};
  }
  throw ConfigError("unknown preset");
}

Terrain hilly_terrain(const Vec2& lo, const Vec2& hi, double relief, Rng& rng) {
  // Margin so rays leaving the stand still meet ground.
  constexpr double kMargin = 60.0;
  Terrain t;
  t.cell = 2.0;
  t.origin = lo - Vec2::Constant(kMargin);
  t.nx = static_cast<int>(std::ceil((hi.x() - lo.x() + 2 * kMargin) / t.cell)) + 1;
  t.ny = static_cast<int>(std::ceil((hi.y() - lo.y() + 2 * kMargin) / t.cell)) + 1;
  struct Wave {
    Vec2 k;
    double phase;
    double amp;
  };
  std::vector<Wave> waves;
  for (int i = 0; i < 6; ++i) {
    const double wavelength = rng.uniform(30.0, 80.0);
    const double dir = rng.uniform(0.0, 2.0 * kPi);
    waves.push_back({Vec2(std::cos(dir), std::sin(dir)) * (2.0 * kPi / wavelength), rng.uniform(0.0, 2.0 * kPi),
                     rng.uniform(0.5, 1.0)});
  }
  t.heights.resize(static_cast<std::size_t>(t.nx) * static_cast<std::size_t>(t.ny));
  double peak = 0.0;
  for (int iy = 0; iy < t.ny; ++iy) {
    for (int ix = 0; ix < t.nx; ++ix) {
      const Vec2 p = t.origin + Vec2(ix, iy) * t.cell;
      double h = 0.0;
      for (const Wave& w : waves) h += w.amp * std::cos(w.k.dot(p) + w.phase);
      t.heights[static_cast<std::size_t>(iy) * t.nx + ix] = h;
      peak = std::max(peak, std::abs(h));
    }
  }
  for (double& h : t.heights) h *= relief / peak;
  return t;
}

bool ray_cone(const Tree& tree, const Vec3& o, const Vec3& d, double s_min, double& s_out) {
  const Vec2 a(o.x() - tree.position.x(), o.y() - tree.position.y());
  const Vec2 dxy(d.x(), d.y());
  const double g0 = tree.radius - tree.taper * (o.z() - tree.base_z);
  const double g1 = -tree.taper * d.z();
  const double qa = dxy.squaredNorm() - g1 * g1;
  const double qb = 2.0 * (a.dot(dxy) - g0 * g1);
  const double qc = a.squaredNorm() - g0 * g0;
  double roots[2];
  int n = 0;
  if (std::abs(qa) < 1e-12) {
    if (std::abs(qb) < 1e-12) return false;
    roots[n++] = -qc / qb;
  } else {
    const double disc = qb * qb - 4.0 * qa * qc;
    if (disc < 0.0) return false;
    const double sq = std::sqrt(disc);
    const double r0 = (-qb - sq) / (2.0 * qa);
    const double r1 = (-qb + sq) / (2.0 * qa);
    roots[n++] = std::min(r0, r1);
    roots[n++] = std::max(r0, r1);
  }
  for (int i = 0; i < n; ++i) {
    const double s = roots[i];
    if (s < s_min) continue;
    const double z = o.z() + s * d.z();
    if (z < tree.base_z || z > tree.base_z + tree.height) continue;
    if (g0 + g1 * s <= 0.0) continue;
    s_out = s;
    return true;
  }
  return false;
}

bool ray_sphere(const ClutterBlob& b, const Vec3& o, const Vec3& d, double s_min, double& s_out) {
  const Vec3 oc = o - b.center;
  const double half_b = oc.dot(d);
  const double c = oc.squaredNorm() - b.radius * b.radius;
  const double disc = half_b * half_b - c;
  if (disc < 0.0) return false;
  const double sq = std::sqrt(disc);
  for (const double s : {-half_b - sq, -half_b + sq}) {
    if (s >= s_min) {
      s_out = s;
      return true;
    }
  }
  return false;
}

}  // namespace

double Terrain::height(double x, double y) const {
  if (heights.empty()) return base;
  const double fx = std::clamp((x - origin.x()) / cell, 0.0, static_cast<double>(nx - 1));
  const double fy = std::clamp((y - origin.y()) / cell, 0.0, static_cast<double>(ny - 1));
  const int ix = std::min(static_cast<int>(fx), nx - 2);
  const int iy = std::min(static_cast<int>(fy), ny - 2);
  const double u = fx - ix;
  const double v = fy - iy;
  auto at = [&](int i, int j) { return heights[static_cast<std::size_t>(j) * nx + i]; };
  return base + (1 - u) * (1 - v) * at(ix, iy) + u * (1 - v) * at(ix + 1, iy) + (1 - u) * v * at(ix, iy + 1) +
         u * v * at(ix + 1, iy + 1);
}

std::string to_string(ForestPreset preset) {
  switch (preset) {
    case ForestPreset::kDense:
      return "dense";
    case ForestPreset::kSparse:
      return "sparse";
    case ForestPreset::kHilly:
      return "hilly";
  }
  return "unknown";
}

ForestPreset parse_preset(const std::string& text) {
  if (text == "dense") return ForestPreset::kDense;
  if (text == "sparse") return ForestPreset::kSparse;
  if (text == "hilly") return ForestPreset::kHilly;
  throw ConfigError("unknown forest preset: " + text);
}

bool ForestWorld::contains(const Vec2& p) const {
  return p.x() >= min_corner.x() && p.x() <= max_corner.x() && p.y() >= min_corner.y() && p.y() <= max_corner.y();
}

ForestWorld ForestWorld::transformed(const Pose& pose) const {
  const Mat3 r = pose.rotation_matrix();
  if (std::abs(r(2, 2) - 1.0) > 1e-12) throw DataError("world transform must be a rotation about z");
  if (!terrain.is_flat()) throw DataError("world transform needs flat terrain");
  ForestWorld out = *this;
  const Eigen::Matrix2d r2 = r.topLeftCorner<2, 2>();
  const Vec2 t2 = pose.translation().head<2>();
  for (Tree& t : out.trees) {
    t.position = r2 * t.position + t2;
    t.base_z += pose.translation().z();
  }
  for (ClutterBlob& c : out.clutter) c.center = pose * c.center;
  out.terrain.base += pose.translation().z();
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity());
  Vec2 hi = -lo;
  for (const Vec2& c : {min_corner, max_corner, Vec2(min_corner.x(), max_corner.y()), Vec2(max_corner.x(), min_corner.y())}) {
    const Vec2 p = r2 * c + t2;
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  out.min_corner = lo;
  out.max_corner = hi;
  return out;
}

void ForestWorld::save_json(std::ostream& out) const {
  nlohmann::json j;
  j["preset"] = to_string(preset);
  j["seed"] = seed;
  j["min_corner"] = {min_corner.x(), min_corner.y()};
  j["max_corner"] = {max_corner.x(), max_corner.y()};
  j["min_spacing"] = min_spacing;
  j["clutter_density"] = clutter_density;
  auto& tj = j["trees"] = nlohmann::json::array();
  for (const Tree& t : trees) tj.push_back({t.position.x(), t.position.y(), t.radius, t.height, t.taper, t.base_z});
  auto& cj = j["clutter"] = nlohmann::json::array();
  for (const ClutterBlob& c : clutter) cj.push_back({c.center.x(), c.center.y(), c.center.z(), c.radius});
  j["terrain"] = {{"base", terrain.base},
                  {"origin", {terrain.origin.x(), terrain.origin.y()}},
                  {"cell", terrain.cell},
                  {"nx", terrain.nx},
                  {"ny", terrain.ny},
                  {"heights", terrain.heights}};
  out << j.dump(1) << '\n';
}

void ForestWorld::save_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open " + path.string());
  save_json(out);
}

ForestWorld ForestWorld::load_json(std::istream& in) {
  try {
    const nlohmann::json j = nlohmann::json::parse(in);
    ForestWorld w;
    w.preset = parse_preset(j.at("preset").get<std::string>());
    w.seed = j.at("seed").get<std::uint64_t>();
    w.min_corner = Vec2(j.at("min_corner").at(0), j.at("min_corner").at(1));
    w.max_corner = Vec2(j.at("max_corner").at(0), j.at("max_corner").at(1));
    w.min_spacing = j.at("min_spacing");
    w.clutter_density = j.at("clutter_density");
    for (const auto& t : j.at("trees")) {
      w.trees.push_back({Vec2(t.at(0), t.at(1)), t.at(2), t.at(3), t.at(4), t.at(5)});
    }
    for (const auto& c : j.at("clutter")) w.clutter.push_back({Vec3(c.at(0), c.at(1), c.at(2)), c.at(3)});
    const auto& tj = j.at("terrain");
    w.terrain.base = tj.at("base");
    w.terrain.origin = Vec2(tj.at("origin").at(0), tj.at("origin").at(1));
    w.terrain.cell = tj.at("cell");
    w.terrain.nx = tj.at("nx");
    w.terrain.ny = tj.at("ny");
    w.terrain.heights = tj.at("heights").get<std::vector<double>>();
    if (w.terrain.heights.size() != static_cast<std::size_t>(w.terrain.nx) * static_cast<std::size_t>(w.terrain.ny)) {
      throw DataError("terrain grid size mismatch");
    }
    return w;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("world json: ") + e.what());
  } catch (const ConfigError& e) {
    throw DataError(std::string("world json: ") + e.what());
  }
}

ForestWorld ForestWorld::load_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open " + path.string());
  return load_json(in);
}

ForestWorld generate_world(const WorldSpec& spec) {
  const PresetParams p = params_for(spec.preset);
  if (!(spec.max_corner.array() > spec.min_corner.array()).all()) throw ConfigError("world bounds are empty");
  ForestWorld w;
  w.preset = spec.preset;
  w.seed = spec.seed;
  w.min_corner = spec.min_corner;
  w.max_corner = spec.max_corner;
  w.min_spacing = p.min_spacing;
  w.clutter_density = p.clutter_per_ha;

  Rng rng(mix_seed(spec.seed, static_cast<std::uint64_t>(spec.preset)));
  if (p.relief > 0.0) w.terrain = hilly_terrain(w.min_corner, w.max_corner, p.relief, rng);

  // Dart throwing with a spacing-sized grid for the neighbor test.
  const std::size_t target = static_cast<std::size_t>(std::lround(p.trees_per_ha * w.area_ha()));
  const double cell = p.min_spacing;
  const Vec2 extent = w.max_corner - w.min_corner;
  const int gx = static_cast<int>(std::ceil(extent.x() / cell)) + 1;
  const int gy = static_cast<int>(std::ceil(extent.y() / cell)) + 1;
  std::vector<std::vector<std::uint32_t>> grid(static_cast<std::size_t>(gx) * gy);
  const std::size_t max_darts = 50 * target + 100;
  for (std::size_t dart = 0; dart < max_darts && w.trees.size() < target; ++dart) {
    const Vec2 pos(rng.uniform(w.min_corner.x(), w.max_corner.x()), rng.uniform(w.min_corner.y(), w.max_corner.y()));
    const int ix = static_cast<int>((pos.x() - w.min_corner.x()) / cell);
    const int iy = static_cast<int>((pos.y() - w.min_corner.y()) / cell);
    bool free = true;
    for (int y = std::max(0, iy - 1); y <= std::min(gy - 1, iy + 1) && free; ++y) {
      for (int x = std::max(0, ix - 1); x <= std::min(gx - 1, ix + 1) && free; ++x) {
        for (const std::uint32_t id : grid[static_cast<std::size_t>(y) * gx + x]) {
          if ((w.trees[id].position - pos).norm() < p.min_spacing) {
            free = false;
            break;
          }
        }
      }
    }
    if (!free) continue;
    Tree t;
    t.position = pos;
    t.radius = rng.uniform(0.1, 0.4);
    t.height = rng.uniform(8.0, 30.0);
    t.taper = 0.7 * t.radius / t.height;
    t.base_z = w.terrain.height(pos.x(), pos.y()) - 0.2;
    grid[static_cast<std::size_t>(iy) * gx + ix].push_back(static_cast<std::uint32_t>(w.trees.size()));
    w.trees.push_back(t);
  }

  const auto blobs = static_cast<std::size_t>(std::lround(p.clutter_per_ha * w.area_ha()));
  for (std::size_t i = 0; i < blobs; ++i) {
    const double x = rng.uniform(w.min_corner.x(), w.max_corner.x());
    const double y = rng.uniform(w.min_corner.y(), w.max_corner.y());
    const double z = w.terrain.height(x, y) + rng.uniform(0.1, 1.5);
    w.clutter.push_back({Vec3(x, y, z), rng.uniform(0.1, 0.35)});
  }
  return w;
}

ForestWorld generate_world(ForestPreset preset, std::uint64_t seed) {
  WorldSpec spec;
  spec.preset = preset;
  spec.seed = seed;
  return generate_world(spec);
}

SensorModel SensorModel::xt32() { return {}; }

SensorModel SensorModel::qt64() {
  SensorModel s;
  s.beams = 64;
  s.vertical_fov_deg = 100.0;
  s.horizontal_resolution_deg = 0.6;
  s.max_range = 30.0;
  s.min_range = 0.1;
  s.range_noise = 0.02;
  return s;
}

void SensorModel::validate() const {
  if (!(vertical_fov_deg > 0.0 && vertical_fov_deg < 180.0)) throw ConfigError("sensor FOV must be in (0, 180)");
  if (!(max_range > 0.0) || !(min_range >= 0.0) || min_range >= max_range) throw ConfigError("sensor range invalid");
  if (beams < 1 || !(horizontal_resolution_deg > 0.0)) throw ConfigError("sensor resolution invalid");
  if (!(range_noise >= 0.0)) throw ConfigError("range noise must be non-negative");
}

ForestScene::ForestScene(const ForestWorld& world, double cell) : world_(world), cell_(cell) {
  Vec2 lo = world.min_corner;
  Vec2 hi = world.max_corner;
  for (const Tree& t : world.trees) {
    lo = lo.cwiseMin(t.position - Vec2::Constant(t.radius));
    hi = hi.cwiseMax(t.position + Vec2::Constant(t.radius));
  }
  for (const ClutterBlob& c : world.clutter) {
    lo = lo.cwiseMin(c.center.head<2>() - Vec2::Constant(c.radius));
    hi = hi.cwiseMax(c.center.head<2>() + Vec2::Constant(c.radius));
  }
  grid_origin_ = lo;
  gx_ = static_cast<int>(std::ceil((hi.x() - lo.x()) / cell_)) + 1;
  gy_ = static_cast<int>(std::ceil((hi.y() - lo.y()) / cell_)) + 1;
  buckets_.resize(static_cast<std::size_t>(gx_) * gy_);
  auto insert = [&](const Vec2& c, double r, std::uint32_t id) {
    const int x0 = static_cast<int>((c.x() - r - lo.x()) / cell_);
    const int x1 = static_cast<int>((c.x() + r - lo.x()) / cell_);
    const int y0 = static_cast<int>((c.y() - r - lo.y()) / cell_);
    const int y1 = static_cast<int>((c.y() + r - lo.y()) / cell_);
    for (int y = std::max(0, y0); y <= std::min(gy_ - 1, y1); ++y) {
      for (int x = std::max(0, x0); x <= std::min(gx_ - 1, x1); ++x) {
        buckets_[static_cast<std::size_t>(y) * gx_ + x].push_back(id);
      }
    }
  };
  for (std::size_t i = 0; i < world.trees.size(); ++i) {
    insert(world.trees[i].position, world.trees[i].radius, static_cast<std::uint32_t>(i));
  }
  for (std::size_t i = 0; i < world.clutter.size(); ++i) {
    insert(world.clutter[i].center.head<2>(), world.clutter[i].radius,
           static_cast<std::uint32_t>(world.trees.size() + i));
  }
}

const std::vector<std::uint32_t>& ForestScene::bucket(int ix, int iy) const {
  return buckets_[static_cast<std::size_t>(iy) * gx_ + ix];
}

double ForestScene::cast(const Vec3& o, const Vec3& d, double max_range, const Vec2& skip_xy) const {
  double best = std::numeric_limits<double>::infinity();
  const std::size_t ntrees = world_.trees.size();

  auto test_bucket = [&](int ix, int iy) {
    for (const std::uint32_t id : bucket(ix, iy)) {
      double s = 0.0;
      if (id < ntrees) {
        const Tree& t = world_.trees[id];
        // The sensor never sees the inside of a trunk it stands in.
        if ((t.position - skip_xy).norm() < t.radius + 0.05) continue;
        if (ray_cone(t, o, d, 1e-6, s) && s < best) best = s;
      } else {
        const ClutterBlob& c = world_.clutter[id - ntrees];
        if ((c.center - o).norm() < c.radius + 0.05) continue;
        if (ray_sphere(c, o, d, 1e-6, s) && s < best) best = s;
      }
    }
  };

  // 2D DDA over the object grid, parametrized by distance along the ray.
  const double dx = d.x();
  const double dy = d.y();
  double s0 = 0.0;
  double s1 = max_range;
  const Vec2 lo = grid_origin_;
  const Vec2 hi = lo + Vec2(gx_, gy_) * cell_;
  for (int axis = 0; axis < 2 && s0 <= s1; ++axis) {
    const double oa = o[axis];
    const double da = d[axis];
    if (std::abs(da) < 1e-15) {
      if (oa < lo[axis] || oa >= hi[axis]) s1 = -1.0;
    } else {
      double ta = (lo[axis] - oa) / da;
      double tb = (hi[axis] - oa) / da;
      if (ta > tb) std::swap(ta, tb);
      s0 = std::max(s0, ta);
      s1 = std::min(s1, tb);
    }
  }
  if (s0 <= s1) {
    const Vec2 start(o.x() + s0 * dx, o.y() + s0 * dy);
    int ix = std::clamp(static_cast<int>((start.x() - lo.x()) / cell_), 0, gx_ - 1);
    int iy = std::clamp(static_cast<int>((start.y() - lo.y()) / cell_), 0, gy_ - 1);
    const int step_x = dx > 0 ? 1 : -1;
    const int step_y = dy > 0 ? 1 : -1;
    const double inf = std::numeric_limits<double>::infinity();
    const double delta_x = std::abs(dx) > 1e-15 ? cell_ / std::abs(dx) : inf;
    const double delta_y = std::abs(dy) > 1e-15 ? cell_ / std::abs(dy) : inf;
    double next_x = std::abs(dx) > 1e-15 ? (lo.x() + (ix + (dx > 0 ? 1 : 0)) * cell_ - o.x()) / dx : inf;
    double next_y = std::abs(dy) > 1e-15 ? (lo.y() + (iy + (dy > 0 ? 1 : 0)) * cell_ - o.y()) / dy : inf;
    double entry = s0;
    while (true) {
      if (entry > best || entry > s1) break;
      test_bucket(ix, iy);
      if (next_x < next_y) {
        entry = next_x;
        next_x += delta_x;
        ix += step_x;
        if (ix < 0 || ix >= gx_) break;
      } else {
        entry = next_y;
        next_y += delta_y;
        iy += step_y;
        if (iy < 0 || iy >= gy_) break;
      }
    }
  }

  // Terrain.
  const Terrain& tr = world_.terrain;
  const double limit = std::min(best, max_range);
  if (tr.is_flat()) {
    if (d.z() < 0.0) {
      const double s = (tr.base - o.z()) / d.z();
      if (s > 0.0 && s < best) best = s;
    }
  } else {
    constexpr double kStep = 0.5;
    auto above = [&](double s) {
      const Vec3 p = o + s * d;
      return p.z() - tr.height(p.x(), p.y());
    };
    double prev = 0.0;
    for (double s = kStep; s <= limit + kStep; s += kStep) {
      if (above(s) < 0.0) {
        double a = prev;
        double b = s;
        for (int i = 0; i < 30; ++i) {
          const double m = 0.5 * (a + b);
          (above(m) < 0.0 ? b : a) = m;
        }
        if (b < best) best = b;
        break;
      }
      prev = s;
    }
  }
  return best <= max_range ? best : -1.0;
}

PointCloud ForestScene::render(const SensorModel& sensor, const Pose& pose, std::uint64_t seed) const {
  sensor.validate();
  const Vec3 o = pose.translation();
  if (!(o.z() > world_.terrain.height(o.x(), o.y()))) throw DataError("sensor pose is not above the terrain");
  const Mat3 r = pose.rotation_matrix();
  const int columns = static_cast<int>(std::lround(360.0 / sensor.horizontal_resolution_deg));
  std::vector<double> elevations(static_cast<std::size_t>(sensor.beams));
  for (int b = 0; b < sensor.beams; ++b) {
    elevations[b] = sensor.beams == 1 ? 0.0
                                      : (-0.5 * sensor.vertical_fov_deg + b * sensor.vertical_fov_deg / (sensor.beams - 1)) * kDeg;
  }
  Rng rng(seed);
  PointCloud cloud;
  cloud.points.reserve(static_cast<std::size_t>(columns) * sensor.beams / 2);
  const Vec2 skip = o.head<2>();
  for (int c = 0; c < columns; ++c) {
    const double az = c * 2.0 * kPi / columns;
    const double ca = std::cos(az);
    const double sa = std::sin(az);
    for (const double el : elevations) {
      const Vec3 dir_s(std::cos(el) * ca, std::cos(el) * sa, std::sin(el));
      const Vec3 dir_w = r * dir_s;
      const double s = cast(o, dir_w, sensor.max_range, skip);
      if (s < sensor.min_range) continue;
      const double range = s + sensor.range_noise * rng.normal();
      cloud.points.push_back(range * dir_s);
    }
  }
  return cloud;
}

PointCloud render_scan(const ForestWorld& world, const SensorModel& sensor, const Pose& pose, std::uint64_t seed) {
  return ForestScene(world).render(sensor, pose, seed);
}

namespace {

struct PathSample {
  Vec2 position;
  double heading;
};

PathSample sample_path(const PathSpec& spec, double s) {
  const double total = spec.length();
  if (spec.reverse) s = total - s;
  PathSample out{};
  const double r = spec.radius;
  switch (spec.shape) {
    case PathShape::kFigureEight: {
      // Two tangent lobes meeting at the center, traversed in opposite
      // senses so the heading at the crossing is the same on every pass.
      const double lap = 4.0 * kPi * r;
      double u = std::fmod(s, lap);
      if (u < 0) u += lap;
      if (u < 2.0 * kPi * r) {
        const double th = kPi - u / r;
        out.position = spec.center + Vec2(r, 0) + r * Vec2(std::cos(th), std::sin(th));
        out.heading = std::atan2(-std::cos(th), std::sin(th));
      } else {
        const double th = (u - 2.0 * kPi * r) / r;
        out.position = spec.center - Vec2(r, 0) + r * Vec2(std::cos(th), std::sin(th));
        out.heading = std::atan2(std::cos(th), -std::sin(th));
      }
      break;
    }
    case PathShape::kCircle: {
      const double th = s / r;
      out.position = spec.center + r * Vec2(std::cos(th), std::sin(th));
      out.heading = std::atan2(std::cos(th), -std::sin(th));
      break;
    }
    case PathShape::kRectangle: {
      const double per = 2.0 * (spec.width + spec.height);
      double u = std::fmod(s, per);
      if (u < 0) u += per;
      const Vec2 c0 = spec.center - 0.5 * Vec2(spec.width, spec.height);
      const std::array<Vec2, 4> corners{c0, c0 + Vec2(spec.width, 0), c0 + Vec2(spec.width, spec.height),
                                        c0 + Vec2(0, spec.height)};
      const std::array<double, 4> lens{spec.width, spec.height, spec.width, spec.height};
      int e = 0;
      while (e < 3 && u > lens[e]) u -= lens[e++];
      const Vec2 dir = (corners[(e + 1) % 4] - corners[e]).normalized();
      out.position = corners[e] + u * dir;
      out.heading = std::atan2(dir.y(), dir.x());
      break;
    }
    case PathShape::kPolyline: {
      if (spec.waypoints.size() < 2) throw ConfigError("polyline path needs two waypoints");
      double u = std::clamp(s, 0.0, total);
      std::size_t e = 0;
      while (e + 2 < spec.waypoints.size() && u > (spec.waypoints[e + 1] - spec.waypoints[e]).norm()) {
        u -= (spec.waypoints[e + 1] - spec.waypoints[e]).norm();
        ++e;
      }
      const Vec2 dir = (spec.waypoints[e + 1] - spec.waypoints[e]).normalized();
      out.position = spec.waypoints[e] + u * dir;
      out.heading = std::atan2(dir.y(), dir.x());
      break;
    }
  }
  if (spec.reverse) out.heading += kPi;
  out.position += spec.lateral_offset * Vec2(-std::sin(out.heading), std::cos(out.heading));
  return out;
}

}  // namespace

double PathSpec::length() const {
  switch (shape) {
    case PathShape::kFigureEight:
      return laps * 4.0 * kPi * radius;
    case PathShape::kCircle:
      return laps * 2.0 * kPi * radius;
    case PathShape::kRectangle:
      return laps * 2.0 * (width + height);
    case PathShape::kPolyline: {
      double len = 0.0;
      for (std::size_t i = 1; i < waypoints.size(); ++i) len += (waypoints[i] - waypoints[i - 1]).norm();
      return len;
    }
  }
  return 0.0;
}

std::vector<Pose> drifted_odometry(const std::vector<Pose>& gt, const DriftModel& drift) {
  if (drift.translation_fraction == 0.0 && drift.direction_walk_deg == 0.0 && drift.yaw_walk_deg == 0.0) return gt;
  std::vector<Pose> odo;
  odo.reserve(gt.size());
  if (gt.empty()) return odo;
  Rng rng(mix_seed(drift.seed, 0xD21F7));
  double alpha = rng.uniform(0.0, 2.0 * kPi);
  double psi = 0.0;
  Vec3 err = Vec3::Zero();
  odo.push_back(gt.front());
  for (std::size_t k = 1; k < gt.size(); ++k) {
    const Vec3 delta = gt[k].translation() - gt[k - 1].translation();
    const double ds = delta.norm();
    psi += rng.normal(0.0, drift.yaw_walk_deg * kDeg * std::sqrt(ds));
    alpha += rng.normal(0.0, drift.direction_walk_deg * kDeg * std::sqrt(ds));
    const Mat3 rz = Eigen::AngleAxisd(psi, Vec3::UnitZ()).toRotationMatrix();
    err += (rz - Mat3::Identity()) * delta + drift.translation_fraction * ds * Vec3(std::cos(alpha), std::sin(alpha), 0.0);
    odo.emplace_back(Mat3(rz * gt[k].rotation_matrix()), Vec3(gt[k].translation() + err));
  }
  return odo;
}

Trajectory simulate_trajectory(const ForestWorld& world, const PathSpec& path, const DriftModel& drift) {
  if (!(path.speed > 0.0) || !(path.keyframe_rate_hz > 0.0)) throw ConfigError("path speed and rate must be positive");
  if (!(path.laps > 0.0)) throw ConfigError("path laps must be positive");
  const double total = path.length();
  const double spacing = path.speed / path.keyframe_rate_hz;
  const auto n = static_cast<std::size_t>(std::floor(total / spacing + 1e-9)) + 1;
  Trajectory traj;
  traj.length = total;
  for (std::size_t k = 0; k < n; ++k) {
    const double s = static_cast<double>(k) * spacing;
    const PathSample p = sample_path(path, s);
    if (!world.contains(p.position)) {
      throw DataError("path leaves the world bounds at arc length " + std::to_string(s) + " m");
    }
    const double z = world.terrain.height(p.position.x(), p.position.y()) + path.sensor_height;
    traj.timestamps.push_back(path.start_time + static_cast<double>(k) / path.keyframe_rate_hz);
    traj.ground_truth.push_back(Pose::from_yaw(p.heading, Vec3(p.position.x(), p.position.y(), z)));
  }
  traj.odometry = drifted_odometry(traj.ground_truth, drift);
  return traj;
}

void render_trajectory(const ForestWorld& world, const SensorModel& sensor, std::uint64_t seed, Trajectory& traj,
                       unsigned threads) {
  const ForestScene scene(world);
  traj.scans.assign(traj.ground_truth.size(), PointCloud{});
  parallel_for(traj.ground_truth.size(), threads, [&](std::size_t k) {
    traj.scans[k] = scene.render(sensor, traj.ground_truth[k], mix_seed(seed, k));
  });
}

}  // namespace fpr
