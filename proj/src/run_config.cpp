#include "fpr/run_config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <istream>
#include <ostream>

#include "fpr/error.hpp"

namespace fpr {
namespace {

enum class Range { kPositive, kNonNegative, kUnit, kAny };

struct Key {
  const char* name;
  const char* fallback;
  Range range;
  bool integer;
  std::function<void(PipelineConfig&, const std::string&)> apply;
};

double to_double(const std::string& key, const std::string& text) {
  double v = 0.0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size() || !std::isfinite(v)) {
    throw ConfigError(key + ": not a number: '" + text + "'");
  }
  return v;
}

long long to_integer(const std::string& key, const std::string& text) {
  long long v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || end != text.data() + text.size()) throw ConfigError(key + ": not an integer: '" + text + "'");
  return v;
}

#define FPR_D(field) [](PipelineConfig& c, const std::string& v) { c.field = std::stod(v); }
#define FPR_I(field) [](PipelineConfig& c, const std::string& v) { c.field = static_cast<decltype(c.field)>(std::stoll(v)); }

// Noise values are information-matrix diagonals; each key sets one block.
void set_block(Mat6& info, bool translation, double value) {
  for (int i = 0; i < 3; ++i) info(translation ? i : i + 3, translation ? i : i + 3) = value;
}

const std::vector<Key>& table() {
  static const std::vector<Key> keys = {
      {"retrieval.backend", "scan_context", Range::kAny, false,
       [](PipelineConfig& c, const std::string& v) { c.backend = v; }},
      {"retrieval.top_k", "3", Range::kPositive, true, FPR_I(top_k)},
      {"retrieval.tau_s", "0.3", Range::kUnit, false, FPR_D(tau_s)},
      {"retrieval.exclusion_seconds", "30", Range::kNonNegative, false, FPR_D(exclusion_seconds)},
      {"retrieval.exclusion_nodes", "0", Range::kNonNegative, true, FPR_I(exclusion_nodes)},
      {"retrieval.spatial_radius", "20", Range::kPositive, false, FPR_D(spatial_radius)},

      {"features.voxel", "0.4", Range::kPositive, false, FPR_D(features.voxel)},
      {"features.normal_neighbors", "16", Range::kPositive, true, FPR_I(features.normal_neighbors)},
      {"features.radius", "3.5", Range::kPositive, false, FPR_D(features.feature_radius)},
      {"features.keypoint_range", "20", Range::kPositive, false, FPR_D(features.keypoint_range)},
      {"features.max_normal_z", "0.8", Range::kUnit, false, FPR_D(features.max_normal_z)},
      {"features.min_points", "50", Range::kPositive, true, FPR_I(features.min_points)},
      {"features.match_ratio", "0.9", Range::kUnit, false, FPR_D(match_ratio)},

      {"ransac.max_iterations", "2000", Range::kPositive, true, FPR_I(ransac.max_iterations)},
      {"ransac.inlier_distance", "0.5", Range::kPositive, false, FPR_D(ransac.inlier_distance)},
      {"ransac.early_exit_ratio", "0.8", Range::kUnit, false, FPR_D(ransac.early_exit_ratio)},
      {"ransac.min_inliers", "10", Range::kPositive, true, FPR_I(ransac.min_inliers)},
      {"ransac.min_inlier_ratio", "0.2", Range::kUnit, false, FPR_D(ransac.min_inlier_ratio)},
      {"ransac.seed", "1", Range::kNonNegative, true, FPR_I(ransac.seed)},

      {"sgv.epsilon", "0.3", Range::kPositive, false, FPR_D(sgv_epsilon)},
      {"sgv.min_score", "0.2", Range::kUnit, false, FPR_D(sgv_min_score)},

      {"cycle.translation", "0.10", Range::kPositive, false, FPR_D(cycle.translation)},
      {"cycle.rotation_deg", "1.0", Range::kPositive, false, FPR_D(cycle.rotation_deg)},
      {"cycle.partner_gap", "2", Range::kPositive, true, FPR_I(cycle_partner_gap)},
      {"cycle.hold_seconds", "10", Range::kPositive, false, FPR_D(cycle_hold_seconds)},
      {"cycle.merge_partner_gap", "5", Range::kPositive, true, FPR_I(merge_partner_gap)},

      {"icp.voxel", "0.3", Range::kPositive, false, FPR_D(icp_voxel)},
      {"icp.max_iterations", "30", Range::kPositive, true, FPR_I(icp.max_iterations)},
      {"icp.max_match_distance", "1.0", Range::kPositive, false, FPR_D(icp.max_match_distance)},
      {"icp.trim_fraction", "0.1", Range::kNonNegative, false, FPR_D(icp.trim_fraction)},
      {"icp.max_residual", "0.20", Range::kPositive, false, FPR_D(icp.max_residual)},
      {"icp.min_inlier_fraction", "0.20", Range::kUnit, false, FPR_D(icp.min_inlier_fraction)},
      {"icp.max_correction", "1.0", Range::kPositive, false, FPR_D(icp.max_correction)},

      {"graph.density_radius", "2.0", Range::kPositive, false, FPR_D(density_radius)},
      {"graph.odometry_translation_info", "100", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.odometry, true, std::stod(v)); }},
      {"graph.odometry_rotation_info", "400", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.odometry, false, std::stod(v)); }},
      {"graph.loop_translation_info", "50", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.loop, true, std::stod(v)); }},
      {"graph.loop_rotation_info", "200", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.loop, false, std::stod(v)); }},
      {"graph.inter_mission_translation_info", "50", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.inter_mission, true, std::stod(v)); }},
      {"graph.inter_mission_rotation_info", "200", Range::kPositive, false,
       [](PipelineConfig& c, const std::string& v) { set_block(c.noise.inter_mission, false, std::stod(v)); }},
      {"graph.max_iterations", "100", Range::kPositive, true, FPR_I(optimizer.max_iterations)},
      {"graph.relative_tolerance", "1e-9", Range::kPositive, false, FPR_D(optimizer.relative_tolerance)},
      {"graph.huber_delta", "0", Range::kNonNegative, false,
       [](PipelineConfig& c, const std::string& v) {
         const double d = std::stod(v);
         if (d > 0.0) c.optimizer.huber_delta = d;
         else c.optimizer.huber_delta.reset();
       }},

      {"reloc.bootstrap_translation", "0.5", Range::kPositive, false, FPR_D(bootstrap_translation)},
      {"reloc.bootstrap_rotation_deg", "5.0", Range::kPositive, false, FPR_D(bootstrap_rotation_deg)},
      {"reloc.lost_after_failures", "5", Range::kPositive, true, FPR_I(lost_after_failures)},

      {"run.seed", "1", Range::kNonNegative, true, [](PipelineConfig&, const std::string&) {}},
  };
  return keys;
}

#undef FPR_D
#undef FPR_I

const Key& find_key(const std::string& name) {
  for (const Key& k : table()) {
    if (name == k.name) return k;
  }
  throw ConfigError("unknown config key: " + name);
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

RunConfig::RunConfig() {
  for (const Key& k : table()) values_[k.name] = k.fallback;
}

void RunConfig::set(const std::string& key, const std::string& raw) {
  const Key& k = find_key(key);
  const std::string value = trim(raw);
  if (k.range != Range::kAny) {
    const double v = k.integer ? static_cast<double>(to_integer(key, value)) : to_double(key, value);
    const bool ok = k.range == Range::kPositive      ? v > 0.0
                    : k.range == Range::kNonNegative ? v >= 0.0
                                                     : v > 0.0 && v <= 1.0;
    if (!ok) {
      const char* want = k.range == Range::kPositive ? "positive" : k.range == Range::kNonNegative ? "non-negative" : "in (0, 1]";
      throw ConfigError(key + " must be " + want + ", got " + value);
    }
  } else if (value.empty()) {
    throw ConfigError(key + " must not be empty");
  }
  values_[key] = value;
}

void RunConfig::load(std::istream& in, const std::string& source) {
  std::string line;
  std::string section;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    const auto hash = line.find('#');
    const std::string text = trim(hash == std::string::npos ? line : line.substr(0, hash));
    if (text.empty()) continue;
    const std::string where = source + ":" + std::to_string(number) + ": ";
    if (text.front() == '[') {
      if (text.back() != ']') throw ConfigError(where + "unterminated section header");
      section = trim(text.substr(1, text.size() - 2));
      continue;
    }
    const auto eq = text.find('=');
    if (eq == std::string::npos) throw ConfigError(where + "expected key = value");
    const std::string key = trim(text.substr(0, eq));
    try {
      set(section.empty() ? key : section + "." + key, text.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
}

void RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  load(in, path.string());
}

void RunConfig::set_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: " + assignment);
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

const std::string& RunConfig::get(const std::string& key) const {
  find_key(key);
  return values_.at(key);
}

std::uint64_t RunConfig::seed() const { return static_cast<std::uint64_t>(std::stoull(get("run.seed"))); }

PipelineConfig RunConfig::pipeline() const {
  PipelineConfig c;
  for (const Key& k : table()) k.apply(c, values_.at(k.name));
  make_backend(c.backend);  // unknown backends are a configuration error
  return c;
}

void RunConfig::write(std::ostream& out) const {
  std::string section;
  for (const Key& k : table()) {
    const std::string name = k.name;
    const auto dot = name.find('.');
    if (name.substr(0, dot) != section) {
      out << (section.empty() ? "" : "\n") << '[' << name.substr(0, dot) << "]\n";
      section = name.substr(0, dot);
    }
    out << name.substr(dot + 1) << " = " << values_.at(name) << '\n';
  }
}

std::vector<std::string> RunConfig::keys() {
  std::vector<std::string> out;
  for (const Key& k : table()) out.emplace_back(k.name);
  return out;
}

}  // namespace fpr
