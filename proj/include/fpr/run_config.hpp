#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "fpr/tasks.hpp"

namespace fpr {

/// Layered key-value configuration. Documents look like
///
///   # comment
///   [cycle]
///   translation = 0.10
///
/// and set the key "cycle.translation". Later layers and `--set` overrides
/// replace earlier values; unknown keys and out-of-range values throw
/// ConfigError.
class RunConfig {
 public:
  RunConfig();

  void load(std::istream& in, const std::string& source = "<stream>");
  void load(const std::filesystem::path& path);
  /// "section.key=value".
  void set_override(const std::string& assignment);
  void set(const std::string& key, const std::string& value);

  const std::string& get(const std::string& key) const;
  std::uint64_t seed() const;

  /// Pipeline configuration built from the current values.
  PipelineConfig pipeline() const;

  /// Every key with its current value, in section order.
  void write(std::ostream& out) const;
  static std::vector<std::string> keys();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace fpr
