#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <string_view>

#include "fpr/geometry.hpp"

namespace fpr::io {

/// Binary little-endian PLY with float32 x,y,z and optional nx,ny,nz.
/// The sensor origin travels in a "comment sensor_origin x y z" line.
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);
void write_ply(std::ostream& out, const PointCloud& cloud);
PointCloud read_ply(std::istream& in);

/// "tx ty tz qx qy qz qw" with round-trip precision.
std::string format_pose(const Pose& pose);
/// Parses the 7 whitespace-separated values of format_pose.
Pose parse_pose(std::string_view text);

}  // namespace fpr::io
