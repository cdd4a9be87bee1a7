#include "fpr/io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <vector>

#include "fpr/error.hpp"

namespace fpr::io {
namespace {

static_assert(std::endian::native == std::endian::little, "PLY writer assumes a little-endian host");

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.pop_back();
  return s;
}

}  // namespace

void write_ply(std::ostream& out, const PointCloud& cloud) {
  cloud.validate();
  const bool normals = cloud.has_normals();
  out << "ply\nformat binary_little_endian 1.0\n";
  out << std::setprecision(17) << "comment sensor_origin " << cloud.sensor_origin.x() << ' '
      << cloud.sensor_origin.y() << ' ' << cloud.sensor_origin.z() << '\n';
  out << "element vertex " << cloud.size() << '\n';
  out << "property float x\nproperty float y\nproperty float z\n";
  if (normals) out << "property float nx\nproperty float ny\nproperty float nz\n";
  out << "end_header\n";
  std::vector<float> buffer;
  buffer.reserve(cloud.size() * (normals ? 6 : 3));
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (int k = 0; k < 3; ++k) buffer.push_back(static_cast<float>(cloud.points[i][k]));
    if (normals) {
      for (int k = 0; k < 3; ++k) buffer.push_back(static_cast<float>(cloud.normals[i][k]));
    }
  }
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw DataError("ply: write failed");
}

PointCloud read_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || trim(line) != "ply") throw DataError("ply: missing magic");
  std::size_t count = 0;
  bool binary_le = false;
  std::vector<std::string> properties;
  PointCloud cloud;
  bool in_vertex = false;
  while (true) {
    if (!std::getline(in, line)) throw DataError("ply: truncated header");
    line = trim(line);
    if (line == "end_header") break;
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      binary_le = fmt == "binary_little_endian";
    } else if (key == "comment") {
      std::string tag;
      ls >> tag;
      if (tag == "sensor_origin") ls >> cloud.sensor_origin.x() >> cloud.sensor_origin.y() >> cloud.sensor_origin.z();
    } else if (key == "element") {
      std::string name;
      ls >> name;
      in_vertex = name == "vertex";
      if (in_vertex) ls >> count;
    } else if (key == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      if (type != "float" && type != "float32") throw DataError("ply: only float32 vertex properties supported");
      properties.push_back(name);
    }
  }
  if (!binary_le) throw DataError("ply: only binary_little_endian is supported");
  const std::vector<std::string> xyz{"x", "y", "z"};
  const std::vector<std::string> xyzn{"x", "y", "z", "nx", "ny", "nz"};
  const bool normals = properties == xyzn;
  if (properties != xyz && !normals) throw DataError("ply: expected x,y,z[,nx,ny,nz] vertex layout");
  const std::size_t stride = properties.size();
  std::vector<float> buffer(count * stride);
  in.read(reinterpret_cast<char*>(buffer.data()), static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != buffer.size() * sizeof(float)) {
    throw DataError("ply: truncated vertex data");
  }
  cloud.points.resize(count);
  if (normals) cloud.normals.resize(count);
  for (std::size_t i = 0; i < count; ++i) {
    const float* v = &buffer[i * stride];
    cloud.points[i] = Vec3(v[0], v[1], v[2]);
    if (normals) cloud.normals[i] = Vec3(v[3], v[4], v[5]).normalized();
  }
  cloud.validate();
  return cloud;
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("ply: cannot open " + path.string());
  write_ply(out, cloud);
}

PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("ply: cannot open " + path.string());
  return read_ply(in);
}

std::string format_pose(const Pose& pose) {
  std::ostringstream os;
  os << std::setprecision(17);
  const Vec3& t = pose.translation();
  const Eigen::Quaterniond& q = pose.rotation();
  os << t.x() << ' ' << t.y() << ' ' << t.z() << ' ' << q.x() << ' ' << q.y() << ' ' << q.z() << ' '
     << q.w();
  return os.str();
}

Pose parse_pose(std::string_view text) {
  std::istringstream is{std::string(text)};
  double v[7];
  for (double& x : v) {
    if (!(is >> x)) throw DataError("pose: expected 7 numbers");
  }
  const Eigen::Quaterniond q(v[6], v[3], v[4], v[5]);
  if (!(q.norm() > 0.0)) throw DataError("pose: zero quaternion");
  Pose pose(q, Vec3(v[0], v[1], v[2]));
  if (!pose.is_finite()) throw DataError("pose: non-finite values");
  return pose;
}

}  // namespace fpr::io
