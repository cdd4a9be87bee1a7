#include "fpr/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>

#include "fpr/error.hpp"
#include "fpr/scan_context.hpp"

namespace fpr {

DescriptorDatabase::DescriptorDatabase(std::size_t dimension, std::string backend)
    : dim_(dimension), backend_(std::move(backend)) {
  if (dim_ == 0) throw DataError("descriptor database: zero dimension");
}

void DescriptorDatabase::add_scan(NodeId id, std::span<const double> descriptor) {
  if (descriptor.size() != dim_) throw DataError("descriptor database: dimension mismatch");
  if (row_of_.contains(id)) throw DataError("descriptor database: duplicate node id " + std::to_string(id));
  double norm2 = 0.0;
  for (double v : descriptor) norm2 += v * v;
  if (!(norm2 > 0.0) || !std::isfinite(norm2)) throw DataError("descriptor database: zero or non-finite descriptor");
  const double inv = 1.0 / std::sqrt(norm2);
  for (double v : descriptor) rows_.push_back(static_cast<float>(v * inv));
  row_of_.emplace(id, ids_.size());
  ids_.push_back(id);
}

std::span<const float> DescriptorDatabase::row(std::size_t index) const {
  return {rows_.data() + index * dim_, dim_};
}

std::span<const float> DescriptorDatabase::row_of(NodeId id) const {
  const auto it = row_of_.find(id);
  if (it == row_of_.end()) throw DataError("descriptor database: unknown node " + std::to_string(id));
  return row(it->second);
}

std::vector<double> DescriptorDatabase::similarities(std::span<const double> query) const {
  if (query.size() != dim_) throw DataError("descriptor database: dimension mismatch");
  std::vector<double> s(ids_.size(), 0.0);
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    const float* r = rows_.data() + i * dim_;
    double acc = 0.0;
    for (std::size_t j = 0; j < dim_; ++j) acc += static_cast<double>(r[j]) * query[j];
    s[i] = acc;
  }
  return s;
}

namespace {

constexpr char kMagic[4] = {'F', 'P', 'D', 'B'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw DataError("descriptor database: truncated file");
  return v;
}

}  // namespace

void DescriptorDatabase::save(std::ostream& out) const {
  out.write(kMagic, 4);
  put(out, kVersion);
  put(out, static_cast<std::uint64_t>(ids_.size()));
  put(out, static_cast<std::uint64_t>(dim_));
  put(out, static_cast<std::uint32_t>(backend_.size()));
  out.write(backend_.data(), static_cast<std::streamsize>(backend_.size()));
  out.write(reinterpret_cast<const char*>(rows_.data()), static_cast<std::streamsize>(rows_.size() * sizeof(float)));
  for (NodeId id : ids_) put(out, static_cast<std::uint64_t>(id));
  if (!out) throw DataError("descriptor database: write failed");
}

DescriptorDatabase DescriptorDatabase::load(std::istream& in) {
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kMagic, 4) != 0) throw DataError("descriptor database: bad magic");
  if (get<std::uint32_t>(in) != kVersion) throw DataError("descriptor database: unsupported version");
  const auto n = get<std::uint64_t>(in);
  const auto m = get<std::uint64_t>(in);
  const auto tag_len = get<std::uint32_t>(in);
  std::string tag(tag_len, '\0');
  in.read(tag.data(), tag_len);
  DescriptorDatabase db(m, tag);
  db.rows_.resize(n * m);
  in.read(reinterpret_cast<char*>(db.rows_.data()), static_cast<std::streamsize>(db.rows_.size() * sizeof(float)));
  if (!in) throw DataError("descriptor database: truncated matrix");
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto id = static_cast<NodeId>(get<std::uint64_t>(in));
    if (!db.row_of_.emplace(id, db.ids_.size()).second) throw DataError("descriptor database: duplicate node id");
    db.ids_.push_back(id);
  }
  return db;
}

void DescriptorDatabase::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("descriptor database: cannot open " + path.string());
  save(out);
}

DescriptorDatabase DescriptorDatabase::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("descriptor database: cannot open " + path.string());
  return load(in);
}

RetrievalResult query(const DescriptorDatabase& db, std::span<const double> descriptor,
                      const RetrievalQuery& request) {
  RetrievalResult result;
  result.threshold_used = request.tau_s;
  if (db.empty()) return result;
  if (descriptor.size() != db.dimension()) throw DataError("retrieval: dimension mismatch");
  double norm2 = 0.0;
  for (double v : descriptor) norm2 += v * v;
  if (std::abs(std::sqrt(norm2) - 1.0) > 1e-6) throw DataError("retrieval: query descriptor is not unit length");

  const std::vector<double> s = db.similarities(descriptor);
  std::vector<std::size_t> order(s.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return s[a] > s[b]; });

  const auto& ids = db.node_ids();
  for (std::size_t row : order) {
    if (result.candidates.size() >= request.k) break;
    if (s[row] < request.tau_s) break;
    const NodeId id = ids[row];
    if (request.exclusion) {
      const ExclusionWindow& ex = *request.exclusion;
      if (id == ex.query_id) continue;
      if (ex.nodes > 0 && id <= ex.query_id && ex.query_id - id <= ex.nodes) continue;
      if (ex.time_of && ex.query_time - ex.time_of(id) < ex.seconds) continue;
    }
    if (request.spatial && request.spatial->position_of) {
      const SpatialPrior& sp = *request.spatial;
      if ((sp.position_of(id) - sp.position).norm() > sp.radius) continue;
    }
    result.candidates.push_back({id, s[row]});
  }
  return result;
}

ThresholdChoice select_threshold_f1max(std::span<const LabeledScore> scores) {
  std::size_t positives = 0;
  for (const LabeledScore& s : scores) positives += s.is_true_pair ? 1 : 0;
  if (positives == 0 || positives == scores.size()) throw DataError("degenerate labels");

  std::vector<LabeledScore> sorted(scores.begin(), scores.end());
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const LabeledScore& a, const LabeledScore& b) { return a.similarity > b.similarity; });
  ThresholdChoice best;
  best.f1 = -1.0;
  std::size_t tp = 0;
  std::size_t fp = 0;
  for (std::size_t i = 0; i < sorted.size();) {
    const double tau = sorted[i].similarity;
    // Consume every score equal to tau: they are all predicted positive.
    while (i < sorted.size() && sorted[i].similarity == tau) {
      (sorted[i].is_true_pair ? tp : fp) += 1;
      ++i;
    }
    const double f1 = 2.0 * tp / static_cast<double>(2 * tp + fp + (positives - tp));
    if (f1 > best.f1) {
      best.tau_s = tau;
      best.f1 = f1;
      best.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
      best.recall = static_cast<double>(tp) / static_cast<double>(positives);
    }
  }
  return best;
}

namespace {

class ScanContextBackend final : public DescriptorBackend {
 public:
  explicit ScanContextBackend(ScanContextConfig config = {}) : config_(config) {}

  std::string tag() const override { return "scan_context"; }
  std::size_t dimension() const override { return static_cast<std::size_t>(config_.rings * config_.sectors); }

  std::vector<double> describe(const PointCloud& cloud) const override {
    const ScDescriptor d = compute_scan_context(cloud, config_);
    return {d.flat.data(), d.flat.data() + d.flat.size()};
  }

  std::optional<Pose> coarse_transform(const PointCloud& query, const PointCloud& ref) const override {
    const ShiftMatch m = shift_match(compute_scan_context(query, config_), compute_scan_context(ref, config_));
    return coarse_from_scan_context(query, ref, m);
  }

 private:
  ScanContextConfig config_;
};

struct Registry {
  std::mutex mutex;
  std::map<std::string, BackendFactory> factories{
      {"scan_context", [] { return std::make_unique<ScanContextBackend>(); }}};
};

Registry& registry() {
  static Registry r;
  return r;
}

}  // namespace

void register_backend(const std::string& tag, BackendFactory factory) {
  Registry& r = registry();
  std::lock_guard lock(r.mutex);
  r.factories[tag] = std::move(factory);
}

std::unique_ptr<DescriptorBackend> make_backend(const std::string& tag) {
  Registry& r = registry();
  std::lock_guard lock(r.mutex);
  const auto it = r.factories.find(tag);
  if (it == r.factories.end()) throw ConfigError("unknown descriptor backend: " + tag);
  return it->second();
}

std::vector<std::string> backend_tags() {
  Registry& r = registry();
  std::lock_guard lock(r.mutex);
  std::vector<std::string> tags;
  for (const auto& [tag, f] : r.factories) tags.push_back(tag);
  return tags;
}

}  // namespace fpr
