#include "fpr/trace.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "fpr/error.hpp"
#include "fpr/io.hpp"

namespace fpr {
namespace {

using nlohmann::json;

json verdict_json(const StageVerdict& v) {
  return {{"reached", v.reached}, {"accepted", v.accepted}, {"reason", v.reason}};
}

StageVerdict verdict_from(const json& j) {
  return {j.at("reached").get<bool>(), j.at("accepted").get<bool>(), j.at("reason").get<std::string>()};
}

}  // namespace

TraceRecord to_record(const LoopCandidate& c) {
  TraceRecord r;
  r.task = c.task;
  r.query = c.query;
  r.ref = c.ref;
  r.similarity = c.similarity;
  r.correspondences = c.correspondences;
  r.sgv_score = c.sgv_score;
  r.inlier_ratio = c.coarse.inlier_ratio;
  if (c.cycle) r.cycle_residual = c.cycle->residual;
  if (c.icp) {
    r.icp_rmse = c.icp->residual_rmse;
    r.icp_correction = c.icp->correction.translation;
  }
  r.descriptor_stage = c.descriptor_stage;
  r.coarse_stage = c.coarse_stage;
  r.icp_stage = c.icp_stage;
  r.admission = c.admission;
  if (c.coarse.accepted) r.transform = c.transform;
  r.truth = c.truth;
  r.injected_fault = c.injected_fault;
  return r;
}

std::string to_json_line(const TraceRecord& r) {
  json j = {{"task", r.task},
            {"query", r.query},
            {"ref", r.ref},
            {"similarity", r.similarity},
            {"correspondences", r.correspondences},
            {"sgv_score", r.sgv_score},
            {"inlier_ratio", r.inlier_ratio},
            {"stages",
             {{"descriptor", verdict_json(r.descriptor_stage)},
              {"coarse", verdict_json(r.coarse_stage)},
              {"icp", verdict_json(r.icp_stage)},
              {"admission", verdict_json(r.admission)}}},
            {"injected_fault", r.injected_fault}};
  if (r.cycle_residual) {
    j["cycle_residual"] = {{"translation", r.cycle_residual->translation},
                           {"rotation_deg", r.cycle_residual->rotation_deg}};
  }
  if (r.icp_rmse) j["icp_rmse"] = *r.icp_rmse;
  if (r.icp_correction) j["icp_correction"] = *r.icp_correction;
  if (r.transform) j["transform"] = io::format_pose(*r.transform);
  if (r.truth) j["truth"] = io::format_pose(*r.truth);
  return j.dump();
}

TraceRecord parse_json_line(const std::string& line, std::size_t line_number) {
  try {
    const json j = json::parse(line);
    TraceRecord r;
    r.task = j.at("task").get<std::string>();
    r.query = j.at("query").get<NodeId>();
    r.ref = j.at("ref").get<NodeId>();
    r.similarity = j.at("similarity").get<double>();
    r.correspondences = j.value("correspondences", std::size_t{0});
    r.sgv_score = j.value("sgv_score", 0.0);
    r.inlier_ratio = j.value("inlier_ratio", 0.0);
    const json& stages = j.at("stages");
    r.descriptor_stage = verdict_from(stages.at("descriptor"));
    r.coarse_stage = verdict_from(stages.at("coarse"));
    r.icp_stage = verdict_from(stages.at("icp"));
    r.admission = verdict_from(stages.at("admission"));
    if (j.contains("cycle_residual")) {
      r.cycle_residual = PoseError{j["cycle_residual"].at("translation").get<double>(),
                                   j["cycle_residual"].at("rotation_deg").get<double>()};
    }
    if (j.contains("icp_rmse")) r.icp_rmse = j["icp_rmse"].get<double>();
    if (j.contains("icp_correction")) r.icp_correction = j["icp_correction"].get<double>();
    if (j.contains("transform")) r.transform = io::parse_pose(j["transform"].get<std::string>());
    if (j.contains("truth")) r.truth = io::parse_pose(j["truth"].get<std::string>());
    r.injected_fault = j.value("injected_fault", false);
    return r;
  } catch (const std::exception& e) {
    throw DataError("trace line " + std::to_string(line_number) + ": " + e.what());
  }
}

void write_trace(std::ostream& out, const std::vector<LoopCandidate>& candidates) {
  for (const LoopCandidate& c : candidates) out << to_json_line(to_record(c)) << '\n';
}

void write_trace(const std::filesystem::path& path, const std::vector<LoopCandidate>& candidates) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write " + path.string());
  write_trace(out, candidates);
}

std::vector<TraceRecord> read_trace(std::istream& in) {
  std::vector<TraceRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    out.push_back(parse_json_line(line, number));
  }
  return out;
}

std::vector<TraceRecord> read_trace(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot read " + path.string());
  return read_trace(in);
}

}  // namespace fpr
