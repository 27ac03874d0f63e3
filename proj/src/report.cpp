#include "condredact/report.hpp"

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace condredact {

using nlohmann::json;

json eval_report_to_json(const EvalReport& report) {
  json quality_edited = json::object();
  for (const auto& [name, v] : report.quality_edited) quality_edited[name] = v;
  json quality_teacher = json::object();
  for (const auto& [name, v] : report.quality_teacher) quality_teacher[name] = v;
  return json{{"faithfulness", report.faithfulness},
              {"r_precision", report.r_precision},
              {"c_vs_chat", report.c_vs_chat},
              {"quality_edited", std::move(quality_edited)},
              {"quality_teacher", std::move(quality_teacher)},
              {"quality_threshold", report.quality_threshold},
              {"teacher_within_threshold", report.teacher_within_threshold},
              {"trials", report.trials},
              {"mismatches", report.mismatches},
              {"quality_samples", report.quality_samples},
              {"seed", report.seed},
              {"substitution_notices", report.substitution_notices}};
}

ReportBuilder::ReportBuilder(json config_echo) : config_(std::move(config_echo)) {
  diagnostics_["tool_version"] = kToolVersion;
  diagnostics_["timings"] = json::object();
  results_["phases"] = json::array();
}

void ReportBuilder::add_timing(const std::string& phase, double seconds) {
  diagnostics_["timings"][phase] = seconds;
  results_["phases"].push_back(phase);
}

void ReportBuilder::set_certificate(const RedactionCertificate& cert) {
  results_["certificate"] = {{"preservation_error", cert.preservation_error},
                             {"projection_error", cert.projection_error}};
}

void ReportBuilder::set_training(double initial_mmd, double final_mmd) {
  results_["training"] = {{"initial_mmd", initial_mmd},
                          {"final_mmd", final_mmd}};
}

void ReportBuilder::set_distill_summary(double first_loss, double last_loss,
                                        const std::vector<double>& block_initial,
                                        const std::vector<double>& block_final) {
  json j = {{"first_loss", first_loss}, {"last_loss", last_loss}};
  if (!block_initial.empty()) {
    j["block_initial"] = block_initial;
    j["block_final"] = block_final;
  }
  results_["distill"] = std::move(j);
}

void ReportBuilder::set_metrics(const EvalReport& report) {
  results_["metrics"] = eval_report_to_json(report);
}

void ReportBuilder::set_attack(double success_rate, int trials) {
  results_["attack"] = {{"success_rate", success_rate}, {"trials", trials}};
}

void ReportBuilder::mark_failed(const std::string& phase,
                                const std::string& what) {
  results_["failure"] = {{"phase", phase}, {"error", what}};
}

json ReportBuilder::build() const {
  return json{{"schema_version", kReportSchemaVersion},
              {"config", config_},
              {"results", results_},
              {"diagnostics", diagnostics_}};
}

void validate_report_schema(const json& report) {
  for (const char* key : {"schema_version", "config", "results", "diagnostics"}) {
    if (!report.contains(key)) {
      throw std::invalid_argument(std::string("report: missing key \"") + key +
                                  "\"");
    }
  }
  if (report.at("schema_version").get<std::string>() != kReportSchemaVersion) {
    throw std::invalid_argument("report: unsupported schema version");
  }
  const json& diagnostics = report.at("diagnostics");
  if (!diagnostics.contains("tool_version") || !diagnostics.contains("timings")) {
    throw std::invalid_argument("report: diagnostics incomplete");
  }
  const json& results = report.at("results");
  if (!results.contains("phases")) {
    throw std::invalid_argument("report: results.phases missing");
  }
}

void write_json(const std::string& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_json: cannot write " + path);
  out << j.dump(2) << "\n";
}

json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("read_json: cannot read " + path);
  json j;
  in >> j;
  return j;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_csv: cannot write " + path);
  for (std::size_t i = 0; i < header.size(); ++i) {
    out << (i ? "," : "") << header[i];
  }
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) {
      out << (i ? "," : "") << format_double(row[i]);
    }
    out << "\n";
  }
}

void write_trace_csv(const std::string& path,
                     const std::vector<std::pair<int, double>>& trace) {
  std::vector<std::vector<double>> rows;
  rows.reserve(trace.size());
  for (const auto& [step, loss] : trace) {
    rows.push_back({static_cast<double>(step), loss});
  }
  write_csv(path, {"step", "loss"}, rows);
}

std::string format_double(double v) {
  // shortest representation that parses back to the same bits
  for (int precision = 1; precision <= 17; ++precision) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) return buf;
  }
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace condredact
