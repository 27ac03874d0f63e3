#pragma once

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "condredact/attack.hpp"
#include "condredact/closedform.hpp"
#include "condredact/metrics.hpp"

namespace condredact {

inline constexpr const char* kToolVersion = "1.0.0";
inline constexpr const char* kReportSchemaVersion = "1";

nlohmann::json eval_report_to_json(const EvalReport& report);

// Assembled run report. `results` holds everything reproducible from the
// echoed config; `diagnostics` holds timings and version info.
class ReportBuilder {
 public:
  explicit ReportBuilder(nlohmann::json config_echo);

  void add_timing(const std::string& phase, double seconds);
  void set_certificate(const RedactionCertificate& cert);
  void set_training(double initial_mmd, double final_mmd);
  void set_distill_summary(double first_loss, double last_loss,
                           const std::vector<double>& block_initial,
                           const std::vector<double>& block_final);
  void set_metrics(const EvalReport& report);
  void set_attack(double success_rate, int trials);
  void mark_failed(const std::string& phase, const std::string& what);

  nlohmann::json build() const;

 private:
  nlohmann::json config_;
  nlohmann::json results_ = nlohmann::json::object();
  nlohmann::json diagnostics_ = nlohmann::json::object();
};

// Structural validation of a report document; throws with the missing key.
void validate_report_schema(const nlohmann::json& report);

void write_json(const std::string& path, const nlohmann::json& j);
nlohmann::json read_json(const std::string& path);

void write_csv(const std::string& path,
               const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

void write_trace_csv(const std::string& path,
                     const std::vector<std::pair<int, double>>& trace);

std::string format_double(double v);  // shortest round-trip decimal

}  // namespace condredact
