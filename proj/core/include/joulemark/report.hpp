#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/analysis.hpp"
#include "joulemark/energy.hpp"
#include "joulemark/loadgen.hpp"
#include "joulemark/metrics.hpp"
#include "joulemark/protocol.hpp"
#include "joulemark/session.hpp"

namespace joulemark {

std::string_view toolkit_version() noexcept;

struct RunManifest {
  std::string session_id;
  std::string kind;  // "discriminative" or "generative"
  std::string topology_name;
  std::string fingerprint;
  std::optional<ModelDescriptor> model;
  nlohmann::json run_config;  // free-form hyperparameters
  int repeat_index = 1;
  std::string toolkit_version;
  std::string started_at;   // UTC, ISO 8601; may be empty for replays
  std::string finished_at;
  int interval_ms = 0;
  nlohmann::json diagnostics;  // SessionDiagnostics JSON, null when absent

  /// Throws InvariantViolation for repeat_index < 1 or a fingerprint that
  /// differs from `baseline_fingerprint` (when given).
  void validate(std::string_view baseline_fingerprint = {}) const;
};

nlohmann::ordered_json to_json(const RunManifest& manifest);
RunManifest manifest_from_json(const nlohmann::json& doc);

/// Manifest for a finalized session.
RunManifest manifest_for(const Session& session, std::string kind, int repeat_index = 1);

/// 16 hex digits derived from the given parts, so identical inputs map to
/// the same id and different scenarios never collide in practice.
std::string content_session_id(std::initializer_list<std::string_view> parts);

// ---------------------------------------------------------------------------
// Per-session evaluation

struct PhaseMetrics {
  std::string phase;
  MetricRow row;
  RunStats stats;
};

struct SessionEvaluation {
  SessionEnergy energy;
  std::vector<PhaseMetrics> metrics;  // one per phase report
};

SessionEvaluation evaluate_session(const Session& session, const IdleBaseline& baseline, EnergyOptions options = {});

/// `session_id,phase,<metric columns>` with one row per phase.
std::string session_metrics_csv(std::string_view session_id, const SessionEvaluation& evaluation);

// ---------------------------------------------------------------------------
// Averaging

struct MetricSummary {
  std::string name;
  std::optional<double> mean;
  std::optional<double> stddev;  // sample standard deviation; absent for count < 2
  std::size_t count = 0;
};

struct AveragedResult {
  std::map<std::string, std::string> key;  // model, config, phase, rps
  std::size_t run_count = 0;
  std::vector<MetricSummary> metrics;
};

struct KeyedRow {
  std::map<std::string, std::string> key;
  MetricColumns columns;
};

/// Mean and sample standard deviation per metric over rows sharing one key;
/// absent cells are skipped per metric. Throws EmptyGroup, KeyMismatch.
AveragedResult average_runs(const std::vector<KeyedRow>& rows);

/// Groups rows by key (in key order) and averages each group.
std::vector<AveragedResult> average_grouped(const std::vector<KeyedRow>& rows);

std::string averaged_csv(const std::vector<AveragedResult>& results);
nlohmann::ordered_json to_json(const std::vector<AveragedResult>& results);

// ---------------------------------------------------------------------------
// Results directory

inline constexpr const char* kManifestFile = "manifest.json";
inline constexpr const char* kTraceFile = "trace.csv";
inline constexpr const char* kEnergyFile = "energy.json";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kSweepFile = "sweep.json";
inline constexpr const char* kCorrelationsFile = "correlations.csv";
inline constexpr const char* kCorrelationDetailFile = "correlations_detail.csv";
inline constexpr const char* kLassoFile = "lasso.json";

/// Writes `<out>/<session id>/{manifest.json, trace.csv, energy.json,
/// metrics.csv}` and returns the session directory. Throws IoError.
std::filesystem::path emit_session(const std::filesystem::path& out, const RunManifest& manifest,
                                   const PowerTrace& trace, const nlohmann::ordered_json& energy,
                                   const std::string& metrics_csv);

struct SweepPoint {
  LoadgenSummary summary;
  EnergyReport energy;
  GenMetricRow metrics;
  std::optional<double> joules_per_token;
  std::vector<RequestRecord> records;
};

/// Writes `<out>/sweep-<id>/sweep.json` plus one `rps-<value>/` directory
/// per point (summary.json, energy.json, metrics.csv, requests.jsonl) and
/// the shared manifest and trace. Returns the sweep directory.
std::filesystem::path emit_sweep(const std::filesystem::path& out, const RunManifest& manifest,
                                 const PowerTrace& trace, const std::vector<SweepPoint>& points,
                                 std::optional<double> saturation_rps);

/// Writes correlations.csv, correlations_detail.csv and, when given,
/// lasso.json into `out`.
void emit_analysis(const std::filesystem::path& out,
                   const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& correlations,
                   const std::optional<LassoResult>& lasso);

/// Every metrics.csv under `dir` (recursively), in path order.
std::vector<std::filesystem::path> find_metric_files(const std::filesystem::path& dir);

}  // namespace joulemark
