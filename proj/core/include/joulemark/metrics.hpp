#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/energy.hpp"
#include "joulemark/loadgen.hpp"
#include "joulemark/protocol.hpp"

namespace joulemark {

struct Session;

struct RunStats {
  std::int64_t samples_processed = 0;
  double duration_s = 0.0;
  std::optional<double> accuracy;
  /// Mean of the available per-domain utilisations, on [0, 1].
  std::optional<double> avg_utilisation;
  std::optional<double> gpu_utilisation;
  double avg_power_w = 0.0;
  std::optional<double> gpu_avg_power_w;
  std::optional<std::int64_t> gpu_vram_used_bytes;
  std::optional<std::int64_t> gpu_vram_total_bytes;

  /// Throws InvalidParams on a non-positive duration, negative counts,
  /// utilisation outside [0, 1] or VRAM used above total.
  void validate() const;
};

/// Keys read from the hello run_config for RunStats.
inline constexpr const char* kCfgCpuUtilisation = "cpu_utilisation";
inline constexpr const char* kCfgGpuUtilisation = "gpu_utilisation";
inline constexpr const char* kCfgDramUtilisation = "dram_utilisation";
inline constexpr const char* kCfgVramUsed = "gpu_vram_used_bytes";
inline constexpr const char* kCfgVramTotal = "gpu_vram_total_bytes";
inline constexpr const char* kCfgAccuracy = "accuracy";

/// RunStats for one phase report: samples from the report, accuracy from
/// the last epoch marker at or before the window end (else run_config),
/// power from the report's gross energy over the window.
RunStats run_stats_for(const Session& session, const EnergyReport& report);

/// A metric value, or the reason it is absent.
struct MetricCell {
  std::optional<double> value;
  std::string absent_reason;

  bool operator==(const MetricCell&) const = default;
};

using MetricColumns = std::vector<std::pair<std::string, MetricCell>>;

struct MetricRow {
  MetricCell energy_per_sample;
  MetricCell macs_param;
  MetricCell work_done;
  MetricCell overall_efficiency;
  MetricCell overall_efficiency_gpu;
  MetricCell parameters;
  MetricCell work_per_unit_power;
  MetricCell energy_scaling_factor;
  MetricCell gpu_energy_scaling_factor;
  MetricCell model_size_to_ram;
  MetricCell model_size_to_vram_total;

  [[nodiscard]] MetricColumns columns() const;
  static const std::vector<std::string>& column_names();
  bool operator==(const MetricRow&) const = default;
};

struct GenMetricRow {
  MetricCell energy_per_sample;
  MetricCell flops;
  MetricCell model_size_to_ram;
  MetricCell model_size_to_vram_total;
  MetricCell parameters;
  MetricCell request_rate;
  MetricCell cache_hit_rate;
  MetricCell average_output_token_length;

  [[nodiscard]] MetricColumns columns() const;
  static const std::vector<std::string>& column_names();
  bool operator==(const GenMetricRow&) const = default;
};

inline constexpr std::string_view kAbsentMissing = "missing input";
inline constexpr std::string_view kAbsentZeroDenominator = "zero denominator";

/// Every metric with a missing input or a zero denominator is absent.
MetricRow discriminative_metrics(const EnergyReport& energy, const std::optional<ModelDescriptor>& model,
                                 const RunStats& stats);

/// Throws NoCompletedRequests.
GenMetricRow generative_metrics(const EnergyReport& energy, const LoadgenSummary& load,
                                const std::optional<ModelDescriptor>& model,
                                std::optional<std::int64_t> vram_used_bytes = std::nullopt,
                                std::optional<std::int64_t> vram_total_bytes = std::nullopt);

/// Throws NoTokens.
double energy_per_output_token(const EnergyReport& energy, const LoadgenSummary& load);

/// CSV with a fixed header: the key columns followed by the metric
/// columns. Absent values are empty cells.
std::string metrics_csv(const std::vector<std::string>& key_names,
                        const std::vector<std::pair<std::vector<std::string>, MetricColumns>>& rows);

/// Parsed metrics CSV: key columns and metric columns, absent as nullopt.
struct MetricTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> cells;

  [[nodiscard]] std::optional<std::size_t> column(std::string_view name) const;
};

/// Throws ParseError on ragged rows.
MetricTable parse_metrics_csv(std::string_view text);

}  // namespace joulemark
