#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "joulemark/sensors.hpp"

namespace joulemark {

enum class PhaseKind { Training, Inference, Idle, Loadgen, Custom };

struct PhaseName {
  PhaseKind kind = PhaseKind::Custom;
  std::string label;  // only meaningful for Custom

  static PhaseName training() { return {PhaseKind::Training, {}}; }
  static PhaseName inference() { return {PhaseKind::Inference, {}}; }
  static PhaseName idle() { return {PhaseKind::Idle, {}}; }
  static PhaseName loadgen() { return {PhaseKind::Loadgen, {}}; }
  static PhaseName custom(std::string label) { return {PhaseKind::Custom, std::move(label)}; }

  bool operator==(const PhaseName&) const = default;
};

/// "training", "inference", "idle", "loadgen", or the custom label.
std::string to_string(const PhaseName& name);
/// Inverse of to_string; anything unrecognised becomes Custom(text).
PhaseName parse_phase_name(std::string_view text);

struct Phase {
  PhaseName name;
  std::int64_t t_start_ns = 0;
  std::int64_t t_end_ns = 0;

  [[nodiscard]] double duration_s() const { return static_cast<double>(t_end_ns - t_start_ns) * 1e-9; }
  bool operator==(const Phase&) const = default;
};

/// Throws InvariantViolation if any phase has t_end <= t_start or two
/// phases overlap in time.
void check_phases(std::span<const Phase> phases);

/// A sealed, validated sequence of power samples. The only way to obtain
/// one is through seal(), which enforces ordering and topology membership.
class PowerTrace {
 public:
  /// Throws EmptyTrace for zero samples, InvariantViolation for unordered
  /// samples, repeated per-domain timestamps, or foreign domains.
  static PowerTrace seal(SensorTopology topology, int interval_ms, std::vector<PowerSample> samples);

  [[nodiscard]] std::span<const PowerSample> samples() const { return samples_; }
  [[nodiscard]] const SensorTopology& topology() const { return topology_; }
  [[nodiscard]] int interval_ms() const { return interval_ms_; }
  [[nodiscard]] std::int64_t interval_ns() const { return static_cast<std::int64_t>(interval_ms_) * 1'000'000; }

  [[nodiscard]] std::int64_t first_ns() const { return samples_.front().timestamp_ns; }
  [[nodiscard]] std::int64_t last_ns() const { return samples_.back().timestamp_ns; }
  /// End of the covered interval: the last sample plus one nominal interval.
  [[nodiscard]] std::int64_t extent_end_ns() const { return last_ns() + interval_ns(); }
  /// Phase covering the whole trace extent.
  [[nodiscard]] Phase extent(PhaseName name = PhaseName::custom("session")) const;

  /// Per-domain views, in timestamp order.
  [[nodiscard]] std::vector<PowerSample> samples_for(const PowerDomain& domain) const;

  bool operator==(const PowerTrace&) const = default;

 private:
  PowerTrace(SensorTopology topology, int interval_ms, std::vector<PowerSample> samples);

  SensorTopology topology_;
  int interval_ms_;
  std::vector<PowerSample> samples_;
};

/// Serializes in the PowerTrace CSV format (LF endings, shortest decimals).
std::string trace_to_csv(const PowerTrace& trace);

/// Loads a trace CSV and seals it. The interval defaults to the median
/// per-domain sample gap, rounded to whole milliseconds.
PowerTrace load_trace_csv(const std::filesystem::path& path, std::optional<int> interval_ms = std::nullopt,
                          std::string topology_name = {});
PowerTrace trace_from_samples(std::vector<PowerSample> samples, std::optional<int> interval_ms = std::nullopt,
                              std::string topology_name = {});

}  // namespace joulemark
