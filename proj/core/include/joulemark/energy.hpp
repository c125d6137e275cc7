#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/protocol.hpp"
#include "joulemark/sensors.hpp"
#include "joulemark/trace.hpp"

namespace joulemark {

struct Session;

enum class IntegrationMethod { LeftRectangle, Trapezoidal };

/// How the idle term is sized. ScaleByWindow charges baseline power over
/// the active window; FixedIdleDuration charges it over the calibration
/// run's own duration regardless of the window.
enum class IdleMode { ScaleByWindow, FixedIdleDuration };

std::string_view to_string(IntegrationMethod m) noexcept;
std::string_view to_string(IdleMode m) noexcept;
IntegrationMethod parse_integration_method(std::string_view text);
IdleMode parse_idle_mode(std::string_view text);

using DomainEnergy = std::map<PowerDomain, double>;

/// Joules per topology domain over samples with timestamps in
/// [window.t_start, window.t_end). Each sample is weighted by the gap to
/// the next sample of its domain; a domain's final sample uses the
/// configured interval. Domains with no samples in the window report 0.
///
/// Throws WindowOutOfRange when the window is empty or leaves
/// [first sample, last sample + interval], EmptyWindow when no sample of
/// any domain falls inside it.
DomainEnergy integrate(const PowerTrace& trace, const Phase& window,
                       IntegrationMethod method = IntegrationMethod::LeftRectangle);

struct IdleBaseline {
  std::map<PowerDomain, double> per_domain_avg_w;
  double duration_s = 0.0;
  std::string captured_at;  // UTC, ISO 8601
  std::string fingerprint;

  [[nodiscard]] double total_w() const;
};

inline constexpr double kMinIdleDurationS = 10.0;

/// Per-domain mean power over the whole trace. The duration is the trace
/// extent (last - first + one interval). Throws TooShort under 10 s.
IdleBaseline calibrate_idle(const PowerTrace& trace, std::string captured_at = {});

nlohmann::ordered_json to_json(const IdleBaseline& baseline);
/// Throws ParseError.
IdleBaseline baseline_from_json(const nlohmann::json& doc);
void save_baseline(const std::filesystem::path& path, const IdleBaseline& baseline);
IdleBaseline load_baseline(const std::filesystem::path& path);

struct EnergyReport {
  Phase window;
  DomainEnergy gross_j;
  double gross_total_j = 0.0;
  double idle_j = 0.0;
  double net_j = 0.0;
  std::int64_t sample_count = 0;  // workload samples processed in the window
  std::vector<std::string> flags;

  bool operator==(const EnergyReport&) const = default;
};

inline constexpr std::string_view kFlagNetNegative = "NET_NEGATIVE";
inline constexpr std::string_view kFlagIdleFixedDuration = "IDLE_FIXED_DURATION";

/// Subtracts the idle term from `gross`. Throws TopologyMismatch when the
/// gross domains do not match the baseline fingerprint.
EnergyReport net_energy(const DomainEnergy& gross, const IdleBaseline& baseline, const Phase& window,
                        IdleMode mode = IdleMode::ScaleByWindow);

struct EnergyOptions {
  IntegrationMethod method = IntegrationMethod::LeftRectangle;
  IdleMode idle_mode = IdleMode::ScaleByWindow;
};

struct SessionEnergy {
  std::vector<EnergyReport> phases;  // in phase order
  EnergyReport session;              // whole trace extent
  EnergyOptions options;
};

/// Sum of sample_count markers with timestamps in (t_start, t_end].
std::int64_t samples_in_window(std::span<const Marker> markers, const Phase& window);

/// One report per phase plus a whole-session report.
SessionEnergy per_phase_energy(const Session& session, const IdleBaseline& baseline, EnergyOptions options = {});

nlohmann::ordered_json to_json(const EnergyReport& report);
EnergyReport energy_report_from_json(const nlohmann::json& doc);

nlohmann::ordered_json to_json(const SessionEnergy& energy, std::string_view session_id, const IdleBaseline& baseline);

}  // namespace joulemark
