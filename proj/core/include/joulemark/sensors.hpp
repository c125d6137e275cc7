#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace joulemark {

enum class DomainKind { CpuPackage, Gpu, Dram };

std::string_view to_string(DomainKind kind) noexcept;
/// Accepts the snake_case spellings used on disk: cpu_package, gpu, dram.
DomainKind parse_domain_kind(std::string_view text);

/// One independently metered hardware unit. `index` is the device ordinal
/// within its kind, so a dual-GPU host has {Gpu, 0} and {Gpu, 1}.
struct PowerDomain {
  DomainKind kind = DomainKind::CpuPackage;
  int index = 0;

  auto operator<=>(const PowerDomain&) const = default;
};

/// "gpu:1" style label.
std::string to_string(const PowerDomain& domain);
/// Inverse of to_string. Throws ParseError.
PowerDomain parse_power_domain(std::string_view text);

/// Raw cumulative energy counter snapshot, as exposed by powercap-style
/// `energy_uj` files. The counter wraps at `max_range_uj`.
struct CounterReading {
  std::int64_t timestamp_ns = 0;
  std::uint64_t energy_uj = 0;
  std::uint64_t max_range_uj = 0;
};

struct PowerSample {
  std::int64_t timestamp_ns = 0;
  PowerDomain domain;
  double power_w = 0.0;

  bool operator==(const PowerSample&) const = default;
};

/// Parameters of the DRAM analytical model P = n_dimm * C * V^2 * f / 2.
struct DramModelParams {
  int n_dimm = 0;
  double capacitance_f = 0.0;
  double voltage_v = 0.0;
  double frequency_hz = 0.0;
};

/// Average power between two counter readings, handling one wraparound of
/// the counter. Throws ZeroInterval, RangeMismatch or InvalidParams.
double counter_to_power(const CounterReading& prev, const CounterReading& curr);

/// Throws InvalidParams unless every field is strictly positive.
double dram_model_power(const DramModelParams& params);

// ---------------------------------------------------------------------------
// Sensors

enum class SensorKind { Counter, InstantaneousQuery, Model, Synthetic };

std::string_view to_string(SensorKind kind) noexcept;

/// A readable power source for one domain. Not thread-safe: a sensor is
/// driven by exactly one sampler.
class Sensor {
 public:
  virtual ~Sensor() = default;

  [[nodiscard]] virtual PowerDomain domain() const = 0;
  [[nodiscard]] virtual SensorKind kind() const = 0;

  /// Called once on the sampling context before the first read.
  virtual void start(std::int64_t now_ns) { (void)now_ns; }

  /// Power attributed to the tick at `now_ns`, in watts. Counter sensors
  /// return the average since the previous read. Throws SensorReadError.
  virtual double read_w(std::int64_t now_ns) = 0;
};

/// Source of raw counter values; `read()` returns the current cumulative
/// microjoules and the counter modulus.
class CounterSource {
 public:
  virtual ~CounterSource() = default;
  virtual CounterReading read(std::int64_t now_ns) = 0;
};

/// Reads `energy_uj` and `max_energy_range_uj` from a powercap-style
/// directory (e.g. /sys/class/powercap/intel-rapl:0).
class CounterFileSource final : public CounterSource {
 public:
  explicit CounterFileSource(std::filesystem::path dir);
  CounterReading read(std::int64_t now_ns) override;
  [[nodiscard]] const std::filesystem::path& dir() const { return dir_; }
  /// Contents of the `name` file, empty if missing.
  [[nodiscard]] std::string zone_name() const;

 private:
  std::filesystem::path dir_;
};

/// Deterministic counter that accumulates a constant power, with an
/// optional starting offset so tests can force wraparound.
class SyntheticCounterSource final : public CounterSource {
 public:
  SyntheticCounterSource(double power_w, std::uint64_t max_range_uj, std::uint64_t start_uj = 0);
  CounterReading read(std::int64_t now_ns) override;

 private:
  double power_w_;
  std::uint64_t max_range_uj_;
  std::uint64_t start_uj_;
  std::optional<std::int64_t> origin_ns_;
};

class CounterSensor final : public Sensor {
 public:
  CounterSensor(PowerDomain domain, std::unique_ptr<CounterSource> source);

  [[nodiscard]] PowerDomain domain() const override { return domain_; }
  [[nodiscard]] SensorKind kind() const override { return SensorKind::Counter; }
  void start(std::int64_t now_ns) override;
  double read_w(std::int64_t now_ns) override;

 private:
  PowerDomain domain_;
  std::unique_ptr<CounterSource> source_;
  std::optional<CounterReading> prev_;
};

/// Backend answering "current board power in milliwatts".
class GpuPowerQuery {
 public:
  virtual ~GpuPowerQuery() = default;
  virtual std::uint64_t power_mw() = 0;
};

/// Reads a decimal milliwatt value from a file on every query.
class FileGpuPowerQuery final : public GpuPowerQuery {
 public:
  explicit FileGpuPowerQuery(std::filesystem::path path);
  std::uint64_t power_mw() override;

 private:
  std::filesystem::path path_;
};

/// NVML loaded at runtime with dlopen so the toolkit builds and runs on
/// hosts without the NVIDIA driver. `open()` returns nullptr when the
/// library or the device is missing.
class NvmlGpuPowerQuery final : public GpuPowerQuery {
 public:
  static std::unique_ptr<NvmlGpuPowerQuery> open(int device_index, std::string* why_not = nullptr);
  ~NvmlGpuPowerQuery() override;
  std::uint64_t power_mw() override;

 private:
  struct Api;
  explicit NvmlGpuPowerQuery(std::shared_ptr<Api> api, void* device);
  std::shared_ptr<Api> api_;
  void* device_;
};

class GpuSensor final : public Sensor {
 public:
  GpuSensor(PowerDomain domain, std::unique_ptr<GpuPowerQuery> query);

  [[nodiscard]] PowerDomain domain() const override { return domain_; }
  [[nodiscard]] SensorKind kind() const override { return SensorKind::InstantaneousQuery; }
  double read_w(std::int64_t now_ns) override;

 private:
  PowerDomain domain_;
  std::unique_ptr<GpuPowerQuery> query_;
};

class DramModelSensor final : public Sensor {
 public:
  DramModelSensor(PowerDomain domain, DramModelParams params);

  [[nodiscard]] PowerDomain domain() const override { return domain_; }
  [[nodiscard]] SensorKind kind() const override { return SensorKind::Model; }
  double read_w(std::int64_t now_ns) override;

  [[nodiscard]] const DramModelParams& params() const { return params_; }

 private:
  PowerDomain domain_;
  DramModelParams params_;
  double power_w_;
};

/// Power as an arbitrary function of time. The profile may throw
/// Error(SensorReadError) to simulate a failed read.
class SyntheticSensor final : public Sensor {
 public:
  using Profile = std::function<double(std::int64_t now_ns)>;

  SyntheticSensor(PowerDomain domain, Profile profile);
  static std::unique_ptr<SyntheticSensor> constant(PowerDomain domain, double power_w);

  [[nodiscard]] PowerDomain domain() const override { return domain_; }
  [[nodiscard]] SensorKind kind() const override { return SensorKind::Synthetic; }
  double read_w(std::int64_t now_ns) override;

 private:
  PowerDomain domain_;
  Profile profile_;
};

// ---------------------------------------------------------------------------
// Topology

/// One declared domain in a topology config file.
struct DomainConfig {
  PowerDomain domain;
  /// Vendor TDP; 0 disables the plausibility cap for the domain.
  double tdp_w = 0.0;
  /// counter | gpu_file | nvml | model | synthetic
  std::string source;
  std::filesystem::path path;
  std::optional<DramModelParams> model;
  double constant_w = 0.0;
};

struct SensorTopologyConfig {
  std::string name;
  double plausibility_factor = 10.0;
  std::vector<DomainConfig> domains;
};

SensorTopologyConfig parse_topology_config(const nlohmann::json& doc);
SensorTopologyConfig load_topology_config(const std::filesystem::path& path);

struct DomainInfo {
  PowerDomain domain;
  double tdp_w = 0.0;
  SensorKind sensor_kind = SensorKind::Synthetic;

  bool operator==(const DomainInfo&) const = default;
};

/// The set of domains actually measured in a run.
struct SensorTopology {
  std::string name;
  std::vector<DomainInfo> domains;  // sorted by domain

  [[nodiscard]] std::vector<PowerDomain> domain_list() const;
  [[nodiscard]] bool contains(const PowerDomain& domain) const;
  [[nodiscard]] std::string fingerprint() const;

  bool operator==(const SensorTopology&) const = default;
};

/// Stable hash of a sorted domain list; the same domain set always yields
/// the same fingerprint regardless of host or topology name.
std::string topology_fingerprint(std::vector<PowerDomain> domains);

nlohmann::json to_json(const SensorTopology& topology);
SensorTopology topology_from_json(const nlohmann::json& doc);

struct AbsentDomain {
  PowerDomain domain;
  std::string reason;
};

/// Result of discover_sensors(): live sensors plus the domains that were
/// declared but could not be bound.
struct SensorSet {
  SensorTopology topology;
  std::vector<std::unique_ptr<Sensor>> sensors;
  std::vector<AbsentDomain> absent;
  /// Per-domain upper bound on a plausible reading, in watts.
  std::map<PowerDomain, double> caps_w;

  [[nodiscard]] std::size_t live_count() const { return sensors.size(); }
};

/// Binds one sensor per declared domain. Missing devices are recorded in
/// `absent` (with a logged warning) rather than thrown. Throws ConfigError
/// for malformed or duplicate declarations.
SensorSet discover_sensors(const SensorTopologyConfig& config);

/// Assembles a set from already constructed sensors (tests, embedding).
SensorSet make_sensor_set(std::string name, std::vector<std::unique_ptr<Sensor>> sensors,
                          const std::map<PowerDomain, double>& tdp_w = {},
                          double plausibility_factor = 10.0);

// ---------------------------------------------------------------------------
// Replay

/// Parses the PowerTrace CSV format. Throws ParseError naming the line for
/// malformed rows, an unexpected header, or decreasing timestamps.
std::vector<PowerSample> parse_trace_csv(std::string_view text);

/// Yields the samples of a trace file in timestamp order.
class ReplaySensor {
 public:
  explicit ReplaySensor(const std::filesystem::path& trace_file);
  explicit ReplaySensor(std::vector<PowerSample> samples);

  /// Next sample, or nullopt once the trace is exhausted (end of trace).
  std::optional<PowerSample> next();
  [[nodiscard]] bool exhausted() const { return pos_ >= samples_.size(); }
  [[nodiscard]] const std::vector<PowerSample>& samples() const { return samples_; }

 private:
  std::vector<PowerSample> samples_;
  std::size_t pos_ = 0;
};

}  // namespace joulemark
