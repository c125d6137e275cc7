#include "joulemark/sensors.hpp"

#include <dlfcn.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

namespace joulemark {

std::string_view to_string(DomainKind kind) noexcept {
  switch (kind) {
    case DomainKind::CpuPackage: return "cpu_package";
    case DomainKind::Gpu: return "gpu";
    case DomainKind::Dram: return "dram";
  }
  return "unknown";
}

DomainKind parse_domain_kind(std::string_view text) {
  if (text == "cpu_package") return DomainKind::CpuPackage;
  if (text == "gpu") return DomainKind::Gpu;
  if (text == "dram") return DomainKind::Dram;
  throw Error(ErrorCode::ParseError, "unknown domain kind '" + std::string(text) + "'");
}

std::string to_string(const PowerDomain& domain) {
  return std::string(to_string(domain.kind)) + ":" + std::to_string(domain.index);
}

PowerDomain parse_power_domain(std::string_view text) {
  const auto colon = text.rfind(':');
  if (colon == std::string_view::npos) throw Error(ErrorCode::ParseError, "bad domain label: " + std::string(text));
  const auto index = fmtutil::parse_int64(text.substr(colon + 1));
  if (!index || *index < 0 || *index > std::numeric_limits<int>::max()) {
    throw Error(ErrorCode::ParseError, "bad domain index: " + std::string(text));
  }
  return PowerDomain{parse_domain_kind(text.substr(0, colon)), static_cast<int>(*index)};
}

std::string_view to_string(SensorKind kind) noexcept {
  switch (kind) {
    case SensorKind::Counter: return "counter";
    case SensorKind::InstantaneousQuery: return "query";
    case SensorKind::Model: return "model";
    case SensorKind::Synthetic: return "synthetic";
  }
  return "unknown";
}

double counter_to_power(const CounterReading& prev, const CounterReading& curr) {
  if (prev.max_range_uj != curr.max_range_uj) {
    throw Error(ErrorCode::RangeMismatch, "counter moduli differ (" + std::to_string(prev.max_range_uj) +
                                              " vs " + std::to_string(curr.max_range_uj) + ")");
  }
  const auto range = curr.max_range_uj;
  if (range == 0 || prev.energy_uj >= range || curr.energy_uj >= range) {
    throw Error(ErrorCode::InvalidParams, "counter value outside [0, max_range)");
  }
  if (curr.timestamp_ns == prev.timestamp_ns) {
    throw Error(ErrorCode::ZeroInterval, "readings share a timestamp");
  }
  if (curr.timestamp_ns < prev.timestamp_ns) {
    throw Error(ErrorCode::InvalidParams, "readings out of order");
  }
  // At most one wrap between reads; a second wrap is indistinguishable.
  const std::uint64_t delta_uj = curr.energy_uj >= prev.energy_uj
                                     ? curr.energy_uj - prev.energy_uj
                                     : (range - prev.energy_uj) + curr.energy_uj;
  const auto dt_ns = static_cast<double>(curr.timestamp_ns - prev.timestamp_ns);
  // uJ / ns == 1e3 W
  return static_cast<double>(delta_uj) * 1e3 / dt_ns;
}

double dram_model_power(const DramModelParams& params) {
  if (params.n_dimm <= 0 || !(params.capacitance_f > 0.0) || !(params.voltage_v > 0.0) ||
      !(params.frequency_hz > 0.0)) {
    throw Error(ErrorCode::InvalidParams, "DRAM model parameters must be strictly positive");
  }
  const double per_dimm = 0.5 * params.capacitance_f * params.voltage_v * params.voltage_v * params.frequency_hz;
  return static_cast<double>(params.n_dimm) * per_dimm;
}

// ---------------------------------------------------------------------------

namespace {

std::uint64_t read_u64_file(const std::filesystem::path& path) {
  std::string text;
  try {
    text = fmtutil::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::SensorReadError, e.what());
  }
  auto value = fmtutil::parse_uint64(text);
  if (!value) throw Error(ErrorCode::SensorReadError, "non-numeric contents in " + path.string());
  return *value;
}

}  // namespace

CounterFileSource::CounterFileSource(std::filesystem::path dir) : dir_(std::move(dir)) {}

CounterReading CounterFileSource::read(std::int64_t now_ns) {
  CounterReading reading;
  reading.timestamp_ns = now_ns;
  reading.energy_uj = read_u64_file(dir_ / "energy_uj");
  reading.max_range_uj = read_u64_file(dir_ / "max_energy_range_uj");
  return reading;
}

std::string CounterFileSource::zone_name() const {
  std::error_code ec;
  if (!std::filesystem::exists(dir_ / "name", ec)) return {};
  return std::string(fmtutil::trim(fmtutil::read_file(dir_ / "name")));
}

SyntheticCounterSource::SyntheticCounterSource(double power_w, std::uint64_t max_range_uj, std::uint64_t start_uj)
    : power_w_(power_w), max_range_uj_(max_range_uj), start_uj_(start_uj % max_range_uj) {}

CounterReading SyntheticCounterSource::read(std::int64_t now_ns) {
  if (!origin_ns_) origin_ns_ = now_ns;
  // W * ns = 1e-3 uJ
  const auto accumulated = static_cast<std::uint64_t>(
      std::llround(power_w_ * static_cast<double>(now_ns - *origin_ns_) * 1e-3));
  return CounterReading{now_ns, (start_uj_ + accumulated) % max_range_uj_, max_range_uj_};
}

CounterSensor::CounterSensor(PowerDomain domain, std::unique_ptr<CounterSource> source)
    : domain_(domain), source_(std::move(source)) {}

void CounterSensor::start(std::int64_t now_ns) { prev_ = source_->read(now_ns); }

double CounterSensor::read_w(std::int64_t now_ns) {
  auto curr = source_->read(now_ns);
  if (!prev_) {
    prev_ = curr;
    throw Error(ErrorCode::SensorReadError, "counter " + to_string(domain_) + " was not primed");
  }
  double power = 0.0;
  try {
    power = counter_to_power(*prev_, curr);
  } catch (const Error& e) {
    prev_ = curr;
    throw Error(ErrorCode::SensorReadError, e.what());
  }
  prev_ = curr;
  return power;
}

FileGpuPowerQuery::FileGpuPowerQuery(std::filesystem::path path) : path_(std::move(path)) {}

std::uint64_t FileGpuPowerQuery::power_mw() { return read_u64_file(path_); }

// NVML entry points we need, declared with the C ABI types they use.
struct NvmlGpuPowerQuery::Api {
  using InitFn = int (*)();
  using ShutdownFn = int (*)();
  using HandleFn = int (*)(unsigned int, void**);
  using PowerFn = int (*)(void*, unsigned int*);

  void* lib = nullptr;
  InitFn init = nullptr;
  ShutdownFn shutdown = nullptr;
  HandleFn handle_by_index = nullptr;
  PowerFn power_usage = nullptr;

  ~Api() {
    if (shutdown) shutdown();
    if (lib) dlclose(lib);
  }
};

std::unique_ptr<NvmlGpuPowerQuery> NvmlGpuPowerQuery::open(int device_index, std::string* why_not) {
  static std::mutex mu;
  static std::weak_ptr<Api> shared;
  auto fail = [&](std::string reason) -> std::unique_ptr<NvmlGpuPowerQuery> {
    if (why_not) *why_not = std::move(reason);
    return nullptr;
  };

  std::lock_guard lock(mu);
  auto api = shared.lock();
  if (!api) {
    void* lib = dlopen("libnvidia-ml.so.1", RTLD_NOW | RTLD_LOCAL);
    if (!lib) return fail("libnvidia-ml.so.1 not loadable");
    api = std::make_shared<Api>();
    api->lib = lib;
    api->init = reinterpret_cast<Api::InitFn>(dlsym(lib, "nvmlInit_v2"));
    api->handle_by_index = reinterpret_cast<Api::HandleFn>(dlsym(lib, "nvmlDeviceGetHandleByIndex_v2"));
    api->power_usage = reinterpret_cast<Api::PowerFn>(dlsym(lib, "nvmlDeviceGetPowerUsage"));
    auto shutdown = reinterpret_cast<Api::ShutdownFn>(dlsym(lib, "nvmlShutdown"));
    if (!api->init || !api->handle_by_index || !api->power_usage || !shutdown) {
      return fail("NVML symbols missing");
    }
    if (api->init() != 0) return fail("nvmlInit failed");
    api->shutdown = shutdown;
    shared = api;
  }
  void* device = nullptr;
  if (device_index < 0 || api->handle_by_index(static_cast<unsigned>(device_index), &device) != 0) {
    return fail("no NVML device with index " + std::to_string(device_index));
  }
  return std::unique_ptr<NvmlGpuPowerQuery>(new NvmlGpuPowerQuery(std::move(api), device));
}

NvmlGpuPowerQuery::NvmlGpuPowerQuery(std::shared_ptr<Api> api, void* device)
    : api_(std::move(api)), device_(device) {}

NvmlGpuPowerQuery::~NvmlGpuPowerQuery() = default;

std::uint64_t NvmlGpuPowerQuery::power_mw() {
  unsigned int mw = 0;
  if (api_->power_usage(device_, &mw) != 0) throw Error(ErrorCode::SensorReadError, "nvmlDeviceGetPowerUsage failed");
  return mw;
}

GpuSensor::GpuSensor(PowerDomain domain, std::unique_ptr<GpuPowerQuery> query)
    : domain_(domain), query_(std::move(query)) {}

double GpuSensor::read_w(std::int64_t /*now_ns*/) { return static_cast<double>(query_->power_mw()) / 1000.0; }

DramModelSensor::DramModelSensor(PowerDomain domain, DramModelParams params)
    : domain_(domain), params_(params), power_w_(dram_model_power(params)) {}

double DramModelSensor::read_w(std::int64_t /*now_ns*/) { return power_w_; }

SyntheticSensor::SyntheticSensor(PowerDomain domain, Profile profile)
    : domain_(domain), profile_(std::move(profile)) {}

std::unique_ptr<SyntheticSensor> SyntheticSensor::constant(PowerDomain domain, double power_w) {
  return std::make_unique<SyntheticSensor>(domain, [power_w](std::int64_t) { return power_w; });
}

double SyntheticSensor::read_w(std::int64_t now_ns) { return profile_(now_ns); }

// ---------------------------------------------------------------------------

std::vector<PowerSample> parse_trace_csv(std::string_view text) {
  static constexpr std::string_view kHeader = "timestamp_ns,domain_kind,domain_index,power_w";
  std::vector<PowerSample> samples;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  bool saw_header = false;
  std::int64_t last_ts = 0;

  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    auto line = text.substr(pos, eol == std::string_view::npos ? std::string_view::npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() : eol + 1;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    auto where = [&] { return "line " + std::to_string(line_no) + ": "; };

    if (!saw_header) {
      if (line != kHeader) throw Error(ErrorCode::ParseError, where() + "expected header '" + std::string(kHeader) + "'");
      saw_header = true;
      continue;
    }
    if (line.empty()) continue;

    auto fields = fmtutil::split(line, ',');
    if (fields.size() != 4) throw Error(ErrorCode::ParseError, where() + "expected 4 fields");
    auto ts = fmtutil::parse_int64(fields[0]);
    auto index = fmtutil::parse_int64(fields[2]);
    auto power = fmtutil::parse_double(fields[3]);
    if (!ts || !index || !power || *index < 0) throw Error(ErrorCode::ParseError, where() + "malformed numeric field");
    DomainKind kind{};
    try {
      kind = parse_domain_kind(fields[1]);
    } catch (const Error&) {
      throw Error(ErrorCode::ParseError, where() + "unknown domain kind '" + fields[1] + "'");
    }
    if (!samples.empty() && *ts < last_ts) throw Error(ErrorCode::ParseError, where() + "timestamps out of order");
    if (!std::isfinite(*power) || *power < 0) throw Error(ErrorCode::ParseError, where() + "power must be finite and >= 0");
    last_ts = *ts;
    samples.push_back(PowerSample{*ts, PowerDomain{kind, static_cast<int>(*index)}, *power});
  }
  return samples;
}

ReplaySensor::ReplaySensor(const std::filesystem::path& trace_file) {
  std::string text;
  try {
    text = fmtutil::read_file(trace_file);
  } catch (const Error& e) {
    throw Error(ErrorCode::ParseError, e.what());
  }
  // An empty file is an empty trace rather than a missing header.
  if (!fmtutil::trim(text).empty()) samples_ = parse_trace_csv(text);
}

ReplaySensor::ReplaySensor(std::vector<PowerSample> samples) : samples_(std::move(samples)) {
  for (std::size_t i = 1; i < samples_.size(); ++i) {
    if (samples_[i].timestamp_ns < samples_[i - 1].timestamp_ns) {
      throw Error(ErrorCode::ParseError, "sample " + std::to_string(i) + ": timestamps out of order");
    }
  }
}

std::optional<PowerSample> ReplaySensor::next() {
  if (pos_ >= samples_.size()) return std::nullopt;
  return samples_[pos_++];
}

}  // namespace joulemark
