#include <algorithm>
#include <set>

#include <spdlog/spdlog.h>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"
#include "joulemark/sensors.hpp"

namespace joulemark {

namespace {

std::string default_source(const DomainConfig& d) {
  switch (d.domain.kind) {
    case DomainKind::CpuPackage: return "counter";
    case DomainKind::Gpu: return "nvml";
    case DomainKind::Dram: return d.model ? "model" : "counter";
  }
  return "counter";
}

DramModelParams parse_model(const nlohmann::json& j) {
  DramModelParams p;
  p.n_dimm = j.at("n_dimm").get<int>();
  p.capacitance_f = j.at("capacitance_f").get<double>();
  p.voltage_v = j.at("voltage_v").get<double>();
  p.frequency_hz = j.at("frequency_hz").get<double>();
  return p;
}

bool counter_dir_present(const std::filesystem::path& dir, std::string& why) {
  std::error_code ec;
  if (dir.empty()) {
    why = "no counter path configured";
    return false;
  }
  for (const char* f : {"energy_uj", "max_energy_range_uj"}) {
    if (!std::filesystem::exists(dir / f, ec)) {
      why = (dir / f).string() + " not found";
      return false;
    }
  }
  return true;
}

}  // namespace

SensorTopologyConfig parse_topology_config(const nlohmann::json& doc) {
  SensorTopologyConfig config;
  try {
    config.name = doc.value("name", std::string{});
    config.plausibility_factor = doc.value("plausibility_factor", 10.0);
    if (!(config.plausibility_factor > 0)) throw Error(ErrorCode::ConfigError, "plausibility_factor must be > 0");

    std::set<PowerDomain> seen;
    for (const auto& entry : doc.at("domains")) {
      DomainConfig d;
      d.domain.kind = parse_domain_kind(entry.at("kind").get<std::string>());
      d.domain.index = entry.value("index", 0);
      if (d.domain.index < 0) throw Error(ErrorCode::ConfigError, "domain index must be >= 0");
      if (!seen.insert(d.domain).second) {
        throw Error(ErrorCode::ConfigError, "duplicate domain " + to_string(d.domain));
      }
      d.tdp_w = entry.value("tdp_w", 0.0);
      if (d.tdp_w < 0) throw Error(ErrorCode::ConfigError, "tdp_w must be >= 0");
      if (entry.contains("model")) d.model = parse_model(entry.at("model"));
      d.path = entry.value("path", std::string{});
      d.constant_w = entry.value("constant_w", 0.0);
      d.source = entry.value("source", default_source(d));
      static const std::set<std::string> kSources{"counter", "gpu_file", "nvml", "model", "synthetic"};
      if (!kSources.count(d.source)) throw Error(ErrorCode::ConfigError, "unknown source '" + d.source + "'");
      if (d.source == "model" && !d.model) {
        throw Error(ErrorCode::ConfigError, to_string(d.domain) + ": source 'model' needs a 'model' block");
      }
      config.domains.push_back(std::move(d));
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, std::string("topology config: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == ErrorCode::ConfigError) throw;
    throw Error(ErrorCode::ConfigError, e.what());
  }
  return config;
}

SensorTopologyConfig load_topology_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = fmtutil::read_file(path);
  } catch (const Error& e) {
    throw Error(ErrorCode::ConfigError, e.what());
  }
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, path.string() + ": " + e.what());
  }
  return parse_topology_config(doc);
}

std::vector<PowerDomain> SensorTopology::domain_list() const {
  std::vector<PowerDomain> out;
  out.reserve(domains.size());
  for (const auto& d : domains) out.push_back(d.domain);
  return out;
}

bool SensorTopology::contains(const PowerDomain& domain) const {
  return std::any_of(domains.begin(), domains.end(), [&](const DomainInfo& d) { return d.domain == domain; });
}

std::string SensorTopology::fingerprint() const { return topology_fingerprint(domain_list()); }

std::string topology_fingerprint(std::vector<PowerDomain> domains) {
  std::sort(domains.begin(), domains.end());
  std::string canonical;
  for (const auto& d : domains) {
    canonical += to_string(d);
    canonical += ';';
  }
  return fmtutil::fnv1a_hex(canonical);
}

nlohmann::json to_json(const SensorTopology& topology) {
  nlohmann::json doms = nlohmann::json::array();
  for (const auto& d : topology.domains) {
    doms.push_back({{"kind", std::string(to_string(d.domain.kind))},
                    {"index", d.domain.index},
                    {"tdp_w", d.tdp_w},
                    {"sensor", std::string(to_string(d.sensor_kind))}});
  }
  return nlohmann::json{{"name", topology.name}, {"fingerprint", topology.fingerprint()}, {"domains", doms}};
}

SensorTopology topology_from_json(const nlohmann::json& doc) {
  SensorTopology topology;
  topology.name = doc.value("name", std::string{});
  for (const auto& entry : doc.at("domains")) {
    DomainInfo info;
    info.domain.kind = parse_domain_kind(entry.at("kind").get<std::string>());
    info.domain.index = entry.at("index").get<int>();
    info.tdp_w = entry.value("tdp_w", 0.0);
    auto sensor = entry.value("sensor", std::string("synthetic"));
    for (auto k : {SensorKind::Counter, SensorKind::InstantaneousQuery, SensorKind::Model, SensorKind::Synthetic}) {
      if (to_string(k) == sensor) info.sensor_kind = k;
    }
    topology.domains.push_back(info);
  }
  std::sort(topology.domains.begin(), topology.domains.end(),
            [](const DomainInfo& a, const DomainInfo& b) { return a.domain < b.domain; });
  return topology;
}

SensorSet discover_sensors(const SensorTopologyConfig& config) {
  SensorSet set;
  set.topology.name = config.name;

  for (const auto& d : config.domains) {
    std::unique_ptr<Sensor> sensor;
    std::string why;

    if (d.source == "counter") {
      if (counter_dir_present(d.path, why)) {
        sensor = std::make_unique<CounterSensor>(d.domain, std::make_unique<CounterFileSource>(d.path));
      } else if (d.domain.kind == DomainKind::Dram && d.model) {
        spdlog::warn("{}: DRAM counter unavailable ({}), using the analytical model", to_string(d.domain), why);
        sensor = std::make_unique<DramModelSensor>(d.domain, *d.model);
      }
    } else if (d.source == "gpu_file") {
      std::error_code ec;
      if (!d.path.empty() && std::filesystem::exists(d.path, ec)) {
        sensor = std::make_unique<GpuSensor>(d.domain, std::make_unique<FileGpuPowerQuery>(d.path));
      } else {
        why = "GPU power file '" + d.path.string() + "' not found";
      }
    } else if (d.source == "nvml") {
      if (auto q = NvmlGpuPowerQuery::open(d.domain.index, &why)) {
        sensor = std::make_unique<GpuSensor>(d.domain, std::move(q));
      }
    } else if (d.source == "model") {
      try {
        sensor = std::make_unique<DramModelSensor>(d.domain, *d.model);
      } catch (const Error& e) {
        throw Error(ErrorCode::ConfigError, to_string(d.domain) + ": " + e.what());
      }
    } else if (d.source == "synthetic") {
      sensor = SyntheticSensor::constant(d.domain, d.constant_w);
    }

    if (!sensor) {
      spdlog::warn("{}: sensor unavailable ({}); continuing without it", to_string(d.domain), why);
      set.absent.push_back(AbsentDomain{d.domain, why});
      continue;
    }
    set.topology.domains.push_back(DomainInfo{d.domain, d.tdp_w, sensor->kind()});
    if (d.tdp_w > 0) set.caps_w[d.domain] = d.tdp_w * config.plausibility_factor;
    set.sensors.push_back(std::move(sensor));
  }

  std::sort(set.topology.domains.begin(), set.topology.domains.end(),
            [](const DomainInfo& a, const DomainInfo& b) { return a.domain < b.domain; });
  return set;
}

SensorSet make_sensor_set(std::string name, std::vector<std::unique_ptr<Sensor>> sensors,
                          const std::map<PowerDomain, double>& tdp_w, double plausibility_factor) {
  SensorSet set;
  set.topology.name = std::move(name);
  std::set<PowerDomain> seen;
  for (auto& s : sensors) {
    if (!seen.insert(s->domain()).second) throw Error(ErrorCode::ConfigError, "duplicate domain " + to_string(s->domain()));
    double tdp = 0.0;
    if (auto it = tdp_w.find(s->domain()); it != tdp_w.end()) tdp = it->second;
    set.topology.domains.push_back(DomainInfo{s->domain(), tdp, s->kind()});
    if (tdp > 0) set.caps_w[s->domain()] = tdp * plausibility_factor;
    set.sensors.push_back(std::move(s));
  }
  std::sort(set.topology.domains.begin(), set.topology.domains.end(),
            [](const DomainInfo& a, const DomainInfo& b) { return a.domain < b.domain; });
  return set;
}

}  // namespace joulemark
