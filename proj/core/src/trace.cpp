#include "joulemark/trace.hpp"

#include <algorithm>
#include <map>
#include <set>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

namespace joulemark {

std::string to_string(const PhaseName& name) {
  switch (name.kind) {
    case PhaseKind::Training: return "training";
    case PhaseKind::Inference: return "inference";
    case PhaseKind::Idle: return "idle";
    case PhaseKind::Loadgen: return "loadgen";
    case PhaseKind::Custom: return name.label;
  }
  return name.label;
}

PhaseName parse_phase_name(std::string_view text) {
  if (text == "training") return PhaseName::training();
  if (text == "inference") return PhaseName::inference();
  if (text == "idle") return PhaseName::idle();
  if (text == "loadgen") return PhaseName::loadgen();
  return PhaseName::custom(std::string(text));
}

void check_phases(std::span<const Phase> phases) {
  std::vector<const Phase*> sorted;
  for (const auto& p : phases) {
    if (p.t_end_ns <= p.t_start_ns) {
      throw Error(ErrorCode::InvariantViolation, "phase '" + to_string(p.name) + "' ends before it starts");
    }
    sorted.push_back(&p);
  }
  std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->t_start_ns < b->t_start_ns; });
  for (std::size_t i = 1; i < sorted.size(); ++i) {
    if (sorted[i]->t_start_ns < sorted[i - 1]->t_end_ns) {
      throw Error(ErrorCode::InvariantViolation,
                  "phases '" + to_string(sorted[i - 1]->name) + "' and '" + to_string(sorted[i]->name) + "' overlap");
    }
  }
}

PowerTrace::PowerTrace(SensorTopology topology, int interval_ms, std::vector<PowerSample> samples)
    : topology_(std::move(topology)), interval_ms_(interval_ms), samples_(std::move(samples)) {}

PowerTrace PowerTrace::seal(SensorTopology topology, int interval_ms, std::vector<PowerSample> samples) {
  if (samples.empty()) throw Error(ErrorCode::EmptyTrace, "trace has no samples");
  if (interval_ms <= 0) throw Error(ErrorCode::InvariantViolation, "interval must be positive");

  std::map<PowerDomain, std::int64_t> last_ts;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (i > 0 && s.timestamp_ns < samples[i - 1].timestamp_ns) {
      throw Error(ErrorCode::InvariantViolation, "samples not in timestamp order at index " + std::to_string(i));
    }
    if (!topology.contains(s.domain)) {
      throw Error(ErrorCode::InvariantViolation, "sample for unmeasured domain " + to_string(s.domain));
    }
    if (!(s.power_w >= 0.0)) throw Error(ErrorCode::InvariantViolation, "negative or NaN power sample");
    auto [it, fresh] = last_ts.try_emplace(s.domain, s.timestamp_ns);
    if (!fresh) {
      if (s.timestamp_ns <= it->second) {
        throw Error(ErrorCode::InvariantViolation, "repeated timestamp for " + to_string(s.domain));
      }
      it->second = s.timestamp_ns;
    }
  }
  return PowerTrace(std::move(topology), interval_ms, std::move(samples));
}

Phase PowerTrace::extent(PhaseName name) const { return Phase{std::move(name), first_ns(), extent_end_ns()}; }

std::vector<PowerSample> PowerTrace::samples_for(const PowerDomain& domain) const {
  std::vector<PowerSample> out;
  for (const auto& s : samples_) {
    if (s.domain == domain) out.push_back(s);
  }
  return out;
}

std::string trace_to_csv(const PowerTrace& trace) {
  std::string out = "timestamp_ns,domain_kind,domain_index,power_w\n";
  for (const auto& s : trace.samples()) {
    out += std::to_string(s.timestamp_ns);
    out += ',';
    out += to_string(s.domain.kind);
    out += ',';
    out += std::to_string(s.domain.index);
    out += ',';
    out += fmtutil::format_double(s.power_w);
    out += '\n';
  }
  return out;
}

PowerTrace trace_from_samples(std::vector<PowerSample> samples, std::optional<int> interval_ms,
                              std::string topology_name) {
  if (samples.empty()) throw Error(ErrorCode::EmptyTrace, "trace has no samples");
  SensorTopology topology;
  topology.name = std::move(topology_name);
  std::set<PowerDomain> domains;
  std::map<PowerDomain, std::int64_t> prev;
  std::vector<std::int64_t> gaps;
  for (const auto& s : samples) {
    domains.insert(s.domain);
    if (auto it = prev.find(s.domain); it != prev.end()) gaps.push_back(s.timestamp_ns - it->second);
    prev[s.domain] = s.timestamp_ns;
  }
  for (const auto& d : domains) topology.domains.push_back(DomainInfo{d, 0.0, SensorKind::Synthetic});

  int interval = 0;
  if (interval_ms) {
    interval = *interval_ms;
  } else {
    if (gaps.empty()) throw Error(ErrorCode::InvariantViolation, "cannot infer interval from a single tick");
    std::nth_element(gaps.begin(), gaps.begin() + static_cast<std::ptrdiff_t>(gaps.size() / 2), gaps.end());
    interval = static_cast<int>((gaps[gaps.size() / 2] + 500'000) / 1'000'000);
    if (interval <= 0) throw Error(ErrorCode::InvariantViolation, "inferred interval below 1 ms");
  }
  return PowerTrace::seal(std::move(topology), interval, std::move(samples));
}

PowerTrace load_trace_csv(const std::filesystem::path& path, std::optional<int> interval_ms,
                          std::string topology_name) {
  auto samples = parse_trace_csv(fmtutil::read_file(path));
  return trace_from_samples(std::move(samples), interval_ms, std::move(topology_name));
}

}  // namespace joulemark
