#include "joulemark/energy.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"
#include "joulemark/session.hpp"

namespace joulemark {

std::string_view to_string(IntegrationMethod m) noexcept {
  return m == IntegrationMethod::LeftRectangle ? "left_rectangle" : "trapezoidal";
}

std::string_view to_string(IdleMode m) noexcept {
  return m == IdleMode::ScaleByWindow ? "scale_by_window" : "fixed_idle_duration";
}

IntegrationMethod parse_integration_method(std::string_view text) {
  if (text == "left_rectangle") return IntegrationMethod::LeftRectangle;
  if (text == "trapezoidal") return IntegrationMethod::Trapezoidal;
  throw Error(ErrorCode::ConfigError, "unknown integration method: " + std::string(text));
}

IdleMode parse_idle_mode(std::string_view text) {
  if (text == "scale_by_window") return IdleMode::ScaleByWindow;
  if (text == "fixed_idle_duration") return IdleMode::FixedIdleDuration;
  throw Error(ErrorCode::ConfigError, "unknown idle mode: " + std::string(text));
}

namespace {

// Neumaier summation; keeps long traces accurate to a few ulps.
class Accumulator {
 public:
  void add(double x) {
    const double t = sum_ + x;
    if (std::abs(sum_) >= std::abs(x)) {
      comp_ += (sum_ - t) + x;
    } else {
      comp_ += (x - t) + sum_;
    }
    sum_ = t;
  }
  [[nodiscard]] double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace

DomainEnergy integrate(const PowerTrace& trace, const Phase& window, IntegrationMethod method) {
  if (window.t_end_ns <= window.t_start_ns) {
    throw Error(ErrorCode::WindowOutOfRange, "window end must be after its start");
  }
  if (window.t_start_ns < trace.first_ns() || window.t_end_ns > trace.extent_end_ns()) {
    throw Error(ErrorCode::WindowOutOfRange, "window [" + std::to_string(window.t_start_ns) + ", " +
                                                 std::to_string(window.t_end_ns) + ") is outside the trace extent");
  }

  std::map<PowerDomain, std::vector<PowerSample>> by_domain;
  for (const auto& d : trace.topology().domains) by_domain[d.domain];
  for (const auto& s : trace.samples()) by_domain[s.domain].push_back(s);

  DomainEnergy out;
  std::size_t in_window = 0;
  for (const auto& [domain, samples] : by_domain) {
    auto ts_less = [](const PowerSample& s, std::int64_t t) { return s.timestamp_ns < t; };
    auto lo = std::lower_bound(samples.begin(), samples.end(), window.t_start_ns, ts_less);
    auto hi = std::lower_bound(samples.begin(), samples.end(), window.t_end_ns, ts_less);
    Accumulator acc;
    for (auto it = lo; it != hi; ++it) {
      const bool last = std::next(it) == samples.end();
      const std::int64_t dt_ns = last ? trace.interval_ns() : std::next(it)->timestamp_ns - it->timestamp_ns;
      double watts = it->power_w;
      if (method == IntegrationMethod::Trapezoidal && !last) watts = 0.5 * (it->power_w + std::next(it)->power_w);
      acc.add(watts * (static_cast<double>(dt_ns) * 1e-9));
      ++in_window;
    }
    out[domain] = acc.value();
  }
  if (in_window == 0) throw Error(ErrorCode::EmptyWindow, "no samples in window");
  return out;
}

double IdleBaseline::total_w() const {
  double total = 0.0;
  for (const auto& [_, w] : per_domain_avg_w) total += w;
  return total;
}

namespace {

std::string utc_now_iso() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

IdleBaseline calibrate_idle(const PowerTrace& trace, std::string captured_at) {
  IdleBaseline b;
  b.duration_s = static_cast<double>(trace.extent_end_ns() - trace.first_ns()) * 1e-9;
  if (b.duration_s < kMinIdleDurationS) {
    throw Error(ErrorCode::TooShort, "idle trace covers " + fmtutil::format_double(b.duration_s) +
                                         " s; at least " + fmtutil::format_double(kMinIdleDurationS) + " s needed");
  }
  std::map<PowerDomain, std::pair<Accumulator, std::size_t>> sums;
  for (const auto& s : trace.samples()) {
    auto& [acc, n] = sums[s.domain];
    acc.add(s.power_w);
    ++n;
  }
  for (const auto& d : trace.topology().domains) {
    const auto it = sums.find(d.domain);
    if (it == sums.end()) {
      throw Error(ErrorCode::InvariantViolation, "idle trace has no samples for " + to_string(d.domain));
    }
    b.per_domain_avg_w[d.domain] = it->second.first.value() / static_cast<double>(it->second.second);
  }
  b.fingerprint = trace.topology().fingerprint();
  b.captured_at = captured_at.empty() ? utc_now_iso() : std::move(captured_at);
  return b;
}

nlohmann::ordered_json to_json(const IdleBaseline& b) {
  nlohmann::ordered_json per_domain = nlohmann::ordered_json::object();
  for (const auto& [d, w] : b.per_domain_avg_w) per_domain[to_string(d)] = w;
  return {{"per_domain_avg_w", per_domain},
          {"duration_s", b.duration_s},
          {"captured_at", b.captured_at},
          {"fingerprint", b.fingerprint}};
}

IdleBaseline baseline_from_json(const nlohmann::json& doc) {
  try {
    IdleBaseline b;
    for (const auto& [key, value] : doc.at("per_domain_avg_w").items()) {
      const double w = value.get<double>();
      if (!(w >= 0.0)) throw Error(ErrorCode::ParseError, "baseline power must be >= 0 for " + key);
      b.per_domain_avg_w[parse_power_domain(key)] = w;
    }
    b.duration_s = doc.at("duration_s").get<double>();
    b.captured_at = doc.value("captured_at", "");
    b.fingerprint = doc.at("fingerprint").get<std::string>();
    std::vector<PowerDomain> domains;
    for (const auto& [d, _] : b.per_domain_avg_w) domains.push_back(d);
    if (topology_fingerprint(domains) != b.fingerprint) {
      throw Error(ErrorCode::ParseError, "baseline domains do not match its fingerprint");
    }
    if (b.duration_s < kMinIdleDurationS) throw Error(ErrorCode::TooShort, "baseline duration under 10 s");
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("baseline: ") + e.what());
  }
}

void save_baseline(const std::filesystem::path& path, const IdleBaseline& baseline) {
  fmtutil::write_file(path, to_json(baseline).dump(2) + "\n");
}

IdleBaseline load_baseline(const std::filesystem::path& path) {
  const std::string text = fmtutil::read_file(path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, path.string() + ": " + e.what());
  }
  return baseline_from_json(doc);
}

EnergyReport net_energy(const DomainEnergy& gross, const IdleBaseline& baseline, const Phase& window, IdleMode mode) {
  std::vector<PowerDomain> domains;
  for (const auto& [d, _] : gross) domains.push_back(d);
  if (topology_fingerprint(domains) != baseline.fingerprint) {
    throw Error(ErrorCode::TopologyMismatch, "baseline was calibrated on a different sensor topology");
  }
  EnergyReport r;
  r.window = window;
  r.gross_j = gross;
  for (const auto& [_, j] : gross) r.gross_total_j += j;
  const double idle_s = mode == IdleMode::ScaleByWindow ? window.duration_s() : baseline.duration_s;
  r.idle_j = baseline.total_w() * idle_s;
  r.net_j = r.gross_total_j - r.idle_j;
  if (mode == IdleMode::FixedIdleDuration) r.flags.emplace_back(kFlagIdleFixedDuration);
  if (r.net_j < 0.0) r.flags.emplace_back(kFlagNetNegative);
  return r;
}

std::int64_t samples_in_window(std::span<const Marker> markers, const Phase& window) {
  std::int64_t n = 0;
  for (const auto& m : markers) {
    if (m.kind != MarkerKind::SampleCount || !m.timestamp_ns) continue;
    if (*m.timestamp_ns > window.t_start_ns && *m.timestamp_ns <= window.t_end_ns) {
      n += std::get<SampleCountPayload>(m.payload).n;
    }
  }
  return n;
}

SessionEnergy per_phase_energy(const Session& session, const IdleBaseline& baseline, EnergyOptions options) {
  SessionEnergy out;
  out.options = options;
  for (const auto& phase : session.phases) {
    auto report = net_energy(integrate(session.trace, phase, options.method), baseline, phase, options.idle_mode);
    report.sample_count = samples_in_window(session.markers, phase);
    out.phases.push_back(std::move(report));
  }
  const Phase whole = session.trace.extent();
  out.session = net_energy(integrate(session.trace, whole, options.method), baseline, whole, options.idle_mode);
  for (const auto& m : session.markers) {
    if (m.kind == MarkerKind::SampleCount) out.session.sample_count += std::get<SampleCountPayload>(m.payload).n;
  }
  return out;
}

nlohmann::ordered_json to_json(const EnergyReport& r) {
  nlohmann::ordered_json gross = nlohmann::ordered_json::object();
  for (const auto& [d, j] : r.gross_j) gross[to_string(d)] = j;
  return {{"window",
           {{"name", to_string(r.window.name)},
            {"t_start_ns", r.window.t_start_ns},
            {"t_end_ns", r.window.t_end_ns},
            {"duration_s", r.window.duration_s()}}},
          {"gross_j", gross},
          {"gross_total_j", r.gross_total_j},
          {"idle_j", r.idle_j},
          {"net_j", r.net_j},
          {"sample_count", r.sample_count},
          {"flags", r.flags}};
}

EnergyReport energy_report_from_json(const nlohmann::json& doc) {
  try {
    EnergyReport r;
    const auto& w = doc.at("window");
    r.window = Phase{parse_phase_name(w.at("name").get<std::string>()), w.at("t_start_ns").get<std::int64_t>(),
                     w.at("t_end_ns").get<std::int64_t>()};
    for (const auto& [key, value] : doc.at("gross_j").items()) r.gross_j[parse_power_domain(key)] = value.get<double>();
    r.gross_total_j = doc.at("gross_total_j").get<double>();
    r.idle_j = doc.at("idle_j").get<double>();
    r.net_j = doc.at("net_j").get<double>();
    r.sample_count = doc.at("sample_count").get<std::int64_t>();
    r.flags = doc.at("flags").get<std::vector<std::string>>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("energy report: ") + e.what());
  }
}

nlohmann::ordered_json to_json(const SessionEnergy& energy, std::string_view session_id, const IdleBaseline& baseline) {
  nlohmann::ordered_json phases = nlohmann::ordered_json::array();
  for (const auto& r : energy.phases) phases.push_back(to_json(r));
  nlohmann::ordered_json base = to_json(baseline);
  return {{"session_id", session_id},
          {"integration", to_string(energy.options.method)},
          {"idle_mode", to_string(energy.options.idle_mode)},
          {"baseline", base},
          {"phases", phases},
          {"session", to_json(energy.session)}};
}

}  // namespace joulemark
