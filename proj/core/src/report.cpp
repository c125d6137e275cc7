#include "joulemark/report.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

#ifndef JOULEMARK_VERSION
#define JOULEMARK_VERSION "0.0.0"
#endif

namespace joulemark {

std::string_view toolkit_version() noexcept { return JOULEMARK_VERSION; }

void RunManifest::validate(std::string_view baseline_fingerprint) const {
  if (repeat_index < 1) throw Error(ErrorCode::InvariantViolation, "repeat_index must be >= 1");
  if (!baseline_fingerprint.empty() && baseline_fingerprint != fingerprint) {
    throw Error(ErrorCode::InvariantViolation, "manifest fingerprint does not match the baseline");
  }
}

nlohmann::ordered_json to_json(const RunManifest& m) {
  nlohmann::ordered_json j{{"session_id", m.session_id},     {"kind", m.kind},
                           {"topology_name", m.topology_name}, {"fingerprint", m.fingerprint},
                           {"repeat_index", m.repeat_index},   {"toolkit_version", m.toolkit_version},
                           {"started_at", m.started_at},       {"finished_at", m.finished_at},
                           {"interval_ms", m.interval_ms}};
  j["model"] = m.model ? descriptor_to_json(*m.model) : nlohmann::ordered_json(nullptr);
  j["run_config"] = m.run_config.is_null() ? nlohmann::ordered_json(nullptr)
                                           : nlohmann::ordered_json::parse(m.run_config.dump());
  j["diagnostics"] = m.diagnostics.is_null() ? nlohmann::ordered_json(nullptr)
                                             : nlohmann::ordered_json::parse(m.diagnostics.dump());
  return j;
}

RunManifest manifest_from_json(const nlohmann::json& doc) {
  try {
    RunManifest m;
    m.session_id = doc.at("session_id").get<std::string>();
    m.kind = doc.at("kind").get<std::string>();
    m.topology_name = doc.at("topology_name").get<std::string>();
    m.fingerprint = doc.at("fingerprint").get<std::string>();
    m.repeat_index = doc.at("repeat_index").get<int>();
    m.toolkit_version = doc.at("toolkit_version").get<std::string>();
    m.started_at = doc.at("started_at").get<std::string>();
    m.finished_at = doc.at("finished_at").get<std::string>();
    m.interval_ms = doc.at("interval_ms").get<int>();
    if (!doc.at("model").is_null()) m.model = descriptor_from_json(doc.at("model"));
    m.run_config = doc.at("run_config");
    m.diagnostics = doc.at("diagnostics");
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ParseError, std::string("manifest: ") + e.what());
  }
}

RunManifest manifest_for(const Session& session, std::string kind, int repeat_index) {
  RunManifest m;
  m.session_id = session.id;
  m.kind = std::move(kind);
  m.topology_name = session.trace.topology().name;
  m.fingerprint = session.trace.topology().fingerprint();
  m.model = session.model;
  m.run_config = session.run_config;
  m.repeat_index = repeat_index;
  m.toolkit_version = std::string(toolkit_version());
  m.interval_ms = session.trace.interval_ms();
  m.diagnostics = to_json(session.diagnostics);
  return m;
}

std::string content_session_id(std::initializer_list<std::string_view> parts) {
  std::string joined;
  for (auto p : parts) {
    joined += std::to_string(p.size());
    joined += ':';
    joined += p;
  }
  return fmtutil::fnv1a_hex(joined);
}

SessionEvaluation evaluate_session(const Session& session, const IdleBaseline& baseline, EnergyOptions options) {
  SessionEvaluation ev;
  ev.energy = per_phase_energy(session, baseline, options);
  for (const auto& report : ev.energy.phases) {
    auto stats = run_stats_for(session, report);
    auto row = discriminative_metrics(report, session.model, stats);
    ev.metrics.push_back(PhaseMetrics{to_string(report.window.name), std::move(row), std::move(stats)});
  }
  return ev;
}

std::string session_metrics_csv(std::string_view session_id, const SessionEvaluation& evaluation) {
  std::vector<std::pair<std::vector<std::string>, MetricColumns>> rows;
  for (const auto& pm : evaluation.metrics) {
    rows.emplace_back(std::vector<std::string>{std::string(session_id), pm.phase}, pm.row.columns());
  }
  if (rows.empty()) {
    std::string header = "session_id,phase";
    for (const auto& n : MetricRow::column_names()) header += "," + n;
    return header + "\n";
  }
  return metrics_csv({"session_id", "phase"}, rows);
}

// ---------------------------------------------------------------------------

AveragedResult average_runs(const std::vector<KeyedRow>& rows) {
  if (rows.empty()) throw Error(ErrorCode::EmptyGroup, "no runs to average");
  const auto& first = rows.front();
  for (const auto& r : rows) {
    if (r.key != first.key) throw Error(ErrorCode::KeyMismatch, "rows do not share a group key");
    if (r.columns.size() != first.columns.size()) throw Error(ErrorCode::KeyMismatch, "rows have different metrics");
    for (std::size_t c = 0; c < r.columns.size(); ++c) {
      if (r.columns[c].first != first.columns[c].first) {
        throw Error(ErrorCode::KeyMismatch, "rows have different metrics");
      }
    }
  }
  AveragedResult out;
  out.key = first.key;
  out.run_count = rows.size();
  for (std::size_t c = 0; c < first.columns.size(); ++c) {
    std::vector<double> values;
    for (const auto& r : rows) {
      if (r.columns[c].second.value) values.push_back(*r.columns[c].second.value);
    }
    // Order-independent sum.
    std::sort(values.begin(), values.end());
    MetricSummary s;
    s.name = first.columns[c].first;
    s.count = values.size();
    if (!values.empty()) {
      double sum = 0.0;
      for (double v : values) sum += v;
      const double mean = sum / static_cast<double>(values.size());
      s.mean = mean;
      if (values.size() >= 2) {
        double ss = 0.0;
        for (double v : values) ss += (v - mean) * (v - mean);
        s.stddev = std::sqrt(ss / static_cast<double>(values.size() - 1));
      }
    }
    out.metrics.push_back(std::move(s));
  }
  return out;
}

std::vector<AveragedResult> average_grouped(const std::vector<KeyedRow>& rows) {
  std::map<std::map<std::string, std::string>, std::vector<KeyedRow>> groups;
  for (const auto& r : rows) groups[r.key].push_back(r);
  std::vector<AveragedResult> out;
  for (const auto& [_, group] : groups) out.push_back(average_runs(group));
  return out;
}

std::string averaged_csv(const std::vector<AveragedResult>& results) {
  std::vector<std::string> key_names;
  std::vector<std::string> metric_names;
  for (const auto& r : results) {
    for (const auto& [k, _] : r.key) {
      if (std::find(key_names.begin(), key_names.end(), k) == key_names.end()) key_names.push_back(k);
    }
    for (const auto& m : r.metrics) {
      if (std::find(metric_names.begin(), metric_names.end(), m.name) == metric_names.end()) {
        metric_names.push_back(m.name);
      }
    }
  }
  std::string out;
  for (const auto& k : key_names) out += k + ",";
  out += "run_count";
  for (const auto& m : metric_names) out += "," + m + "_mean," + m + "_std," + m + "_count";
  out += "\n";
  for (const auto& r : results) {
    for (const auto& k : key_names) {
      const auto it = r.key.find(k);
      out += (it == r.key.end() ? std::string{} : it->second) + ",";
    }
    out += std::to_string(r.run_count);
    for (const auto& name : metric_names) {
      const auto it = std::find_if(r.metrics.begin(), r.metrics.end(), [&](const auto& m) { return m.name == name; });
      if (it == r.metrics.end()) {
        out += ",,,";
        continue;
      }
      out += "," + fmtutil::format_optional(it->mean) + "," + fmtutil::format_optional(it->stddev) + "," +
             std::to_string(it->count);
    }
    out += "\n";
  }
  return out;
}

nlohmann::ordered_json to_json(const std::vector<AveragedResult>& results) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& r : results) {
    nlohmann::ordered_json key = nlohmann::ordered_json::object();
    for (const auto& [k, v] : r.key) key[k] = v;
    nlohmann::ordered_json metrics = nlohmann::ordered_json::object();
    for (const auto& m : r.metrics) {
      metrics[m.name] = {{"mean", m.mean ? nlohmann::ordered_json(*m.mean) : nlohmann::ordered_json(nullptr)},
                         {"std", m.stddev ? nlohmann::ordered_json(*m.stddev) : nlohmann::ordered_json(nullptr)},
                         {"count", m.count}};
    }
    arr.push_back({{"key", key}, {"run_count", r.run_count}, {"metrics", metrics}});
  }
  return arr;
}

// ---------------------------------------------------------------------------

namespace {

void write_json(const std::filesystem::path& path, const nlohmann::ordered_json& doc) {
  fmtutil::write_file(path, doc.dump(2) + "\n");
}

void make_dirs(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());
}

}  // namespace

std::filesystem::path emit_session(const std::filesystem::path& out, const RunManifest& manifest,
                                   const PowerTrace& trace, const nlohmann::ordered_json& energy,
                                   const std::string& metrics_csv) {
  const auto dir = out / manifest.session_id;
  make_dirs(dir);
  write_json(dir / kManifestFile, to_json(manifest));
  fmtutil::write_file(dir / kTraceFile, trace_to_csv(trace));
  write_json(dir / kEnergyFile, energy);
  fmtutil::write_file(dir / kMetricsFile, metrics_csv);
  return dir;
}

std::filesystem::path emit_sweep(const std::filesystem::path& out, const RunManifest& manifest,
                                 const PowerTrace& trace, const std::vector<SweepPoint>& points,
                                 std::optional<double> saturation_rps) {
  const auto dir = out / ("sweep-" + manifest.session_id);
  make_dirs(dir);
  write_json(dir / kManifestFile, to_json(manifest));
  fmtutil::write_file(dir / kTraceFile, trace_to_csv(trace));

  nlohmann::ordered_json entries = nlohmann::ordered_json::array();
  std::vector<std::pair<std::vector<std::string>, MetricColumns>> all_rows;
  for (const auto& p : points) {
    const std::string name = "rps-" + fmtutil::format_double(p.summary.offered_rps);
    const auto pdir = dir / name;
    make_dirs(pdir);
    write_json(pdir / "summary.json", to_json(p.summary));
    write_json(pdir / kEnergyFile, to_json(p.energy));
    const std::vector<std::pair<std::vector<std::string>, MetricColumns>> row{
        {{manifest.session_id, to_string(p.summary.window.name)}, p.metrics.columns()}};
    fmtutil::write_file(pdir / kMetricsFile, metrics_csv({"session_id", "phase"}, row));
    all_rows.push_back(row.front());
    std::string jsonl;
    for (const auto& r : p.records) jsonl += to_json(r).dump() + "\n";
    fmtutil::write_file(pdir / "requests.jsonl", jsonl);

    nlohmann::ordered_json e{{"offered_rps", p.summary.offered_rps},
                             {"achieved_rps", p.summary.achieved_rps},
                             {"completed_requests", p.summary.completed_requests},
                             {"error_count", p.summary.error_count},
                             {"net_j", p.energy.net_j},
                             {"joules_per_request", p.metrics.energy_per_sample.value
                                                        ? nlohmann::ordered_json(*p.metrics.energy_per_sample.value)
                                                        : nlohmann::ordered_json(nullptr)}};
    e["joules_per_token"] = p.joules_per_token ? nlohmann::ordered_json(*p.joules_per_token) : nlohmann::ordered_json(nullptr);
    e["dir"] = name;
    entries.push_back(std::move(e));
  }
  nlohmann::ordered_json doc{{"sweep_id", manifest.session_id}, {"points", entries}};
  doc["saturation_rps"] = saturation_rps ? nlohmann::ordered_json(*saturation_rps) : nlohmann::ordered_json(nullptr);
  write_json(dir / kSweepFile, doc);
  return dir;
}

void emit_analysis(const std::filesystem::path& out,
                   const std::vector<std::pair<std::string, std::vector<CorrelationResult>>>& correlations,
                   const std::optional<LassoResult>& lasso) {
  make_dirs(out);
  fmtutil::write_file(out / kCorrelationsFile, correlation_table_csv(correlations));
  fmtutil::write_file(out / kCorrelationDetailFile, correlation_detail_csv(correlations));
  if (lasso) write_json(out / kLassoFile, to_json(*lasso));
}

std::vector<std::filesystem::path> find_metric_files(const std::filesystem::path& dir) {
  std::vector<std::filesystem::path> out;
  std::error_code ec;
  if (std::filesystem::is_regular_file(dir, ec) && dir.filename() == kMetricsFile) return {dir};
  for (std::filesystem::recursive_directory_iterator it(dir, ec), end; !ec && it != end; it.increment(ec)) {
    if (it->is_regular_file() && it->path().filename() == kMetricsFile) out.push_back(it->path());
  }
  if (ec) throw Error(ErrorCode::IoError, dir.string() + ": " + ec.message());
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace joulemark
