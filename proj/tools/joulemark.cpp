// joulemark command-line tool.
//
// Exit codes: 0 success, 1 other failure, 2 configuration error,
// 3 sensor error, 4 endpoint error.

#include <signal.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include "joulemark/analysis.hpp"
#include "joulemark/energy.hpp"
#include "joulemark/error.hpp"
#include "joulemark/format.hpp"
#include "joulemark/loadgen.hpp"
#include "joulemark/metrics.hpp"
#include "joulemark/protocol.hpp"
#include "joulemark/report.hpp"
#include "joulemark/sensors.hpp"
#include "joulemark/session.hpp"

namespace fs = std::filesystem;
using namespace joulemark;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitSensor = 3;
constexpr int kExitEndpoint = 4;

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::ConfigError:
    case ErrorCode::ParseError:
    case ErrorCode::InvalidParams:
    case ErrorCode::InvalidRate:
    case ErrorCode::DatasetEmpty:
    case ErrorCode::TopologyMismatch:
    case ErrorCode::TooShort:
    case ErrorCode::BindFailed:
    case ErrorCode::LaunchFailed:
      return kExitConfig;
    case ErrorCode::SensorUnavailable:
    case ErrorCode::SensorReadError:
    case ErrorCode::NoSensors:
      return kExitSensor;
    case ErrorCode::EndpointUnreachable:
      return kExitEndpoint;
    default:
      return kExitFailure;
  }
}

// Runs `on_signal` from a helper thread when SIGINT or SIGTERM arrives.
// Must be constructed before any other thread so the mask is inherited.
class SignalWatch {
 public:
  SignalWatch() {
    sigemptyset(&set_);
    sigaddset(&set_, SIGINT);
    sigaddset(&set_, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &set_, nullptr);
  }
  ~SignalWatch() { thread_ = {}; }

  void arm(std::function<void()> on_signal) {
    thread_ = std::jthread([this, cb = std::move(on_signal)](std::stop_token st) {
      const timespec wait{0, 200'000'000};
      while (!st.stop_requested()) {
        if (sigtimedwait(&set_, nullptr, &wait) > 0) {
          spdlog::warn("interrupted; closing session");
          cb();
        }
      }
    });
  }

 private:
  sigset_t set_{};
  std::jthread thread_;
};

std::string utc_now() {
  const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

SensorSet open_sensors(const fs::path& topology_file) {
  auto cfg = load_topology_config(topology_file);
  auto sensors = discover_sensors(cfg);
  if (sensors.live_count() == 0) throw Error(ErrorCode::NoSensors, "no declared domain could be bound");
  return sensors;
}

void check_baseline_topology(const IdleBaseline& baseline, const SensorSet& sensors) {
  if (baseline.fingerprint != sensors.topology.fingerprint()) {
    throw Error(ErrorCode::TopologyMismatch, "baseline fingerprint " + baseline.fingerprint +
                                                 " does not match the live topology " +
                                                 sensors.topology.fingerprint());
  }
}

// ---------------------------------------------------------------------------

struct CalibrateArgs {
  int duration_s = 60;
  int interval_ms = 100;
  fs::path topology;
  fs::path out;
};

int cmd_calibrate(const CalibrateArgs& a, SignalWatch& signals) {
  auto sensors = open_sensors(a.topology);
  SamplerConfig cfg{a.interval_ms, a.duration_s};
  SteadyClock clock;
  auto active = start_session(cfg, sensors, ManualLaunch{}, clock);
  signals.arm([&] { active->request_stop(); });
  Session session = active->wait();
  if (session.diagnostics.has_flag("INTERRUPTED")) {
    spdlog::error("calibration interrupted");
    return kExitFailure;
  }
  const auto baseline = calibrate_idle(session.trace, utc_now());
  save_baseline(a.out, baseline);
  std::cout << a.out.string() << "\n";
  return kExitOk;
}

struct MeasureArgs {
  std::string wrap;
  std::string listen;
  int interval_ms = 100;
  std::optional<int> max_duration_s;
  fs::path baseline;
  fs::path topology;
  fs::path out;
  std::string integration = "left_rectangle";
  std::string idle_mode = "scale_by_window";
  int repeat_index = 1;
};

int cmd_measure(const MeasureArgs& a, SignalWatch& signals) {
  if (a.wrap.empty() == a.listen.empty()) throw Error(ErrorCode::ConfigError, "give exactly one of --wrap or --listen");
  const EnergyOptions options{parse_integration_method(a.integration), parse_idle_mode(a.idle_mode)};
  const auto baseline = load_baseline(a.baseline);
  auto sensors = open_sensors(a.topology);
  check_baseline_topology(baseline, sensors);

  SamplerConfig cfg{a.interval_ms, a.max_duration_s};
  SteadyClock clock;
  LaunchSpec launch = a.wrap.empty() ? LaunchSpec{ListenLaunch{a.listen}} : LaunchSpec{WrapLaunch{a.wrap}};
  const std::string started = utc_now();
  auto active = start_session(cfg, sensors, launch, clock);
  spdlog::info("session {} started", active->id());
  signals.arm([&] { active->request_stop(); });
  Session session = active->wait();

  const auto evaluation = evaluate_session(session, baseline, options);
  auto manifest = manifest_for(session, "discriminative", a.repeat_index);
  manifest.started_at = started;
  manifest.finished_at = utc_now();
  manifest.validate(baseline.fingerprint);
  const auto dir = emit_session(a.out, manifest, session.trace, to_json(evaluation.energy, session.id, baseline),
                                session_metrics_csv(session.id, evaluation));
  std::cout << dir.string() << "\n";
  if (session.diagnostics.exit_status && *session.diagnostics.exit_status != 0) {
    spdlog::warn("workload exited with status {}", *session.diagnostics.exit_status);
  }
  return kExitOk;
}

struct ReplayArgs {
  fs::path trace;
  fs::path markers;
  fs::path baseline;
  fs::path out;
  int interval_ms = 100;
  std::string topology_name = "replay";
  std::string id;
  std::string integration = "left_rectangle";
  std::string idle_mode = "scale_by_window";
};

int cmd_replay(const ReplayArgs& a) {
  const EnergyOptions options{parse_integration_method(a.integration), parse_idle_mode(a.idle_mode)};
  const auto baseline = load_baseline(a.baseline);
  const std::string trace_text = fmtutil::read_file(a.trace);
  const std::string marker_text = fmtutil::read_file(a.markers);
  ReplaySensor sensor(a.trace);
  const auto markers = parse_marker_stream(marker_text);
  const std::string id = a.id.empty() ? content_session_id({trace_text, marker_text}) : a.id;
  Session session = replay_session(id, sensor, markers, a.interval_ms, a.topology_name);
  const auto evaluation = evaluate_session(session, baseline, options);
  auto manifest = manifest_for(session, "discriminative");
  manifest.validate(baseline.fingerprint);
  const auto dir = emit_session(a.out, manifest, session.trace, to_json(evaluation.energy, session.id, baseline),
                                session_metrics_csv(session.id, evaluation));
  std::cout << dir.string() << "\n";
  return kExitOk;
}

struct LoadgenArgs {
  fs::path config;
  std::string endpoint;
  std::string model;
  fs::path dataset;
  std::vector<double> rps;
  double duration_s = 60.0;
  double warmup_s = 10.0;
  double cooldown_s = 5.0;
  fs::path baseline;
  fs::path topology;
  fs::path out;
  int interval_ms = 100;
  std::optional<std::uint64_t> poisson_seed;
  std::size_t max_in_flight = 0;
  fs::path descriptor;
  std::string metrics_url;
  std::optional<std::int64_t> vram_used;
  std::optional<std::int64_t> vram_total;
};

// Fills unset arguments from the sweep config file.
void apply_sweep_config(LoadgenArgs& a, const CLI::App& sub) {
  if (a.config.empty()) return;
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(fmtutil::read_file(a.config));
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, a.config.string() + ": " + e.what());
  }
  auto unset = [&](const char* opt) { return sub.count(opt) == 0; };
  try {
    if (doc.contains("endpoint") && unset("--endpoint")) a.endpoint = doc["endpoint"].get<std::string>();
    if (doc.contains("model") && unset("--model")) a.model = doc["model"].get<std::string>();
    if (doc.contains("dataset") && unset("--dataset")) a.dataset = doc["dataset"].get<std::string>();
    if (doc.contains("rps") && unset("--rps")) a.rps = doc["rps"].get<std::vector<double>>();
    if (doc.contains("duration_s") && unset("--duration-s")) a.duration_s = doc["duration_s"].get<double>();
    if (doc.contains("warmup_s") && unset("--warmup-s")) a.warmup_s = doc["warmup_s"].get<double>();
    if (doc.contains("cooldown_s") && unset("--cooldown-s")) a.cooldown_s = doc["cooldown_s"].get<double>();
    if (doc.contains("metrics_url") && unset("--metrics-url")) a.metrics_url = doc["metrics_url"].get<std::string>();
    if (doc.contains("poisson_seed") && unset("--poisson-seed")) a.poisson_seed = doc["poisson_seed"].get<std::uint64_t>();
    if (doc.contains("max_in_flight") && unset("--max-in-flight")) a.max_in_flight = doc["max_in_flight"].get<std::size_t>();
    if (doc.contains("descriptor") && unset("--descriptor")) a.descriptor = doc["descriptor"].get<std::string>();
    if (doc.contains("gpu_vram_used_bytes")) a.vram_used = doc["gpu_vram_used_bytes"].get<std::int64_t>();
    if (doc.contains("gpu_vram_total_bytes")) a.vram_total = doc["gpu_vram_total_bytes"].get<std::int64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::ConfigError, a.config.string() + ": " + e.what());
  }
}

int cmd_loadgen(LoadgenArgs a, const CLI::App& sub, SignalWatch& signals) {
  apply_sweep_config(a, sub);
  if (a.endpoint.empty() || a.model.empty() || a.dataset.empty() || a.rps.empty()) {
    throw Error(ErrorCode::ConfigError, "endpoint, model, dataset and rps are required");
  }
  std::sort(a.rps.begin(), a.rps.end());
  if (std::adjacent_find(a.rps.begin(), a.rps.end()) != a.rps.end()) {
    throw Error(ErrorCode::ConfigError, "rps values must be distinct");
  }
  std::optional<ModelDescriptor> model;
  if (!a.descriptor.empty()) {
    auto checked = validate_descriptor(descriptor_from_json(nlohmann::json::parse(fmtutil::read_file(a.descriptor))));
    if (!checked.ok()) throw Error(ErrorCode::ConfigError, "descriptor: " + checked.violations.front());
    model = checked.descriptor;
  }
  const auto dataset = load_dataset(a.dataset);
  const auto baseline = load_baseline(a.baseline);
  auto sensors = open_sensors(a.topology);
  check_baseline_topology(baseline, sensors);
  probe_endpoint(a.endpoint);

  LoadgenOptions options;
  options.endpoint = a.endpoint;
  options.params.model = a.model;
  options.max_in_flight = a.max_in_flight;
  options.metrics_url = a.metrics_url;
  const ArrivalMode mode = a.poisson_seed ? ArrivalMode::Poisson : ArrivalMode::Deterministic;
  const std::uint64_t seed = a.poisson_seed.value_or(0);

  SteadyClock clock;
  const NowFn now = [&clock] { return clock.now_ns(); };
  const std::string started = utc_now();
  auto active = start_session(SamplerConfig{a.interval_ms, std::nullopt}, sensors, ManualLaunch{}, clock);
  std::atomic<bool> interrupted{false};
  signals.arm([&] { interrupted = true; });

  std::vector<LoadgenRun> runs;
  for (std::size_t i = 0; i < a.rps.size() && !interrupted; ++i) {
    const double rps = a.rps[i];
    if (a.warmup_s > 0.0) {
      spdlog::info("rps {}: warm-up {} s", rps, a.warmup_s);
      (void)run_load(options, dataset, schedule_arrivals(mode, rps, a.warmup_s, seed + 1), now);
    }
    spdlog::info("rps {}: measuring {} s", rps, a.duration_s);
    auto run = run_load(options, dataset, schedule_arrivals(mode, rps, a.duration_s, seed), now);
    active->recorder().add_phase(run.summary.window);
    runs.push_back(std::move(run));
    if (i + 1 < a.rps.size() && a.cooldown_s > 0.0) {
      std::this_thread::sleep_for(std::chrono::duration<double>(a.cooldown_s));
    }
  }
  active->finish();
  Session session = active->wait();
  if (interrupted) spdlog::warn("sweep interrupted after {} point(s)", runs.size());

  std::vector<SweepPoint> points;
  std::vector<SaturationPoint> curve;
  for (auto& run : runs) {
    SweepPoint p;
    p.summary = run.summary;
    p.energy = net_energy(integrate(session.trace, run.summary.window), baseline, run.summary.window);
    p.energy.sample_count = run.summary.completed_requests;
    if (run.summary.completed_requests == 0) {
      spdlog::warn("rps {}: no completed requests", run.summary.offered_rps);
      continue;
    }
    p.metrics = generative_metrics(p.energy, p.summary, model, a.vram_used, a.vram_total);
    if (p.summary.total_output_tokens > 0) p.joules_per_token = energy_per_output_token(p.energy, p.summary);
    p.records = std::move(run.records);
    curve.push_back(SaturationPoint{p.summary.offered_rps, p.summary.achieved_rps, *p.metrics.energy_per_sample.value});
    points.push_back(std::move(p));
  }
  std::optional<double> saturation;
  if (curve.size() >= 3) saturation = detect_saturation(curve);

  auto manifest = manifest_for(session, "generative");
  manifest.model = model;
  manifest.run_config = make_request_body(options.params, Prompt{"", ""});
  manifest.run_config.erase("messages");
  manifest.started_at = started;
  manifest.finished_at = utc_now();
  const auto dir = emit_sweep(a.out, manifest, session.trace, points, saturation);
  std::cout << dir.string() << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------

struct AnalyzeArgs {
  std::vector<fs::path> inputs;
  std::string target = "energy_per_sample";
  bool lasso = false;
  fs::path out;
  std::string phase = "auto";
  std::vector<std::string> exclude;
  std::uint64_t seed = 42;
};

// Rows of every metrics.csv under `dir` restricted to `phase`.
Dataset load_metric_dataset(const fs::path& dir, const std::string& phase, const std::string& target) {
  std::vector<MetricTable> tables;
  for (const auto& f : find_metric_files(dir)) tables.push_back(parse_metrics_csv(fmtutil::read_file(f)));
  if (tables.empty()) throw Error(ErrorCode::ConfigError, dir.string() + ": no metrics.csv found");

  std::string wanted = phase;
  if (wanted == "auto") {
    wanted.clear();
    for (const auto& t : tables) {
      const auto pc = t.column("phase");
      for (const auto& row : t.cells) {
        if (pc && row[*pc] == "inference") wanted = "inference";
      }
    }
  }
  Dataset data;
  data.target = target;
  for (const auto& name : tables.front().header) {
    if (name != "session_id" && name != "phase") data.columns.push_back(name);
  }
  for (const auto& t : tables) {
    const auto pc = t.column("phase");
    for (const auto& row : t.cells) {
      if (!wanted.empty() && pc && row[*pc] != wanted) continue;
      std::vector<double> values;
      for (const auto& name : data.columns) {
        const auto c = t.column(name);
        const auto v = c ? fmtutil::parse_double(row[*c]) : std::nullopt;
        values.push_back(v.value_or(std::numeric_limits<double>::quiet_NaN()));
      }
      data.rows.push_back(std::move(values));
    }
  }
  data.validate();
  return data;
}

// Drops excluded columns and columns absent in every row.
Dataset prune_columns(const Dataset& in, const std::vector<std::string>& exclude) {
  Dataset out;
  out.target = in.target;
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < in.columns.size(); ++c) {
    const bool excluded = std::find(exclude.begin(), exclude.end(), in.columns[c]) != exclude.end();
    const bool any = std::any_of(in.rows.begin(), in.rows.end(), [&](const auto& r) { return !std::isnan(r[c]); });
    if (in.columns[c] == in.target || (!excluded && any)) keep.push_back(c);
  }
  for (auto c : keep) out.columns.push_back(in.columns[c]);
  for (const auto& r : in.rows) {
    std::vector<double> v;
    for (auto c : keep) v.push_back(r[c]);
    out.rows.push_back(std::move(v));
  }
  return out;
}

int cmd_analyze(const AnalyzeArgs& a) {
  std::vector<std::pair<std::string, std::vector<CorrelationResult>>> correlations;
  Dataset combined;
  for (const auto& in : a.inputs) {
    auto data = prune_columns(load_metric_dataset(in, a.phase, a.target), a.exclude);
    std::string label = fs::path(in).lexically_normal().filename().string();
    if (label.empty()) label = fs::path(in).lexically_normal().parent_path().filename().string();
    correlations.emplace_back(label, correlate_against_energy(data));
    if (combined.columns.empty()) {
      combined = data;
    } else if (combined.columns == data.columns) {
      combined.rows.insert(combined.rows.end(), data.rows.begin(), data.rows.end());
    } else {
      spdlog::warn("{}: columns differ from the first input; excluded from the lasso fit", in.string());
    }
  }
  std::optional<LassoResult> lasso;
  if (a.lasso) {
    FeatureSelectionOptions opts;
    opts.split_seed = a.seed;
    lasso = feature_selection_report(prune_columns(combined, {}), opts);
  }
  emit_analysis(a.out, correlations, lasso);
  std::cout << a.out.string() << "\n";
  return kExitOk;
}

struct ReportArgs {
  std::vector<fs::path> inputs;
  fs::path out;
};

int cmd_report(const ReportArgs& a) {
  std::vector<KeyedRow> rows;
  for (const auto& in : a.inputs) {
    for (const auto& f : find_metric_files(in)) {
      fs::path manifest_path = f.parent_path() / kManifestFile;
      if (!fs::exists(manifest_path)) manifest_path = f.parent_path().parent_path() / kManifestFile;
      std::string model_name, config;
      if (fs::exists(manifest_path)) {
        const auto m = manifest_from_json(nlohmann::json::parse(fmtutil::read_file(manifest_path)));
        model_name = m.model ? m.model->name : "";
        config = m.topology_name;
      }
      const auto table = parse_metrics_csv(fmtutil::read_file(f));
      const auto pc = table.column("phase");
      const auto rc = table.column("request_rate");
      for (const auto& row : table.cells) {
        KeyedRow kr;
        kr.key = {{"model", model_name},
                  {"config", config},
                  {"phase", pc ? row[*pc] : ""},
                  {"rps", rc ? row[*rc] : ""}};
        for (std::size_t c = 0; c < table.header.size(); ++c) {
          const auto& name = table.header[c];
          if (name == "session_id" || name == "phase") continue;
          kr.columns.emplace_back(name, MetricCell{fmtutil::parse_double(row[c]), {}});
        }
        rows.push_back(std::move(kr));
      }
    }
  }
  if (rows.empty()) throw Error(ErrorCode::ConfigError, "no metric rows found in the inputs");
  const auto averaged = average_grouped(rows);
  fs::create_directories(a.out);
  fmtutil::write_file(a.out / "averaged.csv", averaged_csv(averaged));
  fmtutil::write_file(a.out / "averaged.json", to_json(averaged).dump(2) + "\n");
  std::cout << a.out.string() << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  SignalWatch signals;
  CLI::App app{"Energy measurement toolkit for ML training, inference and LLM serving"};
  app.set_version_flag("--version", std::string(toolkit_version()));
  app.require_subcommand(1);
  bool verbose = false;
  app.add_flag("-v,--verbose", verbose, "Debug logging");

  CalibrateArgs cal;
  auto* c = app.add_subcommand("calibrate-idle", "Record an idle baseline");
  c->add_option("--duration-s", cal.duration_s, "Idle recording length (>= 10 s)")->required();
  c->add_option("--topology", cal.topology, "Sensor topology JSON")->required()->check(CLI::ExistingFile);
  c->add_option("--out", cal.out, "Baseline JSON to write")->required();
  c->add_option("--interval-ms", cal.interval_ms, "Sampling interval");

  MeasureArgs mea;
  auto* m = app.add_subcommand("measure", "Measure a workload");
  auto* wrap = m->add_option("--wrap", mea.wrap, "Command to launch and measure");
  auto* listen = m->add_option("--listen", mea.listen, "Socket path for marker connections");
  wrap->excludes(listen);
  m->add_option("--interval-ms", mea.interval_ms, "Sampling interval");
  m->add_option("--max-duration-s", mea.max_duration_s, "Safety cap on session length");
  m->add_option("--baseline", mea.baseline, "Idle baseline JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--topology", mea.topology, "Sensor topology JSON")->required()->check(CLI::ExistingFile);
  m->add_option("--out", mea.out, "Results directory")->required();
  m->add_option("--integration", mea.integration, "left_rectangle or trapezoidal");
  m->add_option("--idle-mode", mea.idle_mode, "scale_by_window or fixed_idle_duration");
  m->add_option("--repeat-index", mea.repeat_index, "Repeat number of this scenario (>= 1)");

  ReplayArgs rep;
  auto* r = app.add_subcommand("replay", "Rebuild a session from a recorded trace and marker transcript");
  r->add_option("--trace", rep.trace, "Trace CSV")->required()->check(CLI::ExistingFile);
  r->add_option("--markers", rep.markers, "NDJSON marker transcript with t_ns")->required()->check(CLI::ExistingFile);
  r->add_option("--baseline", rep.baseline, "Idle baseline JSON")->required()->check(CLI::ExistingFile);
  r->add_option("--out", rep.out, "Results directory")->required();
  r->add_option("--interval-ms", rep.interval_ms, "Nominal sampling interval of the trace");
  r->add_option("--topology-name", rep.topology_name, "Topology name to record");
  r->add_option("--id", rep.id, "Session id (default: derived from the inputs)");
  r->add_option("--integration", rep.integration, "left_rectangle or trapezoidal");
  r->add_option("--idle-mode", rep.idle_mode, "scale_by_window or fixed_idle_duration");

  LoadgenArgs lg;
  auto* l = app.add_subcommand("loadgen", "Sweep request rates against a chat-completions endpoint");
  l->add_option("--config", lg.config, "Sweep config JSON")->check(CLI::ExistingFile);
  l->add_option("--endpoint", lg.endpoint, "Endpoint base URL");
  l->add_option("--model", lg.model, "Model name sent with requests");
  l->add_option("--dataset", lg.dataset, "JSONL prompts with id and prompt");
  l->add_option("--rps", lg.rps, "Request rates")->delimiter(',');
  l->add_option("--duration-s", lg.duration_s, "Measured seconds per point");
  l->add_option("--warmup-s", lg.warmup_s, "Discarded warm-up seconds per point");
  l->add_option("--cooldown-s", lg.cooldown_s, "Pause between points");
  l->add_option("--baseline", lg.baseline, "Idle baseline JSON")->required()->check(CLI::ExistingFile);
  l->add_option("--topology", lg.topology, "Sensor topology JSON")->required()->check(CLI::ExistingFile);
  l->add_option("--out", lg.out, "Results directory")->required();
  l->add_option("--interval-ms", lg.interval_ms, "Sampling interval");
  l->add_option("--poisson-seed", lg.poisson_seed, "Use Poisson arrivals with this seed");
  l->add_option("--max-in-flight", lg.max_in_flight, "Cap on concurrent requests (0 = none)");
  l->add_option("--descriptor", lg.descriptor, "Model descriptor JSON");
  l->add_option("--metrics-url", lg.metrics_url, "Prometheus metrics URL for cache_hit_rate");

  AnalyzeArgs an;
  auto* a = app.add_subcommand("analyze", "Correlations and Lasso feature selection over metric files");
  a->add_option("--input", an.inputs, "Results directories, one per configuration")->required();
  a->add_option("--target", an.target, "Target metric column");
  a->add_flag("--lasso", an.lasso, "Also run Lasso feature selection");
  a->add_option("--out", an.out, "Output directory")->required();
  a->add_option("--phase", an.phase, "Phase rows to use (auto = inference when present)");
  a->add_option("--exclude", an.exclude, "Columns to leave out")->delimiter(',');
  a->add_option("--seed", an.seed, "Train/test split seed");

  ReportArgs rp;
  auto* p = app.add_subcommand("report", "Average repeated runs");
  p->add_option("--input", rp.inputs, "Results directories")->required();
  p->add_option("--out", rp.out, "Output directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  spdlog::set_default_logger(spdlog::stderr_color_mt("joulemark"));
  spdlog::set_level(verbose ? spdlog::level::debug : spdlog::level::info);
  spdlog::set_pattern("%^%l%$: %v");

  try {
    if (c->parsed()) return cmd_calibrate(cal, signals);
    if (m->parsed()) return cmd_measure(mea, signals);
    if (r->parsed()) return cmd_replay(rep);
    if (l->parsed()) return cmd_loadgen(lg, *l, signals);
    if (a->parsed()) return cmd_analyze(an);
    if (p->parsed()) return cmd_report(rp);
  } catch (const Error& e) {
    spdlog::error("{}", e.what());
    return exit_code_for(e.code());
  } catch (const nlohmann::json::exception& e) {
    spdlog::error("{}", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    spdlog::error("{}", e.what());
    return kExitFailure;
  }
  return kExitFailure;
}
