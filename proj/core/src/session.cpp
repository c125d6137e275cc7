#include "joulemark/session.hpp"

#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <future>
#include <limits>
#include <set>
#include <chrono>
#include <cmath>
#include <random>

#include <spdlog/spdlog.h>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

extern char** environ;

namespace joulemark {

void SamplerConfig::validate() const {
  if (interval_ms < 10 || interval_ms > 10'000) {
    throw Error(ErrorCode::ConfigError, "interval_ms must be within [10, 10000], got " + std::to_string(interval_ms));
  }
  if (max_duration_s && *max_duration_s <= 0) throw Error(ErrorCode::ConfigError, "max_duration_s must be positive");
}

std::int64_t SteadyClock::now_ns() const {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

bool SteadyClock::sleep_until(std::int64_t deadline_ns, std::stop_token stop) {
  const auto deadline = std::chrono::steady_clock::time_point(std::chrono::nanoseconds(deadline_ns));
  std::mutex mu;
  std::condition_variable_any cv;
  std::unique_lock lock(mu);
  cv.wait_until(lock, stop, deadline, [] { return false; });
  return !stop.stop_requested();
}

bool SimulatedClock::sleep_until(std::int64_t deadline_ns, std::stop_token stop) {
  if (stop.stop_requested()) return false;
  auto cur = now_.load();
  while (cur < deadline_ns && !now_.compare_exchange_weak(cur, deadline_ns)) {
  }
  return true;
}

bool SessionDiagnostics::has_flag(std::string_view flag) const {
  return std::find(flags.begin(), flags.end(), flag) != flags.end();
}

nlohmann::json to_json(const SessionDiagnostics& d) {
  nlohmann::json per_domain = nlohmann::json::object();
  for (const auto& [domain, n] : d.samples_per_domain) per_domain[to_string(domain)] = n;
  nlohmann::json gaps = nlohmann::json::array();
  for (const auto& g : d.gaps) {
    gaps.push_back({{"tick", g.tick}, {"timestamp_ns", g.timestamp_ns}, {"domain", to_string(g.domain)},
                    {"reason", g.reason}});
  }
  nlohmann::json absent = nlohmann::json::array();
  for (const auto& a : d.absent_domains) absent.push_back({{"domain", to_string(a.domain)}, {"reason", a.reason}});
  nlohmann::json out{{"tick_count", d.tick_count},
                     {"late_ticks", d.late_ticks},
                     {"skipped_ticks", d.skipped_ticks},
                     {"mean_lateness_ms", d.mean_lateness_ms},
                     {"max_lateness_ms", d.max_lateness_ms},
                     {"samples_per_domain", per_domain},
                     {"gap_count", d.gap_count()},
                     {"gaps", gaps},
                     {"discarded_readings", d.discarded_readings},
                     {"absent_domains", absent},
                     {"flags", d.flags},
                     {"protocol_errors", d.protocol_errors}};
  out["exit_status"] = d.exit_status ? nlohmann::json(*d.exit_status) : nlohmann::json(nullptr);
  return out;
}

// ---------------------------------------------------------------------------

SessionRecorder::SessionRecorder(std::string id, SamplerConfig config, SensorSet& sensors)
    : id_(std::move(id)), config_(config), sensors_(sensors) {
  diag_.absent_domains = sensors_.absent;
}

void SessionRecorder::begin(std::int64_t now_ns) {
  std::lock_guard lock(mu_);
  for (auto& s : sensors_.sensors) {
    try {
      s->start(now_ns);
    } catch (const Error& e) {
      spdlog::warn("{}: priming failed: {}", to_string(s->domain()), e.what());
    }
  }
}

void SessionRecorder::read_all_locked(std::size_t tick, std::int64_t now_ns) {
  for (auto& sensor : sensors_.sensors) {
    const auto domain = sensor->domain();
    double watts = 0.0;
    try {
      watts = sensor->read_w(now_ns);
    } catch (const Error& e) {
      diag_.gaps.push_back(SampleGap{tick, now_ns, domain, e.what()});
      continue;
    }
    const auto cap = sensors_.caps_w.find(domain);
    if (!std::isfinite(watts) || watts < 0.0 || (cap != sensors_.caps_w.end() && watts > cap->second)) {
      spdlog::warn("{}: discarding implausible reading {} W", to_string(domain), watts);
      ++diag_.discarded_readings;
      diag_.gaps.push_back(SampleGap{tick, now_ns, domain, "implausible reading"});
      continue;
    }
    samples_.push_back(PowerSample{now_ns, domain, watts});
    ++diag_.samples_per_domain[domain];
  }
  last_sample_ns_ = now_ns;
  any_sample_ = true;
}

void SessionRecorder::sampling_tick(std::size_t tick, std::int64_t scheduled_ns, std::int64_t now_ns) {
  std::lock_guard lock(mu_);
  if (closed_) return;
  if (any_sample_ && now_ns <= last_sample_ns_) return;
  const double lateness_ms = static_cast<double>(std::max<std::int64_t>(0, now_ns - scheduled_ns)) * 1e-6;
  if (now_ns - scheduled_ns > config_.interval_ns()) ++diag_.late_ticks;
  lateness_sum_ms_ += lateness_ms;
  ++lateness_count_;
  diag_.max_lateness_ms = std::max(diag_.max_lateness_ms, lateness_ms);
  diag_.mean_lateness_ms = lateness_sum_ms_ / static_cast<double>(lateness_count_);
  ++diag_.tick_count;
  read_all_locked(tick, now_ns);
}

void SessionRecorder::note_skipped_ticks(std::size_t count) {
  std::lock_guard lock(mu_);
  diag_.skipped_ticks += count;
}

void SessionRecorder::append_samples(std::span<const PowerSample> samples) {
  std::lock_guard lock(mu_);
  if (samples.empty()) return;
  ++diag_.tick_count;
  for (const auto& s : samples) {
    samples_.push_back(s);
    ++diag_.samples_per_domain[s.domain];
    last_sample_ns_ = std::max(last_sample_ns_, s.timestamp_ns);
  }
  any_sample_ = true;
}

std::vector<std::string> SessionRecorder::apply_marker(const Marker& marker, std::int64_t now_ns) {
  std::lock_guard lock(mu_);
  const std::int64_t ts = marker.timestamp_ns.value_or(now_ns);
  auto violation = [&](const std::string& why) {
    throw Error(ErrorCode::ProtocolViolation, std::string(to_string(marker.kind)) + ": " + why);
  };

  std::vector<std::string> rejected;
  switch (marker.kind) {
    case MarkerKind::Hello: {
      const auto& hello = std::get<HelloPayload>(marker.payload);
      if (hello.model) {
        auto checked = validate_descriptor(*hello.model);
        if (!checked.ok()) return checked.violations;
        model_ = std::move(checked.descriptor);
      }
      if (!hello.run_config.is_null()) run_config_ = hello.run_config;
      break;
    }
    case MarkerKind::PhaseStart: {
      if (open_phase_) violation("phase '" + to_string(open_phase_->first) + "' is still active");
      if (!phases_.empty() && ts < phases_.back().t_end_ns) violation("starts before the previous phase ended");
      open_phase_.emplace(*std::get<PhasePayload>(marker.payload).name, ts);
      break;
    }
    case MarkerKind::PhaseEnd: {
      if (!open_phase_) violation("no active phase");
      const auto& name = std::get<PhasePayload>(marker.payload).name;
      if (name && !(*name == open_phase_->first)) violation("does not match active phase '" + to_string(open_phase_->first) + "'");
      if (ts <= open_phase_->second) violation("phase has zero or negative length");
      phases_.push_back(Phase{open_phase_->first, open_phase_->second, ts});
      open_phase_.reset();
      break;
    }
    case MarkerKind::Epoch:
    case MarkerKind::SampleCount:
    case MarkerKind::Goodbye:
      break;
  }
  Marker stored = marker;
  stored.timestamp_ns = ts;
  markers_.push_back(std::move(stored));
  return rejected;
}

void SessionRecorder::add_flag(std::string flag) {
  std::lock_guard lock(mu_);
  if (std::find(diag_.flags.begin(), diag_.flags.end(), flag) == diag_.flags.end()) diag_.flags.push_back(std::move(flag));
}

void SessionRecorder::add_protocol_error(std::string message) {
  std::lock_guard lock(mu_);
  diag_.protocol_errors.push_back(std::move(message));
}

void SessionRecorder::set_exit_status(int status) {
  std::lock_guard lock(mu_);
  diag_.exit_status = status;
}

void SessionRecorder::close_open_phase(std::int64_t now_ns) {
  std::lock_guard lock(mu_);
  if (open_phase_ && now_ns > open_phase_->second) {
    phases_.push_back(Phase{open_phase_->first, open_phase_->second, now_ns});
  }
  open_phase_.reset();
}

void SessionRecorder::add_phase(Phase phase) {
  std::lock_guard lock(mu_);
  phases_.push_back(std::move(phase));
}

bool SessionRecorder::has_phases() const {
  std::lock_guard lock(mu_);
  return !phases_.empty() || open_phase_.has_value();
}

void SessionRecorder::close(std::int64_t now_ns) {
  {
    std::lock_guard lock(mu_);
    if (closed_) return;
    if (any_sample_ && now_ns > last_sample_ns_ && !sensors_.sensors.empty()) {
      read_all_locked(diag_.tick_count, now_ns);
    }
    closed_ = true;
  }
  closed_cv_.notify_all();
}

std::optional<std::int64_t> SessionRecorder::last_sample_ns() const {
  std::lock_guard lock(mu_);
  if (!any_sample_) return std::nullopt;
  return last_sample_ns_;
}

bool SessionRecorder::closed() const {
  std::lock_guard lock(mu_);
  return closed_;
}

void SessionRecorder::wait_closed(std::stop_token stop) {
  std::unique_lock lock(mu_);
  closed_cv_.wait(lock, stop, [this] { return closed_; });
}

Session SessionRecorder::finalize() {
  std::lock_guard lock(mu_);
  if (finalized_) throw Error(ErrorCode::InvariantViolation, "session already finalized");
  if (!any_sample_ || samples_.empty()) throw Error(ErrorCode::EmptyTrace, "no ticks completed before the session closed");

  if (open_phase_) {
    if (last_sample_ns_ > open_phase_->second) {
      phases_.push_back(Phase{open_phase_->first, open_phase_->second, last_sample_ns_});
    }
    open_phase_.reset();
    diag_.flags.emplace_back("UNTERMINATED_PHASE");
  }
  std::stable_sort(phases_.begin(), phases_.end(),
                   [](const Phase& a, const Phase& b) { return a.t_start_ns < b.t_start_ns; });
  check_phases(phases_);

  auto trace = PowerTrace::seal(sensors_.topology, config_.interval_ms, samples_);
  for (const auto& p : phases_) {
    if (p.t_start_ns < trace.first_ns() || p.t_end_ns > trace.last_ns()) {
      throw Error(ErrorCode::InvariantViolation, "phase '" + to_string(p.name) + "' lies outside the trace");
    }
  }
  finalized_ = true;
  return Session{id_, std::move(trace), phases_, markers_, model_, run_config_, diag_};
}

// ---------------------------------------------------------------------------

void run_sampling_loop(SessionRecorder& recorder, Clock& clock, std::stop_token stop,
                       const std::function<void()>& on_first_tick) {
  bool announced = false;
  auto announce = [&] {
    if (!announced && on_first_tick) on_first_tick();
    announced = true;
  };
  const std::int64_t step = recorder.config().interval_ns();
  const std::optional<std::int64_t> cap_ns =
      recorder.config().max_duration_s
          ? std::optional<std::int64_t>(static_cast<std::int64_t>(*recorder.config().max_duration_s) * 1'000'000'000)
          : std::nullopt;

  const std::int64_t t0 = clock.now_ns();
  recorder.begin(t0);
  std::size_t k = 0;
  while (!stop.stop_requested() && !recorder.closed()) {
    const std::int64_t scheduled = t0 + static_cast<std::int64_t>(k) * step;
    if (!clock.sleep_until(scheduled, stop)) break;
    const std::int64_t now = clock.now_ns();
    if (cap_ns && now - t0 >= *cap_ns) {
      recorder.add_flag(std::string(kFlagMaxDuration));
      recorder.close(now);
      break;
    }
    recorder.sampling_tick(k, scheduled, now);
    announce();

    std::size_t next = k + 1;
    if (now > scheduled) {
      const std::int64_t after = clock.now_ns();
      std::size_t skipped = 0;
      while (t0 + static_cast<std::int64_t>(next) * step < after) {
        ++next;
        ++skipped;
      }
      if (skipped > 0) recorder.note_skipped_ticks(skipped);
    }
    k = next;
  }
  announce();
}

// ---------------------------------------------------------------------------

std::string generate_session_id() {
  std::random_device rd;
  std::uniform_int_distribution<std::uint64_t> dist;
  const auto wall = std::chrono::system_clock::now().time_since_epoch().count();
  return fmtutil::fnv1a_hex(std::to_string(dist(rd)) + ":" + std::to_string(wall) + ":" + std::to_string(::getpid()));
}

ActiveSession::ActiveSession(std::string id, const SamplerConfig& config, SensorSet& sensors, Clock& clock)
    : clock_(clock), recorder_(std::move(id), config, sensors) {}

ActiveSession::~ActiveSession() {
  stop_.request_stop();
  if (child_pid_ && reaper_.joinable()) {
    ::kill(*child_pid_, SIGTERM);
  }
  sampler_.request_stop();
  if (listener_) listener_->stop();
  if (owns_socket_path_) {
    std::error_code ec;
    std::filesystem::remove(socket_path_, ec);
  }
}

void ActiveSession::request_stop() {
  if (child_pid_) {
    ::kill(*child_pid_, SIGTERM);
    return;
  }
  recorder_.add_flag("INTERRUPTED");
  recorder_.close(clock_.now_ns());
}

void ActiveSession::finish() { recorder_.close(clock_.now_ns()); }

Session ActiveSession::wait() {
  recorder_.wait_closed(stop_.get_token());
  if (child_pid_ && reaper_.joinable()) {
    // Closed by the duration cap while the child is still running.
    ::kill(*child_pid_, SIGTERM);
  }
  if (reaper_.joinable()) reaper_.join();
  sampler_.request_stop();
  if (sampler_.joinable()) sampler_.join();
  if (listener_) listener_->stop();

  if (child_pid_) {
    // The implicit phase covers the child's lifetime up to session close.
    if (auto end = recorder_.last_sample_ns()) {
      recorder_.close_open_phase(*end);
      if (!recorder_.has_phases() && *end > child_start_ns_) {
        recorder_.add_phase(Phase{PhaseName::custom("workload"), child_start_ns_, *end});
      }
    }
  }
  return recorder_.finalize();
}

namespace {

int spawn_shell(const std::string& command, const std::vector<std::string>& extra_env) {
  std::vector<std::string> env_storage;
  for (char** e = environ; e && *e; ++e) {
    std::string_view entry(*e);
    bool overridden = false;
    for (const auto& extra : extra_env) {
      if (entry.substr(0, entry.find('=') + 1) == std::string_view(extra).substr(0, extra.find('=') + 1)) {
        overridden = true;
      }
    }
    if (!overridden) env_storage.emplace_back(entry);
  }
  for (const auto& extra : extra_env) env_storage.push_back(extra);
  std::vector<char*> envp;
  for (auto& e : env_storage) envp.push_back(e.data());
  envp.push_back(nullptr);

  std::string sh = "/bin/sh", flag = "-c", cmd = command;
  char* argv[] = {sh.data(), flag.data(), cmd.data(), nullptr};
  pid_t pid = 0;
  int rc = posix_spawn(&pid, "/bin/sh", nullptr, nullptr, argv, envp.data());
  if (rc != 0) throw Error(ErrorCode::LaunchFailed, "posix_spawn failed: " + std::string(std::strerror(rc)));
  return pid;
}

}  // namespace

std::unique_ptr<ActiveSession> start_session(const SamplerConfig& config, SensorSet& sensors, const LaunchSpec& launch,
                                             Clock& clock, std::string session_id) {
  config.validate();
  if (sensors.live_count() == 0) throw Error(ErrorCode::NoSensors, "no live sensors to sample");
  if (session_id.empty()) session_id = generate_session_id();

  std::unique_ptr<ActiveSession> session(new ActiveSession(session_id, config, sensors, clock));
  auto& rec = session->recorder_;

  if (const auto* listen = std::get_if<ListenLaunch>(&launch)) {
    session->listener_ = std::make_unique<MarkerListener>(listen->socket_path, rec, clock, true);
    session->socket_path_ = listen->socket_path;
  } else if (std::holds_alternative<WrapLaunch>(launch)) {
    auto path = std::filesystem::temp_directory_path() / ("joulemark-" + session_id + ".sock");
    try {
      session->listener_ = std::make_unique<MarkerListener>(path, rec, clock, false);
      session->socket_path_ = path;
      session->owns_socket_path_ = true;
    } catch (const Error& e) {
      spdlog::warn("marker socket unavailable in wrap mode: {}", e.what());
    }
  }

  // Sampling must be running before the workload starts.
  std::promise<void> first_tick;
  auto first_tick_taken = first_tick.get_future();
  session->sampler_ = std::jthread([&rec, &clock, p = std::move(first_tick)](std::stop_token st) mutable {
    run_sampling_loop(rec, clock, st, [&p] { p.set_value(); });
  });
  first_tick_taken.wait();

  if (const auto* wrap = std::get_if<WrapLaunch>(&launch)) {
    std::vector<std::string> env{std::string(kEnvSessionId) + "=" + session_id};
    if (!session->socket_path_.empty()) env.push_back(std::string(kEnvSocket) + "=" + session->socket_path_.string());
    session->child_start_ns_ = clock.now_ns();
    int pid = 0;
    try {
      pid = spawn_shell(wrap->command, env);
    } catch (...) {
      session->sampler_.request_stop();
      throw;
    }
    session->child_pid_ = pid;
    session->reaper_ = std::jthread([&rec, &clock, pid] {
      int status = 0;
      while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {
      }
      const int code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + (WIFSIGNALED(status) ? WTERMSIG(status) : 0);
      rec.set_exit_status(code);
      rec.close(clock.now_ns());
    });
  }
  return session;
}

// ---------------------------------------------------------------------------

Session replay_session(std::string id, ReplaySensor& trace, std::span<const Marker> markers, int interval_ms,
                       std::string topology_name) {
  validate_stream(markers);
  for (const auto& m : markers) {
    if (!m.timestamp_ns) throw Error(ErrorCode::ParseError, "replayed markers need t_ns");
  }
  std::set<PowerDomain> domains;
  for (const auto& s : trace.samples()) domains.insert(s.domain);
  std::vector<std::unique_ptr<Sensor>> none;
  SensorSet set = make_sensor_set(std::move(topology_name), std::move(none));
  for (const auto& d : domains) set.topology.domains.push_back(DomainInfo{d, 0.0, SensorKind::Synthetic});

  SamplerConfig config;
  config.interval_ms = interval_ms;
  SessionRecorder rec(std::move(id), config, set);

  std::vector<PowerSample> tick;
  std::size_t next_marker = 0;
  auto flush_markers_until = [&](std::int64_t ts) {
    while (next_marker < markers.size() && *markers[next_marker].timestamp_ns <= ts) {
      auto violations = rec.apply_marker(markers[next_marker], *markers[next_marker].timestamp_ns);
      if (!violations.empty()) throw Error(ErrorCode::ProtocolViolation, "hello rejected: " + violations.front());
      ++next_marker;
    }
  };
  while (auto s = trace.next()) {
    if (!tick.empty() && s->timestamp_ns != tick.front().timestamp_ns) {
      rec.append_samples(tick);
      tick.clear();
    }
    flush_markers_until(s->timestamp_ns - 1);
    tick.push_back(*s);
  }
  if (!tick.empty()) rec.append_samples(tick);
  flush_markers_until(std::numeric_limits<std::int64_t>::max());
  rec.close(0);
  return rec.finalize();
}

}  // namespace joulemark
