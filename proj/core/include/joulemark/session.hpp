#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <stop_token>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/protocol.hpp"
#include "joulemark/sensors.hpp"
#include "joulemark/trace.hpp"

namespace joulemark {

struct SamplerConfig {
  int interval_ms = 100;
  std::optional<int> max_duration_s;

  /// Throws ConfigError unless 10 <= interval_ms <= 10000 and the cap, if
  /// set, is positive.
  void validate() const;
  [[nodiscard]] std::int64_t interval_ns() const { return static_cast<std::int64_t>(interval_ms) * 1'000'000; }
};

// ---------------------------------------------------------------------------
// Clocks

class Clock {
 public:
  virtual ~Clock() = default;
  [[nodiscard]] virtual std::int64_t now_ns() const = 0;
  /// Blocks until `deadline_ns` or a stop request. Returns false if stopped.
  virtual bool sleep_until(std::int64_t deadline_ns, std::stop_token stop) = 0;
};

/// std::chrono::steady_clock, in nanoseconds since its epoch.
class SteadyClock final : public Clock {
 public:
  [[nodiscard]] std::int64_t now_ns() const override;
  bool sleep_until(std::int64_t deadline_ns, std::stop_token stop) override;
};

/// Manually driven clock for deterministic scheduling tests. Sleeping
/// jumps straight to the deadline; advance() models time spent working.
class SimulatedClock final : public Clock {
 public:
  explicit SimulatedClock(std::int64_t start_ns = 0) : now_(start_ns) {}
  [[nodiscard]] std::int64_t now_ns() const override { return now_.load(); }
  bool sleep_until(std::int64_t deadline_ns, std::stop_token stop) override;
  void advance(std::int64_t delta_ns) { now_ += delta_ns; }

 private:
  std::atomic<std::int64_t> now_;
};

// ---------------------------------------------------------------------------
// Session state

struct SampleGap {
  std::size_t tick = 0;
  std::int64_t timestamp_ns = 0;
  PowerDomain domain;
  std::string reason;
};

struct SessionDiagnostics {
  std::size_t tick_count = 0;
  std::size_t late_ticks = 0;     // fired more than one interval behind schedule
  std::size_t skipped_ticks = 0;  // grid slots dropped while catching up
  double mean_lateness_ms = 0.0;
  double max_lateness_ms = 0.0;
  std::map<PowerDomain, std::size_t> samples_per_domain;
  std::vector<SampleGap> gaps;
  std::size_t discarded_readings = 0;  // above the plausibility cap
  std::vector<AbsentDomain> absent_domains;
  std::optional<int> exit_status;  // wrap mode: exit code, or 128 + signal
  std::vector<std::string> flags;
  std::vector<std::string> protocol_errors;

  [[nodiscard]] std::size_t gap_count() const { return gaps.size(); }
  [[nodiscard]] bool has_flag(std::string_view flag) const;
};

nlohmann::json to_json(const SessionDiagnostics& diagnostics);

inline constexpr std::string_view kFlagUncleanShutdown = "UNCLEAN_SHUTDOWN";
inline constexpr std::string_view kFlagMaxDuration = "MAX_DURATION_REACHED";

/// A finalized measurement run. Produced only by SessionRecorder::finalize.
struct Session {
  std::string id;
  PowerTrace trace;
  std::vector<Phase> phases;
  std::vector<Marker> markers;
  std::optional<ModelDescriptor> model;
  nlohmann::json run_config;
  SessionDiagnostics diagnostics;
};

/// The open-session handle: collects ticks, markers and phases from any
/// number of contexts (appends are serialized internally) and seals them
/// into a Session on finalize().
class SessionRecorder {
 public:
  SessionRecorder(std::string id, SamplerConfig config, SensorSet& sensors);

  [[nodiscard]] const std::string& id() const { return id_; }
  [[nodiscard]] const SamplerConfig& config() const { return config_; }

  /// Primes every sensor. Called once, before the first tick.
  void begin(std::int64_t now_ns);

  /// Reads every live sensor once for grid tick `tick` scheduled at
  /// `scheduled_ns`. Failed or implausible reads are recorded as gaps and
  /// do not affect the other domains.
  void sampling_tick(std::size_t tick, std::int64_t scheduled_ns, std::int64_t now_ns);
  void note_skipped_ticks(std::size_t count);

  /// Appends externally produced samples sharing one timestamp (replay).
  void append_samples(std::span<const PowerSample> samples);

  /// Applies a marker received at `now_ns` (or at its own t_ns when set).
  /// Throws ProtocolViolation if it conflicts with recorded phases.
  /// Returns the descriptor violations for a hello, empty otherwise.
  std::vector<std::string> apply_marker(const Marker& marker, std::int64_t now_ns);

  void add_flag(std::string flag);
  void add_protocol_error(std::string message);
  void set_exit_status(int status);

  /// Ends an open marker phase at `now_ns` (used on unclean disconnect).
  void close_open_phase(std::int64_t now_ns);
  /// Adds a phase directly; used for the implicit wrap-mode phase.
  void add_phase(Phase phase);
  [[nodiscard]] bool has_phases() const;

  /// Marks the session closed. Takes one final off-grid sample at `now_ns`
  /// when it is later than the last tick, so phases stay inside the trace.
  void close(std::int64_t now_ns);
  [[nodiscard]] bool closed() const;
  /// Timestamp of the newest sample, or nullopt before the first tick.
  [[nodiscard]] std::optional<std::int64_t> last_sample_ns() const;
  /// Blocks until close() has been called or `stop` is requested.
  void wait_closed(std::stop_token stop);

  /// Seals the trace and validates phases. Throws EmptyTrace when no tick
  /// ever completed, InvariantViolation for inconsistent phases.
  Session finalize();

 private:
  void read_all_locked(std::size_t tick, std::int64_t now_ns);

  std::string id_;
  SamplerConfig config_;
  SensorSet& sensors_;

  mutable std::mutex mu_;
  std::condition_variable_any closed_cv_;
  bool closed_ = false;
  bool finalized_ = false;
  std::vector<PowerSample> samples_;
  std::int64_t last_sample_ns_ = 0;
  bool any_sample_ = false;
  double lateness_sum_ms_ = 0.0;
  std::size_t lateness_count_ = 0;
  std::vector<Phase> phases_;
  std::optional<std::pair<PhaseName, std::int64_t>> open_phase_;
  std::vector<Marker> markers_;
  std::optional<ModelDescriptor> model_;
  nlohmann::json run_config_;
  SessionDiagnostics diag_;
};

/// Runs the absolute-grid tick loop: tick k fires at t0 + k * interval.
/// A tick that fires late runs immediately; grid slots that already lie in
/// the past after it are skipped (and counted) rather than fired
/// back-to-back. Returns when `stop` is requested, the recorder closes, or
/// the max-duration cap elapses (which closes the recorder with a flag).
/// `on_first_tick` runs once tick 0 has been taken (or the loop ended
/// without one).
void run_sampling_loop(SessionRecorder& recorder, Clock& clock, std::stop_token stop,
                       const std::function<void()>& on_first_tick = {});

// ---------------------------------------------------------------------------
// Marker listener

/// Accepts marker connections on a local stream socket and feeds them into
/// a recorder. Each connection gets its own ordering validator; a hello is
/// answered with an ack or a reject line, violations with an error line.
/// A greeted connection that drops without goodbye flags the session
/// UNCLEAN_SHUTDOWN and, when `close_on_goodbye` is set, closes it.
class MarkerListener {
 public:
  /// Throws BindFailed.
  MarkerListener(std::filesystem::path socket_path, SessionRecorder& recorder, const Clock& clock,
                 bool close_on_goodbye);
  ~MarkerListener();

  MarkerListener(const MarkerListener&) = delete;
  MarkerListener& operator=(const MarkerListener&) = delete;

  [[nodiscard]] const std::filesystem::path& path() const { return path_; }
  void stop();

 private:
  void serve(std::stop_token stop);

  std::filesystem::path path_;
  SessionRecorder& recorder_;
  const Clock& clock_;
  bool close_on_goodbye_;
  int listen_fd_ = -1;
  std::jthread thread_;
};

// ---------------------------------------------------------------------------
// Session lifecycle

struct WrapLaunch {
  std::string command;  // run through /bin/sh -c
};

struct ListenLaunch {
  std::filesystem::path socket_path;
};

/// No workload is attached; the caller ends the session with finish().
struct ManualLaunch {};

using LaunchSpec = std::variant<WrapLaunch, ListenLaunch, ManualLaunch>;

inline constexpr const char* kEnvSessionId = "JOULEMARK_SESSION_ID";
inline constexpr const char* kEnvSocket = "JOULEMARK_SOCKET";

/// A running measurement. Sampling starts before the workload; the
/// session closes when the wrapped child exits (wrap mode) or a goodbye
/// arrives (listen mode).
class ActiveSession {
 public:
  ~ActiveSession();
  ActiveSession(const ActiveSession&) = delete;
  ActiveSession& operator=(const ActiveSession&) = delete;

  [[nodiscard]] const std::string& id() const { return recorder_.id(); }
  [[nodiscard]] std::optional<int> child_pid() const { return child_pid_; }
  [[nodiscard]] const std::filesystem::path& socket_path() const { return socket_path_; }

  /// Ends the session early (e.g. on SIGINT); a wrapped child is sent
  /// SIGTERM.
  void request_stop();
  /// Closes a session normally (manual launch).
  void finish();
  /// For adding phases in manual mode.
  [[nodiscard]] SessionRecorder& recorder() { return recorder_; }

  /// Blocks until the session closes, then finalizes it.
  Session wait();

 private:
  friend std::unique_ptr<ActiveSession> start_session(const SamplerConfig&, SensorSet&, const LaunchSpec&, Clock&,
                                                       std::string);
  ActiveSession(std::string id, const SamplerConfig& config, SensorSet& sensors, Clock& clock);

  Clock& clock_;
  SessionRecorder recorder_;
  std::unique_ptr<MarkerListener> listener_;
  std::filesystem::path socket_path_;
  bool owns_socket_path_ = false;
  std::optional<int> child_pid_;
  std::int64_t child_start_ns_ = 0;
  std::jthread sampler_;
  std::jthread reaper_;
  std::stop_source stop_;
};

/// Throws NoSensors, LaunchFailed or BindFailed.
std::unique_ptr<ActiveSession> start_session(const SamplerConfig& config, SensorSet& sensors, const LaunchSpec& launch,
                                             Clock& clock, std::string session_id = {});

/// Random 16-hex-digit session id.
std::string generate_session_id();

/// Rebuilds a finalized session from a recorded trace and a marker
/// transcript (markers must carry t_ns). The transcript is validated with
/// the same ordering rules as a live connection.
Session replay_session(std::string id, ReplaySensor& trace, std::span<const Marker> markers, int interval_ms,
                       std::string topology_name = {});

}  // namespace joulemark
