#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "joulemark/energy.hpp"
#include "joulemark/trace.hpp"

namespace joulemark {

// ---------------------------------------------------------------------------
// Arrival schedules

enum class ArrivalMode { Deterministic, Poisson };

struct ArrivalSchedule {
  ArrivalMode mode = ArrivalMode::Deterministic;
  double rps = 0.0;
  double duration_s = 0.0;
  std::uint64_t seed = 0;  // Poisson only
  std::vector<double> arrivals_s;  // offsets from the run start
};

/// Deterministic: k / rps for k < floor(rps * duration). Poisson:
/// exponential gaps with mean 1/rps from a seeded mt19937_64, keeping the
/// arrivals that fall before `duration_s`. Throws InvalidRate.
ArrivalSchedule schedule_arrivals(ArrivalMode mode, double rps, double duration_s, std::uint64_t seed = 0);

// ---------------------------------------------------------------------------
// Requests

struct Prompt {
  std::string id;
  std::string text;
};

/// JSONL with `id` and `prompt` per line. Throws DatasetEmpty / ParseError.
std::vector<Prompt> load_dataset(const std::filesystem::path& path);
std::vector<Prompt> parse_dataset(std::string_view jsonl);

enum class RequestStatus { Ok, HttpError, Timeout, ConnError };
std::string_view to_string(RequestStatus s) noexcept;

struct RequestRecord {
  std::size_t index = 0;
  std::string prompt_id;
  std::int64_t dispatch_ns = 0;
  std::int64_t first_byte_ns = 0;
  std::int64_t completion_ns = 0;
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  RequestStatus status = RequestStatus::Ok;
  int http_code = 0;
  bool tokens_approximate = false;
};

/// Decoding parameters sent with every request.
struct RequestParams {
  std::string model;
  double temperature = 0.0;
  double top_p = 1.0;
  int top_k = -1;
  double min_p = 0.0;
  bool detokenize = true;
  std::optional<int> max_tokens;
  double timeout_s = 120.0;
};

/// The chat-completions request body for one prompt.
nlohmann::ordered_json make_request_body(const RequestParams& params, const Prompt& prompt);

struct LoadgenSummary {
  double offered_rps = 0.0;
  double achieved_rps = 0.0;
  std::int64_t dispatched = 0;
  std::int64_t completed_requests = 0;
  std::int64_t error_count = 0;
  std::int64_t total_output_tokens = 0;
  std::int64_t total_input_tokens = 0;
  double mean_latency_s = 0.0;
  double p50_latency_s = 0.0;
  double p99_latency_s = 0.0;
  std::optional<double> cache_hit_rate;
  Phase window;
  std::vector<std::string> flags;
};

inline constexpr std::string_view kFlagTokensApproximate = "TOKENS_APPROXIMATE";

/// Builds the summary from finished records. `window` spans the run;
/// achieved_rps = completed / max(schedule duration, last completion - start).
LoadgenSummary summarize(const std::vector<RequestRecord>& records, const ArrivalSchedule& schedule,
                         const Phase& window);

struct LoadgenOptions {
  std::string endpoint;  // base URL, e.g. http://127.0.0.1:8000
  RequestParams params;
  /// 0 means unbounded in-flight requests.
  std::size_t max_in_flight = 0;
  /// Prometheus-style metrics URL and gauge name for cache_hit_rate.
  std::string metrics_url;
  std::string cache_hit_metric = "vllm:gpu_prefix_cache_hit_rate";
};

struct LoadgenRun {
  std::vector<RequestRecord> records;
  LoadgenSummary summary;
};

/// Nanosecond monotonic clock used for request timestamps.
using NowFn = std::function<std::int64_t()>;

/// Throws EndpointUnreachable (GET /v1/models fails) before dispatching.
void probe_endpoint(const std::string& endpoint, double timeout_s = 5.0);

/// Open-loop run: each request is dispatched at its scheduled offset on its
/// own thread whether or not earlier requests have completed. Prompts are
/// taken round-robin. Per-request failures are recorded, never thrown.
/// Throws DatasetEmpty, EndpointUnreachable.
LoadgenRun run_load(const LoadgenOptions& options, const std::vector<Prompt>& dataset,
                    const ArrivalSchedule& schedule, const NowFn& now);

/// Scrapes one gauge from a Prometheus text endpoint; nullopt on failure.
std::optional<double> scrape_gauge(const std::string& metrics_url, const std::string& name);

// ---------------------------------------------------------------------------
// Attribution and saturation

struct Attribution {
  double joules_per_request = 0.0;
  std::optional<double> joules_per_token;
  /// One entry per completed request; sums to net_j exactly.
  std::vector<double> per_request_j;
};

/// Uniform attribution over completed requests. Throws NoCompletedRequests.
Attribution attribute_energy(const EnergyReport& energy, const LoadgenSummary& summary);

struct SaturationPoint {
  double offered_rps = 0.0;
  double achieved_rps = 0.0;
  double joules_per_request = 0.0;
};

struct SaturationRule {
  double min_relative_decrease = 0.02;
  double min_achieved_fraction = 0.95;
};

/// Smallest offered RPS r whose next point either fails to lower J/request
/// by more than `min_relative_decrease`, or achieves less than
/// `min_achieved_fraction` of its offered rate. Points must be strictly
/// increasing in offered RPS. Throws TooFewPoints (< 3), InvalidParams.
std::optional<double> detect_saturation(const std::vector<SaturationPoint>& sweep, SaturationRule rule = {});

nlohmann::ordered_json to_json(const LoadgenSummary& summary);
nlohmann::ordered_json to_json(const RequestRecord& record);

}  // namespace joulemark
