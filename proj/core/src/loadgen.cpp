#include "joulemark/loadgen.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <mutex>
#include <random>
#include <semaphore>
#include <sstream>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "joulemark/error.hpp"
#include "joulemark/format.hpp"

namespace joulemark {

ArrivalSchedule schedule_arrivals(ArrivalMode mode, double rps, double duration_s, std::uint64_t seed) {
  if (!(rps > 0.0) || !std::isfinite(rps)) throw Error(ErrorCode::InvalidRate, "rps must be positive");
  if (!(duration_s > 0.0) || !std::isfinite(duration_s)) {
    throw Error(ErrorCode::InvalidRate, "duration must be positive");
  }
  ArrivalSchedule s{mode, rps, duration_s, seed, {}};
  if (mode == ArrivalMode::Deterministic) {
    const auto n = static_cast<std::int64_t>(std::floor(rps * duration_s));
    s.arrivals_s.reserve(static_cast<std::size_t>(n));
    for (std::int64_t k = 0; k < n; ++k) s.arrivals_s.push_back(static_cast<double>(k) / rps);
    return s;
  }
  // Inverse-CDF sampling on the raw engine output.
  std::mt19937_64 rng(seed);
  double t = 0.0;
  for (;;) {
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0, 1)
    t += -std::log1p(-u) / rps;
    if (t >= duration_s) break;
    s.arrivals_s.push_back(t);
  }
  return s;
}

std::vector<Prompt> parse_dataset(std::string_view jsonl) {
  std::vector<Prompt> out;
  std::size_t line_no = 0, pos = 0;
  while (pos < jsonl.size()) {
    std::size_t end = jsonl.find('\n', pos);
    if (end == std::string_view::npos) end = jsonl.size();
    const auto line = fmtutil::trim(jsonl.substr(pos, end - pos));
    pos = end + 1;
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto& id = j.at("id");
      out.push_back(Prompt{id.is_string() ? id.get<std::string>() : id.dump(), j.at("prompt").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorCode::ParseError, "dataset line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (out.empty()) throw Error(ErrorCode::DatasetEmpty, "dataset has no prompts");
  return out;
}

std::vector<Prompt> load_dataset(const std::filesystem::path& path) { return parse_dataset(fmtutil::read_file(path)); }

std::string_view to_string(RequestStatus s) noexcept {
  switch (s) {
    case RequestStatus::Ok: return "ok";
    case RequestStatus::HttpError: return "http_error";
    case RequestStatus::Timeout: return "timeout";
    case RequestStatus::ConnError: return "conn_error";
  }
  return "unknown";
}

nlohmann::ordered_json make_request_body(const RequestParams& p, const Prompt& prompt) {
  nlohmann::ordered_json body{{"model", p.model},
                              {"messages", nlohmann::ordered_json::array({{{"role", "user"}, {"content", prompt.text}}})},
                              {"temperature", p.temperature},
                              {"top_p", p.top_p},
                              {"top_k", p.top_k},
                              {"min_p", p.min_p},
                              {"detokenize", p.detokenize},
                              {"stream", false}};
  if (p.max_tokens) body["max_tokens"] = *p.max_tokens;
  return body;
}

namespace {

std::int64_t whitespace_tokens(std::string_view text) {
  std::int64_t n = 0;
  bool in_word = false;
  for (char c : text) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_word) ++n;
    in_word = !space;
  }
  return n;
}

std::unique_ptr<httplib::Client> make_client(const std::string& endpoint, double timeout_s) {
  auto cli = std::make_unique<httplib::Client>(endpoint);
  const auto us = std::chrono::microseconds(static_cast<std::int64_t>(timeout_s * 1e6));
  cli->set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(std::min(us, std::chrono::microseconds(10'000'000))));
  cli->set_read_timeout(us);
  cli->set_write_timeout(us);
  return cli;
}

void send_one(const LoadgenOptions& options, const Prompt& prompt, const NowFn& now, RequestRecord& rec) {
  auto cli = make_client(options.endpoint, options.params.timeout_s);
  httplib::Request req;
  req.method = "POST";
  req.path = "/v1/chat/completions";
  req.body = make_request_body(options.params, prompt).dump();
  req.set_header("Content-Type", "application/json");
  std::string body;
  bool first = true;
  req.response_handler = [&](const httplib::Response&) {
    if (first) rec.first_byte_ns = now();
    first = false;
    return true;
  };
  req.content_receiver = [&](const char* data, std::size_t len, std::uint64_t, std::uint64_t) {
    body.append(data, len);
    return true;
  };
  httplib::Response res;
  httplib::Error err = httplib::Error::Success;
  rec.dispatch_ns = now();
  const bool ok = cli->send(req, res, err);
  rec.completion_ns = now();
  if (first) rec.first_byte_ns = rec.completion_ns;

  if (!ok) {
    const double elapsed_s = static_cast<double>(rec.completion_ns - rec.dispatch_ns) * 1e-9;
    const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                           (err == httplib::Error::Read && elapsed_s >= options.params.timeout_s * 0.99);
    rec.status = timed_out ? RequestStatus::Timeout : RequestStatus::ConnError;
    return;
  }
  rec.http_code = res.status;
  if (res.status < 200 || res.status >= 300) {
    rec.status = RequestStatus::HttpError;
    return;
  }
  rec.status = RequestStatus::Ok;
  nlohmann::json doc = nlohmann::json::parse(body, nullptr, false);
  const bool has_usage = !doc.is_discarded() && doc.contains("usage") && doc["usage"].is_object() &&
                         doc["usage"].contains("completion_tokens") && doc["usage"]["completion_tokens"].is_number_integer();
  if (has_usage) {
    rec.output_tokens = doc["usage"]["completion_tokens"].get<std::int64_t>();
    rec.input_tokens = doc["usage"].value("prompt_tokens", std::int64_t{0});
    return;
  }
  rec.tokens_approximate = true;
  rec.input_tokens = whitespace_tokens(prompt.text);
  std::string content;
  if (!doc.is_discarded()) {
    try {
      content = doc.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception&) {
    }
  }
  rec.output_tokens = whitespace_tokens(content);
}

double percentile(std::vector<double> sorted, double q) {
  if (sorted.empty()) return 0.0;
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size())));
  return sorted[std::clamp<std::size_t>(rank, 1, sorted.size()) - 1];
}

}  // namespace

LoadgenSummary summarize(const std::vector<RequestRecord>& records, const ArrivalSchedule& schedule,
                         const Phase& window) {
  LoadgenSummary s;
  s.offered_rps = schedule.rps;
  s.window = window;
  s.dispatched = static_cast<std::int64_t>(records.size());
  std::vector<double> latencies;
  std::int64_t last_completion = window.t_start_ns;
  bool approximate = false;
  for (const auto& r : records) {
    if (r.status != RequestStatus::Ok) {
      ++s.error_count;
      continue;
    }
    ++s.completed_requests;
    s.total_output_tokens += r.output_tokens;
    s.total_input_tokens += r.input_tokens;
    latencies.push_back(static_cast<double>(r.completion_ns - r.dispatch_ns) * 1e-9);
    last_completion = std::max(last_completion, r.completion_ns);
    approximate = approximate || r.tokens_approximate;
  }
  std::sort(latencies.begin(), latencies.end());
  if (!latencies.empty()) {
    double sum = 0.0;
    for (double l : latencies) sum += l;
    s.mean_latency_s = sum / static_cast<double>(latencies.size());
    s.p50_latency_s = percentile(latencies, 0.50);
    s.p99_latency_s = percentile(latencies, 0.99);
  }
  const double span_s =
      std::max(schedule.duration_s, static_cast<double>(last_completion - window.t_start_ns) * 1e-9);
  s.achieved_rps = static_cast<double>(s.completed_requests) / span_s;
  if (approximate) s.flags.emplace_back(kFlagTokensApproximate);
  return s;
}

void probe_endpoint(const std::string& endpoint, double timeout_s) {
  std::unique_ptr<httplib::Client> cli;
  try {
    cli = make_client(endpoint, timeout_s);
  } catch (const std::exception& e) {
    throw Error(ErrorCode::EndpointUnreachable, endpoint + ": " + e.what());
  }
  auto res = cli->Get("/v1/models");
  if (!res) {
    throw Error(ErrorCode::EndpointUnreachable, endpoint + ": " + httplib::to_string(res.error()));
  }
  if (res->status >= 500) {
    throw Error(ErrorCode::EndpointUnreachable, endpoint + ": /v1/models returned " + std::to_string(res->status));
  }
}

std::optional<double> scrape_gauge(const std::string& metrics_url, const std::string& name) {
  const auto scheme_end = metrics_url.find("://");
  const auto path_start = metrics_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string base = path_start == std::string::npos ? metrics_url : metrics_url.substr(0, path_start);
  const std::string path = path_start == std::string::npos ? "/metrics" : metrics_url.substr(path_start);
  auto cli = make_client(base, 5.0);
  auto res = cli->Get(path);
  if (!res || res->status != 200) return std::nullopt;
  std::istringstream in(res->body);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.compare(0, name.size(), name) != 0) continue;
    const char next = line.size() > name.size() ? line[name.size()] : '\0';
    if (next != ' ' && next != '{') continue;
    const auto v = fmtutil::parse_double(line.substr(line.rfind(' ') + 1));
    if (v && *v >= 0.0 && *v <= 1.0) return v;
  }
  return std::nullopt;
}

LoadgenRun run_load(const LoadgenOptions& options, const std::vector<Prompt>& dataset,
                    const ArrivalSchedule& schedule, const NowFn& now) {
  if (dataset.empty()) throw Error(ErrorCode::DatasetEmpty, "dataset has no prompts");
  probe_endpoint(options.endpoint);

  std::vector<RequestRecord> records(schedule.arrivals_s.size());
  std::mutex mu;
  std::condition_variable done_cv;
  std::size_t outstanding = 0;
  std::optional<std::counting_semaphore<>> cap;
  if (options.max_in_flight > 0) cap.emplace(static_cast<std::ptrdiff_t>(options.max_in_flight));

  const std::int64_t t0 = now();
  const auto wall0 = std::chrono::steady_clock::now();
  for (std::size_t k = 0; k < schedule.arrivals_s.size(); ++k) {
    std::this_thread::sleep_until(wall0 + std::chrono::nanoseconds(
                                              static_cast<std::int64_t>(std::llround(schedule.arrivals_s[k] * 1e9))));
    if (cap) cap->acquire();
    const Prompt& prompt = dataset[k % dataset.size()];
    {
      std::lock_guard lock(mu);
      ++outstanding;
    }
    std::thread([&, k, p = &prompt] {
      const Prompt& prompt = *p;
      RequestRecord rec;
      rec.index = k;
      rec.prompt_id = prompt.id;
      try {
        send_one(options, prompt, now, rec);
      } catch (const std::exception& e) {
        spdlog::warn("request {} failed: {}", k, e.what());
        rec.status = RequestStatus::ConnError;
        if (rec.completion_ns == 0) rec.completion_ns = now();
      }
      if (cap) cap->release();
      std::lock_guard lock(mu);
      records[k] = std::move(rec);
      if (--outstanding == 0) done_cv.notify_all();
    }).detach();
  }
  {
    std::unique_lock lock(mu);
    done_cv.wait(lock, [&] { return outstanding == 0; });
  }
  const Phase window{PhaseName::loadgen(), t0, std::max(now(), t0 + 1)};
  LoadgenRun run{std::move(records), {}};
  run.summary = summarize(run.records, schedule, window);
  if (!options.metrics_url.empty()) {
    run.summary.cache_hit_rate = scrape_gauge(options.metrics_url, options.cache_hit_metric);
  }
  return run;
}

Attribution attribute_energy(const EnergyReport& energy, const LoadgenSummary& summary) {
  if (summary.completed_requests <= 0) throw Error(ErrorCode::NoCompletedRequests, "no completed requests");
  const auto n = static_cast<std::size_t>(summary.completed_requests);
  Attribution a;
  a.joules_per_request = energy.net_j / static_cast<double>(n);
  if (summary.total_output_tokens > 0) {
    a.joules_per_token = energy.net_j / static_cast<double>(summary.total_output_tokens);
  }
  // The last share absorbs the rounding of the others.
  a.per_request_j.assign(n, a.joules_per_request);
  double partial = 0.0;
  for (std::size_t i = 0; i + 1 < n; ++i) partial += a.per_request_j[i];
  a.per_request_j[n - 1] = energy.net_j - partial;
  return a;
}

std::optional<double> detect_saturation(const std::vector<SaturationPoint>& sweep, SaturationRule rule) {
  if (sweep.size() < 3) throw Error(ErrorCode::TooFewPoints, "saturation needs at least 3 sweep points");
  for (std::size_t i = 1; i < sweep.size(); ++i) {
    if (!(sweep[i].offered_rps > sweep[i - 1].offered_rps)) {
      throw Error(ErrorCode::InvalidParams, "sweep RPS values must be strictly increasing");
    }
  }
  for (std::size_t i = 0; i + 1 < sweep.size(); ++i) {
    const auto& cur = sweep[i];
    const auto& next = sweep[i + 1];
    const double drop = cur.joules_per_request - next.joules_per_request;
    const bool flat = drop <= rule.min_relative_decrease * std::abs(cur.joules_per_request);
    const bool capped = next.achieved_rps < rule.min_achieved_fraction * next.offered_rps;
    if (flat || capped) return cur.offered_rps;
  }
  return std::nullopt;
}

nlohmann::ordered_json to_json(const LoadgenSummary& s) {
  nlohmann::ordered_json j{{"offered_rps", s.offered_rps},
                           {"achieved_rps", s.achieved_rps},
                           {"dispatched", s.dispatched},
                           {"completed_requests", s.completed_requests},
                           {"error_count", s.error_count},
                           {"total_input_tokens", s.total_input_tokens},
                           {"total_output_tokens", s.total_output_tokens},
                           {"mean_latency_s", s.mean_latency_s},
                           {"p50_latency_s", s.p50_latency_s},
                           {"p99_latency_s", s.p99_latency_s}};
  j["cache_hit_rate"] = s.cache_hit_rate ? nlohmann::ordered_json(*s.cache_hit_rate) : nlohmann::ordered_json(nullptr);
  j["window"] = {{"name", to_string(s.window.name)},
                 {"t_start_ns", s.window.t_start_ns},
                 {"t_end_ns", s.window.t_end_ns}};
  j["flags"] = s.flags;
  return j;
}

nlohmann::ordered_json to_json(const RequestRecord& r) {
  return {{"index", r.index},
          {"prompt_id", r.prompt_id},
          {"dispatch_ns", r.dispatch_ns},
          {"first_byte_ns", r.first_byte_ns},
          {"completion_ns", r.completion_ns},
          {"input_tokens", r.input_tokens},
          {"output_tokens", r.output_tokens},
          {"status", to_string(r.status)},
          {"http_code", r.http_code},
          {"tokens_approximate", r.tokens_approximate}};
}

}  // namespace joulemark
