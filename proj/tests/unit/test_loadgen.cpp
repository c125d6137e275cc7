#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>

#include "joulemark/error.hpp"
#include "joulemark/loadgen.hpp"
#include "mock_endpoint.hpp"

using namespace joulemark;
using joulemark::testing::MockEndpoint;
using joulemark::testing::MockScript;

namespace {

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

std::vector<Prompt> prompts() { return {{"a", "what is one"}, {"b", "what is two plus two"}}; }

LoadgenOptions options_for(const MockEndpoint& mock) {
  LoadgenOptions o;
  o.endpoint = mock.url();
  o.params.model = "mock";
  o.params.timeout_s = 10.0;
  return o;
}

RequestRecord ok(std::size_t i, std::int64_t dispatch, std::int64_t done, std::int64_t out) {
  RequestRecord r;
  r.index = i;
  r.dispatch_ns = dispatch;
  r.completion_ns = done;
  r.output_tokens = out;
  r.input_tokens = 4;
  return r;
}

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an Error");
  return ErrorCode::IoError;
}

}  // namespace

TEST_CASE("deterministic schedule") {
  const auto s = schedule_arrivals(ArrivalMode::Deterministic, 0.5, 4.0);
  CHECK(s.arrivals_s == std::vector<double>{0.0, 2.0});
  const auto t = schedule_arrivals(ArrivalMode::Deterministic, 10.0, 2.0);
  REQUIRE(t.arrivals_s.size() == 20);
  CHECK(t.arrivals_s[19] == doctest::Approx(1.9));
  CHECK(schedule_arrivals(ArrivalMode::Deterministic, 50.0, 10.0).arrivals_s.size() == 500);
}

TEST_CASE("poisson schedule is seeded and has the right rate") {
  const auto a = schedule_arrivals(ArrivalMode::Poisson, 100.0, 100.0, 9);
  const auto b = schedule_arrivals(ArrivalMode::Poisson, 100.0, 100.0, 9);
  const auto c = schedule_arrivals(ArrivalMode::Poisson, 100.0, 100.0, 10);
  CHECK(a.arrivals_s == b.arrivals_s);
  CHECK(a.arrivals_s != c.arrivals_s);
  CHECK(std::abs(static_cast<double>(a.arrivals_s.size()) - 10'000.0) < 400.0);
  CHECK(std::is_sorted(a.arrivals_s.begin(), a.arrivals_s.end()));
  CHECK(a.arrivals_s.back() < 100.0);

  // Mean gap close to 1/rps.
  std::vector<double> gaps(a.arrivals_s.size());
  std::adjacent_difference(a.arrivals_s.begin(), a.arrivals_s.end(), gaps.begin());
  const double mean = std::accumulate(gaps.begin(), gaps.end(), 0.0) / static_cast<double>(gaps.size());
  CHECK(mean == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("schedule rejects bad rates") {
  CHECK(code_of([] { schedule_arrivals(ArrivalMode::Deterministic, 0.0, 1.0); }) == ErrorCode::InvalidRate);
  CHECK(code_of([] { schedule_arrivals(ArrivalMode::Poisson, -1.0, 1.0); }) == ErrorCode::InvalidRate);
  CHECK(code_of([] { schedule_arrivals(ArrivalMode::Deterministic, 1.0, 0.0); }) == ErrorCode::InvalidRate);
  CHECK(code_of([] { schedule_arrivals(ArrivalMode::Deterministic, NAN, 1.0); }) == ErrorCode::InvalidRate);
}

TEST_CASE("dataset parsing") {
  const auto d = parse_dataset("{\"id\":\"p1\",\"prompt\":\"hi\"}\n\n{\"id\":7,\"prompt\":\"there\"}\n");
  REQUIRE(d.size() == 2);
  CHECK(d[1].id == "7");
  CHECK(d[1].text == "there");
  CHECK(code_of([] { parse_dataset("\n \n"); }) == ErrorCode::DatasetEmpty);
  CHECK(code_of([] { parse_dataset("{\"id\":1}\n"); }) == ErrorCode::ParseError);
  CHECK(code_of([] { parse_dataset("not json\n"); }) == ErrorCode::ParseError);
}

TEST_CASE("request body carries the decoding parameters") {
  RequestParams p;
  p.model = "m";
  p.max_tokens = 64;
  const auto j = make_request_body(p, {"x", "hello"});
  CHECK(j["model"] == "m");
  CHECK(j["messages"][0]["content"] == "hello");
  CHECK(j["temperature"] == 0.0);
  CHECK(j["max_tokens"] == 64);
}

TEST_CASE("summarize counts, latencies and achieved rate") {
  const auto sched = schedule_arrivals(ArrivalMode::Deterministic, 2.0, 2.0);
  const Phase w{PhaseName::loadgen(), 0, 3'000'000'000};
  std::vector<RequestRecord> recs{ok(0, 0, 100'000'000, 10), ok(1, 500'000'000, 800'000'000, 20),
                                  ok(2, 1'000'000'000, 1'200'000'000, 30)};
  RequestRecord bad;
  bad.index = 3;
  bad.status = RequestStatus::HttpError;
  recs.push_back(bad);
  const auto s = summarize(recs, sched, w);
  CHECK(s.dispatched == 4);
  CHECK(s.completed_requests == 3);
  CHECK(s.error_count == 1);
  CHECK(s.total_output_tokens == 60);
  CHECK(s.total_input_tokens == 12);
  CHECK(s.mean_latency_s == doctest::Approx(0.2));
  CHECK(s.p50_latency_s == doctest::Approx(0.2));
  CHECK(s.p99_latency_s == doctest::Approx(0.3));
  CHECK(s.achieved_rps == doctest::Approx(1.5));

  // A tail past the schedule stretches the denominator.
  recs[2].completion_ns = 4'000'000'000;
  CHECK(summarize(recs, sched, w).achieved_rps == doctest::Approx(0.75));

  recs[0].tokens_approximate = true;
  CHECK(summarize(recs, sched, w).flags == std::vector<std::string>{std::string(kFlagTokensApproximate)});
}

TEST_CASE("attribution sums to the net energy exactly") {
  EnergyReport e;
  e.net_j = 1234.5678901;
  for (std::int64_t n : {1, 3, 7, 97, 1000}) {
    LoadgenSummary s;
    s.completed_requests = n;
    s.total_output_tokens = 16 * n;
    const auto a = attribute_energy(e, s);
    REQUIRE(a.per_request_j.size() == static_cast<std::size_t>(n));
    double sum = 0.0;
    for (double j : a.per_request_j) sum += j;
    CHECK(sum == e.net_j);
    CHECK(a.joules_per_request == doctest::Approx(e.net_j / static_cast<double>(n)));
    CHECK(*a.joules_per_token == doctest::Approx(e.net_j / static_cast<double>(16 * n)));
  }
  CHECK(code_of([&] { attribute_energy(e, LoadgenSummary{}); }) == ErrorCode::NoCompletedRequests);
}

TEST_CASE("saturation detection") {
  const std::vector<SaturationPoint> flattening{
      {10, 10, 100}, {20, 20, 60}, {40, 40, 40}, {80, 80, 39.5}, {160, 160, 39}};
  CHECK(detect_saturation(flattening) == 40.0);

  const std::vector<SaturationPoint> capped{{5, 5, 100}, {10, 10, 80}, {20, 15, 60}, {40, 15, 50}};
  CHECK(detect_saturation(capped) == 10.0);

  const std::vector<SaturationPoint> falling{{1, 1, 100}, {2, 2, 50}, {4, 4, 25}};
  CHECK(!detect_saturation(falling));

  CHECK(code_of([] { detect_saturation({{1, 1, 1}, {2, 2, 1}}); }) == ErrorCode::TooFewPoints);
  CHECK(code_of([] { detect_saturation({{1, 1, 1}, {1, 1, 1}, {2, 2, 1}}); }) == ErrorCode::InvalidParams);
}

TEST_CASE("run against the mock endpoint") {
  MockEndpoint mock;
  auto opts = options_for(mock);
  opts.metrics_url = mock.url() + "/metrics";
  const auto sched = schedule_arrivals(ArrivalMode::Deterministic, 20.0, 1.0);
  const auto run = run_load(opts, prompts(), sched, steady_ns);
  CHECK(mock.requests() == 20);
  CHECK(run.summary.completed_requests == 20);
  CHECK(run.summary.error_count == 0);
  CHECK(run.summary.total_output_tokens == 320);
  CHECK(run.summary.total_input_tokens == 160);
  CHECK(run.summary.achieved_rps == doctest::Approx(20.0).epsilon(0.05));
  CHECK(*run.summary.cache_hit_rate == doctest::Approx(0.25));
  CHECK(run.records[1].prompt_id == "b");
  CHECK(run.records[2].prompt_id == "a");
  for (const auto& r : run.records) {
    CHECK(r.status == RequestStatus::Ok);
    CHECK(r.http_code == 200);
    CHECK(r.dispatch_ns <= r.first_byte_ns);
    CHECK(r.first_byte_ns <= r.completion_ns);
  }
}

TEST_CASE("scripted failures are counted, not thrown") {
  MockScript script;
  script.fail_every = 10;
  MockEndpoint mock(script);
  const auto sched = schedule_arrivals(ArrivalMode::Deterministic, 40.0, 1.0);
  const auto run = run_load(options_for(mock), prompts(), sched, steady_ns);
  CHECK(run.summary.dispatched == 40);
  CHECK(run.summary.error_count == 4);
  CHECK(run.summary.completed_requests == 36);
}

TEST_CASE("missing usage falls back to whitespace counting") {
  MockScript script;
  script.omit_usage = true;
  script.completion_tokens = [](std::size_t i) { return static_cast<int>(i % 3) + 1; };
  MockEndpoint mock(script);
  auto opts = options_for(mock);
  opts.max_in_flight = 1;
  const auto sched = schedule_arrivals(ArrivalMode::Deterministic, 10.0, 0.6);
  const auto run = run_load(opts, prompts(), sched, steady_ns);
  CHECK(run.summary.completed_requests == 6);
  CHECK(run.summary.total_output_tokens == 12);
  CHECK(run.summary.total_input_tokens == 3 * 3 + 3 * 5);
  CHECK(run.summary.flags == std::vector<std::string>{std::string(kFlagTokensApproximate)});
}

TEST_CASE("client timeouts are recorded per request") {
  MockScript script;
  script.latency = [](std::size_t i) { return std::chrono::milliseconds(i == 0 ? 1500 : 1); };
  MockEndpoint mock(script);
  auto opts = options_for(mock);
  opts.params.timeout_s = 0.5;
  const auto run = run_load(opts, prompts(), schedule_arrivals(ArrivalMode::Deterministic, 4.0, 1.0), steady_ns);
  CHECK(run.records[0].status == RequestStatus::Timeout);
  CHECK(run.summary.completed_requests == 3);
}

TEST_CASE("unreachable endpoints fail before dispatch") {
  LoadgenOptions opts;
  opts.endpoint = "http://127.0.0.1:1";
  CHECK(code_of([&] { probe_endpoint(opts.endpoint, 1.0); }) == ErrorCode::EndpointUnreachable);
  CHECK(code_of([&] {
          run_load(opts, prompts(), schedule_arrivals(ArrivalMode::Deterministic, 1.0, 1.0), steady_ns);
        }) == ErrorCode::EndpointUnreachable);
  CHECK(code_of([&] { run_load(opts, {}, schedule_arrivals(ArrivalMode::Deterministic, 1.0, 1.0), steady_ns); }) ==
        ErrorCode::DatasetEmpty);
}

TEST_CASE("gauge scraping") {
  MockEndpoint mock;
  CHECK(*scrape_gauge(mock.url() + "/metrics", "vllm:gpu_prefix_cache_hit_rate") == doctest::Approx(0.25));
  CHECK(!scrape_gauge(mock.url() + "/metrics", "vllm:gpu_prefix_cache"));
  CHECK(!scrape_gauge(mock.url() + "/nope", "vllm:gpu_prefix_cache_hit_rate"));
}

TEST_CASE("summary json") {
  LoadgenSummary s;
  s.offered_rps = 5;
  s.window = {PhaseName::loadgen(), 1, 2};
  const auto j = to_json(s);
  CHECK(j["offered_rps"] == 5.0);
  CHECK(j["cache_hit_rate"].is_null());
  CHECK(j["window"]["name"] == "loadgen");
  CHECK(to_json(ok(3, 1, 2, 3))["status"] == "ok");
}
