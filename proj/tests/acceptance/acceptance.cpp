// Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
// failure or budget overrun.

#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "generators.hpp"
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
#include "mock_endpoint.hpp"
#include "oracles.hpp"

using namespace joulemark;
namespace fs = std::filesystem;
namespace jt = joulemark::testing;

namespace {

constexpr std::int64_t kS = 1'000'000'000;

// Collects failure messages; a criterion passes when none were recorded.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++count_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    if (!ok) ++failed_;
  }
  [[nodiscard]] bool ok() const { return failed_ == 0; }
  [[nodiscard]] std::string summary() const {
    std::string s = std::to_string(count_ - failed_) + "/" + std::to_string(count_) + " checks";
    for (const auto& f : failures_) s += "\n      - " + f;
    return s;
  }

 private:
  std::size_t count_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
};

bool close_rel(double a, double b, double tol) { return std::abs(a - b) <= tol * std::max(1.0, std::abs(b)); }

template <typename Fn>
std::optional<ErrorCode> code_of(Fn&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

std::string num(double v) { return fmtutil::format_double(v); }

// ---------------------------------------------------------------------------

void energy_oracle(Checks& c) {
  std::mt19937_64 rng(101);
  for (int trial = 0; trial < 25; ++trial) {
    const auto syn = jt::random_trace(rng, trial % 3 == 0 ? 3 : 0);
    const auto trace = PowerTrace::seal(syn.topology, syn.interval_ms, syn.samples);
    const std::int64_t lo = trace.first_ns(), hi = trace.extent_end_ns();
    std::uniform_int_distribution<std::int64_t> pick(lo, hi);
    std::int64_t a = pick(rng), b = pick(rng);
    if (a > b) std::swap(a, b);
    if (b - a < trace.interval_ns() * 3) {
      a = lo;
      b = hi;
    }
    const std::int64_t m = a + (b - a) / 2;
    const std::string tag = "trace " + std::to_string(trial);

    const Phase whole{PhaseName::custom("w"), a, b};
    const auto e = integrate(trace, whole);
    for (const auto& d : trace.topology().domain_list()) {
      const double oracle = jt::brute_force_energy(syn.samples, d, a, b, trace.interval_ns());
      c.expect(close_rel(e.at(d), oracle, 1e-9), tag + " " + to_string(d) + ": " + num(e.at(d)) + " vs " + num(oracle));
    }

    try {
      const auto left = integrate(trace, {PhaseName::custom("l"), a, m});
      const auto right = integrate(trace, {PhaseName::custom("r"), m, b});
      for (const auto& [d, j] : e) {
        c.expect(close_rel(left.at(d) + right.at(d), j, 1e-9), tag + " additivity " + to_string(d));
      }
    } catch (const Error& err) {
      c.expect(err.code() == ErrorCode::EmptyWindow, tag + " split: " + err.what());
    }

    const double k = 0.5 + static_cast<double>(rng() % 1000) / 100.0;
    auto scaled = syn.samples;
    for (auto& s : scaled) s.power_w *= k;
    const auto es = integrate(PowerTrace::seal(syn.topology, syn.interval_ms, scaled), whole);
    for (const auto& [d, j] : e) c.expect(close_rel(es.at(d), k * j, 1e-9), tag + " scale " + to_string(d));
  }
}

void idle_correction(Checks& c) {
  std::mt19937_64 rng(202);
  int cases = 0;
  while (cases < 100) {
    auto syn = jt::random_trace(rng, static_cast<int>(rng() % 4));
    const auto trace = PowerTrace::seal(syn.topology, syn.interval_ms, syn.samples);
    if (trace.extent_end_ns() - trace.first_ns() < 10 * kS) continue;
    ++cases;
    const auto baseline = calibrate_idle(trace);
    const Phase extent = trace.extent();
    const auto report = net_energy(integrate(trace, extent), baseline, extent);
    double max_p = 0.0;
    for (const auto& s : syn.samples) max_p = std::max(max_p, s.power_w);
    const double bound = static_cast<double>(trace.interval_ms()) * 1e-3 * max_p;
    c.expect(std::abs(report.net_j) <= bound,
             "case " + std::to_string(cases) + ": |net| " + num(std::abs(report.net_j)) + " > " + num(bound));
  }

  const PowerDomain gpu{DomainKind::Gpu, 0};
  std::vector<PowerSample> samples;
  for (int k = 0; k < 100; ++k) samples.push_back({k * kS / 10, gpu, 100.0});
  const SensorTopology topo{"const", {{gpu, 0.0, SensorKind::Synthetic}}};
  const auto trace = PowerTrace::seal(topo, 100, samples);
  IdleBaseline b;
  b.per_domain_avg_w = {{gpu, 50.0}};
  b.duration_s = 60;
  b.fingerprint = topo.fingerprint();
  const Phase w{PhaseName::inference(), 0, 10 * kS};
  const auto r = net_energy(integrate(trace, w), b, w);
  c.expect(r.net_j == 500.0, "100 W over 50 W for 10 s: " + num(r.net_j));
}

void counter_wrap(Checks& c) {
  std::mt19937_64 rng(303);
  int wraps = 0;
  for (int i = 0; i < 1000; ++i) {
    const std::uint64_t mod = 1000 + rng() % 262'143'328'850ULL;
    const std::uint64_t prev = rng() % (8 * mod);
    const bool force_wrap = i % 5 == 0;
    std::uint64_t step = 1 + rng() % (mod - 1);
    if (force_wrap) step = (mod - prev % mod) + rng() % (prev % mod + 1);
    if (step >= mod) step = mod - 1;
    const std::uint64_t curr = prev + step;
    const std::int64_t dt = 1 + static_cast<std::int64_t>(rng() % 5'000'000'000LL);
    if (curr % mod < prev % mod) ++wraps;
    const double got = counter_to_power({0, prev % mod, mod}, {dt, curr % mod, mod});
    const double want = jt::unwrapped_counter_power(prev, curr, dt);
    c.expect(got == want, "triple " + std::to_string(i) + ": " + num(got) + " vs " + num(want));
  }
  c.expect(wraps >= 100, "only " + std::to_string(wraps) + " wrapping cases");
}

void dram_model(Checks& c) {
  struct Fixture {
    DramModelParams p;
    double watts;
  };
  // 0.5 * n * C * V^2 * f, worked by hand.
  const std::vector<Fixture> fixtures{{{1, 1e-10, 1.2, 1.6e9}, 0.1152},
                                      {{2, 1e-10, 1.2, 1.6e9}, 0.2304},
                                      {{4, 2e-11, 1.35, 2.4e9}, 0.17496},
                                      {{1, 5e-11, 1.1, 3.2e9}, 0.0968}};
  for (const auto& f : fixtures) {
    const double got = dram_model_power(f.p);
    c.expect(std::abs(got - f.watts) <= 1e-12 * f.watts, "fixture " + num(f.watts) + ": " + num(got));
  }
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> u(0.5, 2.0);
  for (int i = 0; i < 200; ++i) {
    const DramModelParams p{1 + static_cast<int>(rng() % 8), u(rng) * 1e-10, u(rng), u(rng) * 1e9};
    const double base = dram_model_power(p);
    const int k = 2 + static_cast<int>(rng() % 4);
    const double s = u(rng);
    auto pn = p;
    pn.n_dimm *= k;
    auto pf = p;
    pf.frequency_hz *= s;
    auto pv = p;
    pv.voltage_v *= s;
    c.expect(close_rel(dram_model_power(pn), k * base, 1e-12), "linear in n");
    c.expect(close_rel(dram_model_power(pf) / base, s, 1e-12), "linear in f");
    c.expect(close_rel(dram_model_power(pv) / base, s * s, 1e-12), "quadratic in V");
  }
}

void time_energy_linearity(Checks& c) {
  std::vector<double> durations, energies;
  for (int d = 1; d <= 10; ++d) {
    std::vector<std::unique_ptr<Sensor>> s;
    s.push_back(SyntheticSensor::constant({DomainKind::CpuPackage, 0}, 45.0));
    s.push_back(SyntheticSensor::constant({DomainKind::Gpu, 0}, 180.0));
    auto sensors = make_sensor_set("synthetic", std::move(s));
    SessionRecorder rec("lin-" + std::to_string(d), {100, d}, sensors);
    SimulatedClock clock(0);
    run_sampling_loop(rec, clock, {});
    const auto session = rec.finalize();
    double gross = 0.0;
    for (const auto& [_, j] : integrate(session.trace, session.trace.extent())) gross += j;
    durations.push_back(d);
    energies.push_back(gross);
  }
  const double r = pearson(durations, energies);
  c.expect(r >= 0.999, "pearson r = " + num(r));
}

void correlation_engine(Checks& c) {
  std::mt19937_64 rng(606);
  std::normal_distribution<double> g;
  const std::vector<std::function<double(double)>> transforms{
      [](double x) { return std::exp(x); },
      [](double x) { return x * x * x; },
      [](double x) { return 3.0 * x - 7.0; },
      [](double x) { return std::atan(x); },
      [](double x) { return x < 0 ? x : 10.0 + x * x; }};
  for (int i = 0; i < 100; ++i) {
    const int n = 5 + static_cast<int>(rng() % 60);
    std::vector<double> x, y;
    for (int k = 0; k < n; ++k) x.push_back(g(rng));
    const auto& f = transforms[static_cast<std::size_t>(i) % transforms.size()];
    for (double v : x) y.push_back(f(v));
    const double rho = spearman(x, y);
    c.expect(rho == 1.0, "monotone case " + std::to_string(i) + ": " + num(rho));
  }
  for (int i = 0; i < 50; ++i) {
    const int n = 3 + static_cast<int>(rng() % 50);
    std::vector<double> x;
    for (int k = 0; k < n; ++k) x.push_back(static_cast<double>(rng() % (1 + n / 3)));
    c.expect(average_ranks(x) == jt::brute_force_ranks(x), "tied ranks case " + std::to_string(i));
  }
  Dataset d;
  d.columns = {"energy_per_sample", "work_done", "parameters"};
  d.target = "energy_per_sample";
  for (int i = 0; i < 20; ++i) d.rows.push_back({g(rng), g(rng), g(rng)});
  const auto res = correlate_against_energy(d);
  c.expect(res.front().metric == "energy_per_sample", "target row first");
  c.expect(res.front().pearson_r == 1.0 && res.front().spearman_rho == 1.0, "target row exactly 1");
}

Dataset as_dataset(const std::vector<std::vector<double>>& cols, const std::vector<double>& y) {
  Dataset d;
  for (std::size_t j = 0; j < cols.size(); ++j) d.columns.push_back("x" + std::to_string(j));
  d.columns.push_back("energy");
  d.target = "energy";
  for (std::size_t i = 0; i < y.size(); ++i) {
    std::vector<double> row;
    for (const auto& col : cols) row.push_back(col[i]);
    row.push_back(y[i]);
    d.rows.push_back(std::move(row));
  }
  return d;
}

void lasso(Checks& c) {
  std::mt19937_64 rng(707);
  std::normal_distribution<double> g;
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 30 + static_cast<int>(rng() % 100);
    const int p = 2 + static_cast<int>(rng() % 8);
    const auto x = jt::orthonormal_design(rng, n, p);
    std::vector<double> y(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      y[i] = 10.0 + g(rng);
      for (int j = 0; j < p; ++j) y[i] += g(rng) * 0.2 + (j % 3 - 1) * 1.5 * x[j][i];
    }
    double ybar = 0.0;
    for (double v : y) ybar += v;
    ybar /= n;
    const double lambda = 0.01 + static_cast<double>(rng() % 200) / 100.0;
    const auto fit = lasso_fit(as_dataset(x, y), {lambda, 1e-14, 100'000});
    for (int j = 0; j < p; ++j) {
      double z = 0.0;
      for (int i = 0; i < n; ++i) z += x[j][i] * (y[i] - ybar);
      const double want = jt::soft_threshold(z / n, lambda);
      c.expect(std::abs(fit.coefficients[j] - want) <= 1e-8,
               "orthonormal design " + std::to_string(trial) + " coef " + std::to_string(j));
    }
  }

  for (int trial = 0; trial < 5; ++trial) {
    const int n = 100 + 20 * trial, p = 3 + trial;
    std::vector<std::vector<double>> cols(p), rows(n);
    for (auto& col : cols) {
      for (int i = 0; i < n; ++i) col.push_back(g(rng));
    }
    for (int i = 0; i < n; ++i) cols[1][i] += 0.5 * cols[0][i];
    std::vector<double> y;
    for (int i = 0; i < n; ++i) {
      double v = g(rng) * 0.5;
      for (int j = 0; j < p; ++j) v += (j + 1) * 0.7 * cols[j][i];
      y.push_back(v);
      for (int j = 0; j < p; ++j) rows[i].push_back(cols[j][i]);
    }
    const auto fit = lasso_fit(as_dataset(cols, y), {0.0, 1e-13, 500'000});
    const auto ols = jt::standardized_ols(rows, y);
    for (int j = 0; j < p; ++j) {
      c.expect(std::abs(fit.coefficients[j] - ols[j]) <= 1e-6, "lambda 0 vs OLS, design " + std::to_string(trial));
    }

    const auto d = as_dataset(cols, y);
    const double lmax = lasso_null_lambda(d);
    for (double s : {1.0, 1.01, 3.0}) {
      const auto zero = lasso_fit(d, {lmax * s});
      c.expect(std::all_of(zero.coefficients.begin(), zero.coefficients.end(), [](double b) { return b == 0.0; }),
               "nonzero coefficient above the null lambda");
    }
  }

  const int n = 300, p = 8;
  std::vector<std::vector<double>> cols(p);
  for (auto& col : cols) {
    for (int i = 0; i < n; ++i) col.push_back(g(rng));
  }
  std::vector<double> y;
  for (int i = 0; i < n; ++i) y.push_back(5.0 * cols[5][i] + 0.1 * g(rng));
  const auto d = as_dataset(cols, y);
  const auto fit = lasso_fit(d, {0.05 * lasso_null_lambda(d)});
  c.expect(!fit.importances.empty() && fit.importances.front().first == "x5", "planted feature ranks first");
  c.expect(!fit.importances.empty() && fit.importances.front().second >= 0.95,
           "planted share " + (fit.importances.empty() ? std::string("none") : num(fit.importances.front().second)));
}

std::int64_t steady_ns() {
  return std::chrono::duration_cast<std::chrono::nanoseconds>(std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

void loadgen(Checks& c) {
  const std::vector<Prompt> prompts{{"p0", "energy per token"}, {"p1", "tell me a story"}};
  {
    jt::MockScript script;
    script.latency = [](std::size_t i) { return std::chrono::milliseconds(2 + static_cast<int>(i % 5)); };
    script.completion_tokens = [](std::size_t i) { return 8 + static_cast<int>(i % 32); };
    jt::MockEndpoint mock(script);
    LoadgenOptions opts;
    opts.endpoint = mock.url();
    opts.params.model = "mock";
    for (double rps : {1.0, 10.0, 50.0}) {
      const auto run = run_load(opts, prompts, schedule_arrivals(ArrivalMode::Deterministic, rps, 10.0), steady_ns);
      const double achieved = run.summary.achieved_rps;
      c.expect(std::abs(achieved - rps) <= 0.01 * rps, "rps " + num(rps) + " achieved " + num(achieved));
      c.expect(run.summary.error_count == 0, "rps " + num(rps) + " had errors");

      EnergyReport e;
      e.net_j = 1234.5 * rps + 0.1;
      const auto a = attribute_energy(e, run.summary);
      double sum = 0.0;
      for (double j : a.per_request_j) sum += j;
      c.expect(sum == e.net_j, "attribution at rps " + num(rps) + ": " + num(sum) + " vs " + num(e.net_j));
      c.expect(a.per_request_j.size() == static_cast<std::size_t>(run.summary.completed_requests),
               "one share per completed request");
    }
  }
  {
    jt::MockScript script;
    script.latency = [](std::size_t) { return std::chrono::milliseconds(5000); };
    jt::MockEndpoint mock(script);
    LoadgenOptions opts;
    opts.endpoint = mock.url();
    opts.params.model = "mock";
    const auto sched = schedule_arrivals(ArrivalMode::Deterministic, 10.0, 2.0);
    const auto run = run_load(opts, prompts, sched, steady_ns);
    c.expect(run.records.size() == 20, "20 dispatches");
    c.expect(run.summary.completed_requests == 20, "all slow requests completed");
    const std::int64_t t0 = run.summary.window.t_start_ns;
    double worst_ms = 0.0;
    for (const auto& r : run.records) {
      const double planned = static_cast<double>(t0) + sched.arrivals_s[r.index] * 1e9;
      worst_ms = std::max(worst_ms, std::abs(static_cast<double>(r.dispatch_ns) - planned) * 1e-6);
    }
    c.expect(worst_ms <= 10.0, "dispatch jitter " + num(worst_ms) + " ms under 5 s latency");
  }

  const std::vector<SaturationPoint> flattening{
      {5, 5, 200}, {10, 10, 120}, {20, 20, 80}, {40, 40, 60}, {60, 60, 59.5}, {80, 80, 59.2}};
  const std::vector<SaturationPoint> capped{{2, 2, 300}, {5, 5, 180}, {10, 10, 110}, {20, 14, 70}, {40, 14, 50}};
  const auto s1 = detect_saturation(flattening);
  const auto s2 = detect_saturation(capped);
  c.expect(s1 && *s1 == 40.0, "flattening curve saturates at 40");
  c.expect(s2 && *s2 == 10.0, "capped curve saturates at 10");
}

void mac_calculator(Checks& c) {
  const auto conv = LayerSpec::conv2d(3, 3, 3, 64, 32, 32);
  const std::vector<LayerSpec> one{conv};
  const auto macs = compute_macs(one);
  c.expect(macs == 1'769'472, "conv fixture: " + std::to_string(macs));
  c.expect(macs == jt::triple_loop_conv_macs(3, 3, 3, 64, 32, 32), "conv fixture vs counting oracle");

  std::mt19937_64 rng(909);
  for (int i = 0; i < 200; ++i) {
    std::vector<LayerSpec> layers;
    std::uint64_t sum = 0;
    const int count = 1 + static_cast<int>(rng() % 6);
    for (int k = 0; k < count; ++k) {
      LayerSpec l;
      if (rng() % 2) {
        const int kh = 1 + static_cast<int>(rng() % 5), kw = 1 + static_cast<int>(rng() % 5);
        const int ci = 1 + static_cast<int>(rng() % 16), co = 1 + static_cast<int>(rng() % 32);
        const int oh = 1 + static_cast<int>(rng() % 20), ow = 1 + static_cast<int>(rng() % 20);
        l = LayerSpec::conv2d(kh, kw, ci, co, oh, ow);
        c.expect(compute_macs(std::vector<LayerSpec>{l}) == jt::triple_loop_conv_macs(kh, kw, ci, co, oh, ow),
                 "random conv vs counting oracle");
      } else {
        l = LayerSpec::dense(1 + static_cast<std::int64_t>(rng() % 4096), 1 + static_cast<std::int64_t>(rng() % 4096));
      }
      sum += compute_macs(std::vector<LayerSpec>{l});
      layers.push_back(l);
    }
    c.expect(compute_macs(layers) == sum, "additivity over layer list " + std::to_string(i));
  }

  ModelDescriptor d;
  d.name = "cnn";
  d.total_parameters = d.trainable_parameters = 1000;
  d.model_size_bytes = 4000;
  d.layers = one;
  const auto v = validate_descriptor(d);
  c.expect(v.ok(), "descriptor valid");
  c.expect(v.descriptor.macs == 1'769'472 && v.descriptor.flops == 2 * 1'769'472, "flops = 2 x macs");
  c.expect(flops_from_macs(macs) == 2 * macs, "flops_from_macs");
}

void replay_end_to_end(Checks& c) {
  const fs::path fixture = fs::path(JOULEMARK_FIXTURE_DIR) / "replay";
  ReplaySensor trace(fixture / "trace.csv");
  const auto markers = parse_marker_stream(fmtutil::read_file(fixture / "markers.ndjson"));
  const auto session = replay_session("replay-fixture", trace, markers, 100, "replay");
  const auto baseline = load_baseline(fixture / "baseline.json");
  const auto ev = evaluate_session(session, baseline);

  const auto out = fs::temp_directory_path() / ("jm-acceptance-" + std::to_string(::getpid()));
  fs::remove_all(out);
  const auto dir = emit_session(out, manifest_for(session, "discriminative"), session.trace,
                                to_json(ev.energy, session.id, baseline), session_metrics_csv(session.id, ev));
  for (const char* f : {kEnergyFile, kMetricsFile}) {
    c.expect(fmtutil::read_file(dir / f) == fmtutil::read_file(fixture / "golden" / f),
             std::string(f) + " differs from golden");
  }
  fs::remove_all(out);

  const auto& inference = ev.energy.phases.at(1);
  c.expect(inference.window.name == PhaseName::inference(), "second phase is inference");
  c.expect(inference.sample_count == 50'000, "50k inference samples");
  const auto& row = ev.metrics.at(1).row;
  c.expect(row.energy_per_sample.value == inference.net_j / 50'000.0, "energy_per_sample = net / 50000");
}

void protocol(Checks& c) {
  std::mt19937_64 rng(1111);
  int violations = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto stream = jt::random_marker_stream(rng, i % 2 == 0);
    std::string text;
    for (const auto& m : stream) text += serialize_marker(m) + "\n";
    const auto back = parse_marker_stream(text);
    c.expect(back == stream, "stream " + std::to_string(i) + " round trip");
    c.expect(!code_of([&] { validate_stream(back); }), "stream " + std::to_string(i) + " valid");

    const std::string sid = stream.front().session_id;
    std::vector<std::vector<Marker>> bad;
    // Missing hello.
    bad.emplace_back(stream.begin() + 1, stream.end());
    // phase_end before any phase_start.
    auto early_end = stream;
    early_end.insert(early_end.begin() + 1, Marker{MarkerKind::PhaseEnd, sid, std::nullopt, PhasePayload{}});
    bad.push_back(early_end);
    // Overlapping phases.
    const auto start = std::find_if(stream.begin(), stream.end(),
                                    [](const Marker& m) { return m.kind == MarkerKind::PhaseStart; });
    if (start != stream.end()) {
      auto overlap = stream;
      const auto pos = overlap.begin() + (start - stream.begin()) + 1;
      overlap.insert(pos, Marker{MarkerKind::PhaseStart, sid, std::nullopt, PhasePayload{PhaseName::idle()}});
      bad.push_back(overlap);
    }
    // Marker after goodbye, and no goodbye at all.
    auto after = stream;
    after.push_back(Marker{MarkerKind::SampleCount, sid, std::nullopt, SampleCountPayload{1}});
    bad.push_back(after);
    bad.emplace_back(stream.begin(), stream.end() - 1);
    for (auto& s : bad) {
      for (auto& m : s) m.timestamp_ns.reset();
      ++violations;
      c.expect(code_of([&] { validate_stream(s); }) == ErrorCode::ProtocolViolation,
               "stream " + std::to_string(i) + " violation not rejected");
    }
  }
  c.expect(violations >= 4000, "violation variants generated");
}

struct Criterion {
  int id;
  const char* name;
  double budget_s;
  std::function<void(Checks&)> run;
};

}  // namespace

int main() {
  const std::vector<Criterion> criteria{
      {1, "energy integration vs brute-force oracle", 5.0, energy_oracle},
      {2, "idle self-subtraction and 500 J fixture", 5.0, idle_correction},
      {3, "counter wraparound", 1.0, counter_wrap},
      {4, "DRAM power model", 1.0, dram_model},
      {5, "time-energy linearity", 5.0, time_energy_linearity},
      {6, "correlation engine", 5.0, correlation_engine},
      {7, "lasso coordinate descent", 30.0, lasso},
      {8, "open-loop load generator", 90.0, loadgen},
      {9, "MAC calculator", 1.0, mac_calculator},
      {10, "end-to-end replay against golden files", 5.0, replay_end_to_end},
      {11, "marker protocol round trip and ordering", 5.0, protocol},
  };
  int failed = 0;
  for (const auto& cr : criteria) {
    Checks checks;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool in_budget = secs < cr.budget_s;
    const bool pass = checks.ok() && in_budget;
    if (!pass) ++failed;
    char timing[64];
    std::snprintf(timing, sizeof timing, "%.2fs/%.0fs", secs, cr.budget_s);
    std::printf("%-4s %2d  %-42s %-12s %s%s\n", pass ? "PASS" : "FAIL", cr.id, cr.name, timing,
                checks.summary().c_str(), in_budget ? "" : "  (over budget)");
    std::fflush(stdout);
  }
  std::printf("%d/%zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
