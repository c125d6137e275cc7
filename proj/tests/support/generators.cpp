#include "generators.hpp"

#include <algorithm>
#include <array>
#include <cmath>

#include <Eigen/Dense>

namespace joulemark::testing {

namespace {

ModelDescriptor random_model(std::mt19937_64& rng) {
  ModelDescriptor d;
  d.name = "m" + std::to_string(rng() % 1000);
  d.total_parameters = static_cast<std::int64_t>(1 + rng() % 100'000'000);
  d.trainable_parameters = d.total_parameters / 2;
  d.model_size_bytes = d.total_parameters * 4;
  d.buffer_bytes = static_cast<std::int64_t>(rng() % 4096);
  if (rng() % 2) d.macs = static_cast<std::int64_t>(rng() % 1'000'000'000);
  if (rng() % 3 == 0) d.layers.push_back(LayerSpec::conv2d(3, 3, 3, 16, 8, 8, rng() % 2));
  return d;
}

}  // namespace

std::vector<Marker> random_marker_stream(std::mt19937_64& rng, bool with_time) {
  const std::string sid = "s" + std::to_string(rng() % 100000);
  std::int64_t t = static_cast<std::int64_t>(rng() % 1'000'000);
  auto stamp = [&]() -> std::optional<std::int64_t> {
    t += 1 + static_cast<std::int64_t>(rng() % 50'000'000);
    return with_time ? std::optional<std::int64_t>(t) : std::nullopt;
  };
  std::vector<Marker> out;
  HelloPayload hello;
  if (rng() % 2) hello.model = random_model(rng);
  if (rng() % 2) hello.run_config = {{"batch_size", 1 + rng() % 512}, {"lr", 0.001 * static_cast<double>(rng() % 100)}};
  out.push_back({MarkerKind::Hello, sid, stamp(), hello});

  static const PhaseName kNames[] = {PhaseName::training(), PhaseName::inference(), PhaseName::idle(),
                                     PhaseName::custom("eval")};
  const int phases = static_cast<int>(rng() % 5);
  for (int p = 0; p < phases; ++p) {
    const auto& name = kNames[rng() % 4];
    out.push_back({MarkerKind::PhaseStart, sid, stamp(), PhasePayload{name}});
    const int inner = static_cast<int>(rng() % 4);
    for (int i = 0; i < inner; ++i) {
      if (rng() % 2) {
        EpochPayload e{i, std::nullopt, std::nullopt};
        if (rng() % 2) e.loss = static_cast<double>(rng() % 1000) / 7.0;
        if (rng() % 2) e.accuracy = static_cast<double>(rng() % 1000) / 1000.0;
        out.push_back({MarkerKind::Epoch, sid, stamp(), e});
      } else {
        out.push_back({MarkerKind::SampleCount, sid, stamp(), SampleCountPayload{static_cast<std::int64_t>(rng() % 100000)}});
      }
    }
    std::optional<PhaseName> end_name;
    if (rng() % 2) end_name = name;
    out.push_back({MarkerKind::PhaseEnd, sid, stamp(), PhasePayload{end_name}});
  }
  out.push_back({MarkerKind::Goodbye, sid, stamp(), std::monostate{}});
  return out;
}

SyntheticTrace random_trace(std::mt19937_64& rng, int jitter_ms) {
  static const PowerDomain kDomains[] = {{DomainKind::CpuPackage, 0}, {DomainKind::Gpu, 0}, {DomainKind::Dram, 0},
                                         {DomainKind::Gpu, 1}};
  SyntheticTrace out;
  out.interval_ms = std::array{10, 50, 100, 250}[rng() % 4];
  const int n_domains = 1 + static_cast<int>(rng() % 4);
  const double duration_s = 1.0 + static_cast<double>(rng() % 5901) / 100.0;
  const auto ticks = static_cast<int>(duration_s * 1000.0 / out.interval_ms);
  std::uniform_real_distribution<double> watts(0.0, 400.0);

  out.topology.name = "synthetic";
  std::vector<std::pair<bool, std::array<double, 4>>> shape;
  for (int d = 0; d < n_domains; ++d) {
    out.topology.domains.push_back({kDomains[d], 0.0, SensorKind::Synthetic});
    // ramp: start, end; piecewise: level a, level b, switch fraction
    shape.push_back({rng() % 2 == 0, {watts(rng), watts(rng), static_cast<double>(rng() % 100) / 100.0, 0.0}});
  }
  std::sort(out.topology.domains.begin(), out.topology.domains.end(),
            [](auto& a, auto& b) { return a.domain < b.domain; });
  const std::int64_t step = static_cast<std::int64_t>(out.interval_ms) * 1'000'000;
  for (int k = 0; k < ticks; ++k) {
    const std::int64_t jitter =
        jitter_ms > 0 ? static_cast<std::int64_t>(rng() % static_cast<std::uint64_t>(jitter_ms * 1'000'000)) : 0;
    const std::int64_t ts = k * step + jitter;
    const double frac = ticks > 1 ? static_cast<double>(k) / (ticks - 1) : 0.0;
    for (int d = 0; d < n_domains; ++d) {
      const auto& [ramp, p] = shape[static_cast<std::size_t>(d)];
      const double w = ramp ? p[0] + (p[1] - p[0]) * frac : (frac < p[2] ? p[0] : p[1]);
      out.samples.push_back({ts, out.topology.domains[static_cast<std::size_t>(d)].domain, w});
    }
  }
  return out;
}

std::vector<std::vector<double>> orthonormal_design(std::mt19937_64& rng, int n, int p) {
  std::normal_distribution<double> gauss;
  Eigen::MatrixXd a(n, p + 1);
  a.col(0).setOnes();
  for (int j = 1; j <= p; ++j) {
    for (int i = 0; i < n; ++i) a(i, j) = gauss(rng);
  }
  // Orthogonal to the ones column means centered.
  const Eigen::MatrixXd q = Eigen::HouseholderQR<Eigen::MatrixXd>(a).householderQ() * Eigen::MatrixXd::Identity(n, p + 1);
  std::vector<std::vector<double>> cols(static_cast<std::size_t>(p), std::vector<double>(static_cast<std::size_t>(n)));
  for (int j = 0; j < p; ++j) {
    for (int i = 0; i < n; ++i) cols[static_cast<std::size_t>(j)][static_cast<std::size_t>(i)] = q(i, j + 1) * std::sqrt(n);
  }
  return cols;
}

}  // namespace joulemark::testing
