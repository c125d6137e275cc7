#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "joulemark/protocol.hpp"
#include "joulemark/trace.hpp"

namespace joulemark::testing {

/// A well-formed stream: hello, 0-4 phases with epochs and sample counts
/// in between, goodbye. Timestamps strictly increase when `with_time`.
std::vector<Marker> random_marker_stream(std::mt19937_64& rng, bool with_time = true);

struct SyntheticTrace {
  SensorTopology topology;
  int interval_ms = 100;
  std::vector<PowerSample> samples;
};

/// 1-4 domains, 1-60 s long, each domain piecewise constant or a ramp,
/// with per-tick jitter of up to `jitter_ms`.
SyntheticTrace random_trace(std::mt19937_64& rng, int jitter_ms = 0);

/// n x p columns that are centered, mutually orthogonal and have unit
/// population variance, so X'X / n = I. Column-major.
std::vector<std::vector<double>> orthonormal_design(std::mt19937_64& rng, int n, int p);

}  // namespace joulemark::testing
