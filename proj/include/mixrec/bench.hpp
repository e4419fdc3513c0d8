#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mixrec/model.hpp"

namespace mixrec {

struct BenchPoint {
    std::size_t value = 0;
    double median_ns = 0;
    double p10_ns = 0;
    double p90_ns = 0;
};

/// Forward wall time swept along one axis (s, C or K) with the hidden sizes
/// held fixed, which is the regime where runtime is linear in the axis.
/// Each point is the median of `reps` timed runs after a short warmup.
std::vector<BenchPoint> run_forward_bench(char axis, const std::vector<std::size_t>& values,
                                          const ModelConfig& base, std::size_t reps,
                                          std::uint64_t seed);

std::string bench_csv(char axis, const std::vector<BenchPoint>& points);

}  // namespace mixrec
