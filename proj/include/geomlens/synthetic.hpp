#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "geomlens/manifest.hpp"
#include "geomlens/saturation.hpp"
#include "geomlens/stats.hpp"

namespace geomlens::stats::synthetic {

// Model-size / token-budget axes mirroring the ablation grid the analyses
// assume: N in millions of non-embedding parameters, D in billions of tokens.
inline constexpr long long kParamGrid[] = {4'000'000,  8'000'000,  16'000'000,
                                           28'000'000, 40'000'000, 75'000'000};
inline constexpr long long kTokenGrid[] = {8'000'000'000, 32'000'000'000, 64'000'000'000,
                                           128'000'000'000};
inline constexpr long long kBatchGrid[] = {32, 64, 128, 256, 512};

// Scaling-surface samples over the full N x D grid from known constants, with
// optional multiplicative log-normal noise. The generating constants are the
// oracle for fit-recovery tests.
std::vector<ScalingPoint> chinchilla_grid(const ScalingLawFit& truth, double noise_frac,
                                          std::uint64_t seed);

struct Suite {
  ingest::Manifest manifest;
  std::map<std::string, ModelGeometry> geometry;
};

// Confounded suite: the planted metric (stored as R(W)) and the loss are both
// monotone in batch size plus independent noise, so the raw correlation is
// strong while the partial correlation (controlling for batch size) is near
// zero. The remaining geometry fields are independent noise.
Suite planted_confound_suite(std::uint64_t seed, int n = 60);

// Suite whose R(W) column equals the loss exactly: a perfect predictor.
Suite perfect_predictor_suite(std::uint64_t seed, int n = 12);

// 12 records spanning the batch-size grid with well-formed losses; used as a
// general-purpose manifest fixture.
ingest::Manifest small_manifest(std::uint64_t seed);

// Checkpoint-series generators with known event locations.
struct SeriesFixture {
  saturation::CheckpointSeries series;
  int loss_ramp_index = -1;   // first checkpoint of the planted loss rise, -1 if none
  int rank_drop_index = -1;   // first checkpoint past the planted rank drop, -1 if none
};

// Loss decays then ramps up ~3% after 70% of training while the effective
// rank drops sharply at the same point.
SeriesFixture saturating_series(std::uint64_t seed);

// Monotone loss, mild rank decline that stays above the collapse threshold.
SeriesFixture stable_series(std::uint64_t seed);

// Monotone loss with a gradual 40% rank decline over the last half: rank
// collapse without loss degradation.
SeriesFixture gradual_collapse_series(std::uint64_t seed);

}  // namespace geomlens::stats::synthetic
