#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "geomlens/error.hpp"

namespace geomlens::saturation {

struct CheckpointPoint {
  long long tokens = 0;
  double loss = 0.0;
  double eff_rank_norm = 0.0;
};

// Training trajectory of one model: loss and normalized effective rank at
// strictly increasing token counts. At least 5 points.
struct CheckpointSeries {
  std::string model_id;
  std::vector<CheckpointPoint> points;
};

void validate(const CheckpointSeries& s);

struct Thresholds {
  double rise_frac = 0.01;  // sustained relative loss rise over the running minimum
  double drop_frac = 0.2;   // relative rank drop below the running maximum
  int window = 3;           // consecutive checkpoints required
};

// First token count where the loss exceeds its running minimum by at least
// rise_frac for `window` consecutive checkpoints; absent if that never holds.
std::optional<long long> detect_loss_degradation(const CheckpointSeries& s,
                                                 double rise_frac = 0.01, int window = 3);

// First token count where the effective rank falls below
// (1 - drop_frac) * running maximum for `window` consecutive checkpoints.
std::optional<long long> detect_rank_collapse(const CheckpointSeries& s, double drop_frac = 0.2,
                                              int window = 3);

struct SaturationVerdict {
  std::optional<long long> loss_degradation_onset;
  std::optional<long long> rank_collapse_onset;
  bool co_occurring = false;
  std::optional<long long> lag_tokens;  // rank onset - loss onset
  // Rank change per token across the collapse-onset checkpoint; collapse
  // dynamics are reported, not judged.
  std::optional<double> rank_slope_at_onset;
  Thresholds thresholds_used;
};

// Runs both detectors; onsets co-occur when both are present and at most two
// checkpoints apart.
SaturationVerdict assess(const CheckpointSeries& s, const Thresholds& thresholds = {});

// CSV with header "tokens,loss,eff_rank_norm"; model id defaults to the file
// stem.
CheckpointSeries load_series_csv(const std::filesystem::path& path);

}  // namespace geomlens::saturation
