#include "geomlens/saturation.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace geomlens::saturation {

namespace {

// Index of the first position where `hit(i)` holds for `window` consecutive
// checkpoints, or -1. `hit` must only look at data up to its argument.
template <typename Hit>
int first_sustained(int n, int window, Hit&& hit) {
  int run = 0;
  for (int i = 0; i < n; ++i) {
    if (hit(i)) {
      ++run;
      if (run >= window) return i - window + 1;
    } else {
      run = 0;
    }
  }
  return -1;
}

int index_of_tokens(const CheckpointSeries& s, long long tokens) {
  for (size_t i = 0; i < s.points.size(); ++i)
    if (s.points[i].tokens == tokens) return static_cast<int>(i);
  return -1;
}

}  // namespace

void validate(const CheckpointSeries& s) {
  if (s.points.size() < 5)
    throw Error(Errc::invariant_violation, "series '" + s.model_id + "' needs >= 5 points, got " +
                                               std::to_string(s.points.size()));
  long long prev = std::numeric_limits<long long>::min();
  for (const CheckpointPoint& p : s.points) {
    if (p.tokens <= prev)
      throw Error(Errc::invariant_violation,
                  "series '" + s.model_id + "': tokens must be strictly increasing");
    prev = p.tokens;
    if (!std::isfinite(p.loss) || !std::isfinite(p.eff_rank_norm))
      throw Error(Errc::non_finite, "series '" + s.model_id + "': non-finite value");
    if (!(p.eff_rank_norm > 0.0 && p.eff_rank_norm <= 1.0))
      throw Error(Errc::invariant_violation,
                  "series '" + s.model_id + "': eff_rank_norm must lie in (0, 1]");
  }
}

std::optional<long long> detect_loss_degradation(const CheckpointSeries& s, double rise_frac,
                                                 int window) {
  validate(s);
  if (!(rise_frac > 0.0 && rise_frac < 1.0))
    throw Error(Errc::invariant_violation, "rise_frac must lie in (0, 1)");
  if (window < 1) throw Error(Errc::invariant_violation, "window must be >= 1");

  const int n = static_cast<int>(s.points.size());
  std::vector<double> running_min(static_cast<size_t>(n));
  double mn = s.points[0].loss;
  for (int i = 0; i < n; ++i) {
    mn = std::min(mn, s.points[static_cast<size_t>(i)].loss);
    running_min[static_cast<size_t>(i)] = mn;
  }
  const int onset = first_sustained(n, window, [&](int i) {
    return s.points[static_cast<size_t>(i)].loss >=
           running_min[static_cast<size_t>(i)] * (1.0 + rise_frac);
  });
  if (onset < 0) return std::nullopt;
  return s.points[static_cast<size_t>(onset)].tokens;
}

std::optional<long long> detect_rank_collapse(const CheckpointSeries& s, double drop_frac,
                                              int window) {
  validate(s);
  if (!(drop_frac > 0.0 && drop_frac < 1.0))
    throw Error(Errc::invariant_violation, "drop_frac must lie in (0, 1)");
  if (window < 1) throw Error(Errc::invariant_violation, "window must be >= 1");

  const int n = static_cast<int>(s.points.size());
  std::vector<double> running_max(static_cast<size_t>(n));
  double mx = s.points[0].eff_rank_norm;
  for (int i = 0; i < n; ++i) {
    mx = std::max(mx, s.points[static_cast<size_t>(i)].eff_rank_norm);
    running_max[static_cast<size_t>(i)] = mx;
  }
  const int onset = first_sustained(n, window, [&](int i) {
    return s.points[static_cast<size_t>(i)].eff_rank_norm <
           running_max[static_cast<size_t>(i)] * (1.0 - drop_frac);
  });
  if (onset < 0) return std::nullopt;
  return s.points[static_cast<size_t>(onset)].tokens;
}

SaturationVerdict assess(const CheckpointSeries& s, const Thresholds& thresholds) {
  SaturationVerdict v;
  v.thresholds_used = thresholds;
  v.loss_degradation_onset = detect_loss_degradation(s, thresholds.rise_frac, thresholds.window);
  v.rank_collapse_onset = detect_rank_collapse(s, thresholds.drop_frac, thresholds.window);
  if (v.loss_degradation_onset && v.rank_collapse_onset) {
    v.lag_tokens = *v.rank_collapse_onset - *v.loss_degradation_onset;
    const int li = index_of_tokens(s, *v.loss_degradation_onset);
    const int ri = index_of_tokens(s, *v.rank_collapse_onset);
    v.co_occurring = std::abs(ri - li) <= 2;
  }
  if (v.rank_collapse_onset) {
    const int ri = index_of_tokens(s, *v.rank_collapse_onset);
    if (ri > 0) {
      const CheckpointPoint& a = s.points[static_cast<size_t>(ri - 1)];
      const CheckpointPoint& b = s.points[static_cast<size_t>(ri)];
      v.rank_slope_at_onset =
          (b.eff_rank_norm - a.eff_rank_norm) / static_cast<double>(b.tokens - a.tokens);
    }
  }
  return v;
}

CheckpointSeries load_series_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::parse_error, "cannot open series: " + path.string());
  CheckpointSeries s;
  s.model_id = path.stem().string();

  std::string line;
  bool saw_header = false;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!saw_header) {
      if (line != "tokens,loss,eff_rank_norm")
        throw Error(Errc::parse_error,
                    path.string() + ": expected header 'tokens,loss,eff_rank_norm'");
      saw_header = true;
      continue;
    }
    std::istringstream ss(line);
    CheckpointPoint p;
    char c1 = 0, c2 = 0;
    if (!(ss >> p.tokens >> c1 >> p.loss >> c2 >> p.eff_rank_norm) || c1 != ',' || c2 != ',')
      throw Error(Errc::parse_error, path.string() + ":" + std::to_string(lineno) + ": bad row");
    s.points.push_back(p);
  }
  validate(s);
  return s;
}

}  // namespace geomlens::saturation
