#include "geomlens/synthetic.hpp"

#include <cmath>
#include <random>

namespace geomlens::stats::synthetic {

namespace {

geometry::GeometrySummary make_summary(geometry::Target target, double eff_rank_norm,
                                       std::optional<double> isotropy, double cosine) {
  geometry::GeometrySummary s;
  s.target = target;
  s.effective_rank_norm = eff_rank_norm;
  s.effective_rank_raw = eff_rank_norm * 768.0;
  s.isotropy = isotropy;
  s.angular_variability = cosine;
  return s;
}

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double gauss(std::mt19937_64& rng, double sd) {
  return std::normal_distribution<double>(0.0, sd)(rng);
}

}  // namespace

std::vector<ScalingPoint> chinchilla_grid(const ScalingLawFit& truth, double noise_frac,
                                          std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<ScalingPoint> points;
  for (const long long n : kParamGrid) {
    for (const long long d : kTokenGrid) {
      const double clean = predict(truth, static_cast<double>(n), static_cast<double>(d));
      const double noisy =
          noise_frac > 0.0 ? clean * std::exp(gauss(rng, noise_frac)) : clean;
      points.push_back({static_cast<double>(n), static_cast<double>(d), noisy});
    }
  }
  return points;
}

Suite planted_confound_suite(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  Suite suite;
  suite.manifest.schema_version = ingest::kManifestSchemaVersion;

  for (int i = 0; i < n; ++i) {
    ingest::ExperimentRecord rec;
    rec.model_id = "synth-" + std::to_string(i);
    rec.param_count_nonembed = kParamGrid[i % 2];   // small N effect keeps the fit well posed
    rec.token_budget = kTokenGrid[(i / 2) % 2];
    rec.batch_size = kBatchGrid[i % 5];
    rec.weight_decay = 0.1;
    rec.lr_scale = 1.0;
    rec.lr_anneal_frac = 0.1;

    const double lb = std::log2(static_cast<double>(rec.batch_size));
    // Both driven by batch size, plus independent noise: classic confounding.
    // The N/D terms keep the scaling-law fit well posed but stay small so the
    // batch-size signal dominates.
    const double loss = 6.0 - 0.20 * lb + 2.0e5 / rec.param_count_nonembed +
                        4.0e8 / rec.token_budget + gauss(rng, 0.05);
    const double metric = 0.05 + 0.09 * lb + gauss(rng, 0.06);
    rec.losses["synthetic"] = loss;

    ModelGeometry g;
    g.weight = make_summary(geometry::Target::unembedding, metric,
                            uniform(rng, 0.4, 0.6), uniform(rng, 0.0, 0.3));
    g.representation = make_summary(geometry::Target::representation,
                                    uniform(rng, 0.7, 0.9), std::nullopt,
                                    uniform(rng, 0.0, 0.2));
    suite.geometry[rec.model_id] = g;
    suite.manifest.records.push_back(std::move(rec));
  }
  return suite;
}

Suite perfect_predictor_suite(std::uint64_t seed, int n) {
  std::mt19937_64 rng(seed);
  Suite suite;
  suite.manifest.schema_version = ingest::kManifestSchemaVersion;

  for (int i = 0; i < n; ++i) {
    ingest::ExperimentRecord rec;
    rec.model_id = "perfect-" + std::to_string(i);
    rec.param_count_nonembed = kParamGrid[i % 6];
    rec.token_budget = kTokenGrid[(i / 3) % 4];
    rec.batch_size = kBatchGrid[i % 5];
    rec.weight_decay = i % 3 == 0 ? 0.01 : 0.1;
    rec.lr_scale = 1.0;
    rec.lr_anneal_frac = 0.1;

    const double loss = 1.8 + 400.0 / std::pow(static_cast<double>(rec.param_count_nonembed), 0.34) +
                        410.0 / std::pow(static_cast<double>(rec.token_budget), 0.28) +
                        uniform(rng, 0.0, 0.5);
    rec.losses["synthetic"] = loss;

    ModelGeometry g;
    g.weight = make_summary(geometry::Target::unembedding, loss, uniform(rng, 0.4, 0.6),
                            uniform(rng, 0.0, 0.3));
    g.representation = make_summary(geometry::Target::representation, uniform(rng, 0.7, 0.9),
                                    std::nullopt, uniform(rng, 0.0, 0.2));
    suite.geometry[rec.model_id] = g;
    suite.manifest.records.push_back(std::move(rec));
  }
  return suite;
}

ingest::Manifest small_manifest(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ingest::Manifest m;
  m.schema_version = ingest::kManifestSchemaVersion;
  for (int i = 0; i < 12; ++i) {
    ingest::ExperimentRecord rec;
    rec.model_id = "olmo-synth-" + std::to_string(i);
    rec.param_count_nonembed = kParamGrid[i % 3];
    rec.token_budget = kTokenGrid[i % 4];
    rec.batch_size = kBatchGrid[i % 5];
    rec.weight_decay = (i % 2) ? 0.1 : 0.01;
    rec.lr_scale = (i % 3 == 2) ? 10.0 : 1.0;
    rec.lr_anneal_frac = (i % 4) * 0.03;
    rec.losses["pile_10k"] = 4.0 + uniform(rng, 0.0, 2.0);
    rec.losses["dolma_100_code"] = 4.5 + uniform(rng, 0.0, 2.0);
    m.records.push_back(std::move(rec));
  }
  return m;
}

SeriesFixture saturating_series(std::uint64_t seed) {
  (void)seed;  // shape is deterministic; the hook keeps call sites uniform
  SeriesFixture fx;
  fx.series.model_id = "saturating";
  const int n = 40;
  const int ramp = static_cast<int>(n * 0.7);
  fx.loss_ramp_index = ramp;
  fx.rank_drop_index = ramp;
  double min_loss = 1e9;
  for (int i = 0; i < n; ++i) {
    saturation::CheckpointPoint p;
    p.tokens = static_cast<long long>(i + 1) * 1'000'000'000;
    const double decay = 4.0 + 2.0 * std::exp(-i / 8.0);
    if (i < ramp) {
      p.loss = decay;
      p.eff_rank_norm = 0.85;
      min_loss = std::min(min_loss, p.loss);
    } else {
      // ~3% ramp reached within a few checkpoints of the planted onset
      const double t = std::min(1.0, static_cast<double>(i - ramp + 1) / 4.0);
      p.loss = min_loss * (1.0 + 0.03 * t);
      p.eff_rank_norm = i - ramp < 2 ? 0.85 - 0.18 * (i - ramp + 1) : 0.49;
    }
    fx.series.points.push_back(p);
  }
  return fx;
}

SeriesFixture stable_series(std::uint64_t seed) {
  (void)seed;
  SeriesFixture fx;
  fx.series.model_id = "stable";
  const int n = 40;
  for (int i = 0; i < n; ++i) {
    saturation::CheckpointPoint p;
    p.tokens = static_cast<long long>(i + 1) * 1'000'000'000;
    p.loss = 4.0 + 2.0 * std::exp(-i / 8.0) - 0.001 * i;  // strictly improving
    p.eff_rank_norm = 0.80 - 0.08 * i / (n - 1);          // 10% drift, below threshold
    fx.series.points.push_back(p);
  }
  return fx;
}

SeriesFixture gradual_collapse_series(std::uint64_t seed) {
  (void)seed;
  SeriesFixture fx;
  fx.series.model_id = "gradual-collapse";
  const int n = 40;
  const int half = n / 2;
  for (int i = 0; i < n; ++i) {
    saturation::CheckpointPoint p;
    p.tokens = static_cast<long long>(i + 1) * 1'000'000'000;
    p.loss = 4.0 + 2.0 * std::exp(-i / 8.0) - 0.001 * i;
    if (i < half) {
      p.eff_rank_norm = 0.80;
    } else {
      const double t = static_cast<double>(i - half + 1) / (n - half);
      p.eff_rank_norm = 0.80 * (1.0 - 0.4 * t);
    }
    // First index where 0.80 * (1 - 0.4 t) < 0.80 * 0.8, i.e. t > 0.5.
    fx.series.points.push_back(p);
  }
  const int steps = n - half;
  fx.rank_drop_index = half + static_cast<int>(std::floor(0.5 * steps + 1e-9));
  return fx;
}

}  // namespace geomlens::stats::synthetic
