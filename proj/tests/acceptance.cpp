// Acceptance suite: every release gate in one binary, one PASS/FAIL line per
// criterion. Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <sys/wait.h>
#include <vector>

#include "geomlens/cli.hpp"
#include "geomlens/geometry.hpp"
#include "geomlens/manifest.hpp"
#include "geomlens/spectral.hpp"
#include "geomlens/stats.hpp"
#include "geomlens/synthetic.hpp"
#include "geomlens/tensor_io.hpp"
#include "geomlens/saturation.hpp"
#include "oracles.hpp"

using namespace geomlens;

namespace {

int g_failures = 0;
std::vector<std::string> g_notes;

void report(int number, const char* name, bool pass) {
  std::printf("%s criterion %d: %s\n", pass ? "PASS" : "FAIL", number, name);
  if (!pass) ++g_failures;
  for (const std::string& note : g_notes) std::printf("       %s\n", note.c_str());
  g_notes.clear();
}

void note(const std::string& s) { g_notes.push_back(s); }

double seconds_since(const std::chrono::steady_clock::time_point& t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::filesystem::path scratch_dir() {
  static const std::filesystem::path dir = [] {
    std::mt19937_64 rng(std::random_device{}());
    auto p = std::filesystem::temp_directory_path() /
             ("geomlens_acceptance_" + std::to_string(rng()));
    std::filesystem::create_directories(p);
    return p;
  }();
  return dir;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

bool rel_close(double got, double want, double tol) {
  return std::abs(got - want) <= tol * std::max({std::abs(got), std::abs(want), 1e-300});
}

// ---- criterion 1: metric oracle equivalence ---------------------------------

void criterion_1() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(20240131);
  bool pass = true;
  double worst = 0.0;
  for (int trial = 0; trial < 100 && pass; ++trial) {
    const Eigen::Index cols = 4 + static_cast<Eigen::Index>(rng() % 61);           // up to 64
    const Eigen::Index rows =
        std::max<Eigen::Index>(cols + 1, 30 + static_cast<Eigen::Index>(rng() % 2019));  // up to 2048
    Eigen::MatrixXd m;
    switch (trial % 3) {
      case 0: m = oracles::gaussian(rng, rows, cols, 0.5); break;
      case 1:
        m = oracles::low_rank(rng, rows, cols, std::max<Eigen::Index>(1, cols / 3), 1e-3);
        break;
      default: m = oracles::ill_conditioned(rng, rows, cols, 1e-6); break;
    }
    const double er = geometry::effective_rank(m).raw;
    const double er_want = oracles::effective_rank_raw(m, 1e-12);
    const double iso = geometry::isotropy(m);
    const double iso_want = oracles::isotropy(m, true);
    const double av = geometry::angular_variability(m).value;
    const double av_want = oracles::angular_variability(m);
    const double err = std::max({std::abs(er - er_want) / er_want,
                                 std::abs(iso - iso_want) / iso_want,
                                 std::abs(av - av_want) / std::max(std::abs(av_want), 1e-3)});
    worst = std::max(worst, err);
    if (!(rel_close(er, er_want, 1e-9) && rel_close(iso, iso_want, 1e-9) &&
          std::abs(av - av_want) <= 1e-9 * std::max(1.0, std::abs(av_want)))) {
      note("trial " + std::to_string(trial) + " shape " + std::to_string(rows) + "x" +
           std::to_string(cols) + " err " + std::to_string(err));
      pass = false;
    }
  }
  const double elapsed = seconds_since(t0);
  note("100 matrices, worst relative error " + std::to_string(worst) + ", " +
       std::to_string(elapsed) + " s");
  if (elapsed >= 30.0) pass = false;
  report(1, "effective rank / isotropy / angular variability match brute-force references "
            "(1e-9, < 30 s)", pass);
}

// ---- criterion 2: analytic fixtures ------------------------------------------

void criterion_2() {
  bool pass = true;
  const auto expect = [&](bool ok, const std::string& what) {
    if (!ok) {
      note("failed: " + what);
      pass = false;
    }
  };

  expect(std::abs(geometry::effective_rank(Eigen::MatrixXd::Identity(5, 5)).normalized - 1.0) <
             1e-6,
         "identity eff_rank_norm = 1");

  std::mt19937_64 rng(5150);
  const Eigen::MatrixXd rank1 = oracles::gaussian(rng, 100, 1) * oracles::gaussian(rng, 1, 10);
  expect(std::abs(geometry::effective_rank(rank1).normalized - 0.1) < 1e-6,
         "rank-1 100x10 eff_rank_norm = 0.1");

  Eigen::MatrixXd basis = Eigen::MatrixXd::Zero(12, 6);
  for (int j = 0; j < 6; ++j) {
    basis(2 * j, j) = 1.0;
    basis(2 * j + 1, j) = -1.0;
  }
  expect(std::abs(geometry::isotropy(basis) - 1.0) <= 1e-12, "signed basis isotropy = 1");

  Eigen::MatrixXd pair(2, 2);
  pair << 1, 0, -1, 0;
  expect(std::abs(geometry::isotropy(pair) - 1.0 / std::cosh(1.0)) <= 1e-9,
         "antipodal pair isotropy = 1/cosh(1)");
  expect(geometry::angular_variability(pair).value == -1.0, "antipodal pair A = -1 exactly");

  Eigen::MatrixXd identical = Eigen::MatrixXd::Zero(4, 3);
  for (int i = 0; i < 4; ++i) identical(i, 0) = 1.0;
  expect(geometry::angular_variability(identical).value == 1.0, "identical rows A = 1");

  expect(std::abs(geometry::angular_variability(Eigen::MatrixXd::Identity(6, 6)).value) <= 1e-12,
         "orthonormal rows A = 0");

  report(2, "analytic fixtures hit their closed-form values", pass);
}

// ---- criterion 3: performance on the production shape ------------------------

void criterion_3() {
  bool pass = true;
  const auto dir = scratch_dir();
  const Eigen::Index v = 50304, d = 768;

  // f32 safetensors fixture written once, loaded through the normal path
  {
    std::mt19937_64 rng(768);
    std::normal_distribution<double> nd(0.0, 0.02);
    Eigen::MatrixXd w(v, d);
    for (Eigen::Index j = 0; j < d; ++j)
      for (Eigen::Index i = 0; i < v; ++i) w(i, j) = nd(rng);
    ingest::save_safetensors(dir / "big.safetensors",
                             {{"lm_head.weight", w, ingest::DtypeOrigin::f32}});
  }
  const ingest::WeightMatrix w = ingest::load_weight(dir / "big.safetensors", "lm_head.weight");
  if (w.vocab_size() != v || w.model_dim() != d || w.dtype_origin != ingest::DtypeOrigin::f32) {
    note("fixture shape or dtype wrong");
    pass = false;
  }

  auto t0 = std::chrono::steady_clock::now();
  const auto er = geometry::effective_rank(w.data);
  const double rank_s = seconds_since(t0);

  t0 = std::chrono::steady_clock::now();
  const auto av = geometry::angular_variability(w.data);
  const double cos_s = seconds_since(t0);

  note("effective rank " + std::to_string(er.raw) + " in " + std::to_string(rank_s) +
       " s; angular variability " + std::to_string(av.value) + " in " + std::to_string(cos_s) +
       " s");
  if (rank_s >= 2.0 || cos_s >= 2.0) pass = false;
  if (spectral::singular_values(w.data).method != spectral::Method::gram_eigen) {
    note("expected the Gram path for this shape");
    pass = false;
  }

  const Eigen::MatrixXd prefix = w.data.topRows(2048);
  const double got = geometry::angular_variability(prefix).value;
  const double want = oracles::angular_variability(prefix);
  if (std::abs(got - want) > 1e-9) {
    note("prefix cosine mismatch: " + std::to_string(got) + " vs " + std::to_string(want));
    pass = false;
  }
  report(3, "50304x768 fixture: rank and cosine under 2 s each, prefix matches O(v^2) loop",
         pass);
}

// ---- criterion 4: chinchilla recovery ----------------------------------------

void criterion_4() {
  bool pass = true;
  const stats::ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};

  const auto check_recovery = [&](double noise, std::uint64_t seed, double tol,
                                  const char* label) {
    const auto points = stats::synthetic::chinchilla_grid(truth, noise, seed);
    const stats::ScalingLawFit fit = stats::fit_chinchilla(points);
    double worst = 0.0;
    for (const auto& p : points) {
      const double want = stats::predict(truth, p.n_params, p.tokens);
      const double got = stats::predict(fit, p.n_params, p.tokens);
      worst = std::max(worst, std::abs(got - want) / want);
    }
    note(std::string(label) + ": worst curve error " + std::to_string(100.0 * worst) + "%");
    if (worst >= tol) {
      pass = false;
    }
  };
  check_recovery(0.0, 1, 0.001, "noiseless");
  check_recovery(0.01, 20240131, 0.02, "1% multiplicative noise");

  const auto points = stats::synthetic::chinchilla_grid(truth, 0.01, 20240131);
  const auto a = stats::fit_chinchilla(points);
  const auto b = stats::fit_chinchilla(points);
  if (!(a.E == b.E && a.A == b.A && a.B == b.B && a.alpha == b.alpha && a.beta == b.beta)) {
    note("fit is not deterministic");
    pass = false;
  }
  report(4, "scaling-law fit recovers the generating curve (0.1% clean, 2% at 1% noise), "
            "deterministically", pass);
}

// ---- criterion 5: confound attenuation ---------------------------------------

void criterion_5() {
  bool pass = true;
  const auto suite = stats::synthetic::planted_confound_suite(4242, 60);
  const auto reports = stats::run_battery(suite.manifest, suite.geometry, "synthetic", 4242);
  const auto* planted = &reports.front();
  if (planted->metric_name != "R(W)" || !planted->raw_spearman || !planted->partial_spearman) {
    note("planted metric report malformed");
    pass = false;
  } else {
    note("raw rho " + std::to_string(*planted->raw_spearman) + ", partial rho " +
         std::to_string(*planted->partial_spearman));
    if (std::abs(*planted->raw_spearman) < 0.6) pass = false;
    if (std::abs(*planted->partial_spearman) > 0.15) pass = false;
  }
  report(5, "planted confound suite: |raw rho| >= 0.6 attenuates to |partial rho| <= 0.15",
         pass);
}

// ---- criterion 6: delta R^2 calibration ---------------------------------------

void criterion_6() {
  bool pass = true;
  const stats::ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};

  // perfect predictor
  {
    std::mt19937_64 rng(60);
    std::uniform_real_distribution<double> ud(0.0, 0.8);
    std::vector<stats::ScalingPoint> points;
    for (int i = 0; i < 60; ++i) {
      const double n = static_cast<double>(stats::synthetic::kParamGrid[i % 6]);
      const double d = static_cast<double>(stats::synthetic::kTokenGrid[(i / 6) % 4]);
      points.push_back({n, d, stats::predict(truth, n, d) + ud(rng)});
    }
    std::vector<double> metric(points.size());
    for (size_t i = 0; i < points.size(); ++i) metric[i] = points[i].loss;
    const stats::KfoldR2 r2 = stats::kfold_r2(points, metric, 5, 42);
    note("perfect predictor: baseline R2 " + std::to_string(r2.baseline) + ", augmented R2 " +
         std::to_string(r2.augmented));
    if (!(r2.augmented >= 0.99 && r2.augmented - r2.baseline > 0.0)) pass = false;
  }

  // pure noise over 200 seeds
  {
    std::vector<stats::ScalingPoint> points;
    std::mt19937_64 rng(61);
    std::normal_distribution<double> nd(0.0, 0.05);
    for (int i = 0; i < 60; ++i) {
      const double n = static_cast<double>(stats::synthetic::kParamGrid[i % 6]);
      const double d = static_cast<double>(stats::synthetic::kTokenGrid[(i / 6) % 4]);
      points.push_back({n, d, stats::predict(truth, n, d) + nd(rng)});
    }
    double worst = 0.0, best = 1.0;
    bool all_in_band = true;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      std::mt19937_64 mrng(1000 + seed);
      std::normal_distribution<double> mnd;
      std::vector<double> metric(points.size());
      for (double& v : metric) v = mnd(mrng);
      const double delta = stats::kfold_delta_r2(points, metric, 5, seed);
      worst = std::max(worst, std::abs(delta));
      best = std::min(best, delta);
      if (std::abs(delta) >= 0.05) all_in_band = false;
    }
    note("noise metric over 200 seeds: max |dR2| " + std::to_string(worst) + ", min dR2 " +
         std::to_string(best));
    if (!all_in_band) pass = false;
    if (!(best < 0.0)) {  // negatives must pass through unclamped
      note("expected at least one negative dR2");
      pass = false;
    }
  }
  report(6, "delta R^2: perfect predictor >= 0.99 OOF R^2, noise stays within +/-0.05, "
            "negatives unclamped", pass);
}

// ---- criterion 7: saturation detection ----------------------------------------

void criterion_7() {
  bool pass = true;
  const auto idx_of = [](const saturation::CheckpointSeries& s, long long tokens) {
    for (size_t i = 0; i < s.points.size(); ++i)
      if (s.points[i].tokens == tokens) return static_cast<int>(i);
    return -1;
  };

  {
    const auto fx = stats::synthetic::saturating_series(0);
    const auto v = saturation::assess(fx.series);
    if (!v.co_occurring || !v.loss_degradation_onset || !v.rank_collapse_onset) {
      note("saturating series: expected co-occurring onsets");
      pass = false;
    } else {
      const int loss_err = std::abs(idx_of(fx.series, *v.loss_degradation_onset) - fx.loss_ramp_index);
      const int rank_err = std::abs(idx_of(fx.series, *v.rank_collapse_onset) - fx.rank_drop_index);
      note("onset errors: loss " + std::to_string(loss_err) + " ckpts, rank " +
           std::to_string(rank_err) + " ckpts");
      if (loss_err > 2 || rank_err > 2) pass = false;
    }
  }
  {
    const auto fx = stats::synthetic::stable_series(0);
    const auto v = saturation::assess(fx.series);
    if (v.loss_degradation_onset || v.rank_collapse_onset) {
      note("stable series: expected no onsets");
      pass = false;
    }
  }
  {
    const auto fx = stats::synthetic::gradual_collapse_series(0);
    const auto v = saturation::assess(fx.series);
    if (!(v.rank_collapse_onset && !v.loss_degradation_onset && !v.co_occurring)) {
      note("gradual collapse: expected rank onset only");
      pass = false;
    }
  }
  report(7, "saturation detection: co-occurrence, quiet series, and collapse-without-degradation",
         pass);
}

// ---- criterion 8: end-to-end determinism through the CLI ----------------------

void criterion_8() {
  bool pass = true;
  const auto dir = scratch_dir();
  const auto suite_dir = dir / "e2e";
  std::filesystem::create_directories(suite_dir);

  auto suite = stats::synthetic::planted_confound_suite(12121, 12);
  ingest::save_manifest(suite.manifest, suite_dir / "manifest.json");
  cli::RunConfig stamp_cfg;
  stamp_cfg.command = "fixture";
  cli::write_geometry_dir(suite.geometry, cli::stamp_for(stamp_cfg), suite_dir / "geometry");

  const auto run = [&](const std::string& out) {
    const std::string cmd = std::string(GEOMLENS_CLI_BIN) + " analyze --manifest " +
                            (suite_dir / "manifest.json").string() + " --geometry " +
                            (suite_dir / "geometry").string() +
                            " --target synthetic --seed 777 --out " + (suite_dir / out).string() +
                            " >/dev/null 2>&1";
    return WEXITSTATUS(std::system(cmd.c_str()));
  };
  if (run("out1") != 0 || run("out2") != 0) {
    note("analyze runs did not exit 0");
    pass = false;
  } else {
    const std::string json1 = slurp(suite_dir / "out1" / "analysis_synthetic.json");
    const std::string json2 = slurp(suite_dir / "out2" / "analysis_synthetic.json");
    if (json1.empty() || json1 != json2) {
      note("JSON outputs differ between identical runs");
      pass = false;
    }
    const std::string csv = slurp(suite_dir / "out1" / "analysis_synthetic.csv");
    for (const char* needle :
         {"statistic,R(W),A(W),I(W),R(H),A(H)", "Raw Spearman", "Residual Spearman (linear)",
          "Residual Spearman (Chinchilla)", "Partial Spearman", "Predictive dR2"}) {
      if (csv.find(needle) == std::string::npos) {
        note(std::string("CSV missing '") + needle + "'");
        pass = false;
      }
    }
    if (json1.find("\"seed\": 777") == std::string::npos) {
      note("seed not recorded in JSON");
      pass = false;
    }
  }
  report(8, "analyze is byte-deterministic across runs and emits the full statistic x metric "
            "table", pass);
}

}  // namespace

int main() {
  criterion_1();
  criterion_2();
  criterion_3();
  criterion_4();
  criterion_5();
  criterion_6();
  criterion_7();
  criterion_8();

  std::error_code ec;
  std::filesystem::remove_all(scratch_dir(), ec);

  if (g_failures == 0) std::printf("all acceptance criteria passed\n");
  else std::printf("%d acceptance criteria FAILED\n", g_failures);
  return g_failures;
}
