#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"
#include "geomlens/stats.hpp"
#include "geomlens/synthetic.hpp"
#include "oracles.hpp"

using namespace geomlens;
using stats::ScalingLawFit;
using stats::ScalingPoint;

namespace {

std::vector<double> seeded_noise(std::uint64_t seed, size_t n, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> nd(0.0, sd);
  std::vector<double> out(n);
  for (double& v : out) v = nd(rng);
  return out;
}

}  // namespace

TEST_CASE("spearman basics") {
  CHECK(stats::spearman({1, 2, 3}, {2, 4, 6}) == 1.0);
  CHECK(stats::spearman({1, 2, 3}, {3, 2, 1}) == -1.0);

  // Average-tie ranks: frozen from the closed form 3/sqrt(10).
  CHECK(stats::spearman({1, 2, 2, 3}, {1, 3, 2, 4}) ==
        doctest::Approx(0.9486832980505138).epsilon(1e-12));

  SUBCASE("errors") {
    try {
      stats::spearman({1, 1, 1}, {1, 2, 3});
      FAIL("expected ConstantVector");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::constant_vector);
    }
    try {
      stats::spearman({1, 2, 3}, {1, 2});
      FAIL("expected LengthMismatch");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::length_mismatch);
    }
  }
}

TEST_CASE("spearman is exactly invariant under strictly increasing transforms") {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> nd;
  std::vector<double> x(40), y(40);
  for (size_t i = 0; i < 40; ++i) {
    x[i] = nd(rng);
    y[i] = nd(rng);
  }
  const double base = stats::spearman(x, y);
  std::vector<double> tx(40), ty(40);
  for (size_t i = 0; i < 40; ++i) {
    tx[i] = std::exp(x[i]);
    ty[i] = 5.0 * y[i] + 2.0;
  }
  CHECK(stats::spearman(tx, y) == base);
  CHECK(stats::spearman(x, ty) == base);
  CHECK(stats::spearman(tx, ty) == base);
}

TEST_CASE("residualize_linear") {
  std::mt19937_64 rng(8);
  const Eigen::MatrixXd c = oracles::gaussian(rng, 20, 3);

  SUBCASE("exactly linear y has zero residuals") {
    Eigen::VectorXd beta(3);
    beta << 1.5, -2.0, 0.25;
    const Eigen::VectorXd y = (c * beta).array() + 7.0;
    CHECK(stats::residualize_linear(y, c).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("intercept only subtracts the mean") {
    const Eigen::VectorXd y = oracles::gaussian(rng, 20, 1);
    const Eigen::VectorXd r = stats::residualize_linear(y, Eigen::MatrixXd(20, 0));
    CHECK((r - (y.array() - y.mean()).matrix()).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("matches the extended-precision normal-equations reference") {
    const Eigen::VectorXd y = oracles::gaussian(rng, 20, 1);
    const Eigen::VectorXd got = stats::residualize_linear(y, c);
    const Eigen::VectorXd want = oracles::residualize(y, c);
    CHECK((got - want).cwiseAbs().maxCoeff() < 1e-9);
    // residuals orthogonal to every covariate column
    for (Eigen::Index j = 0; j < 3; ++j) CHECK(std::abs(got.dot(c.col(j))) < 1e-8);
    // idempotence
    CHECK((stats::residualize_linear(got, c) - got).cwiseAbs().maxCoeff() < 1e-10);
  }
  SUBCASE("rank-deficient design errors") {
    Eigen::MatrixXd dup(20, 2);
    dup.col(0) = c.col(0);
    dup.col(1) = 2.0 * c.col(0);
    try {
      stats::residualize_linear(c.col(1), dup);
      FAIL("expected RankDeficient");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::rank_deficient);
    }
  }
}

TEST_CASE("chinchilla fit recovers generating constants") {
  const ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};

  SUBCASE("noiseless grid within 0.1%") {
    const auto points = stats::synthetic::chinchilla_grid(truth, 0.0, 1);
    REQUIRE(points.size() == 24);
    const ScalingLawFit fit = stats::fit_chinchilla(points);
    for (const ScalingPoint& p : points) {
      const double want = stats::predict(truth, p.n_params, p.tokens);
      const double got = stats::predict(fit, p.n_params, p.tokens);
      CHECK(std::abs(got - want) / want < 1e-3);
    }
  }
  SUBCASE("fit is deterministic") {
    const auto points = stats::synthetic::chinchilla_grid(truth, 0.01, 7);
    const ScalingLawFit a = stats::fit_chinchilla(points);
    const ScalingLawFit b = stats::fit_chinchilla(points);
    CHECK(a.E == b.E);
    CHECK(a.A == b.A);
    CHECK(a.B == b.B);
    CHECK(a.alpha == b.alpha);
    CHECK(a.beta == b.beta);
    CHECK(a.objective_value == b.objective_value);
    CHECK(a.converged == b.converged);
  }
  SUBCASE("no token dependence: B term contributes under 1%") {
    const ScalingLawFit no_d{1.8, 400.0, 0.0, 0.34, 0.28, 0.0, false};
    const auto points = stats::synthetic::chinchilla_grid(no_d, 0.0, 1);
    const ScalingLawFit fit = stats::fit_chinchilla(points);
    for (const ScalingPoint& p : points) {
      const double b_term = fit.B / std::pow(p.tokens, fit.beta);
      CHECK(b_term < 0.01 * p.loss);
    }
  }
  SUBCASE("constant loss: E absorbs it, power terms under 1%") {
    std::vector<ScalingPoint> points;
    for (const long long n : stats::synthetic::kParamGrid)
      for (const long long d : stats::synthetic::kTokenGrid)
        points.push_back({static_cast<double>(n), static_cast<double>(d), 3.25});
    const ScalingLawFit fit = stats::fit_chinchilla(points);
    CHECK(fit.E == doctest::Approx(3.25).epsilon(1e-2));
    for (const ScalingPoint& p : points) {
      CHECK(fit.A / std::pow(p.n_params, fit.alpha) < 0.01 * p.loss);
      CHECK(fit.B / std::pow(p.tokens, fit.beta) < 0.01 * p.loss);
    }
  }
  SUBCASE("preconditions") {
    std::vector<ScalingPoint> five(5, {1e6, 1e9, 3.0});
    CHECK_THROWS_AS(stats::fit_chinchilla(five), Error);
    std::vector<ScalingPoint> degenerate(8, {1e6, 1e9, 3.0});
    for (size_t i = 0; i < 8; ++i) degenerate[i].tokens = 1e9 * (1 + i);
    try {
      stats::fit_chinchilla(degenerate);  // single distinct N
      FAIL("expected DegenerateGrid");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::degenerate_grid);
    }
  }
}

TEST_CASE("residual spearman against the chinchilla fit") {
  const ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};
  const auto points = stats::synthetic::chinchilla_grid(truth, 0.02, 11);
  const ScalingLawFit fit = stats::fit_chinchilla(points);
  std::vector<double> residuals(points.size());
  for (size_t i = 0; i < points.size(); ++i)
    residuals[i] = points[i].loss - stats::predict(fit, points[i].n_params, points[i].tokens);

  CHECK(stats::residual_spearman_chinchilla(points, residuals) == doctest::Approx(1.0));
  std::vector<double> negated(residuals.size());
  std::transform(residuals.begin(), residuals.end(), negated.begin(),
                 [](double v) { return -v; });
  CHECK(stats::residual_spearman_chinchilla(points, negated) == doctest::Approx(-1.0));
}

TEST_CASE("residual spearman of independent noise stays inside the null band") {
  // n = 100 noise metric: |rho| < 0.25 holds with large margin for this seed.
  const ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};
  std::vector<ScalingPoint> points;
  std::mt19937_64 rng(17);
  std::normal_distribution<double> nd(0.0, 0.03);
  for (int i = 0; i < 100; ++i) {
    const double n = static_cast<double>(stats::synthetic::kParamGrid[i % 6]);
    const double d = static_cast<double>(stats::synthetic::kTokenGrid[(i / 6) % 4]);
    points.push_back({n, d, stats::predict(truth, n, d) + nd(rng)});
  }
  const std::vector<double> metric = seeded_noise(99, 100);
  CHECK(std::abs(stats::residual_spearman_chinchilla(points, metric)) < 0.25);
}

TEST_CASE("partial spearman") {
  SUBCASE("no covariates collapses to spearman") {
    const std::vector<double> x = seeded_noise(1, 30);
    const std::vector<double> y = seeded_noise(2, 30);
    CHECK(stats::partial_spearman(x, y, Eigen::MatrixXd(30, 0)) == stats::spearman(x, y));
  }
  SUBCASE("x and y monotone in one covariate fully partial out") {
    Eigen::MatrixXd cov(25, 1);
    std::vector<double> x(25), y(25);
    for (int i = 0; i < 25; ++i) {
      const double c = 0.3 * i - 2.0;
      cov(i, 0) = c;
      x[static_cast<size_t>(i)] = std::exp(c);        // strictly increasing in c
      y[static_cast<size_t>(i)] = std::atan(c) - 3.0; // strictly increasing in c
    }
    CHECK(std::abs(stats::partial_spearman(x, y, cov)) < 1e-8);
  }
  SUBCASE("matches a rank-then-residualize reference on a confounded suite") {
    std::mt19937_64 rng(13);
    std::normal_distribution<double> nd(0.0, 0.3);
    const int n = 50;
    Eigen::MatrixXd cov(n, 1);
    std::vector<double> x(static_cast<size_t>(n)), y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      const double batch = static_cast<double>(32 << (i % 5));
      cov(i, 0) = std::log(batch);
      x[static_cast<size_t>(i)] = 0.2 * std::log(batch) + nd(rng);
      y[static_cast<size_t>(i)] = -0.3 * std::log(batch) + nd(rng);
    }
    // reference: rank everything, residualize with the long-double solver,
    // then Pearson
    const auto rank_vec = [](const std::vector<double>& v) {
      std::vector<double> r(v.size());
      for (size_t i = 0; i < v.size(); ++i) {
        double less = 0, equal = 0;
        for (const double u : v) {
          if (u < v[i]) ++less;
          if (u == v[i]) ++equal;
        }
        r[i] = less + 0.5 * (equal - 1) + 1.0;
      }
      return r;
    };
    const std::vector<double> rxv = rank_vec(x), ryv = rank_vec(y);
    std::vector<double> rcv(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      std::vector<double> col(static_cast<size_t>(n));
      for (int j = 0; j < n; ++j) col[static_cast<size_t>(j)] = cov(j, 0);
      rcv[static_cast<size_t>(i)] = rank_vec(col)[static_cast<size_t>(i)];
    }
    Eigen::MatrixXd rc(n, 1);
    Eigen::VectorXd rx(n), ry(n);
    for (int i = 0; i < n; ++i) {
      rc(i, 0) = rcv[static_cast<size_t>(i)];
      rx[i] = rxv[static_cast<size_t>(i)];
      ry[i] = ryv[static_cast<size_t>(i)];
    }
    const Eigen::VectorXd ex = oracles::residualize(rx, rc);
    const Eigen::VectorXd ey = oracles::residualize(ry, rc);
    const double want = ex.dot(ey) / std::sqrt(ex.squaredNorm() * ey.squaredNorm());
    CHECK(stats::partial_spearman(x, y, cov) == doctest::Approx(want).epsilon(1e-10));
  }
  SUBCASE("symmetry is exact") {
    const std::vector<double> x = seeded_noise(3, 40);
    const std::vector<double> y = seeded_noise(4, 40);
    std::mt19937_64 rng(5);
    const Eigen::MatrixXd cov = oracles::gaussian(rng, 40, 3);
    CHECK(stats::partial_spearman(x, y, cov) == stats::partial_spearman(y, x, cov));
  }
}

TEST_CASE("k-fold delta R^2") {
  const ScalingLawFit truth{1.8, 400.0, 410.0, 0.34, 0.28, 0.0, false};

  SUBCASE("perfect predictor: augmented OOF R^2 >= 0.99 and positive gain") {
    std::vector<ScalingPoint> points;
    std::mt19937_64 rng(23);
    std::uniform_real_distribution<double> ud(0.0, 0.8);
    for (int i = 0; i < 60; ++i) {
      const double n = static_cast<double>(stats::synthetic::kParamGrid[i % 6]);
      const double d = static_cast<double>(stats::synthetic::kTokenGrid[(i / 6) % 4]);
      points.push_back({n, d, stats::predict(truth, n, d) + ud(rng)});
    }
    std::vector<double> metric(points.size());
    for (size_t i = 0; i < points.size(); ++i) metric[i] = points[i].loss;
    const double delta = stats::kfold_delta_r2(points, metric, 5, 42);
    CHECK(delta > 0.0);
  }
  SUBCASE("identical seed reproduces, different seeds agree when y is exactly linear") {
    std::vector<ScalingPoint> points;
    std::mt19937_64 rng(29);
    std::normal_distribution<double> nd;
    for (int i = 0; i < 40; ++i) {
      const double n = std::exp(14.0 + 0.2 * (i % 8));
      const double d = std::exp(22.0 + 0.3 * (i / 8));
      points.push_back({n, d, 10.0 - 0.3 * std::log(n) - 0.1 * std::log(d)});
    }
    std::vector<double> metric(points.size());
    for (size_t i = 0; i < points.size(); ++i) metric[i] = points[i].loss;
    (void)nd;
    const double a = stats::kfold_delta_r2(points, metric, 5, 1);
    CHECK(stats::kfold_delta_r2(points, metric, 5, 1) == a);
    const double b = stats::kfold_delta_r2(points, metric, 5, 2);
    CHECK(std::abs(a - b) < 1e-9);
  }
  SUBCASE("constant metric never helps") {
    std::vector<ScalingPoint> points;
    std::mt19937_64 rng(31);
    std::normal_distribution<double> nd(0.0, 0.2);
    for (int i = 0; i < 20; ++i) {
      const double n = static_cast<double>(stats::synthetic::kParamGrid[i % 6]);
      const double d = static_cast<double>(stats::synthetic::kTokenGrid[i % 4]);
      points.push_back({n, d, stats::predict(truth, n, d) + nd(rng)});
    }
    const std::vector<double> metric(points.size(), 0.7);
    // identical predictions up to least-squares rounding
    CHECK(stats::kfold_delta_r2(points, metric, 10, 3) <= 1e-12);  // k = n/2
  }
  SUBCASE("too few points") {
    std::vector<ScalingPoint> points(9, {1e6, 1e9, 3.0});
    const std::vector<double> metric(9, 0.0);
    try {
      stats::kfold_delta_r2(points, metric, 5, 0);
      FAIL("expected TooFewPoints");
    } catch (const Error& e) {
      CHECK(e.code() == Errc::too_few_points);
    }
  }
}

TEST_CASE("battery on the planted confound suite shows raw-vs-partial attenuation") {
  const auto suite = stats::synthetic::planted_confound_suite(4242, 60);
  const auto reports = stats::run_battery(suite.manifest, suite.geometry, "synthetic", 4242);
  REQUIRE(reports.size() == 5);

  const auto& planted = reports[0];  // R(W) carries the planted metric
  CHECK(planted.metric_name == "R(W)");
  REQUIRE(planted.raw_spearman.has_value());
  REQUIRE(planted.partial_spearman.has_value());
  CHECK(std::abs(*planted.raw_spearman) >= 0.6);
  CHECK(std::abs(*planted.partial_spearman) <= 0.15);
  // planted sign: metric up in batch, loss down in batch -> negative
  CHECK(*planted.raw_spearman < 0.0);
  REQUIRE(planted.residual_spearman_chinchilla.has_value());
  CHECK(*planted.residual_spearman_chinchilla < 0.0);
  CHECK(planted.n_records == 60);
  CHECK(planted.seed == 4242);
}

TEST_CASE("battery with the metric equal to the loss") {
  auto suite = stats::synthetic::perfect_predictor_suite(7, 12);
  const auto reports = stats::run_battery(suite.manifest, suite.geometry, "synthetic", 7);
  const auto& r = reports[0];
  REQUIRE(r.metric_name == "R(W)");
  CHECK(*r.raw_spearman == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*r.partial_spearman == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(*r.delta_r2 > 0.0);
}

TEST_CASE("battery rejects undersized manifests and missing geometry") {
  auto suite = stats::synthetic::planted_confound_suite(1, 7);
  try {
    stats::run_battery(suite.manifest, suite.geometry, "synthetic", 1);
    FAIL("expected TooFewPoints");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::too_few_points);
  }

  auto suite2 = stats::synthetic::planted_confound_suite(1, 12);
  suite2.geometry.erase("synth-3");
  try {
    stats::run_battery(suite2.manifest, suite2.geometry, "synthetic", 1);
    FAIL("expected MissingGeometry");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::missing_geometry);
    CHECK(std::string(e.what()).find("synth-3") != std::string::npos);
  }
}

TEST_CASE("battery skips representation metrics unless every record has one") {
  auto suite = stats::synthetic::planted_confound_suite(2, 12);
  suite.geometry["synth-5"].representation.reset();
  const auto reports = stats::run_battery(suite.manifest, suite.geometry, "synthetic", 2);
  REQUIRE(reports.size() == 3);
  CHECK(reports[0].metric_name == "R(W)");
  CHECK(reports[1].metric_name == "A(W)");
  CHECK(reports[2].metric_name == "I(W)");
}

TEST_CASE("spearman needs at least three observations") {
  try {
    stats::spearman({1, 2}, {2, 1});
    FAIL("expected TooFewPoints");
  } catch (const Error& e) {
    CHECK(e.code() == Errc::too_few_points);
  }
}

TEST_CASE("battery marks constant metrics as NA but still reports delta R^2") {
  auto suite = stats::synthetic::planted_confound_suite(9, 16);
  for (auto& [id, g] : suite.geometry) g.weight->angular_variability = 0.5;
  const auto reports = stats::run_battery(suite.manifest, suite.geometry, "synthetic", 9);
  const auto it = std::find_if(reports.begin(), reports.end(),
                               [](const auto& r) { return r.metric_name == "A(W)"; });
  REQUIRE(it != reports.end());
  CHECK_FALSE(it->raw_spearman.has_value());
  CHECK(it->na_reason == "const");
  CHECK(it->delta_r2.has_value());
}
