#include <doctest.h>

#include <Eigen/Cholesky>
#include <Eigen/SVD>

#include "amortlab/baselines/baselines.hpp"
#include "amortlab/error.hpp"
#include "amortlab/eval/metrics.hpp"
#include "amortlab/io.hpp"
#include "helpers.hpp"
#include "oracles.hpp"

using namespace amortlab;

namespace {

Eigen::VectorXd pinv_solve(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd s = svd.singularValues();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (s(i) > 1e-12 * s(0)) inv(i) = 1.0 / s(i);
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y;
}

// Batch-means Monte Carlo standard error of a chain's mean.
double batch_se(const Eigen::VectorXd& v, int batches = 50) {
  const Eigen::Index len = v.size() / batches;
  Eigen::VectorXd means(batches);
  for (int b = 0; b < batches; ++b) means(b) = v.segment(b * len, len).mean();
  const double m = means.mean();
  return std::sqrt((means.array() - m).square().sum() / (batches - 1) / batches);
}

}  // namespace

TEST_CASE("OLS recovers coefficients of a square noiseless task") {
  Task t = testutil::random_task(20, 20, 1);
  t.outputs = t.inputs * t.beta_true;
  CHECK((ols_fit(t) - t.beta_true).cwiseAbs().maxCoeff() < 1e-8);
}

TEST_CASE("underdetermined OLS is the minimum-norm interpolant") {
  const Task t = testutil::random_task(10, 20, 2);
  const Eigen::VectorXd b = ols_fit(t);
  CHECK((t.inputs * b - t.outputs).norm() < 1e-8);
  CHECK((b - pinv_solve(t.inputs, t.outputs)).norm() < 1e-8);
  // Adding any null-space direction only increases the norm.
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(t.inputs, Eigen::ComputeFullV);
  const Eigen::VectorXd null_dir = svd.matrixV().col(15);
  CHECK((t.inputs * null_dir).norm() < 1e-10);
  CHECK((b + 0.1 * null_dir).norm() > b.norm());
}

TEST_CASE("OLS residual is orthogonal to the column space") {
  for (int n : {25, 40}) {
    const Task t = testutil::random_task(n, 20, 3 + n);
    const Eigen::VectorXd r = t.outputs - t.inputs * ols_fit(t);
    CHECK((t.inputs.transpose() * r).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("clustered oracle: single centroid") {
  const auto spec = make_clustered_prior(5, 1, 3.0, 1.0, 5, 10, 4);
  const Task t = testutil::random_task(7, 5, 5);
  CHECK(bayes_posterior_mean_clustered(t, spec) == spec.centroids.row(0).transpose());
}

TEST_CASE("clustered oracle: tied residuals average the centroids") {
  ClusteredPriorSpec spec = make_clustered_prior(2, 2, 1.0, 1.0, 2, 2, 6);
  spec.centroids << 1, 5, 1, -5;
  Task t;
  t.inputs = Eigen::MatrixXd(2, 2);
  t.inputs << 1, 0, 2, 0;  // second coefficient is invisible to the data
  t.outputs = Eigen::Vector2d(0.7, 2.5);
  t.beta_true = Eigen::Vector2d(1, 5);
  const Eigen::VectorXd w = bayes_weights_clustered(t, spec);
  CHECK(std::abs(w(0) - 0.5) < 1e-15);
  CHECK((bayes_posterior_mean_clustered(t, spec) - Eigen::Vector2d(1, 0)).norm() < 1e-15);
}

TEST_CASE("clustered oracle matches brute-force enumeration") {
  const auto spec = make_clustered_prior(20, 5, 3.0, 1.0, 30, 30, 7);
  const MetaDataset m = gen_clustered_meta(spec, 200, 8);
  for (const Task& t : m.tasks) {
    const Eigen::VectorXd w = bayes_weights_clustered(t, spec);
    CHECK(std::abs(w.sum() - 1.0) < 1e-12);
    // Brute force in long double; exponents are within range after subtracting the best.
    std::vector<long double> ll(5);
    long double best = -1e300L;
    for (int k = 0; k < 5; ++k) {
      const Eigen::VectorXd r = t.outputs - t.inputs * spec.centroids.row(k).transpose();
      ll[k] = -static_cast<long double>(r.squaredNorm()) / 2.0L;
      best = std::max(best, ll[k]);
    }
    long double z = 0;
    for (auto v : ll) z += std::exp(v - best);
    int truth = 0;
    for (int k = 0; k < 5; ++k) {
      CHECK(std::abs(static_cast<double>(std::exp(ll[k] - best) / z) - w(k)) < 1e-12);
      if (spec.centroids.row(k).transpose() == t.beta_true) truth = k;
    }
    CHECK(w(truth) > 0.999);
  }
}

TEST_CASE("log-sum-exp is shift invariant and overflow safe") {
  Eigen::Vector3d v(1000.0, 1001.0, 999.0);
  const double a = log_sum_exp(v);
  CHECK(std::isfinite(a));
  CHECK(log_sum_exp(v.array() - 1000.0) + 1000.0 == doctest::Approx(a).epsilon(1e-15));
  CHECK(log_sum_exp(Eigen::Vector2d(0, 0)) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("ring posterior without data is the prior, bit for bit") {
  const RingPriorSpec spec;
  Task t = gen_ring_task(spec, 0, 9);
  const GaussianMixture post = exact_ring_posterior(t, spec);
  const GaussianMixture prior = ring_prior(spec);
  CHECK(post.weights == prior.weights);
  for (std::size_t k = 0; k < 8; ++k) {
    CHECK(post.means[k] == prior.means[k]);
    CHECK(post.covariances[k] == prior.covariances[k]);
    CHECK(prior.weights(k) == 0.125);
    CHECK(prior.covariances[k] == spec.component_sd * spec.component_sd * Eigen::Matrix2d::Identity());
  }
}

TEST_CASE("ring posterior matches grid quadrature") {
  const RingPriorSpec spec;
  for (int i = 0; i < 4; ++i) {
    const Task t = gen_ring_task(spec, i == 0 ? 1 : 4 * i, derive_seed(10, "ring", i));
    const GaussianMixture mix = exact_ring_posterior(t, spec);
    CHECK_NOTHROW(mix.validate());
    CHECK(oracle::ring_grid_tv(t, spec, mix) < 1e-4);
  }
}

TEST_CASE("ring posterior: mirrored modes get equal weight") {
  const RingPriorSpec spec;
  Task t;
  t.inputs = Eigen::MatrixXd(3, 2);
  t.inputs << 1, 0, -0.5, 0, 2, 0;  // only beta_1 is observed
  t.outputs = Eigen::Vector3d(3.0, -1.0, 7.5);
  t.beta_true = Eigen::Vector2d(3.5, 3.5);
  const GaussianMixture mix = exact_ring_posterior(t, spec);
  CHECK(std::abs(mix.weights(1) - mix.weights(7)) < 1e-10);  // 45 and -45 degrees
  CHECK(std::abs(mix.weights(3) - mix.weights(5)) < 1e-10);
}

TEST_CASE("posterior covariances are symmetric positive definite") {
  const RingPriorSpec spec;
  for (int i = 0; i < 20; ++i) {
    const GaussianMixture mix = exact_ring_posterior(gen_ring_task(spec, i, derive_seed(11, "t", i)), spec);
    for (const auto& c : mix.covariances) {
      CHECK(c(0, 1) == c(1, 0));
      CHECK(c.llt().info() == Eigen::Success);
    }
  }
}

TEST_CASE("mixture text round trip") {
  testutil::TempDir dir("mix");
  const RingPriorSpec spec;
  const GaussianMixture mix = exact_ring_posterior(gen_ring_task(spec, 5, 12), spec);
  const GaussianMixture back = GaussianMixture::from_text(mix.to_text());
  CHECK(back.weights == mix.weights);
  for (std::size_t k = 0; k < mix.size(); ++k) {
    CHECK(back.means[k] == mix.means[k]);
    CHECK(back.covariances[k] == mix.covariances[k]);
  }
  mix.save(dir.path / "m.txt");
  CHECK(GaussianMixture::from_text(io::read_file(dir.path / "m.txt")).weights == mix.weights);
}

TEST_CASE("mixture sampling") {
  GaussianMixture one;
  one.weights = Eigen::VectorXd::Ones(1);
  one.means = {Eigen::Vector2d(1.0, -2.0)};
  Eigen::Matrix2d c;
  c << 2.0, 0.5, 0.5, 1.0;
  one.covariances = {c};
  const Eigen::MatrixXd s = sample_mixture(one, 20000, 13);
  const Eigen::Vector2d mean = s.colwise().mean();
  CHECK(std::abs(mean(0) - 1.0) < 3 * std::sqrt(2.0 / 20000));
  CHECK(std::abs(mean(1) + 2.0) < 3 * std::sqrt(1.0 / 20000));
  CHECK(sample_mixture(one, 100, 14) == sample_mixture(one, 100, 14));

  GaussianMixture two;
  two.weights = Eigen::Vector2d(1.0, 0.0);
  two.means = {Eigen::Vector2d(-10, 0), Eigen::Vector2d(10, 0)};
  two.covariances = {Eigen::Matrix2d::Identity(), Eigen::Matrix2d::Identity()};
  const Eigen::MatrixXd t = sample_mixture(two, 1000, 15);
  CHECK((t.col(0).array() < 0).all());

  const Eigen::VectorXd share = mode_coverage(sample_mixture(ring_prior(RingPriorSpec{}), 100000, 16), ring_prior(RingPriorSpec{}));
  for (Eigen::Index k = 0; k < 8; ++k) CHECK(std::abs(share(k) - 0.125) < 0.01);
}

TEST_CASE("Metropolis with zero proposal never moves") {
  McmcConfig cfg;
  cfg.n_steps = 500;
  cfg.burn_in = 100;
  cfg.proposal_sd = 0.0;
  cfg.init = Eigen::Vector2d(0.3, -0.2);
  const auto r = rw_metropolis([](const Eigen::Vector2d& b) { return -0.5 * b.squaredNorm(); }, cfg);
  CHECK(r.acceptance_rate == 1.0);
  CHECK(r.samples.rows() == 400);
  for (Eigen::Index i = 0; i < r.samples.rows(); ++i) CHECK(r.samples.row(i) == cfg.init.transpose());
}

TEST_CASE("Metropolis recovers a standard Gaussian") {
  McmcConfig cfg;
  cfg.n_steps = 50000;
  cfg.burn_in = 1000;
  cfg.proposal_sd = 1.0;
  cfg.seed = 17;
  const auto r = rw_metropolis([](const Eigen::Vector2d& b) { return -0.5 * b.squaredNorm(); }, cfg);
  const Eigen::Vector2d mean = r.samples.colwise().mean();
  CHECK(mean.cwiseAbs().maxCoeff() < 0.05);
  for (int j = 0; j < 2; ++j) {
    const double sd = std::sqrt((r.samples.col(j).array() - mean(j)).square().mean());
    CHECK(std::abs(sd - 1.0) < 0.05);
  }
}

TEST_CASE("Metropolis on an informative ring posterior") {
  const RingPriorSpec spec;
  const Task t = gen_ring_task(spec, 20, 18);
  const GaussianMixture mix = exact_ring_posterior(t, spec);
  Eigen::Index dom;
  mix.weights.maxCoeff(&dom);
  McmcConfig cfg;
  cfg.seed = 19;
  cfg.proposal_sd = 0.3;
  cfg.init = mix.means[dom];
  const auto r = rw_metropolis(ring_log_posterior(t, spec), cfg);
  for (int j = 0; j < 2; ++j) {
    const Eigen::VectorXd col = r.samples.col(j);
    CHECK(std::abs(col.mean() - mix.means[dom](j)) < 3 * batch_se(col));
  }
}

TEST_CASE("Metropolis balances flow between half-planes") {
  McmcConfig cfg;
  cfg.n_steps = 200000;
  cfg.burn_in = 0;
  cfg.proposal_sd = 1.5;
  cfg.seed = 20;
  // Two-bump target symmetric in the first coordinate.
  const auto target = [](const Eigen::Vector2d& b) {
    return log_sum_exp(Eigen::Vector2d(-0.5 * ((b - Eigen::Vector2d(1.5, 0)).squaredNorm()),
                                       -0.5 * ((b + Eigen::Vector2d(1.5, 0)).squaredNorm())));
  };
  const auto r = rw_metropolis(target, cfg);
  long up = 0, down = 0;
  for (Eigen::Index i = 1; i < r.samples.rows(); ++i) {
    const bool a = r.samples(i - 1, 0) > 0, b = r.samples(i, 0) > 0;
    up += (!a && b);
    down += (a && !b);
  }
  CHECK(up + down > 1000);
  CHECK(std::abs(up - down) <= 1);  // crossings alternate
  const double pos = (r.samples.col(0).array() > 0).cast<double>().mean();
  CHECK(std::abs(pos - 0.5) < 0.02);
}

TEST_CASE("Metropolis rejects a non-finite start") {
  McmcConfig cfg;
  CHECK_THROWS_AS(rw_metropolis([](const Eigen::Vector2d&) { return -INFINITY; }, cfg), ValidationError);
  cfg.burn_in = cfg.n_steps;
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}
