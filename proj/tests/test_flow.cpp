#include <doctest.h>

#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/flow/flow.hpp"
#include "amortlab/nn/grad_check.hpp"
#include "amortlab/nn/params.hpp"
#include "helpers.hpp"

using namespace amortlab;

namespace {

FlowArch small_arch() {
  FlowArch a;
  a.d_ctx = 4;
  a.encoder_hidden = {8};
  a.encoder_latent = 6;
  a.decoder_hidden = {8};
  a.velocity_hidden = {16, 16};
  return a;
}

// Replaces the velocity net by one affine layer v = W [t, z, r] + b.
void make_affine(FlowModel& m, const nn::RowMatrix& w, const Eigen::Vector2d& b) {
  m.velocity_net = nn::Mlp({nn::DenseLayer{w, b, nn::Activation::Identity}});
}

std::vector<Task> ring_tasks(int n, int n_obs, std::uint64_t seed) {
  std::vector<Task> v;
  for (int i = 0; i < n; ++i) v.push_back(gen_ring_task(RingPriorSpec{}, n_obs, derive_seed(seed, "t", i)));
  return v;
}

double linear_error(int steps) {
  const VectorField f = [](double, const Eigen::MatrixXd& z) { return z; };
  Eigen::MatrixXd z0(1, 2);
  z0 << 1.0, -0.5;
  const Eigen::MatrixXd z1 = integrate_ode(f, z0, OdeConfig{steps, OdeScheme::RK4});
  return (z1 - std::exp(1.0) * z0).norm();
}

}  // namespace

TEST_CASE("flow-matching loss for hand-set fields") {
  FlowModel m = FlowModel::create(small_arch(), 1);
  const Eigen::Index in = 3 + m.d_ctx();
  const auto tasks = ring_tasks(2, 3, 2);

  Eigen::MatrixXd z0(2, 2), z1(2, 2);
  z0 << 0, 0, 1, 1;
  z1 << 2, 0, 1, 3;

  // Perfect field: every item has z1 - z0 = c, matched by a constant output.
  Eigen::MatrixXd z1c = z0.rowwise() + Eigen::RowVector2d(0.5, -1.0);
  make_affine(m, nn::RowMatrix::Zero(2, in), Eigen::Vector2d(0.5, -1.0));
  CHECK(cfm_loss(m, FlowBatch::make(z0, z1c, Eigen::Vector2d(0.3, 0.9)), tasks) == 0.0);

  make_affine(m, nn::RowMatrix::Zero(2, in), Eigen::Vector2d::Zero());
  CHECK(cfm_loss(m, FlowBatch::make(z0, z1, Eigen::Vector2d(0.5, 0.25)), tasks) == doctest::Approx((4.0 + 4.0) / 2));

  // v = z_t: item 1 has z_t = (1, 0) vs target (2, 0); item 2 has z_t = (1, 1.5) vs (0, 2).
  nn::RowMatrix w = nn::RowMatrix::Zero(2, in);
  w(0, 1) = 1.0;
  w(1, 2) = 1.0;
  make_affine(m, w, Eigen::Vector2d::Zero());
  CHECK(cfm_loss(m, FlowBatch::make(z0, z1, Eigen::Vector2d(0.5, 0.25)), tasks) == doctest::Approx((1.0 + 1.25) / 2));
}

TEST_CASE("flow batch interpolates on the segment") {
  Eigen::MatrixXd z0 = Eigen::MatrixXd::Random(5, 2), z1 = Eigen::MatrixXd::Random(5, 2);
  const Eigen::VectorXd t = (Eigen::VectorXd::Random(5).array() + 1.0) / 2.0;
  const FlowBatch b = FlowBatch::make(z0, z1, t);
  for (Eigen::Index i = 0; i < 5; ++i)
    CHECK((b.zt.row(i) - ((1 - t(i)) * z0.row(i) + t(i) * z1.row(i))).norm() < 1e-15);
  CHECK_THROWS_AS(FlowBatch::make(z0, z1, Eigen::VectorXd::Constant(5, 1.5)), ValidationError);
}

TEST_CASE("flow-matching gradient matches finite differences") {
  FlowModel m = FlowModel::create(small_arch(), 3);
  m.context_encoder.scaling.shift = Eigen::RowVector3d(0.1, -0.2, 0.3);
  m.context_encoder.scaling.scale = Eigen::RowVector3d(1.2, 0.8, 0.5);
  // Zero-initialized biases put the empty context exactly on a ReLU kink; move off it.
  Eigen::VectorXd theta = nn::flatten(m);
  theta += 0.05 * Eigen::VectorXd::Random(theta.size());
  nn::unflatten_into(m, theta);
  auto tasks = ring_tasks(4, 3, 4);
  tasks[2] = gen_ring_task(RingPriorSpec{}, 0, 5);  // an empty context in the batch
  Rng rng(6);
  Eigen::MatrixXd z0 = standard_normal(rng, 4, 2), z1(4, 2);
  for (int i = 0; i < 4; ++i) z1.row(i) = tasks[i].beta_true.transpose();
  const FlowBatch batch = FlowBatch::make(z0, z1, Eigen::Vector4d(0.1, 0.4, 0.6, 0.95));
  Eigen::VectorXd g = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(m.parameter_count()), 7.0);
  cfm_loss(m, batch, tasks, nn::as_span(g));  // overwrites, so the 7s must vanish
  const std::function<double(const FlowModel&)> f = [&](const FlowModel& mm) { return cfm_loss(mm, batch, tasks); };
  CHECK(nn::grad_check(m, f, g, 1e-4, 1e-5, 1e-4).max_relative_error < 1e-5);
}

TEST_CASE("ODE integration of trivial fields") {
  Eigen::MatrixXd z0(3, 2);
  z0 << 1, 2, -3, 0.5, 0, 0;
  for (auto scheme : {OdeScheme::Euler, OdeScheme::RK4}) {
    const OdeConfig ode{50, scheme};
    const VectorField zero = [](double, const Eigen::MatrixXd& z) { return Eigen::MatrixXd::Zero(z.rows(), 2); };
    CHECK(integrate_ode(zero, z0, ode) == z0);
    const VectorField constant = [](double, const Eigen::MatrixXd& z) {
      return Eigen::MatrixXd(Eigen::RowVector2d(0.75, -2.0).replicate(z.rows(), 1));
    };
    const Eigen::MatrixXd out = integrate_ode(constant, z0, ode);
    CHECK((out - (z0.rowwise() + Eigen::RowVector2d(0.75, -2.0))).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("RK4 on the linear field") {
  CHECK(linear_error(50) / std::exp(1.0) / std::sqrt(1.25) < 1e-6);
  for (int n : {10, 20, 40}) {
    const double ratio = linear_error(n) / linear_error(2 * n);
    CAPTURE(n);
    CHECK(ratio >= 12.0);
    CHECK(ratio <= 20.0);
  }
}

TEST_CASE("non-finite states raise NumericError with the step") {
  const VectorField blowup = [](double t, const Eigen::MatrixXd& z) {
    return Eigen::MatrixXd(z.array() * (t > 0.5 ? std::numeric_limits<double>::infinity() : 1.0));
  };
  try {
    integrate_ode(blowup, Eigen::MatrixXd::Ones(1, 2), OdeConfig{10, OdeScheme::Euler});
    FAIL("expected NumericError");
  } catch (const NumericError& e) {
    CHECK(e.where() >= 5);
    CHECK(e.where() <= 7);
  }
  CHECK_THROWS_AS((OdeConfig{0, OdeScheme::RK4}).validate(), ValidationError);
}

TEST_CASE("sampling is deterministic and handles zero draws") {
  const FlowModel m = FlowModel::create(small_arch(), 7);
  const Task t = gen_ring_task(RingPriorSpec{}, 4, 8);
  const Eigen::MatrixXd none = sample_posterior(m, t, 0, OdeConfig{}, 9);
  CHECK(none.rows() == 0);
  CHECK(none.cols() == 2);
  const Eigen::MatrixXd a = sample_posterior(m, t, 64, OdeConfig{}, 10);
  CHECK(a == sample_posterior(m, t, 64, OdeConfig{}, 10));
  CHECK(a != sample_posterior(m, t, 64, OdeConfig{}, 11));
  const Eigen::Vector2d z0(0.3, -1.1);
  const Eigen::Vector2d one = integrate_flow(m, t, z0);
  Eigen::MatrixXd z(1, 2);
  z.row(0) = z0.transpose();
  CHECK((integrate_ode(conditioned_field(m, t), z, OdeConfig{}).row(0).transpose() - one).norm() < 1e-14);
}

TEST_CASE("context and samples ignore row order") {
  const FlowModel m = FlowModel::create(small_arch(), 12);
  const Task t = gen_ring_task(RingPriorSpec{}, 9, 13);
  const Task u = permute_rows(t, testutil::shuffled(9, 14));
  CHECK((m.context(t) - m.context(u)).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((sample_posterior(m, t, 32, OdeConfig{}, 15) - sample_posterior(m, u, 32, OdeConfig{}, 15)).cwiseAbs().maxCoeff() < 1e-9);
}

TEST_CASE("empty task context is the decoder at zero") {
  const FlowModel m = FlowModel::create(small_arch(), 16);
  const Task empty = gen_ring_task(RingPriorSpec{}, 0, 17);
  const Eigen::VectorXd expect = m.context_encoder.scaling.out_scale *
                                 m.context_encoder.decoder.forward(Eigen::VectorXd::Zero(6));
  CHECK((m.context(empty) - expect).norm() < 1e-15);
}

TEST_CASE("trajectory snapshots start at the base draws and end at the samples") {
  const FlowModel m = FlowModel::create(small_arch(), 18);
  const Task t = gen_ring_task(RingPriorSpec{}, 4, 19);
  const std::vector<double> times{0.0, 0.25, 0.5, 0.75, 1.0};
  const auto traj = flow_trajectory(m, t, 20, times, OdeConfig{}, 20);
  REQUIRE(traj.size() == 5);
  const Eigen::MatrixXd samples = sample_posterior(m, t, 20, OdeConfig{}, 20);
  CHECK((traj.back() - samples).cwiseAbs().maxCoeff() < 1e-9);  // step times round differently
  const std::vector<double> bad{0.5, 0.25};
  CHECK_THROWS_AS(flow_trajectory(m, t, 5, bad, OdeConfig{}, 1), ValidationError);
}

TEST_CASE("flow training") {
  FlowModel m = FlowModel::create(small_arch(), 21);
  const Eigen::VectorXd before = nn::flatten(m);
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(train_flow(m, RingPriorSpec{}, 64, cfg).empty());
  CHECK(nn::flatten(m) == before);

  cfg.epochs = 8;
  cfg.batch_tasks = 32;
  cfg.learning_rate = 3e-3;
  cfg.checkpoints = {1, 8};
  cfg.seed = 22;
  const auto trace = train_flow(m, RingPriorSpec{}, 256, cfg);
  REQUIRE(trace.size() == 2);
  CHECK(trace[1].train_loss < trace[0].train_loss);
  CHECK(trace[1].heldout_mse < trace[0].heldout_mse);

  FlowModel again = FlowModel::create(small_arch(), 21);
  train_flow(again, RingPriorSpec{}, 256, cfg);
  CHECK(nn::flatten(again) == nn::flatten(m));
}

TEST_CASE("flow checkpoint round trip") {
  testutil::TempDir dir("flow_ckpt");
  const FlowModel m = FlowModel::create(small_arch(), 23);
  m.save(dir.path / "f.ckpt");
  const FlowModel back = FlowModel::load(dir.path / "f.ckpt");
  CHECK(nn::flatten(back) == nn::flatten(m));
  const Task t = gen_ring_task(RingPriorSpec{}, 3, 24);
  CHECK(sample_posterior(back, t, 8, OdeConfig{}, 25) == sample_posterior(m, t, 8, OdeConfig{}, 25));
}
