#include <doctest.h>

#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/estimators/attention.hpp"
#include "amortlab/estimators/deep_sets.hpp"
#include "amortlab/estimators/estimator.hpp"
#include "amortlab/estimators/set_transformer.hpp"
#include "amortlab/nn/grad_check.hpp"
#include "amortlab/nn/params.hpp"
#include "helpers.hpp"

using namespace amortlab;

namespace {

DeepSetsArch small_ds(PoolKind pool) {
  DeepSetsArch a;
  a.p = 3;
  a.encoder_hidden = {8, 8};
  a.latent = 6;
  a.decoder_hidden = {8};
  a.pool = pool;
  return a;
}

SetTransformerArch small_st(bool sparse) {
  SetTransformerArch a;
  a.p = 3;
  a.d_model = 8;
  a.n_heads = 2;
  a.n_blocks = 2;
  a.ffn_width = 8;
  a.embed_hidden = {8};
  a.head_hidden = {8};
  a.sparse = sparse;
  return a;
}

// Non-trivial scaling so the standardization and output factor are exercised.
TokenScaling some_scaling(Eigen::Index p) {
  TokenScaling s = TokenScaling::identity(p + 1);
  for (Eigen::Index j = 0; j <= p; ++j) {
    s.shift(j) = 0.1 * static_cast<double>(j);
    s.scale(j) = 1.0 + 0.2 * static_cast<double>(j);
  }
  s.out_scale = 1.7;
  s.set_size = 4.5;
  return s;
}

template <class Model>
double model_grad_error(Model m, const Task& task, LossKind loss) {
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.parameter_count()));
  m.loss_and_grad(task, loss, nn::as_span(g));
  const std::function<double(const Model&)> f = [&](const Model& mm) {
    Eigen::VectorXd scratch = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(mm.parameter_count()));
    return mm.loss_and_grad(task, loss, nn::as_span(scratch));
  };
  return nn::grad_check(m, f, g, 1e-4).max_relative_error;
}

Task shuffled_task(const Task& t, std::uint64_t seed) {
  const auto order = testutil::shuffled(t.n_obs(), seed);
  return permute_rows(t, order);
}

}  // namespace

TEST_CASE("deep sets gradients match finite differences") {
  const Task task = testutil::random_task(5, 3, 1);
  for (PoolKind pool : {PoolKind::Sum, PoolKind::Mean}) {
    for (LossKind loss : {LossKind::ParamMSE, LossKind::PredictiveMSE}) {
      Rng rng(2);
      DeepSetsModel m = DeepSetsModel::create(small_ds(pool), rng);
      m.scaling = some_scaling(3);
      CHECK(model_grad_error(m, task, loss) < 1e-4);
    }
  }
}

TEST_CASE("set transformer gradients match finite differences") {
  const Task task = testutil::random_task(5, 3, 3);
  for (bool sparse : {false, true}) {
    for (LossKind loss : {LossKind::ParamMSE, LossKind::PredictiveMSE}) {
      CAPTURE(sparse);
      Rng rng(4);
      SetTransformerModel m = SetTransformerModel::create(small_st(sparse), rng);
      m.scaling = some_scaling(3);
      CHECK(model_grad_error(m, task, loss) < 1e-4);
    }
  }
}

TEST_CASE("attention block gradients w.r.t. parameters and tokens") {
  Rng rng(5);
  AttentionBlock b = AttentionBlock::create(6, 3, 10, rng);
  b.norm1_scale = Eigen::RowVectorXd::Random(6).array() + 1.5;
  b.norm2_shift = Eigen::RowVectorXd::Random(6);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(4, 6);
  const Eigen::MatrixXd r = Eigen::MatrixXd::Random(4, 6);
  AttentionBlock::Tape tape;
  b.forward(x, tape);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(b.parameter_count()));
  const Eigen::MatrixXd dx = b.backward(tape, r, nn::as_span(g));
  const std::function<double(const AttentionBlock&)> f = [&](const AttentionBlock& bb) {
    return (bb.forward(x).array() * r.array()).sum();
  };
  CHECK(nn::grad_check(b, f, g, 1e-4).max_relative_error < 1e-4);

  double worst = 0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd up = x, down = x;
    up.data()[i] += 1e-5;
    down.data()[i] -= 1e-5;
    const double num = ((b.forward(up).array() - b.forward(down).array()) * r.array()).sum() / 2e-5;
    worst = std::max(worst, std::abs(num - dx.data()[i]) / std::max({std::abs(num), std::abs(dx.data()[i]), 1e-6}));
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("softmax rows match a hand computation") {
  Eigen::MatrixXd s(3, 3);
  s << 1, 2, 3, 0, 0, 0, -1, 0, 1;
  const Eigen::MatrixXd a = softmax_rows(s);
  // e^{-2}, e^{-1}, 1 normalized
  CHECK(a(0, 0) == doctest::Approx(0.09003057317038046).epsilon(1e-14));
  CHECK(a(0, 1) == doctest::Approx(0.24472847105479764).epsilon(1e-14));
  CHECK(a(0, 2) == doctest::Approx(0.66524095577481770).epsilon(1e-14));
  for (int j = 0; j < 3; ++j) CHECK(a(1, j) == doctest::Approx(1.0 / 3).epsilon(1e-15));
  CHECK(a(2, 0) == doctest::Approx(a(0, 0)).epsilon(1e-14));
  for (int i = 0; i < 3; ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);

  Eigen::MatrixXd bad = s;
  bad(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(softmax_rows(bad), NumericError);
}

TEST_CASE("attention scores follow the scaled dot product") {
  Rng rng(6);
  AttentionBlock b = AttentionBlock::create(2, 1, 4, rng);
  b.query_proj.setIdentity();
  b.key_proj.setIdentity();
  Eigen::MatrixXd x(3, 2);
  x << 1, 0, 0, 1, 1, 1;
  const auto a = attention_weights(b, x);
  REQUIRE(a.size() == 1);
  const Eigen::MatrixXd expect = softmax_rows(x * x.transpose() / std::sqrt(2.0));
  CHECK((a[0] - expect).cwiseAbs().maxCoeff() < 1e-15);
}

TEST_CASE("singleton and identical tokens") {
  Rng rng(7);
  const AttentionBlock b = AttentionBlock::create(8, 2, 16, rng);
  AttentionBlock::Tape tape;
  b.forward(Eigen::MatrixXd::Random(1, 8), tape);
  for (const auto& a : tape.attention) CHECK(a(0, 0) == 1.0);
  CHECK(tape.mixed == tape.v);

  const Eigen::MatrixXd same = Eigen::RowVectorXd::Random(8).replicate(5, 1);
  for (const auto& a : attention_weights(b, same))
    for (Eigen::Index i = 0; i < 5; ++i)
      for (Eigen::Index j = 0; j < 5; ++j) CHECK(a(i, j) == doctest::Approx(0.2).epsilon(1e-14));
}

TEST_CASE("attention rows sum to one and blocks are permutation-equivariant") {
  Rng rng(8);
  const AttentionBlock b = AttentionBlock::create(8, 4, 16, rng);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(7, 8);
  for (const auto& a : attention_weights(b, x))
    for (Eigen::Index i = 0; i < a.rows(); ++i) CHECK(std::abs(a.row(i).sum() - 1.0) < 1e-12);
  const auto order = testutil::shuffled(7, 9);
  Eigen::MatrixXd xp(7, 8);
  for (int i = 0; i < 7; ++i) xp.row(i) = x.row(order[i]);
  const Eigen::MatrixXd y = b.forward(x);
  const Eigen::MatrixXd yp = b.forward(xp);
  for (int i = 0; i < 7; ++i) CHECK((yp.row(i) - y.row(order[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("estimators are invariant to row order") {
  Rng rng(10);
  const DeepSetsModel ds = DeepSetsModel::create(small_ds(PoolKind::Sum), rng);
  const SetTransformerModel st = SetTransformerModel::create(small_st(false), rng);
  const SetTransformerModel sp = SetTransformerModel::create(small_st(true), rng);
  for (int i = 0; i < 20; ++i) {
    const Task t = testutil::random_task(3 + i, 3, 100 + i);
    const Task u = shuffled_task(t, 200 + i);
    CHECK((deepsets_forward(ds, t) - deepsets_forward(ds, u)).cwiseAbs().maxCoeff() < 1e-9);
    CHECK((settransformer_forward(st, t) - settransformer_forward(st, u)).cwiseAbs().maxCoeff() < 1e-9);
    const auto a = settransformer_sparse_forward(sp, t);
    const auto c = settransformer_sparse_forward(sp, u);
    CHECK((a.beta_hard - c.beta_hard).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("empty tasks are rejected") {
  Rng rng(11);
  const DeepSetsModel ds = DeepSetsModel::create(small_ds(PoolKind::Sum), rng);
  Task empty;
  empty.inputs.resize(0, 3);
  empty.outputs.resize(0);
  empty.beta_true = Eigen::VectorXd::Zero(3);
  CHECK_THROWS_AS(deepsets_forward(ds, empty), ValidationError);
  const SetTransformerModel st = SetTransformerModel::create(small_st(false), rng);
  CHECK_THROWS_AS(settransformer_forward(st, empty), ValidationError);
  CHECK_THROWS_AS(deepsets_forward(ds, testutil::random_task(4, 5, 1)), DimensionError);
}

TEST_CASE("zero encoder gives the constant decoder output") {
  Rng rng(12);
  DeepSetsModel ds = DeepSetsModel::create(small_ds(PoolKind::Sum), rng);
  for (auto& l : ds.encoder.layers()) {
    l.weights.setZero();
    l.bias.setZero();
  }
  const Eigen::VectorXd expect = ds.scaling.out_scale * ds.decoder.forward(Eigen::VectorXd::Zero(6));
  for (int i = 0; i < 5; ++i) CHECK(deepsets_forward(ds, testutil::random_task(4 + i, 3, 300 + i)) == expect);
}

TEST_CASE("sum pooling sees set size, mean pooling does not") {
  const Task t = testutil::random_task(6, 3, 13);
  Task twice = t;
  twice.inputs = Eigen::MatrixXd(12, 3);
  twice.inputs << t.inputs, t.inputs;
  twice.outputs = Eigen::VectorXd(12);
  twice.outputs << t.outputs, t.outputs;
  Rng rng_a(14), rng_b(14);
  const DeepSetsModel sum = DeepSetsModel::create(small_ds(PoolKind::Sum), rng_a);
  const DeepSetsModel mean = DeepSetsModel::create(small_ds(PoolKind::Mean), rng_b);
  CHECK((deepsets_forward(sum, t) - deepsets_forward(sum, twice)).norm() > 1e-6);
  CHECK((deepsets_forward(mean, t) - deepsets_forward(mean, twice)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("sparse gating definitions") {
  const auto out = gate_outputs(Eigen::Vector2d(2.0, 3.0), Eigen::Vector2d(0.9, 0.2));
  CHECK(out.beta_hard == Eigen::Vector2d(2.0, 0.0));
  CHECK((out.beta_soft - Eigen::Vector2d(1.8, 0.6)).norm() < 1e-15);
  const auto off = gate_outputs(Eigen::Vector2d(2.0, -3.0), Eigen::Vector2d(0.5, 0.1));
  CHECK(off.beta_hard.isZero(0.0));
  const auto clamped = sparse_head(Eigen::Vector2d(1.0, 1.0), Eigen::Vector2d(80.0, -80.0));
  CHECK(clamped.gate_prob(0) == 1.0 - kGateFloor);
  CHECK(clamped.gate_prob(1) == kGateFloor);
}

TEST_CASE("sparse hard and soft outputs are consistent") {
  Rng rng(15);
  const SetTransformerModel sp = SetTransformerModel::create(small_st(true), rng);
  for (int i = 0; i < 10; ++i) {
    const auto o = settransformer_sparse_forward(sp, testutil::random_task(5, 3, 400 + i));
    for (Eigen::Index j = 0; j < 3; ++j) {
      CHECK(o.gate_prob(j) > 0.0);
      CHECK(o.gate_prob(j) < 1.0);
      CHECK(o.beta_soft(j) == doctest::Approx(o.magnitude(j) * o.gate_prob(j)));
      CHECK(o.beta_hard(j) == (o.gate_prob(j) > 0.5 ? o.magnitude(j) : 0.0));
    }
  }
}

TEST_CASE("zero epochs leave the model unchanged") {
  const auto spec = make_clustered_prior(3, 2, 3.0, 1.0, 5, 10, 16);
  const MetaDataset meta = gen_clustered_meta(spec, 20, 17);
  Estimator e = Estimator::deep_sets(small_ds(PoolKind::Sum), 18);
  const Eigen::VectorXd before = e.parameters();
  TrainConfig cfg;
  cfg.epochs = 0;
  CHECK(train_estimator(e, meta, cfg).empty());
  CHECK(e.parameters() == before);
}

TEST_CASE("training reduces held-out error and is deterministic") {
  const auto spec = make_clustered_prior(3, 3, 3.0, 1.0, 10, 20, 19);
  const MetaDataset meta = gen_clustered_meta(spec, 240, 20, 40);
  TrainConfig cfg;
  cfg.epochs = 30;
  cfg.batch_tasks = 8;
  cfg.checkpoints = {5, 30};
  cfg.seed = 21;
  for (const std::string kind : {"deep_sets", "set_transformer"}) {
    CAPTURE(kind);
    auto make = [&] {
      return kind == "deep_sets" ? Estimator::deep_sets(small_ds(PoolKind::Sum), 22)
                                 : Estimator::set_transformer(small_st(false), 22);
    };
    Estimator a = make(), b = make();
    int hooked = 0;
    const auto trace = train_estimator(a, meta, cfg, [&](int, const Estimator&) { ++hooked; });
    train_estimator(b, meta, cfg);
    REQUIRE(trace.size() == 2);
    CHECK(hooked == 2);
    CHECK(trace[0].epoch == 5);
    CHECK(std::isfinite(trace[0].train_loss));
    CHECK(trace[1].heldout_mse < trace[0].heldout_mse);
    CHECK(a.parameters() == b.parameters());
    CHECK(trace[1].heldout_mse == doctest::Approx(evaluate_estimator(a, meta.test(), Metric::MseBeta)));
  }
}

TEST_CASE("divergence surfaces as a training error with the epoch") {
  const auto spec = make_clustered_prior(3, 2, 3.0, 1.0, 5, 10, 23);
  MetaDataset meta = gen_clustered_meta(spec, 10, 24);
  meta.tasks[3].outputs(0) = std::numeric_limits<double>::quiet_NaN();
  Estimator e = Estimator::deep_sets(small_ds(PoolKind::Sum), 25);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.fit_scaling = false;
  try {
    train_estimator(e, meta, cfg);
    FAIL("expected TrainingError");
  } catch (const TrainingError& err) {
    CHECK(err.epoch() == 1);
  }
}

TEST_CASE("invalid train config is rejected") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.checkpoints = {11};
  CHECK_THROWS_AS(cfg.validate(), ValidationError);
}

TEST_CASE("evaluation metrics on fixed estimators") {
  const auto spec = make_clustered_prior(20, 200, 3.0, 1.0, 10, 30, 26);
  const MetaDataset meta = gen_clustered_meta(spec, 2000, 27);
  Estimator zero = Estimator::deep_sets(DeepSetsArch{}, 28);
  Eigen::VectorXd theta = zero.parameters();
  theta.setZero();
  zero.set_parameters(theta);
  const double mse = evaluate_estimator(zero, meta.tasks, Metric::MseBeta);
  CHECK(std::abs(mse - 180.0) < 0.1 * 180.0);  // E|beta|^2 = p tau^2
  CHECK_THROWS_AS(evaluate_estimator(zero, std::span<const Task>{}, Metric::MseBeta), ValidationError);
}

TEST_CASE("estimator checkpoints round trip") {
  testutil::TempDir dir("est_ckpt");
  const Task t = testutil::random_task(6, 3, 29);
  std::vector<Estimator> models{Estimator::deep_sets(small_ds(PoolKind::Mean), 30),
                                Estimator::deep_sets(small_ds(PoolKind::Sum), 33),
                                Estimator::set_transformer(small_st(false), 31),
                                Estimator::set_transformer(small_st(true), 32)};
  for (auto& m : models) {
    m.set_scaling(some_scaling(3));
    const auto path = dir.path / (estimator_kind_name(m.kind()) + ".ckpt");
    m.save(path);
    const Estimator back = Estimator::load(path);
    CHECK(back.kind() == m.kind());
    CHECK(back.scaling().set_size == m.scaling().set_size);
    CHECK(back.parameters() == m.parameters());
    CHECK(back.predict(t) == m.predict(t));
    CHECK(back.predict_hard(t) == m.predict_hard(t));
  }
}

TEST_CASE("token scaling records the mean set size") {
  const std::vector<Task> tasks{testutil::random_task(4, 3, 40), testutil::random_task(10, 3, 41)};
  const TokenScaling s = TokenScaling::fit(tasks);
  CHECK(s.set_size == 7.0);
  CHECK(TokenScaling::identity(4).set_size == 1.0);
}

TEST_CASE("sum pooling divides by the fitted set size") {
  Rng rng(42);
  DeepSetsModel ds = DeepSetsModel::create(small_ds(PoolKind::Sum), rng);
  const Eigen::MatrixXd tok = task_tokens(testutil::random_task(5, 3, 43));
  const Eigen::RowVectorXd unit = ds.pooled(tok);
  ds.scaling.set_size = 4.0;
  CHECK((ds.pooled(tok) * 4.0 - unit).norm() < 1e-12);
  ds.scaling = some_scaling(3);
  CHECK(model_grad_error(ds, testutil::random_task(5, 3, 44), LossKind::ParamMSE) < 1e-5);
}

TEST_CASE("cosine schedule anneals from the base step") {
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.learning_rate = 2e-3;
  CHECK(cfg.learning_rate_at(1) == 2e-3);
  cfg.cosine_decay = true;
  CHECK(cfg.learning_rate_at(1) == doctest::Approx(2e-3));
  CHECK(cfg.learning_rate_at(6) == doctest::Approx(1e-3));
  CHECK(cfg.learning_rate_at(10) < 1e-4);
}

TEST_CASE("symmetry relabeling changes training but stays deterministic") {
  SparseTaskSpec spec;
  spec.p = 3;
  spec.n_obs_min = 8;
  spec.n_obs_max = 12;
  const std::vector<int> levels{0, 50};
  const MetaDataset meta = gen_sparse_meta(spec, 20, levels, 45, 8);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_tasks = 4;
  cfg.seed = 46;
  Estimator plain = Estimator::deep_sets(small_ds(PoolKind::Sum), 47);
  Estimator a = plain, b = plain;
  train_estimator(plain, meta, cfg);
  cfg.augment_symmetries = true;
  train_estimator(a, meta, cfg);
  train_estimator(b, meta, cfg);
  CHECK(a.parameters() == b.parameters());
  CHECK(a.parameters() != plain.parameters());
}
