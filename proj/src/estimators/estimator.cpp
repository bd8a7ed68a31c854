#include "amortlab/estimators/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "amortlab/error.hpp"
#include "amortlab/eval/metrics.hpp"
#include "amortlab/io.hpp"
#include "amortlab/nn/checkpoint.hpp"
#include "amortlab/nn/optimizer.hpp"
#include "amortlab/nn/params.hpp"

namespace amortlab {

std::string estimator_kind_name(EstimatorKind kind) {
  switch (kind) {
    case EstimatorKind::DeepSets: return "deep_sets";
    case EstimatorKind::SetTransformer: return "set_transformer";
    case EstimatorKind::SparseSetTransformer: return "sparse_set_transformer";
  }
  return "unknown";
}

EstimatorKind estimator_kind_from_name(const std::string& name) {
  if (name == "deep_sets") return EstimatorKind::DeepSets;
  if (name == "set_transformer") return EstimatorKind::SetTransformer;
  if (name == "sparse_set_transformer") return EstimatorKind::SparseSetTransformer;
  throw ValidationError("unknown estimator kind '" + name + "'");
}

Estimator Estimator::deep_sets(const DeepSetsArch& arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init", 0));
  return Estimator(DeepSetsModel::create(arch, rng));
}

Estimator Estimator::set_transformer(const SetTransformerArch& arch, std::uint64_t seed) {
  Rng rng(derive_seed(seed, "init", 0));
  return Estimator(SetTransformerModel::create(arch, rng));
}

EstimatorKind Estimator::kind() const {
  if (std::holds_alternative<DeepSetsModel>(model_)) return EstimatorKind::DeepSets;
  return std::get<SetTransformerModel>(model_).sparse ? EstimatorKind::SparseSetTransformer
                                                      : EstimatorKind::SetTransformer;
}

Eigen::Index Estimator::p() const {
  return std::visit([](const auto& m) { return m.p(); }, model_);
}

bool Estimator::is_sparse() const { return kind() == EstimatorKind::SparseSetTransformer; }

Eigen::VectorXd Estimator::predict(const Task& task) const {
  if (const auto* ds = std::get_if<DeepSetsModel>(&model_)) return deepsets_forward(*ds, task);
  return settransformer_forward(std::get<SetTransformerModel>(model_), task);
}

Eigen::VectorXd Estimator::predict_hard(const Task& task) const {
  if (!is_sparse()) return predict(task);
  return predict_sparse(task).beta_hard;
}

SparseHeadOutput Estimator::predict_sparse(const Task& task) const {
  require(is_sparse(), "estimator has no sparsity gate");
  return settransformer_sparse_forward(std::get<SetTransformerModel>(model_), task);
}

double Estimator::loss_and_grad(const Task& task, LossKind loss, std::span<double> grad) const {
  return std::visit([&](const auto& m) { return m.loss_and_grad(task, loss, grad); }, model_);
}

const TokenScaling& Estimator::scaling() const {
  return std::visit([](const auto& m) -> const TokenScaling& { return m.scaling; }, model_);
}

void Estimator::set_scaling(TokenScaling s) {
  if (s.shift.size() != p() + 1) throw DimensionError("token scaling width mismatch");
  std::visit([&](auto& m) { m.scaling = std::move(s); }, model_);
}

std::size_t Estimator::parameter_count() const {
  return std::visit([](const auto& m) { return nn::count_parameters(m); }, model_);
}

Eigen::VectorXd Estimator::parameters() const {
  return std::visit([](const auto& m) { return nn::flatten(m); }, model_);
}

void Estimator::set_parameters(const Eigen::VectorXd& flat) {
  std::visit([&](auto& m) { nn::unflatten_into(m, flat); }, model_);
}

// ---------------------------------------------------------------------------------------------
// Checkpoints

namespace {

void add_row_vector(nn::Checkpoint& ck, const std::string& name, const Eigen::RowVectorXd& v) {
  ck.add_tensor(name, 1, v.size(), v.data());
}

Eigen::RowVectorXd row_vector(const nn::Checkpoint& ck, const std::string& name) {
  return ck.tensor(name).row(0);
}

void add_scaling(nn::Checkpoint& ck, const TokenScaling& s) {
  add_row_vector(ck, "scaling.shift", s.shift);
  add_row_vector(ck, "scaling.scale", s.scale);
  ck.meta["out_scale"] = io::format_double(s.out_scale);
  ck.meta["set_size"] = io::format_double(s.set_size);
}

TokenScaling read_scaling(const nn::Checkpoint& ck) {
  TokenScaling s;
  s.shift = row_vector(ck, "scaling.shift");
  s.scale = row_vector(ck, "scaling.scale");
  s.out_scale = io::parse_double(ck.meta.at("out_scale"));
  if (const auto it = ck.meta.find("set_size"); it != ck.meta.end()) s.set_size = io::parse_double(it->second);
  return s;
}

}  // namespace

void Estimator::save(const std::filesystem::path& path) const {
  nn::Checkpoint ck;
  ck.kind = estimator_kind_name(kind());
  if (const auto* ds = std::get_if<DeepSetsModel>(&model_)) {
    ck.meta["pool"] = ds->pool == PoolKind::Sum ? "sum" : "mean";
    add_scaling(ck, ds->scaling);
    ck.add_mlp("encoder", ds->encoder);
    ck.add_mlp("decoder", ds->decoder);
  } else {
    const auto& st = std::get<SetTransformerModel>(model_);
    ck.meta["n_blocks"] = std::to_string(st.blocks.size());
    ck.meta["n_heads"] = st.blocks.empty() ? "1" : std::to_string(st.blocks.front().n_heads);
    add_scaling(ck, st.scaling);
    ck.add_mlp("embed", st.token_embed);
    for (std::size_t b = 0; b < st.blocks.size(); ++b) {
      const auto& blk = st.blocks[b];
      const std::string pre = "block" + std::to_string(b) + ".";
      const auto d = blk.d_model();
      ck.add_tensor(pre + "wq", d, d, blk.query_proj.data());
      ck.add_tensor(pre + "wk", d, d, blk.key_proj.data());
      ck.add_tensor(pre + "wv", d, d, blk.value_proj.data());
      ck.add_tensor(pre + "wo", d, d, blk.output_proj.data());
      add_row_vector(ck, pre + "norm1.scale", blk.norm1_scale);
      add_row_vector(ck, pre + "norm1.shift", blk.norm1_shift);
      ck.add_mlp(pre + "ffn", blk.feedforward);
      add_row_vector(ck, pre + "norm2.scale", blk.norm2_scale);
      add_row_vector(ck, pre + "norm2.shift", blk.norm2_shift);
    }
    ck.add_mlp("head", st.head);
  }
  ck.save(path);
}

Estimator Estimator::load(const std::filesystem::path& path) {
  const nn::Checkpoint ck = nn::Checkpoint::load(path);
  const EstimatorKind kind = estimator_kind_from_name(ck.kind);
  if (kind == EstimatorKind::DeepSets) {
    DeepSetsModel m;
    m.pool = ck.meta.at("pool") == "sum" ? PoolKind::Sum : PoolKind::Mean;
    m.scaling = read_scaling(ck);
    m.encoder = ck.mlp("encoder");
    m.decoder = ck.mlp("decoder");
    if (m.scaling.shift.size() != m.encoder.in_width())
      throw DimensionError("checkpoint: scaling width does not match encoder");
    return Estimator(std::move(m));
  }
  SetTransformerModel m;
  m.sparse = kind == EstimatorKind::SparseSetTransformer;
  m.scaling = read_scaling(ck);
  m.token_embed = ck.mlp("embed");
  const int n_blocks = std::stoi(ck.meta.at("n_blocks"));
  const int n_heads = std::stoi(ck.meta.at("n_heads"));
  for (int b = 0; b < n_blocks; ++b) {
    const std::string pre = "block" + std::to_string(b) + ".";
    AttentionBlock blk;
    blk.n_heads = n_heads;
    blk.query_proj = ck.tensor(pre + "wq");
    blk.key_proj = ck.tensor(pre + "wk");
    blk.value_proj = ck.tensor(pre + "wv");
    blk.output_proj = ck.tensor(pre + "wo");
    blk.norm1_scale = row_vector(ck, pre + "norm1.scale");
    blk.norm1_shift = row_vector(ck, pre + "norm1.shift");
    blk.feedforward = ck.mlp(pre + "ffn");
    blk.norm2_scale = row_vector(ck, pre + "norm2.scale");
    blk.norm2_shift = row_vector(ck, pre + "norm2.shift");
    blk.validate();
    m.blocks.push_back(std::move(blk));
  }
  m.head = ck.mlp("head");
  const Eigen::Index want_out = m.sparse ? 2 * m.p() : m.p();
  if (m.head.out_width() != want_out) throw DimensionError("checkpoint: head width mismatch");
  return Estimator(std::move(m));
}

// ---------------------------------------------------------------------------------------------
// Training

void TrainConfig::validate() const {
  require(epochs >= 0, "epochs must be >= 0");
  require(batch_tasks >= 1, "batch_tasks must be >= 1");
  require(learning_rate > 0.0, "learning rate must be > 0");
  for (int c : checkpoints)
    require(c >= 1 && c <= epochs, "checkpoint epoch " + std::to_string(c) + " outside [1, epochs]");
}

namespace {

Task relabel_features(const Task& t, Rng& rng) {
  const Eigen::Index p = t.dim();
  std::vector<Eigen::Index> perm(static_cast<std::size_t>(p));
  std::iota(perm.begin(), perm.end(), Eigen::Index{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  std::bernoulli_distribution flip(0.5);
  Task out = t;
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::Index src = perm[static_cast<std::size_t>(j)];
    const double sign = flip(rng) ? -1.0 : 1.0;
    out.inputs.col(j) = sign * t.inputs.col(src);
    out.beta_true(j) = sign * t.beta_true(src);
  }
  return out;
}

}  // namespace

double TrainConfig::learning_rate_at(int epoch) const {
  if (!cosine_decay || epochs <= 0) return learning_rate;
  const double frac = static_cast<double>(epoch - 1) / static_cast<double>(epochs);
  return 0.5 * learning_rate * (1.0 + std::cos(std::numbers::pi * frac));
}

std::vector<TraceRow> train_estimator(Estimator& model, const MetaDataset& meta,
                                      const TrainConfig& cfg, const CheckpointHook& hook) {
  cfg.validate();
  const auto train = meta.train();
  require(!train.empty(), "training needs at least one training task");
  std::vector<TraceRow> trace;
  if (cfg.epochs == 0) return trace;

  if (cfg.fit_scaling) model.set_scaling(TokenScaling::fit(train));
  const auto heldout = meta.n_test > 0 ? meta.test() : train;

  std::vector<int> marks = cfg.checkpoints;
  std::sort(marks.begin(), marks.end());
  marks.erase(std::unique(marks.begin(), marks.end()), marks.end());

  Eigen::VectorXd params = model.parameters();
  auto opt = nn::OptimizerState::for_size(params.size(), cfg.learning_rate);
  Eigen::VectorXd batch_grad(params.size());
  Eigen::VectorXd task_grad(params.size());
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    Rng augment_rng(derive_seed(cfg.seed, "augment", static_cast<std::uint64_t>(epoch)));
    opt.learning_rate = cfg.learning_rate_at(epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_tasks)) {
      const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_tasks));
      batch_grad.setZero();
      double batch_loss = 0.0;
      try {
        for (std::size_t i = start; i < stop; ++i) {
          task_grad.setZero();
          const Task& task = train[order[i]];
          batch_loss += cfg.augment_symmetries
                            ? model.loss_and_grad(relabel_features(task, augment_rng), cfg.loss, nn::as_span(task_grad))
                            : model.loss_and_grad(task, cfg.loss, nn::as_span(task_grad));
          batch_grad += task_grad;
        }
      } catch (const NumericError& e) {
        throw TrainingError(std::string("training diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(batch_loss)) throw TrainingError("non-finite training loss", epoch);
      epoch_loss += batch_loss;
      batch_grad /= static_cast<double>(stop - start);
      nn::clip_global_norm(batch_grad, cfg.grad_clip);
      nn::optimizer_step(opt, params, batch_grad);
      model.set_parameters(params);
    }
    epoch_loss /= static_cast<double>(train.size());
    if (std::binary_search(marks.begin(), marks.end(), epoch)) {
      const double mse = evaluate_estimator(model, heldout, Metric::MseBeta);
      if (!std::isfinite(mse)) throw TrainingError("non-finite held-out error", epoch);
      trace.push_back({epoch, epoch_loss, mse});
      if (hook) hook(epoch, model);
    }
  }
  return trace;
}

double evaluate_estimator(const Estimator& model, std::span<const Task> tasks, Metric metric) {
  require(!tasks.empty(), "evaluation needs at least one task");
  double total = 0.0;
  for (const Task& t : tasks) {
    const Eigen::VectorXd est = model.predict(t);
    switch (metric) {
      case Metric::MseBeta: total += (est - t.beta_true).squaredNorm(); break;
      case Metric::PredictiveMse:
        total += (t.outputs - t.inputs * est).squaredNorm() / static_cast<double>(t.n_obs());
        break;
      case Metric::Cosine: total += cosine_similarity(est, t.beta_true); break;
    }
  }
  return total / static_cast<double>(tasks.size());
}

void write_trace_csv(const std::filesystem::path& path, std::span<const TraceRow> trace,
                     bool append) {
  const std::vector<std::string> header{"epoch", "train_loss", "heldout_mse"};
  io::CsvWriter out(path, header, append);
  for (const auto& row : trace) {
    out.field(row.epoch).field(row.train_loss).field(row.heldout_mse);
    out.end_row();
  }
}

}  // namespace amortlab
