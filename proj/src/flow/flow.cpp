#include "amortlab/flow/flow.hpp"

#include <cmath>

#include "amortlab/error.hpp"
#include "amortlab/io.hpp"
#include "amortlab/nn/checkpoint.hpp"
#include "amortlab/nn/optimizer.hpp"
#include "amortlab/nn/params.hpp"

namespace amortlab {

FlowModel FlowModel::create(const FlowArch& arch, std::uint64_t seed) {
  require(arch.d_ctx >= 1, "flow: d_ctx must be >= 1");
  Rng rng(derive_seed(seed, "init", 0));
  DeepSetsArch enc;
  enc.p = RingPriorSpec::p;
  enc.encoder_hidden = arch.encoder_hidden;
  enc.latent = arch.encoder_latent;
  enc.decoder_hidden = arch.decoder_hidden;
  enc.pool = PoolKind::Sum;
  enc.out_width = arch.d_ctx;
  FlowModel m;
  m.context_encoder = DeepSetsModel::create(enc, rng);
  std::vector<Eigen::Index> widths{3 + arch.d_ctx};
  widths.insert(widths.end(), arch.velocity_hidden.begin(), arch.velocity_hidden.end());
  widths.push_back(2);
  m.velocity_net = nn::Mlp(widths, nn::Activation::Tanh, rng);
  return m;
}

Eigen::VectorXd FlowModel::context(const Task& task) const {
  if (task.n_obs() > 0 && task.inputs.cols() != RingPriorSpec::p)
    throw DimensionError("flow: task must have 2 covariates");
  if (task.n_obs() == 0) return context_encoder.decoder.forward(Eigen::VectorXd::Zero(context_encoder.encoder.out_width()));
  return context_encoder.raw_output(task_tokens(task));
}

void FlowModel::save(const std::filesystem::path& path) const {
  nn::Checkpoint ck;
  ck.kind = "flow";
  const auto& s = context_encoder.scaling;
  ck.add_tensor("scaling.shift", 1, s.shift.size(), s.shift.data());
  ck.add_tensor("scaling.scale", 1, s.scale.size(), s.scale.data());
  ck.add_mlp("context.encoder", context_encoder.encoder);
  ck.add_mlp("context.decoder", context_encoder.decoder);
  ck.add_mlp("velocity", velocity_net);
  ck.save(path);
}

FlowModel FlowModel::load(const std::filesystem::path& path) {
  const auto ck = nn::Checkpoint::load(path);
  if (ck.kind != "flow") throw ValidationError("checkpoint kind '" + ck.kind + "' is not a flow");
  FlowModel m;
  m.context_encoder.pool = PoolKind::Sum;
  m.context_encoder.scaling.shift = ck.tensor("scaling.shift").row(0);
  m.context_encoder.scaling.scale = ck.tensor("scaling.scale").row(0);
  m.context_encoder.scaling.out_scale = 1.0;
  m.context_encoder.encoder = ck.mlp("context.encoder");
  m.context_encoder.decoder = ck.mlp("context.decoder");
  m.velocity_net = ck.mlp("velocity");
  if (m.velocity_net.in_width() != 3 + m.d_ctx() || m.velocity_net.out_width() != 2)
    throw DimensionError("flow checkpoint: velocity widths do not match the context");
  return m;
}

// ---------------------------------------------------------------------------------------------

FlowBatch FlowBatch::make(Eigen::MatrixXd z0, Eigen::MatrixXd z1, Eigen::VectorXd t) {
  require(z0.cols() == 2 && z1.cols() == 2, "flow batch: states must be 2-vectors");
  require(z0.rows() == z1.rows() && z0.rows() == t.size(), "flow batch: size mismatch");
  require((t.array() >= 0.0).all() && (t.array() <= 1.0).all(), "flow batch: t outside [0, 1]");
  FlowBatch b;
  b.zt = (z0.array().colwise() * (1.0 - t.array())).matrix() + (z1.array().colwise() * t.array()).matrix();
  b.z0 = std::move(z0);
  b.z1 = std::move(z1);
  b.t = std::move(t);
  return b;
}

double cfm_loss(const FlowModel& model, const FlowBatch& batch, std::span<const Task> tasks,
                std::span<double> grad) {
  const Eigen::Index B = batch.size();
  require(B >= 1, "cfm loss: empty batch");
  require(static_cast<Eigen::Index>(tasks.size()) == B, "cfm loss: one task per batch item required");
  const auto& enc = model.context_encoder;
  const Eigen::Index d = model.d_ctx();

  // Encode every task's tokens in one pass; rows of task i occupy [offset[i], offset[i+1]).
  std::vector<Eigen::Index> offset(static_cast<std::size_t>(B) + 1, 0);
  for (Eigen::Index i = 0; i < B; ++i) {
    const Task& t = tasks[static_cast<std::size_t>(i)];
    if (t.n_obs() > 0 && t.inputs.cols() != 2) throw DimensionError("cfm loss: tasks must have 2 covariates");
    offset[static_cast<std::size_t>(i) + 1] = offset[static_cast<std::size_t>(i)] + t.n_obs();
  }
  const Eigen::Index total = offset.back();
  Eigen::MatrixXd tokens(total, 3);
  std::vector<std::vector<Eigen::Index>> orders(static_cast<std::size_t>(B));
  for (Eigen::Index i = 0; i < B; ++i) {
    const Task& t = tasks[static_cast<std::size_t>(i)];
    if (t.n_obs() == 0) continue;
    const Eigen::MatrixXd tok = task_tokens(t);
    tokens.middleRows(offset[static_cast<std::size_t>(i)], t.n_obs()) = tok;
    orders[static_cast<std::size_t>(i)] = canonical_order(tok);
  }
  nn::MlpTape enc_tape, dec_tape, vel_tape;
  Eigen::MatrixXd pooled = Eigen::MatrixXd::Zero(B, enc.encoder.out_width());
  if (total > 0) {
    const Eigen::MatrixXd h = enc.encoder.forward_batch(enc.scaling.apply(tokens), enc_tape);
    for (Eigen::Index i = 0; i < B; ++i) {
      const auto& ord = orders[static_cast<std::size_t>(i)];
      const Eigen::Index off = offset[static_cast<std::size_t>(i)];
      for (Eigen::Index r : ord) pooled.row(i) += h.row(off + r);
    }
  }
  const Eigen::MatrixXd ctx = enc.decoder.forward_batch(pooled, dec_tape);
  Eigen::MatrixXd input(B, 3 + d);
  input.col(0) = batch.t;
  input.middleCols(1, 2) = batch.zt;
  input.rightCols(d) = ctx;
  const Eigen::MatrixXd v = model.velocity_net.forward_batch(input, vel_tape);
  const Eigen::MatrixXd diff = v - (batch.z1 - batch.z0);
  const double loss = diff.squaredNorm() / static_cast<double>(B);
  if (!std::isfinite(loss)) throw NumericError("non-finite flow-matching loss", 0);
  if (grad.empty()) return loss;

  std::fill(grad.begin(), grad.end(), 0.0);
  nn::GradSlicer slices(grad);
  auto g_enc = slices.take(enc.encoder.parameter_count());
  auto g_dec = slices.take(enc.decoder.parameter_count());
  auto g_vel = slices.take(model.velocity_net.parameter_count());
  slices.finish();
  const Eigen::MatrixXd d_input = model.velocity_net.backward(vel_tape, (2.0 / static_cast<double>(B)) * diff, g_vel);
  const Eigen::MatrixXd d_pooled = enc.decoder.backward(dec_tape, d_input.rightCols(d), g_dec);
  if (total > 0) {
    Eigen::MatrixXd d_h(total, d_pooled.cols());
    for (Eigen::Index i = 0; i < B; ++i) {
      const Eigen::Index n = offset[static_cast<std::size_t>(i) + 1] - offset[static_cast<std::size_t>(i)];
      if (n > 0) d_h.middleRows(offset[static_cast<std::size_t>(i)], n) = d_pooled.row(i).replicate(n, 1);
    }
    enc.encoder.backward(enc_tape, d_h, g_enc);
  }
  return loss;
}

// ---------------------------------------------------------------------------------------------

void OdeConfig::validate() const { require(n_steps >= 1, "ode: n_steps must be >= 1"); }

Eigen::MatrixXd integrate_ode(const VectorField& field, const Eigen::MatrixXd& z0,
                              const OdeConfig& ode, double t0, double t1) {
  ode.validate();
  if (!z0.allFinite()) throw NumericError("non-finite initial state", 0);
  Eigen::MatrixXd z = z0;
  if (z.rows() == 0) return z;
  const double h = (t1 - t0) / ode.n_steps;
  for (int s = 0; s < ode.n_steps; ++s) {
    const double t = t0 + s * h;
    if (ode.scheme == OdeScheme::Euler) {
      z += h * field(t, z);
    } else {
      const Eigen::MatrixXd k1 = field(t, z);
      const Eigen::MatrixXd k2 = field(t + 0.5 * h, z + (0.5 * h) * k1);
      const Eigen::MatrixXd k3 = field(t + 0.5 * h, z + (0.5 * h) * k2);
      const Eigen::MatrixXd k4 = field(t + h, z + h * k3);
      z += (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    if (!z.allFinite()) throw NumericError("non-finite state during integration", s);
  }
  return z;
}

VectorField conditioned_field(const FlowModel& model, const Task& task) {
  const Eigen::VectorXd r = model.context(task);
  const auto& layers = model.velocity_net.layers();
  const auto& first = layers.front();
  // First layer: W [t, z, r] + b = W_tz [t, z] + (W_r r + b).
  Eigen::RowVectorXd shift = (first.weights.rightCols(r.size()) * r + first.bias).transpose();
  nn::RowMatrix w_tz = first.weights.leftCols(3);
  const nn::Mlp* net = &model.velocity_net;
  return [net, shift = std::move(shift), w_tz = std::move(w_tz)](double t, const Eigen::MatrixXd& z) {
    const auto& ls = net->layers();
    Eigen::MatrixXd a = z * w_tz.middleCols(1, 2).transpose();
    a.rowwise() += shift + t * w_tz.col(0).transpose();
    a = nn::apply_activation(ls.front().activation, a);
    for (std::size_t l = 1; l < ls.size(); ++l) {
      Eigen::MatrixXd zl = a * ls[l].weights.transpose();
      zl.rowwise() += ls[l].bias.transpose();
      a = nn::apply_activation(ls[l].activation, zl);
    }
    return a;
  };
}

Eigen::Vector2d integrate_flow(const FlowModel& model, const Task& task, const Eigen::Vector2d& z0,
                               const OdeConfig& ode) {
  const Eigen::MatrixXd out = integrate_ode(conditioned_field(model, task), z0.transpose(), ode);
  return out.row(0).transpose();
}

Eigen::MatrixXd sample_posterior(const FlowModel& model, const Task& task, std::size_t n_samples,
                                 const OdeConfig& ode, std::uint64_t seed) {
  ode.validate();
  if (n_samples == 0) return Eigen::MatrixXd(0, 2);
  Rng rng(seed);
  const Eigen::MatrixXd z0 = standard_normal(rng, static_cast<Eigen::Index>(n_samples), 2);
  return integrate_ode(conditioned_field(model, task), z0, ode);
}

std::vector<Eigen::MatrixXd> flow_trajectory(const FlowModel& model, const Task& task,
                                             std::size_t n_particles, std::span<const double> times,
                                             const OdeConfig& ode, std::uint64_t seed) {
  ode.validate();
  for (std::size_t i = 0; i < times.size(); ++i) {
    require(times[i] >= 0.0 && times[i] <= 1.0, "trajectory times must lie in [0, 1]");
    require(i == 0 || times[i] > times[i - 1], "trajectory times must be increasing");
  }
  Rng rng(seed);
  Eigen::MatrixXd z = standard_normal(rng, static_cast<Eigen::Index>(n_particles), 2);
  const VectorField field = conditioned_field(model, task);
  std::vector<Eigen::MatrixXd> snaps;
  double t = 0.0;
  for (double target : times) {
    if (target > t) {
      OdeConfig seg = ode;
      seg.n_steps = std::max(1, static_cast<int>(std::lround(ode.n_steps * (target - t))));
      z = integrate_ode(field, z, seg, t, target);
      t = target;
    }
    snaps.push_back(z);
  }
  return snaps;
}

// ---------------------------------------------------------------------------------------------

namespace {

std::vector<Task> draw_ring_tasks(const RingPriorSpec& spec, const FlowDataConfig& data,
                                  std::uint64_t seed, std::string_view stream, std::uint64_t first,
                                  std::size_t count) {
  std::vector<Task> tasks;
  tasks.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, stream, first + i);
    Rng rng(derive_seed(s, "n_obs", 0));
    std::uniform_int_distribution<int> n_obs(data.n_obs_min, data.n_obs_max);
    tasks.push_back(gen_ring_task(spec, n_obs(rng), s));
  }
  return tasks;
}

FlowBatch draw_batch(std::span<const Task> tasks, std::uint64_t seed) {
  Rng rng(seed);
  const auto B = static_cast<Eigen::Index>(tasks.size());
  Eigen::MatrixXd z0 = standard_normal(rng, B, 2);
  Eigen::MatrixXd z1(B, 2);
  Eigen::VectorXd t(B);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Eigen::Index i = 0; i < B; ++i) {
    z1.row(i) = tasks[static_cast<std::size_t>(i)].beta_true.transpose();
    t(i) = unit(rng);
  }
  return FlowBatch::make(std::move(z0), std::move(z1), std::move(t));
}

}  // namespace

std::vector<TraceRow> train_flow(FlowModel& model, const RingPriorSpec& spec, std::size_t n_tasks,
                                 const TrainConfig& cfg, const FlowDataConfig& data) {
  cfg.validate();
  spec.validate();
  require(n_tasks >= 1, "flow training needs n_tasks >= 1");
  require(data.n_obs_min >= 0 && data.n_obs_min <= data.n_obs_max, "flow: bad n_obs range");
  std::vector<TraceRow> trace;
  if (cfg.epochs == 0) return trace;

  if (cfg.fit_scaling) {
    const auto sample = draw_ring_tasks(spec, data, cfg.seed, "flow_scaling", 0, 512);
    bool any_rows = false;
    for (const auto& t : sample) any_rows = any_rows || t.n_obs() > 0;
    if (any_rows) {
      TokenScaling s = TokenScaling::fit(sample);
      s.out_scale = 1.0;
      s.set_size = 1.0;
      model.context_encoder.scaling = s;
    }
  }
  const auto val_tasks = draw_ring_tasks(spec, data, cfg.seed, "flow_val", 0, 1024);
  const FlowBatch val_batch = draw_batch(val_tasks, derive_seed(cfg.seed, "flow_val_noise", 0));

  Eigen::VectorXd params = nn::flatten(model);
  auto opt = nn::OptimizerState::for_size(params.size(), cfg.learning_rate);
  Eigen::VectorXd grad(params.size());
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const auto tasks = draw_ring_tasks(spec, data, cfg.seed, "flow_task",
                                       static_cast<std::uint64_t>(epoch - 1) * n_tasks, n_tasks);
    opt.learning_rate = cfg.learning_rate_at(epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < n_tasks; start += static_cast<std::size_t>(cfg.batch_tasks)) {
      const std::size_t stop = std::min(n_tasks, start + static_cast<std::size_t>(cfg.batch_tasks));
      const std::span<const Task> items(tasks.data() + start, stop - start);
      const FlowBatch batch = draw_batch(items, derive_seed(cfg.seed, "flow_noise", step++));
      double loss = 0.0;
      try {
        loss = cfm_loss(model, batch, items, nn::as_span(grad));
      } catch (const NumericError& e) {
        throw TrainingError(std::string("flow training diverged: ") + e.what(), epoch);
      }
      if (!std::isfinite(loss)) throw TrainingError("non-finite flow-matching loss", epoch);
      epoch_loss += loss * static_cast<double>(stop - start);
      nn::clip_global_norm(grad, cfg.grad_clip);
      nn::optimizer_step(opt, params, grad);
      nn::unflatten_into(model, params);
    }
    if (std::find(cfg.checkpoints.begin(), cfg.checkpoints.end(), epoch) != cfg.checkpoints.end())
      trace.push_back({epoch, epoch_loss / static_cast<double>(n_tasks), cfm_loss(model, val_batch, val_tasks)});
  }
  return trace;
}

}  // namespace amortlab
