#include "svf/trainer.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "svf/kernels.hpp"

namespace svf {

void TrainConfig::validate(const ModelConfig& model) const {
  if (steps < 1) throw std::invalid_argument("TrainConfig: steps must be >= 1");
  if (batch_keys == 0 || batch_keys % model.context_len != 0)
    throw std::invalid_argument("TrainConfig: batch_keys must be a positive multiple of context_len");
  if (checkpoint_every == 0) throw std::invalid_argument("TrainConfig: checkpoint_every must be >= 1");
  if (warmup_steps >= steps && warmup_steps != 0)
    throw std::invalid_argument("TrainConfig: warmup_steps must be < steps");
  if (!(base_lr >= 0.0)) throw std::invalid_argument("TrainConfig: base_lr must be >= 0");
}

double lr_at(std::size_t step, const TrainConfig& cfg) {
  if (step < cfg.warmup_steps)
    return cfg.base_lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  const double span = static_cast<double>(cfg.steps - cfg.warmup_steps);
  const double progress = static_cast<double>(step - cfg.warmup_steps) / span;
  return cfg.base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * std::min(progress, 1.0)));
}

void adamw_step(std::span<double> params, std::span<const double> grads, Moments& moments,
                std::uint64_t step, double lr, const AdamWHyper& hyper) {
  if (grads.size() != params.size())
    throw std::invalid_argument("adamw_step: parameter/gradient length mismatch");
  if (moments.m.size() != params.size()) moments.m.assign(params.size(), 0.0);
  if (moments.v.size() != params.size()) moments.v.assign(params.size(), 0.0);
  kernels::AdamWCoeffs k;
  k.lr = lr;
  k.beta1 = hyper.beta1;
  k.beta2 = hyper.beta2;
  k.eps = hyper.eps;
  k.weight_decay = hyper.weight_decay;
  k.bias_correction1 = 1.0 - std::pow(hyper.beta1, static_cast<double>(step));
  k.bias_correction2 = 1.0 - std::pow(hyper.beta2, static_cast<double>(step));
  kernels::active().adamw(params.data(), grads.data(), moments.m.data(), moments.v.data(),
                          params.size(), k);
}

OptimizerState OptimizerState::zeros(const ModelParams& p) {
  OptimizerState s;
  auto z = [](std::size_t n) { return Moments{Vector(n, 0.0), Vector(n, 0.0)}; };
  s.w = z(p.universe.w.size());
  s.bias = z(p.universe.bias.size());
  s.w_q = z(p.head.w_q.size());
  s.w_k = z(p.head.w_k.size());
  return s;
}

const Checkpoint& RunRecord::at_step(std::size_t step) const {
  for (const auto& c : checkpoints)
    if (c.step == step) return c;
  throw std::out_of_range("run has no checkpoint at step " + std::to_string(step));
}

TrainingDiverged::TrainingDiverged(std::size_t step, std::string block)
    : std::runtime_error("training diverged at step " + std::to_string(step) +
                         ": non-finite values in " + block),
      step_(step),
      block_(std::move(block)) {}

std::string serialize_rng(const Rng& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Rng deserialize_rng(const std::string& state) {
  std::istringstream is(state);
  Rng rng;
  is >> rng;
  if (!is) throw std::invalid_argument("deserialize_rng: malformed generator state");
  return rng;
}

Matrix eval_strengths(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  Rng rng(train_cfg.eval_seed ^ (model_cfg.seed * 0x9e3779b97f4a7c15ULL));
  return sample_strengths(train_cfg.batch_keys, model_cfg.n_features, model_cfg.feature_prob, rng);
}

namespace {

bool finite(std::span<const double> xs) {
  for (double x : xs)
    if (!std::isfinite(x)) return false;
  return true;
}

LossBreakdown eval_loss(const ModelConfig& cfg, const ModelParams& params, const TargetSpec& spec,
                        const Matrix& strengths) {
  ContextBatch b;
  b.context_len = cfg.context_len;
  b.strengths = strengths;
  b.tokens = make_tokens(params.universe, strengths);
  return loss(cfg, params, spec, b);
}

RunRecord run_from(const ModelConfig& model_cfg, const TargetSpec& spec, const TrainConfig& train_cfg,
                   Checkpoint start, const TrainHooks& hooks, bool emit_start) {
  RunRecord rec{model_cfg, train_cfg, spec, {}};
  const Matrix eval = eval_strengths(model_cfg, train_cfg);

  ModelParams params = start.params;
  OptimizerState opt = start.optimizer;
  Rng rng = deserialize_rng(start.rng_state);
  rec.checkpoints.push_back(std::move(start));
  if (emit_start && hooks.on_checkpoint) hooks.on_checkpoint(rec.checkpoints.back());

  for (std::size_t step = rec.checkpoints.back().step + 1; step <= train_cfg.steps; ++step) {
    const double lr = lr_at(step - 1, train_cfg);
    const ContextBatch batch = sample_batch(model_cfg, params.universe, train_cfg.batch_keys, rng);
    LossAndGradients lg = loss_and_gradients(model_cfg, params, spec, batch);
    if (!std::isfinite(lg.loss.total)) throw TrainingDiverged(step, "loss");
    if (!finite(lg.grads.w.data())) throw TrainingDiverged(step, "grad w");
    if (!finite(lg.grads.bias)) throw TrainingDiverged(step, "grad bias");
    if (!finite(lg.grads.w_q.data())) throw TrainingDiverged(step, "grad w_q");
    if (!finite(lg.grads.w_k.data())) throw TrainingDiverged(step, "grad w_k");

    opt.step = step;
    adamw_step(params.universe.w.data(), lg.grads.w.data(), opt.w, step, lr, train_cfg.adamw);
    adamw_step(params.universe.bias, lg.grads.bias, opt.bias, step, lr, train_cfg.adamw);
    adamw_step(params.head.w_q.data(), lg.grads.w_q.data(), opt.w_q, step, lr, train_cfg.adamw);
    adamw_step(params.head.w_k.data(), lg.grads.w_k.data(), opt.w_k, step, lr, train_cfg.adamw);
    if (!params.universe.w.all_finite()) throw TrainingDiverged(step, "w");
    if (!finite(params.universe.bias)) throw TrainingDiverged(step, "bias");
    if (!params.head.w_q.all_finite()) throw TrainingDiverged(step, "w_q");
    if (!params.head.w_k.all_finite()) throw TrainingDiverged(step, "w_k");

    if (step % train_cfg.checkpoint_every == 0 || step == train_cfg.steps) {
      Checkpoint c;
      c.step = step;
      c.params = params;
      c.optimizer = opt;
      c.rng_state = serialize_rng(rng);
      c.loss = eval_loss(model_cfg, params, spec, eval);
      rec.checkpoints.push_back(std::move(c));
      if (hooks.on_checkpoint) hooks.on_checkpoint(rec.checkpoints.back());
    }
  }
  return rec;
}

}  // namespace

RunRecord train(const ModelConfig& model_cfg, const TargetSpec& spec, const TrainConfig& train_cfg,
                const TrainHooks& hooks) {
  model_cfg.validate();
  train_cfg.validate(model_cfg);
  spec.validate(model_cfg.n_features);
  Rng rng(model_cfg.seed);
  Checkpoint start;
  start.step = 0;
  start.params = init_params(model_cfg, rng);
  start.optimizer = OptimizerState::zeros(start.params);
  start.rng_state = serialize_rng(rng);
  start.loss = eval_loss(model_cfg, start.params, spec, eval_strengths(model_cfg, train_cfg));
  return run_from(model_cfg, spec, train_cfg, std::move(start), hooks, true);
}

RunRecord resume(const ModelConfig& model_cfg, const TargetSpec& spec, const TrainConfig& train_cfg,
                 const Checkpoint& from, const TrainHooks& hooks) {
  model_cfg.validate();
  train_cfg.validate(model_cfg);
  spec.validate(model_cfg.n_features);
  if (from.step > train_cfg.steps) throw std::invalid_argument("resume: checkpoint beyond run length");
  return run_from(model_cfg, spec, train_cfg, from, hooks, false);
}

}  // namespace svf
