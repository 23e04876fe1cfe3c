#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "svf/toy_model.hpp"

namespace svf {

struct AdamWHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

struct TrainConfig {
  std::size_t steps = 10000;
  double base_lr = 1e-3;
  std::size_t batch_keys = 1024;
  std::size_t checkpoint_every = 100;
  std::size_t warmup_steps = 0;
  AdamWHyper adamw;
  // Seed of the fixed batch used for checkpoint losses.
  std::uint64_t eval_seed = 0x5eed0e7a1ULL;

  void validate(const ModelConfig& model) const;
};

// Learning rate for the update that follows `step` completed updates.
double lr_at(std::size_t step, const TrainConfig& cfg);

struct Moments {
  Vector m;
  Vector v;
};

// One bias-corrected AdamW update with decoupled weight decay; `step` is the
// 1-based update count.
void adamw_step(std::span<double> params, std::span<const double> grads, Moments& moments,
                std::uint64_t step, double lr, const AdamWHyper& hyper);

struct OptimizerState {
  Moments w;
  Moments bias;
  Moments w_q;
  Moments w_k;
  std::uint64_t step = 0;

  static OptimizerState zeros(const ModelParams& params);
  friend bool operator==(const OptimizerState& a, const OptimizerState& b) {
    auto eq = [](const Moments& x, const Moments& y) { return x.m == y.m && x.v == y.v; };
    return eq(a.w, b.w) && eq(a.bias, b.bias) && eq(a.w_q, b.w_q) && eq(a.w_k, b.w_k) &&
           a.step == b.step;
  }
};

struct Checkpoint {
  std::size_t step = 0;
  LossBreakdown loss;
  ModelParams params;
  OptimizerState optimizer;
  std::string rng_state;
};

struct RunRecord {
  ModelConfig model;
  TrainConfig train;
  TargetSpec target;
  std::vector<Checkpoint> checkpoints;

  const Checkpoint& last() const { return checkpoints.back(); }
  // Checkpoint with exactly this step; throws std::out_of_range otherwise.
  const Checkpoint& at_step(std::size_t step) const;
};

class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::size_t step, std::string block);
  std::size_t step() const noexcept { return step_; }
  const std::string& block() const noexcept { return block_; }

 private:
  std::size_t step_;
  std::string block_;
};

struct TrainHooks {
  // Called for every checkpoint as soon as it is taken.
  std::function<void(const Checkpoint&)> on_checkpoint;
};

RunRecord train(const ModelConfig& model_cfg, const TargetSpec& spec, const TrainConfig& train_cfg,
                const TrainHooks& hooks = {});

// Continues a run from `from` (any checkpoint of an earlier run with the same
// configs). The returned record holds `from` followed by the new checkpoints.
RunRecord resume(const ModelConfig& model_cfg, const TargetSpec& spec, const TrainConfig& train_cfg,
                 const Checkpoint& from, const TrainHooks& hooks = {});

// Fixed evaluation batch used for checkpoint losses.
Matrix eval_strengths(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

}  // namespace svf
