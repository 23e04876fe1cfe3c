#pragma once

// One-axis parameter sweeps over the toy model, the over-capacity study and
// the early/late sparsity control tables.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "svf/analysis.hpp"
#include "svf/toy_model.hpp"
#include "svf/trainer.hpp"

namespace svf {

enum class SweepAxis { feature_prob, lambda, n_features, head_dim, context_len, seed, n_pairs };

const char* axis_name(SweepAxis axis);
// Throws std::invalid_argument for unknown names.
SweepAxis parse_axis(const std::string& name);

struct SweepSpec {
  ModelConfig model;
  TrainConfig train;
  TargetSpec target = TargetSpec::default_four_pairs();
  SweepAxis axis = SweepAxis::lambda;
  std::vector<double> values;
  std::size_t replicates = 1;
  // Cells below the alignment threshold are rerun from scratch with this many
  // steps (0 disables).
  std::size_t escalate_steps = 80000;

  void validate() const;

  // Configuration of one cell. Replicate r shifts the model seed by r.
  ModelConfig cell_model(double value, std::size_t replicate) const;
  TargetSpec cell_target(double value) const;

  // Geometric ladders used when a spec leaves values empty.
  static std::vector<double> default_values(SweepAxis axis);
};

struct SweepCell {
  std::string cell_id;  // "<axis>=<value>/r<replicate>"
  std::size_t value_index = 0;
  double axis_value = 0.0;
  std::size_t replicate = 0;
  std::size_t steps = 0;
  bool escalated = false;
  std::vector<PairAlignment> pairs;
  LossBreakdown final_loss;
  std::optional<std::string> error;

  bool ok() const { return !error.has_value(); }
  // Smallest cos over pairs and both sides; 0 for failed cells.
  double min_cos() const;
};

struct SweepOptions {
  std::size_t workers = 1;
  // When set, each cell's run is stored under out_dir / cell_dir(cell_id).
  std::optional<std::filesystem::path> out_dir;
  Thresholds thresholds;
  std::function<void(const SweepCell&)> on_cell;
};

std::string cell_dir(const std::string& cell_id);

// Runs (value_index, replicate) alone; identical to the same cell of run_sweep.
SweepCell run_cell(const SweepSpec& spec, std::size_t value_index, std::size_t replicate,
                   const SweepOptions& options = {});

// Cells ordered by (value_index, replicate) regardless of completion order.
std::vector<SweepCell> run_sweep(const SweepSpec& spec, const SweepOptions& options = {});

// ---- over-capacity ---------------------------------------------------------

struct OverCapacityOptions {
  ModelConfig model;  // token_dim / head_dim / n_features taken from here
  TrainConfig train;
  std::optional<std::size_t> zero_logit_pair;
};

// Pairs (i, i + N/2) with logit 1 + n_pairs - i.
TargetSpec over_capacity_target(std::size_t n_pairs, std::size_t n_features);

struct OverCapacityResult {
  std::size_t n_pairs = 0;
  Matrix heat_u;  // n_pairs x H, |cos(u_k, w_query)| for pair i (spec order)
  Matrix heat_v;  // n_pairs x H
  Vector sigma;
  std::vector<std::size_t> best_index;  // argmax_k of (heat_u + heat_v) / 2
  std::vector<double> best_cos;
  // Pairs whose best index is the last (smallest sigma) singular vector.
  std::vector<std::size_t> collapsed;
  LossBreakdown final_loss;
};

OverCapacityResult over_capacity_result(const RunRecord& run, const TargetSpec& target);

std::vector<OverCapacityResult> over_capacity_study(const std::vector<std::size_t>& pair_counts,
                                                    const OverCapacityOptions& options);

// ---- sparsity control ------------------------------------------------------

struct SparsityControlTable {
  std::size_t step = 0;
  std::vector<StratifiedRecord> present;  // at least one pair of interest
  std::vector<StratifiedRecord> absent;
  StratumSummary present_summary;
  StratumSummary absent_summary;
};

struct SparsityControlStudy {
  SparsityControlTable early;
  SparsityControlTable late;
};

SparsityControlStudy sparsity_control_study(const RunRecord& run, const TargetSpec& spec,
                                            const StratifiedOptions& options = {});

}  // namespace svf
