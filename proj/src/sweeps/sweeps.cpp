#include "svf/sweeps.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <mutex>
#include <thread>

#include "svf/io/reports.hpp"
#include "svf/io/run_store.hpp"

namespace svf {

const char* axis_name(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::feature_prob: return "feature_prob";
    case SweepAxis::lambda: return "lambda";
    case SweepAxis::n_features: return "n_features";
    case SweepAxis::head_dim: return "head_dim";
    case SweepAxis::context_len: return "context_len";
    case SweepAxis::seed: return "seed";
    case SweepAxis::n_pairs: return "n_pairs";
  }
  return "?";
}

SweepAxis parse_axis(const std::string& name) {
  for (auto a : {SweepAxis::feature_prob, SweepAxis::lambda, SweepAxis::n_features,
                 SweepAxis::head_dim, SweepAxis::context_len, SweepAxis::seed, SweepAxis::n_pairs})
    if (name == axis_name(a)) return a;
  throw std::invalid_argument("unknown sweep axis '" + name + "'");
}

std::vector<double> SweepSpec::default_values(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::feature_prob: return {0.52, 0.27, 0.14, 0.073, 0.052, 0.038, 0.027, 0.02};
    case SweepAxis::lambda: return {0.4, 1.3, 4.0, 12.6, 40.0};
    case SweepAxis::n_features: return {12, 16, 20, 30, 40};
    case SweepAxis::head_dim: return {10, 8, 6, 4};
    case SweepAxis::context_len: return {2, 4, 8};
    case SweepAxis::seed: return {0, 1, 2, 3, 4};
    case SweepAxis::n_pairs: return {1, 2, 4, 6, 8, 10};
  }
  return {};
}

namespace {

std::size_t as_count(double v, const char* what) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e15)
    throw std::invalid_argument(std::string("sweep: ") + what + " value must be a whole number");
  return static_cast<std::size_t>(v);
}

}  // namespace

ModelConfig SweepSpec::cell_model(double value, std::size_t replicate) const {
  ModelConfig m = model;
  switch (axis) {
    case SweepAxis::feature_prob: m.feature_prob = value; break;
    case SweepAxis::lambda: m.lambda = value; break;
    case SweepAxis::n_features: m.n_features = as_count(value, "n_features"); break;
    case SweepAxis::head_dim: m.head_dim = as_count(value, "head_dim"); break;
    case SweepAxis::context_len: m.context_len = as_count(value, "context_len"); break;
    case SweepAxis::seed: m.seed = as_count(value, "seed"); break;
    case SweepAxis::n_pairs: break;
  }
  m.seed += replicate;
  return m;
}

TargetSpec SweepSpec::cell_target(double value) const {
  if (axis == SweepAxis::n_pairs) return over_capacity_target(as_count(value, "n_pairs"), model.n_features);
  return target;
}

void SweepSpec::validate() const {
  if (values.empty()) throw std::invalid_argument("sweep: no axis values");
  if (replicates == 0) throw std::invalid_argument("sweep: replicates must be >= 1");
  for (double v : values) {
    const ModelConfig m = cell_model(v, 0);
    m.validate();
    cell_target(v).validate(m.n_features);
    train.validate(m);
  }
}

double SweepCell::min_cos() const {
  if (!ok() || pairs.empty()) return 0.0;
  double m = 1.0;
  for (const auto& p : pairs) m = std::min(m, p.min_cos());
  return m;
}

std::string cell_dir(const std::string& cell_id) {
  std::string out;
  for (char c : cell_id) out += (c == '/' || c == '=') ? '_' : c;
  return out;
}

SweepCell run_cell(const SweepSpec& spec, std::size_t value_index, std::size_t replicate,
                   const SweepOptions& options) {
  SweepCell cell;
  cell.value_index = value_index;
  cell.axis_value = spec.values.at(value_index);
  cell.replicate = replicate;
  cell.cell_id = std::string(axis_name(spec.axis)) + "=" + io::format_number(cell.axis_value) +
                 "/r" + std::to_string(replicate);
  try {
    const ModelConfig model = spec.cell_model(cell.axis_value, replicate);
    const TargetSpec target = spec.cell_target(cell.axis_value);
    TrainConfig train_cfg = spec.train;

    auto attempt = [&](const TrainConfig& tc) {
      RunRecord run = train(model, target, tc);
      const AlignmentReport rep = alignment(run.last().params.universe, run.last().params.head, target);
      cell.pairs = rep.pairs;
      cell.final_loss = run.last().loss;
      cell.steps = tc.steps;
      return run;
    };
    RunRecord run = attempt(train_cfg);
    if (cell.min_cos() <= options.thresholds.sweep_min_cos && spec.escalate_steps > train_cfg.steps) {
      train_cfg.steps = spec.escalate_steps;
      run = attempt(train_cfg);
      cell.escalated = true;
    }
    if (options.out_dir) io::save_run(*options.out_dir / cell_dir(cell.cell_id), run);
  } catch (const std::exception& e) {
    cell.error = e.what();
    cell.pairs.clear();
  }
  return cell;
}

std::vector<SweepCell> run_sweep(const SweepSpec& spec, const SweepOptions& options) {
  spec.validate();
  const std::size_t n = spec.values.size() * spec.replicates;
  std::vector<SweepCell> cells(n);
  std::atomic<std::size_t> next{0};
  std::mutex hook_mu;
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < n;) {
      cells[i] = run_cell(spec, i / spec.replicates, i % spec.replicates, options);
      if (options.on_cell) {
        std::lock_guard lock(hook_mu);
        options.on_cell(cells[i]);
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(options.workers, 1, n);
  if (workers == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return cells;
}

TargetSpec over_capacity_target(std::size_t n_pairs, std::size_t n_features) {
  if (n_pairs == 0 || n_pairs > n_features / 2)
    throw std::invalid_argument("over_capacity_target: need 1 <= n_pairs <= N/2");
  std::vector<TargetEntry> entries;
  for (std::size_t i = 0; i < n_pairs; ++i)
    entries.push_back({i, i + n_features / 2, 1.0 + static_cast<double>(n_pairs) - static_cast<double>(i)});
  return TargetSpec(std::move(entries));
}

OverCapacityResult over_capacity_result(const RunRecord& run, const TargetSpec& target) {
  const auto& params = run.last().params;
  const AlignmentReport rep = alignment(params.universe, params.head, target);
  const std::size_t n = target.size();
  const std::size_t h = rep.sigma.size();
  OverCapacityResult r;
  r.n_pairs = n;
  r.sigma = rep.sigma;
  r.final_loss = run.last().loss;
  r.heat_u = Matrix(n, h);
  r.heat_v = Matrix(n, h);
  for (std::size_t i = 0; i < n; ++i) {
    const auto& e = target.entries()[i];
    std::size_t best = 0;
    double best_cos = -1.0;
    for (std::size_t k = 0; k < h; ++k) {
      r.heat_u(i, k) = rep.cos_u_w(k, e.query_feature);
      r.heat_v(i, k) = rep.cos_v_w(k, e.key_feature);
      const double c = 0.5 * (r.heat_u(i, k) + r.heat_v(i, k));
      if (c > best_cos) {
        best_cos = c;
        best = k;
      }
    }
    r.best_index.push_back(best);
    r.best_cos.push_back(best_cos);
    if (best == h - 1) r.collapsed.push_back(i);
  }
  return r;
}

std::vector<OverCapacityResult> over_capacity_study(const std::vector<std::size_t>& pair_counts,
                                                    const OverCapacityOptions& options) {
  std::vector<OverCapacityResult> out;
  for (std::size_t n : pair_counts) {
    if (n < options.model.head_dim || n > 2 * options.model.head_dim)
      throw std::invalid_argument("over_capacity_study: pair counts must lie in [H, 2H]");
    TargetSpec target = over_capacity_target(n, options.model.n_features);
    if (options.zero_logit_pair) {
      auto entries = target.entries();
      entries.at(*options.zero_logit_pair).logit = 0.0;
      target = TargetSpec(std::move(entries));
    }
    const RunRecord run = train(options.model, target, options.train);
    out.push_back(over_capacity_result(run, target));
  }
  return out;
}

namespace {

SparsityControlTable control_table(const RunRecord& run, const Checkpoint& c, const TargetSpec& spec,
                                   const Matrix& strengths, const StratifiedOptions& opt) {
  SparsityControlTable t;
  t.step = c.step;
  std::vector<double> present, absent;
  for (auto& r : stratified_records(run.model, c.params, spec, strengths, opt, false)) {
    const bool counted = r.record.sparsity_s && (!opt.attended_only || r.record.relative_attention > 0.0);
    if (r.stratum == Stratum::none) {
      if (counted) absent.push_back(*r.record.sparsity_s);
      t.absent.push_back(std::move(r));
    } else {
      if (counted) present.push_back(*r.record.sparsity_s);
      t.present.push_back(std::move(r));
    }
  }
  auto summary = [&](const std::vector<double>& xs) {
    StratumSummary s;
    s.count = xs.size();
    if (xs.empty()) return s;
    s.mean = mean(xs);
    if (opt.bootstrap) s.ci = bootstrap_mean_ci(xs, opt.boot);
    return s;
  };
  t.present_summary = summary(present);
  t.absent_summary = summary(absent);
  return t;
}

}  // namespace

SparsityControlStudy sparsity_control_study(const RunRecord& run, const TargetSpec& spec,
                                            const StratifiedOptions& options) {
  if (run.checkpoints.size() < 2)
    throw std::invalid_argument("sparsity_control_study: need at least two checkpoints");
  const Matrix strengths = stratified_eval_strengths(run.model, options);
  return {control_table(run, run.checkpoints.front(), spec, strengths, options),
          control_table(run, run.last(), spec, strengths, options)};
}

}  // namespace svf
