#include <gtest/gtest.h>

#include <filesystem>

#include "svf/io/run_store.hpp"
#include "svf/sweeps.hpp"

using namespace svf;
namespace fs = std::filesystem;

namespace {

SweepSpec tiny(SweepAxis axis, std::vector<double> values) {
  SweepSpec s;
  s.model.n_features = 12;
  s.model.token_dim = 6;
  s.model.head_dim = 4;
  s.train.steps = 40;
  s.train.batch_keys = 64;
  s.train.checkpoint_every = 20;
  s.train.base_lr = 1e-2;
  s.axis = axis;
  s.values = std::move(values);
  s.escalate_steps = 0;
  return s;
}

bool same_cell(const SweepCell& a, const SweepCell& b) {
  if (a.cell_id != b.cell_id || a.pairs.size() != b.pairs.size()) return false;
  for (std::size_t i = 0; i < a.pairs.size(); ++i)
    if (a.pairs[i].cos_u != b.pairs[i].cos_u || a.pairs[i].cos_v != b.pairs[i].cos_v) return false;
  return a.final_loss.total == b.final_loss.total;
}

}  // namespace

TEST(SweepAxis, NamesRoundTrip) {
  for (auto a : {SweepAxis::feature_prob, SweepAxis::lambda, SweepAxis::n_features, SweepAxis::head_dim,
                 SweepAxis::context_len, SweepAxis::seed, SweepAxis::n_pairs})
    EXPECT_EQ(parse_axis(axis_name(a)), a);
  EXPECT_THROW(parse_axis("temperature"), std::invalid_argument);
}

TEST(SweepSpec, DefaultLaddersCoverQuotedRanges) {
  EXPECT_EQ(SweepSpec::default_values(SweepAxis::lambda), (std::vector<double>{0.4, 1.3, 4, 12.6, 40}));
  const auto p = SweepSpec::default_values(SweepAxis::feature_prob);
  EXPECT_EQ(p.front(), 0.52);
  EXPECT_EQ(p.back(), 0.02);
  EXPECT_NE(std::find(p.begin(), p.end(), 0.038), p.end());
  EXPECT_EQ(SweepSpec::default_values(SweepAxis::head_dim), (std::vector<double>{10, 8, 6, 4}));
  EXPECT_EQ(SweepSpec::default_values(SweepAxis::context_len), (std::vector<double>{2, 4, 8}));
  EXPECT_EQ(SweepSpec::default_values(SweepAxis::seed).size(), 5u);
}

TEST(SweepSpec, ValidatesAxisValues) {
  EXPECT_THROW(tiny(SweepAxis::head_dim, {7}).validate(), std::invalid_argument);
  EXPECT_THROW(tiny(SweepAxis::context_len, {1}).validate(), std::invalid_argument);
  EXPECT_THROW(tiny(SweepAxis::feature_prob, {1.5}).validate(), std::invalid_argument);
  EXPECT_NO_THROW(tiny(SweepAxis::head_dim, {4, 2}).validate());
}

TEST(SweepSpec, CellConfigs) {
  const SweepSpec s = tiny(SweepAxis::lambda, {0.5});
  EXPECT_EQ(s.cell_model(0.5, 0).lambda, 0.5);
  EXPECT_EQ(s.cell_model(0.5, 3).seed, s.model.seed + 3);
  const SweepSpec h = tiny(SweepAxis::head_dim, {2});
  EXPECT_EQ(h.cell_model(2, 0).head_dim, 2u);
  const SweepSpec n = tiny(SweepAxis::n_pairs, {5});
  EXPECT_EQ(n.cell_target(5).size(), 5u);
}

TEST(Sweep, OneCellPerValueAndReplicate) {
  SweepSpec s = tiny(SweepAxis::lambda, {0.5, 2.0});
  s.replicates = 2;
  SweepOptions opt;
  opt.workers = 2;
  std::size_t seen = 0;
  opt.on_cell = [&](const SweepCell&) { ++seen; };
  const auto cells = run_sweep(s, opt);
  ASSERT_EQ(cells.size(), 4u);
  EXPECT_EQ(seen, 4u);
  EXPECT_EQ(cells[0].cell_id, "lambda=0.5/r0");
  EXPECT_EQ(cells[3].cell_id, "lambda=2/r1");
  for (const auto& c : cells) {
    EXPECT_TRUE(c.ok());
    EXPECT_EQ(c.pairs.size(), 4u);
    EXPECT_EQ(c.steps, 40u);
  }
}

TEST(Sweep, DeterministicAndWorkerIndependent) {
  const SweepSpec s = tiny(SweepAxis::seed, {0, 1, 2});
  SweepOptions one, three;
  three.workers = 3;
  const auto a = run_sweep(s, one), b = run_sweep(s, three);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_TRUE(same_cell(a[i], b[i])) << i;
  EXPECT_FALSE(same_cell(a[0], a[1]));
}

TEST(Sweep, SingleCellRerunMatchesSweep) {
  SweepSpec s = tiny(SweepAxis::context_len, {2, 4});
  s.replicates = 2;
  const auto cells = run_sweep(s);
  EXPECT_TRUE(same_cell(run_cell(s, 1, 1), cells[3]));
  EXPECT_TRUE(same_cell(run_cell(s, 0, 1), cells[1]));
}

TEST(Sweep, FailedCellIsRecordedAndSweepContinues) {
  SweepSpec s = tiny(SweepAxis::lambda, {1e300, 1.0});
  s.train.base_lr = 1e300;
  const auto cells = run_sweep(s);
  ASSERT_EQ(cells.size(), 2u);
  EXPECT_FALSE(cells[0].ok());
  EXPECT_EQ(cells[0].min_cos(), 0.0);
}

TEST(Sweep, EscalationRerunsFromScratch) {
  SweepSpec s = tiny(SweepAxis::lambda, {1.0});
  s.escalate_steps = 60;
  const SweepCell c = run_cell(s, 0, 0);
  // 40 steps cannot align anything, so the cell escalates.
  EXPECT_TRUE(c.escalated);
  EXPECT_EQ(c.steps, 60u);
}

TEST(Sweep, CellRunsAreStored) {
  const fs::path dir = fs::temp_directory_path() / "svf_sweep_store";
  fs::remove_all(dir);
  const SweepSpec s = tiny(SweepAxis::head_dim, {4});
  SweepOptions opt;
  opt.out_dir = dir;
  const auto cells = run_sweep(s, opt);
  const RunRecord back = io::load_run(dir / cell_dir(cells[0].cell_id));
  EXPECT_EQ(back.model.head_dim, 4u);
  EXPECT_EQ(back.last().step, 40u);
  fs::remove_all(dir);
}

TEST(OverCapacity, TargetLayout) {
  const TargetSpec t = over_capacity_target(10, 20);
  ASSERT_EQ(t.size(), 10u);
  EXPECT_EQ(t.entries()[0].key_feature, 10u);
  EXPECT_EQ(t.entries()[0].logit, 11.0);
  EXPECT_EQ(t.entries()[9].logit, 2.0);
  EXPECT_THROW(over_capacity_target(11, 20), std::invalid_argument);
}

TEST(OverCapacity, ResultShapesAndCollapseList) {
  OverCapacityOptions o;
  o.model.n_features = 12;
  o.model.token_dim = 6;
  o.model.head_dim = 3;
  o.train.steps = 30;
  o.train.batch_keys = 64;
  o.train.checkpoint_every = 30;
  const auto rs = over_capacity_study({3, 6}, o);
  ASSERT_EQ(rs.size(), 2u);
  EXPECT_EQ(rs[1].heat_u.rows(), 6u);
  EXPECT_EQ(rs[1].heat_u.cols(), 3u);
  for (std::size_t i = 0; i < rs[1].best_index.size(); ++i) {
    const bool last = rs[1].best_index[i] == 2;
    EXPECT_EQ(std::count(rs[1].collapsed.begin(), rs[1].collapsed.end(), i) == 1, last);
  }
  EXPECT_THROW(over_capacity_study({2}, o), std::invalid_argument);
  EXPECT_THROW(over_capacity_study({7}, o), std::invalid_argument);
}

TEST(SparsityControl, EarlyTablesUseFirstCheckpoint) {
  ModelConfig m;
  TrainConfig t;
  t.steps = 20;
  t.checkpoint_every = 10;
  const TargetSpec spec = TargetSpec::default_four_pairs();
  const RunRecord run = train(m, spec, t);
  StratifiedOptions opt;
  opt.n_eval_contexts = 128;
  opt.boot.resamples = 200;
  const SparsityControlStudy s = sparsity_control_study(run, spec, opt);
  EXPECT_EQ(s.early.step, 0u);
  EXPECT_EQ(s.late.step, 20u);
  EXPECT_FALSE(s.early.present.empty());
  EXPECT_FALSE(s.early.absent.empty());
  for (const auto& r : s.late.absent) EXPECT_EQ(r.stratum, Stratum::none);
  for (const auto& r : s.late.present) EXPECT_NE(r.stratum, Stratum::none);
}
