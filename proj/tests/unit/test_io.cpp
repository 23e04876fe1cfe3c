#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"
#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"
#include "svf/io/dump.hpp"
#include "svf/io/lm.hpp"
#include "svf/io/reports.hpp"
#include "svf/io/run_store.hpp"

using namespace svf;
using namespace svf::io;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kFixtures = SVF_FIXTURE_DIR;

class TempDir {
 public:
  TempDir() {
    path_ = fs::temp_directory_path() /
            ("svf_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
             ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

fs::path copy_fixture(const std::string& name, const fs::path& into) {
  const fs::path dst = into / name;
  fs::copy(kFixtures / name, dst, fs::copy_options::recursive);
  return dst;
}

DumpErrorKind load_error(const fs::path& manifest, std::string* array = nullptr) {
  try {
    load_dump(manifest);
  } catch (const DumpError& e) {
    if (array) *array = e.array();
    return e.kind();
  }
  ADD_FAILURE() << "load_dump succeeded on " << manifest;
  return DumpErrorKind::unreadable;
}

std::vector<std::string> lines(const std::string& s) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < s.size()) {
    std::size_t e = s.find('\n', pos);
    if (e == std::string::npos) e = s.size();
    std::string line = s.substr(pos, e - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    out.push_back(std::move(line));
    pos = e + 1;
  }
  return out;
}

}  // namespace

TEST(AtomicFile, WritesAndReplaces) {
  TempDir t;
  const fs::path p = t.path() / "a.txt";
  write_file_atomic(p, "first");
  EXPECT_EQ(read_file(p), "first");
  write_file_atomic(p, "second");
  EXPECT_EQ(read_file(p), "second");
  std::size_t entries = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(t.path())) ++entries;
  EXPECT_EQ(entries, 1u);
  EXPECT_THROW(read_file(t.path() / "missing"), std::runtime_error);
}

TEST(Config, RoundTripsEveryField) {
  RunConfig c;
  c.model.n_features = 30;
  c.model.lambda = 1.25;
  c.model.recon_reduction = ReconReduction::mean;
  c.train.steps = 777;
  c.train.adamw.weight_decay = 0.01;
  c.target = TargetSpec::default_four_pairs();
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(back.model.n_features, 30u);
  EXPECT_EQ(back.model.lambda, 1.25);
  EXPECT_EQ(back.model.recon_reduction, ReconReduction::mean);
  EXPECT_EQ(back.train.steps, 777u);
  EXPECT_EQ(back.train.adamw.weight_decay, 0.01);
  EXPECT_EQ(back.target.size(), 4u);
  EXPECT_EQ(to_json(back), to_json(c));
}

TEST(Config, DefaultsAndPresets) {
  const RunConfig c = run_config_from_json(json{{"schema_version", 1}, {"target", {{"preset", "four_pairs"}}}});
  EXPECT_EQ(c.model.n_features, 20u);
  EXPECT_EQ(c.train.steps, 10000u);
  EXPECT_EQ(c.target.ranked()[0].logit, 24.0);
}

TEST(Config, RejectsUnknownFieldsAndBadVersions) {
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1}, {"modle", json::object()}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1}, {"model", {{"n_feature", 3}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 2}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json::object()), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1}, {"model", {{"n_features", "x"}}}}), ConfigError);
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1}, {"target", {{"preset", "nope"}}}}), ConfigError);
  // target index beyond N
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1},
                                         {"target", json::array({{{"query", 0}, {"key", 40}, {"logit", 1}}})}}),
               ConfigError);
  // batch_keys not a multiple of m
  EXPECT_THROW(run_config_from_json(json{{"schema_version", 1}, {"train", {{"batch_keys", 1023}}}}), ConfigError);
}

TEST(Config, SweepSpecDefaultsLadder) {
  const SweepSpec s = sweep_spec_from_json(json{{"schema_version", 1}, {"axis", "lambda"}});
  EXPECT_EQ(s.values, SweepSpec::default_values(SweepAxis::lambda));
  EXPECT_EQ(s.values.size(), 5u);
  EXPECT_EQ(sweep_spec_from_json(to_json(s)).values, s.values);
  EXPECT_THROW(sweep_spec_from_json(json{{"schema_version", 1}, {"axis", "colour"}}), ConfigError);
  EXPECT_THROW(sweep_spec_from_json(json{{"schema_version", 1}, {"axis", "head_dim"}, {"values", {11}}}),
               ConfigError);
}

TEST(RunStore, CheckpointEncodingRoundTrips) {
  ModelConfig m;
  TrainConfig t;
  t.steps = 5;
  t.checkpoint_every = 5;
  const RunRecord run = train(m, TargetSpec::default_four_pairs(), t);
  const Checkpoint& c = run.last();
  const std::string bytes = encode_checkpoint(c);
  EXPECT_EQ(bytes.substr(0, 8), "SVFCKPT1");
  const Checkpoint back = decode_checkpoint(bytes);
  EXPECT_EQ(back.step, c.step);
  EXPECT_EQ(back.params, c.params);
  EXPECT_EQ(back.optimizer, c.optimizer);
  EXPECT_EQ(back.rng_state, c.rng_state);
  EXPECT_EQ(back.loss.total, c.loss.total);
  EXPECT_THROW(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), std::runtime_error);
  EXPECT_THROW(decode_checkpoint("NOTACKPT" + bytes.substr(8)), std::runtime_error);
}

TEST(RunStore, DirectoryRoundTripAndStreaming) {
  TempDir tmp;
  ModelConfig m;
  TrainConfig t;
  t.steps = 30;
  t.checkpoint_every = 10;
  const TargetSpec spec = TargetSpec::default_four_pairs();

  RunWriter writer(tmp.path() / "run");
  const RunRecord run = train(m, spec, t, writer.hooks());
  writer.finish(run);
  for (std::size_t s : {0, 10, 20, 30}) EXPECT_TRUE(fs::exists(tmp.path() / "run" / checkpoint_file_name(s)));
  EXPECT_TRUE(fs::exists(tmp.path() / "run" / "run.json"));

  const RunRecord back = load_run(tmp.path() / "run");
  ASSERT_EQ(back.checkpoints.size(), 4u);
  EXPECT_EQ(back.last().params, run.last().params);
  EXPECT_EQ(to_json(back.model), to_json(m));
  EXPECT_EQ(resolve_step(back, "last"), 30u);
  EXPECT_EQ(resolve_step(back, "20"), 20u);
  EXPECT_THROW(resolve_step(back, "25"), std::out_of_range);

  const std::string csv = read_file(tmp.path() / "run" / "losses.csv");
  EXPECT_EQ(lines(csv)[0], "step,recon,attn,total");
  EXPECT_EQ(lines(csv).size(), 5u);

  save_run(tmp.path() / "copy", run);
  EXPECT_EQ(load_run(tmp.path() / "copy").checkpoints[2].params, run.checkpoints[2].params);
}

TEST(Dump, HandBuiltFixtureGivesExpectedOmega) {
  const HeadSnapshot s = load_dump(kFixtures / "two_token" / "manifest.json");
  EXPECT_EQ(s.manifest.label(), "L0H1");
  EXPECT_EQ(s.seq_len(), 2u);
  EXPECT_EQ(s.manifest.tokens[1], " b");
  // wq rows 0.5 e0, 0.5 e1; wk rows 2 e1, e0: Omega' = e0 e1^T + 0.5 e1 e0^T.
  Matrix expected(4, 4);
  expected(0, 1) = 1.0;
  expected(1, 0) = 0.5;
  EXPECT_EQ(s.omega(), expected);
  EXPECT_EQ(s.resid(1, 3), 0.25);
}

TEST(Dump, ByteOffsetsIntoSharedFile) {
  const HeadSnapshot a = load_dump(kFixtures / "two_token" / "manifest.json");
  const HeadSnapshot b = load_dump(kFixtures / "packed" / "manifest.json");
  EXPECT_EQ(a.wq, b.wq);
  EXPECT_EQ(a.wk, b.wk);
  EXPECT_EQ(a.resid, b.resid);
}

TEST(Dump, MissingScaleFlagIsDistinctFailure) {
  EXPECT_EQ(load_error(kFixtures / "no_scale" / "manifest.json"), DumpErrorKind::scale_not_folded);
}

TEST(Dump, TruncatedArrayIsNamed) {
  TempDir tmp;
  const fs::path dir = copy_fixture("two_token", tmp.path());
  fs::resize_file(dir / "wk.f32", 20);
  std::string array;
  EXPECT_EQ(load_error(dir / "manifest.json", &array), DumpErrorKind::truncated);
  EXPECT_EQ(array, "wk");
}

TEST(Dump, ManifestProblemsAreDistinct) {
  TempDir tmp;
  const fs::path dir = copy_fixture("two_token", tmp.path());
  const json original = json::parse(read_file(dir / "manifest.json"));
  auto with = [&](const std::function<void(json&)>& edit) {
    json j = original;
    edit(j);
    write_file_atomic(dir / "manifest.json", j.dump());
    return dir / "manifest.json";
  };
  std::string array;
  EXPECT_EQ(load_error(with([](json& j) { j["arrays"].erase(1); }), &array), DumpErrorKind::missing_array);
  EXPECT_EQ(array, "wk");
  EXPECT_EQ(load_error(with([](json& j) { j["arrays"][0]["dtype"] = "f16"; })), DumpErrorKind::unsupported_dtype);
  EXPECT_EQ(load_error(with([](json& j) { j["arrays"][0]["shape"] = {4, 2}; }), &array),
            DumpErrorKind::shape_mismatch);
  EXPECT_EQ(array, "wq");
  EXPECT_EQ(load_error(with([](json& j) { j["tokens"].push_back("c"); })), DumpErrorKind::shape_mismatch);
  EXPECT_EQ(load_error(with([](json& j) { j.erase("d_model"); })), DumpErrorKind::invalid_manifest);
  EXPECT_EQ(load_error(with([](json& j) { j["schema_version"] = 9; })), DumpErrorKind::invalid_manifest);
  EXPECT_EQ(load_error(with([](json& j) { j["arrays"][2]["file"] = "nope.f32"; }), &array),
            DumpErrorKind::missing_array);
  EXPECT_EQ(array, "resid");
  EXPECT_EQ(load_error(tmp.path() / "absent.json"), DumpErrorKind::unreadable);
}

TEST(Dump, WriteThenLoadIsBitwiseIdentical) {
  TempDir tmp;
  for (const char* name : {"two_token", "packed", "rank_one"}) {
    const HeadSnapshot a = load_dump(kFixtures / name / "manifest.json");
    const fs::path out = tmp.path() / name / "manifest.json";
    write_dump(out, a);
    const HeadSnapshot b = load_dump(out);
    EXPECT_EQ(a.wq, b.wq) << name;
    EXPECT_EQ(a.wk, b.wk) << name;
    EXPECT_EQ(a.resid, b.resid) << name;
    EXPECT_EQ(a.manifest.tokens, b.manifest.tokens);
    EXPECT_EQ(a.manifest.consistency_json, b.manifest.consistency_json);
    // Re-writing the reloaded snapshot reproduces the same bytes.
    write_dump(tmp.path() / (std::string(name) + "2") / "manifest.json", b);
    for (const char* arr : {"wq.f32", "wk.f32", "resid.f32"})
      EXPECT_EQ(read_file(out.parent_path() / arr),
                read_file(tmp.path() / (std::string(name) + "2") / arr));
  }
  // The fixture's own array file decodes to the same float32 bits.
  const std::string raw = read_file(kFixtures / "two_token" / "wq.f32");
  const HeadSnapshot s = load_dump(kFixtures / "two_token" / "manifest.json");
  for (std::size_t i = 0; i < 8; ++i) {
    float f;
    std::memcpy(&f, raw.data() + 4 * i, 4);
    EXPECT_EQ(static_cast<double>(f), s.wq.storage()[i]);
  }
}

TEST(Lm, RankOneHeadDecomposition) {
  const HeadSnapshot s = load_dump(kFixtures / "rank_one" / "manifest.json");
  const PairSpec pairs = load_pair_spec(kFixtures / "rank_one" / "pairs.json");
  ASSERT_EQ(pairs.size(), 4u);
  const LmDecomposition d = lm_decompose(s, pairs);
  // L9H9 belongs to another head; dest 0 has a single key.
  ASSERT_EQ(d.pairs.size(), 2u);
  ASSERT_EQ(d.notices.size(), 1u);
  EXPECT_NE(d.notices[0].find("fewer than 2"), std::string::npos);

  // Omega' = e0 (2, 2, 0.5, 0): logits of keys 0..3 against token 3 are 1.5, 2.5, 2, 2.25.
  const LmPairResult& a = d.pairs[0];
  EXPECT_EQ(a.m, 4u);
  EXPECT_NEAR(a.record.relative_attention, 2.5 - (1.5 + 2.0 + 2.25) / 3.0, 1e-6);
  ASSERT_EQ(a.record.terms.size(), 2u);
  EXPECT_NEAR(a.record.terms[1], 0.0, 1e-6);
  EXPECT_EQ(a.record.n_recon, 1u);
  EXPECT_NEAR(*a.record.sparsity_s, 0.5, 1e-6);

  const LmPairResult& b = d.pairs[1];
  EXPECT_EQ(b.m, 3u);
  // Token 2 has no e0 component, so every logit against it is zero.
  EXPECT_EQ(b.record.relative_attention, 0.0);
  EXPECT_FALSE(b.record.n_recon.has_value());
  EXPECT_FALSE(b.record.sparsity_s.has_value());
}

TEST(Lm, ExclusionsRotationAndRangeErrors) {
  const HeadSnapshot s = load_dump(kFixtures / "rank_one" / "manifest.json");
  LmOptions opt;
  opt.exclude_positions = {0};
  opt.rotate = true;
  opt.seed = 4;
  const LmDecomposition d = lm_decompose(s, {{"L2H3", 3, 1}, {"L2H3", 2, 0}, {"L2H3", 1, 2}}, opt);
  ASSERT_EQ(d.pairs.size(), 1u);
  EXPECT_EQ(d.pairs[0].m, 3u);
  EXPECT_NEAR(d.pairs[0].record.relative_attention, 2.5 - (2.0 + 2.25) / 2.0, 1e-6);
  ASSERT_TRUE(d.pairs[0].rotated.has_value());
  EXPECT_TRUE(d.pairs[0].rotated->rotated);
  EXPECT_EQ(d.notices.size(), 2u);
  EXPECT_THROW(lm_decompose(s, {{"L2H3", 7, 1}}), std::out_of_range);

  const auto rows = lm_rows(d, "fixture", s.manifest.checkpoint_step);
  EXPECT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].head_id, "L2H3");
}

TEST(Csv, QuotingFollowsRfc4180) {
  EXPECT_EQ(csv_field("plain"), "plain");
  EXPECT_EQ(csv_field("a,b"), "\"a,b\"");
  EXPECT_EQ(csv_field("say \"hi\""), "\"say \"\"hi\"\"\"");
  EXPECT_EQ(csv_field("two\nlines"), "\"two\nlines\"");
  EXPECT_EQ(csv_field(""), "");
  CsvWriter w({"x", "y"});
  w.row({"1", "a,b"});
  EXPECT_EQ(w.str(), "x,y\r\n1,\"a,b\"\r\n");
  EXPECT_THROW(w.row({"only one"}), std::logic_error);
}

TEST(Csv, NumbersRoundTrip) {
  for (double x : {0.1, 1.0 / 3.0, -2.5e-300, 12345678.9}) EXPECT_EQ(std::stod(format_number(x)), x);
  EXPECT_EQ(format_number(NAN), "nan");
  EXPECT_EQ(format_number(INFINITY), "inf");
}

TEST(Reports, DecompositionColumnsAndMissingValues) {
  DecompositionRecord r;
  r.query_idx = 3;
  r.key_idx = 1;
  r.terms = {0.5, -0.25};
  r.relative_attention = 0.25;
  r.sparsity_s = 0.9;
  std::vector<DecompositionRow> rows{{"run,1", 100, "toy", r, Stratum::one}};
  r.n_recon = 2;
  r.sparsity_s.reset();
  rows.push_back({"run2", 100, "toy", r, std::nullopt});
  const auto ls = lines(decomposition_csv(rows));
  ASSERT_EQ(ls.size(), 3u);
  EXPECT_EQ(ls[0], "run_id,step,head_id,query_idx,key_idx,rel_attn,s_metric,n_recon,rotated,stratum");
  EXPECT_EQ(ls[1], "\"run,1\",100,toy,3,1,0.25,0.9,,0,1");
  EXPECT_EQ(ls[2], "run2,100,toy,3,1,0.25,,2,0,");
  EXPECT_EQ(lines(decomposition_terms_csv(rows)).size(), 5u);
}

TEST(Reports, SweepSummarySkipsFailedCells) {
  SweepCell ok;
  ok.axis_value = 4;
  ok.pairs.resize(4);
  SweepCell bad;
  bad.error = "diverged";
  const auto ls = lines(sweep_summary_csv({ok, bad, ok}));
  EXPECT_EQ(ls.size(), 9u);
  EXPECT_EQ(ls[0], "axis_value,replicate,pair_idx,cos_u,cos_v,sigma_idx,final_recon,final_attn");
}

TEST(Reports, VerdictJsonRecomputesFromChecks) {
  theory::TheoremVerdict v;
  v.theorem_id = "theoremX";
  v.checks.push_back({"sin", 0.1, 0.4, 0.0});
  const json j = verdicts_json({v});
  EXPECT_EQ(j["schema_version"], kSchemaVersion);
  EXPECT_EQ(j["verdicts"][0]["bound_satisfied"], true);
  EXPECT_NEAR(j["verdicts"][0]["margin"].get<double>(), 0.3, 1e-15);
  EXPECT_NE(verdict_table({v}).find("theoremX"), std::string::npos);
}

TEST(Reports, ManifestListsCsvFiles) {
  TempDir tmp;
  write_report_manifest(tmp.path(), {"a.csv", "b.csv"});
  const json j = json::parse(read_file(tmp.path() / "report_manifest.json"));
  EXPECT_EQ(j["schema_version"], kSchemaVersion);
  EXPECT_EQ(j.dump().find("a.csv") != std::string::npos, true);
}
