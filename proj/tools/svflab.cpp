// svflab: command-line front end.
//
//   svflab train --config cfg.json --out run1
//   svflab analyze alignment --run run1 --step last
//   svflab analyze decompose|sparsity|dynamics --run run1 --out reports
//   svflab sweep --spec lambda_sweep.json --out sweep1 --workers 4
//   svflab verify-theorems --only lemma3 --samples 1e6
//   svflab lm decompose --manifest dump/manifest.json --pairs ioi.json --out lm1

#include <cmath>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "svf/analysis.hpp"
#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"
#include "svf/io/dump.hpp"
#include "svf/io/lm.hpp"
#include "svf/io/reports.hpp"
#include "svf/io/run_store.hpp"
#include "svf/kernels.hpp"
#include "svf/sweeps.hpp"
#include "svf/theory.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

int report_error(const char* kind, const std::string& message, int code) {
  std::cerr << json{{"error", kind}, {"message", message}}.dump() << '\n';
  return code;
}

void emit_json(const json& j, const std::optional<fs::path>& out, const std::string& file) {
  const std::string text = j.dump(2) + "\n";
  if (out) svf::io::write_file_atomic(*out / file, text);
  std::cout << text;
}

std::string run_id_of(const fs::path& dir) {
  auto p = dir;
  if (p.filename().empty()) p = p.parent_path();
  return p.filename().string();
}

std::size_t parse_count(const std::string& s, const char* what) {
  double v = 0.0;
  try {
    std::size_t pos = 0;
    v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
  } catch (const std::exception&) {
    throw UsageError(std::string(what) + ": not a number: " + s);
  }
  if (!(v >= 1.0) || v != std::floor(v) || v > 1e12)
    throw UsageError(std::string(what) + ": expected a positive whole number, got " + s);
  return static_cast<std::size_t>(v);
}

struct AnalyzeArgs {
  std::string run;
  std::string step = "last";
  std::optional<std::string> out;
  std::size_t contexts = 64;
  bool rotate = false;
  std::uint64_t seed = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Singular-vector / feature alignment laboratory"};
  app.require_subcommand(1);
  std::string kernel_choice;
  app.add_option("--kernels", kernel_choice, "Force a kernel backend (scalar, avx2, neon)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a toy model and store the run directory");
  std::string train_config;
  std::string train_out;
  train_cmd->add_option("--config", train_config, "Run config (JSON)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out", train_out, "Run directory")->required();

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Analyses of a stored run");
  analyze->require_subcommand(1);
  AnalyzeArgs aa;
  auto add_common = [&](CLI::App* c) {
    c->add_option("--run", aa.run, "Run directory")->required()->check(CLI::ExistingDirectory);
    c->add_option("--out", aa.out, "Report directory");
  };
  auto* a_align = analyze->add_subcommand("alignment", "Singular-vector / feature cosine tables");
  add_common(a_align);
  a_align->add_option("--step", aa.step, "Checkpoint step or 'last'");
  auto* a_decomp = analyze->add_subcommand("decompose", "Relative-attention decomposition records");
  add_common(a_decomp);
  a_decomp->add_option("--step", aa.step, "Checkpoint step or 'last'");
  a_decomp->add_option("--contexts", aa.contexts, "Evaluation contexts");
  a_decomp->add_flag("--rotate", aa.rotate, "Add spectrum-preserving rotation baseline rows");
  a_decomp->add_option("--seed", aa.seed, "Rotation seed");
  auto* a_sparse = analyze->add_subcommand("sparsity", "Presence-stratified S(v) across checkpoints");
  add_common(a_sparse);
  aa.contexts = 512;
  a_sparse->add_option("--contexts", aa.contexts, "Evaluation contexts");
  a_sparse->add_flag("--rotate", aa.rotate, "Also summarize rotated baselines");
  auto* a_dyn = analyze->add_subcommand("dynamics", "Per-pair alignment across checkpoints");
  add_common(a_dyn);

  // sweep
  auto* sweep_cmd = app.add_subcommand("sweep", "Run a one-axis parameter sweep");
  std::string sweep_spec, sweep_out;
  std::size_t workers = 1;
  sweep_cmd->add_option("--spec", sweep_spec, "Sweep spec (JSON)")->required()->check(CLI::ExistingFile);
  sweep_cmd->add_option("--out", sweep_out, "Output directory")->required();
  sweep_cmd->add_option("--workers", workers, "Concurrent cells")->check(CLI::PositiveNumber);

  // verify-theorems
  auto* verify_cmd = app.add_subcommand("verify-theorems", "Numerical checks of the lemma and theorems");
  std::vector<std::string> only;
  std::string samples = "1e6";
  std::optional<std::string> verify_out;
  verify_cmd->add_option("--only", only, "lemma3, theorem1, theorem2, theorem3, theorem4")
      ->check(CLI::IsMember({"lemma3", "theorem1", "theorem2", "theorem3", "theorem4"}));
  verify_cmd->add_option("--samples", samples, "Monte-Carlo samples for lemma3");
  verify_cmd->add_option("--out", verify_out, "Report directory");

  // lm decompose
  auto* lm_cmd = app.add_subcommand("lm", "Language-model head dumps");
  lm_cmd->require_subcommand(1);
  auto* lm_decomp = lm_cmd->add_subcommand("decompose", "Decompose relative attention for listed pairs");
  std::string manifest, pairs_file, lm_out;
  bool lm_rotate = false;
  std::uint64_t lm_seed = 0;
  std::vector<std::size_t> exclude;
  lm_decomp->add_option("--manifest", manifest, "Dump manifest")->required()->check(CLI::ExistingFile);
  lm_decomp->add_option("--pairs", pairs_file, "Pair spec (JSON)")->required()->check(CLI::ExistingFile);
  lm_decomp->add_option("--out", lm_out, "Report directory")->required();
  lm_decomp->add_flag("--rotate", lm_rotate, "Add rotation baseline rows");
  lm_decomp->add_option("--seed", lm_seed, "Rotation seed");
  lm_decomp->add_option("--exclude-positions", exclude, "Key positions left out of every context")
      ->delimiter(',');

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what(), kExitUsage);
  }

  try {
    if (!kernel_choice.empty()) {
      using svf::kernels::Backend;
      bool known = false;
      for (Backend b : {Backend::scalar, Backend::avx2, Backend::neon})
        if (kernel_choice == svf::kernels::backend_name(b)) {
          svf::kernels::select(b);
          known = true;
        }
      if (!known) throw UsageError("--kernels: unknown backend " + kernel_choice);
    }

    if (*train_cmd) {
      const auto cfg = svf::io::load_run_config(train_config);
      svf::io::RunWriter writer(train_out);
      const auto run = svf::train(cfg.model, cfg.target, cfg.train, writer.hooks());
      writer.finish(run);
      std::cout << json{{"schema_version", svf::io::kSchemaVersion},
                        {"run", train_out},
                        {"steps", run.last().step},
                        {"recon", run.last().loss.recon},
                        {"attn", run.last().loss.attn},
                        {"total", run.last().loss.total}}
                       .dump()
                << '\n';
      return 0;
    }

    if (*analyze) {
      const auto run = svf::io::load_run(aa.run);
      const std::string run_id = run_id_of(aa.run);
      std::optional<fs::path> out;
      if (aa.out) out = fs::path(*aa.out);
      if (*a_align) {
        const auto step = svf::io::resolve_step(run, aa.step);
        const auto& p = run.at_step(step).params;
        emit_json(svf::io::alignment_json(svf::alignment(p.universe, p.head, run.target), run_id, step),
                  out, "alignment.json");
      } else if (*a_decomp) {
        if (!out) throw UsageError("analyze decompose: --out is required");
        const auto step = svf::io::resolve_step(run, aa.step);
        svf::StratifiedOptions opt;
        opt.n_eval_contexts = aa.contexts;
        opt.rotation_seed = aa.seed ? aa.seed : opt.rotation_seed;
        const auto strengths = svf::stratified_eval_strengths(run.model, opt);
        std::vector<svf::io::DecompositionRow> rows;
        for (bool rotated : {false, true}) {
          if (rotated && !aa.rotate) break;
          for (auto& r : svf::stratified_records(run.model, run.at_step(step).params, run.target,
                                                 strengths, opt, rotated))
            rows.push_back({run_id, step, "toy", std::move(r.record), r.stratum});
        }
        svf::io::write_file_atomic(*out / "decomposition.csv", svf::io::decomposition_csv(rows));
        svf::io::write_file_atomic(*out / "decomposition_terms.csv", svf::io::decomposition_terms_csv(rows));
        svf::io::write_report_manifest(*out, {"decomposition.csv", "decomposition_terms.csv"});
        std::cout << json{{"records", rows.size()}, {"out", out->string()}}.dump() << '\n';
      } else if (*a_sparse) {
        if (!out) throw UsageError("analyze sparsity: --out is required");
        svf::StratifiedOptions opt;
        opt.n_eval_contexts = aa.contexts;
        opt.with_rotated = aa.rotate;
        const auto rows = svf::presence_stratified_sparsity(run, run.target, opt);
        svf::io::write_file_atomic(*out / "sparsity.csv", svf::io::stratified_csv(rows));
        svf::io::write_report_manifest(*out, {"sparsity.csv"});
        std::cout << svf::io::stratified_csv({rows.back()});
      } else if (*a_dyn) {
        emit_json(svf::io::dynamics_json(svf::sv_feature_dynamics(run, run.target), run_id), out,
                  "dynamics.json");
      }
      return 0;
    }

    if (*sweep_cmd) {
      const auto spec = svf::io::load_sweep_spec(sweep_spec);
      svf::SweepOptions opt;
      opt.workers = workers;
      opt.out_dir = fs::path(sweep_out);
      opt.on_cell = [](const svf::SweepCell& c) {
        std::cerr << c.cell_id << (c.ok() ? "" : " failed: " + *c.error) << " min_cos "
                  << svf::io::format_number(c.min_cos()) << (c.escalated ? " (escalated)" : "") << '\n';
      };
      const auto cells = svf::run_sweep(spec, opt);
      svf::io::write_file_atomic(fs::path(sweep_out) / "sweep_summary.csv", svf::io::sweep_summary_csv(cells));
      svf::io::write_file_atomic(fs::path(sweep_out) / "sweep.json", svf::io::sweep_json(spec, cells).dump(2) + "\n");
      svf::io::write_report_manifest(sweep_out, {"sweep_summary.csv"});
      std::size_t failed = 0;
      for (const auto& c : cells) failed += !c.ok();
      std::cout << json{{"cells", cells.size()}, {"failed", failed}}.dump() << '\n';
      return 0;
    }

    if (*verify_cmd) {
      const auto verdicts = svf::theory::verify_all(parse_count(samples, "--samples"), only);
      std::optional<fs::path> out;
      if (verify_out) out = fs::path(*verify_out);
      std::cerr << svf::io::verdict_table(verdicts);
      emit_json(svf::io::verdicts_json(verdicts), out, "verdicts.json");
      for (const auto& v : verdicts)
        if (v.applicable && !v.bound_satisfied()) return kExitFailure;
      return 0;
    }

    if (*lm_cmd) {
      const auto snapshot = svf::io::load_dump(manifest);
      const auto pairs = svf::io::load_pair_spec(pairs_file);
      svf::io::LmOptions opt{lm_rotate, lm_seed, exclude};
      const auto result = svf::io::lm_decompose(snapshot, pairs, opt);
      for (const auto& n : result.notices) std::cerr << "notice: " << n << '\n';
      const auto rows = svf::io::lm_rows(result, snapshot.manifest.model_name,
                                         snapshot.manifest.checkpoint_step);
      const fs::path out(lm_out);
      svf::io::write_file_atomic(out / "decomposition.csv", svf::io::decomposition_csv(rows));
      svf::io::write_file_atomic(out / "decomposition_terms.csv", svf::io::decomposition_terms_csv(rows));
      svf::io::write_report_manifest(out, {"decomposition.csv", "decomposition_terms.csv"});
      std::cout << json{{"pairs", result.pairs.size()}, {"skipped", result.notices.size()}}.dump() << '\n';
      return 0;
    }
  } catch (const UsageError& e) {
    return report_error("usage", e.what(), kExitUsage);
  } catch (const svf::io::ConfigError& e) {
    return report_error("config", e.what(), kExitUsage);
  } catch (const svf::io::DumpError& e) {
    return report_error(svf::io::dump_error_name(e.kind()), e.what(), kExitUsage);
  } catch (const std::invalid_argument& e) {
    return report_error("invalid_argument", e.what(), kExitUsage);
  } catch (const std::out_of_range& e) {
    return report_error("out_of_range", e.what(), kExitUsage);
  } catch (const svf::TrainingDiverged& e) {
    return report_error("diverged", e.what(), kExitFailure);
  } catch (const std::exception& e) {
    return report_error("failure", e.what(), kExitFailure);
  }
  return 0;
}
