#pragma once

// CSV (RFC 4180) and JSON report emission. CSV columns are fixed per report
// kind; every JSON report carries "schema_version", and report directories get
// a report_manifest.json naming each CSV with its schema version.

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "svf/analysis.hpp"
#include "svf/io/lm.hpp"
#include "svf/sweeps.hpp"
#include "svf/theory.hpp"

namespace svf::io {

// Shortest round-trip decimal form; "nan"/"inf" spelled out.
std::string format_number(double x);

// Quotes fields containing a comma, quote, CR or LF; doubles embedded quotes.
std::string csv_field(std::string_view s);

class CsvWriter {
 public:
  explicit CsvWriter(std::vector<std::string> header);
  void row(const std::vector<std::string>& fields);
  const std::string& str() const { return out_; }

 private:
  std::size_t width_;
  std::string out_;
};

struct DecompositionRow {
  std::string run_id;
  std::size_t step = 0;
  std::string head_id;
  DecompositionRecord record;
  std::optional<Stratum> stratum;
};

// run_id,step,head_id,query_idx,key_idx,rel_attn,s_metric,n_recon,rotated,stratum
std::string decomposition_csv(const std::vector<DecompositionRow>& rows);
// run_id,step,head_id,query_idx,key_idx,rotated,k,term
std::string decomposition_terms_csv(const std::vector<DecompositionRow>& rows);

// axis_value,replicate,pair_idx,cos_u,cos_v,sigma_idx,final_recon,final_attn
std::string sweep_summary_csv(const std::vector<SweepCell>& cells);

// step,rotated,stratum,count,mean,ci_lo,ci_hi
std::string stratified_csv(const std::vector<StratifiedRow>& rows);

std::vector<DecompositionRow> lm_rows(const LmDecomposition& d, const std::string& run_id,
                                      std::size_t step);

nlohmann::json alignment_json(const AlignmentReport& r, const std::string& run_id, std::size_t step);
nlohmann::json dynamics_json(const SvFeatureDynamics& d, const std::string& run_id);
nlohmann::json verdict_json(const theory::TheoremVerdict& v);
nlohmann::json verdicts_json(const std::vector<theory::TheoremVerdict>& vs);
std::string verdict_table(const std::vector<theory::TheoremVerdict>& vs);
nlohmann::json sweep_json(const SweepSpec& spec, const std::vector<SweepCell>& cells);

// Writes report_manifest.json listing the CSV files of a report directory.
void write_report_manifest(const std::filesystem::path& dir, const std::vector<std::string>& csv_files);

}  // namespace svf::io
