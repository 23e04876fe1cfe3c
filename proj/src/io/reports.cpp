#include "svf/io/reports.hpp"

#include <charconv>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"

namespace svf::io {

using nlohmann::json;

std::string format_number(double x) {
  if (std::isnan(x)) return "nan";
  if (std::isinf(x)) return x > 0 ? "inf" : "-inf";
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(s);
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : width_(header.size()) { row(header); }

void CsvWriter::row(const std::vector<std::string>& fields) {
  if (fields.size() != width_) throw std::logic_error("CsvWriter: row width mismatch");
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out_ += ',';
    out_ += csv_field(fields[i]);
  }
  out_ += "\r\n";
}

namespace {

std::string opt_number(const std::optional<double>& x) { return x ? format_number(*x) : ""; }

std::string opt_count(const std::optional<std::size_t>& x) {
  return x ? std::to_string(*x) : "";
}

json matrix_json(const Matrix& m) {
  json rows = json::array();
  for (std::size_t r = 0; r < m.rows(); ++r) {
    const auto row = m.row(r);
    rows.push_back(std::vector<double>(row.begin(), row.end()));
  }
  return rows;
}

}  // namespace

std::string decomposition_csv(const std::vector<DecompositionRow>& rows) {
  CsvWriter w({"run_id", "step", "head_id", "query_idx", "key_idx", "rel_attn", "s_metric",
               "n_recon", "rotated", "stratum"});
  for (const auto& r : rows)
    w.row({r.run_id, std::to_string(r.step), r.head_id, std::to_string(r.record.query_idx),
           std::to_string(r.record.key_idx), format_number(r.record.relative_attention),
           opt_number(r.record.sparsity_s), opt_count(r.record.n_recon),
           r.record.rotated ? "1" : "0", r.stratum ? stratum_name(*r.stratum) : ""});
  return w.str();
}

std::string decomposition_terms_csv(const std::vector<DecompositionRow>& rows) {
  CsvWriter w({"run_id", "step", "head_id", "query_idx", "key_idx", "rotated", "k", "term"});
  for (const auto& r : rows)
    for (std::size_t k = 0; k < r.record.terms.size(); ++k)
      w.row({r.run_id, std::to_string(r.step), r.head_id, std::to_string(r.record.query_idx),
             std::to_string(r.record.key_idx), r.record.rotated ? "1" : "0", std::to_string(k),
             format_number(r.record.terms[k])});
  return w.str();
}

std::string sweep_summary_csv(const std::vector<SweepCell>& cells) {
  CsvWriter w({"axis_value", "replicate", "pair_idx", "cos_u", "cos_v", "sigma_idx", "final_recon",
               "final_attn"});
  for (const auto& c : cells) {
    if (!c.ok()) continue;
    for (std::size_t i = 0; i < c.pairs.size(); ++i)
      w.row({format_number(c.axis_value), std::to_string(c.replicate), std::to_string(i),
             format_number(c.pairs[i].cos_u), format_number(c.pairs[i].cos_v),
             std::to_string(c.pairs[i].singular_idx), format_number(c.final_loss.recon),
             format_number(c.final_loss.attn)});
  }
  return w.str();
}

std::string stratified_csv(const std::vector<StratifiedRow>& rows) {
  CsvWriter w({"step", "rotated", "stratum", "count", "mean", "ci_lo", "ci_hi"});
  for (const auto& r : rows)
    for (int rot = 0; rot < 2; ++rot)
      for (std::size_t s = 0; s < 3; ++s) {
        const StratumSummary& x = rot ? r.rotated[s] : r.strata[s];
        if (rot && x.count == 0 && !x.mean) continue;
        w.row({std::to_string(r.step), rot ? "1" : "0", stratum_name(static_cast<Stratum>(s)),
               std::to_string(x.count), opt_number(x.mean),
               x.ci ? format_number(x.ci->lo) : "", x.ci ? format_number(x.ci->hi) : ""});
      }
  return w.str();
}

std::vector<DecompositionRow> lm_rows(const LmDecomposition& d, const std::string& run_id,
                                      std::size_t step) {
  std::vector<DecompositionRow> rows;
  for (const auto& p : d.pairs) {
    rows.push_back({run_id, step, p.head, p.record, std::nullopt});
    if (p.rotated) rows.push_back({run_id, step, p.head, *p.rotated, std::nullopt});
  }
  return rows;
}

json alignment_json(const AlignmentReport& r, const std::string& run_id, std::size_t step) {
  json pairs = json::array();
  for (const auto& p : r.pairs)
    pairs.push_back({{"query_feature", p.query_feature},
                     {"key_feature", p.key_feature},
                     {"logit", p.logit},
                     {"singular_idx", p.singular_idx},
                     {"cos_u", p.cos_u},
                     {"cos_v", p.cos_v}});
  return {{"schema_version", kSchemaVersion},
          {"run_id", run_id},
          {"step", step},
          {"sigma", r.sigma},
          {"pairs", pairs},
          {"cos_u_w", matrix_json(r.cos_u_w)},
          {"cos_v_w", matrix_json(r.cos_v_w)}};
}

json dynamics_json(const SvFeatureDynamics& d, const std::string& run_id) {
  return {{"schema_version", kSchemaVersion},
          {"run_id", run_id},
          {"steps", d.steps},
          {"cos_u", matrix_json(d.cos_u)},
          {"cos_v", matrix_json(d.cos_v)}};
}

json verdict_json(const theory::TheoremVerdict& v) {
  json checks = json::array();
  for (const auto& c : v.checks)
    checks.push_back({{"name", c.name},
                      {"measured", c.measured},
                      {"bound", c.bound},
                      {"tolerance", c.tolerance},
                      {"margin", c.margin()}});
  json q = json::object();
  for (const auto& x : v.quantities) q[x.name] = std::isfinite(x.value) ? json(x.value) : json(nullptr);
  const double margin = v.margin();
  return {{"theorem_id", v.theorem_id},
          {"applicable", v.applicable},
          {"note", v.note},
          {"checks", checks},
          {"quantities", q},
          {"bound_satisfied", v.bound_satisfied()},
          {"margin", std::isfinite(margin) ? json(margin) : json(nullptr)}};
}

json verdicts_json(const std::vector<theory::TheoremVerdict>& vs) {
  json arr = json::array();
  for (const auto& v : vs) arr.push_back(verdict_json(v));
  return {{"schema_version", kSchemaVersion}, {"verdicts", arr}};
}

std::string verdict_table(const std::vector<theory::TheoremVerdict>& vs) {
  std::ostringstream os;
  os << std::left << std::setw(10) << "theorem" << std::setw(8) << "result" << std::setw(14)
     << "margin" << " detail\n";
  for (const auto& v : vs) {
    const char* result = !v.applicable ? "n/a" : v.bound_satisfied() ? "pass" : "FAIL";
    os << std::setw(10) << v.theorem_id << std::setw(8) << result << std::setw(14)
       << format_number(v.margin()) << ' ' << v.note << '\n';
  }
  return os.str();
}

json sweep_json(const SweepSpec& spec, const std::vector<SweepCell>& cells) {
  json out = json::array();
  for (const auto& c : cells) {
    json pairs = json::array();
    for (const auto& p : c.pairs)
      pairs.push_back({{"query_feature", p.query_feature},
                       {"key_feature", p.key_feature},
                       {"singular_idx", p.singular_idx},
                       {"cos_u", p.cos_u},
                       {"cos_v", p.cos_v}});
    json cell = {{"cell_id", c.cell_id},
                 {"axis_value", c.axis_value},
                 {"replicate", c.replicate},
                 {"steps", c.steps},
                 {"escalated", c.escalated},
                 {"min_cos", c.min_cos()},
                 {"pairs", pairs},
                 {"final_recon", c.final_loss.recon},
                 {"final_attn", c.final_loss.attn}};
    if (c.error) cell["error"] = *c.error;
    out.push_back(std::move(cell));
  }
  json j = to_json(spec);
  j["cells"] = std::move(out);
  return j;
}

void write_report_manifest(const std::filesystem::path& dir, const std::vector<std::string>& csv_files) {
  json files = json::array();
  for (const auto& f : csv_files) files.push_back({{"file", f}, {"schema_version", kSchemaVersion}});
  write_file_atomic(dir / "report_manifest.json",
                    json{{"schema_version", kSchemaVersion}, {"files", files}}.dump(2) + "\n");
}

}  // namespace svf::io
