#include "svf/io/dump.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "json.hpp"
#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"

namespace svf::io {

static_assert(std::endian::native == std::endian::little, "dump format is little-endian");

using nlohmann::json;

std::string DumpManifest::label() const {
  return "L" + std::to_string(layer) + "H" + std::to_string(head);
}

Matrix HeadSnapshot::omega() const { return matmul_tn(wq, wk); }

const char* dump_error_name(DumpErrorKind kind) {
  switch (kind) {
    case DumpErrorKind::unreadable: return "unreadable";
    case DumpErrorKind::invalid_manifest: return "invalid_manifest";
    case DumpErrorKind::missing_array: return "missing_array";
    case DumpErrorKind::unsupported_dtype: return "unsupported_dtype";
    case DumpErrorKind::shape_mismatch: return "shape_mismatch";
    case DumpErrorKind::truncated: return "truncated";
    case DumpErrorKind::scale_not_folded: return "scale_not_folded";
  }
  return "unknown";
}

DumpError::DumpError(DumpErrorKind kind, std::string array, const std::string& detail)
    : std::runtime_error(std::string(dump_error_name(kind)) +
                         (array.empty() ? "" : " [" + array + "]") + ": " + detail),
      kind_(kind),
      array_(std::move(array)) {}

namespace {

DumpManifest parse_manifest(const json& j) {
  DumpManifest m;
  try {
    check_schema_version(j, "dump manifest");
    j.at("model_name").get_to(m.model_name);
    j.at("layer").get_to(m.layer);
    j.at("head").get_to(m.head);
    j.at("d_model").get_to(m.d_model);
    j.at("d_head").get_to(m.d_head);
    m.prompt = j.value("prompt", std::string{});
    m.tokens = j.value("tokens", std::vector<std::string>{});
    m.checkpoint_step = j.value("checkpoint_step", std::size_t{0});
    m.scale_folded = j.value("scale_folded", false);
    if (j.contains("consistency")) m.consistency_json = j["consistency"].dump();
    for (const auto& a : j.at("arrays")) {
      DumpArray d;
      a.at("name").get_to(d.name);
      d.dtype = a.value("dtype", std::string{"f32"});
      a.at("shape").get_to(d.shape);
      a.at("file").get_to(d.file);
      d.byte_offset = a.value("byte_offset", std::uint64_t{0});
      m.arrays.push_back(std::move(d));
    }
  } catch (const json::exception& e) {
    throw DumpError(DumpErrorKind::invalid_manifest, "", e.what());
  } catch (const ConfigError& e) {
    throw DumpError(DumpErrorKind::invalid_manifest, "", e.what());
  }
  return m;
}

json manifest_json(const DumpManifest& m) {
  json arrays = json::array();
  for (const auto& a : m.arrays)
    arrays.push_back({{"name", a.name},
                      {"dtype", a.dtype},
                      {"shape", a.shape},
                      {"file", a.file},
                      {"byte_offset", a.byte_offset}});
  json j = {{"schema_version", kSchemaVersion},
            {"model_name", m.model_name},
            {"layer", m.layer},
            {"head", m.head},
            {"d_model", m.d_model},
            {"d_head", m.d_head},
            {"prompt", m.prompt},
            {"tokens", m.tokens},
            {"checkpoint_step", m.checkpoint_step},
            {"scale_folded", m.scale_folded},
            {"arrays", arrays}};
  if (!m.consistency_json.empty()) j["consistency"] = json::parse(m.consistency_json);
  return j;
}

const DumpArray& find_array(const DumpManifest& m, const std::string& name) {
  for (const auto& a : m.arrays)
    if (a.name == name) return a;
  throw DumpError(DumpErrorKind::missing_array, name, "array not listed in manifest");
}

Matrix read_array(const std::filesystem::path& base, const DumpArray& a, std::size_t rows,
                  std::size_t cols) {
  if (a.dtype != "f32") throw DumpError(DumpErrorKind::unsupported_dtype, a.name, "dtype " + a.dtype);
  if (a.shape.size() != 2 || a.shape[0] != rows || a.shape[1] != cols)
    throw DumpError(DumpErrorKind::shape_mismatch, a.name,
                    "expected shape [" + std::to_string(rows) + ", " + std::to_string(cols) + "]");
  const auto path = base / a.file;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DumpError(DumpErrorKind::missing_array, a.name, "cannot open " + path.string());
  in.seekg(0, std::ios::end);
  const auto size = static_cast<std::uint64_t>(in.tellg());
  const std::uint64_t need = static_cast<std::uint64_t>(rows) * cols * sizeof(float);
  if (size < a.byte_offset || size - a.byte_offset < need)
    throw DumpError(DumpErrorKind::truncated, a.name,
                    path.string() + " holds " + std::to_string(size) + " bytes, need " +
                        std::to_string(a.byte_offset + need));
  std::vector<float> buf(rows * cols);
  in.seekg(static_cast<std::streamoff>(a.byte_offset));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(need));
  if (!in) throw DumpError(DumpErrorKind::truncated, a.name, "short read from " + path.string());
  Matrix out(rows, cols);
  for (std::size_t i = 0; i < buf.size(); ++i) out.data()[i] = static_cast<double>(buf[i]);
  return out;
}

}  // namespace

HeadSnapshot load_dump(const std::filesystem::path& manifest_path) {
  json j;
  try {
    j = json::parse(read_file(manifest_path));
  } catch (const json::exception& e) {
    throw DumpError(DumpErrorKind::invalid_manifest, "", e.what());
  } catch (const std::exception& e) {
    throw DumpError(DumpErrorKind::unreadable, "", e.what());
  }
  HeadSnapshot s;
  s.manifest = parse_manifest(j);
  const auto& m = s.manifest;
  if (!m.scale_folded)
    throw DumpError(DumpErrorKind::scale_not_folded, "",
                    "manifest must declare scale_folded: true (1/sqrt(d_head) folded into wq)");
  const auto base = manifest_path.parent_path();
  const DumpArray& resid = find_array(m, "resid");
  const DumpArray& wq = find_array(m, "wq");
  const DumpArray& wk = find_array(m, "wk");
  if (resid.shape.size() != 2)
    throw DumpError(DumpErrorKind::shape_mismatch, "resid", "expected a 2-d array");
  const std::size_t seq = resid.shape[0];
  if (!m.tokens.empty() && m.tokens.size() != seq)
    throw DumpError(DumpErrorKind::shape_mismatch, "resid",
                    "seq_len " + std::to_string(seq) + " != token count " +
                        std::to_string(m.tokens.size()));
  s.wq = read_array(base, wq, m.d_head, m.d_model);
  s.wk = read_array(base, wk, m.d_head, m.d_model);
  s.resid = read_array(base, resid, seq, m.d_model);
  return s;
}

void write_dump(const std::filesystem::path& manifest_path, const HeadSnapshot& snapshot) {
  DumpManifest m = snapshot.manifest;
  m.arrays.clear();
  const auto base = manifest_path.parent_path();
  auto emit = [&](const std::string& name, const Matrix& a) {
    std::string bytes(a.size() * sizeof(float), '\0');
    for (std::size_t i = 0; i < a.size(); ++i) {
      const float f = static_cast<float>(a.data()[i]);
      std::memcpy(bytes.data() + i * sizeof(float), &f, sizeof f);
    }
    const std::string file = name + ".f32";
    write_file_atomic(base / file, bytes);
    m.arrays.push_back({name, "f32", {a.rows(), a.cols()}, file, 0});
  };
  emit("wq", snapshot.wq);
  emit("wk", snapshot.wk);
  emit("resid", snapshot.resid);
  write_file_atomic(manifest_path, manifest_json(m).dump(2) + "\n");
}

}  // namespace svf::io
