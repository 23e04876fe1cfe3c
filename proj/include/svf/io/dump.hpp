#pragma once

// Head dumps from real language models: a JSON manifest plus sibling binary
// files of little-endian float32, row-major, no padding. Arrays "wq" and "wk"
// (d_head x d_model) carry the 1/sqrt(d_head) attention scale already folded
// in; "resid" (seq_len x d_model) holds the inputs to the attention layer.

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "svf/linalg.hpp"

namespace svf::io {

struct DumpArray {
  std::string name;
  std::string dtype = "f32";
  std::vector<std::size_t> shape;
  std::string file;
  std::uint64_t byte_offset = 0;
};

struct DumpManifest {
  std::string model_name;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t d_model = 0;
  std::size_t d_head = 0;
  std::string prompt;
  std::vector<std::string> tokens;
  std::size_t checkpoint_step = 0;
  bool scale_folded = false;
  std::vector<DumpArray> arrays;
  // Free-form extractor telemetry, kept verbatim.
  std::string consistency_json;

  // "L<layer>H<head>"
  std::string label() const;
};

struct HeadSnapshot {
  DumpManifest manifest;
  Matrix wq;     // d_head x d_model
  Matrix wk;     // d_head x d_model
  Matrix resid;  // seq_len x d_model

  // wq^T wk (d_model x d_model)
  Matrix omega() const;
  std::size_t seq_len() const { return resid.rows(); }
};

enum class DumpErrorKind {
  unreadable,
  invalid_manifest,
  missing_array,
  unsupported_dtype,
  shape_mismatch,
  truncated,
  scale_not_folded,
};

const char* dump_error_name(DumpErrorKind kind);

class DumpError : public std::runtime_error {
 public:
  DumpError(DumpErrorKind kind, std::string array, const std::string& detail);
  DumpErrorKind kind() const noexcept { return kind_; }
  // Offending array name, empty for manifest-level failures.
  const std::string& array() const noexcept { return array_; }

 private:
  DumpErrorKind kind_;
  std::string array_;
};

HeadSnapshot load_dump(const std::filesystem::path& manifest_path);

// Writes one binary file per array (<name>.f32) next to the manifest and fills
// in the manifest's array table. Values are narrowed to float32.
void write_dump(const std::filesystem::path& manifest_path, const HeadSnapshot& snapshot);

}  // namespace svf::io
