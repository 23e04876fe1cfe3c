#pragma once

// Relative-attention decomposition on language-model head dumps. For a
// destination position j the keys are positions 0..j (causal mask), minus any
// excluded positions.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "svf/analysis.hpp"
#include "svf/io/dump.hpp"

namespace svf::io {

struct PairSpecEntry {
  std::string head;  // "L<layer>H<head>"
  std::size_t dest = 0;
  std::size_t src = 0;
};

using PairSpec = std::vector<PairSpecEntry>;

// {"schema_version": 1, "pairs": [{"head": "L9H6", "dest": 14, "src": 4}, ...]}
PairSpec load_pair_spec(const std::filesystem::path& path);

struct LmOptions {
  bool rotate = false;
  std::uint64_t seed = 0;
  std::vector<std::size_t> exclude_positions;
};

struct LmPairResult {
  std::string head;
  std::size_t dest = 0;
  std::size_t src = 0;
  std::size_t m = 0;  // attendable keys
  DecompositionRecord record;
  std::optional<DecompositionRecord> rotated;
};

struct LmDecomposition {
  std::vector<LmPairResult> pairs;
  std::vector<std::string> notices;  // skipped pairs and why
};

// Uses the entries whose head label matches the snapshot; throws
// std::out_of_range for positions outside the sequence.
LmDecomposition lm_decompose(const HeadSnapshot& snapshot, const PairSpec& pairs,
                             const LmOptions& options = {});

}  // namespace svf::io
