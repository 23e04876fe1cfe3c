#include "svf/io/lm.hpp"

#include <algorithm>

#include "json.hpp"
#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"

namespace svf::io {

PairSpec load_pair_spec(const std::filesystem::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  check_schema_version(j, "pair spec");
  PairSpec out;
  try {
    for (const auto& p : j.at("pairs"))
      out.push_back({p.at("head").get<std::string>(), p.at("dest").get<std::size_t>(),
                     p.at("src").get<std::size_t>()});
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  return out;
}

LmDecomposition lm_decompose(const HeadSnapshot& snapshot, const PairSpec& pairs,
                             const LmOptions& options) {
  const std::string label = snapshot.manifest.label();
  const std::size_t seq = snapshot.seq_len();
  const SvdResult omega_svd = svd_product_tn(snapshot.wq, snapshot.wk);
  auto excluded = [&](std::size_t pos) {
    return std::find(options.exclude_positions.begin(), options.exclude_positions.end(), pos) !=
           options.exclude_positions.end();
  };

  LmDecomposition out;
  for (const auto& p : pairs) {
    if (p.head != label) continue;
    if (p.dest >= seq || p.src >= seq)
      throw std::out_of_range("pair " + p.head + " (" + std::to_string(p.dest) + ", " +
                              std::to_string(p.src) + ") outside sequence of length " +
                              std::to_string(seq));
    const std::string where =
        p.head + " dest " + std::to_string(p.dest) + " src " + std::to_string(p.src);
    if (p.src > p.dest) {
      out.notices.push_back(where + ": source after destination is masked, skipped");
      continue;
    }
    if (excluded(p.src)) {
      out.notices.push_back(where + ": source position excluded, skipped");
      continue;
    }
    std::vector<std::size_t> positions;
    for (std::size_t k = 0; k <= p.dest; ++k)
      if (!excluded(k)) positions.push_back(k);
    if (positions.size() < 2) {
      out.notices.push_back(where + ": fewer than 2 attendable keys, skipped");
      continue;
    }
    Matrix keys(positions.size(), snapshot.resid.cols());
    std::size_t j = 0;
    for (std::size_t r = 0; r < positions.size(); ++r) {
      const auto src_row = snapshot.resid.row(positions[r]);
      std::copy(src_row.begin(), src_row.end(), keys.row(r).begin());
      if (positions[r] == p.src) j = r;
    }
    const auto query = snapshot.resid.row(p.dest);
    LmPairResult res;
    res.head = p.head;
    res.dest = p.dest;
    res.src = p.src;
    res.m = positions.size();
    res.record = decompose(omega_svd, query, keys, j);
    res.record.query_idx = p.dest;
    res.record.key_idx = p.src;
    if (options.rotate) {
      res.rotated = rotated_baseline(omega_svd, query, keys, j, options.seed);
      res.rotated->query_idx = p.dest;
      res.rotated->key_idx = p.src;
    }
    out.pairs.push_back(std::move(res));
  }
  return out;
}

}  // namespace svf::io
