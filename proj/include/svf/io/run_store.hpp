#pragma once

// Run directory layout:
//   run.json        configs and the checkpoint index
//   ckpt_<step>.bin parameters, optimizer moments and sampler state
//   losses.csv      step,recon,attn,total

#include <filesystem>
#include <string>

#include "svf/trainer.hpp"

namespace svf::io {

std::string checkpoint_file_name(std::size_t step);

std::string encode_checkpoint(const Checkpoint& c);
Checkpoint decode_checkpoint(std::string_view bytes);

void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& c);
Checkpoint read_checkpoint(const std::filesystem::path& dir, std::size_t step);

// Writes every checkpoint file, then losses.csv, then run.json.
void save_run(const std::filesystem::path& dir, const RunRecord& run);
// Index files only; checkpoint files are assumed written already (see RunWriter).
void save_run_index(const std::filesystem::path& dir, const RunRecord& run);

RunRecord load_run(const std::filesystem::path& dir);

// Streams checkpoints to disk while training runs.
class RunWriter {
 public:
  explicit RunWriter(std::filesystem::path dir);
  TrainHooks hooks();
  void finish(const RunRecord& run);

 private:
  std::filesystem::path dir_;
};

// "last" or a step number.
std::size_t resolve_step(const RunRecord& run, const std::string& which);

}  // namespace svf::io
