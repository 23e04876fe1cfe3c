#include "svf/io/run_store.hpp"

#include <bit>
#include <cstring>
#include <sstream>
#include <stdexcept>

#include "json.hpp"
#include "svf/io/atomic_file.hpp"
#include "svf/io/config.hpp"

namespace svf::io {

static_assert(std::endian::native == std::endian::little,
              "checkpoint encoding assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'S', 'V', 'F', 'C', 'K', 'P', 'T', '1'};

class Writer {
 public:
  void u64(std::uint64_t v) { raw(&v, sizeof v); }
  void f64(double v) { raw(&v, sizeof v); }
  void doubles(std::span<const double> xs) {
    u64(xs.size());
    raw(xs.data(), xs.size() * sizeof(double));
  }
  void matrix(const Matrix& m) {
    u64(m.rows());
    u64(m.cols());
    raw(m.data().data(), m.size() * sizeof(double));
  }
  void bytes(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
  }
  void raw(const void* p, std::size_t n) { out_.append(static_cast<const char*>(p), n); }
  std::string take() { return std::move(out_); }

 private:
  std::string out_;
};

class Reader {
 public:
  explicit Reader(std::string_view in) : in_(in) {}
  std::uint64_t u64() {
    std::uint64_t v;
    raw(&v, sizeof v);
    return v;
  }
  double f64() {
    double v;
    raw(&v, sizeof v);
    return v;
  }
  Vector doubles() {
    Vector v(checked_count(u64(), sizeof(double)));
    raw(v.data(), v.size() * sizeof(double));
    return v;
  }
  Matrix matrix() {
    const std::size_t r = u64(), c = u64();
    if (c != 0 && r > (in_.size() - pos_) / sizeof(double) / c)
      throw std::runtime_error("checkpoint: matrix extends past end of data");
    Matrix m(r, c);
    raw(m.data().data(), m.size() * sizeof(double));
    return m;
  }
  std::string bytes() {
    std::string s(checked_count(u64(), 1), '\0');
    raw(s.data(), s.size());
    return s;
  }
  void raw(void* p, std::size_t n) {
    if (n > in_.size() - pos_) throw std::runtime_error("checkpoint: truncated data");
    std::memcpy(p, in_.data() + pos_, n);
    pos_ += n;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  std::size_t checked_count(std::uint64_t n, std::size_t width) const {
    if (n > (in_.size() - pos_) / width) throw std::runtime_error("checkpoint: truncated data");
    return static_cast<std::size_t>(n);
  }
  std::string_view in_;
  std::size_t pos_ = 0;
};

void write_moments(Writer& w, const Moments& m) {
  w.doubles(m.m);
  w.doubles(m.v);
}

Moments read_moments(Reader& r) {
  Moments m;
  m.m = r.doubles();
  m.v = r.doubles();
  return m;
}

std::string losses_csv(const RunRecord& run) {
  std::ostringstream os;
  os.precision(17);
  os << "step,recon,attn,total\n";
  for (const auto& c : run.checkpoints)
    os << c.step << ',' << c.loss.recon << ',' << c.loss.attn << ',' << c.loss.total << '\n';
  return os.str();
}

}  // namespace

std::string checkpoint_file_name(std::size_t step) { return "ckpt_" + std::to_string(step) + ".bin"; }

std::string encode_checkpoint(const Checkpoint& c) {
  Writer w;
  w.raw(kMagic, sizeof kMagic);
  w.u64(c.step);
  w.f64(c.loss.recon);
  w.f64(c.loss.attn);
  w.f64(c.loss.total);
  w.matrix(c.params.universe.w);
  w.doubles(c.params.universe.bias);
  w.matrix(c.params.head.w_q);
  w.matrix(c.params.head.w_k);
  write_moments(w, c.optimizer.w);
  write_moments(w, c.optimizer.bias);
  write_moments(w, c.optimizer.w_q);
  write_moments(w, c.optimizer.w_k);
  w.u64(c.optimizer.step);
  w.bytes(c.rng_state);
  return w.take();
}

Checkpoint decode_checkpoint(std::string_view bytes) {
  Reader r(bytes);
  char magic[sizeof kMagic];
  r.raw(magic, sizeof magic);
  if (std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error("checkpoint: bad magic");
  Checkpoint c;
  c.step = r.u64();
  c.loss.recon = r.f64();
  c.loss.attn = r.f64();
  c.loss.total = r.f64();
  c.params.universe.w = r.matrix();
  c.params.universe.bias = r.doubles();
  c.params.head.w_q = r.matrix();
  c.params.head.w_k = r.matrix();
  c.optimizer.w = read_moments(r);
  c.optimizer.bias = read_moments(r);
  c.optimizer.w_q = read_moments(r);
  c.optimizer.w_k = read_moments(r);
  c.optimizer.step = r.u64();
  c.rng_state = r.bytes();
  if (!r.done()) throw std::runtime_error("checkpoint: trailing bytes");
  return c;
}

void write_checkpoint(const std::filesystem::path& dir, const Checkpoint& c) {
  write_file_atomic(dir / checkpoint_file_name(c.step), encode_checkpoint(c));
}

Checkpoint read_checkpoint(const std::filesystem::path& dir, std::size_t step) {
  const auto path = dir / checkpoint_file_name(step);
  try {
    return decode_checkpoint(read_file(path));
  } catch (const std::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void save_run_index(const std::filesystem::path& dir, const RunRecord& run) {
  write_file_atomic(dir / "losses.csv", losses_csv(run));
  nlohmann::json j = to_json(RunConfig{run.model, run.train, run.target});
  nlohmann::json ckpts = nlohmann::json::array();
  for (const auto& c : run.checkpoints)
    ckpts.push_back({{"step", c.step},
                     {"file", checkpoint_file_name(c.step)},
                     {"recon", c.loss.recon},
                     {"attn", c.loss.attn},
                     {"total", c.loss.total}});
  j["checkpoints"] = std::move(ckpts);
  write_file_atomic(dir / "run.json", j.dump(2) + "\n");
}

void save_run(const std::filesystem::path& dir, const RunRecord& run) {
  for (const auto& c : run.checkpoints) write_checkpoint(dir, c);
  save_run_index(dir, run);
}

RunRecord load_run(const std::filesystem::path& dir) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(dir / "run.json"));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError((dir / "run.json").string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("checkpoints") || !j["checkpoints"].is_array())
    throw ConfigError((dir / "run.json").string() + ": missing checkpoint index");
  nlohmann::json cfg = j;
  cfg.erase("checkpoints");
  const RunConfig rc = run_config_from_json(cfg);
  RunRecord run{rc.model, rc.train, rc.target, {}};
  for (const auto& e : j["checkpoints"]) run.checkpoints.push_back(read_checkpoint(dir, e.at("step").get<std::size_t>()));
  if (run.checkpoints.empty()) throw ConfigError(dir.string() + ": run has no checkpoints");
  return run;
}

RunWriter::RunWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
  std::filesystem::create_directories(dir_);
}

TrainHooks RunWriter::hooks() {
  TrainHooks h;
  h.on_checkpoint = [dir = dir_](const Checkpoint& c) { write_checkpoint(dir, c); };
  return h;
}

void RunWriter::finish(const RunRecord& run) { save_run_index(dir_, run); }

std::size_t resolve_step(const RunRecord& run, const std::string& which) {
  if (which == "last") return run.last().step;
  std::size_t pos = 0;
  unsigned long long v = 0;
  try {
    v = std::stoull(which, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (pos == 0 || pos != which.size())
    throw std::invalid_argument("step must be 'last' or a checkpoint step, got '" + which + "'");
  run.at_step(static_cast<std::size_t>(v));
  return static_cast<std::size_t>(v);
}

}  // namespace svf::io
