#pragma once
// Optimization loop: uniformly sampled window tasks, joint NLL, RMSProp
// updates, loss logging and binary checkpoints. One optimizer owns the
// parameter store; batch elements run sequentially and their gradients are
// averaged before each step.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "percdf/model.hpp"

namespace percdf {

struct TrainConfig {
  double learning_rate = 1e-3;
  int epochs = 100;
  int batches_per_epoch = 512;
  int batch_size = 24;
  double rmsprop_decay = 0.9;
  double rmsprop_epsilon = 1e-8;
  double grad_clip = 0.0;  // 0 disables clipping
  std::uint64_t seed = 0;
  PermutationMode permutation_mode = PermutationMode::Midpoint;

  void validate() const {
    if (!(learning_rate > 0.0)) throw DataError("train: learning_rate must be positive");
    if (epochs < 1) throw DataError("train: epochs must be >= 1");
    if (batches_per_epoch < 1) throw DataError("train: batches_per_epoch must be >= 1");
    if (batch_size < 1) throw DataError("train: batch_size must be >= 1");
  }
};

struct OptimizerState {
  std::map<std::string, std::vector<double>> sq_avg;
};

// s <- rho s + (1 - rho) g^2 ; p <- p - lr g / (sqrt(s) + eps)
inline void rmsprop_step(ParamStore& store, OptimizerState& state, const TrainConfig& cfg) {
  if (cfg.grad_clip > 0.0) {
    double norm_sq = 0.0;
    for (const auto& [name, p] : store.entries()) {
      for (double g : p.grad) norm_sq += g * g;
    }
    const double norm = std::sqrt(norm_sq);
    if (norm > cfg.grad_clip) {
      const double s = cfg.grad_clip / norm;
      for (auto& [name, p] : store.entries()) {
        for (double& g : p.grad) g *= s;
      }
    }
  }
  for (auto& [name, p] : store.entries()) {
    auto& s = state.sq_avg[name];
    if (s.size() != p.value.size()) s.assign(p.value.size(), 0.0);
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      if (!std::isfinite(g)) {
        throw DataError("rmsprop: non-finite gradient in parameter " + name);
      }
      s[i] = cfg.rmsprop_decay * s[i] + (1.0 - cfg.rmsprop_decay) * g * g;
      p.value[i] -= cfg.learning_rate * g / (std::sqrt(s[i]) + cfg.rmsprop_epsilon);
    }
  }
}

struct LossLogRow {
  int epoch;
  int batch;
  double nll;
};

struct TrainResult {
  std::vector<double> epoch_mean_nll;
  std::vector<LossLogRow> loss_log;
  int epochs_run = 0;
};

inline void write_loss_log_csv(const std::vector<LossLogRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("write_loss_log_csv: cannot open " + path);
  out << "epoch,batch,nll\n";
  char buf[64];
  for (const LossLogRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", r.nll);
    out << r.epoch << ',' << r.batch << ',' << buf << '\n';
  }
}

inline TrainResult train(Forecaster& model, const SeriesFrame& frame, const WindowTask& window,
                         const TrainConfig& cfg, OptimizerState* state_io = nullptr) {
  cfg.validate();
  window.validate();
  const int span = window.history + window.horizon;
  if (span > frame.n_steps()) {
    throw DataError("train: window does not fit the series");
  }
  const int max_offset = frame.n_steps() - span;

  OptimizerState local_state;
  OptimizerState& state = state_io ? *state_io : local_state;
  Rng data_rng(mix_seed(cfg.seed, 0x64617461));
  Rng plan_rng(mix_seed(cfg.seed, 0x706c616e));
  Rng dropout_rng(mix_seed(cfg.seed, 0x64726f70));

  SchedulerConfig sched = model.config().scheduler;
  sched.mode = cfg.permutation_mode;

  TrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double epoch_acc = 0.0;
    for (int batch = 0; batch < cfg.batches_per_epoch; ++batch) {
      model.params().zero_grad();
      double batch_loss = 0.0;
      for (int b = 0; b < cfg.batch_size; ++b) {
        const int offset = static_cast<int>(data_rng.below(static_cast<std::uint64_t>(max_offset + 1)));
        SeriesFrame task = make_forecast_task(frame, window, offset);
        PermutationPlan plan = build_permutation(task, sched, plan_rng.next_u64());
        Workspace ws(&model.params(), /*with_grad=*/true, /*training=*/true, &dropout_rng);
        NllParts parts = model.joint_nll(ws, task, plan);
        backward(parts.loss);
        ws.harvest_grads();
        batch_loss += parts.loss.item();
      }
      // Average gradients over the batch.
      const double inv = 1.0 / cfg.batch_size;
      for (auto& [name, p] : model.params().entries()) {
        for (double& g : p.grad) g *= inv;
      }
      rmsprop_step(model.params(), state, cfg);
      const double mean_nll = batch_loss / cfg.batch_size;
      result.loss_log.push_back({epoch, batch, mean_nll});
      epoch_acc += mean_nll;
    }
    result.epoch_mean_nll.push_back(epoch_acc / cfg.batches_per_epoch);
    ++result.epochs_run;
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints: self-describing container. Little-endian throughout.
//   magic "PCDF", u32 version,
//   config echo (u64 length + bytes),
//   u64 tensor count, then per tensor: u64 name length + bytes, u32 rank,
//   u32 dims..., doubles (IEEE-754, little-endian),
//   optimizer tensors under "opt.sq_avg/<name>",
//   u64 epoch counter, RNG state (u64 length + bytes).
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::ostream& out, std::uint32_t v) {
  char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 4);
}

inline void put_u64(std::ostream& out, std::uint64_t v) {
  char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
  out.write(b, 8);
}

inline void put_f64(std::ostream& out, double x) {
  std::uint64_t bits;
  std::memcpy(&bits, &x, 8);
  put_u64(out, bits);
}

inline void put_string(std::ostream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
  return v;
}

inline std::uint64_t get_u64(std::istream& in) {
  unsigned char b[8];
  in.read(reinterpret_cast<char*>(b), 8);
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
  return v;
}

inline double get_f64(std::istream& in) {
  const std::uint64_t bits = get_u64(in);
  double x;
  std::memcpy(&x, &bits, 8);
  return x;
}

inline std::string get_string(std::istream& in) {
  const std::uint64_t n = get_u64(in);
  std::string s(static_cast<std::size_t>(n), '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  return s;
}

inline void put_named_tensor(std::ostream& out, const std::string& name, const Shape& shape,
                             const std::vector<double>& data) {
  put_string(out, name);
  put_u32(out, static_cast<std::uint32_t>(shape.size()));
  for (int d : shape) put_u32(out, static_cast<std::uint32_t>(d));
  for (double x : data) put_f64(out, x);
}

}  // namespace detail

struct Checkpoint {
  std::uint32_t version = 1;
  std::string config_echo;
  std::map<std::string, Parameter> tensors;  // parameters and optimizer state
  std::uint64_t epoch = 0;
  std::string rng_state;
};

inline void save_checkpoint(const std::string& path, const std::string& config_echo,
                            const ParamStore& store, const OptimizerState& opt,
                            std::uint64_t epoch, const std::string& rng_state) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("save_checkpoint: cannot open " + path);
  out.write("PCDF", 4);
  detail::put_u32(out, 1);
  detail::put_string(out, config_echo);
  std::uint64_t count = store.entries().size();
  for (const auto& [name, s] : opt.sq_avg) {
    (void)s;
    ++count;
  }
  detail::put_u64(out, count);
  for (const auto& [name, p] : store.entries()) {
    detail::put_named_tensor(out, name, p.shape, p.value);
  }
  for (const auto& [name, s] : opt.sq_avg) {
    detail::put_named_tensor(out, "opt.sq_avg/" + name,
                             {static_cast<int>(s.size())}, s);
  }
  detail::put_u64(out, epoch);
  detail::put_string(out, rng_state);
  if (!out) throw DataError("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("load_checkpoint: cannot open " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::string(magic, 4) != "PCDF") {
    throw DataError("load_checkpoint: " + path + " is not a checkpoint file");
  }
  Checkpoint ck;
  ck.version = detail::get_u32(in);
  if (ck.version != 1) {
    throw DataError("load_checkpoint: unsupported version " + std::to_string(ck.version));
  }
  ck.config_echo = detail::get_string(in);
  const std::uint64_t count = detail::get_u64(in);
  for (std::uint64_t i = 0; i < count; ++i) {
    const std::string name = detail::get_string(in);
    const std::uint32_t rank = detail::get_u32(in);
    Shape shape;
    std::int64_t numel = 1;
    for (std::uint32_t r = 0; r < rank; ++r) {
      shape.push_back(static_cast<int>(detail::get_u32(in)));
      numel *= shape.back();
    }
    Parameter p;
    p.shape = std::move(shape);
    p.value.resize(static_cast<std::size_t>(numel));
    for (double& x : p.value) x = detail::get_f64(in);
    p.grad.assign(p.value.size(), 0.0);
    ck.tensors.emplace(name, std::move(p));
    if (!in) throw DataError("load_checkpoint: truncated file " + path);
  }
  ck.epoch = detail::get_u64(in);
  ck.rng_state = detail::get_string(in);
  return ck;
}

// Restores parameter values (and optimizer state when present) into a store
// created with the same configuration.
inline void restore_into(const Checkpoint& ck, ParamStore& store, OptimizerState* opt) {
  for (auto& [name, p] : store.entries()) {
    const auto it = ck.tensors.find(name);
    if (it == ck.tensors.end()) {
      throw DataError("checkpoint: missing tensor " + name);
    }
    if (it->second.value.size() != p.value.size()) {
      throw DataError("checkpoint: shape mismatch for " + name);
    }
    p.value = it->second.value;
    p.grad.assign(p.value.size(), 0.0);
  }
  if (opt) {
    opt->sq_avg.clear();
    for (const auto& [name, t] : ck.tensors) {
      const std::string prefix = "opt.sq_avg/";
      if (name.rfind(prefix, 0) == 0) {
        opt->sq_avg[name.substr(prefix.size())] = t.value;
      }
    }
  }
}

}  // namespace percdf
