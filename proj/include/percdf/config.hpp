#pragma once
// Flat key=value run configuration covering every module, with the two named
// presets used by the scaling and performance experiments. Unknown keys are
// rejected in bulk; serialize() -> parse() is idempotent.

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "percdf/guard.hpp"
#include "percdf/model.hpp"
#include "percdf/training.hpp"

namespace percdf {

class RunConfig {
 public:
  RunConfig() : values_(defaults()) {}

  static const std::map<std::string, std::string>& defaults() {
    static const std::map<std::string, std::string> d = {
        {"task.history", "24"},
        {"task.horizon", "24"},
        {"task.stride", "1"},
        {"embed.series_dim", "5"},
        {"embed.token_dim", "48"},
        {"embed.encoder_layers", "3"},
        {"embed.positional_base", "10000"},
        {"embed.dropout", "0"},
        {"perceiver.latents", "64"},
        {"perceiver.latent_dim", "48"},
        {"perceiver.layers", "3"},
        {"perceiver.self_heads", "3"},
        {"perceiver.cross_heads", "3"},
        {"perceiver.dropout", "0"},
        {"baseline.layers", "3"},
        {"baseline.heads", "3"},
        {"baseline.attn_dim", "16"},
        {"baseline.ffn_dim", "16"},
        {"baseline.dropout", "0"},
        {"copula.min_u", "0.01"},
        {"copula.max_u", "0.99"},
        {"copula.attn_layers", "3"},
        {"copula.heads", "3"},
        {"copula.attn_dim", "16"},
        {"copula.ffn_dim", "16"},
        {"copula.ffn_layers", "3"},
        {"copula.resolution", "50"},
        {"flow.layers", "2"},
        {"flow.dim", "8"},
        {"flow.ffn_layers", "2"},
        {"flow.ffn_dim", "8"},
        {"sched.mode", "midpoint"},
        {"sched.k", "5"},
        {"sched.max_interval", "3"},
        {"guard.enabled", "false"},
        {"guard.probe_draws", "16"},
        {"guard.multiplier", "4"},
        {"train.lr", "0.001"},
        {"train.epochs", "100"},
        {"train.batches_per_epoch", "512"},
        {"train.batch_size", "24"},
        {"train.rmsprop_decay", "0.9"},
        {"train.rmsprop_eps", "1e-08"},
        {"train.grad_clip", "0"},
        {"train.seed", "0"},
        {"train.permutation", "midpoint"},
        {"model.encoder", "perceiver"},
        {"model.windows", "local"},
        {"metrics.draws", "100"},
        {"data.n_variables", "0"},
    };
    return d;
  }

  // The memory-scaling experiment parameters.
  static RunConfig preset_table3() {
    RunConfig c;  // defaults are the scaling-experiment table already
    return c;
  }

  // The performance-experiment parameters.
  static RunConfig preset_table4() {
    RunConfig c;
    c.set("embed.dropout", "0.01");
    c.set("perceiver.latents", "256");
    c.set("perceiver.layers", "2");
    c.set("perceiver.dropout", "0.01");
    c.set("baseline.layers", "2");
    c.set("baseline.heads", "2");
    c.set("baseline.attn_dim", "24");
    c.set("baseline.ffn_dim", "24");
    c.set("baseline.dropout", "0.01");
    c.set("copula.min_u", "0.05");
    c.set("copula.max_u", "0.95");
    c.set("copula.attn_layers", "1");
    c.set("copula.ffn_dim", "48");
    c.set("copula.ffn_layers", "1");
    c.set("copula.resolution", "20");
    c.set("flow.layers", "3");
    c.set("flow.dim", "16");
    c.set("flow.ffn_layers", "1");
    c.set("flow.ffn_dim", "48");
    return c;
  }

  static RunConfig preset(const std::string& name) {
    if (name == "table3") return preset_table3();
    if (name == "table4") return preset_table4();
    throw DataError("unknown preset '" + name + "' (want table3 or table4)");
  }

  void set(const std::string& key, const std::string& value) {
    if (!defaults().count(key)) throw DataError("unknown config key: " + key);
    values_[key] = value;
  }

  const std::string& get(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw DataError("unknown config key: " + key);
    return it->second;
  }

  int geti(const std::string& key) const { return std::stoi(get(key)); }
  double getd(const std::string& key) const { return std::stod(get(key)); }
  std::uint64_t getu(const std::string& key) const { return std::stoull(get(key)); }

  bool getb(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw DataError("config key " + key + " wants a boolean, got '" + v + "'");
  }

  // Parses `key=value` lines ('#' starts a comment). Every unknown key is
  // collected and reported at once.
  void parse_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::string> bad;
    int line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      const std::size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      std::size_t a = line.find_first_not_of(" \t\r");
      if (a == std::string::npos) continue;
      std::size_t b = line.find_last_not_of(" \t\r");
      line = line.substr(a, b - a + 1);
      const std::size_t eq = line.find('=');
      if (eq == std::string::npos) {
        bad.push_back(line + " (line " + std::to_string(line_no) + ": missing '=')");
        continue;
      }
      std::string key = line.substr(0, eq);
      std::string value = line.substr(eq + 1);
      auto strip = [](std::string& s) {
        const std::size_t x = s.find_first_not_of(" \t");
        const std::size_t y = s.find_last_not_of(" \t");
        s = x == std::string::npos ? "" : s.substr(x, y - x + 1);
      };
      strip(key);
      strip(value);
      if (!defaults().count(key)) {
        bad.push_back(key);
        continue;
      }
      values_[key] = value;
    }
    if (!bad.empty()) {
      std::string msg = "config: unknown or malformed keys:";
      for (const std::string& k : bad) msg += " " + k;
      throw DataError(msg);
    }
  }

  void parse_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("config: cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    parse_text(ss.str());
  }

  std::string serialize() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
    return out;
  }

  bool operator==(const RunConfig& o) const { return values_ == o.values_; }

  ModelConfig to_model_config() const {
    ModelConfig m;
    m.embed.series_embed_dim = geti("embed.series_dim");
    m.embed.token_dim = geti("embed.token_dim");
    m.embed.input_encoder_layers = geti("embed.encoder_layers");
    m.embed.positional_base = getd("embed.positional_base");
    m.embed.dropout = getd("embed.dropout");
    m.perceiver.num_latents = geti("perceiver.latents");
    m.perceiver.latent_dim = geti("perceiver.latent_dim");
    m.perceiver.attention_layers = geti("perceiver.layers");
    m.perceiver.self_heads = geti("perceiver.self_heads");
    m.perceiver.cross_heads = geti("perceiver.cross_heads");
    m.perceiver.dropout = getd("perceiver.dropout");
    m.baseline.layers = geti("baseline.layers");
    m.baseline.heads = geti("baseline.heads");
    m.baseline.attn_dim = geti("baseline.attn_dim");
    m.baseline.ffn_dim = geti("baseline.ffn_dim");
    m.baseline.dropout = getd("baseline.dropout");
    m.copula.u_min = getd("copula.min_u");
    m.copula.u_max = getd("copula.max_u");
    m.copula.attention_layers = geti("copula.attn_layers");
    m.copula.heads = geti("copula.heads");
    m.copula.attn_dim = geti("copula.attn_dim");
    m.copula.ffn_dim = geti("copula.ffn_dim");
    m.copula.ffn_layers = geti("copula.ffn_layers");
    m.copula.resolution = geti("copula.resolution");
    m.flow.flow_layers = geti("flow.layers");
    m.flow.flow_dim = geti("flow.dim");
    m.flow.ffn_layers = geti("flow.ffn_layers");
    m.flow.ffn_dim = geti("flow.ffn_dim");
    m.scheduler.mode = parse_permutation_mode(get("sched.mode"));
    m.scheduler.window_k = geti("sched.k");
    m.scheduler.max_interval = geti("sched.max_interval");
    m.scheduler.global_windows = get("model.windows") == "global";
    m.guard.enabled = getb("guard.enabled");
    m.guard.probe_draws = geti("guard.probe_draws");
    m.guard.threshold_multiplier = getd("guard.multiplier");
    m.use_perceiver_encoder = get("model.encoder") == "perceiver";
    if (get("model.encoder") != "perceiver" && get("model.encoder") != "global") {
      throw DataError("config: model.encoder must be perceiver or global");
    }
    if (get("model.windows") != "local" && get("model.windows") != "global") {
      throw DataError("config: model.windows must be local or global");
    }
    // Long horizons default to the interval-limited midpoint order.
    if (m.scheduler.mode == PermutationMode::Midpoint && geti("task.horizon") > 64) {
      m.scheduler.mode = PermutationMode::MidpointMaxInterval;
    }
    return m;
  }

  TrainConfig to_train_config() const {
    TrainConfig t;
    t.learning_rate = getd("train.lr");
    t.epochs = geti("train.epochs");
    t.batches_per_epoch = geti("train.batches_per_epoch");
    t.batch_size = geti("train.batch_size");
    t.rmsprop_decay = getd("train.rmsprop_decay");
    t.rmsprop_epsilon = getd("train.rmsprop_eps");
    t.grad_clip = getd("train.grad_clip");
    t.seed = getu("train.seed");
    t.permutation_mode = parse_permutation_mode(get("train.permutation"));
    return t;
  }

  WindowTask to_window_task() const {
    WindowTask w;
    w.history = geti("task.history");
    w.horizon = geti("task.horizon");
    w.stride = geti("task.stride");
    return w;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace percdf
