#include "catr/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <type_traits>

#include <json.hpp>

namespace catr {

using nlohmann::json;

namespace {

void reject_unknown(const json& obj, const std::set<std::string>& allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + " must be an object");
  for (const auto& [key, value] : obj.items()) {
    if (!allowed.count(key)) throw ConfigError("unknown config key '" + where + "." + key + "'");
  }
}

template <class T>
void read(const json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  if constexpr (std::is_same_v<T, bool>) {
    if (!obj.at(key).is_boolean()) throw ConfigError("config key '" + where + "." + key + "' must be true or false");
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!obj.at(key).is_number_unsigned()) {
      throw ConfigError("config key '" + where + "." + key + "' must be a non-negative integer");
    }
  }
  try {
    out = obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config key '" + where + "." + key + "' has the wrong type");
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("optimizer.learning_rate must be positive");
  if (optimizer.steps == 0) throw ConfigError("optimizer.steps must be positive");
  if (optimizer.batch_size == 0) throw ConfigError("optimizer.batch_size must be at least 1");
  if (!(optimizer.beta1 >= 0.0 && optimizer.beta1 < 1.0 && optimizer.beta2 >= 0.0 && optimizer.beta2 < 1.0)) {
    throw ConfigError("optimizer betas must lie in [0, 1)");
  }
  if (!(optimizer.eps > 0.0)) throw ConfigError("optimizer.eps must be positive");
  if (!(loss.dice >= 0.0 && loss.focal >= 0.0 && loss.reference >= 0.0 && loss.gamma >= 0.0)) {
    throw ConfigError("loss weights must be non-negative");
  }
  if (!(loss.alpha >= 0.0 && loss.alpha <= 1.0)) throw ConfigError("loss.alpha must lie in [0, 1]");
  if (!(loss.dice_eps > 0.0)) throw ConfigError("loss.dice_eps must be positive");
  if (data.height == 0 || data.width == 0 || data.height % 8 || data.width % 8) {
    throw ConfigError("data.height and data.width must be positive multiples of 8");
  }
}

RunConfig desk_preset() { return RunConfig{}; }

RunConfig published_preset() {
  RunConfig c;
  c.model.channels = 256;
  c.model.gate_channels = 256;
  c.model.heads = 8;
  c.model.num_queries = 50;
  c.optimizer.learning_rate = 1e-5;
  c.optimizer.batch_size = 4;
  c.data.height = 224;
  c.data.width = 224;
  return c;
}

RunConfig preset(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "published") return published_preset();
  throw ConfigError("unknown preset '" + name + "' (expected desk or published)");
}

std::string to_json(const RunConfig& c) {
  const json j = {
      {"schema_version", kConfigSchemaVersion},
      {"model",
       {{"channels", c.model.channels},
        {"blocks", c.model.blocks},
        {"heads", c.model.heads},
        {"num_queries", c.model.num_queries},
        {"decoder_layers", c.model.decoder_layers},
        {"gate_channels", c.model.gate_channels},
        {"frames", c.model.frames},
        {"fpn_levels", c.model.fpn_levels},
        {"use_gate", c.model.use_gate},
        {"use_temporal_av", c.model.use_temporal_av}}},
      {"optimizer",
       {{"learning_rate", c.optimizer.learning_rate},
        {"steps", c.optimizer.steps},
        {"batch_size", c.optimizer.batch_size},
        {"seed", c.optimizer.seed},
        {"checkpoint_every", c.optimizer.checkpoint_every},
        {"beta1", c.optimizer.beta1},
        {"beta2", c.optimizer.beta2},
        {"eps", c.optimizer.eps}}},
      {"loss",
       {{"dice", c.loss.dice},
        {"focal", c.loss.focal},
        {"reference", c.loss.reference},
        {"gamma", c.loss.gamma},
        {"alpha", c.loss.alpha},
        {"dice_eps", c.loss.dice_eps}}},
      {"data",
       {{"train_dir", c.data.train_dir},
        {"eval_dir", c.data.eval_dir},
        {"height", c.data.height},
        {"width", c.data.width}}},
  };
  return j.dump(2);
}

RunConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown(j, {"schema_version", "preset", "model", "optimizer", "loss", "data"}, "config");
  if (!j.contains("schema_version") || !j["schema_version"].is_number_integer() ||
      j["schema_version"].get<int>() != kConfigSchemaVersion) {
    throw ConfigError("config schema_version must be " + std::to_string(kConfigSchemaVersion));
  }
  RunConfig c = j.contains("preset") ? preset(j["preset"].get<std::string>()) : desk_preset();
  if (j.contains("model")) {
    const json& m = j["model"];
    reject_unknown(m, {"channels", "blocks", "heads", "num_queries", "decoder_layers", "gate_channels", "frames",
                       "fpn_levels", "use_gate", "use_temporal_av"},
                   "model");
    read(m, "channels", c.model.channels, "model");
    read(m, "blocks", c.model.blocks, "model");
    read(m, "heads", c.model.heads, "model");
    read(m, "num_queries", c.model.num_queries, "model");
    read(m, "decoder_layers", c.model.decoder_layers, "model");
    read(m, "gate_channels", c.model.gate_channels, "model");
    read(m, "frames", c.model.frames, "model");
    read(m, "fpn_levels", c.model.fpn_levels, "model");
    read(m, "use_gate", c.model.use_gate, "model");
    read(m, "use_temporal_av", c.model.use_temporal_av, "model");
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown(o, {"learning_rate", "steps", "batch_size", "seed", "checkpoint_every", "beta1", "beta2", "eps"},
                   "optimizer");
    read(o, "learning_rate", c.optimizer.learning_rate, "optimizer");
    read(o, "steps", c.optimizer.steps, "optimizer");
    read(o, "batch_size", c.optimizer.batch_size, "optimizer");
    read(o, "seed", c.optimizer.seed, "optimizer");
    read(o, "checkpoint_every", c.optimizer.checkpoint_every, "optimizer");
    read(o, "beta1", c.optimizer.beta1, "optimizer");
    read(o, "beta2", c.optimizer.beta2, "optimizer");
    read(o, "eps", c.optimizer.eps, "optimizer");
  }
  if (j.contains("loss")) {
    const json& l = j["loss"];
    reject_unknown(l, {"dice", "focal", "reference", "gamma", "alpha", "dice_eps"}, "loss");
    read(l, "dice", c.loss.dice, "loss");
    read(l, "focal", c.loss.focal, "loss");
    read(l, "reference", c.loss.reference, "loss");
    read(l, "gamma", c.loss.gamma, "loss");
    read(l, "alpha", c.loss.alpha, "loss");
    read(l, "dice_eps", c.loss.dice_eps, "loss");
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, {"train_dir", "eval_dir", "height", "width"}, "data");
    read(d, "train_dir", c.data.train_dir, "data");
    read(d, "eval_dir", c.data.eval_dir, "data");
    read(d, "height", c.data.height, "data");
    read(d, "width", c.data.width, "data");
  }
  c.validate();
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

void apply_env_overrides(RunConfig& config) {
  const char* seed = std::getenv("CATR_SEED");
  if (!seed || !*seed) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(seed, &end, 10);
  if (*end != '\0') throw ConfigError(std::string("CATR_SEED is not an unsigned integer: ") + seed);
  config.optimizer.seed = v;
}

}  // namespace catr
