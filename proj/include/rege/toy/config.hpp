#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <nlohmann/json.hpp>

#include "rege/errors.hpp"

namespace rege::toy {

enum class PriorTokenPosition { after_visual, before_visual };

inline std::string to_string(PriorTokenPosition p) {
  return p == PriorTokenPosition::after_visual ? "after_visual" : "before_visual";
}

inline PriorTokenPosition prior_position_from_string(std::string_view s) {
  if (s == "after_visual")
    return PriorTokenPosition::after_visual;
  if (s == "before_visual")
    return PriorTokenPosition::before_visual;
  throw data_error("unknown prior_token_position '" + std::string(s) + "'");
}

// Desk-scale defaults. Production-scale presets (rank 128, lr 1e-4, a 7B
// decoder) are config values, not code.
struct Config {
  int vocab_size = 64;
  int model_dim = 64;
  int n_layers = 2;
  int n_heads = 2;
  int n_visual_tokens = 8;
  int prior_dim = 16;
  int lora_rank = 8;
  double lora_alpha = 16.0;
  std::set<std::string> lora_targets = {"attn_q", "attn_v"};
  PriorTokenPosition prior_token_position = PriorTokenPosition::after_visual;
  std::uint64_t seed = 7;

  // Training defaults, overridable per flag.
  double lr = 1e-3;
  int batch_size = 16;

  void validate() const {
    auto need = [](bool ok, const char* what) {
      if (!ok)
        throw data_error(std::string("toy config: ") + what);
    };
    need(vocab_size > 0, "vocab_size must be positive");
    need(model_dim > 0, "model_dim must be positive");
    need(n_layers >= 0, "n_layers must be non-negative");
    need(n_heads > 0, "n_heads must be positive");
    need(model_dim % n_heads == 0, "n_heads must divide model_dim");
    need(n_visual_tokens > 0, "n_visual_tokens must be positive");
    need(prior_dim > 0, "prior_dim must be positive");
    need(lora_rank >= 1 && lora_rank <= model_dim, "lora_rank must be in [1, model_dim]");
    need(lora_alpha > 0, "lora_alpha must be positive");
    need(lr > 0, "lr must be positive");
    need(batch_size > 0, "batch_size must be positive");
    for (const auto& t : lora_targets)
      need(t == "attn_q" || t == "attn_v", "lora_targets entries must be attn_q or attn_v");
  }

  bool lora_on_q() const { return lora_targets.count("attn_q") > 0; }
  bool lora_on_v() const { return lora_targets.count("attn_v") > 0; }
  int head_dim() const { return model_dim / n_heads; }
  int ff_dim() const { return 2 * model_dim; }
};

inline nlohmann::ordered_json config_to_json(const Config& c) {
  nlohmann::ordered_json j;
  j["vocab_size"] = c.vocab_size;
  j["model_dim"] = c.model_dim;
  j["n_layers"] = c.n_layers;
  j["n_heads"] = c.n_heads;
  j["n_visual_tokens"] = c.n_visual_tokens;
  j["prior_dim"] = c.prior_dim;
  j["lora_rank"] = c.lora_rank;
  j["lora_alpha"] = c.lora_alpha;
  j["lora_targets"] = c.lora_targets;
  j["prior_token_position"] = to_string(c.prior_token_position);
  j["seed"] = c.seed;
  j["train"] = {{"lr", c.lr}, {"batch_size", c.batch_size}};
  return j;
}

inline Config config_from_json(const nlohmann::json& j) {
  Config c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key))
      field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  get("vocab_size", c.vocab_size);
  get("model_dim", c.model_dim);
  get("n_layers", c.n_layers);
  get("n_heads", c.n_heads);
  get("n_visual_tokens", c.n_visual_tokens);
  get("prior_dim", c.prior_dim);
  get("lora_rank", c.lora_rank);
  get("lora_alpha", c.lora_alpha);
  get("seed", c.seed);
  if (j.contains("lora_targets"))
    c.lora_targets = j.at("lora_targets").get<std::set<std::string>>();
  if (j.contains("prior_token_position"))
    c.prior_token_position =
        prior_position_from_string(j.at("prior_token_position").get<std::string>());
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.contains("lr"))
      c.lr = t.at("lr").get<double>();
    if (t.contains("batch_size"))
      c.batch_size = t.at("batch_size").get<int>();
  }
  c.validate();
  return c;
}

inline Config load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in)
    throw io_error("cannot open config file: " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw data_error(path.string() + ": invalid JSON: " + e.what());
  }
  return config_from_json(j);
}

} // namespace rege::toy
