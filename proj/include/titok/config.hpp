#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "titok/generator.hpp"
#include "titok/teacher.hpp"
#include "titok/tokenizer.hpp"

namespace titok {

/// Experiment configuration as stored in config files and checkpoints.
/// Defaults are the desk-scale "titok-toy" setup.
struct Config {
  int image_size = 32;
  int patch_size = 8;
  int latent_tokens = 8;
  int model_dim = 64;
  int layers = 4;
  int heads = 4;
  int code_dim = kCodeDim;
  int codebook_size = 256;
  double beta = 0.25;
  std::string schedule = "arccos";
  double lr = 3e-4;
  double weight_decay = 1e-4;
  int warmup_steps = 100;
  int total_steps = 2000;
  int batch_size = 16;
  double class_dropout = 0.1;
  std::uint64_t seed = 0;
  TeacherConfig teacher;

  void validate() const {
    auto positive = [](const char* key, long long v) {
      if (v <= 0) throw ConfigError(std::string("config: ") + key + " must be positive");
    };
    positive("image_size", image_size);
    positive("patch_size", patch_size);
    positive("latent_tokens", latent_tokens);
    positive("model_dim", model_dim);
    positive("layers", layers);
    positive("heads", heads);
    positive("code_dim", code_dim);
    positive("total_steps", total_steps);
    positive("batch_size", batch_size);
    if (codebook_size < 2) throw ConfigError("config: codebook_size must be >= 2");
    if (image_size % patch_size != 0) throw ConfigError("config: image_size must be divisible by patch_size");
    if (model_dim % heads != 0) throw ConfigError("config: model_dim must be divisible by heads");
    if (!(beta >= 0)) throw ConfigError("config: beta must be >= 0");
    if (!(lr > 0 && lr < 1)) throw ConfigError("config: lr must be in (0, 1)");
    if (!(weight_decay >= 0 && weight_decay < 1)) throw ConfigError("config: weight_decay must be in [0, 1)");
    if (warmup_steps < 0 || warmup_steps > total_steps) throw ConfigError("config: warmup_steps must be in [0, total_steps]");
    if (!(class_dropout >= 0 && class_dropout <= 1)) throw ConfigError("config: class_dropout must be in [0, 1]");
    if (teacher.vocab < 2 || teacher.dim < 1) throw ConfigError("config: teacher.vocab >= 2 and teacher.dim >= 1");
    parse_schedule(schedule);
  }

  TitokConfig titok(HeadMode mode = HeadMode::proxy_logits) const {
    TitokConfig c = TitokConfig::make(image_size, patch_size, latent_tokens, model_dim, layers, heads, code_dim, codebook_size);
    c.beta = beta;
    c.head_mode = mode;
    c.teacher_vocab = teacher.vocab;
    return c;
  }

  GeneratorConfig generator(int num_classes) const {
    GeneratorConfig g = GeneratorConfig::make(latent_tokens, codebook_size, num_classes, model_dim, layers, heads);
    g.schedule = parse_schedule(schedule);
    g.class_dropout = class_dropout;
    return g;
  }

  nlohmann::json to_json() const {
    return {{"image_size", image_size},
            {"patch_size", patch_size},
            {"latent_tokens", latent_tokens},
            {"model_dim", model_dim},
            {"layers", layers},
            {"heads", heads},
            {"code_dim", code_dim},
            {"codebook_size", codebook_size},
            {"beta", beta},
            {"schedule", schedule},
            {"lr", lr},
            {"weight_decay", weight_decay},
            {"warmup_steps", warmup_steps},
            {"total_steps", total_steps},
            {"batch_size", batch_size},
            {"class_dropout", class_dropout},
            {"seed", seed},
            {"teacher", {{"vocab", teacher.vocab}, {"dim", teacher.dim}, {"seed", teacher.seed}}}};
  }

  static Config from_json(const nlohmann::json& j);

  /// Overlays the keys present in `j` onto `base`; unknown keys are rejected.
  static Config from_json(const nlohmann::json& j, const Config& base) {
    if (!j.is_object()) throw ConfigError("config: top level must be a JSON object");
    static const std::set<std::string> known = {
        "image_size", "patch_size", "latent_tokens", "model_dim", "layers", "heads", "code_dim",
        "codebook_size", "beta", "schedule", "lr", "weight_decay", "warmup_steps", "total_steps",
        "batch_size", "class_dropout", "seed", "teacher"};
    for (const auto& [key, value] : j.items()) {
      if (!known.count(key)) throw ConfigError("config: unknown key '" + key + "'");
    }
    Config c = base;
    try {
      auto read = [&](const char* key, auto& field) {
        if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
      };
      read("image_size", c.image_size);
      read("patch_size", c.patch_size);
      read("latent_tokens", c.latent_tokens);
      read("model_dim", c.model_dim);
      read("layers", c.layers);
      read("heads", c.heads);
      read("code_dim", c.code_dim);
      read("codebook_size", c.codebook_size);
      read("beta", c.beta);
      read("schedule", c.schedule);
      read("lr", c.lr);
      read("weight_decay", c.weight_decay);
      read("warmup_steps", c.warmup_steps);
      read("total_steps", c.total_steps);
      read("batch_size", c.batch_size);
      read("class_dropout", c.class_dropout);
      read("seed", c.seed);
      if (j.contains("teacher")) {
        const auto& t = j.at("teacher");
        if (!t.is_object()) throw ConfigError("config: teacher must be an object");
        for (const auto& [key, value] : t.items()) {
          if (key != "vocab" && key != "dim" && key != "seed") throw ConfigError("config: unknown key 'teacher." + key + "'");
        }
        if (t.contains("vocab")) c.teacher.vocab = t.at("vocab").get<int>();
        if (t.contains("dim")) c.teacher.dim = t.at("dim").get<int>();
        if (t.contains("seed")) c.teacher.seed = t.at("seed").get<std::uint64_t>();
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("config: wrong value type: ") + e.what());
    }
    c.validate();
    return c;
  }

  static Config load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open " + path.string());
    try {
      return from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("config: " + path.string() + " is not valid JSON: " + e.what());
    }
  }
};

inline Config Config::from_json(const nlohmann::json& j) { return from_json(j, Config{}); }

}  // namespace titok
