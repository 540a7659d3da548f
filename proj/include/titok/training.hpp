#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "titok/checkpoint.hpp"
#include "titok/config.hpp"
#include "titok/generator.hpp"
#include "titok/optim.hpp"
#include "titok/teacher.hpp"
#include "titok/tokenizer.hpp"

namespace titok {

struct StepRecord {
  std::int64_t step = 0;  // 1-based index of the completed step
  double loss = 0.0;
  double lr = 0.0;
};

using ProgressFn = std::function<void(const StepRecord&)>;

struct TrainOptions {
  std::int64_t total_steps = 2000;
  int batch_size = 16;
  double lr = 1e-3;
  double floor_lr = 0.0;
  std::int64_t warmup_steps = 100;
  AdamWConfig adam;
  std::uint64_t data_seed = 0;  // batch order
  std::int64_t stop_at = -1;    // pause before total_steps; the schedule is unchanged
  ProgressFn on_step;

  static TrainOptions from(const Config& c, std::int64_t steps) {
    TrainOptions o;
    o.total_steps = steps;
    o.batch_size = c.batch_size;
    o.lr = c.lr;
    o.floor_lr = c.lr * 0.1;
    o.warmup_steps = std::min<std::int64_t>(c.warmup_steps, steps);
    o.adam.weight_decay = c.weight_decay;
    o.data_seed = c.seed;
    return o;
  }

  std::int64_t last_step() const { return stop_at >= 0 ? std::min(stop_at, total_steps) : total_steps; }

  double lr_at(std::int64_t step) const { return lr_schedule(step + 1, total_steps, lr, warmup_steps, floor_lr); }
};

/// Epoch-shuffled batches as a pure function of (seed, step): sample number
/// s*B+j is item perm_e[(s*B+j) mod n] with perm_e drawn from stream e.
inline std::vector<std::size_t> batch_indices(std::uint64_t seed, std::int64_t step, int batch_size, std::size_t n) {
  if (n == 0) throw DataError("training: empty dataset");
  std::vector<std::size_t> out;
  std::vector<std::size_t> perm;
  std::int64_t cached_epoch = -1;
  for (int j = 0; j < batch_size; ++j) {
    const auto global = static_cast<std::uint64_t>(step) * static_cast<std::uint64_t>(batch_size) + static_cast<std::uint64_t>(j);
    const auto epoch = static_cast<std::int64_t>(global / n);
    if (epoch != cached_epoch) {
      perm.resize(n);
      for (std::size_t i = 0; i < n; ++i) perm[i] = i;
      Rng rng(seed ^ 0x5eedba7c4e5ULL, static_cast<std::uint64_t>(epoch));
      rng.shuffle(perm);
      cached_epoch = epoch;
    }
    out.push_back(perm[global % n]);
  }
  return out;
}

template <class X>
std::vector<X> pick(const std::vector<X>& items, const std::vector<std::size_t>& idx) {
  std::vector<X> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(items[i]);
  return out;
}

struct StageLosses {
  double total = 0.0;
  double recon = 0.0;
  double codebook = 0.0;
  double commitment = 0.0;
  std::vector<int> ids;
};

// ---------------------------------------------------------------- tokenizer

/// Stage 1: cross-entropy against teacher codes plus the VQ terms, one AdamW
/// step on every tokenizer parameter.
template <class T>
StageLosses stage1_step(std::span<const Image> batch, TitokParams<T>& params, const TitokConfig& cfg,
                        const ProxyTeacher& teacher, AdamW<T>& opt, double lr) {
  if (cfg.head_mode != HeadMode::proxy_logits) throw ConfigError("stage1_step: tokenizer is not in proxy mode");
  ParamList<T> list = params.parameters();
  zero_grads(list);
  ReconResult<T> r = reconstruct(batch, params, cfg, &teacher);
  r.total.backward();
  opt.step(list, lr);
  return {r.total.item(), r.recon_loss.item(), r.codebook_loss.item(), r.commitment_loss.item(), std::move(r.ids)};
}

/// Single-stage pixel training from scratch: MSE plus the VQ terms on every parameter.
template <class T>
StageLosses pixel_step(std::span<const Image> batch, TitokParams<T>& params, const TitokConfig& cfg, AdamW<T>& opt,
                       double lr) {
  if (cfg.head_mode != HeadMode::pixels) throw ConfigError("pixel_step: tokenizer is not in pixel mode");
  ParamList<T> list = params.parameters();
  zero_grads(list);
  ReconResult<T> r = reconstruct(batch, params, cfg);
  r.total.backward();
  opt.step(list, lr);
  return {r.total.item(), r.recon_loss.item(), r.codebook_loss.item(), r.commitment_loss.item(), std::move(r.ids)};
}

/// Stage 2: pixel MSE through the frozen encoder and quantizer; only the
/// decoder side is updated.
template <class T>
double stage2_step(std::span<const Image> batch, TitokParams<T>& params, const TitokConfig& cfg, AdamW<T>& opt,
                   double lr) {
  if (cfg.head_mode != HeadMode::pixels) throw ConfigError("stage2_step: pixel head not installed");
  ParamList<T> list = params.decoder_side();
  zero_grads(list);
  Tensor<T> quantized;
  {
    NoGradGuard frozen;
    const Tensor<T> z = params.pre_quant(encode(batch, params, cfg));
    quantized = quantize(z, params.codebook, static_cast<T>(cfg.beta), cfg.l2_normalize).quantized;
  }
  const DecoderOutput<T> out = decode_latents(quantized, batch.size(), params, cfg);
  const Tensor<T> loss = mse_loss(out.values, patchify<T>(batch, cfg.patch_size));
  loss.backward();
  opt.step(list, lr);
  return loss.item();
}

enum class TokenizerStage { proxy, pixel, finetune };

inline const char* to_string(TokenizerStage s) {
  switch (s) {
    case TokenizerStage::proxy: return "proxy";
    case TokenizerStage::pixel: return "pixel";
    case TokenizerStage::finetune: return "finetune";
  }
  return "?";
}

inline TokenizerStage parse_stage(const std::string& s) {
  if (s == "proxy") return TokenizerStage::proxy;
  if (s == "pixel") return TokenizerStage::pixel;
  if (s == "finetune") return TokenizerStage::finetune;
  throw ConfigError("unknown tokenizer stage '" + s + "'");
}

/// Everything needed to resume tokenizer training bit-exactly.
template <class T>
struct TokenizerState {
  Config config;
  TitokConfig cfg;
  TitokParams<T> params;
  AdamW<T> opt;
  Rng rng{0};
  std::int64_t step = 0;
  TokenizerStage stage = TokenizerStage::proxy;
  std::optional<BuiltinPatchTeacher> teacher;

  /// Fresh model. Proxy mode builds the teacher from `calibration`.
  static TokenizerState create(const Config& config, TokenizerStage stage, std::span<const Image> calibration) {
    TokenizerState s;
    s.config = config;
    s.stage = stage;
    s.cfg = config.titok(stage == TokenizerStage::proxy ? HeadMode::proxy_logits : HeadMode::pixels);
    s.params = TitokParams<T>::init(s.cfg, config.seed);
    s.rng = Rng(config.seed, 1);
    s.opt = AdamW<T>(AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});
    if (stage == TokenizerStage::proxy) s.teacher.emplace(config.teacher, config.image_size, config.patch_size, calibration);
    return s;
  }

  /// Switches a stage-1 model to decoder fine-tuning: fresh pixel head,
  /// frozen encoder side, fresh optimizer and step counter.
  void begin_finetune() {
    if (cfg.head_mode != HeadMode::proxy_logits) throw ConfigError("finetune: tokenizer is already in pixel mode");
    install_pixel_head(cfg, params, config.seed ^ 0xf17e7u);
    opt = AdamW<T>(AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});
    step = 0;
    stage = TokenizerStage::finetune;
  }

  /// Runs steps until `step == opts.last_step()`, returning the per-step losses.
  std::vector<double> train(const std::vector<Image>& data, const TrainOptions& opts) {
    std::vector<double> losses;
    while (step < opts.last_step()) {
      const std::vector<Image> batch = pick(data, batch_indices(opts.data_seed, step, opts.batch_size, data.size()));
      const double lr = opts.lr_at(step);
      double loss = 0.0;
      switch (stage) {
        case TokenizerStage::proxy:
          if (!teacher) throw ConfigError("train: proxy stage has no teacher");
          loss = stage1_step<T>(batch, params, cfg, *teacher, opt, lr).total;
          break;
        case TokenizerStage::pixel: loss = pixel_step<T>(batch, params, cfg, opt, lr).total; break;
        case TokenizerStage::finetune: loss = stage2_step<T>(batch, params, cfg, opt, lr); break;
      }
      ++step;
      losses.push_back(loss);
      if (opts.on_step) opts.on_step({step, loss, lr});
    }
    return losses;
  }
};

// ---------------------------------------------------------------- generator

/// One masked-token training step. Per sequence: r = schedule(u) with u
/// uniform in (0,1), max(1, round(rK)) positions masked, class replaced by the
/// null class with probability class_dropout. CE only at masked positions.
template <class T>
double generator_step(std::span<const TokenIds> tokens, std::span<const int> labels, GeneratorParams<T>& params,
                      const GeneratorConfig& cfg, AdamW<T>& opt, double lr, Rng& rng) {
  if (tokens.size() != labels.size() || tokens.empty()) throw DataError("generator_step: tokens and labels differ in count");
  std::vector<int> inputs, targets, classes;
  for (std::size_t b = 0; b < tokens.size(); ++b) {
    if (labels[b] < 0 || labels[b] >= cfg.num_classes) {
      throw DataError("generator_step: label " + std::to_string(labels[b]) + " out of range");
    }
    if (tokens[b].ids.size() != static_cast<std::size_t>(cfg.latent_tokens)) {
      throw DataError("generator_step: token sequence length differs from K");
    }
    for (int id : tokens[b].ids) {
      if (id < 0 || id >= cfg.codebook_size) throw DataError("generator_step: token id out of range");
    }
    const double r = mask_ratio(cfg.schedule, rng.uniform_open());
    const MaskedIds m = apply_random_mask(tokens[b].ids, std::max(r, 1e-12), cfg.mask_id(), rng);
    for (std::size_t i = 0; i < m.ids.size(); ++i) {
      inputs.push_back(m.ids[i]);
      targets.push_back(m.masked[i] ? tokens[b].ids[i] : -1);
    }
    classes.push_back(rng.uniform() < cfg.class_dropout ? cfg.null_class() : labels[b]);
  }
  ParamList<T> list = params.parameters();
  zero_grads(list);
  const Tensor<T> loss = cross_entropy(predict_logits<T>(inputs, classes, params, cfg), targets);
  loss.backward();
  opt.step(list, lr);
  return loss.item();
}

template <class T>
struct GeneratorState {
  Config config;
  GeneratorConfig cfg;
  GeneratorParams<T> params;
  AdamW<T> opt;
  Rng rng{0};
  std::int64_t step = 0;

  static GeneratorState create(const Config& config, int num_classes) {
    GeneratorState s;
    s.config = config;
    s.cfg = config.generator(num_classes);
    s.params = GeneratorParams<T>::init(s.cfg, config.seed ^ 0x6e6e6eULL);
    s.rng = Rng(config.seed, 2);
    s.opt = AdamW<T>(AdamWConfig{0.9, 0.999, 1e-8, config.weight_decay});
    return s;
  }

  std::vector<double> train(const std::vector<TokenIds>& tokens, const std::vector<int>& labels, const TrainOptions& opts) {
    if (tokens.size() != labels.size()) throw DataError("train-generator: tokens and labels differ in count");
    std::vector<double> losses;
    while (step < opts.last_step()) {
      const auto idx = batch_indices(opts.data_seed, step, opts.batch_size, tokens.size());
      const std::vector<TokenIds> bt = pick(tokens, idx);
      const std::vector<int> bl = pick(labels, idx);
      const double lr = opts.lr_at(step);
      const double loss = generator_step<T>(bt, bl, params, cfg, opt, lr, rng);
      ++step;
      losses.push_back(loss);
      if (opts.on_step) opts.on_step({step, loss, lr});
    }
    return losses;
  }
};

// ---------------------------------------------------------------- checkpoints

inline constexpr const char* kParamPrefix = "param.";

namespace detail {

template <class T>
void store_optimizer(Checkpoint& ckpt, const AdamW<T>& opt, const ParamList<T>& params) {
  ckpt.meta["opt_step"] = opt.step_count;
  for (const auto& ref : params) {
    const auto it = opt.state.find(ref.name);
    if (it == opt.state.end() || it->second.m.empty()) continue;
    ckpt.tensors.push_back(make_record<T, T>("opt.m." + ref.name, ref.tensor->shape(), std::span<const T>(it->second.m)));
    ckpt.tensors.push_back(make_record<T, T>("opt.v." + ref.name, ref.tensor->shape(), std::span<const T>(it->second.v)));
  }
}

template <class T>
void load_optimizer(const Checkpoint& ckpt, AdamW<T>& opt, const ParamList<T>& params) {
  opt.step_count = ckpt.meta.value("opt_step", std::int64_t{0});
  opt.state.clear();
  for (const auto& ref : params) {
    const TensorRecord* m = ckpt.find("opt.m." + ref.name);
    const TensorRecord* v = ckpt.find("opt.v." + ref.name);
    if (!m && !v) continue;
    if (!m || !v) throw FormatError("checkpoint: incomplete optimizer moments for '" + ref.name + "'");
    if (m->shape != ref.tensor->shape() || v->shape != ref.tensor->shape()) {
      throw FormatError("checkpoint: optimizer moments for '" + ref.name + "' have the wrong shape");
    }
    opt.state[ref.name] = MomentBuffers<T>{record_values<T>(*m), record_values<T>(*v)};
  }
}

inline const char* precision_name(Dtype d) { return d == Dtype::f32 ? "f32" : "f64"; }

inline void expect_kind(const Checkpoint& ckpt, const std::string& kind) {
  const std::string got = ckpt.meta.value("kind", std::string());
  if (got != kind) throw FormatError("checkpoint: meta.kind is '" + got + "', expected '" + kind + "'");
}

}  // namespace detail

/// Precision recorded in a checkpoint ("f32" or "f64").
inline std::string checkpoint_precision(const Checkpoint& ckpt) {
  const std::string p = ckpt.meta.value("precision", std::string("f64"));
  if (p != "f32" && p != "f64") throw FormatError("checkpoint: meta.precision must be f32 or f64");
  return p;
}

template <class T>
Checkpoint to_checkpoint(TokenizerState<T>& s) {
  Checkpoint ckpt;
  ckpt.config = s.config.to_json();
  ckpt.step = s.step;
  ckpt.rng_state = s.rng.state();
  ckpt.meta = {{"kind", "tokenizer"},
               {"precision", detail::precision_name(dtype_of<T>())},
               {"head_mode", to_string(s.cfg.head_mode)},
               {"stage", to_string(s.stage)},
               {"codebook_lr_scale", s.params.codebook_lr_scale}};
  ParamList<T> params = s.params.parameters();
  store_params(ckpt, params, kParamPrefix);
  detail::store_optimizer(ckpt, s.opt, params);
  if (s.teacher) {
    const auto& t = *s.teacher;
    const auto d = static_cast<std::size_t>(t.config().dim), v = static_cast<std::size_t>(t.config().vocab);
    const auto pd = static_cast<std::size_t>(t.patch_size() * t.patch_size() * 3);
    ckpt.tensors.push_back(make_record<double, double>("teacher.projection", {pd, d}, std::span<const double>(t.projection())));
    ckpt.tensors.push_back(make_record<double, double>("teacher.centroids", {v, d}, std::span<const double>(t.centroids())));
    ckpt.tensors.push_back(make_record<double, double>("teacher.mean_patches", {v, pd}, std::span<const double>(t.mean_patches())));
  }
  return ckpt;
}

template <class T>
TokenizerState<T> tokenizer_from_checkpoint(const Checkpoint& ckpt) {
  detail::expect_kind(ckpt, "tokenizer");
  if (checkpoint_precision(ckpt) != detail::precision_name(dtype_of<T>())) {
    throw FormatError("checkpoint: precision " + checkpoint_precision(ckpt) + " does not match the requested type");
  }
  TokenizerState<T> s;
  s.config = Config::from_json(ckpt.config);
  try {
    s.stage = parse_stage(ckpt.meta.value("stage", std::string("proxy")));
    const HeadMode mode = parse_head_mode(ckpt.meta.value("head_mode", std::string("proxy")));
    s.cfg = s.config.titok(mode);
  } catch (const ConfigError& e) {
    throw FormatError(std::string("checkpoint: meta: ") + e.what());
  }
  s.params = TitokParams<T>::init(s.cfg, s.config.seed);
  s.params.codebook_lr_scale = ckpt.meta.value("codebook_lr_scale", kDefaultCodebookLrScale);
  ParamList<T> params = s.params.parameters();
  load_params(ckpt, params, kParamPrefix);
  if (s.stage == TokenizerStage::finetune) {
    auto enc = s.params.encoder_side();
    set_trainable(enc, false);
  }
  s.opt = AdamW<T>(AdamWConfig{0.9, 0.999, 1e-8, s.config.weight_decay});
  detail::load_optimizer(ckpt, s.opt, params);
  s.step = ckpt.step;
  s.rng.set_state(ckpt.rng_state);
  if (ckpt.find("teacher.projection")) {
    s.teacher.emplace(s.config.teacher, s.config.image_size, s.config.patch_size,
                      record_values<double>(ckpt.at("teacher.projection")),
                      record_values<double>(ckpt.at("teacher.centroids")),
                      record_values<double>(ckpt.at("teacher.mean_patches")));
  }
  return s;
}

template <class T>
Checkpoint to_checkpoint(GeneratorState<T>& s) {
  Checkpoint ckpt;
  ckpt.config = s.config.to_json();
  ckpt.step = s.step;
  ckpt.rng_state = s.rng.state();
  ckpt.meta = {{"kind", "generator"},
               {"precision", detail::precision_name(dtype_of<T>())},
               {"num_classes", s.cfg.num_classes}};
  ParamList<T> params = s.params.parameters();
  store_params(ckpt, params, kParamPrefix);
  detail::store_optimizer(ckpt, s.opt, params);
  return ckpt;
}

template <class T>
GeneratorState<T> generator_from_checkpoint(const Checkpoint& ckpt) {
  detail::expect_kind(ckpt, "generator");
  if (checkpoint_precision(ckpt) != detail::precision_name(dtype_of<T>())) {
    throw FormatError("checkpoint: precision " + checkpoint_precision(ckpt) + " does not match the requested type");
  }
  if (!ckpt.meta.contains("num_classes")) throw FormatError("checkpoint: meta.num_classes missing");
  GeneratorState<T> s;
  s.config = Config::from_json(ckpt.config);
  s.cfg = s.config.generator(ckpt.meta.at("num_classes").get<int>());
  s.params = GeneratorParams<T>::init(s.cfg, 0);
  ParamList<T> params = s.params.parameters();
  load_params(ckpt, params, kParamPrefix);
  s.opt = AdamW<T>(AdamWConfig{0.9, 0.999, 1e-8, s.config.weight_decay});
  detail::load_optimizer(ckpt, s.opt, params);
  s.step = ckpt.step;
  s.rng.set_state(ckpt.rng_state);
  return s;
}

}  // namespace titok
