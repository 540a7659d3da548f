#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>

#include "titok/config.hpp"
#include "titok/data.hpp"
#include "titok/grad_suite.hpp"
#include "titok/probe.hpp"
#include "titok/training.hpp"

namespace titok::cli {

enum ExitCode : int { kOk = 0, kUsage = 1, kDataError = 2, kNumericAbort = 3 };

/// Worker count from TITOK_THREADS (default 1).
inline int thread_count() {
  const char* env = std::getenv("TITOK_THREADS");
  if (!env || !*env) return 1;
  try {
    const int n = std::stoi(env);
    if (n < 1) throw ConfigError("TITOK_THREADS must be >= 1");
    return n;
  } catch (const std::logic_error&) {
    throw ConfigError(std::string("TITOK_THREADS is not an integer: ") + env);
  }
}

/// Config flags shared by the training commands. Only flags given on the
/// command line override the --config file (or the built-in defaults).
struct ConfigFlags {
  std::string config_path;
  Config values;
  std::vector<std::pair<CLI::Option*, std::function<void(Config&)>>> bound;

  void attach(CLI::App& app) {
    app.add_option("--config", config_path, "JSON config file; flags below override it")->check(CLI::ExistingFile);
    add(app, "--image-size", values.image_size, "image side in pixels", [this](Config& c) { c.image_size = values.image_size; });
    add(app, "--patch-size", values.patch_size, "patch side f", [this](Config& c) { c.patch_size = values.patch_size; });
    add(app, "--latent-tokens", values.latent_tokens, "number of 1D latent tokens K",
        [this](Config& c) { c.latent_tokens = values.latent_tokens; });
    add(app, "--model-dim", values.model_dim, "transformer width D", [this](Config& c) { c.model_dim = values.model_dim; });
    add(app, "--layers", values.layers, "transformer depth", [this](Config& c) { c.layers = values.layers; });
    add(app, "--heads", values.heads, "attention heads", [this](Config& c) { c.heads = values.heads; });
    add(app, "--code-dim", values.code_dim, "codebook vector width", [this](Config& c) { c.code_dim = values.code_dim; });
    add(app, "--codebook-size", values.codebook_size, "codebook entries N",
        [this](Config& c) { c.codebook_size = values.codebook_size; });
    add(app, "--beta", values.beta, "commitment weight", [this](Config& c) { c.beta = values.beta; });
    add(app, "--schedule", values.schedule, "masking schedule: cosine|arccos|linear|root",
        [this](Config& c) { c.schedule = values.schedule; });
    add(app, "--lr", values.lr, "peak learning rate", [this](Config& c) { c.lr = values.lr; });
    add(app, "--weight-decay", values.weight_decay, "AdamW weight decay", [this](Config& c) { c.weight_decay = values.weight_decay; });
    add(app, "--warmup-steps", values.warmup_steps, "linear warm-up steps",
        [this](Config& c) { c.warmup_steps = values.warmup_steps; });
    add(app, "--total-steps", values.total_steps, "training steps for this command",
        [this](Config& c) { c.total_steps = values.total_steps; });
    add(app, "--batch-size", values.batch_size, "images or sequences per step",
        [this](Config& c) { c.batch_size = values.batch_size; });
    add(app, "--class-dropout", values.class_dropout, "probability of the null class in generator training",
        [this](Config& c) { c.class_dropout = values.class_dropout; });
    add(app, "--seed", values.seed, "random seed", [this](Config& c) { c.seed = values.seed; });
    add(app, "--teacher-vocab", values.teacher.vocab, "proxy teacher vocabulary",
        [this](Config& c) { c.teacher.vocab = values.teacher.vocab; });
    add(app, "--teacher-dim", values.teacher.dim, "proxy teacher feature width",
        [this](Config& c) { c.teacher.dim = values.teacher.dim; });
    add(app, "--teacher-seed", values.teacher.seed, "proxy teacher seed",
        [this](Config& c) { c.teacher.seed = values.teacher.seed; });
  }

  /// File (if any) over `base`, then explicit flags.
  Config resolve(const Config& base) const {
    Config c = base;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      try {
        c = Config::from_json(nlohmann::json::parse(in), base);
      } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError("config: " + config_path + " is not valid JSON: " + e.what());
      }
    }
    for (const auto& [opt, apply] : bound)
      if (opt->count() > 0) apply(c);
    c.validate();
    return c;
  }

  bool overridden(const std::string& flag) const {
    for (const auto& [opt, apply] : bound)
      if (opt->get_name() == flag && opt->count() > 0) return true;
    return false;
  }

 private:
  template <class V>
  void add(CLI::App& app, const std::string& name, V& target, const std::string& help, std::function<void(Config&)> apply) {
    bound.emplace_back(app.add_option(name, target, help), std::move(apply));
  }
};

inline void check_precision(const std::string& p) {
  if (p != "f32" && p != "f64") throw ConfigError("--precision must be f32 or f64");
}

inline void print_progress_header() { std::printf("step,loss,lr\n"); }

inline ProgressFn progress_printer(int every) {
  return [every](const StepRecord& r) {
    if (every > 0 && (r.step % every == 0)) {
      std::printf("%lld,%.9g,%.9g\n", static_cast<long long>(r.step), r.loss, r.lr);
      std::fflush(stdout);
    }
  };
}

// ---------------------------------------------------------------- commands

struct SynthArgs {
  std::string out;
  int count = 64;
  std::uint64_t seed = 0;
  int image_size = 32;
  int classes = 4;
  int first_index = 0;
};

inline int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  spec.seed = a.seed;
  spec.count = a.count;
  spec.image_size = a.image_size;
  spec.num_classes = a.classes;
  spec.first_index = a.first_index;
  if (a.count < 1) throw ConfigError("--count must be >= 1");
  Dataset d;
  d.items.resize(static_cast<std::size_t>(a.count));
  const int workers = std::min(thread_count(), a.count);
  std::vector<std::thread> pool;
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      for (int i = w; i < a.count; i += workers) d.items[static_cast<std::size_t>(i)] = synthetic_sample(spec, a.first_index + i);
    });
  }
  for (auto& t : pool) t.join();
  save_dataset(d, a.out);
  std::fprintf(stderr, "wrote %d images to %s\n", a.count, a.out.c_str());
  return kOk;
}

struct TrainTokenizerArgs {
  std::string data, out, stage = "proxy", precision = "f32";
  bool resume = false;
  int log_every = 1;
  std::int64_t stop_at = -1;
  double codebook_lr_scale = kDefaultCodebookLrScale;
};

template <class T>
int train_tokenizer_impl(const TrainTokenizerArgs& a, const ConfigFlags& flags) {
  const Dataset data = load_dataset(a.data);
  const std::vector<Image> images = data.images();
  TokenizerState<T> state;
  if (a.resume && std::filesystem::exists(std::filesystem::path(a.out) / "manifest.json")) {
    state = tokenizer_from_checkpoint<T>(load_checkpoint(a.out));
    if (flags.overridden("--total-steps")) state.config.total_steps = flags.values.total_steps;
    std::fprintf(stderr, "resuming %s at step %lld\n", a.out.c_str(), static_cast<long long>(state.step));
  } else {
    const Config config = flags.resolve(Config{});
    const TokenizerStage stage = parse_stage(a.stage);
    if (stage == TokenizerStage::finetune) throw ConfigError("--stage must be proxy or pixel; use finetune-decoder");
    state = TokenizerState<T>::create(config, stage, images);
    state.params.codebook_lr_scale = a.codebook_lr_scale;
  }
  TrainOptions opts = TrainOptions::from(state.config, state.config.total_steps);
  opts.stop_at = a.stop_at;
  opts.on_step = progress_printer(a.log_every);
  print_progress_header();
  state.train(images, opts);
  save_checkpoint(to_checkpoint(state), a.out);
  std::fprintf(stderr, "saved tokenizer checkpoint to %s\n", a.out.c_str());
  return kOk;
}

struct FinetuneArgs {
  std::string data, tokenizer, out;
  std::int64_t steps = 500;
  int log_every = 1;
};

template <class T>
int finetune_impl(const FinetuneArgs& a, const ConfigFlags& flags, const Checkpoint& ckpt) {
  const std::vector<Image> images = load_dataset(a.data).images();
  TokenizerState<T> state = tokenizer_from_checkpoint<T>(ckpt);
  if (state.stage != TokenizerStage::finetune) {
    state.begin_finetune();
    state.config = flags.resolve(state.config);
  }
  TrainOptions opts = TrainOptions::from(state.config, a.steps);
  opts.on_step = progress_printer(a.log_every);
  print_progress_header();
  state.train(images, opts);
  save_checkpoint(to_checkpoint(state), a.out);
  std::fprintf(stderr, "saved fine-tuned tokenizer to %s\n", a.out.c_str());
  return kOk;
}

struct TrainGeneratorArgs {
  std::string data, tokenizer, out;
  int log_every = 1;
  bool resume = false;
  std::int64_t stop_at = -1;
};

template <class TT>
std::vector<TokenIds> tokenize_dataset(const Checkpoint& tok_ckpt, const std::vector<Image>& images, Config& tok_config) {
  TokenizerState<TT> tok = tokenizer_from_checkpoint<TT>(tok_ckpt);
  tok_config = tok.config;
  std::vector<TokenIds> out;
  for (std::size_t start = 0; start < images.size(); start += 64) {
    const std::size_t n = std::min<std::size_t>(64, images.size() - start);
    auto part = tokenize<TT>(std::span<const Image>(images).subspan(start, n), tok.params, tok.cfg);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

template <class T>
int train_generator_impl(const TrainGeneratorArgs& a, const ConfigFlags& flags) {
  const Dataset data = load_dataset(a.data);
  const Checkpoint tok_ckpt = load_checkpoint(a.tokenizer);
  Config tok_config;
  const std::vector<TokenIds> tokens = checkpoint_precision(tok_ckpt) == "f32"
                                           ? tokenize_dataset<float>(tok_ckpt, data.images(), tok_config)
                                           : tokenize_dataset<double>(tok_ckpt, data.images(), tok_config);
  int num_classes = 0;
  for (int l : data.labels()) num_classes = std::max(num_classes, l + 1);
  GeneratorState<T> state;
  if (a.resume && std::filesystem::exists(std::filesystem::path(a.out) / "manifest.json")) {
    state = generator_from_checkpoint<T>(load_checkpoint(a.out));
  } else {
    const Config config = flags.resolve(tok_config);
    if (config.latent_tokens != tok_config.latent_tokens || config.codebook_size != tok_config.codebook_size) {
      throw ConfigError("train-generator: latent_tokens/codebook_size must match the tokenizer");
    }
    state = GeneratorState<T>::create(config, num_classes);
  }
  TrainOptions opts = TrainOptions::from(state.config, state.config.total_steps);
  opts.stop_at = a.stop_at;
  opts.on_step = progress_printer(a.log_every);
  print_progress_header();
  state.train(tokens, data.labels(), opts);
  save_checkpoint(to_checkpoint(state), a.out);
  std::fprintf(stderr, "saved generator checkpoint to %s\n", a.out.c_str());
  return kOk;
}

struct CodecArgs {
  std::string tokenizer, input, out;
  std::uint64_t seed = 0;
};

template <class T>
int tokenize_impl(const CodecArgs& a, const Checkpoint& ckpt) {
  const TokenizerState<T> s = tokenizer_from_checkpoint<T>(ckpt);
  write_token_file(tokenize<T>(load_ppm(a.input), s.params, s.cfg), a.out);
  return kOk;
}

template <class T>
int detokenize_impl(const CodecArgs& a, const Checkpoint& ckpt) {
  const TokenizerState<T> s = tokenizer_from_checkpoint<T>(ckpt);
  const TokenIds ids = read_token_file(a.input);
  if (ids.codebook_size != s.cfg.codebook_size) {
    throw DataError("detokenize: token file codebook_size " + std::to_string(ids.codebook_size) +
                    " differs from the tokenizer's " + std::to_string(s.cfg.codebook_size));
  }
  save_ppm(detokenize<T>(ids, s.params, s.cfg, s.teacher ? &*s.teacher : nullptr), a.out);
  return kOk;
}

struct SampleArgs {
  std::string generator, out, diagnostics, schedule = "arccos";
  int class_id = 0;
  int steps = 8;
  double guidance = 0.0;
  double temperature = 0.0;
  bool no_guidance = false;
  std::uint64_t seed = 0;
};

template <class T>
int sample_impl(const SampleArgs& a, const Checkpoint& ckpt) {
  const GeneratorState<T> s = generator_from_checkpoint<T>(ckpt);
  SampleOptions opts;
  opts.steps = a.steps;
  opts.guidance = a.guidance;
  opts.temperature = a.temperature;
  opts.schedule = parse_schedule(a.schedule);
  opts.guidance_enabled = !a.no_guidance;
  Rng rng(a.seed);
  std::vector<SampleStep> trace;
  const TokenIds ids = sample<T>(a.class_id, opts, rng, s.params, s.cfg, &trace);
  write_token_file(ids, a.out);
  if (!a.diagnostics.empty()) {
    std::ofstream csv(a.diagnostics);
    if (!csv) throw DataError("cannot write " + a.diagnostics);
    csv << "step,masked_count,min_conf,max_conf\n";
    char line[128];
    for (const auto& st : trace) {
      std::snprintf(line, sizeof line, "%d,%d,%.9g,%.9g\n", st.step, st.masked_count, st.min_conf, st.max_conf);
      csv << line;
    }
  }
  return kOk;
}

struct EvalArgs {
  std::string tokenizer, data;
  std::uint64_t seed = 0;
};

template <class T>
int eval_impl(const EvalArgs& a, const Checkpoint& ckpt) {
  const TokenizerState<T> s = tokenizer_from_checkpoint<T>(ckpt);
  const std::vector<Image> images = load_dataset(a.data).images();
  std::vector<Image> recon;
  std::vector<std::vector<int>> ids;
  for (std::size_t start = 0; start < images.size(); start += 64) {
    const auto part = std::span<const Image>(images).subspan(start, std::min<std::size_t>(64, images.size() - start));
    const auto toks = tokenize<T>(part, s.params, s.cfg);
    const auto imgs = detokenize<T>(toks, s.params, s.cfg, s.teacher ? &*s.teacher : nullptr);
    for (const auto& t : toks) ids.push_back(t.ids);
    recon.insert(recon.end(), imgs.begin(), imgs.end());
  }
  const double m = mean_mse(recon, images);
  const Utilization u = codebook_utilization(ids, s.cfg.codebook_size);
  std::printf("metric,value\nmse,%.9g\npsnr,%.6f\ncodebook_usage,%.6f\ncodebook_perplexity,%.6f\n", m, psnr_from_mse(m),
              u.usage_fraction, u.perplexity);
  return kOk;
}

struct ProbeArgs {
  std::string tokenizer, train, eval;
  int steps = 300;
  double lr = 0.05;
  bool shuffle_labels = false;
  std::uint64_t seed = 0;
};

template <class T>
int probe_impl(const ProbeArgs& a, const Checkpoint& ckpt) {
  const TokenizerState<T> s = tokenizer_from_checkpoint<T>(ckpt);
  const Dataset train = load_dataset(a.train);
  const Dataset eval = load_dataset(a.eval);
  int classes = 0;
  for (int l : train.labels()) classes = std::max(classes, l + 1);
  for (int l : eval.labels()) classes = std::max(classes, l + 1);
  ProbeOptions opts;
  opts.steps = a.steps;
  opts.lr = a.lr;
  opts.shuffle_labels = a.shuffle_labels;
  opts.seed = a.seed;
  const ProbeResult r = linear_probe<T>(s.params, s.cfg, train, eval, classes, opts);
  std::printf("metric,value\ntrain_accuracy,%.6f\neval_accuracy,%.6f\nchance,%.6f\n", r.train_accuracy, r.eval_accuracy,
              1.0 / classes);
  return kOk;
}

inline int cmd_grad_check(std::uint64_t seed) {
  bool ok = true;
  std::printf("check,max_rel_error,tolerance,status\n");
  for (const auto& e : run_grad_suite(seed)) {
    std::printf("%s,%.3e,%.0e,%s\n", e.name.c_str(), e.max_rel_error, e.tolerance, e.passed() ? "pass" : "FAIL");
    ok = ok && e.passed();
  }
  return ok ? kOk : kNumericAbort;
}

/// Runs `fn<float>` or `fn<double>` according to the checkpoint precision.
#define TITOK_DISPATCH(ckpt, fn, ...) \
  (checkpoint_precision(ckpt) == "f32" ? fn<float>(__VA_ARGS__) : fn<double>(__VA_ARGS__))

/// Entry point of the `titok` executable.
inline int run(int argc, char** argv) {
  CLI::App app{"titok: 1D image tokenizer and masked token generator"};
  app.option_defaults()->always_capture_default();
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  SynthArgs synth;
  auto* s_synth = app.add_subcommand("synth-data", "generate the labeled synthetic image set");
  s_synth->add_option("--out", synth.out, "output directory")->required();
  s_synth->add_option("--count", synth.count, "number of images");
  s_synth->add_option("--seed", synth.seed, "random seed");
  s_synth->add_option("--image-size", synth.image_size, "image side in pixels");
  s_synth->add_option("--classes", synth.classes, "number of classes");
  s_synth->add_option("--first-index", synth.first_index, "index of the first image (disjoint splits)");

  TrainTokenizerArgs tt;
  ConfigFlags tt_flags;
  auto* s_tt = app.add_subcommand("train-tokenizer", "train the tokenizer (proxy-code stage 1 or single-stage pixels)");
  s_tt->add_option("--data", tt.data, "dataset directory")->required();
  s_tt->add_option("--out", tt.out, "checkpoint directory")->required();
  s_tt->add_option("--stage", tt.stage, "proxy|pixel")->check(CLI::IsMember({"proxy", "pixel"}));
  s_tt->add_option("--precision", tt.precision, "f32|f64")->check(CLI::IsMember({"f32", "f64"}));
  s_tt->add_flag("--resume", tt.resume, "continue from an existing checkpoint in --out");
  s_tt->add_option("--log-every", tt.log_every, "print a progress record every N steps");
  s_tt->add_option("--stop-at", tt.stop_at, "save and exit after this step (-1: run to --total-steps)");
  s_tt->add_option("--codebook-lr-scale", tt.codebook_lr_scale, "codebook learning rate relative to --lr");
  tt_flags.attach(*s_tt);

  FinetuneArgs ft;
  ConfigFlags ft_flags;
  auto* s_ft = app.add_subcommand("finetune-decoder", "stage 2: pixel decoder fine-tuning with a frozen encoder and quantizer");
  s_ft->add_option("--data", ft.data, "dataset directory")->required();
  s_ft->add_option("--tokenizer", ft.tokenizer, "stage-1 checkpoint")->required();
  s_ft->add_option("--out", ft.out, "checkpoint directory")->required();
  s_ft->add_option("--steps", ft.steps, "fine-tuning steps");
  s_ft->add_option("--log-every", ft.log_every, "print a progress record every N steps");
  ft_flags.attach(*s_ft);

  TrainGeneratorArgs tg;
  ConfigFlags tg_flags;
  auto* s_tg = app.add_subcommand("train-generator", "train the class-conditional masked token generator");
  s_tg->add_option("--data", tg.data, "dataset directory (tokenized on load)")->required();
  s_tg->add_option("--tokenizer", tg.tokenizer, "tokenizer checkpoint")->required();
  s_tg->add_option("--out", tg.out, "checkpoint directory")->required();
  s_tg->add_flag("--resume", tg.resume, "continue from an existing checkpoint in --out");
  s_tg->add_option("--log-every", tg.log_every, "print a progress record every N steps");
  s_tg->add_option("--stop-at", tg.stop_at, "save and exit after this step (-1: run to --total-steps)");
  tg_flags.attach(*s_tg);

  CodecArgs tok;
  auto* s_tok = app.add_subcommand("tokenize", "encode a PPM image into a TIT1 token file");
  s_tok->add_option("--tokenizer", tok.tokenizer, "tokenizer checkpoint")->required();
  s_tok->add_option("--image", tok.input, "input PPM")->required();
  s_tok->add_option("--out", tok.out, "output token file")->required();
  s_tok->add_option("--seed", tok.seed, "random seed (tokenization is deterministic)");

  CodecArgs detok;
  auto* s_detok = app.add_subcommand("detokenize", "decode a TIT1 token file into a PPM image");
  s_detok->add_option("--tokenizer", detok.tokenizer, "tokenizer checkpoint")->required();
  s_detok->add_option("--tokens", detok.input, "input token file")->required();
  s_detok->add_option("--out", detok.out, "output PPM")->required();
  s_detok->add_option("--seed", detok.seed, "random seed (decoding is deterministic)");

  SampleArgs smp;
  auto* s_smp = app.add_subcommand("sample", "generate a token sequence for a class");
  s_smp->add_option("--generator", smp.generator, "generator checkpoint")->required();
  s_smp->add_option("--out", smp.out, "output token file")->required();
  s_smp->add_option("--class", smp.class_id, "class id (num_classes selects the null class)");
  s_smp->add_option("--steps", smp.steps, "decoding steps");
  s_smp->add_option("--guidance", smp.guidance, "classifier-free guidance scale");
  s_smp->add_option("--temperature", smp.temperature, "scale of the annealed Gumbel noise on confidences");
  s_smp->add_option("--schedule", smp.schedule, "cosine|arccos|linear|root")
      ->check(CLI::IsMember({"cosine", "arccos", "linear", "root"}));
  s_smp->add_flag("--no-guidance", smp.no_guidance, "never evaluate the unconditional branch");
  s_smp->add_option("--diagnostics", smp.diagnostics, "per-step CSV: step,masked_count,min_conf,max_conf");
  s_smp->add_option("--seed", smp.seed, "random seed");

  EvalArgs ev;
  auto* s_ev = app.add_subcommand("eval", "reconstruction MSE/PSNR and codebook statistics over a dataset");
  s_ev->add_option("--tokenizer", ev.tokenizer, "tokenizer checkpoint")->required();
  s_ev->add_option("--data", ev.data, "dataset directory")->required();
  s_ev->add_option("--seed", ev.seed, "random seed (evaluation is deterministic)");

  ProbeArgs pr;
  auto* s_pr = app.add_subcommand("probe", "linear probe on frozen tokenizer features");
  s_pr->add_option("--tokenizer", pr.tokenizer, "tokenizer checkpoint")->required();
  s_pr->add_option("--train", pr.train, "training split directory")->required();
  s_pr->add_option("--eval", pr.eval, "evaluation split directory")->required();
  s_pr->add_option("--steps", pr.steps, "full-batch optimizer steps");
  s_pr->add_option("--lr", pr.lr, "probe learning rate");
  s_pr->add_flag("--shuffle-labels", pr.shuffle_labels, "shuffle training labels (chance control)");
  s_pr->add_option("--seed", pr.seed, "seed for the label shuffle");

  std::uint64_t gc_seed = 0;
  auto* s_gc = app.add_subcommand("grad-check", "finite-difference gradient suite; prints max relative errors");
  s_gc->add_option("--seed", gc_seed, "random seed for inputs and sampled coordinates");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*s_synth) return cmd_synth(synth);
    if (*s_tt) {
      check_precision(tt.precision);
      return tt.precision == "f32" ? train_tokenizer_impl<float>(tt, tt_flags) : train_tokenizer_impl<double>(tt, tt_flags);
    }
    if (*s_ft) {
      const Checkpoint ckpt = load_checkpoint(ft.tokenizer);
      return TITOK_DISPATCH(ckpt, finetune_impl, ft, ft_flags, ckpt);
    }
    if (*s_tg) {
      const Checkpoint tok_ckpt = load_checkpoint(tg.tokenizer);
      return TITOK_DISPATCH(tok_ckpt, train_generator_impl, tg, tg_flags);
    }
    if (*s_tok) {
      const Checkpoint ckpt = load_checkpoint(tok.tokenizer);
      return TITOK_DISPATCH(ckpt, tokenize_impl, tok, ckpt);
    }
    if (*s_detok) {
      const Checkpoint ckpt = load_checkpoint(detok.tokenizer);
      return TITOK_DISPATCH(ckpt, detokenize_impl, detok, ckpt);
    }
    if (*s_smp) {
      const Checkpoint ckpt = load_checkpoint(smp.generator);
      return TITOK_DISPATCH(ckpt, sample_impl, smp, ckpt);
    }
    if (*s_ev) {
      const Checkpoint ckpt = load_checkpoint(ev.tokenizer);
      return TITOK_DISPATCH(ckpt, eval_impl, ev, ckpt);
    }
    if (*s_pr) {
      const Checkpoint ckpt = load_checkpoint(pr.tokenizer);
      return TITOK_DISPATCH(ckpt, probe_impl, pr, ckpt);
    }
    if (*s_gc) return cmd_grad_check(gc_seed);
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric error: %s\n", e.what());
    return kNumericAbort;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kDataError;
  }
  return kUsage;
}

#undef TITOK_DISPATCH

}  // namespace titok::cli
