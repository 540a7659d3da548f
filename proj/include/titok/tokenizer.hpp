#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "titok/image.hpp"
#include "titok/params.hpp"
#include "titok/quantizer.hpp"
#include "titok/teacher.hpp"
#include "titok/token_file.hpp"
#include "titok/transformer.hpp"

namespace titok {

enum class HeadMode { proxy_logits, pixels };

inline const char* to_string(HeadMode m) { return m == HeadMode::pixels ? "pixels" : "proxy"; }

inline HeadMode parse_head_mode(const std::string& s) {
  if (s == "proxy" || s == "proxy_logits") return HeadMode::proxy_logits;
  if (s == "pixels" || s == "pixel") return HeadMode::pixels;
  throw ConfigError("unknown head mode '" + s + "' (expected proxy or pixels)");
}

struct TitokConfig {
  int image_size = 32;
  int patch_size = 8;
  int latent_tokens = 8;
  VitConfig encoder;
  VitConfig decoder;
  int code_dim = kCodeDim;
  int codebook_size = 256;
  HeadMode head_mode = HeadMode::proxy_logits;
  int teacher_vocab = 64;
  double beta = 0.25;
  bool l2_normalize = false;  // cosine lookup: latents and codes on the unit sphere

  int grid_side() const { return image_size / patch_size; }
  int grid_size() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }
  /// Positions needed per network: patches (or mask tokens), latents, one condition slot.
  int seq_needed() const { return grid_size() + latent_tokens + 1; }

  void validate() const {
    if (image_size <= 0 || patch_size <= 0 || image_size % patch_size != 0) {
      throw ConfigError("titok: image_size " + std::to_string(image_size) + " is not divisible by patch_size " +
                        std::to_string(patch_size));
    }
    if (latent_tokens < 1) throw ConfigError("titok: latent_tokens must be >= 1");
    if (code_dim < 1 || codebook_size < 2) throw ConfigError("titok: need code_dim >= 1 and codebook_size >= 2");
    if (!(beta >= 0)) throw ConfigError("titok: beta must be >= 0");
    if (head_mode == HeadMode::proxy_logits && teacher_vocab < 2) throw ConfigError("titok: proxy head needs teacher_vocab >= 2");
    encoder.validate();
    decoder.validate();
    if (encoder.patch_dim != patch_dim()) throw ConfigError("titok: encoder patch embedding width mismatch");
    if (decoder.patch_dim != 0) throw ConfigError("titok: decoder takes no patch embedding");
    if (encoder.seq_capacity < seq_needed() || decoder.seq_capacity < seq_needed()) {
      throw ConfigError("titok: seq_capacity must be >= num_patches + K + 1 = " + std::to_string(seq_needed()));
    }
  }

  /// Builds encoder/decoder ViT configs of equal shape for this geometry.
  static TitokConfig make(int image_size, int patch_size, int latent_tokens, int dim, int layers, int heads,
                          int code_dim, int codebook_size) {
    TitokConfig c;
    c.image_size = image_size;
    c.patch_size = patch_size;
    c.latent_tokens = latent_tokens;
    c.code_dim = code_dim;
    c.codebook_size = codebook_size;
    c.encoder = VitConfig{dim, layers, heads, 4.0, 0, 0};
    if (patch_size > 0 && image_size % patch_size == 0) {
      c.encoder.seq_capacity = c.seq_needed();
      c.encoder.patch_dim = c.patch_dim();
    }
    c.decoder = c.encoder;
    c.decoder.patch_dim = 0;
    return c;
  }

  /// Desk-scale preset: 32px images, f=8, K=8, D=64, N=256, d_code=16.
  static TitokConfig toy() { return make(32, 8, 8, 64, 4, 4, kCodeDim, 256); }
};

/// Codebook step size relative to the base learning rate.
inline constexpr double kDefaultCodebookLrScale = 10.0;

template <class T>
struct TitokParams {
  VitParams<T> encoder;
  VitParams<T> decoder;
  Tensor<T> latent_tokens;  // [K x D_enc]
  Tensor<T> mask_token;     // [1 x D_dec], replicated over the grid
  Linear<T> pre_quant;      // D_enc -> d_code
  Linear<T> post_quant;     // d_code -> D_dec
  Linear<T> head;           // D_dec -> teacher_vocab | f*f*3
  Codebook<T> codebook;
  double codebook_lr_scale = kDefaultCodebookLrScale;

  static TitokParams init(const TitokConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    TitokParams p;
    const auto de = static_cast<std::size_t>(cfg.encoder.dim), dd = static_cast<std::size_t>(cfg.decoder.dim);
    p.encoder = VitParams<T>::init(cfg.encoder, rng);
    p.decoder = VitParams<T>::init(cfg.decoder, rng);
    p.latent_tokens = trunc_normal_tensor<T>({static_cast<std::size_t>(cfg.latent_tokens), de}, kInitStd, rng);
    p.mask_token = trunc_normal_tensor<T>({1, dd}, kInitStd, rng);
    p.pre_quant = Linear<T>::init(de, static_cast<std::size_t>(cfg.code_dim), rng);
    p.post_quant = Linear<T>::init(static_cast<std::size_t>(cfg.code_dim), dd, rng);
    p.head = Linear<T>::init(dd, head_width(cfg), rng);
    p.codebook = init_codebook<T>(seed ^ 0x9e3779b97f4a7c15ULL, cfg.codebook_size, cfg.code_dim);
    return p;
  }

  static std::size_t head_width(const TitokConfig& cfg) {
    return static_cast<std::size_t>(cfg.head_mode == HeadMode::pixels ? cfg.patch_dim() : cfg.teacher_vocab);
  }

  /// Encoder, latent embeddings, projection into the quantizer and codebook.
  ParamList<T> encoder_side() {
    ParamList<T> out;
    encoder.collect(out, "encoder");
    out.push_back({"latent_tokens", &latent_tokens, false});
    pre_quant.collect(out, "pre_quant");
    out.push_back({"codebook", &codebook.codes, false, codebook_lr_scale});
    return out;
  }

  /// Everything downstream of the quantizer output.
  ParamList<T> decoder_side() {
    ParamList<T> out;
    out.push_back({"mask_token", &mask_token, false});
    post_quant.collect(out, "post_quant");
    decoder.collect(out, "decoder");
    head.collect(out, "head");
    return out;
  }

  ParamList<T> parameters() {
    ParamList<T> out = encoder_side();
    for (auto& r : decoder_side()) out.push_back(r);
    return out;
  }
};

/// Stage-2 head swap: drops the proxy head, installs a freshly initialised
/// pixel head, and freezes the encoder side.
template <class T>
void install_pixel_head(TitokConfig& cfg, TitokParams<T>& params, std::uint64_t seed) {
  cfg.head_mode = HeadMode::pixels;
  Rng rng(seed);
  params.head = Linear<T>::init(static_cast<std::size_t>(cfg.decoder.dim), static_cast<std::size_t>(cfg.patch_dim()), rng);
  auto enc = params.encoder_side();
  set_trainable(enc, false);
}

namespace detail {

inline void check_batch(const TitokConfig& cfg, std::span<const Image> images) {
  if (images.empty()) throw ConfigError("titok: empty image batch");
  for (const Image& img : images) {
    if (img.height != cfg.image_size || img.width != cfg.image_size) {
      throw ConfigError("titok: image is " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                        ", configured for " + std::to_string(cfg.image_size) + "x" + std::to_string(cfg.image_size));
    }
  }
}

}  // namespace detail

/// Continuous latent tokens [B*K x D_enc]: the encoder sees
/// [patch tokens ⊕ latent tokens] per image and only the latent positions are kept.
template <class T>
Tensor<T> encode(std::span<const Image> images, const TitokParams<T>& params, const TitokConfig& cfg) {
  detail::check_batch(cfg, images);
  const std::size_t batch = images.size();
  const auto g = static_cast<std::size_t>(cfg.grid_size()), k = static_cast<std::size_t>(cfg.latent_tokens);
  const Tensor<T> patches = patch_embed(patchify<T>(images, cfg.patch_size), params.encoder);
  std::vector<std::size_t> order;
  order.reserve(batch * (g + k));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < g; ++i) order.push_back(b * g + i);
    for (std::size_t i = 0; i < k; ++i) order.push_back(batch * g + i);
  }
  const Tensor<T> seq = gather_rows(concat_rows<T>({patches, params.latent_tokens}), std::move(order));
  const Tensor<T> hidden = vit_forward(seq, batch, params.encoder, cfg.encoder);
  std::vector<std::size_t> keep;
  keep.reserve(batch * k);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) keep.push_back(b * (g + k) + g + i);
  return gather_rows(hidden, std::move(keep));
}

template <class T>
Tensor<T> encode(const Image& image, const TitokParams<T>& params, const TitokConfig& cfg) {
  return encode(std::span<const Image>(&image, 1), params, cfg);
}

/// One TokenIds per image: encode, project to d_code, nearest code per row.
template <class T>
std::vector<TokenIds> tokenize(std::span<const Image> images, const TitokParams<T>& params, const TitokConfig& cfg) {
  NoGradGuard no_grad;
  const Tensor<T> z = params.pre_quant(encode(images, params, cfg));
  const std::vector<int> ids = select_codes(z, params.codebook, cfg.l2_normalize);
  const auto k = static_cast<std::size_t>(cfg.latent_tokens);
  std::vector<TokenIds> out(images.size());
  for (std::size_t b = 0; b < images.size(); ++b) {
    out[b].codebook_size = cfg.codebook_size;
    out[b].ids.assign(ids.begin() + static_cast<std::ptrdiff_t>(b * k), ids.begin() + static_cast<std::ptrdiff_t>((b + 1) * k));
  }
  return out;
}

template <class T>
TokenIds tokenize(const Image& image, const TitokParams<T>& params, const TitokConfig& cfg) {
  return tokenize(std::span<const Image>(&image, 1), params, cfg).front();
}

template <class T>
struct DecoderInput {
  Tensor<T> tokens;                 // [B*(K+G) x D_dec]
  std::size_t latent_rows = 0;      // per image
  std::size_t mask_replicas = 0;    // per image, all copies of the single mask embedding
};

/// Builds [projected latents (K) ⊕ mask token replicated G times] per image.
template <class T>
DecoderInput<T> decoder_input(const Tensor<T>& quantized, std::size_t batch, const TitokParams<T>& params,
                              const TitokConfig& cfg) {
  const auto k = static_cast<std::size_t>(cfg.latent_tokens), g = static_cast<std::size_t>(cfg.grid_size());
  if (quantized.rank() != 2 || quantized.dim(0) != batch * k || quantized.dim(1) != static_cast<std::size_t>(cfg.code_dim)) {
    throw ContractError("decode_latents: expected " + std::to_string(batch * k) + "x" + std::to_string(cfg.code_dim) +
                        " quantized latents, got " + to_string(quantized.shape()));
  }
  const Tensor<T> latents = params.post_quant(quantized);
  const std::size_t mask_row = batch * k;
  std::vector<std::size_t> order;
  order.reserve(batch * (k + g));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t i = 0; i < k; ++i) order.push_back(b * k + i);
    for (std::size_t i = 0; i < g; ++i) order.push_back(mask_row);
  }
  DecoderInput<T> in;
  in.latent_rows = k;
  in.mask_replicas = static_cast<std::size_t>(std::count(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k + g), mask_row));
  in.tokens = gather_rows(concat_rows<T>({latents, params.mask_token}), std::move(order));
  return in;
}

template <class T>
struct DecoderOutput {
  Tensor<T> values;  // [B*G x teacher_vocab] logits, or [B*G x f*f*3] pixels in [0,1]
  HeadMode mode = HeadMode::proxy_logits;
  std::size_t batch = 0;

  /// Per-cell argmax, one grid of proxy codes per image.
  std::vector<std::vector<int>> proxy_codes() const {
    if (mode != HeadMode::proxy_logits) throw ContractError("proxy_codes: decoder is in pixel mode");
    const std::size_t rows = values.dim(0), c = values.dim(1), g = rows / batch;
    std::vector<std::vector<int>> out(batch);
    for (std::size_t r = 0; r < rows; ++r) {
      const auto row = values.values().subspan(r * c, c);
      out[r / g].push_back(static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin()));
    }
    return out;
  }

  std::vector<Image> images(const TitokConfig& cfg) const {
    if (mode != HeadMode::pixels) throw ContractError("images: decoder is in proxy mode");
    return unpatchify<T>(values.values(), batch, cfg.image_size, cfg.patch_size);
  }
};

/// Decoder pass from quantized latents ([B*K x d_code]).
template <class T>
DecoderOutput<T> decode_latents(const Tensor<T>& quantized, std::size_t batch, const TitokParams<T>& params,
                                const TitokConfig& cfg) {
  if (params.head.weight.dim(1) != TitokParams<T>::head_width(cfg)) {
    throw ConfigError(std::string("decode_latents: head width does not match ") + to_string(cfg.head_mode) + " mode");
  }
  const DecoderInput<T> in = decoder_input(quantized, batch, params, cfg);
  const Tensor<T> hidden = vit_forward(in.tokens, batch, params.decoder, cfg.decoder);
  const auto k = static_cast<std::size_t>(cfg.latent_tokens), g = static_cast<std::size_t>(cfg.grid_size());
  std::vector<std::size_t> grid;
  grid.reserve(batch * g);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < g; ++i) grid.push_back(b * (k + g) + k + i);
  const Tensor<T> out = params.head(gather_rows(hidden, std::move(grid)));
  return {cfg.head_mode == HeadMode::pixels ? sigmoid(out) : out, cfg.head_mode, batch};
}

/// Codebook rows for validated ids, stacked as [B*K x d_code].
template <class T>
Tensor<T> lookup_codes(std::span<const TokenIds> tokens, const TitokParams<T>& params, const TitokConfig& cfg) {
  std::vector<int> ids;
  for (const TokenIds& t : tokens) {
    if (t.ids.size() != static_cast<std::size_t>(cfg.latent_tokens)) {
      throw DataError("detokenize: expected " + std::to_string(cfg.latent_tokens) + " ids, got " +
                      std::to_string(t.ids.size()));
    }
    for (int id : t.ids) {
      if (id < 0 || id >= cfg.codebook_size) {
        throw DataError("detokenize: id " + std::to_string(id) + " outside codebook of " + std::to_string(cfg.codebook_size));
      }
      ids.push_back(id);
    }
  }
  return gather_codes(params.codebook, ids, cfg.l2_normalize);
}

/// Decoder output for token sequences (codebook lookup then decode_latents).
template <class T>
DecoderOutput<T> decode_tokens(std::span<const TokenIds> tokens, const TitokParams<T>& params, const TitokConfig& cfg) {
  NoGradGuard no_grad;
  return decode_latents(lookup_codes(tokens, params, cfg), tokens.size(), params, cfg);
}

/// Proxy mode only: predicted teacher-code grid per sequence.
template <class T>
std::vector<std::vector<int>> detokenize_codes(std::span<const TokenIds> tokens, const TitokParams<T>& params,
                                               const TitokConfig& cfg) {
  return decode_tokens(tokens, params, cfg).proxy_codes();
}

/// RGB reconstruction. Pixel mode decodes directly; proxy mode decodes the
/// predicted code grid with the teacher.
template <class T>
std::vector<Image> detokenize(std::span<const TokenIds> tokens, const TitokParams<T>& params, const TitokConfig& cfg,
                              const ProxyTeacher* teacher = nullptr) {
  const DecoderOutput<T> out = decode_tokens(tokens, params, cfg);
  if (cfg.head_mode == HeadMode::pixels) return out.images(cfg);
  if (!teacher) throw ConfigError("detokenize: proxy-mode tokenizer needs its teacher to produce RGB");
  std::vector<Image> images;
  for (const auto& codes : out.proxy_codes()) images.push_back(teacher->decode_codes(codes));
  return images;
}

template <class T>
Image detokenize(const TokenIds& tokens, const TitokParams<T>& params, const TitokConfig& cfg,
                 const ProxyTeacher* teacher = nullptr) {
  return detokenize(std::span<const TokenIds>(&tokens, 1), params, cfg, teacher).front();
}

template <class T>
struct ReconResult {
  DecoderOutput<T> output;
  std::vector<int> ids;  // B*K selected code ids
  Tensor<T> codebook_loss;
  Tensor<T> commitment_loss;
  Tensor<T> recon_loss;
  Tensor<T> total;
};

/// Teacher targets for a batch, flattened in decoder row order.
inline std::vector<int> teacher_targets(std::span<const Image> images, const ProxyTeacher& teacher, const TitokConfig& cfg) {
  if (teacher.grid_side() != cfg.grid_side() || teacher.vocab_size() != cfg.teacher_vocab) {
    throw ConfigError("titok: teacher grid " + std::to_string(teacher.grid_side()) + "/vocab " +
                      std::to_string(teacher.vocab_size()) + " does not match tokenizer grid " +
                      std::to_string(cfg.grid_side()) + "/vocab " + std::to_string(cfg.teacher_vocab));
  }
  std::vector<int> targets;
  for (const Image& img : images) {
    const auto codes = teacher.encode_codes(img);
    targets.insert(targets.end(), codes.begin(), codes.end());
  }
  return targets;
}

/// Quantizer state for `images` at the current parameters, for
/// finite-difference checks of reconstruct.
template <class T>
FrozenSelection<T> freeze_selection(std::span<const Image> images, const TitokParams<T>& params, const TitokConfig& cfg) {
  NoGradGuard no_grad;
  return freeze_selection(params.pre_quant(encode(images, params, cfg)), params.codebook, cfg.l2_normalize);
}

/// Full tokenizer pass with straight-through quantization. recon_loss is
/// pixel MSE (pixel mode) or mean cross-entropy against teacher codes (proxy
/// mode); total = recon + codebook + commitment.
template <class T>
ReconResult<T> reconstruct(std::span<const Image> images, const TitokParams<T>& params, const TitokConfig& cfg,
                           const ProxyTeacher* teacher = nullptr, const FrozenSelection<T>* frozen = nullptr) {
  const Tensor<T> z = params.pre_quant(encode(images, params, cfg));
  QuantResult<T> q = quantize(z, params.codebook, static_cast<T>(cfg.beta), cfg.l2_normalize, frozen);
  ReconResult<T> r;
  r.output = decode_latents(q.quantized, images.size(), params, cfg);
  if (cfg.head_mode == HeadMode::pixels) {
    r.recon_loss = mse_loss(r.output.values, patchify<T>(images, cfg.patch_size));
  } else {
    if (!teacher) throw ConfigError("reconstruct: proxy mode needs a teacher");
    const std::vector<int> targets = teacher_targets(images, *teacher, cfg);
    r.recon_loss = cross_entropy(r.output.values, targets);
  }
  r.ids = std::move(q.ids);
  r.codebook_loss = q.codebook_loss;
  r.commitment_loss = q.commitment_loss;
  r.total = add(add(r.recon_loss, r.codebook_loss), r.commitment_loss);
  return r;
}

}  // namespace titok
