#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "titok/image.hpp"
#include "titok/ops.hpp"
#include "titok/params.hpp"

namespace titok {

struct VitConfig {
  int dim = 64;
  int layers = 4;
  int heads = 4;
  double mlp_ratio = 4.0;
  int seq_capacity = 32;  // positional-embedding rows
  int patch_dim = 0;      // input width of the patch embedding; 0 = no patch embedding

  int mlp_hidden() const { return static_cast<int>(std::lround(dim * mlp_ratio)); }

  void validate() const {
    if (dim <= 0 || layers < 0 || heads <= 0 || seq_capacity <= 0 || patch_dim < 0 || !(mlp_ratio > 0)) {
      throw ConfigError("vit: dimensions must be positive");
    }
    if (dim % heads != 0) {
      throw ConfigError("vit: width " + std::to_string(dim) + " is not divisible by " + std::to_string(heads) +
                        " heads");
    }
    if (mlp_hidden() <= 0) throw ConfigError("vit: mlp_ratio gives an empty hidden layer");
  }
};

template <class T>
struct AttentionParams {
  Linear<T> qkv;   // D -> 3D, packed [Q | K | V]
  Linear<T> proj;  // D -> D

  void collect(ParamList<T>& out, const std::string& prefix) {
    qkv.collect(out, prefix + ".qkv");
    proj.collect(out, prefix + ".proj");
  }
};

template <class T>
struct VitBlock {
  LayerNormParams<T> ln1;
  AttentionParams<T> attn;
  LayerNormParams<T> ln2;
  Linear<T> fc1;
  Linear<T> fc2;

  void collect(ParamList<T>& out, const std::string& prefix) {
    ln1.collect(out, prefix + ".ln1");
    attn.collect(out, prefix + ".attn");
    ln2.collect(out, prefix + ".ln2");
    fc1.collect(out, prefix + ".fc1");
    fc2.collect(out, prefix + ".fc2");
  }
};

template <class T>
struct VitParams {
  std::optional<Linear<T>> patch_embed;
  Tensor<T> pos;  // [seq_capacity x D]
  std::vector<VitBlock<T>> blocks;
  LayerNormParams<T> ln_final;

  static VitParams init(const VitConfig& cfg, Rng& rng) {
    cfg.validate();
    const auto d = static_cast<std::size_t>(cfg.dim);
    const auto hidden = static_cast<std::size_t>(cfg.mlp_hidden());
    VitParams p;
    if (cfg.patch_dim > 0) p.patch_embed = Linear<T>::init(static_cast<std::size_t>(cfg.patch_dim), d, rng);
    p.pos = trunc_normal_tensor<T>({static_cast<std::size_t>(cfg.seq_capacity), d}, kInitStd, rng);
    for (int l = 0; l < cfg.layers; ++l) {
      VitBlock<T> b;
      b.ln1 = LayerNormParams<T>::init(d);
      b.attn.qkv = Linear<T>::init(d, 3 * d, rng);
      b.attn.proj = Linear<T>::init(d, d, rng);
      b.ln2 = LayerNormParams<T>::init(d);
      b.fc1 = Linear<T>::init(d, hidden, rng);
      b.fc2 = Linear<T>::init(hidden, d, rng);
      p.blocks.push_back(std::move(b));
    }
    p.ln_final = LayerNormParams<T>::init(d);
    return p;
  }

  void collect(ParamList<T>& out, const std::string& prefix) {
    if (patch_embed) patch_embed->collect(out, prefix + ".patch_embed");
    out.push_back({prefix + ".pos", &pos, false});
    for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".blocks." + std::to_string(i));
    ln_final.collect(out, prefix + ".ln_final");
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    collect(out, "vit");
    return out;
  }
};

/// Projects flattened patches ([n x f*f*3], see patchify) to model width.
template <class T>
Tensor<T> patch_embed(const Tensor<T>& patches, const VitParams<T>& params) {
  if (!params.patch_embed) throw ConfigError("patch_embed: network has no patch embedding");
  return (*params.patch_embed)(patches);
}

/// Single-image convenience: [(H/f * W/f) x D] tokens in raster order.
template <class T>
Tensor<T> patch_embed(const Image& image, int f, const VitParams<T>& params) {
  return patch_embed(patchify<T>(std::span<const Image>(&image, 1), f), params);
}

/// Unmasked multi-head self-attention over each of `batch` equal-length
/// sequences stacked in x ([batch*T x D]).
template <class T>
Tensor<T> multi_head_attention(const Tensor<T>& x, std::size_t batch, const AttentionParams<T>& params,
                               std::size_t heads) {
  return params.proj(attention(params.qkv(x), batch, heads));
}

/// Adds positional embeddings for positions 0..T-1, runs the pre-norm block
/// stack and the final LayerNorm. tokens is [batch*T x D].
template <class T>
Tensor<T> vit_forward(const Tensor<T>& tokens, std::size_t batch, const VitParams<T>& params,
                      const VitConfig& cfg) {
  if (tokens.rank() != 2 || batch == 0 || tokens.dim(0) % batch != 0 ||
      tokens.dim(1) != static_cast<std::size_t>(cfg.dim)) {
    throw DimensionError("vit_forward: tokens " + to_string(tokens.shape()) + " for batch " +
                         std::to_string(batch) + " and width " + std::to_string(cfg.dim));
  }
  const std::size_t seq = tokens.dim(0) / batch;
  if (seq > static_cast<std::size_t>(cfg.seq_capacity)) {
    throw ConfigError("vit_forward: sequence of " + std::to_string(seq) + " exceeds capacity " +
                      std::to_string(cfg.seq_capacity));
  }
  std::vector<std::size_t> pos_index(batch * seq);
  for (std::size_t i = 0; i < pos_index.size(); ++i) pos_index[i] = i % seq;
  Tensor<T> x = add(tokens, gather_rows(params.pos, std::move(pos_index)));
  const auto heads = static_cast<std::size_t>(cfg.heads);
  for (const auto& block : params.blocks) {
    x = add(x, multi_head_attention(block.ln1(x), batch, block.attn, heads));
    x = add(x, block.fc2(gelu(block.fc1(block.ln2(x)))));
  }
  return params.ln_final(x);
}

}  // namespace titok
