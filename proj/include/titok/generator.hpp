#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "titok/params.hpp"
#include "titok/random.hpp"
#include "titok/token_file.hpp"
#include "titok/transformer.hpp"

namespace titok {

enum class ScheduleKind { cosine, arccos, linear, root };

inline const char* to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::cosine: return "cosine";
    case ScheduleKind::arccos: return "arccos";
    case ScheduleKind::linear: return "linear";
    case ScheduleKind::root: return "root";
  }
  return "?";
}

inline ScheduleKind parse_schedule(const std::string& s) {
  if (s == "cosine") return ScheduleKind::cosine;
  if (s == "arccos") return ScheduleKind::arccos;
  if (s == "linear") return ScheduleKind::linear;
  if (s == "root") return ScheduleKind::root;
  throw ConfigError("unknown schedule '" + s + "' (expected cosine, arccos, linear or root)");
}

inline constexpr ScheduleKind kAllSchedules[] = {ScheduleKind::cosine, ScheduleKind::arccos, ScheduleKind::linear,
                                                 ScheduleKind::root};

/// Masked fraction gamma(r) for progress r in [0, 1]; gamma(0) = 1, gamma(1) = 0.
inline double mask_ratio(ScheduleKind kind, double r) {
  if (!(r >= 0.0 && r <= 1.0)) throw DataError("mask_ratio: r = " + std::to_string(r) + " outside [0, 1]");
  switch (kind) {
    case ScheduleKind::cosine: return std::cos(std::numbers::pi * r / 2.0);
    case ScheduleKind::arccos: return 2.0 / std::numbers::pi * std::acos(r);
    case ScheduleKind::linear: return 1.0 - r;
    case ScheduleKind::root: return 1.0 - std::sqrt(r);
  }
  return 0.0;
}

/// Tokens still masked after each of the S sampling steps:
/// n_t = min(floor(gamma(t/S) * K), n_{t-1} - 1), n_0 = K, n_S = 0, clamped at 0.
inline std::vector<int> masked_counts(ScheduleKind kind, int k, int steps) {
  if (k < 1 || steps < 1) throw ConfigError("masked_counts: need K >= 1 and S >= 1");
  std::vector<int> n(static_cast<std::size_t>(steps));
  int prev = k;
  for (int t = 1; t <= steps; ++t) {
    const int raw = static_cast<int>(std::floor(mask_ratio(kind, static_cast<double>(t) / steps) * k));
    int cur = std::min(raw, prev - 1);
    if (t == steps) cur = 0;
    cur = std::max(cur, 0);
    n[static_cast<std::size_t>(t - 1)] = cur;
    prev = cur;
  }
  return n;
}

struct MaskedIds {
  std::vector<int> ids;      // with mask_id at masked positions
  std::vector<bool> masked;
};

/// Masks exactly max(1, round(r*K)) positions chosen uniformly without replacement.
inline MaskedIds apply_random_mask(std::span<const int> ids, double r, int mask_id, Rng& rng) {
  if (!(r > 0.0 && r <= 1.0)) throw ContractError("apply_random_mask: r must be in (0, 1]");
  const std::size_t k = ids.size();
  const auto count = std::min<std::size_t>(k, std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(r * static_cast<double>(k)))));
  std::vector<std::size_t> pos(k);
  for (std::size_t i = 0; i < k; ++i) pos[i] = i;
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(k - i));
    std::swap(pos[i], pos[j]);
  }
  MaskedIds out{std::vector<int>(ids.begin(), ids.end()), std::vector<bool>(k, false)};
  for (std::size_t i = 0; i < count; ++i) {
    out.ids[pos[i]] = mask_id;
    out.masked[pos[i]] = true;
  }
  return out;
}

struct GeneratorConfig {
  int latent_tokens = 8;    // K
  int codebook_size = 256;  // N; id N is MASK
  int num_classes = 4;      // class id num_classes is the null class
  VitConfig vit;
  ScheduleKind schedule = ScheduleKind::arccos;
  double class_dropout = 0.1;

  int mask_id() const { return codebook_size; }
  int null_class() const { return num_classes; }

  void validate() const {
    if (latent_tokens < 1 || codebook_size < 2 || num_classes < 1) {
      throw ConfigError("generator: need K >= 1, N >= 2 and at least one class");
    }
    if (!(class_dropout >= 0.0 && class_dropout <= 1.0)) throw ConfigError("generator: class_dropout outside [0, 1]");
    vit.validate();
    if (vit.patch_dim != 0) throw ConfigError("generator: no patch embedding expected");
    if (vit.seq_capacity < latent_tokens + 1) throw ConfigError("generator: seq_capacity must be >= K + 1");
  }

  static GeneratorConfig make(int k, int n, int classes, int dim, int layers, int heads) {
    GeneratorConfig c;
    c.latent_tokens = k;
    c.codebook_size = n;
    c.num_classes = classes;
    c.vit = VitConfig{dim, layers, heads, 4.0, k + 1, 0};
    return c;
  }
};

template <class T>
struct GeneratorParams {
  Tensor<T> token_embed;  // [(N+1) x D], last row = MASK
  Tensor<T> class_embed;  // [(C+1) x D], last row = null class
  VitParams<T> vit;
  Linear<T> head;         // D -> N

  static GeneratorParams init(const GeneratorConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng(seed);
    const auto d = static_cast<std::size_t>(cfg.vit.dim);
    GeneratorParams p;
    p.token_embed = trunc_normal_tensor<T>({static_cast<std::size_t>(cfg.codebook_size) + 1, d}, kInitStd, rng);
    p.class_embed = trunc_normal_tensor<T>({static_cast<std::size_t>(cfg.num_classes) + 1, d}, kInitStd, rng);
    p.vit = VitParams<T>::init(cfg.vit, rng);
    p.head = Linear<T>::init(d, static_cast<std::size_t>(cfg.codebook_size), rng);
    return p;
  }

  ParamList<T> parameters() {
    ParamList<T> out;
    out.push_back({"token_embed", &token_embed, false});
    out.push_back({"class_embed", &class_embed, false});
    vit.collect(out, "vit");
    head.collect(out, "head");
    return out;
  }
};

/// Logits [B*K x N] for B sequences (ids flattened, MASK = N) conditioned on
/// one class per sequence. Each sequence is [class token, K tokens]; the class
/// position is dropped from the output.
template <class T>
Tensor<T> predict_logits(std::span<const int> ids, std::span<const int> class_ids, const GeneratorParams<T>& params,
                         const GeneratorConfig& cfg) {
  const auto k = static_cast<std::size_t>(cfg.latent_tokens);
  const std::size_t batch = class_ids.size();
  if (batch == 0 || ids.size() != batch * k) {
    throw DimensionError("predict_logits: " + std::to_string(ids.size()) + " ids for " + std::to_string(batch) +
                         " sequences of K=" + std::to_string(k));
  }
  const auto vocab_rows = static_cast<std::size_t>(cfg.codebook_size) + 1;
  std::vector<std::size_t> rows;
  rows.reserve(batch * (k + 1));
  for (std::size_t b = 0; b < batch; ++b) {
    const int c = class_ids[b];
    if (c < 0 || c > cfg.num_classes) throw DataError("predict_logits: class id " + std::to_string(c) + " out of range");
    rows.push_back(vocab_rows + static_cast<std::size_t>(c));
    for (std::size_t i = 0; i < k; ++i) {
      const int id = ids[b * k + i];
      if (id < 0 || id > cfg.codebook_size) throw DataError("predict_logits: token id " + std::to_string(id) + " out of range");
      rows.push_back(static_cast<std::size_t>(id));
    }
  }
  const Tensor<T> seq = gather_rows(concat_rows<T>({params.token_embed, params.class_embed}), std::move(rows));
  const Tensor<T> hidden = vit_forward(seq, batch, params.vit, cfg.vit);
  std::vector<std::size_t> keep;
  keep.reserve(batch * k);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < k; ++i) keep.push_back(b * (k + 1) + 1 + i);
  return params.head(gather_rows(hidden, std::move(keep)));
}

/// Classifier-free guidance: l_c + w * (l_c - l_u).
template <class T>
Tensor<T> cfg_combine(const Tensor<T>& cond, const Tensor<T>& uncond, double w) {
  if (cond.shape() != uncond.shape()) {
    throw DimensionError("cfg_combine: shape mismatch " + to_string(cond.shape()) + " vs " + to_string(uncond.shape()));
  }
  const auto c = cond.values(), u = uncond.values();
  const T wt = static_cast<T>(w);
  std::vector<T> out(c.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c[i] + wt * (c[i] - u[i]);
  return Tensor<T>(cond.shape(), std::move(out));
}

struct SampleOptions {
  int steps = 8;
  double guidance = 0.0;
  double temperature = 0.0;  // scale of the annealed Gumbel noise on confidences
  ScheduleKind schedule = ScheduleKind::arccos;
  bool guidance_enabled = true;  // false: never evaluate the null-class branch
};

struct SampleStep {
  int step = 0;
  int masked_count = 0;  // after this step
  double min_conf = 0.0;  // over positions that were masked entering the step
  double max_conf = 0.0;
  std::vector<int> ids;  // state after this step, MASK = N
};

/// Iterative confidence-based decoding from an all-MASK sequence. At step t
/// every masked position draws an id from softmax(logits); its confidence is
/// log p(id) + temperature * (1 - t/S) * Gumbel. The most confident draws are
/// frozen so that exactly masked_counts(...)[t-1] positions stay masked.
template <class T>
TokenIds sample(int class_id, const SampleOptions& opts, Rng& rng, const GeneratorParams<T>& params,
                const GeneratorConfig& cfg, std::vector<SampleStep>* trace = nullptr) {
  if (opts.steps < 1) throw ConfigError("sample: steps must be >= 1");
  if (class_id < 0 || class_id > cfg.num_classes) throw DataError("sample: class id " + std::to_string(class_id) + " out of range");
  NoGradGuard no_grad;
  const int k = cfg.latent_tokens, n = cfg.codebook_size;
  const std::vector<int> schedule = masked_counts(opts.schedule, k, opts.steps);
  std::vector<int> ids(static_cast<std::size_t>(k), cfg.mask_id());
  std::vector<double> prob(static_cast<std::size_t>(n));
  const int cond_class[1] = {class_id};
  const int null_class[1] = {cfg.null_class()};

  for (int t = 1; t <= opts.steps; ++t) {
    Tensor<T> logits = predict_logits<T>(ids, cond_class, params, cfg);
    if (opts.guidance_enabled) logits = cfg_combine(logits, predict_logits<T>(ids, null_class, params, cfg), opts.guidance);
    const double noise_scale = opts.temperature * (1.0 - static_cast<double>(t) / opts.steps);

    struct Candidate {
      std::size_t pos;
      int id;
      double conf;
    };
    std::vector<Candidate> cands;
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] != cfg.mask_id()) continue;
      const auto row = logits.values().subspan(i * static_cast<std::size_t>(n), static_cast<std::size_t>(n));
      double mx = -std::numeric_limits<double>::infinity();
      for (T v : row) mx = std::max(mx, static_cast<double>(v));
      double z = 0.0;
      for (std::size_t j = 0; j < prob.size(); ++j) {
        prob[j] = std::exp(static_cast<double>(row[j]) - mx);
        z += prob[j];
      }
      const double u = rng.uniform() * z;
      std::size_t pick = prob.size() - 1;
      double acc = 0.0;
      for (std::size_t j = 0; j < prob.size(); ++j) {
        acc += prob[j];
        if (u < acc) {
          pick = j;
          break;
        }
      }
      const double logp = std::log(prob[pick] / z);
      const double g = rng.gumbel();
      const double conf = logp + noise_scale * g;
      if (!std::isfinite(conf)) throw NumericError("sample: non-finite confidence");
      cands.push_back({i, static_cast<int>(pick), conf});
    }

    const int target = schedule[static_cast<std::size_t>(t - 1)];
    const std::size_t unmask = cands.size() - static_cast<std::size_t>(target);
    std::stable_sort(cands.begin(), cands.end(), [](const Candidate& a, const Candidate& b) { return a.conf > b.conf; });
    for (std::size_t c = 0; c < unmask; ++c) ids[cands[c].pos] = cands[c].id;

    if (trace) {
      SampleStep s;
      s.step = t;
      s.masked_count = target;
      s.min_conf = cands.empty() ? 0.0 : cands.back().conf;
      s.max_conf = cands.empty() ? 0.0 : cands.front().conf;
      s.ids = ids;
      trace->push_back(std::move(s));
    }
  }
  return TokenIds{ids, n};
}

}  // namespace titok
