#include <cmath>
#include <numbers>
#include <set>

#include "test_util.hpp"

using namespace titok;
using titok::testing::for_all;
using titok::testing::rand_int;
using titok::testing::rand_tensor;

namespace {

GeneratorConfig small_gen(int k = 8, int n = 16, int classes = 4) { return GeneratorConfig::make(k, n, classes, 16, 1, 2); }

/// Direct evaluation of n_t = min(floor(gamma(t/S) K), n_{t-1} - 1), n_S = 0.
std::vector<int> schedule_oracle(double (*gamma)(double), int k, int s) {
  std::vector<int> n;
  int prev = k;
  for (int t = 1; t <= s; ++t) {
    int cur = t == s ? 0 : std::max(0, std::min(static_cast<int>(std::floor(gamma(static_cast<double>(t) / s) * k)), prev - 1));
    n.push_back(cur);
    prev = cur;
  }
  return n;
}

double cosine_gamma(double r) { return std::cos(std::numbers::pi / 2 * r); }

}  // namespace

TEST(MaskRatio, Examples) {
  for (ScheduleKind k : kAllSchedules) {
    EXPECT_NEAR(mask_ratio(k, 0.0), 1.0, 1e-15) << to_string(k);
    EXPECT_NEAR(mask_ratio(k, 1.0), 0.0, 1e-15) << to_string(k);
  }
  EXPECT_NEAR(mask_ratio(ScheduleKind::cosine, 0.5), std::sqrt(2.0) / 2, 1e-15);
  EXPECT_NEAR(mask_ratio(ScheduleKind::arccos, 0.5), 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(mask_ratio(ScheduleKind::root, 0.25), 0.5, 1e-15);
  EXPECT_NEAR(mask_ratio(ScheduleKind::linear, 0.25), 0.75, 1e-15);
  EXPECT_THROW(mask_ratio(ScheduleKind::linear, 1.5), DataError);
  EXPECT_THROW(parse_schedule("quadratic"), ConfigError);
}

TEST(MaskRatio, StrictlyDecreasing) {
  for (ScheduleKind kind : kAllSchedules) {
    for_all(1000, 51, [&](Rng& rng, int) {
      double a = rng.uniform(), b = rng.uniform();
      if (a == b) return;
      if (a > b) std::swap(a, b);
      EXPECT_GT(mask_ratio(kind, a), mask_ratio(kind, b)) << to_string(kind) << " " << a << " " << b;
    });
  }
}

TEST(MaskedCounts, Examples) {
  EXPECT_EQ(masked_counts(ScheduleKind::cosine, 32, 8), (std::vector<int>{31, 29, 26, 22, 17, 12, 6, 0}));
  EXPECT_EQ(masked_counts(ScheduleKind::cosine, 32, 8), schedule_oracle(cosine_gamma, 32, 8));
  for (ScheduleKind k : kAllSchedules) EXPECT_EQ(masked_counts(k, 8, 1), std::vector<int>{0});
  const auto tiny = masked_counts(ScheduleKind::arccos, 2, 8);
  ASSERT_EQ(tiny.size(), 8u);
  for (int v : tiny) EXPECT_GE(v, 0);
  EXPECT_EQ(tiny.back(), 0);
  EXPECT_THROW(masked_counts(ScheduleKind::cosine, 0, 4), ConfigError);
}

TEST(MaskedCounts, PropertyAgainstOracle) {
  for_all(300, 52, [](Rng& rng, int) {
    const int k = rand_int(rng, 1, 64), s = rand_int(rng, 1, k);
    for (ScheduleKind kind : kAllSchedules) {
      const auto n = masked_counts(kind, k, s);
      const auto gamma = [kind](double r) { return mask_ratio(kind, r); };
      std::vector<int> want;
      int prev = k;
      for (int t = 1; t <= s; ++t) {
        const int cur = t == s ? 0 : std::max(0, std::min(static_cast<int>(std::floor(gamma(static_cast<double>(t) / s) * k)), prev - 1));
        want.push_back(cur);
        prev = cur;
      }
      EXPECT_EQ(n, want);
      for (std::size_t i = 1; i < n.size(); ++i) {
        if (n[i - 1] > 0) {
          EXPECT_LT(n[i], n[i - 1]);
        } else {
          EXPECT_EQ(n[i], 0);
        }
      }
      EXPECT_LT(n.front(), k);
    }
  });
}

TEST(ApplyRandomMask, CountsAndDeterminism) {
  const std::vector<int> ids = {1, 2, 3, 4, 5, 6, 7, 8};
  Rng a(3), b(3);
  const auto m = apply_random_mask(ids, 0.5, 99, a);
  EXPECT_EQ(std::count(m.masked.begin(), m.masked.end(), true), 4);
  EXPECT_EQ(m.ids, apply_random_mask(ids, 0.5, 99, b).ids);
  const auto all = apply_random_mask(ids, 1.0, 99, a);
  EXPECT_EQ(all.ids, std::vector<int>(8, 99));
  for_all(200, 53, [&](Rng& rng, int) {
    const double r = rng.uniform_open();
    const auto mm = apply_random_mask(ids, r, 99, rng);
    const auto want = std::max<long>(1, std::lround(r * 8));
    EXPECT_EQ(std::count(mm.masked.begin(), mm.masked.end(), true), want);
    for (std::size_t i = 0; i < ids.size(); ++i) EXPECT_EQ(mm.ids[i], mm.masked[i] ? 99 : ids[i]);
  });
  EXPECT_THROW(apply_random_mask(ids, 0.0, 99, a), ContractError);
}

TEST(PredictLogits, ShapeAndDeterminism) {
  const auto cfg = small_gen();
  const auto p = GeneratorParams<double>::init(cfg, 1);
  std::vector<int> ids(16, cfg.mask_id());
  ids[3] = 5;
  const std::vector<int> cls = {0, cfg.null_class()};
  const auto a = predict_logits<double>(ids, cls, p, cfg);
  EXPECT_EQ(a.shape(), (Shape{16, 16}));
  EXPECT_EQ(a.vector(), predict_logits<double>(ids, cls, p, cfg).vector());
  EXPECT_THROW(predict_logits<double>(ids, std::vector<int>{0, 5}, p, cfg), DataError);
  ids[0] = 17;
  EXPECT_THROW(predict_logits<double>(ids, cls, p, cfg), DataError);
  EXPECT_THROW(predict_logits<double>(std::vector<int>(7, 0), std::vector<int>{0}, p, cfg), DimensionError);
}

TEST(CfgCombine, Identities) {
  Rng rng(5);
  const auto c = rand_tensor({3, 4}, rng), u = rand_tensor({3, 4}, rng);
  EXPECT_EQ(cfg_combine(c, u, 0.0).vector(), c.vector());
  for (double w : {0.5, 4.5, -2.0, 100.0}) EXPECT_EQ(cfg_combine(c, c, w).vector(), c.vector());
  const Tensor<double> lc({1}, std::vector<double>{2}), lu({1}, std::vector<double>{1});
  EXPECT_EQ(cfg_combine(lc, lu, 3.0).item(), 5.0);
  EXPECT_THROW(cfg_combine(c, rand_tensor({4, 3}, rng), 1.0), DimensionError);
}

TEST(Sample, NoMaskLeftForAllSchedulesAndStepCounts) {
  const auto cfg = small_gen(32, 16);
  const auto p = GeneratorParams<double>::init(cfg, 2);
  for (ScheduleKind kind : kAllSchedules)
    for (int s : {1, 2, 4, 8, 32}) {
      SampleOptions o;
      o.steps = s;
      o.schedule = kind;
      Rng rng(7);
      std::vector<SampleStep> trace;
      const auto ids = sample<double>(1, o, rng, p, cfg, &trace);
      EXPECT_EQ(ids.ids.size(), 32u);
      for (int id : ids.ids) {
        EXPECT_GE(id, 0);
        EXPECT_LT(id, 16);
      }
      ASSERT_EQ(trace.size(), static_cast<std::size_t>(s));
      const auto want = masked_counts(kind, 32, s);
      for (int t = 0; t < s; ++t) {
        EXPECT_EQ(trace[static_cast<std::size_t>(t)].masked_count, want[static_cast<std::size_t>(t)]);
        EXPECT_EQ(std::count(trace[static_cast<std::size_t>(t)].ids.begin(), trace[static_cast<std::size_t>(t)].ids.end(),
                             cfg.mask_id()),
                  want[static_cast<std::size_t>(t)]);
      }
    }
}

TEST(Sample, FrozenTokensNeverChange) {
  const auto cfg = small_gen(16, 16);
  const auto p = GeneratorParams<double>::init(cfg, 3);
  for_all(30, 54, [&](Rng& rng, int i) {
    SampleOptions o;
    o.steps = 6;
    o.temperature = rng.uniform(0, 5);
    o.guidance = rng.uniform(0, 3);
    o.schedule = kAllSchedules[i % 4];
    std::vector<SampleStep> trace;
    sample<double>(i % 5, o, rng, p, cfg, &trace);
    for (std::size_t t = 1; t < trace.size(); ++t)
      for (std::size_t j = 0; j < 16; ++j) {
        if (trace[t - 1].ids[j] != cfg.mask_id()) {
          EXPECT_EQ(trace[t].ids[j], trace[t - 1].ids[j]);
        }
      }
  });
}

TEST(Sample, GuidanceZeroEqualsDisabledBranch) {
  const auto cfg = small_gen(8, 16);
  const auto p = GeneratorParams<double>::init(cfg, 4);
  SampleOptions on, off;
  on.guidance = 0.0;
  on.temperature = 2.0;
  off = on;
  off.guidance_enabled = false;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng a(seed), b(seed);
    EXPECT_EQ(sample<double>(2, on, a, p, cfg).ids, sample<double>(2, off, b, p, cfg).ids);
    EXPECT_TRUE(a == b);
  }
}

TEST(Sample, SingleStepAndSeedReproducibility) {
  const auto cfg = small_gen(8, 16);
  const auto p = GeneratorParams<double>::init(cfg, 5);
  SampleOptions o;
  o.steps = 1;
  Rng a(1), b(1);
  std::vector<SampleStep> trace;
  EXPECT_EQ(sample<double>(0, o, a, p, cfg, &trace), sample<double>(0, o, b, p, cfg));
  ASSERT_EQ(trace.size(), 1u);
  EXPECT_EQ(trace[0].masked_count, 0);
  o.steps = 0;
  EXPECT_THROW(sample<double>(0, o, a, p, cfg), ConfigError);
  o.steps = 2;
  EXPECT_THROW(sample<double>(9, o, a, p, cfg), DataError);
}

TEST(GeneratorStep, InitialLossNearUniformAndMaskedOnly) {
  const auto cfg = small_gen(8, 64);
  auto p = GeneratorParams<double>::init(cfg, 6);
  AdamW<double> opt;
  Rng rng(6);
  std::vector<TokenIds> toks;
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) {
    TokenIds t{std::vector<int>(8), 64};
    for (auto& id : t.ids) id = static_cast<int>(rng.below(64));
    toks.push_back(t);
    labels.push_back(i % 4);
  }
  const double loss = generator_step<double>(toks, labels, p, cfg, opt, 0.0, rng);
  EXPECT_NEAR(loss, std::log(64.0), 0.1 * std::log(64.0));
  EXPECT_THROW(generator_step<double>(toks, std::vector<int>(16, 4), p, cfg, opt, 0.0, rng), DataError);
}

TEST(GeneratorStep, UnmaskedPositionsContributeNothing) {
  // Perturbing the logits of unmasked rows leaves the masked-only loss unchanged.
  const auto cfg = small_gen(8, 16);
  const auto p = GeneratorParams<double>::init(cfg, 7);
  const std::vector<int> ids = {1, 2, cfg.mask_id(), 4, cfg.mask_id(), 6, 7, 8};
  const std::vector<int> targets = {-1, -1, 3, -1, 5, -1, -1, -1};
  const std::vector<int> full = {1, 2, 3, 4, 5, 6, 7, 8};
  const auto logits = predict_logits<double>(ids, std::vector<int>{1}, p, cfg);
  auto perturbed = logits.clone();
  for (std::size_t r : {0u, 1u, 3u, 5u, 6u, 7u})
    for (std::size_t j = 0; j < 16; ++j) perturbed.mutable_values()[r * 16 + j] += 0.5 * static_cast<double>(j);
  EXPECT_EQ(cross_entropy(perturbed, targets).item(), cross_entropy(logits, targets).item());
  EXPECT_NE(cross_entropy(perturbed, full).item(), cross_entropy(logits, full).item());
}
