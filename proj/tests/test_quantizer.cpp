#include <cmath>

#include "test_util.hpp"

using namespace titok;
using titok::testing::for_all;
using titok::testing::rand_int;
using titok::testing::rand_tensor;

using D = Tensor<double>;

namespace {

Codebook<double> book_of(std::size_t n, std::size_t d, std::vector<double> v) {
  D codes({n, d}, std::move(v));
  codes.set_requires_grad(true);
  return {codes};
}

/// Exhaustive scan in long double with an explicit lowest-index tie rule.
std::size_t brute_force(std::span<const double> z, const D& codes) {
  std::size_t best = 0;
  long double best_d = -1;
  for (std::size_t j = 0; j < codes.dim(0); ++j) {
    long double dist = 0;
    for (std::size_t e = 0; e < z.size(); ++e) {
      const long double diff = static_cast<long double>(z[e]) - codes.at(j, e);
      dist += diff * diff;
    }
    if (best_d < 0 || dist < best_d) {
      best_d = dist;
      best = j;
    }
  }
  return best;
}

std::size_t nearest(const std::vector<double>& z, const Codebook<double>& b) {
  return nearest_code<double>(std::span<const double>(z), b.codes);
}

}  // namespace

TEST(NearestCode, Examples) {
  const auto b = book_of(2, 2, {0, 0, 3, 4});
  EXPECT_EQ(nearest(std::vector<double>{1, 1}, b), 0u);
  EXPECT_EQ(nearest(std::vector<double>{3, 4}, b), 1u);
  EXPECT_EQ(nearest(std::vector<double>{0, 0}, book_of(2, 2, {1, 0, -1, 0})), 0u);
  EXPECT_THROW(nearest(std::vector<double>{1}, b), DimensionError);
}

TEST(NearestCode, MatchesBruteForceIncludingTies) {
  for_all(1000, 41, [](Rng& rng, int i) {
    const auto n = static_cast<std::size_t>(rand_int(rng, 2, 64)), d = static_cast<std::size_t>(rand_int(rng, 1, 16));
    // Small-integer grids force exact ties on a fraction of the cases.
    const bool grid = i % 3 == 0;
    std::vector<double> cv(n * d), z(d);
    for (auto& v : cv) v = grid ? static_cast<double>(rand_int(rng, -1, 1)) : rng.normal();
    for (auto& v : z) v = grid ? static_cast<double>(rand_int(rng, -1, 1)) : rng.normal();
    const auto b = book_of(n, d, cv);
    EXPECT_EQ(nearest(z, b), brute_force(z, b.codes));
  });
}

TEST(InitCodebook, RangeAndDeterminism) {
  const auto a = init_codebook<double>(3, 256, 16), b = init_codebook<double>(3, 256, 16);
  EXPECT_EQ(a.codes.vector(), b.codes.vector());
  EXPECT_NE(a.codes.vector(), init_codebook<double>(4, 256, 16).codes.vector());
  for (double v : a.codes.values()) EXPECT_LE(std::abs(v), 1.0 / 256);
  EXPECT_EQ(init_codebook<float>(0, kCodebookSizeFinal, kCodeDim).size(), 4096u);
  EXPECT_EQ(init_codebook<float>(0, kCodebookSizePreliminary, kCodeDim).code_dim(), 16u);
  EXPECT_THROW(init_codebook<double>(0, 1, 4), ConfigError);
}

TEST(Quantize, HandComputedLosses) {
  const auto b = book_of(2, 2, {0, 0, 5, 5});
  const auto r = quantize(D({1, 2}, std::vector<double>{1, 1}), b, 0.25);
  EXPECT_EQ(r.ids, std::vector<int>{0});
  EXPECT_DOUBLE_EQ(r.codebook_loss.item(), 2.0);
  EXPECT_DOUBLE_EQ(r.commitment_loss.item(), 0.5);
  EXPECT_EQ(r.quantized.vector(), (std::vector<double>{0, 0}));
}

TEST(Quantize, ExactCodeIsAFixedPoint) {
  const auto b = init_codebook<double>(1, 32, 4);
  for_all(20, 42, [&](Rng& rng, int) {
    std::vector<int> ids(5);
    for (auto& id : ids) id = static_cast<int>(rng.below(32));
    const D z = gather_codes(b, ids);
    const auto r = quantize(z, b, 0.25);
    EXPECT_EQ(r.ids, ids);
    EXPECT_EQ(r.codebook_loss.item(), 0.0);
    EXPECT_EQ(r.commitment_loss.item(), 0.0);
    EXPECT_EQ(r.quantized.vector(), z.vector());
    const auto again = quantize(r.quantized, b, 0.25);
    EXPECT_EQ(again.ids, ids);
    EXPECT_EQ(again.codebook_loss.item(), 0.0);
  });
}

TEST(Quantize, SequenceLengthPreserved) {
  for_all(20, 43, [](Rng& rng, int) {
    const auto k = static_cast<std::size_t>(rand_int(rng, 1, 40));
    const auto b = init_codebook<double>(rng.next_u64(), 16, 4);
    EXPECT_EQ(quantize(rand_tensor({k, 4}, rng), b, 0.25).ids.size(), k);
  });
}

TEST(Quantize, StraightThroughMatchesFiniteDifferences) {
  // dL/dz through quantize equals dL/dq, measured by FD of L at q with the
  // selection frozen and the commitment term disabled.
  Rng rng(44);
  const auto b = init_codebook<double>(5, 16, 4);
  const D z0 = rand_tensor({6, 4}, rng, 0.05), probe = rand_tensor({6, 4}, rng);
  D z = z0.clone();
  z.set_requires_grad(true);
  const auto r = quantize(z, b, 0.0);
  sum(mul(r.quantized, probe)).backward();
  const auto frozen = freeze_selection(z0, b);
  auto loss = [&](const D& x) { return sum(mul(quantize(x, b, 0.0, false, &frozen).quantized, probe)); };
  EXPECT_LT(grad_check(loss, z0), 1e-9);
  const D zl = z0.clone();
  auto leaf = zl;
  leaf.set_requires_grad(true);
  loss(leaf).backward();
  EXPECT_EQ(z.grad(), leaf.grad());
  EXPECT_EQ(z.grad(), probe.vector());
}

TEST(Quantize, GradientPartition) {
  Rng rng(45);
  const std::size_t k = 5, d = 3, n = 12;
  const D z0 = rand_tensor({k, d}, rng, 0.1);
  auto b = init_codebook<double>(6, static_cast<int>(n), static_cast<int>(d));
  const auto frozen = freeze_selection(z0, b);

  // beta = 0: codebook gradient 2 (c - z) / K on selected rows, zero elsewhere.
  b.codes.zero_grad();
  quantize(z0, b, 0.0).codebook_loss.backward();
  std::vector<double> want(n * d, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    const auto j = static_cast<std::size_t>(frozen.ids[i]);
    for (std::size_t e = 0; e < d; ++e) want[j * d + e] += 2.0 * (b.codes.at(j, e) - z0.at(i, e)) / k;
  }
  const auto g = b.codes.grad();
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_NEAR(g[i], want[i], 1e-14);
  std::vector<GradCoordinate> coords;
  for (std::size_t i = 0; i < n * d; ++i) coords.push_back({0, i});
  EXPECT_LT(grad_check_params([&] { return quantize(z0, b, 0.0, false, &frozen).codebook_loss; }, {b.codes}, coords), 1e-8);

  // Codes frozen: commitment gradient wrt z is 2 beta (z - c) / K.
  const double beta = 0.25;
  D z = z0.clone();
  z.set_requires_grad(true);
  b.codes.set_requires_grad(false);
  quantize(z, b, beta).commitment_loss.backward();
  const auto gz = z.grad();
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t e = 0; e < d; ++e) {
      const double c = b.codes.at(static_cast<std::size_t>(frozen.ids[i]), e);
      EXPECT_NEAR(gz[i * d + e], 2 * beta * (z0.at(i, e) - c) / k, 1e-14);
    }
  EXPECT_LT(grad_check([&](const D& x) { return quantize(x, b, beta, false, &frozen).commitment_loss; }, z0), 1e-8);
}

TEST(Quantize, L2ModeLivesOnTheSphere) {
  Rng rng(46);
  const auto b = init_codebook<double>(7, 16, 4);
  const auto r = quantize(rand_tensor({5, 4}, rng), b, 0.25, true);
  for (std::size_t i = 0; i < 5; ++i) {
    double s = 0;
    for (std::size_t e = 0; e < 4; ++e) s += r.quantized.at(i, e) * r.quantized.at(i, e);
    EXPECT_NEAR(s, 1.0, 1e-12);
  }
  EXPECT_EQ(select_codes(r.quantized, b, true), r.ids);
}

TEST(Quantize, Errors) {
  const auto b = init_codebook<double>(0, 8, 4);
  Rng rng(1);
  EXPECT_THROW(quantize(rand_tensor({3, 5}, rng), b, 0.25), DimensionError);
  EXPECT_THROW(quantize(rand_tensor({3, 4}, rng), b, -1.0), ConfigError);
  EXPECT_THROW(gather_codes(b, {8}), DataError);
  EXPECT_THROW(gather_codes(b, {-1}), DataError);
}

TEST(Utilization, Examples) {
  auto u = codebook_utilization({std::vector<int>(8, 3)}, 256);
  EXPECT_DOUBLE_EQ(u.usage_fraction, 1.0 / 256);
  EXPECT_NEAR(u.perplexity, 1.0, 1e-12);
  std::vector<int> all(256);
  for (int i = 0; i < 256; ++i) all[static_cast<std::size_t>(i)] = i;
  u = codebook_utilization({all}, 256);
  EXPECT_DOUBLE_EQ(u.usage_fraction, 1.0);
  EXPECT_NEAR(u.perplexity, 256.0, 1e-9);
  u = codebook_utilization({{0, 0}, {1, 1}}, 4);
  EXPECT_DOUBLE_EQ(u.usage_fraction, 0.5);
  EXPECT_NEAR(u.perplexity, 2.0, 1e-12);
  EXPECT_THROW(codebook_utilization({{4}}, 4), DataError);
}
