#include <cmath>
#include <numbers>

#include "test_util.hpp"

using namespace titok;
using titok::testing::for_all;
using titok::testing::rand_int;
using titok::testing::rand_tensor;

using D = Tensor<double>;

namespace {

D mat(std::size_t r, std::size_t c, std::vector<double> v) { return D({r, c}, std::move(v)); }

std::vector<double> naive_matmul(const D& a, const D& b) {
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t e = 0; e < k; ++e) out[i * n + j] += a.at(i, e) * b.at(e, j);
  return out;
}

}  // namespace

TEST(Matmul, Examples) {
  const D id = mat(2, 2, {1, 0, 0, 1}), b = mat(2, 2, {5, 6, 7, 8});
  EXPECT_EQ(matmul(id, b).vector(), b.vector());
  EXPECT_EQ(matmul(mat(2, 2, {1, 2, 3, 4}), b).vector(), (std::vector<double>{19, 22, 43, 50}));
  Rng rng(1);
  EXPECT_EQ(matmul(rand_tensor({3, 4}, rng), rand_tensor({4, 2}, rng)).shape(), (Shape{3, 2}));
  EXPECT_THROW(matmul(rand_tensor({3, 4}, rng), rand_tensor({3, 2}, rng)), DimensionError);
}

TEST(Matmul, MatchesNaiveLoops) {
  for_all(50, 11, [](Rng& rng, int) {
    const auto m = static_cast<std::size_t>(rand_int(rng, 1, 9)), k = static_cast<std::size_t>(rand_int(rng, 1, 40)),
               n = static_cast<std::size_t>(rand_int(rng, 1, 9));
    const D a = rand_tensor({m, k}, rng), b = rand_tensor({k, n}, rng);
    const auto got = matmul(a, b).vector();
    const auto want = naive_matmul(a, b);
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got[i], want[i], 1e-12 * (1 + std::abs(want[i])));
  });
}

TEST(Matmul, Associativity) {
  for_all(100, 12, [](Rng& rng, int) {
    const auto s = [&] { return static_cast<std::size_t>(rand_int(rng, 1, 6)); };
    const std::size_t a0 = s(), a1 = s(), a2 = s(), a3 = s();
    const D a = rand_tensor({a0, a1}, rng), b = rand_tensor({a1, a2}, rng), c = rand_tensor({a2, a3}, rng);
    const auto left = matmul(matmul(a, b), c).vector(), right = matmul(a, matmul(b, c)).vector();
    for (std::size_t i = 0; i < left.size(); ++i)
      EXPECT_LE(std::abs(left[i] - right[i]), 1e-9 * std::max(1.0, std::abs(left[i])));
  });
}

TEST(Softmax, Examples) {
  EXPECT_EQ(softmax(mat(1, 2, {0, 0}), 1).vector(), (std::vector<double>{0.5, 0.5}));
  const auto v = softmax(mat(1, 2, {std::numbers::ln2, 0}), 1).vector();
  EXPECT_NEAR(v[0], 2.0 / 3.0, 1e-15);
  EXPECT_NEAR(v[1], 1.0 / 3.0, 1e-15);
}

TEST(Softmax, ShiftInvarianceAndNormalization) {
  for_all(50, 13, [](Rng& rng, int) {
    const D x = rand_tensor({3, 5}, rng, 3.0);
    const double c = rng.uniform(-50, 50);
    D shifted = x.clone();
    for (auto& v : shifted.mutable_values()) v += c;
    for (std::size_t axis : {0u, 1u}) {
      const auto a = softmax(x, axis).vector(), b = softmax(shifted, axis).vector();
      for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
    }
    const auto rows = softmax(x, 1);
    for (std::size_t r = 0; r < 3; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 5; ++j) s += rows.at(r, j);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  });
}

TEST(LayerNorm, Examples) {
  const D ones({2}, 1.0), zeros({2}, 0.0);
  for (double v : layer_norm(mat(1, 2, {4, 4}), ones, zeros).vector()) EXPECT_EQ(v, 0.0);
  const auto y = layer_norm(mat(1, 2, {1, 3}), ones, zeros, 0.0).vector();
  EXPECT_NEAR(y[0], -1.0, 1e-15);
  EXPECT_NEAR(y[1], 1.0, 1e-15);
  const D beta({2}, std::vector<double>{0.25, -2});
  EXPECT_EQ(layer_norm(mat(1, 2, {7, -3}), zeros, beta).vector(), beta.vector());
}

TEST(Gelu, Examples) {
  EXPECT_EQ(gelu(D({1}, std::vector<double>{0.0})).item(), 0.0);
  EXPECT_NEAR(gelu(D({1}, std::vector<double>{10.0})).item(), 10.0, 1e-6);
  // Independent evaluation of 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3))) at x = 1.
  const long double x = 1.0L;
  const long double want = 0.5L * x * (1.0L + std::tanh(std::sqrt(2.0L / std::numbers::pi_v<long double>) * (x + 0.044715L * x * x * x)));
  EXPECT_NEAR(gelu(D({1}, std::vector<double>{1.0})).item(), static_cast<double>(want), 1e-15);
}

TEST(Sigmoid, RangeAndSymmetry) {
  Rng rng(3);
  const D x = rand_tensor({40}, rng, 10.0);
  const auto y = sigmoid(x).vector();
  const auto yn = sigmoid(scale(x, -1.0)).vector();
  for (std::size_t i = 0; i < y.size(); ++i) {
    EXPECT_GE(y[i], 0.0);
    EXPECT_LE(y[i], 1.0);
    EXPECT_NEAR(y[i] + yn[i], 1.0, 1e-12);
  }
}

TEST(CrossEntropy, MatchesLogSumExpAndIgnoresMinusOne) {
  for_all(30, 14, [](Rng& rng, int) {
    const D logits = rand_tensor({5, 7}, rng, 2.0);
    std::vector<int> targets(5);
    for (auto& t : targets) t = rng.uniform() < 0.3 ? -1 : static_cast<int>(rng.below(7));
    double total = 0;
    int counted = 0;
    for (std::size_t r = 0; r < 5; ++r) {
      if (targets[r] < 0) continue;
      long double z = 0;
      for (std::size_t j = 0; j < 7; ++j) z += std::exp(static_cast<long double>(logits.at(r, j)));
      total += static_cast<double>(std::log(z) - logits.at(r, static_cast<std::size_t>(targets[r])));
      ++counted;
    }
    const double want = counted ? total / counted : 0.0;
    EXPECT_NEAR(cross_entropy(logits, targets).item(), want, 1e-12);
  });
  EXPECT_THROW(cross_entropy(mat(1, 2, {0, 0}), std::vector<int>{2}), DataError);
}

TEST(CrossEntropy, IgnoredRowsGetNoGradient) {
  D logits = mat(2, 3, {1, 2, 3, 4, 5, 6});
  logits.set_requires_grad(true);
  cross_entropy(logits, std::vector<int>{-1, 2}).backward();
  const auto g = logits.grad();
  for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(g[j], 0.0);
}

TEST(Attention, MatchesDirectFormula) {
  // Independent evaluation: per head, softmax(q k^T / sqrt(hd)) v with plain loops.
  for_all(10, 15, [](Rng& rng, int) {
    const std::size_t batch = 2, seq = 4, d = 8, heads = 2, hd = d / heads;
    const D qkv = rand_tensor({batch * seq, 3 * d}, rng);
    const auto got = attention(qkv, batch, heads);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < seq; ++i) {
          std::vector<long double> w(seq);
          long double z = 0;
          for (std::size_t j = 0; j < seq; ++j) {
            long double s = 0;
            for (std::size_t e = 0; e < hd; ++e) s += qkv.at(b * seq + i, h * hd + e) * qkv.at(b * seq + j, d + h * hd + e);
            w[j] = std::exp(s / std::sqrt(static_cast<long double>(hd)));
            z += w[j];
          }
          for (std::size_t e = 0; e < hd; ++e) {
            long double o = 0;
            for (std::size_t j = 0; j < seq; ++j) o += w[j] / z * qkv.at(b * seq + j, 2 * d + h * hd + e);
            EXPECT_NEAR(got.at(b * seq + i, h * hd + e), static_cast<double>(o), 1e-10);
          }
        }
  });
}

TEST(Attention, SingleTokenPassesValues) {
  Rng rng(2);
  const D qkv = rand_tensor({1, 12}, rng);
  const auto out = attention(qkv, 1, 2).vector();
  for (std::size_t e = 0; e < 4; ++e) EXPECT_DOUBLE_EQ(out[e], qkv.at(0, 8 + e));
}

TEST(Rows, GatherConcatReshape) {
  const D a = mat(3, 2, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(gather_rows(a, {2, 0, 2}).vector(), (std::vector<double>{5, 6, 1, 2, 5, 6}));
  EXPECT_EQ(concat_rows<double>({a, mat(1, 2, {7, 8})}).vector(), (std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8}));
  EXPECT_EQ(reshape(a, {2, 3}).shape(), (Shape{2, 3}));
  EXPECT_THROW(reshape(a, {4, 2}), DimensionError);
}

TEST(StraightThrough, ForwardIsSelectedBackwardIsIdentity) {
  D z = mat(1, 3, {0.1, 0.2, 0.3});
  z.set_requires_grad(true);
  const D c = mat(1, 3, {1, 2, 3});
  const D q = straight_through(z, c);
  EXPECT_EQ(q.vector(), c.vector());
  sum(mul(q, mat(1, 3, {4, 5, 6}))).backward();
  EXPECT_EQ(z.grad(), (std::vector<double>{4, 5, 6}));
}

TEST(GradCheck, Examples) {
  const D x({1}, std::vector<double>{3.0});
  EXPECT_LT(grad_check([](const D& v) { return sum(square(v)); }, x), 1e-8);
  EXPECT_EQ(grad_check([](const D&) { return D::scalar(4.0); }, x), 0.0);
  Rng rng(4);
  const D w = rand_tensor({4, 4}, rng), g = rand_tensor({4}, rng), b = rand_tensor({4}, rng);
  EXPECT_LT(grad_check([&](const D& v) { return sum(mul(layer_norm(matmul(v, w), g, b), w)); }, rand_tensor({4, 4}, rng)),
            1e-5);
}

TEST(GradCheck, DetectsAWrongBackward) {
  // y = x^2 with a deliberately halved derivative.
  auto bad = [](const D& x) {
    std::vector<double> v = x.vector();
    for (auto& e : v) e *= e;
    const D y = detail::make_result<double>("bad_square", x.shape(), v, {&x}, [x](detail::Node<double>& self) {
      if (auto* g = detail::grad_of(x))
        for (std::size_t i = 0; i < g->size(); ++i) (*g)[i] += self.grad[i] * x.at(i);
    });
    return sum(y);
  };
  EXPECT_GT(grad_check(bad, D({2}, std::vector<double>{1.5, -2.0})), 0.1);
}

TEST(GradCheck, StepOutsideRangeIsRejected) {
  const D x({1}, 1.0);
  EXPECT_THROW(grad_check([](const D& v) { return sum(v); }, x, 1e-2), ContractError);
}

TEST(GradCheck, EveryOpOnRandomSmallInputs) {
  // Random shapes with at most 64 elements per input.
  for_all(5, 16, [](Rng& rng, int) {
    const auto r = static_cast<std::size_t>(rand_int(rng, 1, 6)), c = static_cast<std::size_t>(rand_int(rng, 2, 8));
    const D x = rand_tensor({r, c}, rng), other = rand_tensor({r, c}, rng), w = rand_tensor({c, 3}, rng);
    const D probe = rand_tensor({r, c}, rng);
    const D g = rand_tensor({c}, rng), b = rand_tensor({c}, rng);
    auto proj = [&](const D& y) { return sum(mul(y, probe)); };
    EXPECT_LT(grad_check([&](const D& v) { return sum(matmul(v, w)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(mul(v, other)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(softmax(v, 1)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(softmax(v, 0)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(layer_norm(v, g, b)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(gelu(v)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(sigmoid(v)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return proj(l2_normalize_rows(v)); }, x), 1e-4);
    EXPECT_LT(grad_check([&](const D& v) { return mse_loss(v, other); }, x), 1e-4);
  });
}
