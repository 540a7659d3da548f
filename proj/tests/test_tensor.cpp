#include "test_util.hpp"

using namespace titok;
using titok::testing::rand_tensor;

TEST(Tensor, ShapeMustMatchValueCount) {
  EXPECT_THROW(Tensor<double>({2, 3}, std::vector<double>(5)), DimensionError);
  EXPECT_NO_THROW(Tensor<double>({2, 3}, std::vector<double>(6)));
}

TEST(Tensor, NonFiniteInputIsRejected) {
  EXPECT_THROW(Tensor<double>({1}, std::vector<double>{std::nan("")}), NumericError);
  EXPECT_THROW(Tensor<float>({1}, std::vector<float>{std::numeric_limits<float>::infinity()}), NumericError);
}

TEST(Tensor, OpResultOverflowNamesTheOp) {
  const Tensor<float> big({1}, std::vector<float>{3e38f});
  try {
    (void)add(big, big);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("add"), std::string::npos);
  }
}

TEST(Tensor, CloneIsIndependent) {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  Tensor<double> b = a.clone();
  b.mutable_values()[0] = 7;
  EXPECT_EQ(a.at(0), 1);
  Tensor<double> alias = a;
  alias.mutable_values()[1] = 9;
  EXPECT_EQ(a.at(1), 9);
}

TEST(Tensor, BackwardNeedsScalarRoot) {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  a.set_requires_grad(true);
  EXPECT_THROW(square(a).backward(), ContractError);
}

TEST(Tensor, UndefinedTensorUseIsAContractError) {
  Tensor<double> t;
  EXPECT_FALSE(t.defined());
  EXPECT_THROW((void)t.shape(), ContractError);
}

TEST(Tensor, NoGradGuardRecordsNoGraph) {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  a.set_requires_grad(true);
  {
    NoGradGuard guard;
    EXPECT_FALSE(grad_enabled());
    EXPECT_FALSE(sum(square(a)).requires_grad());
  }
  EXPECT_TRUE(grad_enabled());
  EXPECT_TRUE(sum(square(a)).requires_grad());
}

TEST(Tensor, DetachCutsTheGraph) {
  Tensor<double> a({2}, std::vector<double>{1, 2});
  a.set_requires_grad(true);
  const Tensor<double> y = sum(mul(a, square(a).detach()));
  y.backward();
  // d/da sum(a * sg(a^2)) = sg(a^2)
  EXPECT_EQ(a.grad(), (std::vector<double>{1, 4}));
}

TEST(Tensor, ReuseAccumulatesBothPaths) {
  // y = sum(x * x) + sum(3x): dy/dx = 2x + 3, checked analytically and by FD.
  Tensor<double> x({3}, std::vector<double>{0.5, -1.0, 2.0});
  x.set_requires_grad(true);
  const Tensor<double> y = add(sum(mul(x, x)), sum(scale(x, 3.0)));
  y.backward();
  const auto g = x.grad();
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g[i], 2 * x.at(i) + 3, 1e-12);
  const double err = grad_check([](const Tensor<double>& v) { return add(sum(mul(v, v)), sum(scale(v, 3.0))); }, x);
  EXPECT_LT(err, 1e-8);
}

TEST(Tensor, GradientsAccumulateAcrossBackwardCalls) {
  Tensor<double> x({1}, std::vector<double>{2.0});
  x.set_requires_grad(true);
  sum(square(x)).backward();
  sum(square(x)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 8.0);
  x.zero_grad();
  EXPECT_FALSE(x.has_grad());
}

TEST(Tensor, DeterministicAcrossRuns) {
  auto run = [] {
    Rng rng(5);
    const auto a = rand_tensor({4, 6}, rng), b = rand_tensor({6, 3}, rng);
    return softmax(matmul(a, b), 1).vector();
  };
  EXPECT_EQ(run(), run());
}
