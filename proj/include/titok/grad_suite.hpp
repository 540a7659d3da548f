#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "titok/data.hpp"
#include "titok/generator.hpp"
#include "titok/grad_check.hpp"
#include "titok/teacher.hpp"
#include "titok/tokenizer.hpp"

namespace titok {

inline constexpr double kOpGradTolerance = 1e-4;
inline constexpr double kCompositeGradTolerance = 1e-3;

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  double tolerance = 0.0;

  bool passed() const { return max_rel_error < tolerance; }
};

namespace detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.normal() * scale;
  return Tensor<double>(std::move(shape), std::move(v));
}

/// Scalar probe sum(y * W) with a fixed random W per output shape.
class Projector {
 public:
  explicit Projector(std::uint64_t seed) : rng_(seed) {}

  Tensor<double> operator()(const Tensor<double>& y) {
    auto it = weights_.find(y.shape());
    if (it == weights_.end()) it = weights_.emplace(y.shape(), random_tensor(y.shape(), rng_)).first;
    return sum(mul(y, it->second));
  }

 private:
  Rng rng_;
  std::map<Shape, Tensor<double>> weights_;
};

inline std::vector<GradCoordinate> sample_coordinates(const std::vector<Tensor<double>>& params, std::size_t per_param,
                                                      Rng& rng) {
  std::vector<GradCoordinate> coords;
  for (std::size_t p = 0; p < params.size(); ++p)
    for (std::size_t i = 0; i < per_param; ++i) coords.push_back({p, rng.below(params[p].numel())});
  return coords;
}

}  // namespace detail

/// Reverse-mode vs central-difference gradients for every differentiable op
/// and for the composite tokenizer and generator losses, all in double.
inline std::vector<GradCheckEntry> run_grad_suite(std::uint64_t seed = 0) {
  using D = Tensor<double>;
  Rng rng(seed);
  detail::Projector proj(seed + 1);
  std::vector<GradCheckEntry> out;
  auto op = [&](const std::string& name, const std::function<D(const D&)>& f, const D& x, double eps = 1e-6) {
    out.push_back({name, grad_check([&](const D& a) { return proj(f(a)); }, x, eps), kOpGradTolerance});
  };

  const D a = detail::random_tensor({6, 5}, rng), c = detail::random_tensor({6, 5}, rng);
  const D w = detail::random_tensor({5, 4}, rng), bias = detail::random_tensor({4}, rng);
  const D g = detail::random_tensor({5}, rng), be = detail::random_tensor({5}, rng);
  const D rhs = detail::random_tensor({5, 4}, rng);

  op("matmul.lhs", [&](const D& x) { return matmul(x, rhs); }, a);
  op("matmul.rhs", [&](const D& x) { return matmul(c, x); }, rhs);
  op("linear.x", [&](const D& x) { return linear(x, w, bias); }, a);
  op("linear.weight", [&](const D& x) { return linear(c, x, bias); }, w);
  op("linear.bias", [&](const D& x) { return linear(c, w, x); }, bias);
  op("add", [&](const D& x) { return add(x, c); }, a);
  op("sub", [&](const D& x) { return sub(c, x); }, a);
  op("mul", [&](const D& x) { return mul(x, c); }, a);
  op("add_rowwise.x", [&](const D& x) { return add_rowwise(x, g); }, a);
  op("add_rowwise.v", [&](const D& x) { return add_rowwise(c, x); }, g);
  op("scale", [&](const D& x) { return scale(x, 2.5); }, a);
  op("square", [&](const D& x) { return square(x); }, a);
  op("sum", [&](const D& x) { return sum(square(x)); }, a);
  op("mean", [&](const D& x) { return mean(square(x)); }, a);
  op("mse_loss", [&](const D& x) { return mse_loss(x, c); }, a);
  op("softmax.rows", [&](const D& x) { return softmax(x, 1); }, a);
  op("softmax.cols", [&](const D& x) { return softmax(x, 0); }, a);
  op("layer_norm.x", [&](const D& x) { return layer_norm(x, g, be); }, a);
  op("layer_norm.gamma", [&](const D& x) { return layer_norm(c, x, be); }, g);
  op("layer_norm.beta", [&](const D& x) { return layer_norm(c, g, x); }, be);
  op("gelu", [&](const D& x) { return gelu(x); }, a);
  op("sigmoid", [&](const D& x) { return sigmoid(x); }, a);
  op("l2_normalize_rows", [&](const D& x) { return l2_normalize_rows(x); }, a);
  op("reshape", [&](const D& x) { return reshape(x, {3, 10}); }, a);
  op("concat_rows", [&](const D& x) { return concat_rows<double>({c, x, c}); }, a);
  op("gather_rows", [&](const D& x) { return gather_rows(x, {0, 3, 3, 5, 1}); }, a);
  {
    const std::vector<int> targets = {1, -1, 4, 0, 2, 3};
    out.push_back({"cross_entropy", grad_check([&](const D& x) { return cross_entropy(x, targets); }, a), kOpGradTolerance});
  }
  op("attention", [&](const D& x) { return attention(x, 2, 2); }, detail::random_tensor({10, 24}, rng));

  // Straight-through: dL/dz must equal the derivative of L with respect to the
  // quantized values, which finite differences measure directly.
  {
    const D selected = detail::random_tensor({6, 5}, rng);
    D z = a.clone();
    z.set_requires_grad(true);
    proj(straight_through(z, selected)).backward();
    const std::vector<double> through = z.grad();
    D q = selected.clone();
    q.set_requires_grad(true);
    proj(q).backward();
    const std::vector<double> direct = q.grad();
    const double fd = grad_check([&](const D& x) { return proj(x); }, selected);
    double gap = fd;
    for (std::size_t i = 0; i < through.size(); ++i) gap = std::max(gap, detail::relative_gap(through[i], direct[i]));
    out.push_back({"straight_through", gap, kOpGradTolerance});
  }

  // Two-layer ViT stack, D=8, T=5.
  {
    Rng init(seed + 2);
    VitConfig vc{8, 2, 2, 4.0, 5, 0};
    VitParams<double> vp = VitParams<double>::init(vc, init);
    op("vit_forward", [&](const D& x) { return vit_forward(x, 1, vp, vc); }, detail::random_tensor({5, 8}, rng));
  }

  // Quantizer losses with the selection frozen, beta = 0.25.
  {
    Codebook<double> book = init_codebook<double>(seed + 3, 8, 4);
    const D z0 = detail::random_tensor({6, 4}, rng, 0.2);
    const FrozenSelection<double> frozen = freeze_selection(z0, book);
    out.push_back({"quantize.z", grad_check([&](const D& z) {
                     const auto q = quantize(z, book, 0.25, false, &frozen);
                     return add(add(proj(q.quantized), q.codebook_loss), q.commitment_loss);
                   }, z0), kOpGradTolerance});
    const FrozenSelection<double> frozen_l2 = freeze_selection(z0, book, true);
    out.push_back({"quantize.z.l2", grad_check([&](const D& z) {
                     const auto q = quantize(z, book, 0.25, true, &frozen_l2);
                     return add(add(proj(q.quantized), q.codebook_loss), q.commitment_loss);
                   }, z0), kOpGradTolerance});
    out.push_back({"quantize.codebook", grad_check_params([&] {
                     const auto q = quantize(z0, book, 0.25, false, &frozen);
                     return add(q.codebook_loss, q.commitment_loss);
                   }, {book.codes}, detail::sample_coordinates({book.codes}, 16, rng)), kOpGradTolerance});
  }

  // Composite stage-1 loss at the desk-scale tokenizer shape.
  SyntheticSpec spec;
  spec.count = 2;
  const std::vector<Image> images = gen_synthetic(spec).images();
  auto composite = [&](const std::string& name, TitokConfig cfg, const ProxyTeacher* teacher) {
    TitokParams<double> params = TitokParams<double>::init(cfg, seed + 4);
    const FrozenSelection<double> frozen = freeze_selection<double>(images, params, cfg);
    std::vector<D> tensors;
    for (auto& ref : params.parameters()) tensors.push_back(*ref.tensor);
    Rng pick(seed + 5);
    const auto coords = detail::sample_coordinates(tensors, 1, pick);
    const double err = grad_check_params([&] { return reconstruct<double>(images, params, cfg, teacher, &frozen).total; },
                                         tensors, coords, 1e-5);
    out.push_back({name, err, kCompositeGradTolerance});
  };
  TitokConfig proxy_cfg = TitokConfig::toy();
  const BuiltinPatchTeacher teacher(TeacherConfig{}, proxy_cfg.image_size, proxy_cfg.patch_size, images);
  composite("stage1_loss", proxy_cfg, &teacher);
  TitokConfig pixel_cfg = TitokConfig::toy();
  pixel_cfg.head_mode = HeadMode::pixels;
  composite("pixel_loss", pixel_cfg, nullptr);

  // Generator cross-entropy on a fixed masked batch.
  {
    const GeneratorConfig gc = GeneratorConfig::make(8, 256, 4, 64, 2, 4);
    GeneratorParams<double> gp = GeneratorParams<double>::init(gc, seed + 6);
    std::vector<int> ids, targets;
    for (int i = 0; i < 16; ++i) {
      const int id = static_cast<int>(rng.below(256));
      const bool masked = i % 3 != 1;
      ids.push_back(masked ? gc.mask_id() : id);
      targets.push_back(masked ? id : -1);
    }
    const std::vector<int> classes = {1, gc.null_class()};
    std::vector<D> tensors;
    for (auto& ref : gp.parameters()) tensors.push_back(*ref.tensor);
    Rng pick(seed + 7);
    const double err = grad_check_params(
        [&] { return cross_entropy(predict_logits<double>(ids, classes, gp, gc), targets); }, tensors,
        detail::sample_coordinates(tensors, 1, pick), 1e-5);
    out.push_back({"generator_loss", err, kCompositeGradTolerance});
  }
  return out;
}

}  // namespace titok
