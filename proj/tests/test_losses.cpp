#include <doctest.h>

#include <cmath>

#include "kdmot/error.hpp"
#include "kdmot/grad_check.hpp"
#include "kdmot/losses.hpp"
#include "kdmot/random.hpp"

using namespace kdmot;

namespace {

Tensor random_tensor(Rng& rng, Shape shape) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return Tensor(std::move(shape), rng.uniform_array(n, -1.0, 1.0));
}

// Direct summation, independent of the library's vectorised path.
double mse_reference(const Tensor& a, const Tensor& b) {
  double total = 0.0;
  for (Eigen::Index i = 0; i < a.values().size(); ++i) {
    const double d = b.values()[i] - a.values()[i];
    total += d * d;
  }
  return total / static_cast<double>(a.numel());
}

}  // namespace

TEST_CASE("cosine_embedding_loss") {
  const Tensor x({2, 3}, (Array(6) << 1, 2, 3, -1, 0.5, 4).finished());
  CHECK(cosine_embedding_loss(x, x).item() == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(cosine_embedding_loss(x, scale(x, -1.0)).item() == doctest::Approx(2.0).epsilon(1e-12));
  const Tensor e1({1, 2}, (Array(2) << 1, 0).finished());
  const Tensor e2({1, 2}, (Array(2) << 0, 3).finished());
  CHECK(cosine_embedding_loss(e1, e2).item() == 1.0);

  const Tensor zero_row({2, 3}, (Array(6) << 1, 2, 3, 0, 0, 0).finished());
  CHECK_THROWS_WITH_AS(cosine_embedding_loss(x, zero_row), doctest::Contains("row 1"), DomainError);
  CHECK_THROWS_AS(cosine_embedding_loss(x, Tensor::zeros({3, 2})), ShapeError);
}

TEST_CASE("cosine loss ignores per-row scale, mse does not") {
  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const Tensor a = random_tensor(rng, {3, 10});
    const Tensor b = random_tensor(rng, {3, 10});
    Array factors(30);
    for (int r = 0; r < 3; ++r) factors.segment(r * 10, 10).setConstant(rng.uniform(0.1, 10.0));
    const Tensor scaled(a.shape(), a.values() * factors);
    const double base = cosine_embedding_loss(a, b).item();
    CHECK(std::abs(cosine_embedding_loss(scaled, b).item() - base) <= 1e-9 * std::max(1.0, std::abs(base)));
    CHECK(mse_loss(scaled, b).item() != doctest::Approx(mse_loss(a, b).item()).epsilon(1e-6));
  }
}

TEST_CASE("mse_loss") {
  const Tensor x({2}, (Array(2) << 0.25, -3).finished());
  CHECK(mse_loss(x, x).item() == 0.0);
  CHECK(mse_loss(Tensor::zeros({2}), Tensor::full({2}, 1.0)).item() == 1.0);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor a = random_tensor(rng, {2, 3, 4, 5});
    const Tensor b = random_tensor(rng, {2, 3, 4, 5});
    CHECK(mse_loss(a, b).item() == doctest::Approx(mse_reference(a, b)).epsilon(1e-13));
  }
  CHECK_THROWS_AS(mse_loss(Tensor::zeros({2}), Tensor::zeros({3})), ShapeError);
}

TEST_CASE("combined_loss") {
  const Tensor task = Tensor::scalar(2.0);
  const Tensor distill = Tensor::scalar(4.0);
  CHECK(combined_loss(task, distill, Alpha(0.0)).item() == 2.0);
  CHECK(combined_loss(task, distill, Alpha(1.0)).item() == 4.0);
  CHECK(combined_loss(task, distill, Alpha(0.5)).item() == 3.0);
  CHECK_THROWS_AS(Alpha(-0.1), DomainError);
  CHECK_THROWS_AS(Alpha(1.5), DomainError);
  CHECK_THROWS_AS(Alpha(std::nan("")), DomainError);

  SUBCASE("gradient splits linearly") {
    const Tensor t = Tensor::scalar(1.5, true);
    const Tensor d = Tensor::scalar(0.5, true);
    const Gradients g = backward(combined_loss(t, d, Alpha(0.25)));
    CHECK(g.of(t)[0] == 0.75);
    CHECK(g.of(d)[0] == 0.25);
  }
  SUBCASE("monotone in alpha toward the larger loss") {
    double previous = -1.0;
    for (double a = 0.0; a <= 1.0; a += 0.125) {
      const double v = combined_loss(task, distill, Alpha(a)).item();
      CHECK(v > previous);
      previous = v;
    }
    previous = 10.0;
    for (double a = 0.0; a <= 1.0; a += 0.125) {
      const double v = combined_loss(distill, task, Alpha(a)).item();
      CHECK(v < previous);
      previous = v;
    }
  }
}

TEST_CASE("loss gradients") {
  Rng rng(77);
  for (int seed = 0; seed < 5; ++seed) {
    const Tensor other = random_tensor(rng, {2, 6});
    CHECK(grad_check([&](const Tensor& x) { return cosine_embedding_loss(x, other); }, random_tensor(rng, {2, 6})) <= 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return cosine_embedding_loss(other, x); }, random_tensor(rng, {2, 6})) <= 1e-4);
    CHECK(grad_check([&](const Tensor& x) { return mse_loss(x, other); }, random_tensor(rng, {2, 6})) <= 1e-4);
  }
}

TEST_CASE("distillation_loss dispatch") {
  Rng rng(6);
  const FeatureMap s(random_tensor(rng, {2, 3, 2, 2}));
  const FeatureMap t(random_tensor(rng, {2, 3, 2, 2}));
  CHECK(distillation_loss(LossKind::mse, s, t).item() == mse_loss(s.tensor(), t.tensor()).item());
  CHECK(distillation_loss(LossKind::cosine, s, t).item() ==
        cosine_embedding_loss(flatten_per_sample(s), flatten_per_sample(t)).item());
  CHECK(parse_loss_kind("cosine") == LossKind::cosine);
  CHECK_THROWS_AS(parse_loss_kind("l1"), DomainError);
}
