#include <doctest.h>

#include <cmath>
#include <vector>

#include "kdmot/error.hpp"
#include "kdmot/grad_check.hpp"
#include "kdmot/random.hpp"
#include "kdmot/tensor.hpp"
#include "oracles.hpp"

using namespace kdmot;

namespace {

Tensor random_tensor(Rng& rng, Shape shape, bool requires_grad = false) {
  const auto n = static_cast<Eigen::Index>(shape_numel(shape));
  return Tensor(std::move(shape), rng.uniform_array(n, -1.0, 1.0), requires_grad);
}

std::vector<double> to_vector(const Tensor& t) { return {t.values().data(), t.values().data() + t.numel()}; }

}  // namespace

TEST_CASE("tensor construction enforces the shape invariant") {
  CHECK_THROWS_AS(Tensor({2, 3}, Array::Zero(5)), ShapeError);
  CHECK_THROWS_AS(Tensor({2, 0}, Array::Zero(0)), ShapeError);
  CHECK_THROWS_AS(Tensor({1, 1, 1, 1, 1}, Array::Zero(1)), ShapeError);
  const Tensor t({2, 3}, Array::LinSpaced(6, 0, 5));
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 5.0);
}

TEST_CASE("conv2d") {
  SUBCASE("scalar product") {
    const Tensor y = conv2d(Tensor::full({1, 1, 1, 1}, 2.0), Tensor::full({1, 1, 1, 1}, 3.0), Tensor::zeros({1}));
    CHECK(y.shape() == Shape{1, 1, 1, 1});
    CHECK(y.item() == 6.0);
  }
  SUBCASE("sum of nine ones") {
    const Tensor y = conv2d(Tensor::full({1, 1, 3, 3}, 1.0), Tensor::full({1, 1, 3, 3}, 1.0), Tensor::zeros({1}));
    CHECK(y.item() == 9.0);
  }
  SUBCASE("random 1x2x5x5 against frozen naive-loop values") {
    Rng rng(7);
    const Tensor input({1, 2, 5, 5}, rng.uniform_array(50, -1, 1));
    const Tensor kernel({3, 2, 3, 3}, rng.uniform_array(54, -1, 1));
    const Tensor bias({3}, rng.uniform_array(3, -1, 1));
    const Tensor y = conv2d(input, kernel, bias, 1, 1);
    REQUIRE(y.shape() == Shape{1, 3, 5, 5});
    const std::vector<std::pair<Eigen::Index, double>> frozen = {
        {0, 0.2754102047205651},    {1, -0.750625084323854},    {12, 1.3824686059890623},
        {24, -0.091893762560248227}, {25, -1.6782133204976586}, {37, -2.7960043007265023},
        {74, -0.72209986821084349}};
    for (auto [i, v] : frozen) CHECK(y.values()[i] == doctest::Approx(v).epsilon(1e-12));
  }
  SUBCASE("errors name the offending dimension") {
    CHECK_THROWS_WITH_AS(conv2d(Tensor::zeros({1, 2, 3, 3}), Tensor::zeros({1, 3, 1, 1}), Tensor::zeros({1})),
                         doctest::Contains("dim 1"), ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 1, 1}), Tensor::zeros({1}), 0),
                    ShapeError);
    CHECK_THROWS_AS(conv2d(Tensor::zeros({1, 1, 2, 2}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1})), ShapeError);
  }
}

TEST_CASE("conv2d equals the naive reference on every small shape") {
  Rng rng(11);
  int cases = 0;
  for (std::size_t c = 1; c <= 3; ++c)
    for (std::size_t h = 1; h <= 6; ++h)
      for (std::size_t w = 1; w <= 6; w += 2)
        for (std::size_t k = 1; k <= 3; ++k)
          for (std::size_t stride = 1; stride <= 2; ++stride)
            for (std::size_t pad = 0; pad <= 1; ++pad) {
              if (h + 2 * pad < k || w + 2 * pad < k) continue;
              const std::size_t batch = 1 + (cases % 2), out_c = 1 + (cases % 3);
              const Tensor input = random_tensor(rng, {batch, c, h, w});
              const Tensor kernel = random_tensor(rng, {out_c, c, k, k});
              const Tensor bias = random_tensor(rng, {out_c});
              std::size_t oh = 0, ow = 0;
              const auto expected = oracle::naive_conv2d(to_vector(input), batch, c, h, w, to_vector(kernel), out_c, k,
                                                         k, to_vector(bias), stride, pad, oh, ow);
              const Tensor y = conv2d(input, kernel, bias, stride, pad);
              REQUIRE(y.shape() == Shape{batch, out_c, oh, ow});
              double worst = 0.0;
              for (std::size_t i = 0; i < expected.size(); ++i) {
                worst = std::max(worst, std::abs(y.values()[static_cast<Eigen::Index>(i)] - expected[i]));
              }
              CHECK(worst <= 1e-12);
              ++cases;
            }
  CHECK(cases > 100);
}

TEST_CASE("batch_norm2d") {
  SUBCASE("constant input normalises to zero") {
    const Tensor y = batch_norm2d(Tensor::full({2, 3, 2, 2}, 5.0), Tensor::full({3}, 1.0), Tensor::zeros({3}));
    CHECK(y.values().abs().maxCoeff() == 0.0);
  }
  SUBCASE("unit-variance channel is scaled by 1/sqrt(1+eps)") {
    const Tensor x({1, 1, 2, 2}, (Array(4) << -1, 1, -1, 1).finished());
    const double eps = 1e-5;
    const Tensor y = batch_norm2d(x, Tensor::full({1}, 1.0), Tensor::zeros({1}), eps);
    const double factor = 0.99999500003749969;  // 1/sqrt(1.00001)
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(y.values()[i] == doctest::Approx(x.values()[i] * factor).epsilon(1e-14));
  }
  SUBCASE("zero gamma leaves beta") {
    Rng rng(3);
    const Tensor y = batch_norm2d(random_tensor(rng, {2, 2, 3, 3}), Tensor::zeros({2}), Tensor::full({2}, 7.0));
    CHECK((y.values() == 7.0).all());
  }
  SUBCASE("channel mismatch") {
    CHECK_THROWS_AS(batch_norm2d(Tensor::zeros({1, 2, 2, 2}), Tensor::zeros({3}), Tensor::zeros({3})), ShapeError);
  }
  SUBCASE("per-channel statistics after normalisation") {
    Rng rng(5);
    const double eps = 1e-5;
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor(rng, {2, 3, 4, 4});
      const Tensor beta = random_tensor(rng, {3});
      const Tensor y = batch_norm2d(x, Tensor::full({3}, 1.0), beta, eps);
      for (std::size_t c = 0; c < 3; ++c) {
        double mx = 0, my = 0;
        std::vector<double> xs, ys;
        for (std::size_t n = 0; n < 2; ++n)
          for (std::size_t i = 0; i < 16; ++i) {
            const auto k = static_cast<Eigen::Index>((n * 3 + c) * 16 + i);
            xs.push_back(x.values()[k]);
            ys.push_back(y.values()[k]);
          }
        for (std::size_t i = 0; i < xs.size(); ++i) mx += xs[i], my += ys[i];
        mx /= 32.0;
        my /= 32.0;
        double vx = 0, vy = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) vx += (xs[i] - mx) * (xs[i] - mx), vy += (ys[i] - my) * (ys[i] - my);
        vx /= 32.0;
        vy /= 32.0;
        CHECK(my == doctest::Approx(beta.values()[static_cast<Eigen::Index>(c)]).epsilon(1e-9));
        CHECK(std::abs(vy - 1.0 / (1.0 + eps / vx)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("relu") {
  const Tensor x({3}, (Array(3) << -1, 0, 2).finished());
  CHECK((relu(x).values() == (Array(3) << 0, 0, 2).finished()).all());
  const Tensor pos({4}, (Array(4) << 0.5, 1, 2, 3).finished());
  CHECK((relu(pos).values() == pos.values()).all());
  const Tensor leaf({2}, (Array(2) << -1, 2).finished(), true);
  const Array g = backward(sum(relu(leaf))).of(leaf);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 1.0);
  const Tensor at_zero({1}, Array::Zero(1), true);
  CHECK(backward(sum(relu(at_zero))).of(at_zero)[0] == 0.0);
}

TEST_CASE("bilinear_resize") {
  Rng rng(9);
  SUBCASE("identity size") {
    const Tensor x = random_tensor(rng, {2, 3, 5, 4});
    CHECK((bilinear_resize(x, 5, 4).values() == x.values()).all());
  }
  SUBCASE("2x2 to 1x1 averages the four neighbours") {
    const Tensor x({1, 1, 2, 2}, (Array(4) << 1, 2, 3, 4).finished());
    CHECK(bilinear_resize(x, 1, 1).item() == 2.5);
  }
  SUBCASE("constant stays constant") {
    const Tensor x = Tensor::full({1, 2, 7, 3}, 4.25);
    for (auto [h, w] : {std::pair{1, 1}, {3, 9}, {14, 2}, {7, 3}}) {
      const Tensor y = bilinear_resize(x, h, w);
      CHECK(y.shape() == Shape{1, 2, static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
      CHECK((y.values() - 4.25).abs().maxCoeff() <= 1e-15);
    }
  }
  SUBCASE("upsampling clamps at the border") {
    // 1x2 -> 1x4: sources -0.25 (clamped to 0), 0.25, 0.75, 1.25 (clamped to 1)
    const Tensor x({1, 1, 1, 2}, (Array(2) << 0, 4).finished());
    const Tensor y = bilinear_resize(x, 1, 4);
    CHECK((y.values() == (Array(4) << 0, 1, 3, 4).finished()).all());
  }
}

TEST_CASE("view") {
  const Tensor x({1, 16, 8}, Array::LinSpaced(128, 0, 127));
  const Tensor y = view(x, {1, 4, 4, 8});
  CHECK(y.shape() == Shape{1, 4, 4, 8});
  CHECK((y.values() == x.values()).all());
  const Tensor z({2, 3}, Array::LinSpaced(6, 1, 6));
  CHECK((view(view(z, {6}), {3, 2}).values() == z.values()).all());
  CHECK_THROWS_AS(view(x, {1, 5, 3, 8}), ShapeError);
}

TEST_CASE("permute") {
  Rng rng(4);
  const Tensor x = random_tensor(rng, {1, 4, 4, 8});
  const Tensor y = permute(x, {0, 3, 1, 2});
  CHECK(y.shape() == Shape{1, 8, 4, 4});
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t h = 0; h < 8; ++h) CHECK(y.at({0, h, r, c}) == x.at({0, r, c, h}));
  CHECK((permute(x, {0, 1, 2, 3}).values() == x.values()).all());
  CHECK((permute(y, {0, 2, 3, 1}).values() == x.values()).all());
  CHECK_THROWS_AS(permute(x, {0, 1, 1, 2}), ShapeError);
  CHECK_THROWS_AS(permute(x, {0, 1, 2}), ShapeError);
}

TEST_CASE("view and permute inverses over random shapes") {
  Rng rng(21);
  for (int trial = 0; trial < 50; ++trial) {
    Shape shape;
    const auto rank = static_cast<std::size_t>(rng.integer(1, 4));
    for (std::size_t k = 0; k < rank; ++k) shape.push_back(static_cast<std::size_t>(rng.integer(1, 5)));
    const Tensor x = random_tensor(rng, shape);
    std::vector<std::size_t> order(rank);
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t k = rank; k > 1; --k) std::swap(order[k - 1], order[static_cast<std::size_t>(rng.integer(0, static_cast<std::int64_t>(k - 1)))]);
    std::vector<std::size_t> inverse(rank);
    for (std::size_t k = 0; k < rank; ++k) inverse[order[k]] = k;
    const Tensor back = permute(permute(x, order), inverse);
    CHECK(back.shape() == x.shape());
    CHECK((back.values() == x.values()).all());
    const Tensor flat = view(x, {x.numel()});
    CHECK((view(flat, shape).values() == x.values()).all());
  }
}

TEST_CASE("slice") {
  const Tensor x({1, 3, 2}, Array::LinSpaced(6, 0, 5));
  const Tensor y = slice(x, 1, 1, 2);
  CHECK(y.shape() == Shape{1, 2, 2});
  CHECK((y.values() == (Array(4) << 2, 3, 4, 5).finished()).all());
  CHECK_THROWS_AS(slice(x, 1, 2, 2), ShapeError);
}

TEST_CASE("backward") {
  SUBCASE("sum gives ones") {
    const Tensor x = Tensor::full({2, 3}, 0.5, true);
    CHECK((backward(sum(x)).of(x) == 1.0).all());
  }
  SUBCASE("square") {
    const Tensor x = Tensor::full({1}, 3.0, true);
    CHECK(backward(sum(x * x)).of(x)[0] == 6.0);
  }
  SUBCASE("multiple uses accumulate") {
    const Tensor x = Tensor::full({2}, 1.5, true);
    const Tensor y = add(scale(x, 2.0), add(x, x));
    CHECK((backward(sum(y)).of(x) == 4.0).all());
  }
  SUBCASE("non-scalar root") { CHECK_THROWS_AS(backward(Tensor::zeros({2}, true)), ShapeError); }
  SUBCASE("constants are not on the tape") {
    const Tensor c = Tensor::full({2}, 1.0);
    const Tensor x = Tensor::full({2}, 2.0, true);
    const Gradients g = backward(sum(c * x));
    CHECK_FALSE(g.contains(c));
    CHECK((g.of(x) == 1.0).all());
  }
  SUBCASE("zero coefficient cuts its branch") {
    const Tensor a = Tensor::full({1}, 2.0, true);
    const Tensor b = Tensor::full({1}, 3.0, true);
    const Gradients g = backward(linear_combination(a, 1.0, b, 0.0));
    CHECK(g.of(a)[0] == 1.0);
    CHECK((g.of(b) == 0.0).all());
  }
  SUBCASE("conv-relu-mse chain matches finite differences") {
    Rng rng(17);
    const Tensor kernel = random_tensor(rng, {2, 2, 3, 3});
    const Tensor bias = random_tensor(rng, {2});
    const Tensor target = random_tensor(rng, {1, 2, 4, 4});
    const auto f = [&](const Tensor& x) {
      const Tensor d = relu(conv2d(x, kernel, bias, 1, 1)) - target;
      return mean(d * d);
    };
    CHECK(grad_check(f, random_tensor(rng, {1, 2, 4, 4}), 1e-3) <= 1e-4);
  }
}

TEST_CASE("grad_check") {
  Rng rng(2);
  SUBCASE("linear function is exact") {
    const Tensor w = random_tensor(rng, {3, 4});
    CHECK(grad_check([&](const Tensor& x) { return sum(w * x); }, random_tensor(rng, {3, 4}), 1e-3) < 1e-8);
  }
  SUBCASE("conv-BN-ReLU head") {
    const Tensor kernel = random_tensor(rng, {3, 2, 3, 3});
    const Tensor bias = random_tensor(rng, {3});
    const Tensor gamma = random_tensor(rng, {3});
    const Tensor beta = random_tensor(rng, {3});
    const Tensor probe = random_tensor(rng, {2, 3, 5, 5});
    const auto f = [&](const Tensor& x) {
      return sum(probe * relu(batch_norm2d(conv2d(x, kernel, bias, 1, 1), gamma, beta)));
    };
    CHECK(grad_check(f, random_tensor(rng, {2, 2, 5, 5}), 1e-3) <= 1e-4);
  }
  SUBCASE("a doubled gradient is flagged") {
    const auto doubled_square = [](const Tensor& x) {
      Array v = x.values().square();
      Array xv = x.values();
      return Tensor::from_op(x.shape(), std::move(v), {x}, [xv](const Array& g, std::span<Array* const> in) {
        if (in[0]) *in[0] += 2.0 * (2.0 * xv * g);
      });
    };
    const Tensor x({3}, (Array(3) << 0.7, -0.4, 0.9).finished());
    const double err = grad_check([&](const Tensor& t) { return sum(doubled_square(t)); }, x, 1e-3);
    CHECK(err == doctest::Approx(0.5).epsilon(1e-6));
  }
}
