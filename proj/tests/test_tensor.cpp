#include <catch2/catch_amalgamated.hpp>

#include "drift/grad_check.hpp"
#include "drift/nn_ops.hpp"
#include "drift/tensor.hpp"

using namespace drift;

TEST_CASE("elementwise arithmetic", "[tensor]") {
  Tensor a({2}, {1, 2});
  Tensor b({2}, {3, 4});
  CHECK(add(a, b).value() == std::vector<double>{4, 6});
  CHECK(sub(a, b).value() == std::vector<double>{-2, -2});
  CHECK(mul(a, b).value() == std::vector<double>{3, 8});
  CHECK(div(b, a).value() == std::vector<double>{3, 2});
  CHECK(scalar_mul(a, -2).value() == std::vector<double>{-2, -4});

  Tensor s = Tensor::scalar(10);
  CHECK(add(a, s).value() == std::vector<double>{11, 12});
  CHECK(mul(s, b).value() == std::vector<double>{30, 40});
  CHECK_THROWS_AS(add(a, Tensor({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("identity has unit gradient", "[tensor]") {
  Tensor x({3}, {0.5, -1.0, 2.0});
  x.set_requires_grad(true);
  backward(sum(x));
  CHECK(x.grad() == std::vector<double>{1, 1, 1});
}

TEST_CASE("squared norm gradient is 2x", "[tensor]") {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor f = sumsq(x);
  CHECK(f.item() == 5.0);
  backward(f);
  CHECK(x.grad() == std::vector<double>{2, 4});
}

TEST_CASE("backward zeroes then accumulates, so repeat runs agree", "[tensor]") {
  Rng rng(7);
  Tensor x = Tensor::randn({4, 4}, rng);
  x.set_requires_grad(true);
  Tensor f = sumsq(silu(matmul(x, x)));
  backward(f);
  auto g1 = x.grad();
  backward(f);
  CHECK(x.grad() == g1);
}

TEST_CASE("gradient of a sum of losses is the sum of gradients", "[tensor]") {
  Rng rng(11);
  Tensor x = Tensor::randn({5}, rng);
  x.set_requires_grad(true);
  Tensor f1 = sumsq(x);
  Tensor f2 = sum(mul(x, x));
  backward(f1);
  auto g1 = x.grad();
  backward(f2);
  auto g2 = x.grad();
  backward(add(f1, f2));
  auto gs = x.grad();
  for (size_t i = 0; i < gs.size(); ++i) CHECK(gs[i] == Catch::Approx(g1[i] + g2[i]).margin(1e-14));
}

TEST_CASE("backward rejects non-scalar roots", "[tensor]") {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  CHECK_THROWS_AS(backward(y), std::invalid_argument);
}

TEST_CASE("NoGradGuard suppresses recording", "[tensor]") {
  Tensor x({2}, {1, 2});
  x.set_requires_grad(true);
  NoGradGuard ng;
  Tensor y = sumsq(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("detach cuts the graph", "[tensor]") {
  Tensor x({2}, {3, 4});
  x.set_requires_grad(true);
  Tensor y = mul(x, x);
  Tensor z = y.detach();
  CHECK_FALSE(z.requires_grad());
  CHECK(z.value() == y.value());
}

TEST_CASE("matmul against a hand-computed product", "[tensor]") {
  Tensor a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = matmul(a, b);
  CHECK(c.value() == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(matmul(a, a), std::invalid_argument);
}

TEST_CASE("shape ops move data where expected", "[tensor]") {
  Tensor x({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reshape(x, {3, 2}).shape() == Shape{3, 2});
  CHECK_THROWS_AS(reshape(x, {4, 2}), std::invalid_argument);
  CHECK(transpose2d(x).value() == std::vector<double>{1, 4, 2, 5, 3, 6});
  CHECK(slice(x, 1, 1, 2).value() == std::vector<double>{2, 3, 5, 6});
  CHECK(slice(x, 0, 1, 1).value() == std::vector<double>{4, 5, 6});
  CHECK_THROWS_AS(slice(x, 1, 2, 2), std::invalid_argument);

  Tensor y({2, 3}, {10, 20, 30, 40, 50, 60});
  CHECK(concat({x, y}, 0).shape() == Shape{4, 3});
  CHECK(concat({x, y}, 1).value() ==
        std::vector<double>{1, 2, 3, 10, 20, 30, 4, 5, 6, 40, 50, 60});

  Tensor col({2, 1}, {1, 2});
  CHECK(broadcast_to(col, {2, 3}).value() == std::vector<double>{1, 1, 1, 2, 2, 2});
  CHECK_THROWS_AS(broadcast_to(col, {3, 3}), std::invalid_argument);
}

TEST_CASE("unary op values", "[tensor]") {
  Tensor x({3}, {-1.0, 0.0, 1.0});
  auto s = silu(x).value();
  CHECK(s[0] == Catch::Approx(-0.2689414213699951));
  CHECK(s[1] == 0.0);
  CHECK(s[2] == Catch::Approx(0.7310585786300049));
  CHECK(relu(x).value() == std::vector<double>{0, 0, 1});
  CHECK(shrink(Tensor({4}, {-2, -0.5, 0.5, 2}), 1.0).value() ==
        std::vector<double>{-1, 0, 0, 1});
  CHECK(l1norm(x).item() == 2.0);
}

TEST_CASE("softmax rows normalize and differentiate", "[tensor]") {
  Tensor x({2, 3}, {1, 2, 3, 0, 0, 0});
  auto y = softmax_rows(x).value();
  CHECK(y[0] + y[1] + y[2] == Catch::Approx(1.0));
  CHECK(y[3] == Catch::Approx(1.0 / 3));
  auto r = grad_check([](const Tensor& t) { return sumsq(softmax_rows(t)); }, x);
  CHECK(r.max_rel_err < 1e-6);
}

TEST_CASE("finite differences agree across composed ops", "[tensor]") {
  Rng rng(3);
  SECTION("matmul chain") {
    Tensor x = Tensor::randn({3, 3}, rng);
    Tensor c = Tensor::randn({3, 3}, rng);
    auto r = grad_check([&](const Tensor& t) { return sumsq(matmul(t, matmul(c, t))); }, x);
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("broadcast, slice, concat") {
    Tensor x = Tensor::randn({2, 1}, rng);
    auto f = [](const Tensor& t) {
      Tensor b = broadcast_to(t, {2, 4});
      Tensor s = slice(b, 1, 1, 2);
      return sumsq(concat({s, s}, 0));
    };
    auto r = grad_check(f, x);
    CHECK(r.max_rel_err < 1e-6);
  }
  SECTION("silu, sin, cos, sqrt, div") {
    Tensor x({4}, {0.3, 1.2, -0.7, 2.0});
    auto f = [](const Tensor& t) {
      Tensor a = add(vsin(t), vcos(t));
      Tensor b = vsqrt(add(sumsq(t), Tensor::scalar(1.0)));
      return sum(div(a, b));
    };
    auto r = grad_check(f, x);
    CHECK(r.max_rel_err < 1e-5);
  }
  SECTION("mean and transpose") {
    Tensor x = Tensor::randn({3, 2}, rng);
    auto r = grad_check([](const Tensor& t) { return mean(matmul(transpose2d(t), t)); }, x);
    CHECK(r.max_rel_err < 1e-6);
  }
}

TEST_CASE("l1 kink coordinates are excluded, not failed", "[tensor]") {
  Tensor x({3}, {1.0, 0.0, -2.0});
  auto r = grad_check([](const Tensor& t) { return l1norm(t); }, x);
  REQUIRE(r.excluded.size() == 1);
  CHECK(r.excluded[0] == 1);
  CHECK(r.max_rel_err < 1e-8);
}

TEST_CASE("grad_check rejects non-finite functions", "[tensor]") {
  Tensor x({2}, {1.0, 2.0});
  auto f = [](const Tensor& t) { return div(Tensor::scalar(1.0), sub(sumsq(t), Tensor::scalar(5.0))); };
  CHECK_THROWS_AS(grad_check(f, x), std::runtime_error);
}
