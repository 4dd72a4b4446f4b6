#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "gazefusion/ops.hpp"
#include "gazefusion/tape.hpp"
#include "helpers.hpp"

using namespace gazefusion;

namespace {

std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("tensor construction and shape checks") {
  Tensor z = Tensor::zeros({2, 3});
  CHECK(z.numel() == 6);
  CHECK(z.rank() == 2);
  CHECK(shape_str(z.shape()) == "[2x3]");
  CHECK_THROWS_AS(Tensor::from_data({2, 2}, {1, 2, 3}), DimensionError);
  CHECK(Tensor::scalar(4.5).item() == 4.5);
  CHECK_THROWS_AS(z.item(), DimensionError);
  CHECK_FALSE(z.requires_grad());
  CHECK(Tensor::parameter({1}, {1.0}).requires_grad());
}

TEST_CASE("matmul matches hand computation") {
  Tensor a = Tensor::from_data({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from_data({3, 2}, {7, 8, 9, 10, 11, 12});
  CHECK(values(matmul(a, b)) == std::vector<double>{58, 64, 139, 154});
  CHECK_THROWS_AS(matmul(a, a), DimensionError);

  Tensor a3 = Tensor::from_data({2, 1, 3}, {1, 2, 3, 4, 5, 6});
  Tensor r = matmul(a3, b);
  CHECK(r.shape() == Shape{2, 1, 2});
  CHECK(values(r) == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("bmm multiplies each batch independently") {
  std::mt19937_64 rng(1);
  Tensor a = testutil::random_tensor({3, 2, 4}, rng);
  Tensor b = testutil::random_tensor({3, 4, 5}, rng);
  Tensor r = bmm(a, b);
  REQUIRE(r.shape() == Shape{3, 2, 5});
  for (std::size_t n = 0; n < 3; ++n)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 5; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < 4; ++k) s += a.at(n * 8 + i * 4 + k) * b.at(n * 20 + k * 5 + j);
        CHECK(r.at(n * 10 + i * 5 + j) == doctest::Approx(s).epsilon(1e-14));
      }
}

TEST_CASE("elementwise ops and bias") {
  Tensor a = Tensor::from_data({2, 2}, {1, -2, 0, 4});
  Tensor b = Tensor::from_data({2, 2}, {0.5, 1, 2, -1});
  CHECK(values(add(a, b)) == std::vector<double>{1.5, -1, 2, 3});
  CHECK(values(sub(a, b)) == std::vector<double>{0.5, -3, -2, 5});
  CHECK(values(mul(a, b)) == std::vector<double>{0.5, -2, 0, -4});
  CHECK(values(scale(a, -2)) == std::vector<double>{-2, 4, 0, -8});
  CHECK(values(abs(a)) == std::vector<double>{1, 2, 0, 4});
  CHECK(values(add_bias(a, Tensor::from_data({2}, {10, 20}))) == std::vector<double>{11, 18, 10, 24});
  CHECK_THROWS_AS(add(a, Tensor::zeros({4})), DimensionError);
}

TEST_CASE("softmax rows are distributions and shift invariant") {
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor x = testutil::random_tensor({3, 7}, rng, -30, 30);
    Tensor s = softmax_rows(x);
    Tensor shifted = softmax_rows(add_bias(x, Tensor::full({7}, 0.0)));
    for (std::size_t r = 0; r < 3; ++r) {
      double total = 0;
      for (std::size_t c = 0; c < 7; ++c) {
        CHECK(s.at(r * 7 + c) >= 0.0);
        total += s.at(r * 7 + c);
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
    }
    std::vector<double> plus(x.data().begin(), x.data().end());
    for (double& v : plus) v += 1000.0;
    Tensor big = softmax_rows(Tensor::from_data({3, 7}, plus));
    for (std::size_t i = 0; i < 21; ++i) CHECK(big.at(i) == doctest::Approx(s.at(i)).epsilon(1e-9));
    CHECK(values(shifted) == values(s));
  }
}

TEST_CASE("layer norm normalizes the last axis") {
  std::mt19937_64 rng(3);
  Tensor x = testutil::random_tensor({4, 6}, rng, -5, 5);
  Tensor y = layer_norm(x, Tensor::full({6}, 1.0), Tensor::zeros({6}), 0.0);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 6; ++c) m += y.at(r * 6 + c) / 6;
    for (std::size_t c = 0; c < 6; ++c) v += (y.at(r * 6 + c) - m) * (y.at(r * 6 + c) - m) / 6;
    CHECK(std::abs(m) < 1e-12);
    CHECK(v == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor g = layer_norm(x, Tensor::full({6}, 2.0), Tensor::full({6}, 0.5), 0.0);
  for (std::size_t i = 0; i < 24; ++i) CHECK(g.at(i) == doctest::Approx(2 * y.at(i) + 0.5).epsilon(1e-12));
}

TEST_CASE("gelu tanh approximation") {
  Tensor x = Tensor::from_data({5}, {0.0, 1.0, -1.0, 8.0, -8.0});
  Tensor y = gelu(x);
  CHECK(y.at(0) == 0.0);
  const double c = std::sqrt(2.0 / M_PI);
  CHECK(y.at(1) == doctest::Approx(0.5 * (1 + std::tanh(c * (1 + kGeluCubicCoeff)))).epsilon(1e-15));
  CHECK(y.at(1) - y.at(2) == doctest::Approx(1.0).epsilon(1e-15));  // gelu(x) - gelu(-x) = x
  CHECK(y.at(3) == doctest::Approx(8.0).epsilon(1e-12));
  CHECK(std::abs(y.at(4)) < 1e-12);
}

TEST_CASE("shape ops: concat, reshape, permute, reductions, gather") {
  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor b = Tensor::from_data({2, 1}, {5, 6});
  CHECK(values(concat(a, b, 1)) == std::vector<double>{1, 2, 5, 3, 4, 6});
  CHECK(values(concat(a, a, 0)) == std::vector<double>{1, 2, 3, 4, 1, 2, 3, 4});
  CHECK_THROWS_AS(concat(a, b, 0), DimensionError);

  CHECK(reshape(a, {4}).shape() == Shape{4});
  CHECK_THROWS_AS(reshape(a, {3}), DimensionError);

  const std::size_t order[] = {1, 0};
  CHECK(values(permute(a, order)) == std::vector<double>{1, 3, 2, 4});
  Tensor c = Tensor::from_data({2, 3, 2}, {0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11});
  const std::size_t order3[] = {2, 0, 1};
  Tensor p = permute(c, order3);
  CHECK(p.shape() == Shape{2, 2, 3});
  CHECK(values(p) == std::vector<double>{0, 2, 4, 6, 8, 10, 1, 3, 5, 7, 9, 11});

  CHECK(sum(a).item() == 10);
  CHECK(mean(a).item() == 2.5);
  CHECK(values(mean_axis(a, 0)) == std::vector<double>{2, 3});
  CHECK(values(mean_axis(a, 1)) == std::vector<double>{1.5, 3.5});

  const std::size_t rows[] = {1, 1, 0};
  CHECK(values(gather_rows(a, rows)) == std::vector<double>{3, 4, 3, 4, 1, 2});
}

TEST_CASE("im2col on a 3x3 single-channel image") {
  Tensor x = Tensor::from_data({1, 3, 3, 1}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor cols = im2col(x, 3, 2, 1);
  CHECK(conv_output_size(3, 3, 2, 1) == 2);
  REQUIRE(cols.shape() == Shape{4, 9});
  // Output (0,0) is centred on pixel (0,0): top row and left column are padding.
  CHECK(values(gather_rows(cols, std::vector<std::size_t>{0})) == std::vector<double>{0, 0, 0, 0, 1, 2, 0, 4, 5});
  CHECK(values(gather_rows(cols, std::vector<std::size_t>{3})) == std::vector<double>{5, 6, 0, 8, 9, 0, 0, 0, 0});
}

TEST_CASE("add_scattered_rows adds only to listed rows") {
  Tensor base = Tensor::from_data({3, 2}, {1, 1, 2, 2, 3, 3});
  std::vector<Tensor> parts{Tensor::from_data({1, 2}, {10, 20})};
  std::vector<std::vector<std::size_t>> groups{{2}};
  Tensor r = add_scattered_rows(base, parts, groups);
  CHECK(values(r) == std::vector<double>{1, 1, 2, 2, 13, 23});
}

TEST_CASE("backward accumulates gradients on leaves") {
  Tensor a = Tensor::parameter({3}, {1, 2, 3});
  Tensor b = Tensor::parameter({3}, {4, 5, 6});
  Tape tape;
  {
    TapeScope scope(tape);
    Tensor loss = sum(add(mul(a, b), a));
    backward(loss);
  }
  CHECK(std::vector<double>(a.grad().begin(), a.grad().end()) == std::vector<double>{5, 6, 7});
  CHECK(std::vector<double>(b.grad().begin(), b.grad().end()) == std::vector<double>{1, 2, 3});
}

TEST_CASE("tape contract") {
  Tensor a = Tensor::parameter({2}, {1, 2});
  Tensor unused = Tensor::parameter({2}, {1, 2});
  SUBCASE("no tape, no recording") {
    Tensor y = mul(a, a);
    CHECK(Tape::active() == nullptr);
    CHECK_THROWS_AS(backward(sum(y)), AutodiffError);
  }
  SUBCASE("double backward throws, reset allows reuse") {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = sum(mul(a, a));
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), AutodiffError);
    tape.reset();
    CHECK(tape.size() == 0);
  }
  SUBCASE("non-scalar loss throws") {
    Tape tape;
    TapeScope scope(tape);
    CHECK_THROWS_AS(tape.backward(mul(a, a)), AutodiffError);
  }
  SUBCASE("constants are not recorded; unreachable leaves keep no grad") {
    Tape tape;
    TapeScope scope(tape);
    Tensor c = Tensor::from_data({2}, {3, 4});
    (void)mul(c, c);
    CHECK(tape.size() == 0);
    tape.backward(sum(mul(a, c)));
    CHECK(a.has_grad());
    CHECK_FALSE(unused.has_grad());
  }
}

TEST_CASE("abs subgradient at zero is zero") {
  Tensor x = Tensor::parameter({3}, {-1.0, 0.0, 2.0});
  Tape tape;
  TapeScope scope(tape);
  tape.backward(sum(abs(x)));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{-1, 0, 1});
}

TEST_CASE("property: matmul is linear in its first argument") {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 25; ++trial) {
    Tensor a1 = testutil::random_tensor({3, 4}, rng), a2 = testutil::random_tensor({3, 4}, rng);
    Tensor b = testutil::random_tensor({4, 2}, rng);
    Tensor lhs = matmul(add(a1, a2), b);
    Tensor rhs = add(matmul(a1, b), matmul(a2, b));
    for (std::size_t i = 0; i < lhs.numel(); ++i) CHECK(lhs.at(i) == doctest::Approx(rhs.at(i)).epsilon(1e-12));
  }
}
