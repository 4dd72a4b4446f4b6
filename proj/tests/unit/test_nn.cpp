#include <doctest.h>

#include <cmath>
#include <random>

#include "gazefusion/nn.hpp"
#include "gazefusion/ops.hpp"
#include "helpers.hpp"

using namespace gazefusion;

TEST_CASE("linear layer computes x W + b on the last axis") {
  nn::Rng rng(1);
  nn::LinearLayer l = nn::LinearLayer::create(3, 2, rng);
  CHECK(l.bias.at(0) == 0.0);
  const double bound = 1.0 / std::sqrt(3.0);
  for (double w : l.weight.data()) CHECK(std::abs(w) <= bound);
  l.bias.mutable_data()[1] = 0.5;
  Tensor x = Tensor::from_data({1, 3}, {1, 2, 3});
  Tensor y = l.forward(x);
  for (std::size_t j = 0; j < 2; ++j) {
    double s = j == 1 ? 0.5 : 0.0;
    for (std::size_t i = 0; i < 3; ++i) s += x.at(i) * l.weight.at(i * 2 + j);
    CHECK(y.at(j) == doctest::Approx(s).epsilon(1e-15));
  }
  NamedTensors p;
  l.collect(p, "fc");
  CHECK(p.size() == 2);
  CHECK(p[0].first == "fc.weight");
  CHECK(count_parameters(p) == nn::LinearLayer::parameter_count(3, 2));
}

TEST_CASE("single-head attention matches an explicit computation") {
  nn::Rng rng(2);
  nn::MhsaParams p = nn::MhsaParams::create(4, 1, rng);
  std::mt19937_64 drng(3);
  Tensor z = testutil::random_tensor({3, 4}, drng);
  Tensor att;
  Tensor out = nn::mhsa_forward(p, z, &att);
  Tensor q = p.w_q.forward(z), k = p.w_k.forward(z), v = p.w_v.forward(z);
  std::vector<double> ctx(12, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    double s[3], mx = -1e300, tot = 0;
    for (std::size_t j = 0; j < 3; ++j) {
      s[j] = 0;
      for (std::size_t d = 0; d < 4; ++d) s[j] += q.at(i * 4 + d) * k.at(j * 4 + d);
      s[j] /= 2.0;
      mx = std::fmax(mx, s[j]);
    }
    for (double& x : s) tot += (x = std::exp(x - mx));
    for (std::size_t j = 0; j < 3; ++j) {
      CHECK(att.at(i * 3 + j) == doctest::Approx(s[j] / tot).epsilon(1e-13));
      for (std::size_t d = 0; d < 4; ++d) ctx[i * 4 + d] += s[j] / tot * v.at(j * 4 + d);
    }
  }
  Tensor expected = p.w_o.forward(Tensor::from_data({3, 4}, ctx));
  for (std::size_t i = 0; i < 12; ++i) CHECK(out.at(i) == doctest::Approx(expected.at(i)).epsilon(1e-12));
}

TEST_CASE("attention weights are row distributions") {
  nn::Rng rng(4);
  nn::MhsaParams p = nn::MhsaParams::create(8, 4, rng);
  std::mt19937_64 drng(5);
  Tensor att;
  nn::mhsa_forward(p, testutil::random_tensor({2, 3, 8}, drng), &att);
  REQUIRE(att.shape() == Shape{2, 4, 3, 3});
  for (std::size_t r = 0; r < 2 * 4 * 3; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < 3; ++c) s += att.at(r * 3 + c);
    CHECK(s == doctest::Approx(1.0).epsilon(1e-13));
  }
  CHECK_THROWS_AS(nn::MhsaParams::create(6, 4, rng), ConfigError);
}

TEST_CASE("property: encoder without positional encoding is permutation equivariant") {
  nn::Rng rng(6);
  nn::TransformerEncoder e = nn::TransformerEncoder::create(2, 8, 2, 16, rng);
  std::mt19937_64 drng(7);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor z = testutil::random_tensor({3, 8}, drng);
    const std::size_t perm[] = {2, 0, 1};
    Tensor a = gather_rows(nn::encoder_forward(e, z), perm);
    Tensor b = nn::encoder_forward(e, gather_rows(z, perm));
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.at(i) == doctest::Approx(b.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("layer parameter counts match collected tensors") {
  nn::Rng rng(8);
  NamedTensors p;
  nn::TransformerBlock::create(8, 2, 16, rng).collect(p, "b");
  CHECK(count_parameters(p) == nn::TransformerBlock::parameter_count(8, 16));
  p.clear();
  nn::TransformerEncoder::create(3, 8, 4, 32, rng).collect(p, "e");
  CHECK(count_parameters(p) == nn::TransformerEncoder::parameter_count(3, 8, 32));
  for (auto pooling : {nn::Pooling::Average, nn::Pooling::Flatten}) {
    p.clear();
    nn::ConvBackbone::create(16, 16, 3, {4, 8}, 10, pooling, rng).collect(p, "cnn");
    CHECK(count_parameters(p) == nn::ConvBackbone::parameter_count(16, 16, 3, {4, 8}, 10, pooling));
  }
  CHECK(nn::ConvBackbone::pooled_dim(16, 16, {4, 8}, nn::Pooling::Average) == 8);
  CHECK(nn::ConvBackbone::pooled_dim(16, 16, {4, 8}, nn::Pooling::Flatten) == 4 * 4 * 8);
}

TEST_CASE("backbone shapes and batch independence") {
  nn::Rng rng(9);
  nn::ConvBackbone b = nn::ConvBackbone::create(8, 8, 1, {2, 4}, 5, nn::Pooling::Flatten, rng);
  std::mt19937_64 drng(10);
  Tensor imgs = testutil::random_tensor({3, 8, 8, 1}, drng, 0, 1);
  Tensor f = nn::backbone_forward(b, imgs);
  REQUIRE(f.shape() == Shape{3, 5});
  const std::size_t one[] = {1};
  Tensor single = nn::backbone_forward(b, reshape(gather_rows(imgs, one), {8, 8, 1}));
  CHECK(single.shape() == Shape{5});
  for (std::size_t j = 0; j < 5; ++j) CHECK(single.at(j) == f.at(5 + j));
  CHECK_THROWS_AS(nn::backbone_forward(b, Tensor::zeros({1, 4, 4, 1})), DimensionError);
}

TEST_CASE("pooling names round trip") {
  CHECK(nn::parse_pooling(nn::pooling_name(nn::Pooling::Average)) == nn::Pooling::Average);
  CHECK(nn::parse_pooling("flatten") == nn::Pooling::Flatten);
  CHECK_THROWS_AS(nn::parse_pooling("max"), ConfigError);
}
