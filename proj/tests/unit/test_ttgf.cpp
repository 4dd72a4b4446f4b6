#include <doctest.h>

#include <random>

#include "gazefusion/ops.hpp"
#include "gazefusion/ttgf.hpp"
#include "helpers.hpp"

using namespace gazefusion;

namespace {

const FusionTopology kAll[] = {FusionTopology::EhLr, FusionTopology::LrEh, FusionTopology::Par,
                               FusionTopology::TwoEyes};

struct Inputs {
  Tensor face, left, right;
};

Inputs random_inputs(const ModelConfig& c, std::size_t batch, std::mt19937_64& rng) {
  return {testutil::random_tensor({batch, c.face_size, c.face_size, c.image_channels}, rng, 0, 1),
          testutil::random_tensor({batch, c.eye_size, c.eye_size, c.image_channels}, rng, 0, 1),
          testutil::random_tensor({batch, c.eye_size, c.eye_size, c.image_channels}, rng, 0, 1)};
}

bool bitwise_equal(const Tensor& a, const Tensor& b) {
  return a.shape() == b.shape() && std::equal(a.data().begin(), a.data().end(), b.data().begin());
}

}  // namespace

TEST_CASE("closed-form parameter count matches the built model") {
  for (auto topo : kAll) {
    for (ModelConfig c : {ModelConfig::toy(), ModelConfig::tiny()}) {
      c.topology = topo;
      GazeModel m = GazeModel::create(c, 1);
      CAPTURE(topology_name(topo));
      CHECK(m.parameter_count() == expected_parameter_count(c));
    }
  }
  CHECK(expected_parameter_count(ModelConfig::full()) > expected_parameter_count(ModelConfig::toy()));
}

TEST_CASE("forward shapes for every topology") {
  std::mt19937_64 rng(2);
  for (auto topo : kAll) {
    ModelConfig c = ModelConfig::tiny();
    c.topology = topo;
    GazeModel m = GazeModel::create(c, 3);
    Inputs in = random_inputs(c, 3, rng);
    ForwardResult r = m.forward(in.face, in.left, in.right);
    CHECK(r.gaze.shape() == Shape{3, 2});
    CHECK(r.fused.shape() == Shape{3, c.fused_dim()});
    CHECK(r.face_features.defined() == (topo != FusionTopology::TwoEyes));
    CHECK(r.left_head.defined() == (topo == FusionTopology::EhLr));
  }
}

TEST_CASE("left-eye head feature ignores the right eye and vice versa") {
  ModelConfig c = ModelConfig::tiny();
  GazeModel m = GazeModel::create(c, 4);
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    Inputs in = random_inputs(c, 2, rng);
    ForwardResult base = m.forward(in.face, in.left, in.right);
    Tensor other = testutil::random_tensor(in.right.shape(), rng, 0, 1);
    ForwardResult r = m.forward(in.face, in.left, other);
    CHECK(bitwise_equal(base.left_head, r.left_head));
    CHECK_FALSE(bitwise_equal(base.right_head, r.right_head));
    ForwardResult l = m.forward(in.face, other, in.right);
    CHECK(bitwise_equal(base.right_head, l.right_head));
  }
}

TEST_CASE("property: samples in a batch do not interact") {
  ModelConfig c = ModelConfig::tiny();
  GazeModel m = GazeModel::create(c, 6);
  std::mt19937_64 rng(7);
  Inputs in = random_inputs(c, 4, rng);
  ForwardResult full = m.forward(in.face, in.left, in.right);
  for (std::size_t i = 0; i < 4; ++i) {
    const std::size_t row[] = {i};
    ForwardResult one = m.forward(gather_rows(in.face, row), gather_rows(in.left, row), gather_rows(in.right, row));
    for (std::size_t k = 0; k < 2; ++k) CHECK(one.gaze.at(k) == doctest::Approx(full.gaze.at(i * 2 + k)).epsilon(1e-13));
  }
}

TEST_CASE("same seed builds identical models") {
  ModelConfig c = ModelConfig::tiny();
  GazeModel a = GazeModel::create(c, 9), b = GazeModel::create(c, 9), d = GazeModel::create(c, 10);
  auto pa = a.parameters(), pb = b.parameters(), pd = d.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(pa[i].first == pb[i].first);
    CHECK(bitwise_equal(pa[i].second, pb[i].second));
    any_diff |= !bitwise_equal(pa[i].second, pd[i].second);
  }
  CHECK(any_diff);
}

TEST_CASE("predict agrees with batched forward") {
  ModelConfig c = ModelConfig::tiny();
  GazeModel m = GazeModel::create(c, 11);
  Image face(8, 8, 1), left(8, 8, 1), right(8, 8, 1);
  for (std::size_t i = 0; i < 64; ++i) {
    face.pixels[i] = (i % 7) / 7.0;
    left.pixels[i] = (i % 5) / 5.0;
    right.pixels[i] = (i % 3) / 3.0;
  }
  Prediction p = m.predict(face, left, right);
  ForwardResult r = m.forward(reshape(image_tensor(face), {1, 8, 8, 1}), reshape(image_tensor(left), {1, 8, 8, 1}),
                              reshape(image_tensor(right), {1, 8, 8, 1}));
  CHECK(p.gaze.yaw == r.gaze.at(0));
  CHECK(p.gaze.pitch == r.gaze.at(1));
  CHECK(p.fused.size() == c.fused_dim());
}

TEST_CASE("model config text round trip and validation") {
  ModelConfig c = ModelConfig::full();
  c.topology = FusionTopology::Par;
  CHECK(ModelConfig::from_text(c.to_text()) == c);
  ModelConfig bad = ModelConfig::toy();
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(ModelConfig::from_text("num_heads=x\n"), ConfigError);
  CHECK(parse_topology("lr_eh") == FusionTopology::LrEh);
  CHECK_THROWS_AS(parse_topology("star"), ConfigError);
}
