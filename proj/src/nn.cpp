#include "gazefusion/nn.hpp"

#include <array>
#include <cmath>

#include "gazefusion/ops.hpp"

namespace gazefusion::nn {

namespace {

Tensor uniform_parameter(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  std::vector<double> data(shape_numel(shape));
  for (double& v : data) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(data));
}

}  // namespace

LinearLayer LinearLayer::create(std::size_t d_in, std::size_t d_out, Rng& rng) {
  LinearLayer l;
  l.weight = uniform_parameter({d_in, d_out}, d_in, rng);
  l.bias = Tensor::parameter({d_out}, std::vector<double>(d_out, 0.0));
  return l;
}

Tensor LinearLayer::forward(const Tensor& x) const { return add_bias(matmul(x, weight), bias); }

void LinearLayer::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".weight", weight);
  out.emplace_back(prefix + ".bias", bias);
}

void LinearLayer::zero() {
  for (Tensor* t : {&weight, &bias}) {
    for (double& v : t->mutable_data()) v = 0.0;
  }
}

LayerNormParams LayerNormParams::create(std::size_t d, double eps) {
  LayerNormParams p;
  p.gamma = Tensor::parameter({d}, std::vector<double>(d, 1.0));
  p.beta = Tensor::parameter({d}, std::vector<double>(d, 0.0));
  p.eps = eps;
  return p;
}

Tensor LayerNormParams::forward(const Tensor& x) const { return layer_norm(x, gamma, beta, eps); }

void LayerNormParams::collect(NamedTensors& out, const std::string& prefix) const {
  out.emplace_back(prefix + ".gamma", gamma);
  out.emplace_back(prefix + ".beta", beta);
}

MhsaParams MhsaParams::create(std::size_t d_model, std::size_t num_heads, Rng& rng) {
  if (num_heads == 0 || d_model % num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(d_model) + " is not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  MhsaParams p;
  p.num_heads = num_heads;
  p.d_model = d_model;
  p.w_q = LinearLayer::create(d_model, d_model, rng);
  p.w_k = LinearLayer::create(d_model, d_model, rng);
  p.w_v = LinearLayer::create(d_model, d_model, rng);
  p.w_o = LinearLayer::create(d_model, d_model, rng);
  return p;
}

void MhsaParams::collect(NamedTensors& out, const std::string& prefix) const {
  w_q.collect(out, prefix + ".w_q");
  w_k.collect(out, prefix + ".w_k");
  w_v.collect(out, prefix + ".w_v");
  w_o.collect(out, prefix + ".w_o");
}

Tensor mhsa_forward(const MhsaParams& p, const Tensor& z, Tensor* attention) {
  if (p.num_heads == 0 || p.d_model % p.num_heads != 0) {
    throw ConfigError("d_model " + std::to_string(p.d_model) + " is not divisible by num_heads " +
                      std::to_string(p.num_heads));
  }
  const bool unbatched = z.rank() == 2;
  if ((z.rank() != 2 && z.rank() != 3) || z.shape().back() != p.d_model) {
    throw DimensionError("mhsa: expected [n×" + std::to_string(p.d_model) + "] tokens, got " + shape_str(z.shape()));
  }
  const std::size_t batch = unbatched ? 1 : z.dim(0);
  const std::size_t n = z.dim(z.rank() - 2);
  const std::size_t h = p.num_heads, dk = p.head_dim();

  static constexpr std::array<std::size_t, 4> kSplitHeads{0, 2, 1, 3};
  static constexpr std::array<std::size_t, 3> kTransposeLast{0, 2, 1};

  // [B×n×d] -> [B·h×n×dk]
  auto split = [&](const Tensor& t) {
    return reshape(permute(reshape(t, {batch, n, h, dk}), kSplitHeads), {batch * h, n, dk});
  };
  Tensor q = split(p.w_q.forward(z));
  Tensor k = split(p.w_k.forward(z));
  Tensor v = split(p.w_v.forward(z));

  Tensor scores = scale(bmm(q, permute(k, kTransposeLast)), 1.0 / std::sqrt(static_cast<double>(dk)));
  Tensor weights = softmax_rows(scores);
  if (attention) *attention = reshape(weights, {batch, h, n, n});

  Tensor heads = bmm(weights, v);  // [B·h×n×dk]
  Tensor merged = reshape(permute(reshape(heads, {batch, h, n, dk}), kSplitHeads), z.shape());
  return p.w_o.forward(merged);
}

TransformerBlock TransformerBlock::create(std::size_t d_model, std::size_t num_heads, std::size_t hidden_dim,
                                          Rng& rng) {
  TransformerBlock b;
  b.ln1 = LayerNormParams::create(d_model);
  b.mhsa = MhsaParams::create(d_model, num_heads, rng);
  b.ln2 = LayerNormParams::create(d_model);
  b.mlp_in = LinearLayer::create(d_model, hidden_dim, rng);
  b.mlp_out = LinearLayer::create(hidden_dim, d_model, rng);
  return b;
}

std::size_t TransformerBlock::parameter_count(std::size_t d_model, std::size_t hidden_dim) {
  return 2 * LayerNormParams::parameter_count(d_model) + MhsaParams::parameter_count(d_model) +
         LinearLayer::parameter_count(d_model, hidden_dim) + LinearLayer::parameter_count(hidden_dim, d_model);
}

void TransformerBlock::collect(NamedTensors& out, const std::string& prefix) const {
  ln1.collect(out, prefix + ".ln1");
  mhsa.collect(out, prefix + ".mhsa");
  ln2.collect(out, prefix + ".ln2");
  mlp_in.collect(out, prefix + ".mlp_in");
  mlp_out.collect(out, prefix + ".mlp_out");
}

Tensor transformer_block_forward(const TransformerBlock& b, const Tensor& z) {
  if (z.rank() < 2 || z.shape().back() != b.ln1.gamma.dim(0)) {
    throw DimensionError("transformer block of width " + std::to_string(b.ln1.gamma.dim(0)) +
                         " cannot take tokens " + shape_str(z.shape()));
  }
  Tensor attended = add(mhsa_forward(b.mhsa, b.ln1.forward(z)), z);
  Tensor hidden = gelu(b.mlp_in.forward(b.ln2.forward(attended)));
  return add(b.mlp_out.forward(hidden), attended);
}

TransformerEncoder TransformerEncoder::create(std::size_t num_blocks, std::size_t d_model, std::size_t num_heads,
                                              std::size_t hidden_dim, Rng& rng) {
  if (num_blocks == 0) throw ConfigError("transformer encoder needs at least one block");
  TransformerEncoder e;
  for (std::size_t i = 0; i < num_blocks; ++i) {
    e.blocks.push_back(TransformerBlock::create(d_model, num_heads, hidden_dim, rng));
  }
  e.final_ln = LayerNormParams::create(d_model);
  return e;
}

std::size_t TransformerEncoder::parameter_count(std::size_t num_blocks, std::size_t d_model, std::size_t hidden_dim) {
  return num_blocks * TransformerBlock::parameter_count(d_model, hidden_dim) + LayerNormParams::parameter_count(d_model);
}

void TransformerEncoder::collect(NamedTensors& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) blocks[i].collect(out, prefix + ".block" + std::to_string(i));
  final_ln.collect(out, prefix + ".final_ln");
}

Tensor encoder_forward(const TransformerEncoder& e, const Tensor& z) {
  Tensor x = z;
  for (const auto& b : e.blocks) x = transformer_block_forward(b, x);
  return e.final_ln.forward(x);
}

std::string pooling_name(Pooling p) { return p == Pooling::Average ? "avg" : "flatten"; }

Pooling parse_pooling(std::string_view name) {
  if (name == "avg") return Pooling::Average;
  if (name == "flatten") return Pooling::Flatten;
  throw ConfigError("unknown pooling '" + std::string(name) + "' (expected avg or flatten)");
}

std::size_t ConvBackbone::pooled_dim(std::size_t height, std::size_t width,
                                     const std::vector<std::size_t>& stage_channels, Pooling pooling) {
  if (stage_channels.empty()) throw ConfigError("backbone needs at least one conv stage");
  std::size_t h = height, w = width;
  for (std::size_t i = 0; i < stage_channels.size(); ++i) {
    h = conv_output_size(h, 3, 2, 1);
    w = conv_output_size(w, 3, 2, 1);
  }
  return pooling == Pooling::Average ? stage_channels.back() : h * w * stage_channels.back();
}

ConvBackbone ConvBackbone::create(std::size_t height, std::size_t width, std::size_t channels,
                                  const std::vector<std::size_t>& stage_channels, std::size_t feature_dim,
                                  Pooling pooling, Rng& rng) {
  const std::size_t pooled = pooled_dim(height, width, stage_channels, pooling);
  ConvBackbone b;
  b.height = height;
  b.width = width;
  b.channels = channels;
  b.pooling = pooling;
  std::size_t in = channels;
  for (std::size_t out : stage_channels) {
    ConvStage s;
    const std::size_t fan_in = s.kernel * s.kernel * in;
    s.weight = uniform_parameter({fan_in, out}, fan_in, rng);
    s.bias = Tensor::parameter({out}, std::vector<double>(out, 0.0));
    b.stages.push_back(std::move(s));
    in = out;
  }
  b.proj = LinearLayer::create(pooled, feature_dim, rng);
  return b;
}

std::size_t ConvBackbone::parameter_count(std::size_t height, std::size_t width, std::size_t channels,
                                          const std::vector<std::size_t>& stage_channels, std::size_t feature_dim,
                                          Pooling pooling) {
  std::size_t total = 0, in = channels;
  for (std::size_t out : stage_channels) {
    total += 9 * in * out + out;
    in = out;
  }
  return total + LinearLayer::parameter_count(pooled_dim(height, width, stage_channels, pooling), feature_dim);
}

void ConvBackbone::collect(NamedTensors& out, const std::string& prefix) const {
  for (std::size_t i = 0; i < stages.size(); ++i) {
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".weight", stages[i].weight);
    out.emplace_back(prefix + ".conv" + std::to_string(i) + ".bias", stages[i].bias);
  }
  proj.collect(out, prefix + ".proj");
}

Tensor backbone_forward(const ConvBackbone& b, const Tensor& images) {
  const bool single = images.rank() == 3;
  const Shape expected{b.height, b.width, b.channels};
  const bool ok = (single && images.shape() == expected) ||
                  (images.rank() == 4 && Shape(images.shape().begin() + 1, images.shape().end()) == expected);
  if (!ok) {
    throw DimensionError("backbone built for " + shape_str(expected) + " images cannot take " +
                         shape_str(images.shape()));
  }
  const std::size_t batch = single ? 1 : images.dim(0);
  Tensor x = single ? reshape(images, {1, b.height, b.width, b.channels}) : images;
  std::size_t h = b.height, w = b.width;
  for (const auto& s : b.stages) {
    const std::size_t ho = conv_output_size(h, s.kernel, s.stride, s.pad);
    const std::size_t wo = conv_output_size(w, s.kernel, s.stride, s.pad);
    Tensor cols = im2col(x, s.kernel, s.stride, s.pad);
    x = reshape(gelu(add_bias(matmul(cols, s.weight), s.bias)), {batch, ho, wo, s.out_channels()});
    h = ho;
    w = wo;
  }
  Tensor pooled = b.pooling == Pooling::Average ? mean_axis(reshape(x, {batch, h * w, x.dim(3)}), 1)
                                                : reshape(x, {batch, h * w * x.dim(3)});
  Tensor features = b.proj.forward(pooled);
  return single ? reshape(features, {b.feature_dim()}) : features;
}

}  // namespace gazefusion::nn
