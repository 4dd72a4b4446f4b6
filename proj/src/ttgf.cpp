#include "gazefusion/ttgf.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

#include "gazefusion/ops.hpp"

namespace gazefusion {

namespace {

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

// Promotes a [d] feature to [1×d].
Tensor as_batch(const Tensor& f) { return f.rank() == 1 ? reshape(f, {1, f.dim(0)}) : f; }

}  // namespace

Tensor stack_images(std::span<const Image* const> images) {
  if (images.empty()) throw DimensionError("stack_images: no images");
  const Shape one = images.front()->shape();
  std::vector<double> data;
  data.reserve(images.size() * shape_numel(one));
  for (const Image* im : images) {
    if (im->shape() != one) {
      throw DimensionError("stack_images: mixed sizes " + shape_str(one) + " and " + shape_str(im->shape()));
    }
    data.insert(data.end(), im->pixels.begin(), im->pixels.end());
  }
  return Tensor::from_data({images.size(), one[0], one[1], one[2]}, std::move(data));
}

Tensor image_tensor(const Image& image) { return Tensor::from_data(image.shape(), image.pixels); }

std::string topology_name(FusionTopology t) {
  switch (t) {
    case FusionTopology::EhLr: return "eh_lr";
    case FusionTopology::LrEh: return "lr_eh";
    case FusionTopology::Par: return "par";
    case FusionTopology::TwoEyes: return "two_eyes";
  }
  return "?";
}

FusionTopology parse_topology(std::string_view name) {
  if (name == "eh_lr") return FusionTopology::EhLr;
  if (name == "lr_eh") return FusionTopology::LrEh;
  if (name == "par") return FusionTopology::Par;
  if (name == "two_eyes") return FusionTopology::TwoEyes;
  throw ConfigError("unknown topology '" + std::string(name) + "' (expected eh_lr, lr_eh, par or two_eyes)");
}

ModelConfig ModelConfig::toy() { return {}; }

ModelConfig ModelConfig::full() {
  ModelConfig c;
  c.face_size = 224;
  c.eye_size = 128;
  c.image_channels = 3;
  c.feature_dim = 512;
  c.proj_dim = 128;
  c.num_heads = 8;
  c.num_blocks = 8;
  c.mlp_hidden = 2048;
  c.gaze_hidden = 128;
  c.gam_hidden = 128;
  c.pooling = nn::Pooling::Average;
  return c;
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.face_size = 8;
  c.eye_size = 8;
  c.conv_channels = {2, 4, 4};
  c.feature_dim = 8;
  c.proj_dim = 4;
  c.num_heads = 2;
  c.num_blocks = 2;
  c.mlp_hidden = 16;
  c.gaze_hidden = 4;
  c.gam_hidden = 4;
  return c;
}

std::size_t ModelConfig::fused_dim() const {
  return (topology == FusionTopology::Par ? 3 : 2) * proj_dim;
}

void ModelConfig::validate() const {
  auto positive = [](std::size_t v, const char* what) {
    if (v == 0) throw ConfigError(std::string(what) + " must be positive");
  };
  positive(face_size, "face_size");
  positive(eye_size, "eye_size");
  positive(image_channels, "image_channels");
  positive(feature_dim, "feature_dim");
  positive(proj_dim, "proj_dim");
  positive(num_heads, "num_heads");
  positive(num_blocks, "num_blocks");
  positive(mlp_hidden, "mlp_hidden");
  positive(gaze_hidden, "gaze_hidden");
  positive(gam_hidden, "gam_hidden");
  if (conv_channels.empty()) throw ConfigError("conv_channels must list at least one stage");
  for (std::size_t c : conv_channels) positive(c, "conv_channels entries");
  for (std::size_t width : {feature_dim, 2 * proj_dim}) {
    if (width % num_heads != 0) {
      throw ConfigError("token width " + std::to_string(width) + " is not divisible by num_heads " +
                        std::to_string(num_heads));
    }
  }
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "topology=" << topology_name(topology) << '\n'
     << "face_size=" << face_size << '\n'
     << "eye_size=" << eye_size << '\n'
     << "image_channels=" << image_channels << '\n'
     << "conv_channels=" << join_sizes(conv_channels) << '\n'
     << "feature_dim=" << feature_dim << '\n'
     << "proj_dim=" << proj_dim << '\n'
     << "num_heads=" << num_heads << '\n'
     << "num_blocks=" << num_blocks << '\n'
     << "mlp_hidden=" << mlp_hidden << '\n'
     << "gaze_hidden=" << gaze_hidden << '\n'
     << "gam_hidden=" << gam_hidden << '\n'
     << "pooling=" << nn::pooling_name(pooling) << '\n';
  return os.str();
}

bool ModelConfig::apply(const kv::Entry& e, const std::string& source) {
  if (e.key == "topology") {
    try {
      topology = parse_topology(e.value);
    } catch (const ConfigError& err) {
      kv::fail(e, source, err.what());
    }
  } else if (e.key == "face_size") {
    face_size = kv::to_size(e, source);
  } else if (e.key == "eye_size") {
    eye_size = kv::to_size(e, source);
  } else if (e.key == "image_channels") {
    image_channels = kv::to_size(e, source);
  } else if (e.key == "conv_channels") {
    conv_channels = kv::to_sizes(e, source);
  } else if (e.key == "feature_dim") {
    feature_dim = kv::to_size(e, source);
  } else if (e.key == "proj_dim") {
    proj_dim = kv::to_size(e, source);
  } else if (e.key == "num_heads") {
    num_heads = kv::to_size(e, source);
  } else if (e.key == "num_blocks") {
    num_blocks = kv::to_size(e, source);
  } else if (e.key == "mlp_hidden") {
    mlp_hidden = kv::to_size(e, source);
  } else if (e.key == "gaze_hidden") {
    gaze_hidden = kv::to_size(e, source);
  } else if (e.key == "gam_hidden") {
    gam_hidden = kv::to_size(e, source);
  } else if (e.key == "pooling") {
    try {
      pooling = nn::parse_pooling(e.value);
    } catch (const ConfigError& err) {
      kv::fail(e, source, err.what());
    }
  } else {
    return false;
  }
  return true;
}

ModelConfig ModelConfig::from_text(std::string_view text, const std::string& source) {
  const kv::Document doc = kv::parse(text, source);
  ModelConfig cfg;
  for (const auto& e : doc.entries) {
    if (!cfg.apply(e, source)) kv::fail(e, source, "unknown model key");
  }
  cfg.validate();
  return cfg;
}

FusionModule FusionModule::create(std::size_t num_tokens, std::size_t token_dim, std::size_t proj_dim,
                                  const ModelConfig& cfg, nn::Rng& rng) {
  FusionModule m;
  m.num_tokens = num_tokens;
  m.encoder = nn::TransformerEncoder::create(cfg.num_blocks, token_dim, cfg.num_heads, cfg.mlp_hidden, rng);
  m.proj = nn::LinearLayer::create(token_dim, proj_dim, rng);
  return m;
}

std::size_t FusionModule::parameter_count(std::size_t token_dim, std::size_t proj_dim, const ModelConfig& cfg) {
  return nn::TransformerEncoder::parameter_count(cfg.num_blocks, token_dim, cfg.mlp_hidden) +
         nn::LinearLayer::parameter_count(token_dim, proj_dim);
}

void FusionModule::collect(NamedTensors& out, const std::string& prefix) const {
  encoder.collect(out, prefix + ".encoder");
  proj.collect(out, prefix + ".proj");
}

Tensor fusion_forward(const FusionModule& m, std::span<const Tensor> features) {
  if (features.size() != m.num_tokens) {
    throw DimensionError("fusion module expects " + std::to_string(m.num_tokens) + " features, got " +
                         std::to_string(features.size()));
  }
  const std::size_t d = m.token_dim();
  const bool unbatched = features.front().rank() == 1;
  Tensor tokens;
  std::size_t batch = 0;
  for (const Tensor& f : features) {
    Tensor row = as_batch(f);
    if (row.rank() != 2 || row.dim(1) != d || (batch && row.dim(0) != batch) || (f.rank() == 1) != unbatched) {
      throw DimensionError("fusion module over width " + std::to_string(d) + " cannot take feature " +
                           shape_str(f.shape()));
    }
    batch = row.dim(0);
    Tensor token = reshape(row, {batch, 1, d});
    tokens = tokens.defined() ? concat(tokens, token, 1) : token;
  }
  Tensor encoded = nn::encoder_forward(m.encoder, tokens);  // [B×n×d]
  Tensor projected = m.proj.forward(encoded);                // [B×n×p]
  Tensor fused = reshape(projected, {batch, m.output_dim()});
  return unbatched ? reshape(fused, {m.output_dim()}) : fused;
}

Tensor tgf_forward(const FusionModule& m, const Tensor& f_a, const Tensor& f_b) {
  const Tensor features[] = {f_a, f_b};
  return fusion_forward(m, features);
}

GazeModel GazeModel::create(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  nn::Rng rng(seed);
  GazeModel m;
  m.cfg_ = cfg;
  const std::size_t p = cfg.proj_dim;
  if (cfg.topology != FusionTopology::TwoEyes) {
    m.face_backbone_ = nn::ConvBackbone::create(cfg.face_size, cfg.face_size, cfg.image_channels, cfg.conv_channels,
                                                cfg.feature_dim, cfg.pooling, rng);
  }
  m.left_backbone_ = nn::ConvBackbone::create(cfg.eye_size, cfg.eye_size, cfg.image_channels, cfg.conv_channels,
                                              cfg.feature_dim, cfg.pooling, rng);
  m.right_backbone_ = nn::ConvBackbone::create(cfg.eye_size, cfg.eye_size, cfg.image_channels, cfg.conv_channels,
                                               cfg.feature_dim, cfg.pooling, rng);
  switch (cfg.topology) {
    case FusionTopology::EhLr:
      m.fusions_.emplace_back("tgf_lh", FusionModule::create(2, cfg.feature_dim, p, cfg, rng));
      m.fusions_.emplace_back("tgf_rh", FusionModule::create(2, cfg.feature_dim, p, cfg, rng));
      m.fusions_.emplace_back("tgf_lr", FusionModule::create(2, 2 * p, p, cfg, rng));
      break;
    case FusionTopology::LrEh:
      m.fusions_.emplace_back("tgf_lr", FusionModule::create(2, cfg.feature_dim, p, cfg, rng));
      m.head_proj_ = nn::LinearLayer::create(cfg.feature_dim, 2 * p, rng);
      m.fusions_.emplace_back("tgf_eh", FusionModule::create(2, 2 * p, p, cfg, rng));
      break;
    case FusionTopology::Par:
      m.fusions_.emplace_back("tgf_par", FusionModule::create(3, cfg.feature_dim, p, cfg, rng));
      break;
    case FusionTopology::TwoEyes:
      m.fusions_.emplace_back("tgf_lr", FusionModule::create(2, cfg.feature_dim, p, cfg, rng));
      break;
  }
  m.gaze_fc1_ = nn::LinearLayer::create(cfg.fused_dim(), cfg.gaze_hidden, rng);
  m.gaze_fc2_ = nn::LinearLayer::create(cfg.gaze_hidden, 2, rng);
  return m;
}

FusionModule& GazeModel::fusion(const std::string& name) {
  for (auto& [n, f] : fusions_) {
    if (n == name) return f;
  }
  throw std::out_of_range("model has no fusion module '" + name + "'");
}

const FusionModule& GazeModel::fusion(const std::string& name) const {
  return const_cast<GazeModel*>(this)->fusion(name);
}

std::vector<std::string> GazeModel::fusion_names() const {
  std::vector<std::string> names;
  for (const auto& [n, f] : fusions_) names.push_back(n);
  return names;
}

ForwardResult GazeModel::forward(const Tensor& face, const Tensor& left_eye, const Tensor& right_eye) const {
  ForwardResult r;
  r.left_features = nn::backbone_forward(left_backbone_, left_eye);
  r.right_features = nn::backbone_forward(right_backbone_, right_eye);
  if (face_backbone_) r.face_features = nn::backbone_forward(*face_backbone_, face);
  switch (cfg_.topology) {
    case FusionTopology::EhLr:
      r.left_head = tgf_forward(fusion("tgf_lh"), r.left_features, r.face_features);
      r.right_head = tgf_forward(fusion("tgf_rh"), r.right_features, r.face_features);
      r.fused = tgf_forward(fusion("tgf_lr"), r.left_head, r.right_head);
      break;
    case FusionTopology::LrEh: {
      Tensor eyes = tgf_forward(fusion("tgf_lr"), r.left_features, r.right_features);
      r.fused = tgf_forward(fusion("tgf_eh"), eyes, head_proj_->forward(r.face_features));
      break;
    }
    case FusionTopology::Par: {
      const Tensor tokens[] = {r.left_features, r.right_features, r.face_features};
      r.fused = fusion_forward(fusion("tgf_par"), tokens);
      break;
    }
    case FusionTopology::TwoEyes:
      r.fused = tgf_forward(fusion("tgf_lr"), r.left_features, r.right_features);
      break;
  }
  r.gaze = gaze_fc2_.forward(gelu(gaze_fc1_.forward(r.fused)));
  return r;
}

Prediction GazeModel::predict(const Image& face, const Image& left_eye, const Image& right_eye) const {
  const Image* f[] = {&face};
  const Image* l[] = {&left_eye};
  const Image* rr[] = {&right_eye};
  ForwardResult r = forward(stack_images(f), stack_images(l), stack_images(rr));
  Prediction p;
  p.gaze = {r.gaze.at(0), r.gaze.at(1)};
  p.fused.assign(r.fused.data().begin(), r.fused.data().end());
  return p;
}

NamedTensors GazeModel::parameters() const {
  NamedTensors out;
  if (face_backbone_) face_backbone_->collect(out, "face_backbone");
  left_backbone_.collect(out, "left_backbone");
  right_backbone_.collect(out, "right_backbone");
  for (const auto& [name, f] : fusions_) f.collect(out, name);
  if (head_proj_) head_proj_->collect(out, "head_proj");
  gaze_fc1_.collect(out, "gaze_mlp.fc1");
  gaze_fc2_.collect(out, "gaze_mlp.fc2");
  return out;
}

std::size_t expected_parameter_count(const ModelConfig& cfg) {
  cfg.validate();
  const std::size_t p = cfg.proj_dim;
  const std::size_t face = nn::ConvBackbone::parameter_count(cfg.face_size, cfg.face_size, cfg.image_channels,
                                                             cfg.conv_channels, cfg.feature_dim, cfg.pooling);
  const std::size_t eye = nn::ConvBackbone::parameter_count(cfg.eye_size, cfg.eye_size, cfg.image_channels,
                                                            cfg.conv_channels, cfg.feature_dim, cfg.pooling);
  const std::size_t first = FusionModule::parameter_count(cfg.feature_dim, p, cfg);
  const std::size_t second = FusionModule::parameter_count(2 * p, p, cfg);
  std::size_t total = 0;
  switch (cfg.topology) {
    case FusionTopology::EhLr: total = face + 2 * eye + 2 * first + second; break;
    case FusionTopology::LrEh:
      total = face + 2 * eye + first + second + nn::LinearLayer::parameter_count(cfg.feature_dim, 2 * p);
      break;
    case FusionTopology::Par: total = face + 2 * eye + first; break;
    case FusionTopology::TwoEyes: total = 2 * eye + first; break;
  }
  return total + nn::LinearLayer::parameter_count(cfg.fused_dim(), cfg.gaze_hidden) +
         nn::LinearLayer::parameter_count(cfg.gaze_hidden, 2);
}

}  // namespace gazefusion
