#include "gazefusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "gazefusion/gam.hpp"
#include "gazefusion/nn.hpp"
#include "gazefusion/ops.hpp"
#include "gazefusion/tape.hpp"
#include "gazefusion/train.hpp"

namespace gazefusion::gradcheck {

namespace {

using Rng = std::mt19937_64;

std::vector<double> random_values(std::size_t n, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

Tensor random_param(Shape shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  return Tensor::parameter(std::move(shape), random_values(n, rng));
}

// Values with |x| in [0.2, 1], away from the kink of |x|.
Tensor signed_away_from_zero(Shape shape, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::vector<double> v = random_values(n, rng, 0.2, 1.0);
  std::bernoulli_distribution sign(0.5);
  for (double& x : v) {
    if (sign(rng)) x = -x;
  }
  return Tensor::parameter(std::move(shape), std::move(v));
}

// Random linear functional of `out`, so every output entry carries gradient.
Tensor project(const Tensor& out, std::uint64_t seed) {
  Rng rng(seed);
  if (out.rank() == 0) return scale(out, 0.5 + std::uniform_real_distribution<double>(0.0, 1.0)(rng));
  Tensor w = Tensor::from_data(out.shape(), random_values(out.numel(), rng));
  return sum(mul(out, w));
}

std::vector<std::size_t> pick_entries(std::size_t total, std::size_t max_entries, Rng& rng) {
  std::vector<std::size_t> idx(total);
  std::iota(idx.begin(), idx.end(), 0);
  if (max_entries == 0 || max_entries >= total) return idx;
  std::shuffle(idx.begin(), idx.end(), rng);
  idx.resize(max_entries);
  std::sort(idx.begin(), idx.end());
  return idx;
}

}  // namespace

void Report::merge(const Report& other, const std::string& prefix) {
  for (TensorReport t : other.tensors) {
    t.name = prefix + t.name;
    tensors.push_back(std::move(t));
  }
  max_rel_error = std::max(max_rel_error, other.max_rel_error);
  passed = passed && other.passed;
}

Report check(const std::function<Tensor()>& loss_fn, const NamedTensors& inputs, const Options& options) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = loss_fn();
    if (loss.rank() != 0) throw DimensionError("gradient check needs a scalar loss, got " + shape_str(loss.shape()));
    backward(loss);
  }
  for (const auto& [name, t] : inputs) {
    Tensor handle = t;
    if (handle.has_grad()) {
      analytic.emplace_back(handle.grad().begin(), handle.grad().end());
    } else {
      analytic.emplace_back(handle.numel(), 0.0);
    }
    handle.clear_grad();
  }

  Report report;
  Rng rng(options.seed);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    Tensor t = inputs[i].second;
    TensorReport tr;
    tr.name = inputs[i].first;
    tr.total = t.numel();
    for (std::size_t k : pick_entries(t.numel(), options.max_entries, rng)) {
      const double original = t.data()[k];
      t.mutable_data()[k] = original + options.step;
      const double plus = loss_fn().item();
      t.mutable_data()[k] = original - options.step;
      const double minus = loss_fn().item();
      t.mutable_data()[k] = original;
      const double numeric = (plus - minus) / (2.0 * options.step);
      const double a = analytic[i][k];
      const double abs_err = std::abs(a - numeric);
      const double rel = abs_err / std::max({std::abs(a), std::abs(numeric), options.floor});
      tr.max_abs_error = std::max(tr.max_abs_error, abs_err);
      tr.max_rel_error = std::max(tr.max_rel_error, std::isfinite(rel) ? rel : INFINITY);
      ++tr.checked;
    }
    tr.passed = tr.max_rel_error < options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, tr.max_rel_error);
    report.passed = report.passed && tr.passed;
    report.tensors.push_back(std::move(tr));
  }
  return report;
}

Report check_ops(const Options& options) {
  Report all;
  Rng rng(options.seed ^ 0x9e3779b97f4a7c15ULL);
  std::uint64_t salt = 1;
  auto run = [&](const std::string& op, NamedTensors inputs, std::function<Tensor()> out_fn) {
    const std::uint64_t proj_seed = options.seed + salt++;
    Report r = check([&] { return project(out_fn(), proj_seed); }, inputs, options);
    all.merge(r, op + ".");
  };

  {
    Tensor a = random_param({2, 3, 4}, rng), b = random_param({4, 5}, rng);
    run("matmul", {{"a", a}, {"b", b}}, [=] { return matmul(a, b); });
  }
  {
    Tensor a = random_param({2, 3, 4}, rng), b = random_param({2, 4, 2}, rng);
    run("bmm", {{"a", a}, {"b", b}}, [=] { return bmm(a, b); });
  }
  {
    Tensor a = random_param({3, 4}, rng), b = random_param({3, 4}, rng);
    run("add", {{"a", a}, {"b", b}}, [=] { return add(a, b); });
    run("sub", {{"a", a}, {"b", b}}, [=] { return sub(a, b); });
    run("mul", {{"a", a}, {"b", b}}, [=] { return mul(a, b); });
    run("scale", {{"x", a}}, [=] { return scale(a, -0.7); });
  }
  {
    Tensor x = random_param({2, 3, 4}, rng), bias = random_param({4}, rng);
    run("add_bias", {{"x", x}, {"bias", bias}}, [=] { return add_bias(x, bias); });
  }
  {
    Tensor x = signed_away_from_zero({3, 4}, rng);
    run("abs", {{"x", x}}, [=] { return abs(x); });
  }
  {
    Tensor x = random_param({3, 5}, rng);
    run("softmax_rows", {{"x", x}}, [=] { return softmax_rows(x); });
  }
  {
    Tensor x = random_param({2, 3, 6}, rng), g = random_param({6}, rng), b = random_param({6}, rng);
    run("layer_norm", {{"x", x}, {"gamma", g}, {"beta", b}}, [=] { return layer_norm(x, g, b, 1e-5); });
  }
  {
    Tensor x = Tensor::parameter({4, 5}, random_values(20, rng, -3.0, 3.0));
    run("gelu", {{"x", x}}, [=] { return gelu(x); });
  }
  {
    Tensor a = random_param({2, 3}, rng), b = random_param({2, 4}, rng), c = random_param({1, 3}, rng);
    run("concat_axis1", {{"a", a}, {"b", b}}, [=] { return concat(a, b, 1); });
    run("concat_axis0", {{"a", a}, {"c", c}}, [=] { return concat(a, c, 0); });
  }
  {
    Tensor x = random_param({2, 3, 4}, rng);
    run("reshape", {{"x", x}}, [=] { return reshape(x, {6, 4}); });
    run("permute", {{"x", x}}, [=] {
      const std::size_t order[] = {2, 0, 1};
      return permute(x, order);
    });
    run("sum", {{"x", x}}, [=] { return sum(x); });
    run("mean", {{"x", x}}, [=] { return mean(x); });
    run("mean_axis", {{"x", x}}, [=] { return mean_axis(x, 1); });
  }
  {
    Tensor x = random_param({2, 5, 5, 2}, rng);
    run("im2col", {{"x", x}}, [=] { return im2col(x, 3, 2, 1); });
  }
  {
    Tensor x = random_param({4, 3}, rng);
    run("gather_rows", {{"x", x}}, [=] {
      const std::size_t rows[] = {2, 0, 2};
      return gather_rows(x, rows);
    });
  }
  {
    Tensor base = random_param({5, 2}, rng), p1 = random_param({2, 2}, rng), p2 = random_param({1, 2}, rng);
    run("add_scattered_rows", {{"base", base}, {"part0", p1}, {"part1", p2}}, [=] {
      const Tensor parts[] = {p1, p2};
      const std::vector<std::size_t> groups[] = {{1, 3}, {4}};
      return add_scattered_rows(base, parts, groups);
    });
  }

  nn::Rng nrng(options.seed + 17);
  {
    nn::LinearLayer lin = nn::LinearLayer::create(4, 3, nrng);
    lin.bias = random_param({3}, rng);
    Tensor x = random_param({2, 4}, rng);
    NamedTensors in{{"x", x}};
    lin.collect(in, "layer");
    run("linear", in, [=] { return lin.forward(x); });
  }
  {
    nn::MhsaParams p = nn::MhsaParams::create(8, 2, nrng);
    Tensor z = random_param({2, 3, 8}, rng);
    NamedTensors in{{"z", z}};
    p.collect(in, "mhsa");
    run("mhsa", in, [=] { return nn::mhsa_forward(p, z); });
  }
  {
    nn::TransformerEncoder e = nn::TransformerEncoder::create(2, 8, 2, 12, nrng);
    for (auto& b : e.blocks) {
      b.ln1.beta = random_param({8}, rng);
      b.ln2.gamma = random_param({8}, rng);
    }
    Tensor z = random_param({2, 2, 8}, rng);
    NamedTensors in{{"z", z}};
    e.collect(in, "encoder");
    run("transformer_encoder", in, [=] { return nn::encoder_forward(e, z); });
  }
  for (nn::Pooling pool : {nn::Pooling::Average, nn::Pooling::Flatten}) {
    nn::ConvBackbone b = nn::ConvBackbone::create(6, 6, 2, {3, 4}, 5, pool, nrng);
    Tensor img = random_param({2, 6, 6, 2}, rng);
    NamedTensors in{{"images", img}};
    b.collect(in, "backbone");
    run("backbone_" + nn::pooling_name(pool), in, [=] { return nn::backbone_forward(b, img); });
  }
  {
    ModelConfig cfg = ModelConfig::tiny();
    FusionModule m = FusionModule::create(2, 8, 4, cfg, nrng);
    Tensor fa = random_param({3, 8}, rng), fb = random_param({3, 8}, rng);
    NamedTensors in{{"f_a", fa}, {"f_b", fb}};
    m.collect(in, "tgf");
    run("fusion", in, [=] { return tgf_forward(m, fa, fb); });
  }
  {
    GamBank bank = GamBank::create(3, 6, 4, GamMode::Mlp, nrng);
    for (auto& [name, t] : bank.parameters()) {
      Tensor h = t;
      const auto v = random_values(h.numel(), rng);
      std::copy(v.begin(), v.end(), h.mutable_data().begin());
    }
    Tensor gaze = random_param({4, 2}, rng), fused = random_param({4, 6}, rng);
    NamedTensors in{{"gaze", gaze}, {"fused", fused}};
    NamedTensors heads = bank.parameters();
    in.insert(in.end(), heads.begin(), heads.end());
    run("gam_correct", in, [=] {
      const std::size_t ids[] = {0, 2, 1, 2};
      return bank.correct(gaze, fused, ids);
    });
  }
  {
    Tensor pred = random_param({3, 2}, rng);
    // Labels offset so no residual sits near the kink at zero.
    std::vector<double> lv(pred.data().begin(), pred.data().end());
    std::bernoulli_distribution sign(0.5);
    for (double& v : lv) v += sign(rng) ? 0.3 : -0.3;
    Tensor label = Tensor::from_data({3, 2}, lv);
    run("l1_loss", {{"pred", pred}}, [=] { return train::l1_loss(pred, label); });
  }
  return all;
}

Report check_model(const ModelConfig& cfg, std::size_t num_datasets, const Options& options, std::uint64_t seed) {
  GazeModel model = GazeModel::create(cfg, seed);
  nn::Rng nrng(seed + 1);
  GamBank bank = GamBank::create(num_datasets, cfg.fused_dim(), cfg.gam_hidden, GamMode::Mlp, nrng);
  Rng rng(seed + 2);
  // Move off the initialisation point: zero biases and unit layer-norm gains
  // leave freshly built small models with near-constant features, where the
  // curvature makes central differences inaccurate rather than the gradients wrong.
  auto fill = [&](const Tensor& t, double lo, double hi) {
    Tensor h = t;
    const auto v = random_values(h.numel(), rng, lo, hi);
    std::copy(v.begin(), v.end(), h.mutable_data().begin());
  };
  auto ends_with = [](const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& [name, t] : model.parameters()) {
    if (ends_with(name, ".gamma")) {
      fill(t, 0.5, 1.5);
    } else if (ends_with(name, ".bias") || ends_with(name, ".beta")) {
      fill(t, -0.5, 0.5);
    }
  }
  for (const auto& [name, t] : bank.parameters()) fill(t, -0.5, 0.5);
  const std::size_t batch = std::max<std::size_t>(num_datasets, 2);
  auto images = [&](std::size_t size) {
    return Tensor::from_data({batch, size, size, cfg.image_channels},
                             random_values(batch * size * size * cfg.image_channels, rng, 0.0, 1.0));
  };
  const Tensor face = images(cfg.face_size), left = images(cfg.eye_size), right = images(cfg.eye_size);
  std::vector<std::size_t> ids(batch);
  for (std::size_t i = 0; i < batch; ++i) ids[i] = i % num_datasets;
  const std::uint64_t proj_seed = seed + 3;

  NamedTensors params = model.parameters();
  NamedTensors heads = bank.parameters();
  params.insert(params.end(), heads.begin(), heads.end());
  return check(
      [&] {
        ForwardResult r = model.forward(face, left, right);
        return project(bank.correct(r.gaze, r.fused, ids), proj_seed);
      },
      params, options);
}

std::string format_report(const Report& report) {
  std::size_t width = 6;
  for (const auto& t : report.tensors) width = std::max(width, t.name.size());
  std::string out;
  char line[512];
  std::snprintf(line, sizeof line, "%-*s %15s %12s %12s %s\n", static_cast<int>(width), "tensor", "checked/total",
                "max_rel", "max_abs", "status");
  out += line;
  for (const auto& t : report.tensors) {
    const std::string counts = std::to_string(t.checked) + "/" + std::to_string(t.total);
    std::snprintf(line, sizeof line, "%-*s %15s %12.3e %12.3e %s\n", static_cast<int>(width), t.name.c_str(),
                  counts.c_str(), t.max_rel_error, t.max_abs_error, t.passed ? "PASS" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof line, "overall max relative error %.3e: %s\n", report.max_rel_error,
                report.passed ? "PASS" : "FAIL");
  out += line;
  return out;
}

}  // namespace gazefusion::gradcheck
