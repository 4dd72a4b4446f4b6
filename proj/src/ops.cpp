#include "gazefusion/ops.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstring>
#include <functional>
#include <numbers>
#include <string>

#include "gazefusion/tape.hpp"

namespace gazefusion {

namespace {

thread_local std::string g_fault_op;
thread_local double g_fault_factor = 1.0;

using Rule = std::function<void(const TensorStorage& out)>;

#ifndef NDEBUG
bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
#endif

// Wraps computed values into a tensor and, when tracking, records a tape node.
Tensor finish(const char* op, Shape shape, std::vector<double> data, std::vector<const Tensor*> inputs,
              Rule rule) {
#ifndef NDEBUG
  bool finite_inputs = true;
  for (const Tensor* t : inputs) finite_inputs = finite_inputs && all_finite(t->data());
  assert(!finite_inputs || all_finite(data));
#endif
  Tensor out = Tensor::from_data(std::move(shape), std::move(data));
  Tape* tape = Tape::active();
  bool track = tape != nullptr;
  if (track) {
    track = std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t->requires_grad(); });
  }
  if (!track) return out;

  out.set_requires_grad(true);
  Tape::Node node;
  node.op = op;
  for (const Tensor* t : inputs) node.inputs.push_back(t->storage());
  node.output = out.storage();
  TensorStorage* out_raw = out.impl();
  double factor = (!g_fault_op.empty() && g_fault_op == op) ? g_fault_factor : 1.0;
  node.backward = [rule = std::move(rule), out_raw, factor]() {
    if (factor != 1.0) {
      for (double& g : out_raw->grad) g *= factor;
    }
    rule(*out_raw);
  };
  tape->record(std::move(node));
  return out;
}

// Gradient sink for an input, or nullptr when it does not need one.
double* sink(TensorStorage* s) { return s->requires_grad ? s->grad_buffer() : nullptr; }

// C[m×n] += A[m×k]·B[k×n]
void gemm_nn(const double* a, const double* b, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = b + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m×k] += G[m×n]·B[k×n]ᵀ
void gemm_nt(const double* g, const double* b, double* c, std::size_t m, std::size_t n, std::size_t k) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* grow = g + i * n;
    double* crow = c + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double* brow = b + p * n;
      double acc = 0.0;
      for (std::size_t j = 0; j < n; ++j) acc += grow[j] * brow[j];
      crow[p] += acc;
    }
  }
}

// C[k×n] += A[m×k]ᵀ·G[m×n]
void gemm_tn(const double* a, const double* g, double* c, std::size_t m, std::size_t k, std::size_t n) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    const double* grow = g + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      double* crow = c + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * grow[j];
    }
  }
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

std::size_t last_dim(const char* op, const Tensor& x) {
  if (x.rank() == 0) throw DimensionError(std::string(op) + ": expected rank >= 1, got a scalar");
  return x.shape().back();
}

}  // namespace

namespace testing {
void set_backward_fault(const char* op_name, double factor) {
  g_fault_op = op_name ? op_name : "";
  g_fault_factor = factor;
}
}  // namespace testing

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() != 2 || a.shape().back() != b.dim(0)) {
    throw DimensionError("matmul: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t k = b.dim(0), n = b.dim(1), m = a.numel() / k;
  std::vector<double> out(m * n, 0.0);
  gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Shape shape = a.shape();
  shape.back() = n;
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("matmul", std::move(shape), std::move(out), {&a, &b}, [as, bs, m, k, n](const TensorStorage& o) {
    if (double* ga = sink(as)) gemm_nt(o.grad.data(), bs->data.data(), ga, m, n, k);
    if (double* gb = sink(bs)) gemm_tn(as->data.data(), o.grad.data(), gb, m, k, n);
  });
}

Tensor bmm(const Tensor& a, const Tensor& b) {
  if (a.rank() != 3 || b.rank() != 3 || a.dim(0) != b.dim(0) || a.dim(2) != b.dim(1)) {
    throw DimensionError("bmm: cannot multiply " + shape_str(a.shape()) + " by " + shape_str(b.shape()));
  }
  const std::size_t batch = a.dim(0), m = a.dim(1), k = a.dim(2), n = b.dim(2);
  std::vector<double> out(batch * m * n, 0.0);
  for (std::size_t i = 0; i < batch; ++i) {
    gemm_nn(a.data().data() + i * m * k, b.data().data() + i * k * n, out.data() + i * m * n, m, k, n);
  }
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("bmm", {batch, m, n}, std::move(out), {&a, &b}, [as, bs, batch, m, k, n](const TensorStorage& o) {
    double* ga = sink(as);
    double* gb = sink(bs);
    for (std::size_t i = 0; i < batch; ++i) {
      const double* g = o.grad.data() + i * m * n;
      if (ga) gemm_nt(g, bs->data.data() + i * k * n, ga + i * m * k, m, n, k);
      if (gb) gemm_tn(as->data.data() + i * m * k, g, gb + i * k * n, m, k, n);
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] + b.data()[i];
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("add", a.shape(), std::move(out), {&a, &b}, [as, bs](const TensorStorage& o) {
    for (TensorStorage* s : {as, bs}) {
      if (double* g = sink(s)) {
        for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
      }
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] - b.data()[i];
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("sub", a.shape(), std::move(out), {&a, &b}, [as, bs](const TensorStorage& o) {
    if (double* g = sink(as)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = sink(bs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] -= o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("mul", a.shape(), std::move(out), {&a, &b}, [as, bs](const TensorStorage& o) {
    if (double* g = sink(as)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * bs->data[i];
    }
    if (double* g = sink(bs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * as->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * factor;
  TensorStorage* xs = x.impl();
  return finish("scale", x.shape(), std::move(out), {&x}, [xs, factor](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i] * factor;
    }
  });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  const std::size_t d = last_dim("add_bias", x);
  if (bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " does not match " + shape_str(x.shape()));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  const double* b = bias.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += b[i % d];
  TensorStorage* xs = x.impl();
  TensorStorage* bs = bias.impl();
  return finish("add_bias", x.shape(), std::move(out), {&x, &bias}, [xs, bs, d](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
    if (double* g = sink(bs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i % d] += o.grad[i];
    }
  });
}

Tensor abs(const Tensor& x) {
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::fabs(x.data()[i]);
  TensorStorage* xs = x.impl();
  return finish("abs", x.shape(), std::move(out), {&x}, [xs](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) {
        const double v = xs->data[i];
        const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
        g[i] += o.grad[i] * sign;
      }
    }
  });
}

Tensor softmax_rows(const Tensor& x) {
  const std::size_t n = last_dim("softmax_rows", x);
  const std::size_t rows = x.numel() / n;
  std::vector<double> out(x.numel());
  const double* in = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(row, row + n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      y[j] = std::exp(row[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < n; ++j) y[j] /= total;
  }
  TensorStorage* xs = x.impl();
  return finish("softmax_rows", x.shape(), std::move(out), {&x}, [xs, rows, n](const TensorStorage& o) {
    double* g = sink(xs);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = o.data.data() + r * n;
      const double* go = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += go[j] * y[j];
      for (std::size_t j = 0; j < n; ++j) g[r * n + j] += y[j] * (go[j] - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t d = last_dim("layer_norm", x);
  if (gamma.shape() != Shape{d} || beta.shape() != Shape{d}) {
    throw DimensionError("layer_norm: gamma/beta must be [" + std::to_string(d) + "], got " +
                         shape_str(gamma.shape()) + " and " + shape_str(beta.shape()));
  }
  const std::size_t rows = x.numel() / d;
  auto xhat = std::make_shared<std::vector<double>>(x.numel());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  std::vector<double> out(x.numel());
  const double* in = x.data().data();
  const double* gm = gamma.data().data();
  const double* bt = beta.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (row[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * gm[j] + bt[j];
    }
  }
  TensorStorage* xs = x.impl();
  TensorStorage* gs = gamma.impl();
  TensorStorage* bs = beta.impl();
  return finish("layer_norm", x.shape(), std::move(out), {&x, &gamma, &beta},
                [xs, gs, bs, xhat, rstd, rows, d](const TensorStorage& o) {
                  double* gx = sink(xs);
                  double* gg = sink(gs);
                  double* gb = sink(bs);
                  std::vector<double> dh(d);
                  for (std::size_t r = 0; r < rows; ++r) {
                    const double* go = o.grad.data() + r * d;
                    const double* h = xhat->data() + r * d;
                    if (gg || gb) {
                      for (std::size_t j = 0; j < d; ++j) {
                        if (gg) gg[j] += go[j] * h[j];
                        if (gb) gb[j] += go[j];
                      }
                    }
                    if (!gx) continue;
                    double mean_dh = 0.0, mean_dh_h = 0.0;
                    for (std::size_t j = 0; j < d; ++j) {
                      dh[j] = go[j] * gs->data[j];
                      mean_dh += dh[j];
                      mean_dh_h += dh[j] * h[j];
                    }
                    mean_dh /= static_cast<double>(d);
                    mean_dh_h /= static_cast<double>(d);
                    for (std::size_t j = 0; j < d; ++j) {
                      gx[r * d + j] += (*rstd)[r] * (dh[j] - mean_dh - h[j] * mean_dh_h);
                    }
                  }
                });
}

Tensor gelu(const Tensor& x) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::tanh(c * (v + kGeluCubicCoeff * v * v * v)));
  }
  TensorStorage* xs = x.impl();
  return finish("gelu", x.shape(), std::move(out), {&x}, [xs](const TensorStorage& o) {
    double* g = sink(xs);
    if (!g) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      const double v = xs->data[i];
      const double t = std::tanh(c * (v + kGeluCubicCoeff * v * v * v));
      const double dt = (1.0 - t * t) * c * (1.0 + 3.0 * kGeluCubicCoeff * v * v);
      g[i] += o.grad[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
    }
  });
}

Tensor concat(const Tensor& a, const Tensor& b, std::size_t axis) {
  if (axis >= a.rank() || axis >= b.rank()) {
    throw DimensionError("concat: axis " + std::to_string(axis) + " out of range for " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  if (a.rank() != b.rank()) {
    throw DimensionError("concat: rank mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  for (std::size_t i = 0; i < a.rank(); ++i) {
    if (i != axis && a.dim(i) != b.dim(i)) {
      throw DimensionError("concat: shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                           " disagree off axis " + std::to_string(axis));
    }
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= a.dim(i);
  for (std::size_t i = axis + 1; i < a.rank(); ++i) inner *= a.dim(i);
  const std::size_t sa = a.dim(axis) * inner, sb = b.dim(axis) * inner;
  std::vector<double> out(outer * (sa + sb));
  for (std::size_t o = 0; o < outer; ++o) {
    std::copy_n(a.data().data() + o * sa, sa, out.data() + o * (sa + sb));
    std::copy_n(b.data().data() + o * sb, sb, out.data() + o * (sa + sb) + sa);
  }
  Shape shape = a.shape();
  shape[axis] += b.dim(axis);
  TensorStorage* as = a.impl();
  TensorStorage* bs = b.impl();
  return finish("concat", std::move(shape), std::move(out), {&a, &b}, [as, bs, outer, sa, sb](const TensorStorage& o) {
    double* ga = sink(as);
    double* gb = sink(bs);
    for (std::size_t r = 0; r < outer; ++r) {
      const double* src = o.grad.data() + r * (sa + sb);
      if (ga) {
        for (std::size_t j = 0; j < sa; ++j) ga[r * sa + j] += src[j];
      }
      if (gb) {
        for (std::size_t j = 0; j < sb; ++j) gb[r * sb + j] += src[sa + j];
      }
    }
  });
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  TensorStorage* xs = x.impl();
  return finish("reshape", std::move(shape), std::move(out), {&x}, [xs](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
    }
  });
}

Tensor permute(const Tensor& x, std::span<const std::size_t> order) {
  const std::size_t rank = x.rank();
  if (order.size() != rank) {
    throw DimensionError("permute: order has " + std::to_string(order.size()) + " axes for " + shape_str(x.shape()));
  }
  std::vector<bool> seen(rank, false);
  for (std::size_t ax : order) {
    if (ax >= rank || seen[ax]) throw DimensionError("permute: invalid axis order for " + shape_str(x.shape()));
    seen[ax] = true;
  }
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * x.dim(i);
  Shape out_shape(rank);
  std::vector<std::size_t> src_stride(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    out_shape[i] = x.dim(order[i]);
    src_stride[i] = in_strides[order[i]];
  }
  // source flat index for every output position
  auto index = std::make_shared<std::vector<std::size_t>>(x.numel());
  std::vector<std::size_t> counter(rank, 0);
  std::size_t src = 0;
  for (std::size_t flat = 0; flat < x.numel(); ++flat) {
    (*index)[flat] = src;
    for (std::size_t ax = rank; ax-- > 0;) {
      ++counter[ax];
      src += src_stride[ax];
      if (counter[ax] < out_shape[ax]) break;
      src -= src_stride[ax] * counter[ax];
      counter[ax] = 0;
    }
  }
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[(*index)[i]];
  TensorStorage* xs = x.impl();
  return finish("permute", std::move(out_shape), std::move(out), {&x}, [xs, index](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) g[(*index)[i]] += o.grad[i];
    }
  });
}

Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  TensorStorage* xs = x.impl();
  return finish("sum", {}, {total}, {&x}, [xs](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      for (std::size_t i = 0; i < xs->data.size(); ++i) g[i] += o.grad[0];
    }
  });
}

Tensor mean(const Tensor& x) {
  double total = 0.0;
  for (double v : x.data()) total += v;
  const double n = static_cast<double>(x.numel());
  TensorStorage* xs = x.impl();
  return finish("mean", {}, {total / n}, {&x}, [xs, n](const TensorStorage& o) {
    if (double* g = sink(xs)) {
      const double share = o.grad[0] / n;
      for (std::size_t i = 0; i < xs->data.size(); ++i) g[i] += share;
    }
  });
}

Tensor mean_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) {
    throw DimensionError("mean_axis: axis " + std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= x.dim(i);
  for (std::size_t i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
  const std::size_t len = x.dim(axis);
  std::vector<double> out(outer * inner, 0.0);
  const double* in = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) {
    for (std::size_t a = 0; a < len; ++a) {
      const double* src = in + (o * len + a) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  }
  const double inv = 1.0 / static_cast<double>(len);
  for (double& v : out) v *= inv;
  Shape shape = x.shape();
  shape.erase(shape.begin() + static_cast<std::ptrdiff_t>(axis));
  TensorStorage* xs = x.impl();
  return finish("mean_axis", std::move(shape), std::move(out), {&x}, [xs, outer, len, inner, inv](const TensorStorage& o) {
    double* g = sink(xs);
    if (!g) return;
    for (std::size_t b = 0; b < outer; ++b) {
      for (std::size_t a = 0; a < len; ++a) {
        double* dst = g + (b * len + a) * inner;
        const double* src = o.grad.data() + b * inner;
        for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i] * inv;
      }
    }
  });
}

std::size_t conv_output_size(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (stride == 0 || in + 2 * pad < kernel) {
    throw DimensionError("convolution window of " + std::to_string(kernel) + " does not fit input " +
                         std::to_string(in) + " with padding " + std::to_string(pad));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

Tensor im2col(const Tensor& x, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (x.rank() != 4) throw DimensionError("im2col: expected [B×H×W×C], got " + shape_str(x.shape()));
  const std::size_t batch = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  const std::size_t ho = conv_output_size(h, kernel, stride, pad);
  const std::size_t wo = conv_output_size(w, kernel, stride, pad);
  const std::size_t cols = kernel * kernel * c;
  // -1 marks a zero-padding tap
  auto index = std::make_shared<std::vector<std::ptrdiff_t>>(batch * ho * wo * cols);
  std::size_t pos = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        for (std::size_t ky = 0; ky < kernel; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t kx = 0; kx < kernel; ++kx) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            for (std::size_t ch = 0; ch < c; ++ch) {
              (*index)[pos++] = inside ? static_cast<std::ptrdiff_t>(((b * h + iy) * w + ix) * c + ch) : -1;
            }
          }
        }
      }
    }
  }
  std::vector<double> out(index->size());
  const double* in = x.data().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*index)[i] >= 0 ? in[(*index)[i]] : 0.0;
  TensorStorage* xs = x.impl();
  return finish("im2col", {batch * ho * wo, cols}, std::move(out), {&x}, [xs, index](const TensorStorage& o) {
    double* g = sink(xs);
    if (!g) return;
    for (std::size_t i = 0; i < o.grad.size(); ++i) {
      if ((*index)[i] >= 0) g[(*index)[i]] += o.grad[i];
    }
  });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> rows) {
  if (x.rank() == 0 || rows.empty()) throw DimensionError("gather_rows: need a non-scalar input and at least one row");
  const std::size_t n = x.dim(0), width = x.numel() / n;
  std::vector<double> out(rows.size() * width);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= n) {
      throw DimensionError("gather_rows: row " + std::to_string(rows[i]) + " out of range for " + shape_str(x.shape()));
    }
    std::copy_n(x.data().data() + rows[i] * width, width, out.data() + i * width);
  }
  Shape shape = x.shape();
  shape[0] = rows.size();
  auto picked = std::make_shared<std::vector<std::size_t>>(rows.begin(), rows.end());
  TensorStorage* xs = x.impl();
  return finish("gather_rows", std::move(shape), std::move(out), {&x}, [xs, picked, width](const TensorStorage& o) {
    double* g = sink(xs);
    if (!g) return;
    for (std::size_t i = 0; i < picked->size(); ++i) {
      for (std::size_t j = 0; j < width; ++j) g[(*picked)[i] * width + j] += o.grad[i * width + j];
    }
  });
}

Tensor add_scattered_rows(const Tensor& base, std::span<const Tensor> parts,
                          std::span<const std::vector<std::size_t>> row_groups) {
  if (parts.size() != row_groups.size()) throw DimensionError("add_scattered_rows: parts and row groups differ in count");
  if (base.rank() == 0) throw DimensionError("add_scattered_rows: base must have a row axis");
  const std::size_t n = base.dim(0), width = base.numel() / n;
  std::vector<double> out(base.data().begin(), base.data().end());
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& rows = row_groups[p];
    if (parts[p].numel() != rows.size() * width) {
      throw DimensionError("add_scattered_rows: part " + shape_str(parts[p].shape()) + " does not cover " +
                           std::to_string(rows.size()) + " rows of width " + std::to_string(width));
    }
    for (std::size_t i = 0; i < rows.size(); ++i) {
      if (rows[i] >= n) throw DimensionError("add_scattered_rows: row index out of range");
      for (std::size_t j = 0; j < width; ++j) out[rows[i] * width + j] += parts[p].data()[i * width + j];
    }
  }
  std::vector<const Tensor*> inputs{&base};
  std::vector<TensorStorage*> part_storage;
  for (const Tensor& t : parts) {
    inputs.push_back(&t);
    part_storage.push_back(t.impl());
  }
  auto groups = std::make_shared<std::vector<std::vector<std::size_t>>>(row_groups.begin(), row_groups.end());
  TensorStorage* bs = base.impl();
  return finish("add_scattered_rows", base.shape(), std::move(out), std::move(inputs),
                [bs, part_storage, groups, width](const TensorStorage& o) {
                  if (double* g = sink(bs)) {
                    for (std::size_t i = 0; i < o.grad.size(); ++i) g[i] += o.grad[i];
                  }
                  for (std::size_t p = 0; p < part_storage.size(); ++p) {
                    double* g = sink(part_storage[p]);
                    if (!g) continue;
                    const auto& rows = (*groups)[p];
                    for (std::size_t i = 0; i < rows.size(); ++i) {
                      for (std::size_t j = 0; j < width; ++j) g[i * width + j] += o.grad[rows[i] * width + j];
                    }
                  }
                });
}

}  // namespace gazefusion
