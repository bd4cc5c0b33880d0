#include "convrnnt/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <unordered_set>
#include <utility>

#include <cblas.h>

#include "convrnnt/errors.hpp"

namespace convrnnt {

using detail::Node;
using detail::TensorImpl;
using ImplPtr = std::shared_ptr<TensorImpl>;

namespace {

thread_local bool g_grad_enabled = true;

[[noreturn]] void dimension_error(const std::string& op, const std::string& what) {
  throw DimensionError(op + ": " + what);
}

void require_rank(const char* op, const Tensor& x, std::size_t rank) {
  if (x.rank() != rank) {
    dimension_error(op, "expected rank " + std::to_string(rank) + ", got shape " +
                            shape_str(x.shape()));
  }
}

bool needs_graph(std::initializer_list<const Tensor*> inputs) {
  if (!g_grad_enabled) return false;
  for (const Tensor* t : inputs) {
    if (t->defined() && t->requires_grad()) return true;
  }
  return false;
}

// Wraps freshly computed values; attaches a graph node when any input needs
// gradients. `backward` receives the output impl and the captured inputs.
Tensor make_result(Shape shape, std::vector<double> data, const char* op,
                   std::initializer_list<const Tensor*> inputs,
                   std::function<void(const TensorImpl&)> backward) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(data);
  if (needs_graph(inputs)) {
    auto node = std::make_shared<Node>();
    node->op = op;
    for (const Tensor* t : inputs) {
      if (t->defined()) node->inputs.push_back(t->impl());
    }
    node->backward = std::move(backward);
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor::from_impl(std::move(impl));
}

// Gradient sink for an input, or nullptr when it does not take gradients.
double* grad_of(const ImplPtr& p) {
  if (!p || !p->requires_grad) return nullptr;
  return p->grad_buffer().data();
}

struct AxisView {
  std::size_t outer = 1;
  std::size_t len = 1;
  std::size_t inner = 1;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v;
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  v.len = shape[axis];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* op, Fwd fwd, Deriv deriv) {
  auto xd = x.data();
  std::vector<double> out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = fwd(xd[i]);
  ImplPtr xi = x.impl();
  Tensor result = make_result(x.shape(), std::move(out), op, {&x}, nullptr);
  if (result.impl()->node) {
    result.impl()->node->backward = [xi, deriv](const TensorImpl& o) {
      double* gx = grad_of(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < o.data.size(); ++i) {
        gx[i] += o.grad[i] * deriv(xi->data[i], o.data[i]);
      }
    };
  }
  return result;
}

double stable_sigmoid(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    dimension_error("Tensor", "shape " + shape_str(shape) + " holds " +
                                  std::to_string(shape_numel(shape)) + " values, got " +
                                  std::to_string(values.size()));
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
  Tensor t;
  t.impl_ = std::move(impl);
  return t;
}

const Shape& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= impl_->shape.size()) {
    dimension_error("dim", "axis " + std::to_string(axis) + " out of range for " +
                               shape_str(impl_->shape));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_->data.size(); }
std::span<const double> Tensor::data() const { return impl_->data; }
std::span<double> Tensor::mutable_data() { return impl_->data; }

double Tensor::item() const {
  if (numel() != 1) dimension_error("item", "tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool value) {
  impl_->requires_grad = value;
  return *this;
}

bool Tensor::has_grad() const { return !impl_->grad.empty(); }
std::span<const double> Tensor::grad() const { return impl_->grad; }
std::span<double> Tensor::mutable_grad() { return impl_->grad_buffer(); }
void Tensor::zero_grad() { impl_->grad.clear(); }

Tensor Tensor::detach() const { return Tensor(impl_->shape, impl_->data); }
Tensor Tensor::clone() const { return detach(); }

void Tensor::backward() const {
  if (numel() != 1) dimension_error("backward", "loss must be a scalar, got " + shape_str(shape()));
  if (!impl_->requires_grad) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  // Owning pointers: releasing a node below may drop the last other reference
  // to an impl that is still waiting in `order`.
  std::vector<std::shared_ptr<TensorImpl>> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack{{impl_, 0}};
  visited.insert(impl_.get());
  while (!stack.empty()) {
    auto& [node_impl, next] = stack.back();
    const auto* node = node_impl->node.get();
    if (node && next < node->inputs.size()) {
      std::shared_ptr<TensorImpl> child = node->inputs[next++];
      if (child->node && visited.insert(child.get()).second) stack.emplace_back(std::move(child), 0);
      continue;
    }
    order.push_back(std::move(node_impl));
    stack.pop_back();
  }

  impl_->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = it->get();
    if (!t->node) continue;
    if (!t->grad.empty() && t->node->backward) t->node->backward(*t);
    t->node.reset();
  }
}

RunningStats RunningStats::identity(std::size_t channels) {
  RunningStats s;
  s.mean = Tensor(Shape{channels}, 0.0);
  s.var = Tensor(Shape{channels}, 1.0);
  return s;
}

// ---- linear algebra -------------------------------------------------------

namespace {

// C = A·B (+ C when accumulate), row-major, with optional transposes of A and B.
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const double* a,
          const double* b, double* c, bool accumulate) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    if (!accumulate) std::fill(c, c + m * n, 0.0);
    return;
  }
  const auto lda = static_cast<blasint>(trans_a ? m : k);
  const auto ldb = static_cast<blasint>(trans_b ? k : n);
  cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans,
              static_cast<blasint>(m), static_cast<blasint>(n), static_cast<blasint>(k), 1.0, a, lda, b, ldb,
              accumulate ? 1.0 : 0.0, c, static_cast<blasint>(n));
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank("matmul", a, 2);
  require_rank("matmul", b, 2);
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    dimension_error("matmul", "inner dimensions differ: " + shape_str(a.shape()) + " x " +
                                  shape_str(b.shape()));
  }
  std::vector<double> c(m * n, 0.0);
  gemm(false, false, m, n, k, a.data().data(), b.data().data(), c.data(), false);
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({m, n}, std::move(c), "matmul", {&a, &b},
                     [ai, bi, m, k, n](const TensorImpl& o) {
                       const double* g = o.grad.data();
                       // dA = dC·Bᵀ, dB = Aᵀ·dC
                       if (double* ga = grad_of(ai)) gemm(false, true, m, k, n, g, bi->data.data(), ga, true);
                       if (double* gb = grad_of(bi)) gemm(true, false, k, n, m, ai->data.data(), g, gb, true);
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank("linear", x, 2);
  require_rank("linear", weight, 2);
  const std::size_t m = x.dim(0), in = x.dim(1), out = weight.dim(0);
  if (weight.dim(1) != in) {
    dimension_error("linear", "input " + shape_str(x.shape()) + " vs weight " +
                                  shape_str(weight.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && (bias.rank() != 1 || bias.dim(0) != out)) {
    dimension_error("linear", "bias " + shape_str(bias.shape()) + " vs weight " +
                                  shape_str(weight.shape()));
  }
  std::vector<double> y(m * out);
  gemm(false, true, m, out, in, x.data().data(), weight.data().data(), y.data(), false);
  if (has_bias) {
    const double* pb = bias.data().data();
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t o = 0; o < out; ++o) y[i * out + o] += pb[o];
    }
  }
  ImplPtr xi = x.impl(), wi = weight.impl(), bi = has_bias ? bias.impl() : nullptr;
  return make_result({m, out}, std::move(y), "linear", {&x, &weight, &bias},
                     [xi, wi, bi, m, in, out](const TensorImpl& o) {
                       const double* g = o.grad.data();
                       // dx = g·W, dW = gᵀ·x, db = column sums of g
                       if (double* gx = grad_of(xi)) gemm(false, false, m, in, out, g, wi->data.data(), gx, true);
                       if (double* gw = grad_of(wi)) gemm(true, false, out, in, m, g, xi->data.data(), gw, true);
                       if (double* gb = grad_of(bi)) {
                         for (std::size_t i = 0; i < m; ++i) {
                           for (std::size_t q = 0; q < out; ++q) gb[q] += g[i * out + q];
                         }
                       }
                     });
}

Tensor conv1d(const Tensor& input, const Tensor& weight, std::size_t dilation,
              std::size_t groups) {
  require_rank("conv1d", input, 2);
  require_rank("conv1d", weight, 3);
  const std::size_t c_in = input.dim(0), t_in = input.dim(1);
  const std::size_t c_out = weight.dim(0), cin_g = weight.dim(1), k = weight.dim(2);
  if (groups == 0 || dilation == 0) dimension_error("conv1d", "groups and dilation must be positive");
  if (c_in % groups != 0 || c_out % groups != 0 || cin_g != c_in / groups) {
    dimension_error("conv1d", "input " + shape_str(input.shape()) + " incompatible with weight " +
                                  shape_str(weight.shape()) + " at groups=" +
                                  std::to_string(groups));
  }
  const std::size_t span = (k - 1) * dilation + 1;
  if (t_in < span) {
    dimension_error("conv1d", "time length " + std::to_string(t_in) +
                                  " shorter than kernel span " + std::to_string(span));
  }
  const std::size_t t_out = t_in - span + 1;
  const std::size_t cout_g = c_out / groups;
  std::vector<double> y(c_out * t_out, 0.0);
  const double* px = input.data().data();
  const double* pw = weight.data().data();
  for (std::size_t co = 0; co < c_out; ++co) {
    const std::size_t group = co / cout_g;
    double* yrow = y.data() + co * t_out;
    for (std::size_t cl = 0; cl < cin_g; ++cl) {
      const double* xrow = px + (group * cin_g + cl) * t_in;
      for (std::size_t kk = 0; kk < k; ++kk) {
        const double wv = pw[(co * cin_g + cl) * k + kk];
        const double* xs = xrow + kk * dilation;
        for (std::size_t t = 0; t < t_out; ++t) yrow[t] += wv * xs[t];
      }
    }
  }
  ImplPtr xi = input.impl(), wi = weight.impl();
  return make_result(
      {c_out, t_out}, std::move(y), "conv1d", {&input, &weight},
      [xi, wi, c_out, cin_g, cout_g, k, dilation, t_in, t_out](const TensorImpl& o) {
        double* gx = grad_of(xi);
        double* gw = grad_of(wi);
        for (std::size_t co = 0; co < c_out; ++co) {
          const std::size_t group = co / cout_g;
          const double* grow = o.grad.data() + co * t_out;
          for (std::size_t cl = 0; cl < cin_g; ++cl) {
            const std::size_t ci = group * cin_g + cl;
            for (std::size_t kk = 0; kk < k; ++kk) {
              const std::size_t widx = (co * cin_g + cl) * k + kk;
              const std::size_t off = ci * t_in + kk * dilation;
              if (gx) {
                const double wv = wi->data[widx];
                for (std::size_t t = 0; t < t_out; ++t) gx[off + t] += wv * grow[t];
              }
              if (gw) {
                const double* xs = xi->data.data() + off;
                double acc = 0.0;
                for (std::size_t t = 0; t < t_out; ++t) acc += grow[t] * xs[t];
                gw[widx] += acc;
              }
            }
          }
        }
      });
}

Tensor conv2d(const Tensor& input, const Tensor& weight) {
  require_rank("conv2d", input, 3);
  require_rank("conv2d", weight, 4);
  const std::size_t c_in = input.dim(0), t_in = input.dim(1), f_in = input.dim(2);
  const std::size_t c_out = weight.dim(0), kt = weight.dim(2), kf = weight.dim(3);
  if (weight.dim(1) != c_in) {
    dimension_error("conv2d", "input " + shape_str(input.shape()) + " vs weight " +
                                  shape_str(weight.shape()));
  }
  if (t_in < kt || f_in < kf) {
    dimension_error("conv2d", "input " + shape_str(input.shape()) + " smaller than kernel " +
                                  shape_str(weight.shape()));
  }
  const std::size_t t_out = t_in - kt + 1, f_out = f_in - kf + 1;
  std::vector<double> y(c_out * t_out * f_out, 0.0);
  const double* px = input.data().data();
  const double* pw = weight.data().data();
  for (std::size_t co = 0; co < c_out; ++co) {
    double* yplane = y.data() + co * t_out * f_out;
    for (std::size_t ci = 0; ci < c_in; ++ci) {
      const double* xplane = px + ci * t_in * f_in;
      for (std::size_t a = 0; a < kt; ++a) {
        for (std::size_t b = 0; b < kf; ++b) {
          const double wv = pw[((co * c_in + ci) * kt + a) * kf + b];
          for (std::size_t t = 0; t < t_out; ++t) {
            double* yrow = yplane + t * f_out;
            const double* xrow = xplane + (t + a) * f_in + b;
            for (std::size_t f = 0; f < f_out; ++f) yrow[f] += wv * xrow[f];
          }
        }
      }
    }
  }
  ImplPtr xi = input.impl(), wi = weight.impl();
  return make_result(
      {c_out, t_out, f_out}, std::move(y), "conv2d", {&input, &weight},
      [xi, wi, c_in, c_out, kt, kf, t_in, f_in, t_out, f_out](const TensorImpl& o) {
        double* gx = grad_of(xi);
        double* gw = grad_of(wi);
        for (std::size_t co = 0; co < c_out; ++co) {
          const double* gplane = o.grad.data() + co * t_out * f_out;
          for (std::size_t ci = 0; ci < c_in; ++ci) {
            const std::size_t xoff = ci * t_in * f_in;
            for (std::size_t a = 0; a < kt; ++a) {
              for (std::size_t b = 0; b < kf; ++b) {
                const std::size_t widx = ((co * c_in + ci) * kt + a) * kf + b;
                const double wv = wi->data[widx];
                double acc = 0.0;
                for (std::size_t t = 0; t < t_out; ++t) {
                  const double* grow = gplane + t * f_out;
                  const std::size_t xrow = xoff + (t + a) * f_in + b;
                  if (gx) {
                    for (std::size_t f = 0; f < f_out; ++f) gx[xrow + f] += wv * grow[f];
                  }
                  if (gw) {
                    const double* xs = xi->data.data() + xrow;
                    for (std::size_t f = 0; f < f_out; ++f) acc += grow[f] * xs[f];
                  }
                }
                if (gw) gw[widx] += acc;
              }
            }
          }
        }
      });
}

// ---- elementwise ----------------------------------------------------------

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0 || std::isnan(v) ? v : 0.0; },  // NaN propagates
      [](double in, double) { return in > 0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double out) { return out * (1.0 - out); });
}

Tensor tanh(const Tensor& x) {
  return unary(
      x, "tanh", [](double v) { return std::tanh(v); },
      [](double, double out) { return 1.0 - out * out; });
}

Tensor swish(const Tensor& x) {
  return unary(
      x, "swish", [](double v) { return v * stable_sigmoid(v); },
      [](double in, double) {
        const double s = stable_sigmoid(in);
        return s * (1.0 + in * (1.0 - s));
      });
}

Tensor add(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dimension_error("add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(y), "add", {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (double* ga = grad_of(ai)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i];
    }
    if (double* gb = grad_of(bi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    dimension_error("mul", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  std::vector<double> y(a.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(y), "mul", {&a, &b}, [ai, bi](const TensorImpl& o) {
    if (double* ga = grad_of(ai)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) ga[i] += o.grad[i] * bi->data[i];
    }
    if (double* gb = grad_of(bi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i] += o.grad[i] * ai->data[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = x.data()[i] * factor;
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(y), "scale", {&x}, [xi, factor](const TensorImpl& o) {
    if (double* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * factor;
    }
  });
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  if (x.rank() < 1 || bias.rank() != 1 || bias.dim(0) != x.dim(0)) {
    dimension_error("add_channel_bias", shape_str(x.shape()) + " vs bias " + shape_str(bias.shape()));
  }
  const std::size_t channels = x.dim(0), inner = x.numel() / channels;
  std::vector<double> y(x.numel());
  for (std::size_t c = 0; c < channels; ++c) {
    const double bv = bias.data()[c];
    for (std::size_t i = 0; i < inner; ++i) y[c * inner + i] = x.data()[c * inner + i] + bv;
  }
  ImplPtr xi = x.impl(), bi = bias.impl();
  return make_result(x.shape(), std::move(y), "add_channel_bias", {&x, &bias},
                     [xi, bi, channels, inner](const TensorImpl& o) {
                       if (double* gx = grad_of(xi)) {
                         for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
                       }
                       if (double* gb = grad_of(bi)) {
                         for (std::size_t c = 0; c < channels; ++c) {
                           double acc = 0.0;
                           for (std::size_t i = 0; i < inner; ++i) acc += o.grad[c * inner + i];
                           gb[c] += acc;
                         }
                       }
                     });
}

Tensor dropout(const Tensor& x, double p, bool training, CounterRng& rng) {
  if (!(p >= 0.0 && p < 1.0)) {
    throw ConfigError("dropout: probability " + std::to_string(p) + " outside [0, 1)");
  }
  if (!training || p == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.numel());
  std::vector<double> y(x.numel());
  for (std::size_t i = 0; i < y.size(); ++i) {
    mask[i] = rng.uniform() < p ? 0.0 : keep_scale;
    y[i] = x.data()[i] * mask[i];
  }
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(y), "dropout", {&x},
                     [xi, mask = std::move(mask)](const TensorImpl& o) {
                       if (double* gx = grad_of(xi)) {
                         for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i] * mask[i];
                       }
                     });
}

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    dimension_error("reshape", shape_str(x.shape()) + " -> " + shape_str(shape));
  }
  std::vector<double> y(x.data().begin(), x.data().end());
  ImplPtr xi = x.impl();
  return make_result(std::move(shape), std::move(y), "reshape", {&x}, [xi](const TensorImpl& o) {
    if (double* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < o.grad.size(); ++i) gx[i] += o.grad[i];
    }
  });
}

Tensor transpose01(const Tensor& x) {
  if (x.rank() < 2) dimension_error("transpose01", "needs rank >= 2, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1), inner = x.numel() / (a * b);
  Shape out_shape = x.shape();
  std::swap(out_shape[0], out_shape[1]);
  std::vector<double> y(x.numel());
  const double* px = x.data().data();
  for (std::size_t i = 0; i < a; ++i) {
    for (std::size_t j = 0; j < b; ++j) {
      std::copy_n(px + (i * b + j) * inner, inner, y.data() + (j * a + i) * inner);
    }
  }
  ImplPtr xi = x.impl();
  return make_result(std::move(out_shape), std::move(y), "transpose01", {&x},
                     [xi, a, b, inner](const TensorImpl& o) {
                       double* gx = grad_of(xi);
                       if (!gx) return;
                       for (std::size_t i = 0; i < a; ++i) {
                         for (std::size_t j = 0; j < b; ++j) {
                           const double* src = o.grad.data() + (j * a + i) * inner;
                           double* dst = gx + (i * b + j) * inner;
                           for (std::size_t q = 0; q < inner; ++q) dst[q] += src[q];
                         }
                       }
                     });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) dimension_error("concat", "no inputs");
  const Shape& ref = parts[0].shape();
  if (axis >= ref.size()) dimension_error("concat", "axis out of range for " + shape_str(ref));
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == ref.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == ref[i];
    if (!ok) dimension_error("concat", shape_str(ref) + " vs " + shape_str(s));
    total += s[axis];
  }
  Shape out_shape = ref;
  out_shape[axis] = total;
  const AxisView view = axis_view(out_shape, axis);
  std::vector<double> y(shape_numel(out_shape));
  std::vector<std::size_t> offsets;
  std::size_t offset = 0;
  for (const Tensor& p : parts) {
    const std::size_t len = p.dim(axis);
    const double* src = p.data().data();
    for (std::size_t o = 0; o < view.outer; ++o) {
      std::copy_n(src + o * len * view.inner, len * view.inner,
                  y.data() + (o * total + offset) * view.inner);
    }
    offsets.push_back(offset);
    offset += len;
  }
  std::vector<ImplPtr> impls;
  bool any_grad = false;
  for (const Tensor& p : parts) {
    impls.push_back(p.impl());
    any_grad = any_grad || p.requires_grad();
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(out_shape);
  impl->data = std::move(y);
  if (g_grad_enabled && any_grad) {
    auto node = std::make_shared<Node>();
    node->op = "concat";
    node->inputs = impls;
    node->backward = [impls, offsets, view, total](const TensorImpl& o) {
      for (std::size_t n = 0; n < impls.size(); ++n) {
        double* g = grad_of(impls[n]);
        if (!g) continue;
        const std::size_t len = impls[n]->data.size() / (view.outer * view.inner);
        for (std::size_t q = 0; q < view.outer; ++q) {
          const double* src = o.grad.data() + (q * total + offsets[n]) * view.inner;
          double* dst = g + q * len * view.inner;
          for (std::size_t i = 0; i < len * view.inner; ++i) dst[i] += src[i];
        }
      }
    };
    impl->node = std::move(node);
    impl->requires_grad = true;
  }
  return Tensor::from_impl(std::move(impl));
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= x.rank() || begin >= end || end > x.dim(axis)) {
    dimension_error("slice", "range [" + std::to_string(begin) + "," + std::to_string(end) +
                                 ") on axis " + std::to_string(axis) + " of " + shape_str(x.shape()));
  }
  const AxisView view = axis_view(x.shape(), axis);
  const std::size_t len = end - begin;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> y(view.outer * len * view.inner);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < view.outer; ++o) {
    std::copy_n(px + (o * view.len + begin) * view.inner, len * view.inner,
                y.data() + o * len * view.inner);
  }
  ImplPtr xi = x.impl();
  return make_result(std::move(out_shape), std::move(y), "slice", {&x},
                     [xi, view, begin, len](const TensorImpl& o) {
                       double* gx = grad_of(xi);
                       if (!gx) return;
                       for (std::size_t q = 0; q < view.outer; ++q) {
                         const double* src = o.grad.data() + q * len * view.inner;
                         double* dst = gx + (q * view.len + begin) * view.inner;
                         for (std::size_t i = 0; i < len * view.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after) {
  if (axis >= x.rank()) dimension_error("pad", "axis out of range for " + shape_str(x.shape()));
  if (before == 0 && after == 0) return x;
  const AxisView view = axis_view(x.shape(), axis);
  const std::size_t len = view.len + before + after;
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::vector<double> y(view.outer * len * view.inner, 0.0);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < view.outer; ++o) {
    std::copy_n(px + o * view.len * view.inner, view.len * view.inner,
                y.data() + (o * len + before) * view.inner);
  }
  ImplPtr xi = x.impl();
  return make_result(std::move(out_shape), std::move(y), "pad", {&x},
                     [xi, view, before, len](const TensorImpl& o) {
                       double* gx = grad_of(xi);
                       if (!gx) return;
                       for (std::size_t q = 0; q < view.outer; ++q) {
                         const double* src = o.grad.data() + (q * len + before) * view.inner;
                         double* dst = gx + q * view.len * view.inner;
                         for (std::size_t i = 0; i < view.len * view.inner; ++i) dst[i] += src[i];
                       }
                     });
}

Tensor pad_left_time(const Tensor& x, std::size_t n) {
  if (x.rank() < 2) dimension_error("pad_left_time", "needs [C×T...], got " + shape_str(x.shape()));
  return pad(x, 1, n, 0);
}

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  ImplPtr xi = x.impl();
  return make_result({1}, {acc}, "sum", {&x}, [xi](const TensorImpl& o) {
    if (double* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += o.grad[0];
    }
  });
}

Tensor sum_squares(const Tensor& x) {
  double acc = 0.0;
  for (double v : x.data()) acc += v * v;
  ImplPtr xi = x.impl();
  return make_result({1}, {acc}, "sum_squares", {&x}, [xi](const TensorImpl& o) {
    if (double* gx = grad_of(xi)) {
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += 2.0 * xi->data[i] * o.grad[0];
    }
  });
}

Tensor mean_over_axis(const Tensor& x, std::size_t axis) {
  if (axis >= x.rank()) dimension_error("mean_over_axis", "axis out of range for " + shape_str(x.shape()));
  const AxisView view = axis_view(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> y(view.outer * view.inner, 0.0);
  const double* px = x.data().data();
  for (std::size_t o = 0; o < view.outer; ++o) {
    for (std::size_t l = 0; l < view.len; ++l) {
      for (std::size_t i = 0; i < view.inner; ++i) {
        y[o * view.inner + i] += px[(o * view.len + l) * view.inner + i];
      }
    }
  }
  const double inv = 1.0 / static_cast<double>(view.len);
  for (double& v : y) v *= inv;
  ImplPtr xi = x.impl();
  return make_result(std::move(out_shape), std::move(y), "mean_over_axis", {&x},
                     [xi, view, inv](const TensorImpl& o) {
                       double* gx = grad_of(xi);
                       if (!gx) return;
                       for (std::size_t q = 0; q < view.outer; ++q) {
                         for (std::size_t l = 0; l < view.len; ++l) {
                           for (std::size_t i = 0; i < view.inner; ++i) {
                             gx[(q * view.len + l) * view.inner + i] += o.grad[q * view.inner + i] * inv;
                           }
                         }
                       }
                     });
}

Tensor causal_running_mean(const Tensor& z) {
  require_rank("causal_running_mean", z, 2);
  const std::size_t t_len = z.dim(0), d = z.dim(1);
  std::vector<double> y(t_len * d);
  std::vector<double> running(d, 0.0);
  const double* pz = z.data().data();
  for (std::size_t t = 0; t < t_len; ++t) {
    const double inv = 1.0 / static_cast<double>(t + 1);
    for (std::size_t j = 0; j < d; ++j) {
      running[j] += pz[t * d + j];
      y[t * d + j] = running[j] * inv;
    }
  }
  ImplPtr zi = z.impl();
  return make_result(z.shape(), std::move(y), "causal_running_mean", {&z},
                     [zi, t_len, d](const TensorImpl& o) {
                       double* gz = grad_of(zi);
                       if (!gz) return;
                       // dz[k] = Σ_{i≥k} dy[i]/(i+1): suffix sums
                       std::vector<double> suffix(d, 0.0);
                       for (std::size_t t = t_len; t-- > 0;) {
                         const double inv = 1.0 / static_cast<double>(t + 1);
                         for (std::size_t j = 0; j < d; ++j) {
                           suffix[j] += o.grad[t * d + j] * inv;
                           gz[t * d + j] += suffix[j];
                         }
                       }
                     });
}

Tensor softmax_last_axis(const Tensor& x) {
  if (x.rank() < 1) dimension_error("softmax_last_axis", "empty shape");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<double> y(x.numel());
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * n;
    double* out = y.data() + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += (out[i] = std::exp(in[i] - mx));
    for (std::size_t i = 0; i < n; ++i) out[i] /= total;
  }
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(y), "softmax", {&x}, [xi, rows, n](const TensorImpl& o) {
    double* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* s = o.data.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t i = 0; i < n; ++i) dot += g[i] * s[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += s[i] * (g[i] - dot);
    }
  });
}

Tensor log_softmax_last_axis(const Tensor& x) {
  if (x.rank() < 1) dimension_error("log_softmax_last_axis", "empty shape");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  std::vector<double> y(x.numel());
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
    const double lse = mx + std::log(total);
    for (std::size_t i = 0; i < n; ++i) y[r * n + i] = in[i] - lse;
  }
  ImplPtr xi = x.impl();
  return make_result(x.shape(), std::move(y), "log_softmax", {&x}, [xi, rows, n](const TensorImpl& o) {
    double* gx = grad_of(xi);
    if (!gx) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* ls = o.data.data() + r * n;
      const double* g = o.grad.data() + r * n;
      double gsum = 0.0;
      for (std::size_t i = 0; i < n; ++i) gsum += g[i];
      for (std::size_t i = 0; i < n; ++i) gx[r * n + i] += g[i] - std::exp(ls[i]) * gsum;
    }
  });
}

Tensor logsumexp_last_axis(const Tensor& x) {
  if (x.rank() < 1) dimension_error("logsumexp_last_axis", "empty shape");
  const std::size_t n = x.shape().back(), rows = x.numel() / n;
  Shape out_shape(x.shape().begin(), x.shape().end() - 1);
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> y(rows);
  const double* px = x.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = px + r * n;
    const double mx = *std::max_element(in, in + n);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) total += std::exp(in[i] - mx);
    y[r] = mx + std::log(total);
  }
  ImplPtr xi = x.impl();
  return make_result(std::move(out_shape), std::move(y), "logsumexp", {&x},
                     [xi, rows, n](const TensorImpl& o) {
                       double* gx = grad_of(xi);
                       if (!gx) return;
                       for (std::size_t r = 0; r < rows; ++r) {
                         for (std::size_t i = 0; i < n; ++i) {
                           gx[r * n + i] += o.grad[r] * std::exp(xi->data[r * n + i] - o.data[r]);
                         }
                       }
                     });
}

// ---- model-specific -------------------------------------------------------

Tensor batchnorm_time(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      RunningStats& stats, bool training) {
  require_rank("batchnorm_time", x, 2);
  const std::size_t c = x.dim(0), t_len = x.dim(1);
  if (t_len == 0) dimension_error("batchnorm_time", "empty time axis");
  if (gamma.numel() != c || beta.numel() != c || stats.mean.numel() != c || stats.var.numel() != c) {
    dimension_error("batchnorm_time", "parameters do not match " + std::to_string(c) + " channels");
  }
  const double* px = x.data().data();
  std::vector<double> mean(c), inv_std(c);
  if (training) {
    auto rm = stats.mean.mutable_data();
    auto rv = stats.var.mutable_data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double* row = px + ch * t_len;
      double m = 0.0;
      for (std::size_t t = 0; t < t_len; ++t) m += row[t];
      m /= static_cast<double>(t_len);
      double v = 0.0;
      for (std::size_t t = 0; t < t_len; ++t) v += (row[t] - m) * (row[t] - m);
      const double unbiased = t_len > 1 ? v / static_cast<double>(t_len - 1) : 0.0;
      v /= static_cast<double>(t_len);
      mean[ch] = m;
      inv_std[ch] = 1.0 / std::sqrt(v + stats.epsilon);
      rm[ch] = (1.0 - stats.momentum) * rm[ch] + stats.momentum * m;
      rv[ch] = (1.0 - stats.momentum) * rv[ch] + stats.momentum * unbiased;
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = stats.mean.data()[ch];
      inv_std[ch] = 1.0 / std::sqrt(stats.var.data()[ch] + stats.epsilon);
    }
  }
  std::vector<double> xhat(x.numel()), y(x.numel());
  for (std::size_t ch = 0; ch < c; ++ch) {
    const double g = gamma.data()[ch], b = beta.data()[ch];
    for (std::size_t t = 0; t < t_len; ++t) {
      const std::size_t i = ch * t_len + t;
      xhat[i] = (px[i] - mean[ch]) * inv_std[ch];
      y[i] = g * xhat[i] + b;
    }
  }
  ImplPtr xi = x.impl(), gi = gamma.impl(), bi = beta.impl();
  return make_result(
      x.shape(), std::move(y), "batchnorm_time", {&x, &gamma, &beta},
      [xi, gi, bi, c, t_len, training, inv_std = std::move(inv_std),
       xhat = std::move(xhat)](const TensorImpl& o) {
        double* gx = grad_of(xi);
        double* gg = grad_of(gi);
        double* gb = grad_of(bi);
        const double n = static_cast<double>(t_len);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double* g = o.grad.data() + ch * t_len;
          const double* xh = xhat.data() + ch * t_len;
          double sum_g = 0.0, sum_gx = 0.0;
          for (std::size_t t = 0; t < t_len; ++t) {
            sum_g += g[t];
            sum_gx += g[t] * xh[t];
          }
          if (gg) gg[ch] += sum_gx;
          if (gb) gb[ch] += sum_g;
          if (!gx) continue;
          const double gam = gi->data[ch];
          double* dx = gx + ch * t_len;
          if (training) {
            const double k = gam * inv_std[ch] / n;
            for (std::size_t t = 0; t < t_len; ++t) dx[t] += k * (n * g[t] - sum_g - xh[t] * sum_gx);
          } else {
            for (std::size_t t = 0; t < t_len; ++t) dx[t] += g[t] * gam * inv_std[ch];
          }
        }
      });
}

Tensor embedding(const Tensor& table, std::span<const int> ids) {
  require_rank("embedding", table, 2);
  const std::size_t rows = table.dim(0), e = table.dim(1);
  if (ids.empty()) dimension_error("embedding", "empty id list");
  std::vector<double> y(ids.size() * e);
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= rows) {
      throw InputError("embedding: id " + std::to_string(ids[r]) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
    std::copy_n(table.data().data() + static_cast<std::size_t>(ids[r]) * e, e, y.data() + r * e);
  }
  ImplPtr ti = table.impl();
  std::vector<int> idv(ids.begin(), ids.end());
  return make_result({ids.size(), e}, std::move(y), "embedding", {&table},
                     [ti, idv = std::move(idv), e](const TensorImpl& o) {
                       double* gt = grad_of(ti);
                       if (!gt) return;
                       for (std::size_t r = 0; r < idv.size(); ++r) {
                         double* dst = gt + static_cast<std::size_t>(idv[r]) * e;
                         for (std::size_t j = 0; j < e; ++j) dst[j] += o.grad[r * e + j];
                       }
                     });
}

Tensor grid_add(const Tensor& a, const Tensor& b) {
  require_rank("grid_add", a, 2);
  require_rank("grid_add", b, 2);
  const std::size_t t_len = a.dim(0), u_len = b.dim(0), j = a.dim(1);
  if (b.dim(1) != j) dimension_error("grid_add", shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> y(t_len * u_len * j);
  for (std::size_t t = 0; t < t_len; ++t) {
    for (std::size_t u = 0; u < u_len; ++u) {
      double* out = y.data() + (t * u_len + u) * j;
      const double* ar = a.data().data() + t * j;
      const double* br = b.data().data() + u * j;
      for (std::size_t q = 0; q < j; ++q) out[q] = ar[q] + br[q];
    }
  }
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result({t_len, u_len, j}, std::move(y), "grid_add", {&a, &b},
                     [ai, bi, t_len, u_len, j](const TensorImpl& o) {
                       double* ga = grad_of(ai);
                       double* gb = grad_of(bi);
                       for (std::size_t t = 0; t < t_len; ++t) {
                         for (std::size_t u = 0; u < u_len; ++u) {
                           const double* g = o.grad.data() + (t * u_len + u) * j;
                           if (ga) {
                             for (std::size_t q = 0; q < j; ++q) ga[t * j + q] += g[q];
                           }
                           if (gb) {
                             for (std::size_t q = 0; q < j; ++q) gb[u * j + q] += g[q];
                           }
                         }
                       }
                     });
}

}  // namespace convrnnt
