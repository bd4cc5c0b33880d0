#pragma once

// Dense float64 tensors with tape-free reverse-mode autodiff. Every op that
// sees an input requiring gradients records a Node holding its inputs and a
// backward closure; Tensor::backward() walks the resulting DAG once in
// reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "convrnnt/rng.hpp"

namespace convrnnt {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

struct TensorImpl;

struct Node {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  // Reads out.grad and accumulates into the inputs that require gradients.
  std::function<void(const TensorImpl& out)> backward;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value) { return Tensor(Shape{1}, {value}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  // Direct write access, for initialization and optimizer updates only.
  std::span<double> mutable_data();
  double item() const;
  double at(std::size_t i) const { return data()[i]; }
  double at(std::size_t i, std::size_t j) const { return data()[i * dim(1) + j]; }

  bool requires_grad() const;
  Tensor& set_requires_grad(bool value);
  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  // Backpropagates from this scalar. Consumes the recorded graph.
  void backward() const;

  Tensor detach() const;
  Tensor clone() const;

  const std::shared_ptr<detail::TensorImpl>& impl() const { return impl_; }
  static Tensor from_impl(std::shared_ptr<detail::TensorImpl> impl);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Running statistics for batchnorm_time; updated in place in training mode.
struct RunningStats {
  Tensor mean;
  Tensor var;
  double momentum = 0.1;
  double epsilon = 1e-5;

  static RunningStats identity(std::size_t channels);
};

// ---- linear algebra -------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
// x[m×in] · wᵀ + b, with w stored [out×in]. bias may be undefined.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias = {});

// Valid dilated, grouped cross-correlation. input [C_in×T],
// weight [C_out×(C_in/groups)×k] → [C_out×(T-(k-1)·dilation)].
Tensor conv1d(const Tensor& input, const Tensor& weight, std::size_t dilation = 1,
              std::size_t groups = 1);
// Valid stride-1 2-D cross-correlation. input [C_in×T×F],
// weight [C_out×C_in×k_t×k_f] → [C_out×(T-k_t+1)×(F-k_f+1)].
Tensor conv2d(const Tensor& input, const Tensor& weight);

// ---- elementwise ----------------------------------------------------------

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor swish(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
// x [C×...] + b[C] broadcast over all trailing axes.
Tensor add_channel_bias(const Tensor& x, const Tensor& bias);
// Training: zero each element with probability p, scale survivors by 1/(1-p).
Tensor dropout(const Tensor& x, double p, bool training, CounterRng& rng);

// ---- shape ----------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape);
// Swaps the two leading axes: [A×B×...] → [B×A×...].
Tensor transpose01(const Tensor& x);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
Tensor slice(const Tensor& x, std::size_t axis, std::size_t begin, std::size_t end);
Tensor pad(const Tensor& x, std::size_t axis, std::size_t before, std::size_t after);
// Zero-pads the time axis (axis 1 of [C×T] or [C×T×F]) on the left.
Tensor pad_left_time(const Tensor& x, std::size_t n);

// ---- reductions -----------------------------------------------------------

Tensor sum(const Tensor& x);
Tensor sum_squares(const Tensor& x);
// Removes `axis`.
Tensor mean_over_axis(const Tensor& x, std::size_t axis);
// Row i of z[T×D] becomes the mean of rows 0..i.
Tensor causal_running_mean(const Tensor& z);
Tensor softmax_last_axis(const Tensor& x);
Tensor log_softmax_last_axis(const Tensor& x);
// Removes the last axis.
Tensor logsumexp_last_axis(const Tensor& x);

// ---- model-specific -------------------------------------------------------

// Per-channel normalization over the time axis of x[C×T].
Tensor batchnorm_time(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                      RunningStats& stats, bool training);
// Rows of table[N×E] selected by ids → [len×E].
Tensor embedding(const Tensor& table, std::span<const int> ids);
// out[t,u,:] = a[t,:] + b[u,:] for a[T×J], b[U×J] → [T×U×J].
Tensor grid_add(const Tensor& a, const Tensor& b);

}  // namespace convrnnt
