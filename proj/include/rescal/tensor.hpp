#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace rescal::ad {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Shape or axis violations; message names the op and the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// NaN/Inf encountered in tensor data.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// API misuse (non-scalar loss, missing grad, ...).
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Dense float32 array in row-major order with an optional gradient buffer.
// Values are immutable once an op has produced the tensor; only grad buffers
// (via backward) and leaf parameters (via the optimizer) mutate in place.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values,
                     bool requires_grad = false);
  static Tensor scalar(float value, bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const;
  int rank() const { return static_cast<int>(shape().size()); }
  int64_t dim(int axis) const { return shape()[static_cast<size_t>(axis)]; }
  int64_t size() const;

  std::span<const float> values() const;
  // In-place access for leaf parameters (optimizer updates, checkpoint load).
  std::span<float> mutable_values();
  float item() const;  // scalar tensors only

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const float> grad() const;
  void zero_grad();
  void set_requires_grad(bool b);

  struct Node;
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}
  std::shared_ptr<Node> node_;
  friend struct OpCtx;
};

// Disables tape recording for its lifetime (inference/streaming).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

size_t tape_size();  // entries recorded since the last backward()

// ---------------------------------------------------------------------------
// Differentiable ops. Each op validates shapes (ShapeError), checks outputs
// for NaN/Inf (NumericError) and records itself on the thread-local tape when
// any input requires grad.
// ---------------------------------------------------------------------------

// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// Causal 1-D convolution, zero left-padding so output length equals input
// length. x: [B,Cin,T] (rank 1/2 inputs are promoted), w: [Cout,Cin,K],
// bias: [Cout] or undefined. y[b,o,t] = sum_{i,k} w[o,i,k]*x[b,i,t-(K-1-k)*d].
Tensor conv1d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int dilation);

// 1x1 convolution over channels. x: [B,C,T], w: [Cout,Cin], bias optional.
Tensor pointwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias);

// Elementwise with right-aligned broadcasting (dims equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor concat(const std::vector<Tensor>& parts, int axis);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor abs(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);

// Full reductions to a scalar; accumulation in float64.
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

Tensor slice(const Tensor& x, int axis, int64_t start, int64_t stop);
Tensor reshape(const Tensor& x, Shape new_shape);
Tensor transpose(const Tensor& x, std::vector<int> perm);

// table: [V,D], indices in [0,V) -> [n,D]
Tensor embedding_lookup(const Tensor& table, const std::vector<int64_t>& indices);

// Straight-through Gumbel argmax over contiguous blocks of width n_c along
// the last axis. Forward: one-hot of argmax(logits + noise) per block.
// Backward: gradient of softmax((logits + noise)/tau) per block.
// noise is treated as a constant.
Tensor st_gumbel(const Tensor& logits, const Tensor& noise, int64_t n_c,
                 float tau);

// Conveniences composed from the ops above (never touch the tape directly).
Tensor neg(const Tensor& x);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, float c);
// x: [B,I] row-major, w: [I,O] (input-major), bias: [O] or undefined.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);

// Reverse-mode sweep from a scalar loss; populates grad on every
// requires-grad tensor reachable from it, then clears the tape.
void backward(const Tensor& loss);

}  // namespace rescal::ad
