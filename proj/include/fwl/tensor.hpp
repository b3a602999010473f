#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace fwl {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Raised when a forward value comes out non-finite (NaN/Inf is an error
// state, not a value).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

namespace detail {
struct TensorData {
  Matrix value;
  Matrix grad;  // empty until the first accumulation
  bool requires_grad = false;
};
}  // namespace detail

// Shared handle to a dense value participating in reverse-mode
// differentiation. Vectors are n-by-1, scalars 1-by-1.
class Tensor {
 public:
  Tensor() = default;

  static Tensor constant(Matrix v) {
    Tensor t;
    t.d_ = std::make_shared<detail::TensorData>();
    t.d_->value = std::move(v);
    return t;
  }

  static Tensor param(Matrix v) {
    Tensor t = constant(std::move(v));
    t.d_->requires_grad = true;
    return t;
  }

  bool defined() const { return d_ != nullptr; }
  const Matrix& value() const { return d_->value; }
  Matrix& value() { return d_->value; }
  bool requires_grad() const { return d_ && d_->requires_grad; }
  bool has_grad() const { return d_ && d_->grad.size() > 0; }

  const Matrix& grad() const {
    if (!has_grad()) throw std::logic_error("tensor has no gradient");
    return d_->grad;
  }

  void zero_grad() const {
    if (d_) d_->grad.resize(0, 0);
  }

  // Handle semantics: gradient accumulation mutates the shared node, so it
  // is usable on captured-by-value copies inside backward closures.
  void accumulate_grad(const Matrix& g) const {
    if (g.rows() != d_->value.rows() || g.cols() != d_->value.cols())
      throw ShapeError("gradient shape does not match value shape");
    if (d_->grad.size() == 0)
      d_->grad = g;
    else
      d_->grad += g;
  }

  Eigen::Index rows() const { return d_->value.rows(); }
  Eigen::Index cols() const { return d_->value.cols(); }
  bool is_vector() const { return d_->value.cols() == 1; }
  bool is_scalar() const { return d_->value.size() == 1; }

  bool same_node(const Tensor& other) const { return d_ == other.d_; }

 private:
  std::shared_ptr<detail::TensorData> d_;
};

// Records one forward pass; replaying the recorded backward transforms in
// reverse order produces gradients for every reachable requires_grad leaf.
// Single use: backward() consumes the tape.
class Tape {
 public:
  explicit Tape(bool enabled = true) : enabled_(enabled) {}

  bool enabled() const { return enabled_; }

  // Registers a new tensor. `backward_fn(out)` must scatter out.grad()
  // into the inputs; it is only invoked when gradients are required.
  Tensor record(Matrix value, const std::vector<Tensor>& inputs,
                std::function<void(const Tensor&)> backward_fn);

  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor out;
    std::function<void(const Tensor&)> fn;
  };
  std::vector<Node> nodes_;
  bool enabled_;
  bool consumed_ = false;
};

// ---- differentiable operations ------------------------------------------

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// transpose(a) * b without materializing the transpose
Tensor matmul_tn(Tape& tape, const Tensor& a, const Tensor& b);
Tensor outer(Tape& tape, const Tensor& u, const Tensor& v);
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& a, double c);
Tensor dot(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sum(Tape& tape, const Tensor& a);
Tensor relu(Tape& tape, const Tensor& a);
Tensor elu1(Tape& tape, const Tensor& a);
Tensor exp(Tape& tape, const Tensor& a);
Tensor sigmoid(Tape& tape, const Tensor& a);
// vertical concatenation
Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b);
// column-wise softmax
Tensor softmax_cols(Tape& tape, const Tensor& a);
// columns of `a` selected by `idx`, gradients scatter-add back
Tensor gather_cols(Tape& tape, const Tensor& a, const std::vector<int>& idx);
// 0.5 * squared Frobenius distance to a constant target
Tensor half_squared_error(Tape& tape, const Tensor& a, const Matrix& target);

}  // namespace fwl
