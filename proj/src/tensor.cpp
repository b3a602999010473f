#include "fwl/tensor.hpp"

#include <cmath>

namespace fwl {

namespace {

bool any_requires_grad(const std::vector<Tensor>& inputs) {
  for (const auto& t : inputs)
    if (t.requires_grad()) return true;
  return false;
}

}  // namespace

Tensor Tape::record(Matrix value, const std::vector<Tensor>& inputs,
                    std::function<void(const Tensor&)> backward_fn) {
  if (!value.allFinite()) throw NumericError("non-finite result recorded on tape");
  const bool track = enabled_ && any_requires_grad(inputs);
  Tensor out = track ? Tensor::param(std::move(value)) : Tensor::constant(std::move(value));
  if (track) nodes_.push_back(Node{out, std::move(backward_fn)});
  return out;
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw std::logic_error("tape already consumed by backward()");
  if (!loss.defined() || !loss.is_scalar())
    throw std::invalid_argument("backward() requires a scalar loss");
  if (!loss.requires_grad())
    throw std::invalid_argument("loss is detached from the tape");
  consumed_ = true;
  Tensor seed = loss;
  seed.accumulate_grad(Matrix::Ones(1, 1));
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (it->out.has_grad()) it->fn(it->out);
  }
  nodes_.clear();
}

Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) throw ShapeError("matmul: inner extents disagree");
  Matrix v = a.value() * b.value();
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    const Matrix& g = out.grad();
    if (a.requires_grad()) a.accumulate_grad(g * b.value().transpose());
    if (b.requires_grad()) b.accumulate_grad(a.value().transpose() * g);
  });
}

Tensor matmul_tn(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn: extents disagree");
  Matrix v = a.value().transpose() * b.value();
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    const Matrix& g = out.grad();
    if (a.requires_grad()) a.accumulate_grad(b.value() * g.transpose());
    if (b.requires_grad()) b.accumulate_grad(a.value() * g);
  });
}

Tensor outer(Tape& tape, const Tensor& u, const Tensor& v) {
  if (!u.is_vector() || !v.is_vector())
    throw ShapeError("outer: both operands must be vectors");
  Matrix m = u.value() * v.value().transpose();
  return tape.record(std::move(m), {u, v}, [u, v](const Tensor& out) {
    const Matrix& g = out.grad();
    if (u.requires_grad()) u.accumulate_grad(g * v.value());
    if (v.requires_grad()) v.accumulate_grad(g.transpose() * u.value());
  });
}

Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("add: shapes disagree");
  Matrix v = a.value() + b.value();
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) b.accumulate_grad(out.grad());
  });
}

Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("sub: shapes disagree");
  Matrix v = a.value() - b.value();
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    if (a.requires_grad()) a.accumulate_grad(out.grad());
    if (b.requires_grad()) b.accumulate_grad(-out.grad());
  });
}

Tensor hadamard(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError("hadamard: shapes disagree");
  Matrix v = a.value().cwiseProduct(b.value());
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    const Matrix& g = out.grad();
    if (a.requires_grad()) a.accumulate_grad(g.cwiseProduct(b.value()));
    if (b.requires_grad()) b.accumulate_grad(g.cwiseProduct(a.value()));
  });
}

Tensor scale(Tape& tape, const Tensor& a, double c) {
  Matrix v = c * a.value();
  return tape.record(std::move(v), {a}, [a, c](const Tensor& out) {
    if (a.requires_grad()) a.accumulate_grad(c * out.grad());
  });
}

Tensor dot(Tape& tape, const Tensor& a, const Tensor& b) {
  if (!a.is_vector() || !b.is_vector() || a.rows() != b.rows())
    throw ShapeError("dot: operands must be vectors of equal length");
  Matrix v(1, 1);
  v(0, 0) = a.value().col(0).dot(b.value().col(0));
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    const double g = out.grad()(0, 0);
    if (a.requires_grad()) a.accumulate_grad(g * b.value());
    if (b.requires_grad()) b.accumulate_grad(g * a.value());
  });
}

Tensor sum(Tape& tape, const Tensor& a) {
  Matrix v(1, 1);
  v(0, 0) = a.value().sum();
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    const double g = out.grad()(0, 0);
    if (a.requires_grad())
      a.accumulate_grad(Matrix::Constant(a.rows(), a.cols(), g));
  });
}

Tensor relu(Tape& tape, const Tensor& a) {
  Matrix v = a.value().cwiseMax(0.0);
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    // subgradient at 0 is 0
    Matrix mask = (a.value().array() > 0.0).cast<double>();
    a.accumulate_grad(out.grad().cwiseProduct(mask));
  });
}

Tensor elu1(Tape& tape, const Tensor& a) {
  Matrix v = a.value().unaryExpr(
      [](double x) { return x > 0.0 ? x + 1.0 : std::exp(x); });
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    Matrix d = a.value().unaryExpr(
        [](double x) { return x > 0.0 ? 1.0 : std::exp(x); });
    a.accumulate_grad(out.grad().cwiseProduct(d));
  });
}

Tensor exp(Tape& tape, const Tensor& a) {
  Matrix v = a.value().array().exp();
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    if (a.requires_grad())
      a.accumulate_grad(out.grad().cwiseProduct(out.value()));
  });
}

Tensor sigmoid(Tape& tape, const Tensor& a) {
  Matrix v = a.value().unaryExpr(
      [](double x) { return 1.0 / (1.0 + std::exp(-x)); });
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    const Matrix& s = out.value();
    Matrix d = s.array() * (1.0 - s.array());
    a.accumulate_grad(out.grad().cwiseProduct(d));
  });
}

Tensor concat_rows(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.cols() != b.cols()) throw ShapeError("concat_rows: column counts disagree");
  Matrix v(a.rows() + b.rows(), a.cols());
  v.topRows(a.rows()) = a.value();
  v.bottomRows(b.rows()) = b.value();
  return tape.record(std::move(v), {a, b}, [a, b](const Tensor& out) {
    const Matrix& g = out.grad();
    if (a.requires_grad()) a.accumulate_grad(g.topRows(a.rows()));
    if (b.requires_grad()) b.accumulate_grad(g.bottomRows(b.rows()));
  });
}

Tensor softmax_cols(Tape& tape, const Tensor& a) {
  Matrix v(a.rows(), a.cols());
  for (Eigen::Index j = 0; j < a.cols(); ++j) {
    Eigen::ArrayXd col = a.value().col(j).array();
    col -= col.maxCoeff();
    Eigen::ArrayXd e = col.exp();
    v.col(j) = e / e.sum();
  }
  return tape.record(std::move(v), {a}, [a](const Tensor& out) {
    if (!a.requires_grad()) return;
    const Matrix& s = out.value();
    const Matrix& g = out.grad();
    Matrix ga(s.rows(), s.cols());
    for (Eigen::Index j = 0; j < s.cols(); ++j) {
      const double gs = g.col(j).dot(s.col(j));
      ga.col(j) = s.col(j).cwiseProduct(g.col(j)) - gs * s.col(j);
    }
    a.accumulate_grad(ga);
  });
}

Tensor gather_cols(Tape& tape, const Tensor& a, const std::vector<int>& idx) {
  Matrix v(a.rows(), static_cast<Eigen::Index>(idx.size()));
  for (std::size_t j = 0; j < idx.size(); ++j) {
    if (idx[j] < 0 || idx[j] >= a.cols()) throw ShapeError("gather_cols: index out of range");
    v.col(static_cast<Eigen::Index>(j)) = a.value().col(idx[j]);
  }
  return tape.record(std::move(v), {a}, [a, idx](const Tensor& out) {
    if (!a.requires_grad()) return;
    Matrix ga = Matrix::Zero(a.rows(), a.cols());
    const Matrix& g = out.grad();
    for (std::size_t j = 0; j < idx.size(); ++j)
      ga.col(idx[j]) += g.col(static_cast<Eigen::Index>(j));
    a.accumulate_grad(ga);
  });
}

Tensor half_squared_error(Tape& tape, const Tensor& a, const Matrix& target) {
  if (a.rows() != target.rows() || a.cols() != target.cols())
    throw ShapeError("half_squared_error: shapes disagree");
  Matrix diff = a.value() - target;
  Matrix v(1, 1);
  v(0, 0) = 0.5 * diff.squaredNorm();
  return tape.record(std::move(v), {a}, [a, diff](const Tensor& out) {
    if (a.requires_grad()) a.accumulate_grad(out.grad()(0, 0) * diff);
  });
}

}  // namespace fwl
