#pragma once

#include <Eigen/Core>
#include <stdexcept>

#include "fwl/rng.hpp"
#include "fwl/tensor.hpp"

namespace fwl {

// guard added to every normalization denominator
inline constexpr double kEpsGuard = 1e-6;

enum class PhiKind { Identity, Elu1, Favor, Dpfp };
enum class RedrawPolicy { PerMinibatch, Fixed };

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

// ---- raw column-wise kernels (no gradients) ------------------------------

template <typename Scalar>
Mat<Scalar> phi_identity(const Mat<Scalar>& x) {
  return x;
}

template <typename Scalar>
Mat<Scalar> phi_elu1(const Mat<Scalar>& x) {
  return x.unaryExpr([](Scalar v) {
    return v > Scalar(0) ? v + Scalar(1) : std::exp(v);
  });
}

// h(x)/sqrt(m) * [exp(Rx); exp(-Rx)] with h(x) = exp(-|x|^2/2)/sqrt(2)
template <typename Scalar>
Mat<Scalar> phi_favor(const Mat<Scalar>& x, const Mat<Scalar>& r) {
  if (r.rows() < 1) throw std::invalid_argument("phi_favor: m must be positive");
  if (r.cols() != x.rows()) throw ShapeError("phi_favor: R columns must equal d_key");
  const Eigen::Index m = r.rows();
  Mat<Scalar> rx = r * x;
  Mat<Scalar> out(2 * m, x.cols());
  for (Eigen::Index j = 0; j < x.cols(); ++j) {
    const Scalar h = std::exp(Scalar(-0.5) * x.col(j).squaredNorm()) /
                     std::sqrt(Scalar(2));
    const Scalar c = h / std::sqrt(Scalar(m));
    out.col(j).head(m) = (rx.col(j).array().exp() * c).matrix();
    out.col(j).tail(m) = ((-rx.col(j)).array().exp() * c).matrix();
  }
  return out;
}

// Products of rectified component pairs of [x; -x]; block j pairs each
// component with the one nu positions below it (wraparound).
template <typename Scalar>
Mat<Scalar> phi_dpfp(const Mat<Scalar>& x, int nu) {
  const Eigen::Index d = x.rows();
  if (nu < 1 || nu > 2 * d - 1)
    throw std::invalid_argument("phi_dpfp: nu must be in [1, 2*d_key-1]");
  const Eigen::Index n = 2 * d;
  Mat<Scalar> out(n * nu, x.cols());
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> u(n);
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    u.head(d) = x.col(c).cwiseMax(Scalar(0));
    u.tail(d) = (-x.col(c)).cwiseMax(Scalar(0));
    for (int j = 1; j <= nu; ++j)
      for (Eigen::Index i = 0; i < n; ++i)
        out((j - 1) * n + i, c) = u(i) * u((i - j + n) % n);
  }
  return out;
}

// divide each column by the sum of its components (plus guard)
template <typename Scalar>
Mat<Scalar> sum_normalize(const Mat<Scalar>& y, Scalar eps = Scalar(kEpsGuard)) {
  Mat<Scalar> out(y.rows(), y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j)
    out.col(j) = y.col(j) / (y.col(j).sum() + eps);
  return out;
}

// ---- configured feature map ----------------------------------------------

// Immutable after construction/redraw; shareable across workers.
struct FeatureMap {
  PhiKind kind = PhiKind::Identity;
  int d_key = 0;
  int nu = 1;          // dpfp only
  int m = 0;           // favor only
  Matrix random_features;  // favor only, m x d_key
  RedrawPolicy redraw_policy = RedrawPolicy::Fixed;
  bool sum_normalized = false;

  int d_dot() const {
    switch (kind) {
      case PhiKind::Identity:
      case PhiKind::Elu1:
        return d_key;
      case PhiKind::Favor:
        return 2 * m;
      case PhiKind::Dpfp:
        return 2 * d_key * nu;
    }
    return 0;
  }

  Matrix apply(const Matrix& x) const {
    Matrix out;
    switch (kind) {
      case PhiKind::Identity: out = x; break;
      case PhiKind::Elu1: out = phi_elu1(x); break;
      case PhiKind::Favor: out = phi_favor(x, random_features); break;
      case PhiKind::Dpfp: out = phi_dpfp(x, nu); break;
    }
    if (sum_normalized) out = sum_normalize(out);
    return out;
  }
};

FeatureMap make_feature_map(PhiKind kind, int d_key, int nu, int m,
                            bool sum_normalized, const Rng& rng);

// Fresh random features for step `step` during training; under the fixed
// policy the map is returned unchanged.
FeatureMap redraw_features(const FeatureMap& fm, const Rng& rng,
                           std::uint64_t step);

// ---- differentiable application ------------------------------------------

Tensor apply_phi(Tape& tape, const FeatureMap& fm, const Tensor& x);
Tensor sum_normalize_op(Tape& tape, const Tensor& y, double eps = kEpsGuard);
Tensor dpfp_op(Tape& tape, const Tensor& x, int nu);
Tensor favor_op(Tape& tape, const Tensor& x, const Matrix& r);

}  // namespace fwl
