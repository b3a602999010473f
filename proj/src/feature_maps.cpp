#include "fwl/feature_maps.hpp"

#include <cmath>

namespace fwl {

FeatureMap make_feature_map(PhiKind kind, int d_key, int nu, int m,
                            bool sum_normalized, const Rng& rng) {
  FeatureMap fm;
  fm.kind = kind;
  fm.d_key = d_key;
  fm.nu = nu;
  fm.m = m;
  fm.sum_normalized = sum_normalized;
  if (kind == PhiKind::Dpfp && (nu < 1 || nu > 2 * d_key - 1))
    throw std::invalid_argument("dpfp: nu out of range");
  if (kind == PhiKind::Favor) {
    if (m < 1) throw std::invalid_argument("favor: m must be positive");
    // evaluation features: drawn once from a dedicated substream
    fm.random_features = rng.stream("favor-eval").normal_matrix(m, d_key);
  }
  return fm;
}

FeatureMap redraw_features(const FeatureMap& fm, const Rng& rng,
                           std::uint64_t step) {
  if (fm.kind != PhiKind::Favor)
    throw std::invalid_argument("redraw_features: feature map is not favor");
  if (fm.redraw_policy == RedrawPolicy::Fixed) return fm;
  FeatureMap fresh = fm;
  fresh.random_features =
      rng.stream("favor-redraw", step).normal_matrix(fm.m, fm.d_key);
  return fresh;
}

Tensor sum_normalize_op(Tape& tape, const Tensor& y, double eps) {
  Matrix v(y.rows(), y.cols());
  Eigen::VectorXd denom(y.cols());
  for (Eigen::Index j = 0; j < y.cols(); ++j) {
    denom(j) = y.value().col(j).sum() + eps;
    v.col(j) = y.value().col(j) / denom(j);
  }
  return tape.record(std::move(v), {y}, [y, denom](const Tensor& out) {
    if (!y.requires_grad()) return;
    const Matrix& g = out.grad();
    const Matrix& s = out.value();
    Matrix gy(g.rows(), g.cols());
    for (Eigen::Index j = 0; j < g.cols(); ++j) {
      const double gs = g.col(j).dot(s.col(j));
      gy.col(j) = (g.col(j).array() - gs).matrix() / denom(j);
    }
    y.accumulate_grad(gy);
  });
}

Tensor dpfp_op(Tape& tape, const Tensor& x, int nu) {
  Matrix v = phi_dpfp<double>(x.value(), nu);
  return tape.record(std::move(v), {x}, [x, nu](const Tensor& out) {
    if (!x.requires_grad()) return;
    const Eigen::Index d = x.rows();
    const Eigen::Index n = 2 * d;
    const Matrix& g = out.grad();
    Matrix gx = Matrix::Zero(d, x.cols());
    Eigen::VectorXd u(n), gu(n);
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      u.head(d) = x.value().col(c).cwiseMax(0.0);
      u.tail(d) = (-x.value().col(c)).cwiseMax(0.0);
      gu.setZero();
      for (int j = 1; j <= nu; ++j) {
        for (Eigen::Index i = 0; i < n; ++i) {
          const Eigen::Index p = (i - j + n) % n;
          const double go = g((j - 1) * n + i, c);
          gu(i) += go * u(p);
          gu(p) += go * u(i);
        }
      }
      // through the rectifiers of [x; -x]
      for (Eigen::Index i = 0; i < d; ++i) {
        const double xi = x.value()(i, c);
        if (xi > 0.0) gx(i, c) += gu(i);
        if (xi < 0.0) gx(i, c) -= gu(d + i);
      }
    }
    x.accumulate_grad(gx);
  });
}

Tensor favor_op(Tape& tape, const Tensor& x, const Matrix& r) {
  Matrix v = phi_favor<double>(x.value(), r);
  return tape.record(std::move(v), {x}, [x, r](const Tensor& out) {
    if (!x.requires_grad()) return;
    const Eigen::Index m = r.rows();
    const Matrix& g = out.grad();
    const Matrix& phi = out.value();
    Matrix gx(x.rows(), x.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      // through exp(+-Rx): R^T (g_top .* phi_top - g_bot .* phi_bot)
      Eigen::VectorXd w = g.col(c).head(m).cwiseProduct(phi.col(c).head(m)) -
                          g.col(c).tail(m).cwiseProduct(phi.col(c).tail(m));
      // through h(x): the whole output scales by exp(-|x|^2/2)
      const double gout = g.col(c).dot(phi.col(c));
      gx.col(c) = r.transpose() * w - gout * x.value().col(c);
    }
    x.accumulate_grad(gx);
  });
}

Tensor apply_phi(Tape& tape, const FeatureMap& fm, const Tensor& x) {
  if (x.rows() != fm.d_key) throw ShapeError("apply_phi: input dim != d_key");
  Tensor out;
  switch (fm.kind) {
    case PhiKind::Identity: out = x; break;
    case PhiKind::Elu1: out = elu1(tape, x); break;
    case PhiKind::Favor: out = favor_op(tape, x, fm.random_features); break;
    case PhiKind::Dpfp: out = dpfp_op(tape, x, fm.nu); break;
  }
  if (fm.sum_normalized) out = sum_normalize_op(tape, out);
  return out;
}

}  // namespace fwl
