#pragma once

#include <cstdint>

#include "fwl/fast_weight.hpp"
#include "fwl/feature_maps.hpp"
#include "fwl/rng.hpp"

namespace fwl {

// Random-case suites checking that the fast-weight recurrence reproduces
// the quadratic attention forms step for step.

template <typename Scalar>
Mat<Scalar> random_mat(RngStream& rs, Eigen::Index r, Eigen::Index c) {
  Mat<Scalar> m(r, c);
  for (Eigen::Index j = 0; j < c; ++j)
    for (Eigen::Index i = 0; i < r; ++i)
      m(i, j) = static_cast<Scalar>(rs.next_normal());
  return m;
}

template <typename Scalar>
Mat<Scalar> apply_phi_raw(const FeatureMap& fm, const Mat<Scalar>& x) {
  Mat<Scalar> out;
  switch (fm.kind) {
    case PhiKind::Identity: out = x; break;
    case PhiKind::Elu1: out = phi_elu1(x); break;
    case PhiKind::Favor:
      out = phi_favor(x, Mat<Scalar>(fm.random_features.cast<Scalar>()));
      break;
    case PhiKind::Dpfp: out = phi_dpfp(x, fm.nu); break;
  }
  if (fm.sum_normalized) out = sum_normalize(out);
  return out;
}

// Sum rule + attention normalization vs. the quadratic linearized-attention
// oracle, per-step over random sequences. Returns the max absolute
// difference over all cases, steps and components.
template <typename Scalar>
double equiv_recurrence_vs_quadratic(PhiKind phi, int n_cases, int max_len,
                                     int max_dim, std::uint64_t seed,
                                     int min_len = 1) {
  Rng rng(seed);
  double max_diff = 0.0;
  for (int c = 0; c < n_cases; ++c) {
    RngStream rs = rng.stream("equiv-case", static_cast<std::uint64_t>(c));
    const int d_key = 1 + static_cast<int>(rs.next_below(max_dim));
    const int d_value = 1 + static_cast<int>(rs.next_below(max_dim));
    const int len =
        min_len + static_cast<int>(rs.next_below(max_len - min_len + 1));
    const int nu = 1 + static_cast<int>(rs.next_below(
                           std::min(3, 2 * d_key - 1)));
    const int m = 1 + static_cast<int>(rs.next_below(max_dim));
    Rng fm_rng(rs.next_u64());
    FeatureMap fm = make_feature_map(phi, d_key, nu, m, false, fm_rng);

    Mat<Scalar> keys = random_mat<Scalar>(rs, d_key, len);
    Mat<Scalar> values = random_mat<Scalar>(rs, d_value, len);
    Mat<Scalar> queries = random_mat<Scalar>(rs, d_key, len);
    Mat<Scalar> phi_k = apply_phi_raw(fm, keys);
    Mat<Scalar> phi_q = apply_phi_raw(fm, queries);

    auto state = FastWeightStateT<Scalar>::zero(d_value, phi_k.rows());
    for (int i = 0; i < len; ++i) {
      sum_update_step(state, phi_k.col(i).eval(), values.col(i).eval());
      auto fast = attention_readout(state, phi_q.col(i).eval());
      auto oracle = linearized_attention_oracle<Scalar>(
          phi_k.leftCols(i + 1), values.leftCols(i + 1),
          phi_q.col(i).eval());
      const double diff =
          static_cast<double>((fast - oracle).template lpNorm<Eigen::Infinity>());
      if (diff > max_diff) max_diff = diff;
    }
  }
  return max_diff;
}

// Identity phi, no normalization vs. V (K^T q), the softmax-free form.
template <typename Scalar>
double equiv_softmax_free(int n_cases, int max_len, int max_dim,
                          std::uint64_t seed, int min_len = 1) {
  Rng rng(seed);
  double max_diff = 0.0;
  for (int c = 0; c < n_cases; ++c) {
    RngStream rs = rng.stream("equiv-nosm-case", static_cast<std::uint64_t>(c));
    const int d_key = 1 + static_cast<int>(rs.next_below(max_dim));
    const int d_value = 1 + static_cast<int>(rs.next_below(max_dim));
    const int len =
        min_len + static_cast<int>(rs.next_below(max_len - min_len + 1));
    Mat<Scalar> keys = random_mat<Scalar>(rs, d_key, len);
    Mat<Scalar> values = random_mat<Scalar>(rs, d_value, len);
    Mat<Scalar> queries = random_mat<Scalar>(rs, d_key, len);

    auto state = FastWeightStateT<Scalar>::zero(d_value, d_key);
    for (int i = 0; i < len; ++i) {
      sum_update_step(state, keys.col(i).eval(), values.col(i).eval());
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> fast =
          delta_readout(state, queries.col(i).eval(), Normalization::None);
      Eigen::Matrix<Scalar, Eigen::Dynamic, 1> direct =
          values.leftCols(i + 1) *
          (keys.leftCols(i + 1).transpose() * queries.col(i));
      const double diff =
          static_cast<double>((fast - direct).template lpNorm<Eigen::Infinity>());
      if (diff > max_diff) max_diff = diff;
    }
  }
  return max_diff;
}

}  // namespace fwl
