#pragma once

#include <Eigen/Core>
#include <utility>

#include "fwl/feature_maps.hpp"
#include "fwl/tensor.hpp"

namespace fwl {

enum class UpdateRule { Sum, Delta };
enum class Normalization { None, SumNorm, Attention };

// Under SumNorm the phi outputs are normalized upstream (phi' applied to
// keys and queries), so inside the recurrence SumNorm behaves like None.
inline bool uses_accumulator(Normalization n) {
  return n == Normalization::Attention;
}

struct SequenceConfig {
  UpdateRule rule = UpdateRule::Sum;
  Normalization norm = Normalization::None;
  double eps = kEpsGuard;
};

// ---- single-step state API (templated on scalar) -------------------------

template <typename Scalar>
struct FastWeightStateT {
  Mat<Scalar> W;                                // d_value x d_dot
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> z;   // d_dot
  long step_index = 0;

  static FastWeightStateT zero(Eigen::Index d_value, Eigen::Index d_dot) {
    FastWeightStateT s;
    s.W = Mat<Scalar>::Zero(d_value, d_dot);
    s.z = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(d_dot);
    return s;
  }
};

using FastWeightState = FastWeightStateT<double>;

template <typename Scalar, typename VecA, typename VecB>
void sum_update_step(FastWeightStateT<Scalar>& s, const VecA& phik,
                     const VecB& v) {
  if (phik.size() != s.W.cols() || v.size() != s.W.rows())
    throw ShapeError("sum_update_step: dimension mismatch");
  s.W.noalias() += v * phik.transpose();
  s.z += phik;
  ++s.step_index;
}

template <typename Scalar, typename VecQ>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> attention_readout(
    const FastWeightStateT<Scalar>& s, const VecQ& phiq,
    Scalar eps = Scalar(kEpsGuard)) {
  if (phiq.size() != s.W.cols())
    throw ShapeError("attention_readout: dimension mismatch");
  if (s.step_index == 0)
    return Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(s.W.rows());
  return (s.W * phiq) / (s.z.dot(phiq) + eps);
}

// One delta-rule write. Under Attention normalization the retrieved value
// is divided by z_prev . phi(k) and z accumulates phi(k).
template <typename Scalar, typename VecA, typename VecB>
void delta_rule_step(FastWeightStateT<Scalar>& s, const VecA& phik,
                     const VecB& v, Scalar beta,
                     Normalization norm = Normalization::None,
                     Scalar eps = Scalar(kEpsGuard)) {
  if (phik.size() != s.W.cols() || v.size() != s.W.rows())
    throw ShapeError("delta_rule_step: dimension mismatch");
  if (!(beta >= Scalar(0) && beta <= Scalar(1)))
    throw std::invalid_argument("delta_rule_step: beta must lie in [0, 1]");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> v_bar;
  if (uses_accumulator(norm)) {
    v_bar = (s.step_index == 0)
                ? Eigen::Matrix<Scalar, Eigen::Dynamic, 1>::Zero(s.W.rows())
                      .eval()
                : ((s.W * phik) / (s.z.dot(phik) + eps)).eval();
    s.z += phik;
  } else {
    v_bar = s.W * phik;
  }
  s.W.noalias() += beta * (v - v_bar) * phik.transpose();
  ++s.step_index;
}

template <typename Scalar, typename VecQ>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> delta_readout(
    const FastWeightStateT<Scalar>& s, const VecQ& phiq, Normalization norm,
    Scalar eps = Scalar(kEpsGuard)) {
  if (uses_accumulator(norm)) return attention_readout(s, phiq, eps);
  if (phiq.size() != s.W.cols())
    throw ShapeError("delta_readout: dimension mismatch");
  return s.W * phiq;
}

// ---- quadratic reference oracles -----------------------------------------

// V softmax(K^T q)
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> softmax_attention_oracle(
    const Mat<Scalar>& keys, const Mat<Scalar>& values,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& q) {
  if (keys.cols() < 1) throw std::invalid_argument("softmax oracle: empty memory");
  if (keys.cols() != values.cols() || keys.rows() != q.size())
    throw ShapeError("softmax oracle: dimension mismatch");
  Eigen::Array<Scalar, Eigen::Dynamic, 1> logits =
      (keys.transpose() * q).array();
  logits -= logits.maxCoeff();
  Eigen::Array<Scalar, Eigen::Dynamic, 1> w = logits.exp();
  w /= w.sum();
  return values * w.matrix();
}

// sum_j v_j (phi(k_j) . phi(q)) / (sum_j phi(k_j) . phi(q) + eps)
template <typename Scalar>
Eigen::Matrix<Scalar, Eigen::Dynamic, 1> linearized_attention_oracle(
    const Mat<Scalar>& phi_keys, const Mat<Scalar>& values,
    const Eigen::Matrix<Scalar, Eigen::Dynamic, 1>& phi_q,
    Scalar eps = Scalar(kEpsGuard)) {
  if (phi_keys.cols() < 1)
    throw std::invalid_argument("linearized oracle: empty memory");
  if (phi_keys.cols() != values.cols() || phi_keys.rows() != phi_q.size())
    throw ShapeError("linearized oracle: dimension mismatch");
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> sims = phi_keys.transpose() * phi_q;
  return (values * sims) / (sims.sum() + eps);
}

// ---- full-sequence layer with memory-efficient backward ------------------

// Instrumentation for the number of simultaneously live d_value-by-d_dot
// buffers inside backward_sequence.
struct BufferStats {
  long live = 0;
  long peak = 0;
  void on_alloc() {
    if (++live > peak) peak = live;
  }
  void on_free() { --live; }
};

// Everything backward needs, O(L * (d_dot + d_value)) total; no per-step
// fast weight matrices are retained.
struct StepRecord {
  SequenceConfig config;
  bool per_step_queries = true;
  Matrix phi_k;              // d_dot x L
  Matrix values;             // d_value x L
  Eigen::RowVectorXd beta;   // L (delta rule only)
  Matrix phi_q;              // d_dot x Lq
  Matrix v_bar;              // d_value x L (delta rule only)
  Eigen::VectorXd read_denom;  // Lq (attention)
  Eigen::VectorXd vbar_denom;  // L  (attention + delta)
  Eigen::Index length() const { return phi_k.cols(); }
};

struct SequenceGrads {
  Matrix phi_k;
  Matrix values;
  Eigen::RowVectorXd beta;
  Matrix phi_q;
};

// Runs the recurrence over i = 1..L. With per_step_queries, phi_q has one
// column per step and outputs are the per-step readouts; otherwise all
// queries read from the final state.
std::pair<Matrix, StepRecord> forward_sequence(const Matrix& phi_k,
                                               const Matrix& values,
                                               const Eigen::RowVectorXd& beta,
                                               const Matrix& phi_q,
                                               const SequenceConfig& config,
                                               bool per_step_queries);

// Exact gradients via sqrt(L) checkpointing with within-segment replay.
// Peak simultaneous fast-weight buffers is bounded by 2*ceil(sqrt(L)) + 4.
SequenceGrads backward_sequence(const StepRecord& record, const Matrix& g_out,
                                BufferStats* stats = nullptr);

// Differentiable wrapper; beta may be an undefined Tensor for the sum rule.
Tensor fast_weight_sequence(Tape& tape, const Tensor& phi_k,
                            const Tensor& values, const Tensor& beta,
                            const Tensor& phi_q, const SequenceConfig& config,
                            bool per_step_queries,
                            BufferStats* stats = nullptr);

}  // namespace fwl
