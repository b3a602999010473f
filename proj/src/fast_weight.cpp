#include "fwl/fast_weight.hpp"

#include <cmath>
#include <memory>
#include <vector>

namespace fwl {

namespace {

// RAII-tracked fast-weight-sized buffer so tests can assert the live count.
class WBuf {
 public:
  WBuf(Eigen::Index r, Eigen::Index c, BufferStats* st)
      : st_(st), m_(Matrix::Zero(r, c)) {
    if (st_) st_->on_alloc();
  }
  WBuf(WBuf&& o) noexcept : st_(o.st_), m_(std::move(o.m_)) { o.st_ = nullptr; }
  WBuf(const WBuf&) = delete;
  WBuf& operator=(const WBuf&) = delete;
  ~WBuf() {
    if (st_) st_->on_free();
  }
  Matrix& m() { return m_; }
  const Matrix& m() const { return m_; }

 private:
  BufferStats* st_;
  Matrix m_;
};

}  // namespace

std::pair<Matrix, StepRecord> forward_sequence(const Matrix& phi_k,
                                               const Matrix& values,
                                               const Eigen::RowVectorXd& beta,
                                               const Matrix& phi_q,
                                               const SequenceConfig& config,
                                               bool per_step_queries) {
  const Eigen::Index L = phi_k.cols();
  const Eigen::Index d_dot = phi_k.rows();
  const Eigen::Index d_value = values.rows();
  const bool delta = config.rule == UpdateRule::Delta;
  const bool attention = uses_accumulator(config.norm);

  if (values.cols() != L) throw ShapeError("forward_sequence: values/keys length mismatch");
  if (phi_q.rows() != d_dot) throw ShapeError("forward_sequence: query dim mismatch");
  if (per_step_queries && phi_q.cols() != L)
    throw ShapeError("forward_sequence: per-step queries need one query per step");
  if (delta) {
    if (beta.size() != L) throw ShapeError("forward_sequence: beta length mismatch");
    for (Eigen::Index i = 0; i < L; ++i)
      if (!(beta(i) >= 0.0 && beta(i) <= 1.0))
        throw std::invalid_argument("forward_sequence: beta must lie in [0, 1]");
  }

  const Eigen::Index n_q = phi_q.cols();
  StepRecord rec;
  rec.config = config;
  rec.per_step_queries = per_step_queries;
  rec.phi_k = phi_k;
  rec.values = values;
  rec.beta = beta;
  rec.phi_q = phi_q;
  if (delta) rec.v_bar.resize(d_value, L);
  rec.read_denom = Eigen::VectorXd::Ones(n_q);
  if (delta && attention) rec.vbar_denom = Eigen::VectorXd::Ones(L);

  Matrix W = Matrix::Zero(d_value, d_dot);
  Eigen::VectorXd z = Eigen::VectorXd::Zero(d_dot);
  Matrix out(d_value, n_q);

  for (Eigen::Index i = 0; i < L; ++i) {
    const auto k = phi_k.col(i);
    const auto v = values.col(i);
    if (delta) {
      Eigen::VectorXd v_bar;
      if (attention) {
        const double t = z.dot(k) + config.eps;
        rec.vbar_denom(i) = t;
        // v_bar at the first step is defined to be zero; W=0 gives it anyway
        v_bar = (W * k) / t;
        z += k;
      } else {
        v_bar = W * k;
      }
      rec.v_bar.col(i) = v_bar;
      W.noalias() += beta(i) * (v - v_bar) * k.transpose();
    } else {
      if (attention) z += k;
      W.noalias() += v * k.transpose();
    }
    if (per_step_queries) {
      const auto q = phi_q.col(i);
      const double s = attention ? z.dot(q) + config.eps : 1.0;
      rec.read_denom(i) = s;
      out.col(i) = (W * q) / s;
    }
  }
  if (!per_step_queries) {
    for (Eigen::Index j = 0; j < n_q; ++j) {
      const auto q = phi_q.col(j);
      const double s = attention ? z.dot(q) + config.eps : 1.0;
      rec.read_denom(j) = s;
      out.col(j) = (W * q) / s;
    }
  }
  return {std::move(out), std::move(rec)};
}

SequenceGrads backward_sequence(const StepRecord& rec, const Matrix& g_out,
                                BufferStats* stats) {
  const Eigen::Index L = rec.length();
  const Eigen::Index d_dot = rec.phi_k.rows();
  const Eigen::Index d_value = rec.values.rows();
  const Eigen::Index n_q = rec.phi_q.cols();
  const bool delta = rec.config.rule == UpdateRule::Delta;
  const bool attention = uses_accumulator(rec.config.norm);

  if (g_out.rows() != d_value || g_out.cols() != n_q)
    throw ShapeError("backward_sequence: output gradient shape mismatch");

  SequenceGrads g;
  g.phi_k = Matrix::Zero(d_dot, L);
  g.values = Matrix::Zero(d_value, L);
  g.phi_q = Matrix::Zero(d_dot, n_q);
  if (delta) g.beta = Eigen::RowVectorXd::Zero(L);
  if (L == 0) return g;

  // replays update i (0-based) onto W using the recorded v_bar, no matvec
  auto apply_update = [&rec, delta](Matrix& w, Eigen::Index i) {
    const auto k = rec.phi_k.col(i);
    if (delta)
      w.noalias() += rec.beta(i) *
                     (rec.values.col(i) - rec.v_bar.col(i)) * k.transpose();
    else
      w.noalias() += rec.values.col(i) * k.transpose();
  };

  const Eigen::Index c =
      static_cast<Eigen::Index>(std::ceil(std::sqrt(static_cast<double>(L))));

  // pass 1: checkpoints every c steps plus the final state
  std::vector<WBuf> checkpoints;  // checkpoints[s-1] holds W after s*c steps
  WBuf w_final(d_value, d_dot, stats);
  for (Eigen::Index i = 1; i <= L; ++i) {
    apply_update(w_final.m(), i - 1);
    if (i < L && i % c == 0) {
      checkpoints.emplace_back(d_value, d_dot, stats);
      checkpoints.back().m() = w_final.m();
    }
  }

  WBuf grad_w(d_value, d_dot, stats);
  Eigen::VectorXd grad_z = Eigen::VectorXd::Zero(d_dot);
  Eigen::VectorXd z_run =
      attention ? Eigen::VectorXd(rec.phi_k.rowwise().sum())
                : Eigen::VectorXd();

  // y = W q / s readout pulled back through W, q and (attention) z
  auto readout_backward = [&](const Matrix& w_i, Eigen::Index qcol) {
    const auto q = rec.phi_q.col(qcol);
    const Eigen::VectorXd gy = g_out.col(qcol);
    const double s = rec.read_denom(qcol);
    grad_w.m().noalias() += (gy / s) * q.transpose();
    Eigen::VectorXd gq = w_i.transpose() * gy / s;
    if (attention) {
      const Eigen::VectorXd y = (w_i * q) / s;
      const double gd = gy.dot(y) / s;
      gq -= gd * z_run;
      grad_z -= gd * q;
    }
    g.phi_q.col(qcol) += gq;
  };

  if (!rec.per_step_queries)
    for (Eigen::Index j = 0; j < n_q; ++j) readout_backward(w_final.m(), j);

  for (Eigen::Index a = ((L - 1) / c) * c; a >= 0; a -= c) {
    const Eigen::Index b = std::min(a + c, L);
    // within-segment replay: stack[t] = W after a+t steps
    std::vector<WBuf> stack;
    stack.reserve(static_cast<std::size_t>(b - a));
    stack.emplace_back(d_value, d_dot, stats);
    if (a > 0) stack[0].m() = checkpoints[a / c - 1].m();
    for (Eigen::Index t = 1; t < b - a; ++t) {
      stack.emplace_back(d_value, d_dot, stats);
      stack.back().m() = stack[t - 1].m();
      apply_update(stack.back().m(), a + t - 1);
    }

    for (Eigen::Index i = b; i > a; --i) {
      const Eigen::Index idx = i - 1;
      const Matrix& w_i = (i == b) ? (b == L ? w_final.m()
                                             : checkpoints[b / c - 1].m())
                                   : stack[i - a].m();
      const Matrix& w_prev = stack[i - 1 - a].m();
      if (rec.per_step_queries) readout_backward(w_i, idx);

      const auto k = rec.phi_k.col(idx);
      if (attention) g.phi_k.col(idx) += grad_z;

      if (delta) {
        const double beta = rec.beta(idx);
        const Eigen::VectorXd diff =
            rec.values.col(idx) - rec.v_bar.col(idx);
        const Eigen::VectorXd u = beta * diff;
        const Eigen::VectorXd gu = grad_w.m() * k;
        g.phi_k.col(idx) += grad_w.m().transpose() * u;
        g.beta(idx) += gu.dot(diff);
        g.values.col(idx) += beta * gu;
        // through v_bar = W_prev k / t  (skip step 1 under attention where
        // v_bar is the defined constant 0)
        if (!(attention && i == 1)) {
          const Eigen::VectorXd g_vbar = -beta * gu;
          const double t = attention ? rec.vbar_denom(idx) : 1.0;
          grad_w.m().noalias() += (g_vbar / t) * k.transpose();
          Eigen::VectorXd gk = w_prev.transpose() * g_vbar / t;
          if (attention) {
            const Eigen::VectorXd z_prev = z_run - k;
            const double gd = g_vbar.dot(rec.v_bar.col(idx)) / t;
            gk -= gd * z_prev;
            grad_z -= gd * k;
          }
          g.phi_k.col(idx) += gk;
        }
      } else {
        g.values.col(idx) += grad_w.m() * k;
        g.phi_k.col(idx) += grad_w.m().transpose() * rec.values.col(idx);
      }
      if (attention) z_run -= k;
    }
    if (a == 0) break;
  }
  return g;
}

Tensor fast_weight_sequence(Tape& tape, const Tensor& phi_k,
                            const Tensor& values, const Tensor& beta,
                            const Tensor& phi_q, const SequenceConfig& config,
                            bool per_step_queries, BufferStats* stats) {
  const bool delta = config.rule == UpdateRule::Delta;
  Eigen::RowVectorXd beta_row;
  if (delta) {
    if (!beta.defined())
      throw std::invalid_argument("fast_weight_sequence: delta rule needs beta");
    if (beta.rows() != 1)
      throw ShapeError("fast_weight_sequence: beta must be a row vector");
    beta_row = beta.value().row(0);
  }
  auto [out, rec] = forward_sequence(phi_k.value(), values.value(), beta_row,
                                     phi_q.value(), config, per_step_queries);
  auto record = std::make_shared<StepRecord>(std::move(rec));
  std::vector<Tensor> inputs{phi_k, values, phi_q};
  if (delta) inputs.push_back(beta);
  return tape.record(
      std::move(out), inputs,
      [phi_k, values, beta, phi_q, record, delta, stats](const Tensor& out_t) {
        SequenceGrads gr = backward_sequence(*record, out_t.grad(), stats);
        if (phi_k.requires_grad()) phi_k.accumulate_grad(gr.phi_k);
        if (values.requires_grad()) values.accumulate_grad(gr.values);
        if (phi_q.requires_grad()) phi_q.accumulate_grad(gr.phi_q);
        if (delta && beta.requires_grad()) beta.accumulate_grad(gr.beta);
      });
}

}  // namespace fwl
