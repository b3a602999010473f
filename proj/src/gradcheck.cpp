#include "fwl/gradcheck.hpp"

#include <cmath>

#include "fwl/feature_maps.hpp"
#include "fwl/rng.hpp"

namespace fwl {

double finite_diff_check(const ScalarFn& f, std::vector<Tensor>& params,
                         double eps) {
  if (eps < 1e-6 || eps > 1e-4)
    throw std::invalid_argument("finite_diff_check: eps must be in [1e-6, 1e-4]");

  auto eval = [&](bool with_grad) {
    Tape tape(with_grad);
    Tensor loss = f(tape, params);
    if (!loss.is_scalar())
      throw std::invalid_argument("finite_diff_check: f must return a scalar");
    const double v = loss.value()(0, 0);
    if (with_grad) tape.backward(loss);
    return v;
  };

  // two forward passes must agree bit for bit
  const double v1 = eval(false);
  const double v2 = eval(false);
  if (v1 != v2)
    throw std::runtime_error("finite_diff_check: f is not deterministic");

  for (auto& p : params) p.zero_grad();
  eval(true);

  double max_rel = 0.0;
  for (auto& p : params) {
    const Matrix ga = p.has_grad() ? p.grad()
                                   : Matrix::Zero(p.rows(), p.cols());
    for (Eigen::Index j = 0; j < p.cols(); ++j) {
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        const double orig = p.value()(i, j);
        p.value()(i, j) = orig + eps;
        const double fp = eval(false);
        p.value()(i, j) = orig - eps;
        const double fm = eval(false);
        p.value()(i, j) = orig;
        const double gn = (fp - fm) / (2.0 * eps);
        const double rel =
            std::abs(ga(i, j) - gn) / std::max(1.0, std::abs(gn));
        if (rel > max_rel) max_rel = rel;
      }
    }
    p.zero_grad();
  }
  return max_rel;
}

double gradcheck_combination(UpdateRule rule, PhiKind phi, Normalization norm,
                             int length, int dim, std::uint64_t seed) {
  Rng rng(seed);
  RngStream rs = rng.stream("gradcheck-inputs");

  const int d_key = dim;
  const int d_value = dim;
  FeatureMap fm = make_feature_map(phi, d_key, /*nu=*/1,
                                   /*m=*/2 * d_key,
                                   norm == Normalization::SumNorm, rng);

  std::vector<Tensor> params{
      Tensor::param(0.5 * rs.normal_matrix(d_key, length)),    // keys
      Tensor::param(rs.normal_matrix(d_value, length)),        // values
      Tensor::param(0.5 * rs.normal_matrix(d_key, length)),    // queries
      Tensor::param(0.5 * rs.normal_matrix(1, length))};       // beta logits
  const Matrix target = rs.normal_matrix(d_value, length);

  SequenceConfig seq{rule, norm, kEpsGuard};
  ScalarFn f = [&fm, &seq, &target, rule](Tape& tape,
                                          const std::vector<Tensor>& p) {
    Tensor phi_k = apply_phi(tape, fm, p[0]);
    Tensor phi_q = apply_phi(tape, fm, p[2]);
    Tensor beta;
    if (rule == UpdateRule::Delta) beta = sigmoid(tape, p[3]);
    Tensor y = fast_weight_sequence(tape, phi_k, p[1], beta, phi_q, seq,
                                    /*per_step_queries=*/true);
    return half_squared_error(tape, y, target);
  };
  return finite_diff_check(f, params);
}

}  // namespace fwl
