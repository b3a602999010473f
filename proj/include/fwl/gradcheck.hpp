#pragma once

#include <functional>
#include <vector>

#include "fwl/fast_weight.hpp"
#include "fwl/tensor.hpp"

namespace fwl {

// Scalar-valued function of a parameter list, evaluated through a tape.
// Must be deterministic; finite_diff_check verifies this with a repeated
// forward pass.
using ScalarFn = std::function<Tensor(Tape&, const std::vector<Tensor>&)>;

// Max over all parameter entries of
//   |g_analytic - g_numeric| / max(1, |g_numeric|)
// where g_numeric comes from central differences with step eps.
double finite_diff_check(const ScalarFn& f, std::vector<Tensor>& params,
                         double eps = 1e-5);

// Full fast-weight layer (random inputs through phi, rule and
// normalization, per-step readouts, squared-error loss) checked against
// central differences. Returns the max relative error.
double gradcheck_combination(UpdateRule rule, PhiKind phi, Normalization norm,
                             int length, int dim, std::uint64_t seed);

}  // namespace fwl
