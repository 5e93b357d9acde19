#pragma once

#include <functional>
#include <vector>

#include "msdcnn/tensor.hpp"

namespace msdcnn {

// Central finite-difference check of a scalar-valued function.
//
//   value(point)    -> scalar (typically an mse_loss over some pipeline)
//   gradient(point) -> analytic gradients, one tensor per point entry
//
// Returns the max over every scalar parameter of
//   |analytic - numeric| / max(|analytic|, |numeric|, 1e-8)
// with numeric the central difference (f(x+eps) - f(x-eps)) / (2 eps).
// eps must lie in [1e-6, 1e-4]; non-finite values raise NumericError naming
// the parameter and entry.
double gradcheck(
    const std::function<double(const std::vector<Tensor>&)>& value,
    const std::function<std::vector<Tensor>(const std::vector<Tensor>&)>&
        gradient,
    const std::vector<Tensor>& point, double eps);

}  // namespace msdcnn
