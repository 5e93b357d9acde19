#include "msdcnn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace msdcnn {

double gradcheck(
    const std::function<double(const std::vector<Tensor>&)>& value,
    const std::function<std::vector<Tensor>(const std::vector<Tensor>&)>&
        gradient,
    const std::vector<Tensor>& point, double eps) {
  if (!(eps >= 1e-6 && eps <= 1e-4)) {
    throw UsageError("gradcheck: eps must lie in [1e-6, 1e-4], got " +
                     std::to_string(eps));
  }
  if (point.empty()) throw UsageError("gradcheck: empty point");

  std::vector<Tensor> analytic = gradient(point);
  if (analytic.size() != point.size()) {
    throw UsageError("gradcheck: gradient returned " +
                     std::to_string(analytic.size()) + " tensors for " +
                     std::to_string(point.size()) + " parameters");
  }
  for (std::size_t p = 0; p < analytic.size(); ++p) {
    if (!(analytic[p].dims == point[p].dims)) {
      throw DimensionError("gradcheck: gradient " + std::to_string(p) +
                           " has dims " + to_string(analytic[p].dims) +
                           ", parameter has " + to_string(point[p].dims));
    }
    if (!analytic[p].all_finite()) {
      throw NumericError("gradcheck: non-finite analytic gradient in parameter " +
                         std::to_string(p));
    }
  }

  std::vector<Tensor> probe = point;
  double worst = 0.0;
  for (std::size_t p = 0; p < probe.size(); ++p) {
    for (std::size_t i = 0; i < probe[p].data.size(); ++i) {
      const double saved = probe[p].data[i];
      probe[p].data[i] = saved + eps;
      const double up = value(probe);
      probe[p].data[i] = saved - eps;
      const double down = value(probe);
      probe[p].data[i] = saved;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        throw NumericError("gradcheck: non-finite value at parameter " +
                           std::to_string(p) + " entry " + std::to_string(i));
      }
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[p].data[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace msdcnn
