#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "msdcnn/network.hpp"
#include "msdcnn/tensor.hpp"

namespace msdcnn {

// 10*log10(peak^2 / MSE); identical images return +infinity.
double psnr(const Tensor& a, const Tensor& b, double peak = 255.0);

// Single-scale SSIM: 11x11 Gaussian window (sigma 1.5), K1=0.01, K2=0.03,
// L=255, averaged over fully interior windows.  Inputs on the 0..255 scale.
double ssim(const Tensor& a, const Tensor& b);

// Median wall time of forward() in milliseconds over `repeats` runs after
// one warm-up call; repeats must be >= 3.
double time_reconstruction(const Network& net, const Tensor& image,
                           int repeats);

// Pads to the network's block multiple, runs the pipeline, crops back to the
// original dims and clamps to [0,1].  The shared evaluation path for the
// trainer's validation pass and the CLI.
Tensor reconstruct_image(const Network& net, const Tensor& image);

struct QualityRow {
  std::string name;
  double mr = 0.0;
  double psnr_db = 0.0;
  double ssim_value = 0.0;
  double millis = 0.0;
};

struct QualityReport {
  std::vector<QualityRow> rows;

  QualityRow mean() const;  // arithmetic mean of every numeric column

  // Tab-separated table: header, one row per image, then the mean row.
  void serialize(std::ostream& out) const;
  static QualityReport parse(std::istream& in);
};

}  // namespace msdcnn
