#include "msdcnn/metrics.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "msdcnn/data_io.hpp"

namespace msdcnn {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  require_same_dims(a, b, "psnr");
  if (!(peak > 0.0)) throw UsageError("psnr: peak must be positive");
  double sum = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = a.data[i] - b.data[i];
    sum += d * d;
  }
  const double mse = sum / static_cast<double>(a.data.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {

constexpr int kWindow = 11;

std::array<double, kWindow * kWindow> gaussian_window() {
  std::array<double, kWindow * kWindow> w{};
  const double sigma = 1.5;
  const int half = kWindow / 2;
  double total = 0.0;
  for (int i = 0; i < kWindow; ++i) {
    for (int j = 0; j < kWindow; ++j) {
      const double dy = i - half, dx = j - half;
      w[static_cast<std::size_t>(i) * kWindow + j] =
          std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      total += w[static_cast<std::size_t>(i) * kWindow + j];
    }
  }
  for (double& v : w) v /= total;
  return w;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  require_same_dims(a, b, "ssim");
  if (a.dims.n != 1 || a.dims.c != 1) {
    throw UsageError("ssim: expects a single-image (1, 1, H, W) tensor, got " +
                     to_string(a.dims));
  }
  const std::int64_t H = a.dims.h, W = a.dims.w;
  if (H < kWindow || W < kWindow) {
    throw GeometryError("ssim: image " + std::to_string(H) + "x" +
                        std::to_string(W) + " is smaller than the " +
                        std::to_string(kWindow) + "x" +
                        std::to_string(kWindow) + " window");
  }

  static const std::array<double, kWindow * kWindow> win = gaussian_window();
  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);

  double total = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = 0; y + kWindow <= H; ++y) {
    for (std::int64_t x = 0; x + kWindow <= W; ++x) {
      double mu1 = 0.0, mu2 = 0.0, sxx = 0.0, syy = 0.0, sxy = 0.0;
      for (int i = 0; i < kWindow; ++i) {
        const double* pa = a.data.data() + (y + i) * W + x;
        const double* pb = b.data.data() + (y + i) * W + x;
        const double* pw = win.data() + static_cast<std::size_t>(i) * kWindow;
        for (int j = 0; j < kWindow; ++j) {
          const double va = pa[j], vb = pb[j], wv = pw[j];
          mu1 += wv * va;
          mu2 += wv * vb;
          // Pixel products are formed before the window weight so that
          // swapping the images swaps operands of commutative ops only:
          // ssim(a, b) and ssim(b, a) are then bitwise identical.
          sxx += wv * (va * va);
          syy += wv * (vb * vb);
          sxy += wv * (va * vb);
        }
      }
      const double var1 = sxx - mu1 * mu1;
      const double var2 = syy - mu2 * mu2;
      const double cov = sxy - mu1 * mu2;
      // The mean-square sum is written on the sorted pair: fp contraction may
      // fuse it into nested fmas, and sorting keeps the nesting -- and hence
      // the bits -- independent of the argument order.
      const double lo = std::min(mu1, mu2), hi = std::max(mu1, mu2);
      const double num = (2.0 * (mu1 * mu2) + c1) * (2.0 * cov + c2);
      const double den = (lo * lo + hi * hi + c1) * (var1 + var2 + c2);
      total += num / den;
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double time_reconstruction(const Network& net, const Tensor& image,
                           int repeats) {
  if (repeats < 3) {
    throw UsageError("time_reconstruction: repeats must be >= 3, got " +
                     std::to_string(repeats));
  }
  forward(net, image);  // warm-up
  std::vector<double> millis(static_cast<std::size_t>(repeats));
  for (int r = 0; r < repeats; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    forward(net, image);
    const auto t1 = std::chrono::steady_clock::now();
    millis[static_cast<std::size_t>(r)] =
        std::chrono::duration<double, std::milli>(t1 - t0).count();
  }
  std::sort(millis.begin(), millis.end());
  const std::size_t mid = millis.size() / 2;
  if (millis.size() % 2 == 1) return millis[mid];
  return 0.5 * (millis[mid - 1] + millis[mid]);
}

Tensor reconstruct_image(const Network& net, const Tensor& image) {
  PadResult padded = pad_to_multiple(image, net.config.block_size);
  Tensor out = forward(net, padded.padded);
  out = crop_to(out, padded.original_dims);
  for (double& v : out.data) v = std::clamp(v, 0.0, 1.0);
  return out;
}

QualityRow QualityReport::mean() const {
  if (rows.empty()) throw UsageError("quality report: no rows to average");
  QualityRow m;
  m.name = "mean";
  for (const QualityRow& r : rows) {
    m.mr += r.mr;
    m.psnr_db += r.psnr_db;
    m.ssim_value += r.ssim_value;
    m.millis += r.millis;
  }
  const double n = static_cast<double>(rows.size());
  m.mr /= n;
  m.psnr_db /= n;
  m.ssim_value /= n;
  m.millis /= n;
  return m;
}

namespace {

void write_row(std::ostream& out, const QualityRow& r) {
  out << r.name << '\t' << std::fixed << std::setprecision(4) << r.mr << '\t'
      << std::setprecision(4) << r.psnr_db << '\t' << std::setprecision(6)
      << r.ssim_value << '\t' << std::setprecision(3) << r.millis << '\n';
}

}  // namespace

void QualityReport::serialize(std::ostream& out) const {
  out << "name\tmr\tpsnr\tssim\tms\n";
  for (const QualityRow& r : rows) write_row(out, r);
  if (!rows.empty()) write_row(out, mean());
}

QualityReport QualityReport::parse(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "name\tmr\tpsnr\tssim\tms") {
    throw FormatError("quality report: missing or malformed header");
  }
  QualityReport report;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream fields(line);
    QualityRow r;
    std::string tok;
    if (!std::getline(fields, r.name, '\t')) {
      throw FormatError("quality report: malformed row '" + line + "'");
    }
    try {
      if (!std::getline(fields, tok, '\t')) throw std::invalid_argument(tok);
      r.mr = std::stod(tok);
      if (!std::getline(fields, tok, '\t')) throw std::invalid_argument(tok);
      r.psnr_db = std::stod(tok);
      if (!std::getline(fields, tok, '\t')) throw std::invalid_argument(tok);
      r.ssim_value = std::stod(tok);
      if (!std::getline(fields, tok, '\t')) throw std::invalid_argument(tok);
      r.millis = std::stod(tok);
    } catch (const std::exception&) {
      throw FormatError("quality report: malformed row '" + line + "'");
    }
    if (r.name == "mean") continue;  // derived row, not stored
    report.rows.push_back(std::move(r));
  }
  return report;
}

}  // namespace msdcnn
