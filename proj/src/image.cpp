#include "eedkit/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eedkit {

NumericalError::NumericalError(int step, int row, int col, int channel)
    : std::runtime_error("non-finite sample at step " + std::to_string(step) + ", pixel (" +
                         std::to_string(row) + ", " + std::to_string(col) + "), channel " +
                         std::to_string(channel)),
      step_(step),
      row_(row),
      col_(col),
      channel_(channel) {}

Image::Image(int height, int width, int channels, double fill)
    : height_(height), width_(width), channels_(channels) {
  if (height < 0 || width < 0 || channels < 0) {
    throw ParameterError("image dimensions must be non-negative");
  }
  samples_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

double Image::channel_mean(int channel) const {
  auto p = plane(channel);
  if (p.empty()) return 0.0;
  return std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
}

void validate_image(const Image& img) {
  if (img.height() < 3 || img.width() < 3) {
    throw ParameterError("image must be at least 3x3, got " + std::to_string(img.height()) + "x" +
                         std::to_string(img.width()));
  }
  if (img.channels() < 1) throw ParameterError("image must have at least one channel");
  auto s = img.samples();
  auto bad = std::find_if(s.begin(), s.end(), [](double v) { return !std::isfinite(v); });
  if (bad != s.end()) throw ParameterError("image contains non-finite samples");
}

double max_abs_diff(const Image& a, const Image& b) {
  if (!a.same_shape(b)) throw ParameterError("max_abs_diff: shape mismatch");
  double worst = 0.0;
  auto sa = a.samples();
  auto sb = b.samples();
  for (std::size_t i = 0; i < sa.size(); ++i) worst = std::max(worst, std::abs(sa[i] - sb[i]));
  return worst;
}

}  // namespace eedkit
