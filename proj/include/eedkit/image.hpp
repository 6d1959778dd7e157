#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace eedkit {

/// Invalid argument or parameter value.
class ParameterError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// File system or codec failure.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Lookup of a named entity that does not exist.
class NotFoundError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A non-finite sample appeared during diffusion.
class NumericalError : public std::runtime_error {
 public:
  NumericalError(int step, int row, int col, int channel);

  int step() const { return step_; }
  int row() const { return row_; }
  int col() const { return col_; }
  int channel() const { return channel_; }

 private:
  int step_, row_, col_, channel_;
};

/// H x W x C image of real samples, nominally in [0,1]. Storage is planar:
/// channel c occupies a contiguous H*W block in row-major order.
class Image {
 public:
  Image() = default;
  Image(int height, int width, int channels, double fill = 0.0);

  int height() const { return height_; }
  int width() const { return width_; }
  int channels() const { return channels_; }
  std::size_t plane_size() const {
    return static_cast<std::size_t>(height_) * static_cast<std::size_t>(width_);
  }
  bool empty() const { return samples_.empty(); }

  double& operator()(int row, int col, int channel = 0) {
    return samples_[channel * plane_size() + static_cast<std::size_t>(row) * width_ + col];
  }
  double operator()(int row, int col, int channel = 0) const {
    return samples_[channel * plane_size() + static_cast<std::size_t>(row) * width_ + col];
  }

  std::span<double> plane(int channel) {
    return {samples_.data() + channel * plane_size(), plane_size()};
  }
  std::span<const double> plane(int channel) const {
    return {samples_.data() + channel * plane_size(), plane_size()};
  }

  std::span<double> samples() { return samples_; }
  std::span<const double> samples() const { return samples_; }

  bool same_shape(const Image& other) const {
    return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
  }

  /// Mean of one channel.
  double channel_mean(int channel) const;

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int channels_ = 0;
  std::vector<double> samples_;
};

/// Throws ParameterError unless the image is at least 3x3 with one channel
/// and every sample is finite.
void validate_image(const Image& img);

/// Largest absolute sample difference between two images of equal shape.
double max_abs_diff(const Image& a, const Image& b);

}  // namespace eedkit
