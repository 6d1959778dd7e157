#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "eedkit/image.hpp"
#include "eedkit/params.hpp"

namespace eedkit {

/// Normalized, symmetric, odd-length sampled Gaussian.
class Kernel1D {
 public:
  Kernel1D(double sigma, int size);

  std::span<const double> weights() const { return weights_; }
  int size() const { return static_cast<int>(weights_.size()); }
  int radius() const { return size() / 2; }
  double sigma() const { return sigma_; }

 private:
  double sigma_;
  std::vector<double> weights_;
};

/// Throws ParameterError for sigma <= 0 or an even / too small size.
Kernel1D make_gaussian_kernel(double sigma, int size);

/// Per-pixel, per-channel spatial derivatives. Same planar layout as
/// Image: component planes dx and dy, each channels * H * W.
struct GradientField {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<double> dx;
  std::vector<double> dy;

  std::size_t index(int row, int col, int channel) const {
    return (static_cast<std::size_t>(channel) * height + row) * width + col;
  }
};

/// Field of symmetric 2x2 matrices [[a, b], [b, c]], one per pixel.
struct TensorField {
  int height = 0;
  int width = 0;
  std::vector<double> a;
  std::vector<double> b;
  std::vector<double> c;

  TensorField() = default;
  TensorField(int h, int w) : height(h), width(w), a(plane()), b(plane()), c(plane()) {}

  std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
  std::size_t index(int row, int col) const {
    return static_cast<std::size_t>(row) * width + col;
  }

  /// Every pixel set to [[a, b], [b, c]].
  static TensorField uniform(int h, int w, double a, double b, double c);
};

/// Separable Gaussian convolution per channel, horizontal pass then vertical
/// pass. Borders use half-sample mirror reflection (u[-1] = u[0]).
Image convolve_gaussian(const Image& img, const Kernel1D& k);

/// Central differences. Borders use whole-sample reflection (u[-1] = u[1]),
/// so the boundary-normal derivative is exactly zero.
GradientField spatial_gradient(const Image& img);

/// Sum over channels of the outer products of the channel gradients.
TensorField structure_tensor(const GradientField& g);

/// Each component plane convolved with the separable Gaussian (half-sample
/// mirror). Maps positive semidefinite fields to positive semidefinite fields.
TensorField smooth_tensor(const TensorField& t, const Kernel1D& k);

/// Charbonnier diffusivity 1 / sqrt(1 + s / kappa^2).
double charbonnier(double s, double kappa);

/// Closed-form eigenstructure of a symmetric 2x2 matrix.
struct Eigen2 {
  double mu1;     ///< larger eigenvalue
  double mu2;     ///< smaller eigenvalue
  double v1x;     ///< unit eigenvector of mu1
  double v1y;
  bool degenerate;
};

/// Eigenvalues and dominant eigenvector of [[a, b], [b, c]]. When
/// mu1 - mu2 <= 1e-12 * max(mu1, 1) the matrix is treated as isotropic and
/// the eigenvectors are the coordinate axes.
Eigen2 eigen_sym2(double a, double b, double c);

/// Per pixel D = g(mu1) v1 v1^T + v2 v2^T where (mu1, v1) is the dominant
/// eigenpair of j and g the Charbonnier diffusivity. Across-edge diffusion is
/// reduced, along-edge diffusion stays at 1.
TensorField diffusion_tensor(const TensorField& j, double kappa);

/// One explicit step u + tau * div(D grad u) per channel with D shared across
/// channels. Divergence-form stencil:
///   axial terms use half-point diffusivities (arithmetic means),
///   mixed terms use central differences with b taken at the neighbor.
/// The border is zero-flux: u, a and c are mirrored (half-sample) and b is
/// mirrored with a sign flip, since reflecting a tensor negates its
/// off-diagonal. The update conserves every channel's mean.
Image divergence_step(const Image& u, const TensorField& d, double tau);

/// 1/2 * sum over pixels and channels of grad(u)^T D grad(u), with grad from
/// spatial_gradient.
double energy(const Image& u, const TensorField& d);

/// 1/2 * sum of |grad u|^2, i.e. energy with D = I.
double dirichlet_energy(const Image& u);

/// Snapshot emitted by eed_run.
struct Snapshot {
  int step;
  Image image;
};

/// Called after every completed step with the current state. Return false to
/// stop the run early.
using StepObserver = std::function<bool(int step, const Image& u)>;

/// Reusable solver: owns the work buffers so repeated steps do not allocate.
class EedSolver {
 public:
  EedSolver(int height, int width, int channels, const DiffusionParams& params);

  /// Advances u by one step in place (the update reads only the previous
  /// state; the result is swapped in afterwards).
  void step(Image& u);

  /// Diffusion tensor computed by the last call to step().
  const TensorField& last_tensor() const { return diffusion_; }

  /// Computes the diffusion tensor for the current state without stepping.
  const TensorField& compute_tensor(const Image& u);

 private:
  void apply_stencil(const Image& u, Image& out) const;

  DiffusionParams params_;
  Kernel1D presmooth_;
  Kernel1D orient_;
  Image smoothed_;
  Image next_;
  std::vector<double> scratch_;
  TensorField structure_;
  TensorField diffusion_;
};

/// Full EED with orientation smoothing. Iterates p.steps times and returns
/// a copy of u at every index of p.effective_snapshots() (index 0 is the
/// input). No clamping happens between steps. Throws NumericalError when a
/// sample turns non-finite. If the observer returns false the run stops and
/// the snapshots collected so far are returned.
std::vector<Snapshot> eed_run(const Image& img, const DiffusionParams& p,
                              const StepObserver& observer = {});

}  // namespace eedkit
