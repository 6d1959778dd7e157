#include "eedkit/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>

namespace eedkit {

namespace {

// Half-sample symmetric reflection: ... u1 u0 | u0 u1 ... u(n-1) | u(n-1) ...
inline int reflect(int i, int n) {
  while (i < 0 || i >= n) {
    if (i < 0) i = -i - 1;
    if (i >= n) i = 2 * n - i - 1;
  }
  return i;
}

// Separable convolution of one H x W plane. `tmp` is resized as needed.
void convolve_plane(const double* in, double* out, int h, int w, const Kernel1D& k,
                    std::vector<double>& tmp) {
  const int r = k.radius();
  const auto wts = k.weights();
  const std::size_t n = static_cast<std::size_t>(h) * w;
  tmp.resize(n + static_cast<std::size_t>(w + 2 * r));
  double* horiz = tmp.data();
  double* row = tmp.data() + n;

  for (int y = 0; y < h; ++y) {
    const double* src = in + static_cast<std::size_t>(y) * w;
    for (int x = -r; x < w + r; ++x) row[x + r] = src[reflect(x, w)];
    double* dst = horiz + static_cast<std::size_t>(y) * w;
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int t = 0; t <= 2 * r; ++t) acc += wts[t] * row[x + t];
      dst[x] = acc;
    }
  }

  for (int y = 0; y < h; ++y) {
    double* dst = out + static_cast<std::size_t>(y) * w;
    std::fill(dst, dst + w, 0.0);
    for (int t = 0; t <= 2 * r; ++t) {
      const double wt = wts[t];
      const double* src = horiz + static_cast<std::size_t>(reflect(y + t - r, h)) * w;
      for (int x = 0; x < w; ++x) dst[x] += wt * src[x];
    }
  }
}

// Accumulates the structure tensor of an image directly from central
// differences (whole-sample reflection at the border).
void accumulate_structure(const Image& img, TensorField& j) {
  const int h = img.height();
  const int w = img.width();
  std::fill(j.a.begin(), j.a.end(), 0.0);
  std::fill(j.b.begin(), j.b.end(), 0.0);
  std::fill(j.c.begin(), j.c.end(), 0.0);
  for (int ch = 0; ch < img.channels(); ++ch) {
    const double* u = img.plane(ch).data();
    for (int y = 0; y < h; ++y) {
      const bool y_border = (y == 0 || y == h - 1);
      const double* up = u + static_cast<std::size_t>(y == 0 ? 0 : y - 1) * w;
      const double* dn = u + static_cast<std::size_t>(y == h - 1 ? y : y + 1) * w;
      const double* mid = u + static_cast<std::size_t>(y) * w;
      const std::size_t base = static_cast<std::size_t>(y) * w;
      for (int x = 0; x < w; ++x) {
        const double gx = (x == 0 || x == w - 1) ? 0.0 : 0.5 * (mid[x + 1] - mid[x - 1]);
        const double gy = y_border ? 0.0 : 0.5 * (dn[x] - up[x]);
        j.a[base + x] += gx * gx;
        j.b[base + x] += gx * gy;
        j.c[base + x] += gy * gy;
      }
    }
  }
}

inline double charbonnier_unchecked(double s, double inv_kappa2) {
  return 1.0 / std::sqrt(1.0 + s * inv_kappa2);
}

void diffusion_tensor_inplace(TensorField& t, double kappa) {
  const double inv_k2 = 1.0 / (kappa * kappa);
  for (std::size_t i = 0; i < t.plane(); ++i) {
    const double a = t.a[i];
    const double b = t.b[i];
    const double c = t.c[i];
    const double half_diff = 0.5 * (a - c);
    const double r = std::hypot(half_diff, b);
    const double mu1 = std::max(0.5 * (a + c) + r, 0.0);
    const double g = charbonnier_unchecked(mu1, inv_k2);
    // D = I + (g - 1) P with P the projector onto the dominant eigenvector.
    double pxx = 1.0, pxy = 0.0, pyy = 0.0;
    if (2.0 * r > 1e-12 * std::max(mu1, 1.0)) {
      pxx = 0.5 * (1.0 + half_diff / r);
      pyy = 0.5 * (1.0 - half_diff / r);
      pxy = 0.5 * b / r;
    }
    t.a[i] = 1.0 + (g - 1.0) * pxx;
    t.b[i] = (g - 1.0) * pxy;
    t.c[i] = 1.0 + (g - 1.0) * pyy;
  }
}

// Copies an H x W plane into an (H+2) x (W+2) buffer with a one-pixel
// half-sample mirror border; `sign` multiplies the ghost values.
void pad_plane(const double* src, int h, int w, double sign, std::vector<double>& dst) {
  const int pw = w + 2;
  dst.resize(static_cast<std::size_t>(h + 2) * pw);
  for (int y = -1; y <= h; ++y) {
    const int sy = reflect(y, h);
    const double ys = (sy == y) ? 1.0 : sign;
    const double* row = src + static_cast<std::size_t>(sy) * w;
    double* out = dst.data() + static_cast<std::size_t>(y + 1) * pw;
    out[0] = ys * sign * row[0];
    for (int x = 0; x < w; ++x) out[x + 1] = ys * row[x];
    out[w + 1] = ys * sign * row[w - 1];
  }
}

void check_finite(const Image& u, int step) {
  for (int ch = 0; ch < u.channels(); ++ch) {
    auto p = u.plane(ch);
    for (std::size_t i = 0; i < p.size(); ++i) {
      if (!std::isfinite(p[i])) {
        throw NumericalError(step, static_cast<int>(i / u.width()),
                             static_cast<int>(i % u.width()), ch);
      }
    }
  }
}

void check_tensor_shape(const Image& u, const TensorField& d) {
  if (u.height() != d.height || u.width() != d.width) {
    throw ParameterError("tensor field and image dimensions differ");
  }
}

// Shared stencil kernel; `ub`, `ab`, `bb`, `cb` are scratch buffers.
void stencil_update(const Image& u, const TensorField& d, double tau, Image& out,
                    std::vector<double>& ub, std::vector<double>& ab, std::vector<double>& bb,
                    std::vector<double>& cb) {
  const int h = u.height();
  const int w = u.width();
  const int pw = w + 2;
  pad_plane(d.a.data(), h, w, 1.0, ab);
  pad_plane(d.b.data(), h, w, -1.0, bb);
  pad_plane(d.c.data(), h, w, 1.0, cb);

  for (int ch = 0; ch < u.channels(); ++ch) {
    pad_plane(u.plane(ch).data(), h, w, 1.0, ub);
    double* dst = out.plane(ch).data();
    for (int y = 0; y < h; ++y) {
      const std::size_t I = static_cast<std::size_t>(y + 1) * pw;
      const double* u0 = ub.data() + I;
      const double* un = u0 - pw;  // row above
      const double* us = u0 + pw;  // row below
      const double* a0 = ab.data() + I;
      const double* b0 = bb.data() + I;
      const double* bn = b0 - pw;
      const double* bs = b0 + pw;
      const double* c0 = cb.data() + I;
      const double* cn = c0 - pw;
      const double* cs = c0 + pw;
      for (int x = 1; x <= w; ++x) {
        const double uc = u0[x];
        const double axial_x = 0.5 * (a0[x] + a0[x + 1]) * (u0[x + 1] - uc) -
                               0.5 * (a0[x - 1] + a0[x]) * (uc - u0[x - 1]);
        const double axial_y = 0.5 * (c0[x] + cs[x]) * (us[x] - uc) -
                               0.5 * (cn[x] + c0[x]) * (uc - un[x]);
        const double mixed_x = 0.25 * (b0[x + 1] * (us[x + 1] - un[x + 1]) -
                                       b0[x - 1] * (us[x - 1] - un[x - 1]));
        const double mixed_y = 0.25 * (bs[x] * (us[x + 1] - us[x - 1]) -
                                       bn[x] * (un[x + 1] - un[x - 1]));
        dst[static_cast<std::size_t>(y) * w + (x - 1)] =
            uc + tau * (axial_x + axial_y + mixed_x + mixed_y);
      }
    }
  }
}

}  // namespace

Kernel1D::Kernel1D(double sigma, int size) : sigma_(sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw ParameterError("gaussian sigma must be > 0");
  }
  if (size < 3 || size % 2 == 0) {
    throw ParameterError("gaussian kernel size must be odd and >= 3, got " + std::to_string(size));
  }
  weights_.resize(size);
  const int center = size / 2;
  double sum = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - center;
    weights_[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    sum += weights_[i];
  }
  for (auto& v : weights_) v /= sum;
  // exact symmetry, independent of summation order
  for (int i = 0; i < center; ++i) weights_[size - 1 - i] = weights_[i];
}

Kernel1D make_gaussian_kernel(double sigma, int size) { return Kernel1D(sigma, size); }

TensorField TensorField::uniform(int h, int w, double a, double b, double c) {
  TensorField t(h, w);
  std::fill(t.a.begin(), t.a.end(), a);
  std::fill(t.b.begin(), t.b.end(), b);
  std::fill(t.c.begin(), t.c.end(), c);
  return t;
}

Image convolve_gaussian(const Image& img, const Kernel1D& k) {
  validate_image(img);
  Image out(img.height(), img.width(), img.channels());
  std::vector<double> tmp;
  for (int ch = 0; ch < img.channels(); ++ch) {
    convolve_plane(img.plane(ch).data(), out.plane(ch).data(), img.height(), img.width(), k, tmp);
  }
  return out;
}

GradientField spatial_gradient(const Image& img) {
  validate_image(img);
  GradientField g;
  g.height = img.height();
  g.width = img.width();
  g.channels = img.channels();
  g.dx.assign(img.samples().size(), 0.0);
  g.dy.assign(img.samples().size(), 0.0);
  const int h = img.height();
  const int w = img.width();
  for (int ch = 0; ch < img.channels(); ++ch) {
    for (int y = 1; y < h - 1; ++y) {
      for (int x = 0; x < w; ++x) {
        g.dy[g.index(y, x, ch)] = 0.5 * (img(y + 1, x, ch) - img(y - 1, x, ch));
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 1; x < w - 1; ++x) {
        g.dx[g.index(y, x, ch)] = 0.5 * (img(y, x + 1, ch) - img(y, x - 1, ch));
      }
    }
  }
  return g;
}

TensorField structure_tensor(const GradientField& g) {
  TensorField t(g.height, g.width);
  for (int ch = 0; ch < g.channels; ++ch) {
    for (std::size_t i = 0; i < t.plane(); ++i) {
      const double gx = g.dx[ch * t.plane() + i];
      const double gy = g.dy[ch * t.plane() + i];
      t.a[i] += gx * gx;
      t.b[i] += gx * gy;
      t.c[i] += gy * gy;
    }
  }
  return t;
}

TensorField smooth_tensor(const TensorField& t, const Kernel1D& k) {
  if (t.height < 3 || t.width < 3) throw ParameterError("tensor field must be at least 3x3");
  TensorField out(t.height, t.width);
  std::vector<double> tmp;
  convolve_plane(t.a.data(), out.a.data(), t.height, t.width, k, tmp);
  convolve_plane(t.b.data(), out.b.data(), t.height, t.width, k, tmp);
  convolve_plane(t.c.data(), out.c.data(), t.height, t.width, k, tmp);
  return out;
}

double charbonnier(double s, double kappa) {
  if (!(kappa > 0.0)) throw ParameterError("charbonnier: kappa must be > 0");
  if (s < 0.0 || std::isnan(s)) throw ParameterError("charbonnier: s must be >= 0");
  return charbonnier_unchecked(s, 1.0 / (kappa * kappa));
}

Eigen2 eigen_sym2(double a, double b, double c) {
  const double half_diff = 0.5 * (a - c);
  const double r = std::hypot(half_diff, b);
  const double mean = 0.5 * (a + c);
  Eigen2 e{mean + r, mean - r, 1.0, 0.0, true};
  if (2.0 * r > 1e-12 * std::max(e.mu1, 1.0)) {
    e.degenerate = false;
    if (half_diff >= 0.0) {
      e.v1x = std::sqrt(0.5 * (1.0 + half_diff / r));
      e.v1y = 0.5 * b / (r * e.v1x);
    } else {
      e.v1y = std::sqrt(0.5 * (1.0 - half_diff / r));
      e.v1x = 0.5 * b / (r * e.v1y);
    }
  }
  return e;
}

TensorField diffusion_tensor(const TensorField& j, double kappa) {
  if (!(kappa > 0.0)) throw ParameterError("diffusion_tensor: kappa must be > 0");
  TensorField d = j;
  diffusion_tensor_inplace(d, kappa);
  return d;
}

Image divergence_step(const Image& u, const TensorField& d, double tau) {
  validate_image(u);
  check_tensor_shape(u, d);
  if (!(tau > 0.0) || tau > kMaxTau) throw ParameterError("tau must be in (0, 0.25]");
  Image out(u.height(), u.width(), u.channels());
  std::vector<double> ub, ab, bb, cb;
  stencil_update(u, d, tau, out, ub, ab, bb, cb);
  return out;
}

double energy(const Image& u, const TensorField& d) {
  check_tensor_shape(u, d);
  const GradientField g = spatial_gradient(u);
  const std::size_t n = d.plane();
  double total = 0.0;
  for (int ch = 0; ch < g.channels; ++ch) {
    for (std::size_t i = 0; i < n; ++i) {
      const double gx = g.dx[ch * n + i];
      const double gy = g.dy[ch * n + i];
      total += d.a[i] * gx * gx + 2.0 * d.b[i] * gx * gy + d.c[i] * gy * gy;
    }
  }
  return 0.5 * total;
}

double dirichlet_energy(const Image& u) {
  return energy(u, TensorField::uniform(u.height(), u.width(), 1.0, 0.0, 1.0));
}

EedSolver::EedSolver(int height, int width, int channels, const DiffusionParams& params)
    : params_(params),
      presmooth_(params.presmooth_sigma, params.presmooth_kernel),
      orient_(params.orient_sigma, params.orient_kernel),
      smoothed_(height, width, channels),
      next_(height, width, channels),
      structure_(height, width),
      diffusion_(height, width) {
  params_.validate();
}

const TensorField& EedSolver::compute_tensor(const Image& u) {
  for (int ch = 0; ch < u.channels(); ++ch) {
    convolve_plane(u.plane(ch).data(), smoothed_.plane(ch).data(), u.height(), u.width(),
                   presmooth_, scratch_);
  }
  accumulate_structure(smoothed_, structure_);
  convolve_plane(structure_.a.data(), diffusion_.a.data(), u.height(), u.width(), orient_, scratch_);
  convolve_plane(structure_.b.data(), diffusion_.b.data(), u.height(), u.width(), orient_, scratch_);
  convolve_plane(structure_.c.data(), diffusion_.c.data(), u.height(), u.width(), orient_, scratch_);
  diffusion_tensor_inplace(diffusion_, params_.kappa);
  return diffusion_;
}

void EedSolver::apply_stencil(const Image& u, Image& out) const {
  thread_local std::vector<double> ub, ab, bb, cb;
  stencil_update(u, diffusion_, params_.tau, out, ub, ab, bb, cb);
}

void EedSolver::step(Image& u) {
  if (!u.same_shape(next_)) throw ParameterError("EedSolver: image shape changed");
  compute_tensor(u);
  apply_stencil(u, next_);
  std::swap(u, next_);
}

std::vector<Snapshot> eed_run(const Image& img, const DiffusionParams& p,
                              const StepObserver& observer) {
  validate_image(img);
  p.validate();
  const std::vector<int> wanted = p.effective_snapshots();
  std::vector<Snapshot> out;
  auto next_wanted = wanted.begin();

  Image u = img;
  if (next_wanted != wanted.end() && *next_wanted == 0) {
    out.push_back({0, u});
    ++next_wanted;
  }
  if (p.steps == 0) return out;

  EedSolver solver(img.height(), img.width(), img.channels(), p);
  for (int k = 1; k <= p.steps; ++k) {
    solver.step(u);
    check_finite(u, k);
    if (next_wanted != wanted.end() && *next_wanted == k) {
      out.push_back({k, u});
      ++next_wanted;
    }
    if (observer && !observer(k, u)) break;
  }
  return out;
}

}  // namespace eedkit
