#pragma once

// Forward and backward rules for the fixed operator set of the denoiser.
// Every backward adds into the gradient buffers it is handed; callers own
// zeroing. Activations are channel-planar (channels x height*width).

#include "jdd/cfa.hpp"
#include "jdd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace jdd::ops {

/// Pixels per im2col band; bounds scratch memory to k*k*C*kBandPixels scalars.
inline constexpr Index kBandPixels = 16384;

namespace detail {

inline void check_kernel(int k) {
  if (k <= 0 || k % 2 == 0) throw std::invalid_argument("convolution kernel size must be odd, got " + std::to_string(k));
}

inline void check_extent(Index h, Index w, int k) {
  if (h <= k / 2 || w <= k / 2)
    throw ShapeError("image of " + std::to_string(h) + "x" + std::to_string(w) + " too small for reflexive padding of a " +
                     std::to_string(k) + "x" + std::to_string(k) + " kernel");
}

inline Index band_rows(Index w) { return std::max<Index>(1, kBandPixels / std::max<Index>(1, w)); }

/// cols((c*k + dy)*k + dx, (y - row0)*w + x) = x(c, refl(y+dy-r), refl(x+dx-r)) for y in the band.
template <typename Scalar>
void im2col(const Planes<Scalar>& src, Index h, Index w, int k, Index row0, Index rows, Planes<Scalar>& cols) {
  const Index channels = src.rows();
  const int r = k / 2;
  const Index n = rows * w;
  if (cols.rows() != channels * k * k || cols.cols() != n) cols.resize(channels * k * k, n);
  for (Index c = 0; c < channels; ++c) {
    const Scalar* plane = src.row(c).data();
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        Scalar* dst = cols.row((c * k + dy) * k + dx).data();
        const Index lo = std::max<Index>(0, r - dx);
        const Index hi = std::min<Index>(w, w + r - dx);
        for (Index yy = 0; yy < rows; ++yy) {
          const Scalar* srow = plane + reflect_index(row0 + yy + dy - r, h) * w;
          Scalar* drow = dst + yy * w;
          for (Index x = 0; x < lo; ++x) drow[x] = srow[reflect_index(x + dx - r, w)];
          std::copy(srow + lo + dx - r, srow + hi + dx - r, drow + lo);
          for (Index x = hi; x < w; ++x) drow[x] = srow[reflect_index(x + dx - r, w)];
        }
      }
    }
  }
}

/// Adjoint of im2col: scatters band columns back onto the planes (+=).
template <typename Scalar>
void col2im_add(const Planes<Scalar>& cols, Index h, Index w, int k, Index row0, Index rows, Planes<Scalar>& dst) {
  const Index channels = dst.rows();
  const int r = k / 2;
  for (Index c = 0; c < channels; ++c) {
    Scalar* plane = dst.row(c).data();
    for (int dy = 0; dy < k; ++dy) {
      for (int dx = 0; dx < k; ++dx) {
        const Scalar* src = cols.row((c * k + dy) * k + dx).data();
        const Index lo = std::max<Index>(0, r - dx);
        const Index hi = std::min<Index>(w, w + r - dx);
        for (Index yy = 0; yy < rows; ++yy) {
          Scalar* drow = plane + reflect_index(row0 + yy + dy - r, h) * w;
          const Scalar* srow = src + yy * w;
          for (Index x = 0; x < lo; ++x) drow[reflect_index(x + dx - r, w)] += srow[x];
          const Index shift = dx - r;
          for (Index x = lo; x < hi; ++x) drow[x + shift] += srow[x];
          for (Index x = hi; x < w; ++x) drow[reflect_index(x + dx - r, w)] += srow[x];
        }
      }
    }
  }
}

}  // namespace detail

/// Stride-1 "same" correlation with reflexive padding and no bias.
/// `filters` is (out_channels x in_channels*k*k), taps ordered [c][dy][dx].
template <typename Scalar>
Planes<Scalar> conv2d_reflect(const Planes<Scalar>& x, Index h, Index w, const Planes<Scalar>& filters, int k) {
  detail::check_kernel(k);
  detail::check_extent(h, w, k);
  if (x.cols() != h * w) throw ShapeError("conv2d_reflect: input is not height*width wide");
  if (filters.cols() != x.rows() * k * k)
    throw ShapeError("conv2d_reflect: filters expect " + std::to_string(filters.cols() / (k * k)) + " input channels, got " +
                     std::to_string(x.rows()));
  Planes<Scalar> out(filters.rows(), h * w);
  Planes<Scalar> cols;
  const Index step = detail::band_rows(w);
  for (Index row0 = 0; row0 < h; row0 += step) {
    const Index rows = std::min(step, h - row0);
    detail::im2col(x, h, w, k, row0, rows, cols);
    out.middleCols(row0 * w, rows * w).noalias() = filters * cols;
  }
  return out;
}

template <typename Scalar>
void conv2d_reflect_backward(const Planes<Scalar>& x, Index h, Index w, const Planes<Scalar>& filters, int k,
                             const Planes<Scalar>& grad_out, Planes<Scalar>* grad_x, Planes<Scalar>* grad_filters) {
  // Contributions are formed locally and added once, so repeated calls accumulate exactly.
  Planes<Scalar> cols, grad_cols;
  Planes<Scalar> gx = grad_x ? Planes<Scalar>::Zero(x.rows(), x.cols()) : Planes<Scalar>();
  Planes<Scalar> gf = grad_filters ? Planes<Scalar>::Zero(filters.rows(), filters.cols()) : Planes<Scalar>();
  const Index step = detail::band_rows(w);
  for (Index row0 = 0; row0 < h; row0 += step) {
    const Index rows = std::min(step, h - row0);
    const auto g = grad_out.middleCols(row0 * w, rows * w);
    if (grad_filters) {
      detail::im2col(x, h, w, k, row0, rows, cols);
      gf.noalias() += g * cols.transpose();
    }
    if (grad_x) {
      grad_cols.noalias() = filters.transpose() * g;
      detail::col2im_add(grad_cols, h, w, k, row0, rows, gx);
    }
  }
  if (grad_x) *grad_x += gx;
  if (grad_filters) *grad_filters += gf;
}

/// Adjoint of conv2d_reflect with the same filter bank: maps filters.rows()
/// channels back to filters.cols()/(k*k) channels.
template <typename Scalar>
Planes<Scalar> transposed_conv2d(const Planes<Scalar>& x, Index h, Index w, const Planes<Scalar>& filters, int k) {
  detail::check_kernel(k);
  detail::check_extent(h, w, k);
  if (x.cols() != h * w) throw ShapeError("transposed_conv2d: input is not height*width wide");
  if (x.rows() != filters.rows())
    throw ShapeError("transposed_conv2d: filters expect " + std::to_string(filters.rows()) + " input channels, got " +
                     std::to_string(x.rows()));
  if (filters.cols() % (k * k) != 0) throw ShapeError("transposed_conv2d: filter width is not a multiple of k*k");
  Planes<Scalar> out = Planes<Scalar>::Zero(filters.cols() / (k * k), h * w);
  Planes<Scalar> cols;
  const Index step = detail::band_rows(w);
  for (Index row0 = 0; row0 < h; row0 += step) {
    const Index rows = std::min(step, h - row0);
    cols.noalias() = filters.transpose() * x.middleCols(row0 * w, rows * w);
    detail::col2im_add(cols, h, w, k, row0, rows, out);
  }
  return out;
}

template <typename Scalar>
void transposed_conv2d_backward(const Planes<Scalar>& x, Index h, Index w, const Planes<Scalar>& filters, int k,
                                const Planes<Scalar>& grad_out, Planes<Scalar>* grad_x, Planes<Scalar>* grad_filters) {
  Planes<Scalar> cols;
  Planes<Scalar> gx = grad_x ? Planes<Scalar>::Zero(x.rows(), x.cols()) : Planes<Scalar>();
  Planes<Scalar> gf = grad_filters ? Planes<Scalar>::Zero(filters.rows(), filters.cols()) : Planes<Scalar>();
  const Index step = detail::band_rows(w);
  for (Index row0 = 0; row0 < h; row0 += step) {
    const Index rows = std::min(step, h - row0);
    detail::im2col(grad_out, h, w, k, row0, rows, cols);
    if (grad_x) gx.middleCols(row0 * w, rows * w).noalias() = filters * cols;
    if (grad_filters) gf.noalias() += x.middleCols(row0 * w, rows * w) * cols.transpose();
  }
  if (grad_x) *grad_x += gx;
  if (grad_filters) *grad_filters += gf;
}

/// max(0, x) + kappa_c * min(0, x), one slope per channel.
template <typename Scalar>
Planes<Scalar> prelu(const Planes<Scalar>& x, const Vector<Scalar>& kappa) {
  if (kappa.size() != x.rows()) throw ShapeError("prelu: kappa length must equal the channel count");
  Planes<Scalar> out(x.rows(), x.cols());
  for (Index c = 0; c < x.rows(); ++c) {
    const Scalar k = kappa[c];
    out.row(c) = x.row(c).unaryExpr([k](Scalar v) { return v > Scalar(0) ? v : k * v; });
  }
  return out;
}

template <typename Scalar>
void prelu_backward(const Planes<Scalar>& x, const Vector<Scalar>& kappa, const Planes<Scalar>& grad_out,
                    Planes<Scalar>& grad_x, Vector<Scalar>& grad_kappa) {
  for (Index c = 0; c < x.rows(); ++c) {
    const Scalar k = kappa[c];
    const auto xr = x.row(c).array();
    const auto gr = grad_out.row(c).array();
    grad_x.row(c).array() += (xr > Scalar(0)).select(gr, k * gr);
    grad_kappa[c] += (xr < Scalar(0)).select(gr * xr, Scalar(0)).sum();
  }
}

class DegenerateFilter : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kDegenerateFilterNorm = 1e-12;

/// Zero-mean, fixed-norm filters v = s (u - mean u) / ||u - mean u||, one per row.
template <typename Scalar>
struct FilterBank {
  Planes<Scalar> v;
  Planes<Scalar> unit;   // (u - mean u) / ||u - mean u||
  Vector<Scalar> norm;   // ||u - mean u||
};

template <typename Scalar>
FilterBank<Scalar> materialize_filters(const Planes<Scalar>& u, const Vector<Scalar>& s) {
  if (s.size() != u.rows()) throw ShapeError("materialize_filters: one scale per filter required");
  FilterBank<Scalar> bank;
  bank.unit = u.colwise() - u.rowwise().mean();
  bank.norm = bank.unit.rowwise().norm();
  for (Index f = 0; f < u.rows(); ++f) {
    if (!(static_cast<double>(bank.norm[f]) > kDegenerateFilterNorm))
      throw DegenerateFilter("materialize_filters: filter " + std::to_string(f) + " is constant");
    bank.unit.row(f) /= bank.norm[f];
  }
  bank.v = bank.unit.array().colwise() * s.array();
  return bank;
}

template <typename Scalar>
void materialize_filters_backward(const FilterBank<Scalar>& bank, const Vector<Scalar>& s, const Planes<Scalar>& grad_v,
                                  Planes<Scalar>& grad_u, Vector<Scalar>& grad_s) {
  for (Index f = 0; f < bank.v.rows(); ++f) {
    const auto unit = bank.unit.row(f);
    const auto g = grad_v.row(f);
    grad_s[f] += g.dot(unit);
    // d/dc of c/||c|| applied to s*g, then through the mean removal.
    Eigen::Matrix<Scalar, 1, Eigen::Dynamic> dc = (s[f] / bank.norm[f]) * (g - g.dot(unit) * unit);
    dc.array() -= dc.mean();
    grad_u.row(f) += dc;
  }
}

/// Single-filter convenience form.
template <typename Scalar>
Vector<Scalar> materialize_filter(const Vector<Scalar>& u, Scalar s) {
  Planes<Scalar> row = u.transpose();
  Vector<Scalar> scale(1);
  scale[0] = s;
  return materialize_filters<Scalar>(row, scale).v.row(0).transpose();
}

template <typename Scalar>
struct Projection {
  Scalar epsilon = 0;
  Scalar norm = 0;
  bool scaled = false;  // false: identity branch (||r|| <= epsilon)
};

/// epsilon = e^gamma * sigma * sqrt(n_total - 1).
template <typename Scalar>
Scalar projection_radius(Scalar sigma, Scalar gamma, Index n_total) {
  return std::exp(gamma) * sigma * std::sqrt(static_cast<Scalar>(n_total - 1));
}

template <typename Scalar>
Scalar l2_norm(const Planes<Scalar>& r) {
  double acc = 0.0;
  for (Index i = 0; i < r.size(); ++i) acc += static_cast<double>(r.data()[i]) * static_cast<double>(r.data()[i]);
  return static_cast<Scalar>(std::sqrt(acc));
}

/// Orthogonal projection onto the l2 ball of radius epsilon: eps * r / max(||r||, eps).
template <typename Scalar>
Planes<Scalar> l2_project(const Planes<Scalar>& r, Scalar sigma, Scalar gamma, Index n_total, Projection<Scalar>* state = nullptr) {
  Projection<Scalar> p;
  p.epsilon = projection_radius(sigma, gamma, n_total);
  p.norm = l2_norm(r);
  p.scaled = p.norm > p.epsilon;
  if (state) *state = p;
  if (!p.scaled) return r;
  return r * (p.epsilon / p.norm);
}

/// Returns d(loss)/d(gamma); adds d(loss)/d(r) into grad_r.
template <typename Scalar>
Scalar l2_project_backward(const Planes<Scalar>& r, const Projection<Scalar>& p, const Planes<Scalar>& grad_out,
                           Planes<Scalar>& grad_r) {
  if (!p.scaled) {
    grad_r += grad_out;
    return Scalar(0);
  }
  const Scalar inner = static_cast<Scalar>((r.template cast<double>().cwiseProduct(grad_out.template cast<double>())).sum());
  const Scalar n = p.norm;
  grad_r += (p.epsilon / n) * grad_out - (p.epsilon * inner / (n * n * n)) * r;
  // d epsilon / d gamma = epsilon
  return p.epsilon * inner / n;
}

inline constexpr double kIntensityMax = 255.0;

template <typename Scalar>
Planes<Scalar> clip_0_255(const Planes<Scalar>& x) {
  return x.cwiseMax(Scalar(0)).cwiseMin(Scalar(kIntensityMax));
}

/// Gradient passes strictly inside (0, 255) and is zero elsewhere.
template <typename Scalar>
void clip_0_255_backward(const Planes<Scalar>& x, const Planes<Scalar>& grad_out, Planes<Scalar>& grad_x) {
  grad_x.array() += (x.array() > Scalar(0) && x.array() < Scalar(kIntensityMax)).select(grad_out.array(), Scalar(0));
}

}  // namespace jdd::ops
