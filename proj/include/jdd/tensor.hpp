#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace jdd {

using Index = Eigen::Index;

/// Channel-planar storage: one row per channel, pixels raster-scanned along
/// the columns (column index = y * width + x).
template <typename Scalar>
using Planes = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Differentiable value buffer of shape (channels, height, width).
///
/// `grad` stays empty until the first backward pass touches it; after that it
/// always has the shape of `values` and backward rules only ever add to it.
template <typename Scalar>
struct Tensor {
  Index height = 0;
  Index width = 0;
  Planes<Scalar> values;
  Planes<Scalar> grad;

  Tensor() = default;
  Tensor(Index channels, Index h, Index w)
      : height(h), width(w), values(Planes<Scalar>::Zero(channels, h * w)) {}
  Tensor(Planes<Scalar> v, Index h, Index w) : height(h), width(w), values(std::move(v)) {
    if (values.cols() != h * w) throw std::invalid_argument("Tensor: plane size does not match height*width");
  }

  Index channels() const { return values.rows(); }
  Index pixels() const { return height * width; }
  Index size() const { return values.size(); }

  Planes<Scalar>& ensure_grad() {
    if (grad.rows() != values.rows() || grad.cols() != values.cols()) grad = Planes<Scalar>::Zero(values.rows(), values.cols());
    return grad;
  }
  void zero_grad() { grad = Planes<Scalar>::Zero(values.rows(), values.cols()); }

  Scalar& operator()(Index c, Index y, Index x) { return values(c, y * width + x); }
  Scalar operator()(Index c, Index y, Index x) const { return values(c, y * width + x); }

  template <typename NewScalar>
  Tensor<NewScalar> cast() const {
    Tensor<NewScalar> out(values.template cast<NewScalar>(), height, width);
    if (grad.size() != 0) out.grad = grad.template cast<NewScalar>();
    return out;
  }
};

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

inline void require_same_shape(Index h0, Index w0, Index h1, Index w1, const char* what) {
  if (h0 != h1 || w0 != w1) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(h0) + "x" + std::to_string(w0) + " vs " +
                     std::to_string(h1) + "x" + std::to_string(w1) + ")");
  }
}

}  // namespace jdd
