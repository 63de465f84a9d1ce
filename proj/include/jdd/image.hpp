#pragma once

#include "jdd/tensor.hpp"

#include <string_view>

namespace jdd {

enum class ColorSpace { LinRGB, SRGB };

std::string_view to_string(ColorSpace cs);

/// Three-plane (R, G, B) image with intensities on the [0, 255] scale.
template <typename Scalar>
struct PlanarImageT {
  Index height = 0;
  Index width = 0;
  Planes<Scalar> data;
  ColorSpace colorspace = ColorSpace::LinRGB;

  PlanarImageT() = default;
  PlanarImageT(Index h, Index w, ColorSpace cs = ColorSpace::LinRGB)
      : height(h), width(w), data(Planes<Scalar>::Zero(3, h * w)), colorspace(cs) {}
  PlanarImageT(Planes<Scalar> planes, Index h, Index w, ColorSpace cs = ColorSpace::LinRGB)
      : height(h), width(w), data(std::move(planes)), colorspace(cs) {
    if (data.rows() != 3 || data.cols() != h * w) throw ShapeError("PlanarImage: expected 3 x (height*width) planes");
  }

  Index pixels() const { return height * width; }
  Index size() const { return data.size(); }

  Scalar& operator()(Index c, Index y, Index x) { return data(c, y * width + x); }
  Scalar operator()(Index c, Index y, Index x) const { return data(c, y * width + x); }

  template <typename NewScalar>
  PlanarImageT<NewScalar> cast() const {
    return PlanarImageT<NewScalar>(data.template cast<NewScalar>(), height, width, colorspace);
  }

  Tensor<Scalar> tensor() const { return Tensor<Scalar>(data, height, width); }

  bool operator==(const PlanarImageT& o) const {
    return height == o.height && width == o.width && colorspace == o.colorspace && data == o.data;
  }
};

using PlanarImage = PlanarImageT<float>;

}  // namespace jdd
