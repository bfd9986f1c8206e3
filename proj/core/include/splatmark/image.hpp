#pragma once

#include <string>

#include "splatmark/autodiff.hpp"

namespace splatmark {

/// RGB image; pixels is (height*width) x 3, row-major scanlines.
struct Image {
  int height = 0;
  int width = 0;
  ad::Matrix pixels;

  Image() = default;
  Image(int h, int w) : height(h), width(w), pixels(ad::Matrix::Zero(static_cast<ad::Index>(h) * w, 3)) {}
  Image(int h, int w, ad::Matrix px);

  bool in_unit_range() const;
};

/// Binary PPM (P6, 8-bit) or PFM (float, lossless); chosen by extension.
void write_image(const std::string& path, const Image& image);
Image read_image(const std::string& path);

}  // namespace splatmark
