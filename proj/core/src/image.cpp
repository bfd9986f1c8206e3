#include "splatmark/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "splatmark/error.hpp"

namespace splatmark {

Image::Image(int h, int w, ad::Matrix px) : height(h), width(w), pixels(std::move(px)) {
  if (pixels.rows() != static_cast<ad::Index>(h) * w || pixels.cols() != 3) {
    throw InputError("Image: pixel matrix must be (H*W) x 3");
  }
}

bool Image::in_unit_range() const {
  return pixels.allFinite() && pixels.minCoeff() >= 0.0 && pixels.maxCoeff() <= 1.0;
}

namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(),
                                                 [](char a, char b) { return std::tolower(a) == b; });
}

void skip_ws_and_comments(std::istream& in) {
  while (true) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace

void write_image(const std::string& path, const Image& image) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  if (ends_with(path, ".pfm")) {
    out << "PF\n" << image.width << ' ' << image.height << "\n-1.0\n";
    // PFM scanlines run bottom to top.
    for (int y = image.height - 1; y >= 0; --y) {
      for (int x = 0; x < image.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          const float v = static_cast<float>(image.pixels(static_cast<ad::Index>(y) * image.width + x, c));
          out.write(reinterpret_cast<const char*>(&v), sizeof(v));
        }
      }
    }
  } else {
    out << "P6\n" << image.width << ' ' << image.height << "\n255\n";
    std::vector<unsigned char> row(static_cast<std::size_t>(image.width) * 3);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        for (int c = 0; c < 3; ++c) {
          const double v = std::clamp(image.pixels(static_cast<ad::Index>(y) * image.width + x, c), 0.0, 1.0);
          row[static_cast<std::size_t>(x * 3 + c)] = static_cast<unsigned char>(std::lround(v * 255.0));
        }
      }
      out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
  }
  if (!out) throw IoError("write failed for '" + path + "'");
}

Image read_image(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image '" + path + "'");
  std::string magic;
  in >> magic;
  int w = 0, h = 0;
  skip_ws_and_comments(in);
  in >> w;
  skip_ws_and_comments(in);
  in >> h;
  if (!in || w <= 0 || h <= 0) throw FormatError("'" + path + "': bad image header");
  Image img(h, w);
  if (magic == "PF") {
    double scale = 0;
    in >> scale;
    in.get();
    if (scale >= 0) throw FormatError("'" + path + "': only little-endian PFM is supported");
    for (int y = h - 1; y >= 0; --y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          float v;
          in.read(reinterpret_cast<char*>(&v), sizeof(v));
          img.pixels(static_cast<ad::Index>(y) * w + x, c) = v;
        }
      }
    }
  } else if (magic == "P6") {
    int maxval = 0;
    in >> maxval;
    in.get();
    if (maxval != 255) throw FormatError("'" + path + "': only 8-bit PPM is supported");
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) img.pixels.data()[i] = buf[i] / 255.0;
  } else {
    throw FormatError("'" + path + "': unsupported image format '" + magic + "'");
  }
  if (!in) throw FormatError("'" + path + "': truncated image data");
  return img;
}

}  // namespace splatmark
