#pragma once

// 8-bit image I/O. Planes hold doubles in [0, 1], channel-major
// (values[c * H * W + y * W + x]), which is the NCHW layout with N = 1.

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "dglr/common.hpp"
#include "dglr/tensor.hpp"

namespace dglr::image {

struct ImagePlane {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 1;
  std::vector<double> values;
  std::string provenance;

  ImagePlane() = default;
  ImagePlane(std::size_t h, std::size_t w, std::size_t c, double fill = 0.0)
      : height(h), width(w), channels(c), values(h * w * c, fill) {}

  std::size_t plane_size() const { return height * width; }
  double& at(std::size_t c, std::size_t y, std::size_t x) {
    return values[(c * height + y) * width + x];
  }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return values[(c * height + y) * width + x];
  }
  std::span<double> channel(std::size_t c) {
    return {values.data() + c * plane_size(), plane_size()};
  }
  std::span<const double> channel(std::size_t c) const {
    return {values.data() + c * plane_size(), plane_size()};
  }

  Tensor to_tensor() const { return Tensor({1, channels, height, width}, values); }

  static ImagePlane from_tensor(const Tensor& t) {
    if (t.rank() != 4 || t.dim(0) != 1) {
      throw ConfigError("expected a [1,C,H,W] tensor, got " + shape_str(t.shape()));
    }
    ImagePlane p(t.dim(2), t.dim(3), t.dim(1));
    p.values = t.vec();
    return p;
  }
};

inline bool same_extents(const ImagePlane& a, const ImagePlane& b) {
  return a.height == b.height && a.width == b.width && a.channels == b.channels;
}

inline std::uint8_t quantize(double v) {
  const double s = std::round(std::clamp(v, 0.0, 1.0) * 255.0);
  return static_cast<std::uint8_t>(s);
}

namespace detail {

inline std::string read_file(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open '" + path + "'");
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

inline bool is_png(const std::string& bytes) {
  return bytes.size() >= 8 &&
         png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) == 0;
}

inline std::string header_preview(const std::string& bytes) {
  std::string out;
  for (std::size_t i = 0; i < std::min<std::size_t>(bytes.size(), 16); ++i) {
    const unsigned char ch = static_cast<unsigned char>(bytes[i]);
    if (std::isprint(ch)) {
      out += static_cast<char>(ch);
    } else {
      char buf[8];
      std::snprintf(buf, sizeof buf, "\\x%02x", ch);
      out += buf;
    }
  }
  return out;
}

// Parses one whitespace-delimited PNM header integer, skipping comments.
inline long pnm_int(const std::string& bytes, std::size_t& pos) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      ++pos;
    } else {
      break;
    }
  }
  const std::size_t start = pos;
  while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
  if (start == pos) throw FormatError("PGM: malformed header");
  return std::stol(bytes.substr(start, pos - start));
}

inline ImagePlane decode_pgm(const std::string& bytes) {
  std::size_t pos = 2;
  const long w = pnm_int(bytes, pos);
  const long h = pnm_int(bytes, pos);
  const long maxval = pnm_int(bytes, pos);
  if (w <= 0 || h <= 0) throw FormatError("PGM: non-positive extents");
  if (maxval <= 0 || maxval > 255) {
    throw FormatError("PGM: unsupported maxval " + std::to_string(maxval) +
                      " (only 8-bit P5 is supported)");
  }
  ++pos;  // single whitespace before the raster
  const std::size_t n = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
  if (bytes.size() < pos + n) throw FormatError("PGM: truncated raster");
  ImagePlane p(static_cast<std::size_t>(h), static_cast<std::size_t>(w), 1);
  for (std::size_t i = 0; i < n; ++i) {
    p.values[i] = static_cast<unsigned char>(bytes[pos + i]) / static_cast<double>(maxval);
  }
  return p;
}

inline ImagePlane decode_png(const std::string& bytes) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&img, bytes.data(), bytes.size())) {
    throw FormatError(std::string("PNG: ") + img.message);
  }
  const png_uint_32 fmt = img.format;
  if (fmt & (PNG_FORMAT_FLAG_ALPHA | PNG_FORMAT_FLAG_LINEAR | PNG_FORMAT_FLAG_COLORMAP)) {
    png_image_free(&img);
    throw FormatError("PNG: unsupported format flags 0x" + [&] {
      std::ostringstream os;
      os << std::hex << fmt;
      return os.str();
    }() + " (only 8-bit gray or RGB without alpha)");
  }
  const std::size_t channels = (fmt & PNG_FORMAT_FLAG_COLOR) ? 3 : 1;
  img.format = channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, raster.data(), 0, nullptr)) {
    throw FormatError(std::string("PNG: ") + img.message);
  }
  ImagePlane p(img.height, img.width, channels);
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        p.at(c, y, x) = raster[(y * p.width + x) * channels + c] / 255.0;
      }
    }
  }
  return p;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
  if (s.size() < suffix.size()) return false;
  return std::equal(suffix.rbegin(), suffix.rend(), s.rbegin(), [](char a, char b) {
    return std::tolower(static_cast<unsigned char>(a)) == b;
  });
}

}  // namespace detail

inline ImagePlane decode(const std::string& bytes) {
  if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') {
    return detail::decode_pgm(bytes);
  }
  if (detail::is_png(bytes)) return detail::decode_png(bytes);
  throw FormatError("unsupported image format, header \"" +
                    detail::header_preview(bytes) + "\"");
}

inline ImagePlane load_image(const std::string& path) {
  ImagePlane p = decode(detail::read_file(path));
  p.provenance = path;
  return p;
}

inline std::string encode_pgm(const ImagePlane& p) {
  if (p.channels != 1) throw FormatError("PGM output requires a single channel");
  std::string out = "P5\n" + std::to_string(p.width) + " " + std::to_string(p.height) +
                    "\n255\n";
  out.reserve(out.size() + p.values.size());
  for (double v : p.values) out.push_back(static_cast<char>(quantize(v)));
  return out;
}

inline std::string encode_png(const ImagePlane& p) {
  if (p.channels != 1 && p.channels != 3) {
    throw FormatError("PNG output supports 1 or 3 channels");
  }
  std::vector<std::uint8_t> raster(p.values.size());
  for (std::size_t y = 0; y < p.height; ++y) {
    for (std::size_t x = 0; x < p.width; ++x) {
      for (std::size_t c = 0; c < p.channels; ++c) {
        raster[(y * p.width + x) * p.channels + c] = quantize(p.at(c, y, x));
      }
    }
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(p.width);
  img.height = static_cast<png_uint_32>(p.height);
  img.format = p.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&img, nullptr, &size, 0, raster.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + img.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&img, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw Error(std::string("PNG encode failed: ") + img.message);
  }
  out.resize(size);
  return out;
}

// Format follows the extension: .pgm -> P5, .png -> PNG.
inline void save_image(const ImagePlane& p, const std::string& path) {
  std::string bytes;
  if (detail::ends_with(path, ".pgm")) {
    bytes = encode_pgm(p);
  } else if (detail::ends_with(path, ".png")) {
    bytes = encode_png(p);
  } else {
    throw FormatError("cannot infer output format from '" + path +
                      "' (use .pgm or .png)");
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open '" + path + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw Error("write to '" + path + "' failed");
}

}  // namespace dglr::image
