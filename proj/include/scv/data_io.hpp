#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cctype>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "scv/fileutil.hpp"
#include "scv/parameter_store.hpp"

namespace scv {

/// Single-channel float grid, row-major, top row first.
struct Field {
  std::size_t height = 0, width = 0;
  std::vector<float> data;

  Field() = default;
  Field(std::size_t h, std::size_t w, float fill = 0.f) : height(h), width(w), data(h * w, fill) {}

  float& operator()(std::size_t y, std::size_t x) { return data[y * width + x]; }
  float operator()(std::size_t y, std::size_t x) const { return data[y * width + x]; }
  friend bool operator==(const Field&, const Field&) = default;
};

/// Ground-truth disparity at full resolution with its validity mask.
struct GroundTruth {
  Field disparity;
  std::vector<std::uint8_t> valid;

  [[nodiscard]] std::size_t n_valid() const {
    return std::size_t(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
  }
};

/// Planar image (channel-major) with values in [0,1].
struct StereoImage {
  std::size_t height = 0, width = 0, channels = 3;
  std::vector<float> data;  // (channels, height, width)

  float& at(std::size_t c, std::size_t y, std::size_t x) { return data[(c * height + y) * width + x]; }
  float at(std::size_t c, std::size_t y, std::size_t x) const { return data[(c * height + y) * width + x]; }
  friend bool operator==(const StereoImage&, const StereoImage&) = default;
};

struct SamplePair {
  StereoImage left, right;
  std::optional<GroundTruth> gt;
  std::string id;
};

// ---------------------------------------------------------------------------
// PNG

struct PngData {
  std::size_t width = 0, height = 0, channels = 0, bit_depth = 0;
  std::vector<std::uint16_t> samples;  // interleaved, row-major
};

namespace detail {

struct PngIo {
  const std::string* src = nullptr;
  std::size_t pos = 0;
  std::string* dst = nullptr;
  char message[256] = {};
};

inline void png_error_cb(png_structp png, png_const_charp msg) {
  auto* io = static_cast<PngIo*>(png_get_error_ptr(png));
  std::snprintf(io->message, sizeof(io->message), "%s", msg);
  png_longjmp(png, 1);
}
inline void png_warning_cb(png_structp, png_const_charp) {}

inline void png_read_cb(png_structp png, png_bytep out, png_size_t len) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  if (io->pos + len > io->src->size()) png_error(png, "truncated PNG data");
  std::memcpy(out, io->src->data() + io->pos, len);
  io->pos += len;
}

inline void png_write_cb(png_structp png, png_bytep in, png_size_t len) {
  auto* io = static_cast<PngIo*>(png_get_io_ptr(png));
  io->dst->append(reinterpret_cast<const char*>(in), len);
}
inline void png_flush_cb(png_structp) {}

// No C++ objects with destructors are created between setjmp and the last
// libpng call; `out` and `raw` are owned by the caller.
inline bool png_decode(const std::string& bytes, PngData& out, std::vector<png_byte>& raw, PngIo& io) {
  io.src = &bytes;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &io, png_read_cb);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_set_interlace_handling(png);
  png_read_update_info(png, info);
  out.width = png_get_image_width(png, info);
  out.height = png_get_image_height(png, info);
  out.channels = png_get_channels(png, info);
  out.bit_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  raw.resize(rowbytes * out.height);
  const int passes = png_set_interlace_handling(png);
  for (int pass = 0; pass < passes; ++pass)
    for (std::size_t y = 0; y < out.height; ++y) png_read_row(png, raw.data() + y * rowbytes, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

inline bool png_encode(const PngData& in, const std::vector<png_byte>& raw, PngIo& io) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &io, png_error_cb, png_warning_cb);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, &io, png_write_cb, png_flush_cb);
  const int color = in.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, png_uint_32(in.width), png_uint_32(in.height), int(in.bit_depth), color,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t rowbytes = in.width * in.channels * (in.bit_depth / 8);
  for (std::size_t y = 0; y < in.height; ++y)
    png_write_row(png, const_cast<png_bytep>(raw.data() + y * rowbytes));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

}  // namespace detail

inline PngData read_png(const std::filesystem::path& path) {
  const std::string bytes = read_file(path);
  if (bytes.size() < 8 || png_sig_cmp(reinterpret_cast<png_const_bytep>(bytes.data()), 0, 8) != 0)
    throw FormatError(path.string() + ": not a PNG file");
  PngData out;
  std::vector<png_byte> raw;
  detail::PngIo io;
  if (!detail::png_decode(bytes, out, raw, io))
    throw FormatError(path.string() + ": PNG decode failed: " + io.message);
  out.samples.resize(out.width * out.height * out.channels);
  if (out.bit_depth == 16) {
    for (std::size_t i = 0; i < out.samples.size(); ++i)
      out.samples[i] = std::uint16_t((raw[2 * i] << 8) | raw[2 * i + 1]);
  } else {
    for (std::size_t i = 0; i < out.samples.size(); ++i) out.samples[i] = raw[i];
  }
  return out;
}

inline void write_png(const PngData& img, const std::filesystem::path& path) {
  if (img.channels != 1 && img.channels != 3) throw FormatError("write_png: channels must be 1 or 3");
  if (img.bit_depth != 8 && img.bit_depth != 16) throw FormatError("write_png: bit depth must be 8 or 16");
  std::vector<png_byte> raw(img.samples.size() * (img.bit_depth / 8));
  if (img.bit_depth == 16) {
    for (std::size_t i = 0; i < img.samples.size(); ++i) {
      raw[2 * i] = png_byte(img.samples[i] >> 8);
      raw[2 * i + 1] = png_byte(img.samples[i] & 0xff);
    }
  } else {
    for (std::size_t i = 0; i < img.samples.size(); ++i) raw[i] = png_byte(std::min<std::uint16_t>(img.samples[i], 255));
  }
  std::string bytes;
  detail::PngIo io;
  io.dst = &bytes;
  if (!detail::png_encode(img, raw, io)) throw FormatError(path.string() + ": PNG encode failed: " + io.message);
  write_file_atomic(path, bytes);
}

// ---------------------------------------------------------------------------
// KITTI disparity: 16-bit grayscale, disparity = raw / 256, raw 0 = invalid.

inline GroundTruth decode_kitti_disparity(const PngData& png) {
  if (png.bit_depth != 16 || png.channels != 1)
    throw FormatError("KITTI disparity must be a 16-bit single-channel PNG (got " +
                      std::to_string(png.bit_depth) + "-bit, " + std::to_string(png.channels) + " channel)");
  GroundTruth gt;
  gt.disparity = Field(png.height, png.width);
  gt.valid.assign(png.samples.size(), 0);
  for (std::size_t i = 0; i < png.samples.size(); ++i) {
    gt.valid[i] = png.samples[i] > 0 ? 1 : 0;
    gt.disparity.data[i] = float(double(png.samples[i]) / 256.0);
  }
  return gt;
}

/// Invalid pixels and disparities that round to 0 are stored as 0.
inline PngData encode_kitti_disparity(const Field& d, const std::vector<std::uint8_t>* valid = nullptr) {
  PngData png;
  png.width = d.width;
  png.height = d.height;
  png.channels = 1;
  png.bit_depth = 16;
  png.samples.resize(d.data.size());
  for (std::size_t i = 0; i < d.data.size(); ++i) {
    const bool ok = (!valid || (*valid)[i]) && std::isfinite(d.data[i]);
    const double raw = ok ? std::round(double(d.data[i]) * 256.0) : 0.0;
    png.samples[i] = std::uint16_t(std::clamp(raw, 0.0, 65535.0));
  }
  return png;
}

inline GroundTruth read_kitti_disparity(const std::filesystem::path& path) {
  return decode_kitti_disparity(read_png(path));
}

inline void write_kitti_disparity(const Field& d, const std::filesystem::path& path,
                                  const std::vector<std::uint8_t>* valid = nullptr) {
  write_png(encode_kitti_disparity(d, valid), path);
}

/// 8/16-bit gray or RGB PNG -> image in [0,1].
inline StereoImage read_image(const std::filesystem::path& path) {
  const PngData png = read_png(path);
  StereoImage img;
  img.height = png.height;
  img.width = png.width;
  img.channels = png.channels;
  const float scale = png.bit_depth == 16 ? 1.f / 65535.f : 1.f / 255.f;
  img.data.resize(png.samples.size());
  for (std::size_t y = 0; y < png.height; ++y)
    for (std::size_t x = 0; x < png.width; ++x)
      for (std::size_t c = 0; c < png.channels; ++c)
        img.at(c, y, x) = float(png.samples[(y * png.width + x) * png.channels + c]) * scale;
  return img;
}

inline void write_image(const StereoImage& img, const std::filesystem::path& path) {
  PngData png;
  png.width = img.width;
  png.height = img.height;
  png.channels = img.channels;
  png.bit_depth = 8;
  png.samples.resize(img.data.size());
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      for (std::size_t c = 0; c < img.channels; ++c)
        png.samples[(y * img.width + x) * img.channels + c] =
            std::uint16_t(std::lround(std::clamp(img.at(c, y, x), 0.f, 1.f) * 255.f));
  write_png(png, path);
}

// ---------------------------------------------------------------------------
// PFM: "Pf\n<w> <h>\n<scale>\n", then float32 rows bottom-up. A negative
// scale means little-endian payload, positive means big-endian.

inline Field decode_pfm(const std::string& bytes) {
  std::size_t pos = 0;
  auto token = [&]() {
    while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    const std::size_t start = pos;
    while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
    if (start == pos) throw FormatError("PFM: truncated header");
    return bytes.substr(start, pos - start);
  };
  const std::string magic = token();
  if (magic == "PF") throw FormatError("PFM: three-channel files are not supported");
  if (magic != "Pf") throw FormatError("PFM: bad magic '" + magic.substr(0, 8) + "'");
  long w = 0, h = 0;
  double scale = 0;
  try {
    w = std::stol(token());
    h = std::stol(token());
    scale = std::stod(token());
  } catch (const std::logic_error&) {
    throw FormatError("PFM: malformed header");
  }
  if (w <= 0 || h <= 0) throw FormatError("PFM: non-positive extents");
  if (scale == 0 || !std::isfinite(scale)) throw FormatError("PFM: invalid scale");
  if (pos >= bytes.size()) throw FormatError("PFM: truncated payload");
  ++pos;  // single whitespace byte ends the header
  const bool little = scale < 0;
  const std::size_t count = std::size_t(w) * std::size_t(h);
  if (bytes.size() - pos < count * 4)
    throw FormatError("PFM: truncated payload (need " + std::to_string(count * 4) + " bytes, have " +
                      std::to_string(bytes.size() - pos) + ")");
  Field f{std::size_t(h), std::size_t(w)};
  for (std::size_t row = 0; row < f.height; ++row) {
    const std::size_t y = f.height - 1 - row;
    for (std::size_t x = 0; x < f.width; ++x) {
      const auto* b = reinterpret_cast<const unsigned char*>(bytes.data() + pos);
      const std::uint32_t u = little ? (std::uint32_t(b[0]) | std::uint32_t(b[1]) << 8 |
                                        std::uint32_t(b[2]) << 16 | std::uint32_t(b[3]) << 24)
                                     : (std::uint32_t(b[3]) | std::uint32_t(b[2]) << 8 |
                                        std::uint32_t(b[1]) << 16 | std::uint32_t(b[0]) << 24);
      f(y, x) = std::bit_cast<float>(u);
      pos += 4;
    }
  }
  return f;
}

inline std::string encode_pfm(const Field& f) {
  std::string out = "Pf\n" + std::to_string(f.width) + " " + std::to_string(f.height) + "\n-1\n";
  out.reserve(out.size() + f.data.size() * 4);
  for (std::size_t row = 0; row < f.height; ++row) {
    const std::size_t y = f.height - 1 - row;
    for (std::size_t x = 0; x < f.width; ++x) {
      const auto u = std::bit_cast<std::uint32_t>(f(y, x));
      for (int i = 0; i < 4; ++i) out.push_back(char((u >> (8 * i)) & 0xff));
    }
  }
  return out;
}

inline Field read_pfm(const std::filesystem::path& path) { return decode_pfm(read_file(path)); }
inline void write_pfm(const Field& f, const std::filesystem::path& path) { write_file_atomic(path, encode_pfm(f)); }

/// Disparity map from .pfm (all finite values valid) or KITTI .png.
inline GroundTruth read_disparity(const std::filesystem::path& path) {
  if (path.extension() == ".pfm") {
    GroundTruth gt;
    gt.disparity = read_pfm(path);
    gt.valid.resize(gt.disparity.data.size());
    for (std::size_t i = 0; i < gt.valid.size(); ++i)
      gt.valid[i] = std::isfinite(gt.disparity.data[i]) ? 1 : 0;
    return gt;
  }
  return read_kitti_disparity(path);
}

// ---------------------------------------------------------------------------
// Synthetic stereo pairs

struct SynthSpec {
  std::size_t height = 64, width = 96;
  double max_disparity = 24;
  double texture_scale = 1.0;  // blur sigma of the fine texture, pixels
  std::size_t objects = 1;     // foreground regions with their own depth
  std::uint64_t seed = 0;
};

namespace detail {

inline std::vector<double> gaussian_kernel(double sigma) {
  if (sigma <= 0) return {1.0};
  const int r = int(std::ceil(3 * sigma));
  std::vector<double> k(std::size_t(2 * r + 1));
  double s = 0;
  for (int i = -r; i <= r; ++i) s += k[std::size_t(i + r)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (auto& v : k) v /= s;
  return k;
}

// Separable blur with edge clamping.
inline void blur(std::vector<double>& img, std::size_t h, std::size_t w, double sigma) {
  const std::vector<double> k = gaussian_kernel(sigma);
  const long r = long(k.size() / 2);
  std::vector<double> tmp(img.size());
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (long i = -r; i <= r; ++i)
        s += k[std::size_t(i + r)] * img[y * w + std::size_t(std::clamp(long(x) + i, 0L, long(w) - 1))];
      tmp[y * w + x] = s;
    }
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      double s = 0;
      for (long i = -r; i <= r; ++i)
        s += k[std::size_t(i + r)] * tmp[std::size_t(std::clamp(long(y) + i, 0L, long(h) - 1)) * w + x];
      img[y * w + x] = s;
    }
}

// Smooth field: a coarse random grid resized bilinearly to h x w.
inline std::vector<double> smooth_field(Rng& rng, std::size_t h, std::size_t w, std::size_t gh, std::size_t gw,
                                        double lo, double hi) {
  std::vector<double> grid(gh * gw);
  for (auto& v : grid) v = rng.uniform(lo, hi);
  std::vector<double> out(h * w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      const double gy = double(y) / double(h - 1 ? h - 1 : 1) * double(gh - 1);
      const double gx = double(x) / double(w - 1 ? w - 1 : 1) * double(gw - 1);
      const std::size_t y0 = std::min(std::size_t(gy), gh - 2), x0 = std::min(std::size_t(gx), gw - 2);
      const double fy = gy - double(y0), fx = gx - double(x0);
      const double top = grid[y0 * gw + x0] * (1 - fx) + grid[y0 * gw + x0 + 1] * fx;
      const double bot = grid[(y0 + 1) * gw + x0] * (1 - fx) + grid[(y0 + 1) * gw + x0 + 1] * fx;
      out[y * w + x] = top * (1 - fy) + bot * fy;
    }
  return out;
}

}  // namespace detail

/// Right view of a left image under left-view disparity `disp`, both given
/// on an extended row width `ext_w` >= out_w. Each left segment [x, x+1] is
/// forward-mapped to x - d; every right pixel takes the linearly
/// interpolated texture of the visible (largest-disparity) source.
/// `tex` is channel-major (channels, h, ext_w).
inline StereoImage warp_to_right(const std::vector<double>& tex, std::size_t channels, const std::vector<double>& disp,
                                 std::size_t h, std::size_t ext_w, std::size_t out_w) {
  StereoImage right;
  right.height = h;
  right.width = out_w;
  right.channels = channels;
  right.data.assign(channels * h * out_w, 0.f);
  std::vector<double> best_d(out_w), best_s(out_w);
  for (std::size_t y = 0; y < h; ++y) {
    std::fill(best_d.begin(), best_d.end(), -1.0);
    std::fill(best_s.begin(), best_s.end(), -1.0);
    const double* d = disp.data() + y * ext_w;
    for (std::size_t x = 0; x + 1 < ext_w; ++x) {
      const double t0 = double(x) - d[x], t1 = double(x + 1) - d[x + 1];
      const double lo = std::min(t0, t1), hi = std::max(t0, t1);
      const long u0 = std::max(0L, long(std::ceil(lo))), u1 = std::min(long(out_w) - 1, long(std::floor(hi)));
      for (long u = u0; u <= u1; ++u) {
        const double a = hi == lo ? 0.0 : (double(u) - t0) / (t1 - t0);
        const double s = double(x) + a;
        const double ds = d[x] + (d[x + 1] - d[x]) * a;
        if (ds > best_d[std::size_t(u)]) {
          best_d[std::size_t(u)] = ds;
          best_s[std::size_t(u)] = s;
        }
      }
    }
    for (std::size_t u = 0; u < out_w; ++u) {
      double s = best_s[u];
      if (s < 0) s = double(u) + d[std::min(u, ext_w - 1)];  // uncovered: sample through own disparity
      s = std::clamp(s, 0.0, double(ext_w - 1));
      const std::size_t x0 = std::min(std::size_t(s), ext_w - 2);
      const double f = s - double(x0);
      for (std::size_t c = 0; c < channels; ++c) {
        const double* row = tex.data() + (c * h + y) * ext_w;
        const double v = f == 0.0 ? row[x0] : row[x0] * (1 - f) + row[x0 + 1] * f;
        right.at(c, y, u) = float(v);
      }
    }
  }
  return right;
}

/// Left view = first `w` columns of `tex`; right view by warping; ground
/// truth valid where the left pixel is visible in the right view. `tex` is
/// (channels, h, ext_w) and `disp` is (h, ext_w), both row-major.
inline SamplePair render_pair(const std::vector<double>& tex, std::size_t channels, const std::vector<double>& disp,
                              std::size_t h, std::size_t ew, std::size_t w) {
  SamplePair pair;
  pair.left.height = h;
  pair.left.width = w;
  pair.left.channels = channels;
  pair.left.data.resize(channels * h * w);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) pair.left.at(c, y, x) = float(tex[(c * h + y) * ew + x]);
  pair.right = warp_to_right(tex, channels, disp, h, ew, w);

  GroundTruth gt;
  gt.disparity = Field(h, w);
  gt.valid.assign(h * w, 0);
  for (std::size_t y = 0; y < h; ++y) {
    // A left pixel is hidden if some pixel to its right lands at or left of it.
    double suffix_min = 1e300;
    std::vector<double> min_after(ew);
    for (std::size_t x = ew; x-- > 0;) {
      min_after[x] = suffix_min;
      suffix_min = std::min(suffix_min, double(x) - disp[y * ew + x]);
    }
    for (std::size_t x = 0; x < w; ++x) {
      const double d = disp[y * ew + x];
      const double target = double(x) - d;
      gt.disparity(y, x) = float(d);
      gt.valid[y * w + x] = target >= 0 && min_after[x] >= target - 1e-9 ? 1 : 0;
    }
  }
  pair.gt = std::move(gt);
  return pair;
}

/// Textured left view, piecewise-smooth disparity, right view by warping,
/// ground truth valid where the left pixel is visible in the right view.
inline SamplePair synth_pair(const SynthSpec& spec) {
  if (spec.height % 4 || spec.width % 4 || spec.height == 0 || spec.width == 0)
    throw ConfigError("synthetic extents must be positive multiples of 4");
  if (spec.max_disparity < 0 || spec.max_disparity >= double(spec.width) / 2)
    throw ConfigError("synthetic max_disparity must be in [0, width/2)");
  Rng rng(spec.seed);
  const std::size_t h = spec.height, w = spec.width;
  const std::size_t margin = std::size_t(std::ceil(spec.max_disparity)) + 2;
  const std::size_t ew = w + margin;
  const std::size_t channels = 3;

  std::vector<double> tex(channels * h * ew);
  for (std::size_t c = 0; c < channels; ++c) {
    std::vector<double> fine(h * ew), coarse(h * ew);
    for (auto& v : fine) v = rng.normal();
    for (auto& v : coarse) v = rng.normal();
    detail::blur(fine, h, ew, spec.texture_scale);
    detail::blur(coarse, h, ew, 4 * spec.texture_scale);
    double lo = 1e300, hi = -1e300;
    std::vector<double> plane(h * ew);
    for (std::size_t i = 0; i < plane.size(); ++i) {
      plane[i] = fine[i] + 2.0 * coarse[i];
      lo = std::min(lo, plane[i]);
      hi = std::max(hi, plane[i]);
    }
    for (std::size_t i = 0; i < plane.size(); ++i) tex[c * h * ew + i] = (plane[i] - lo) / (hi - lo + 1e-12);
  }

  const double md = spec.max_disparity;
  std::vector<double> disp(h * ew, 0.0);
  if (md > 0) {
    disp = detail::smooth_field(rng, h, ew, 3, 4, 0.15 * md, 0.6 * md);
    for (std::size_t o = 0; o < spec.objects; ++o) {
      const double bw = rng.uniform(0.2, 0.45) * double(w), bh = rng.uniform(0.25, 0.5) * double(h);
      const double x0 = rng.uniform(0.0, double(w) - bw), y0 = rng.uniform(0.0, double(h) - bh);
      const double base = rng.uniform(0.6, 1.0) * md;
      const double gx = rng.uniform(-0.02, 0.02) * md, gy = rng.uniform(-0.02, 0.02) * md;
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ew; ++x)
          if (double(x) >= x0 && double(x) < x0 + bw && double(y) >= y0 && double(y) < y0 + bh)
            disp[y * ew + x] = base + gx * (double(x) - x0) / 10.0 + gy * (double(y) - y0) / 10.0;
    }
    for (auto& v : disp) v = std::clamp(v, 0.0, md);
  }

  SamplePair pair = render_pair(tex, channels, disp, h, ew, w);
  pair.id = "synth_" + std::to_string(spec.seed);
  return pair;
}

// ---------------------------------------------------------------------------
// Tensor conversion

/// Stacks images into an (N,3,H,W) tensor; grayscale is replicated to 3 channels.
template <class T>
Tensor<T> images_to_tensor(const std::vector<const StereoImage*>& imgs) {
  if (imgs.empty()) throw ShapeError("images_to_tensor: empty batch");
  const std::size_t h = imgs[0]->height, w = imgs[0]->width;
  Tensor<T> out(Shape{imgs.size(), 3, h, w});
  for (std::size_t n = 0; n < imgs.size(); ++n) {
    const StereoImage& im = *imgs[n];
    if (im.height != h || im.width != w)
      throw ShapeError("images_to_tensor: batch extents differ", Shape{h, w}, Shape{im.height, im.width});
    if (im.channels != 1 && im.channels != 3) throw ShapeError("images need 1 or 3 channels");
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) out.at(n, c, y, x) = T(im.at(im.channels == 1 ? 0 : c, y, x));
  }
  return out;
}

template <class T>
Field tensor_to_field(const Tensor<T>& t, std::size_t n = 0) {
  require_rank("tensor_to_field", 4, t.shape());
  Field f(t.dim(2), t.dim(3));
  for (std::size_t y = 0; y < f.height; ++y)
    for (std::size_t x = 0; x < f.width; ++x) f(y, x) = float(t.at(n, 0, y, x));
  return f;
}

}  // namespace scv
