#pragma once

// 8-bit RGB images and file I/O: binary PPM (P6) read/write, PNG read/write
// (libpng simplified API), JPEG read (libjpeg).

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <memory>
#include <string>
#include <vector>

// jpeglib.h expects FILE and size_t to be declared first.
#include <jpeglib.h>

#include "pldc/errors.hpp"

namespace pldc {

struct Rgb {
  std::uint8_t r = 0, g = 0, b = 0;
  friend bool operator==(const Rgb&, const Rgb&) = default;
};

class Image {
 public:
  Image() = default;
  Image(std::size_t width, std::size_t height) : width_(width), height_(height), pixels_(width * height) {}
  Image(std::size_t width, std::size_t height, std::vector<Rgb> pixels)
      : width_(width), height_(height), pixels_(std::move(pixels)) {
    if (width_ == 0 || height_ == 0 || pixels_.size() != width_ * height_) {
      throw InvalidArgument("Image: pixel count " + std::to_string(pixels_.size()) + " does not match " +
                            std::to_string(width_) + "x" + std::to_string(height_));
    }
  }

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  bool valid() const { return width_ > 0 && height_ > 0 && pixels_.size() == width_ * height_; }

  const Rgb& at(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }
  Rgb& at(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }

  const std::vector<Rgb>& pixels() const { return pixels_; }
  std::vector<Rgb>& pixels() { return pixels_; }

  /// Interleaved RGB bytes, row-major.
  std::vector<std::uint8_t> bytes() const {
    std::vector<std::uint8_t> out;
    out.reserve(pixels_.size() * 3);
    for (const auto& p : pixels_) {
      out.push_back(p.r);
      out.push_back(p.g);
      out.push_back(p.b);
    }
    return out;
  }

  static Image from_bytes(std::size_t width, std::size_t height, const std::uint8_t* rgb) {
    std::vector<Rgb> px(width * height);
    for (std::size_t i = 0; i < px.size(); ++i) px[i] = {rgb[3 * i], rgb[3 * i + 1], rgb[3 * i + 2]};
    return Image(width, height, std::move(px));
  }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<Rgb> pixels_;
};

inline void require_valid(const Image& img, const char* who) {
  if (!img.valid()) throw InvalidArgument(std::string(who) + ": invalid image");
}

// ---------------------------------------------------------------------------
// PPM (P6, maxval 255)

inline std::vector<std::uint8_t> encode_ppm(const Image& img) {
  require_valid(img, "encode_ppm");
  const std::string header = "P6\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  const auto body = img.bytes();
  out.insert(out.end(), body.begin(), body.end());
  return out;
}

inline Image decode_ppm(const std::vector<std::uint8_t>& buf) {
  std::size_t pos = 0;
  auto skip_ws = [&] {
    while (pos < buf.size()) {
      if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else if (std::isspace(buf[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto read_int = [&]() -> long {
    skip_ws();
    long v = 0;
    const std::size_t start = pos;
    while (pos < buf.size() && buf[pos] >= '0' && buf[pos] <= '9') v = v * 10 + (buf[pos++] - '0');
    if (pos == start) throw IoError("PPM: malformed header");
    return v;
  };
  if (buf.size() < 2 || buf[0] != 'P' || buf[1] != '6') throw IoError("PPM: not a P6 file");
  pos = 2;
  const long w = read_int();
  const long h = read_int();
  const long maxval = read_int();
  if (w <= 0 || h <= 0 || maxval != 255) throw IoError("PPM: unsupported dimensions or maxval");
  ++pos;  // single whitespace before raster
  const auto need = static_cast<std::size_t>(w * h * 3);
  if (buf.size() < pos + need) throw IoError("PPM: truncated raster");
  return Image::from_bytes(static_cast<std::size_t>(w), static_cast<std::size_t>(h), buf.data() + pos);
}

// ---------------------------------------------------------------------------
// Files

inline std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_file_bytes(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

inline Image decode_png(const std::vector<std::uint8_t>& buf) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_memory(&image, buf.data(), buf.size())) {
    throw IoError(std::string("PNG decode: ") + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  std::vector<std::uint8_t> raster(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, raster.data(), 0, nullptr)) {
    std::string msg = image.message;
    png_image_free(&image);
    throw IoError("PNG decode: " + msg);
  }
  return Image::from_bytes(image.width, image.height, raster.data());
}

inline std::vector<std::uint8_t> encode_png(const Image& img) {
  require_valid(img, "encode_png");
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_RGB;
  const auto raster = img.bytes();
  png_alloc_size_t size = 0;
  if (!png_image_write_get_memory_size(image, size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  std::vector<std::uint8_t> out(size);
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.data(), 0, nullptr)) {
    throw IoError(std::string("PNG encode: ") + image.message);
  }
  out.resize(size);
  return out;
}

namespace detail {

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

inline void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace detail

inline Image decode_jpeg(const std::vector<std::uint8_t>& buf) {
  jpeg_decompress_struct cinfo{};
  detail::JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = detail::jpeg_error_exit;
  std::vector<std::uint8_t> raster;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError(std::string("JPEG decode: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, buf.data(), static_cast<unsigned long>(buf.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const std::size_t w = cinfo.output_width, h = cinfo.output_height;
  raster.resize(w * h * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = raster.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return Image::from_bytes(w, h, raster.data());
}

enum class ImageFormat { png, ppm };

/// Decodes PNG, JPEG or PPM based on the leading magic bytes.
inline Image decode_image(const std::vector<std::uint8_t>& buf, const std::string& name = "<memory>") {
  try {
    if (buf.size() >= 8 && buf[0] == 0x89 && buf[1] == 'P' && buf[2] == 'N' && buf[3] == 'G') return decode_png(buf);
    if (buf.size() >= 3 && buf[0] == 0xFF && buf[1] == 0xD8 && buf[2] == 0xFF) return decode_jpeg(buf);
    if (buf.size() >= 2 && buf[0] == 'P' && buf[1] == '6') return decode_ppm(buf);
  } catch (const IoError& e) {
    throw IoError(name + ": " + e.what());
  }
  throw IoError(name + ": unrecognized image format");
}

inline Image load_image(const std::filesystem::path& path) { return decode_image(read_file_bytes(path), path.string()); }

inline void save_image(const std::filesystem::path& path, const Image& img, ImageFormat fmt) {
  write_file_bytes(path, fmt == ImageFormat::png ? encode_png(img) : encode_ppm(img));
}

inline const char* extension(ImageFormat fmt) { return fmt == ImageFormat::png ? ".png" : ".ppm"; }

inline bool has_image_extension(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".ppm";
}

/// Bilinear resize with pixel-center alignment (default 224x224 network input).
inline Image resize_bilinear(const Image& src, std::size_t width = 224, std::size_t height = 224) {
  require_valid(src, "resize_bilinear");
  if (width == 0 || height == 0) throw InvalidArgument("resize_bilinear: zero target size");
  Image dst(width, height);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(width);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(height);
  auto clampi = [](double v, std::size_t hi) {
    if (v < 0) return std::size_t{0};
    return std::min(static_cast<std::size_t>(v), hi);
  };
  for (std::size_t r = 0; r < height; ++r) {
    const double fy = std::max(0.0, (static_cast<double>(r) + 0.5) * sy - 0.5);
    const std::size_t y0 = clampi(fy, src.height() - 1);
    const std::size_t y1 = std::min(y0 + 1, src.height() - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t c = 0; c < width; ++c) {
      const double fx = std::max(0.0, (static_cast<double>(c) + 0.5) * sx - 0.5);
      const std::size_t x0 = clampi(fx, src.width() - 1);
      const std::size_t x1 = std::min(x0 + 1, src.width() - 1);
      const double wx = fx - static_cast<double>(x0);
      auto lerp = [&](std::uint8_t Rgb::*ch) {
        const double top = src.at(y0, x0).*ch * (1 - wx) + src.at(y0, x1).*ch * wx;
        const double bot = src.at(y1, x0).*ch * (1 - wx) + src.at(y1, x1).*ch * wx;
        const double v = top * (1 - wy) + bot * wy;
        return static_cast<std::uint8_t>(std::min(255.0, std::floor(v + 0.5)));
      };
      dst.at(r, c) = {lerp(&Rgb::r), lerp(&Rgb::g), lerp(&Rgb::b)};
    }
  }
  return dst;
}

}  // namespace pldc
