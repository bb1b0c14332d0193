#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "avsal/error.hpp"

namespace avsal {

/// 8-bit interleaved image, 1 (gray) or 3 (RGB) channels.
struct Image {
  std::size_t width = 0, height = 0, channels = 1;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c = 0) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c = 0) const {
    return pixels[(y * width + x) * channels + c];
  }
};

inline bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

/// Binary PGM (P5) or PPM (P6), maxval 255.
inline void write_pnm(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("pnm: 1 or 3 channels required");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write '" + path + "'");
  f << (img.channels == 1 ? "P5" : "P6") << "\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("write failed for '" + path + "'");
}

inline Image read_pnm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read '" + path + "'");
  auto token = [&]() {
    std::string t;
    char c;
    while (f.get(c)) {
      if (c == '#') {
        std::string skip;
        std::getline(f, skip);
        continue;
      }
      if (std::isspace(static_cast<unsigned char>(c))) {
        if (!t.empty()) break;
        continue;
      }
      t += c;
    }
    return t;
  };
  Image img;
  const std::string magic = token();
  if (magic == "P5") img.channels = 1;
  else if (magic == "P6") img.channels = 3;
  else throw IoError("'" + path + "': not a binary PGM/PPM");
  try {
    img.width = std::stoul(token());
    img.height = std::stoul(token());
    if (std::stoul(token()) != 255) throw IoError("'" + path + "': only maxval 255 is supported");
  } catch (const std::logic_error&) {
    throw IoError("'" + path + "': malformed header");
  }
  img.pixels.resize(img.width * img.height * img.channels);
  f.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("'" + path + "': truncated pixel data");
  return img;
}

inline void write_png(const std::string& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw IoError("png: 1 or 3 channels required");
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
  if (!fp) throw IoError("cannot write '" + path + "'");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: out of memory");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: failed to encode '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
               img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (std::size_t y = 0; y < img.height; ++y) {
    png_write_row(png, const_cast<png_bytep>(img.pixels.data() + y * img.width * img.channels));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

/// Any PNG, reduced to 8-bit gray or RGB (alpha dropped, palettes expanded).
inline Image read_png(const std::string& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw IoError("cannot read '" + path + "'");
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8)) throw IoError("'" + path + "' is not a PNG");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: out of memory");
  }
  Image img;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw IoError("png: failed to decode '" + path + "'");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  png_set_strip_16(png);
  png_set_strip_alpha(png);
  png_set_packing(png);
  png_set_palette_to_rgb(png);
  png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  img.width = png_get_image_width(png, info);
  img.height = png_get_image_height(png, info);
  img.channels = png_get_channels(png, info);
  img.pixels.resize(img.width * img.height * img.channels);
  for (std::size_t y = 0; y < img.height; ++y) png_read_row(png, img.pixels.data() + y * img.width * img.channels, nullptr);
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return img;
}

/// Dispatches on extension: .png, otherwise PGM/PPM.
inline Image read_image(const std::string& path) {
  return ends_with(path, ".png") ? read_png(path) : read_pnm(path);
}

inline void write_image(const std::string& path, const Image& img) {
  if (ends_with(path, ".png")) write_png(path, img);
  else write_pnm(path, img);
}

/// round(255 * s), clamped to [0, 255].
inline Image saliency_to_gray(std::span<const double> s, std::size_t H, std::size_t W) {
  if (s.size() != H * W) throw ShapeError("saliency_to_gray: size mismatch");
  Image img{W, H, 1, std::vector<std::uint8_t>(H * W)};
  for (std::size_t i = 0; i < s.size(); ++i) {
    img.pixels[i] = static_cast<std::uint8_t>(std::clamp(std::lround(255.0 * s[i]), 0L, 255L));
  }
  return img;
}

/// frame * (1 - alpha * s) + red * alpha * s, per pixel.
inline Image overlay(const Image& frame, std::span<const double> s, double alpha = 0.6) {
  if (s.size() != frame.width * frame.height) throw ShapeError("overlay: size mismatch");
  Image out{frame.width, frame.height, 3, std::vector<std::uint8_t>(frame.width * frame.height * 3)};
  const std::array<double, 3> heat{255.0, 32.0, 0.0};
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double a = alpha * std::clamp(s[i], 0.0, 1.0);
    for (std::size_t c = 0; c < 3; ++c) {
      const double base = frame.pixels[i * frame.channels + (frame.channels == 3 ? c : 0)];
      out.pixels[i * 3 + c] = static_cast<std::uint8_t>(std::lround(base * (1 - a) + heat[c] * a));
    }
  }
  return out;
}

}  // namespace avsal
