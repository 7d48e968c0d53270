// Copyright 2026 The Strata Authors
// SPDX-License-Identifier: Apache-2.0

#include "strata/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace strata {

namespace fs = std::filesystem;

namespace {

void write_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + length);
}

struct ReadCursor {
  const std::vector<std::uint8_t>* bytes;
  std::size_t pos;
};

void read_callback(png_structp png, png_bytep data, png_size_t length) {
  auto* cur = static_cast<ReadCursor*>(png_get_io_ptr(png));
  if (cur->pos + length > cur->bytes->size()) {
    png_error(png, "truncated PNG data");
  }
  std::memcpy(data, cur->bytes->data() + cur->pos, length);
  cur->pos += length;
}

// libpng reports errors by longjmp; the message is kept for the exception
// thrown after the jump lands.
void error_callback(png_structp png, png_const_charp msg) {
  auto* slot = static_cast<std::string*>(png_get_error_ptr(png));
  if (slot != nullptr) *slot = msg;
  png_longjmp(png, 1);
}

void warning_callback(png_structp, png_const_charp) {}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  STRATA_CHECK(f.good(), "cannot open ", path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace

std::vector<std::uint8_t> encode_png(const Sample& sample, int frame) {
  STRATA_CHECK(frame >= 0 && frame < sample.scale.frames, "frame ", frame, " out of range");
  const int h = sample.scale.height, w = sample.scale.width;
  std::vector<std::uint8_t> out;
  std::string message;
  std::vector<std::uint8_t> row(static_cast<std::size_t>(w) * 3);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_callback,
                                            warning_callback);
  STRATA_CHECK(png != nullptr, "png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw Error("png: " + message);
  }
  {
    png_set_write_fn(png, &out, write_callback, nullptr);
    png_set_IHDR(png, info, static_cast<png_uint_32>(w), static_cast<png_uint_32>(h), 8,
                 PNG_COLOR_TYPE_RGB, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) {
          const float v = std::clamp(sample.at(frame, y, x, c), 0.0f, 1.0f);
          row[static_cast<std::size_t>(x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  }
  png_destroy_write_struct(&png, &info);
  return out;
}

Sample decode_png(const std::vector<std::uint8_t>& bytes) {
  STRATA_CHECK(bytes.size() >= 8 && png_sig_cmp(bytes.data(), 0, 8) == 0, "not a PNG file");
  std::string message;
  ReadCursor cur{&bytes, 0};
  Sample out;
  std::vector<std::uint8_t> row;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_callback,
                                           warning_callback);
  STRATA_CHECK(png != nullptr, "png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw Error("png: " + message);
  }
  {
    png_set_read_fn(png, &cur, read_callback);
    png_read_info(png, info);
    png_set_expand(png);
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_gray_to_rgb(png);
    png_read_update_info(png, info);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    out = Sample(ScaleSpec::image(h, w));
    row.resize(png_get_rowbytes(png, info));
    for (int y = 0; y < h; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < w; ++x) {
        for (int c = 0; c < 3; ++c) out.at(0, y, x, c) = row[static_cast<std::size_t>(x) * 3 + c] / 255.0f;
      }
    }
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png(const Sample& sample, const std::string& path, int frame) {
  const auto bytes = encode_png(sample, frame);
  std::ofstream f(path, std::ios::binary);
  STRATA_CHECK(f.good(), "cannot write ", path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Sample read_png(const std::string& path) { return decode_png(read_file(path)); }

void write_video_dir(const Sample& video, const std::string& dir) {
  fs::create_directories(dir);
  for (int f = 0; f < video.scale.frames; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", f);
    write_png(video, (fs::path(dir) / name).string(), f);
  }
  std::ofstream meta(fs::path(dir) / "meta.json");
  meta << nlohmann::json{{"fps", video.scale.fps}, {"frames", video.scale.frames}}.dump() << "\n";
}

Sample read_video_dir(const std::string& dir) {
  std::ifstream mf(fs::path(dir) / "meta.json");
  STRATA_CHECK(mf.good(), "missing meta.json in ", dir);
  const auto meta = nlohmann::json::parse(mf);
  const int fps = meta.at("fps").get<int>(), frames = meta.at("frames").get<int>();
  Sample out;
  for (int f = 0; f < frames; ++f) {
    char name[32];
    std::snprintf(name, sizeof name, "frame_%04d.png", f);
    Sample img = read_png((fs::path(dir) / name).string());
    if (f == 0) out = Sample({img.scale.height, img.scale.width, fps, frames});
    STRATA_CHECK(img.scale.height == out.scale.height && img.scale.width == out.scale.width,
                 "frame ", name, " has a different size");
    std::copy(img.pixels.span().begin(), img.pixels.span().end(),
              out.pixels.data() + static_cast<std::size_t>(f) * img.pixels.size());
  }
  return out;
}

std::vector<Sample> read_png_folder(const std::string& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::vector<Sample> out;
  for (const auto& p : files) out.push_back(read_png(p.string()));
  return out;
}

}  // namespace strata
