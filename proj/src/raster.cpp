#include "despeckle/raster.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>
#include <string>

#include "despeckle/error.hpp"

namespace despeckle {
namespace fs = std::filesystem;

namespace {

std::string lower_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext;
}

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Raster read_png(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw DataError("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0)
    throw FormatError(path.string() + ": not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw DataError("libpng initialization failed");
  }
  Raster r;
  std::vector<png_byte> buffer;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": corrupt PNG data");
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_set_strip_alpha(png);
  if (color == PNG_COLOR_TYPE_RGB || color == PNG_COLOR_TYPE_RGB_ALPHA ||
      color == PNG_COLOR_TYPE_PALETTE)
    png_set_rgb_to_gray_fixed(png, 1, -1, -1);
  png_read_update_info(png, info);

  r.width = png_get_image_width(png, info);
  r.height = png_get_image_height(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (channels != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError(path.string() + ": unsupported PNG channel layout");
  }
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buffer.resize(rowbytes * r.height);
  rows.resize(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = buffer.data() + y * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  r.pixels.resize(r.width * r.height);
  if (out_depth == 16) {
    r.format = RasterFormat::Png16;
    for (std::size_t i = 0; i < r.pixels.size(); ++i)
      r.pixels[i] = static_cast<float>((buffer[(i / r.width) * rowbytes + 2 * (i % r.width)] << 8) |
                                       buffer[(i / r.width) * rowbytes + 2 * (i % r.width) + 1]);
  } else {
    r.format = RasterFormat::Png8;
    for (std::size_t i = 0; i < r.pixels.size(); ++i)
      r.pixels[i] = buffer[(i / r.width) * rowbytes + (i % r.width)];
  }
  return r;
}

void write_png(const fs::path& path, const Raster& r, int depth) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw DataError("cannot write " + path.string());
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) {
    png_destroy_write_struct(&png, &info);
    throw DataError("libpng initialization failed");
  }
  const double maxv = depth == 16 ? 65535.0 : 255.0;
  const std::size_t bpp = depth == 16 ? 2 : 1;
  std::vector<png_byte> buffer(r.width * r.height * bpp);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const auto v = static_cast<std::uint32_t>(std::clamp(std::round(double(r.pixels[i])), 0.0, maxv));
    if (depth == 16) {
      buffer[2 * i] = static_cast<png_byte>(v >> 8);
      buffer[2 * i + 1] = static_cast<png_byte>(v & 0xFF);
    } else {
      buffer[i] = static_cast<png_byte>(v);
    }
  }
  std::vector<png_bytep> rows(r.height);
  for (std::size_t y = 0; y < r.height; ++y) rows[y] = buffer.data() + y * r.width * bpp;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw DataError(path.string() + ": PNG encoding failed");
  }
  png_init_io(png, fp.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(r.width), static_cast<png_uint_32>(r.height),
               depth, PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

// Skips whitespace and '#' comments in a PNM header.
void skip_pnm_space(std::istream& in) {
  while (in) {
    int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (std::isspace(c)) {
      in.get();
    } else {
      break;
    }
  }
}

Raster read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string magic;
  in >> magic;
  if (magic != "P5") throw FormatError(path.string() + ": only binary PGM (P5) is supported");
  std::size_t w = 0, h = 0, maxval = 0;
  skip_pnm_space(in);
  in >> w;
  skip_pnm_space(in);
  in >> h;
  skip_pnm_space(in);
  in >> maxval;
  if (!in || w == 0 || h == 0 || maxval == 0 || maxval > 65535)
    throw FormatError(path.string() + ": malformed PGM header");
  in.get();
  Raster r;
  r.width = w;
  r.height = h;
  r.pixels.resize(w * h);
  if (maxval < 256) {
    r.format = RasterFormat::Pgm8;
    std::vector<unsigned char> buf(w * h);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw LengthError(path.string() + ": truncated PGM payload");
    for (std::size_t i = 0; i < buf.size(); ++i) r.pixels[i] = buf[i];
  } else {
    r.format = RasterFormat::Pgm16;
    std::vector<unsigned char> buf(2 * w * h);
    if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw LengthError(path.string() + ": truncated PGM payload");
    for (std::size_t i = 0; i < w * h; ++i) r.pixels[i] = static_cast<float>((buf[2 * i] << 8) | buf[2 * i + 1]);
  }
  return r;
}

void write_pgm(const fs::path& path, const Raster& r, bool wide) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const double maxv = wide ? 65535.0 : 255.0;
  out << "P5\n" << r.width << ' ' << r.height << '\n' << static_cast<int>(maxv) << '\n';
  std::vector<unsigned char> buf(r.pixels.size() * (wide ? 2 : 1));
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const auto v = static_cast<std::uint32_t>(std::clamp(std::round(double(r.pixels[i])), 0.0, maxv));
    if (wide) {
      buf[2 * i] = static_cast<unsigned char>(v >> 8);
      buf[2 * i + 1] = static_cast<unsigned char>(v & 0xFF);
    } else {
      buf[i] = static_cast<unsigned char>(v);
    }
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

float load_le_float(const unsigned char* p) {
  std::uint32_t bits = std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) |
                       (std::uint32_t(p[2]) << 16) | (std::uint32_t(p[3]) << 24);
  return std::bit_cast<float>(bits);
}

Raster read_float(const fs::path& path) {
  const fs::path side = sidecar_path(path);
  std::ifstream js(side);
  if (!js) throw DataError(path.string() + ": missing sidecar " + side.string());
  nlohmann::json meta;
  try {
    js >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(side.string() + ": " + e.what());
  }
  if (!meta.contains("width") || !meta.contains("height"))
    throw FormatError(side.string() + ": sidecar needs width and height");
  Raster r;
  r.format = RasterFormat::Float32;
  r.width = meta["width"].get<std::size_t>();
  r.height = meta["height"].get<std::size_t>();
  if (r.width == 0 || r.height == 0) throw FormatError(side.string() + ": empty raster");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::vector<unsigned char> buf(r.width * r.height * 4);
  if (!in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
    throw LengthError(path.string() + ": payload shorter than width*height floats");
  r.pixels.resize(r.width * r.height);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) r.pixels[i] = load_le_float(&buf[4 * i]);
  return r;
}

void write_float(const fs::path& path, const Raster& r) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  std::vector<unsigned char> buf(r.pixels.size() * 4);
  for (std::size_t i = 0; i < r.pixels.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(r.pixels[i]);
    for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<unsigned char>(bits >> (8 * k));
  }
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  std::ofstream side(sidecar_path(path));
  side << nlohmann::json{{"width", r.width}, {"height", r.height}}.dump() << '\n';
}

}  // namespace

double format_max(RasterFormat format) {
  switch (format) {
    case RasterFormat::Png8:
    case RasterFormat::Pgm8:
      return 255.0;
    case RasterFormat::Png16:
    case RasterFormat::Pgm16:
      return 65535.0;
    case RasterFormat::Float32:
      return 0.0;
  }
  return 0.0;
}

fs::path sidecar_path(const fs::path& path) {
  fs::path side = path;
  side.replace_extension(".json");
  return side;
}

bool is_raster_path(const fs::path& path) {
  const std::string ext = lower_ext(path);
  return ext == ".png" || ext == ".pgm" || ext == ".f32" || ext == ".raw";
}

Raster read_raster(const fs::path& path) {
  const std::string ext = lower_ext(path);
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  if (ext == ".f32" || ext == ".raw") return read_float(path);
  throw FormatError(path.string() + ": unsupported raster extension");
}

void write_raster(const fs::path& path, const Raster& raster) {
  if (raster.pixels.size() != raster.width * raster.height || raster.pixels.empty())
    throw DimensionError("write_raster: pixel count does not match dimensions");
  switch (raster.format) {
    case RasterFormat::Png8:
      return write_png(path, raster, 8);
    case RasterFormat::Png16:
      return write_png(path, raster, 16);
    case RasterFormat::Pgm8:
      return write_pgm(path, raster, false);
    case RasterFormat::Pgm16:
      return write_pgm(path, raster, true);
    case RasterFormat::Float32:
      return write_float(path, raster);
  }
}

}  // namespace despeckle
