#include "flowstab/png_io.hpp"

#include <png.h>

#include <csetjmp>
#include <cstdio>
#include <stdexcept>

namespace flowstab {
namespace {

void error_fn(png_structp png, png_const_charp msg) {
  auto* sink = static_cast<std::string*>(png_get_error_ptr(png));
  if (sink) *sink = msg;
  png_longjmp(png, 1);
}

void warning_fn(png_structp, png_const_charp) {}

struct FileHandle {
  std::FILE* f = nullptr;
  ~FileHandle() {
    if (f) std::fclose(f);
  }
};

struct Reader {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::string message;
  Reader() {
    png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &message, error_fn, warning_fn);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("libpng allocation failed");
  }
  ~Reader() { png_destroy_read_struct(&png, &info, nullptr); }
};

struct Writer {
  png_structp png = nullptr;
  png_infop info = nullptr;
  std::string message;
  Writer() {
    png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &message, error_fn, warning_fn);
    if (png) info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("libpng allocation failed");
  }
  ~Writer() { png_destroy_write_struct(&png, &info); }
};

std::vector<png_bytep> row_pointers(unsigned char* base, int height, std::size_t stride) {
  std::vector<png_bytep> rows(static_cast<std::size_t>(height));
  for (int r = 0; r < height; ++r) rows[static_cast<std::size_t>(r)] = base + r * stride;
  return rows;
}

}  // namespace

ImageU16 read_png_gray16(const std::string& path) {
  FileHandle fh;
  fh.f = std::fopen(path.c_str(), "rb");
  if (!fh.f) throw std::runtime_error("cannot open PNG file: " + path);

  Reader rd;
  if (setjmp(png_jmpbuf(rd.png))) {
    throw std::runtime_error("failed to read PNG " + path + ": " + rd.message);
  }
  png_init_io(rd.png, fh.f);
  png_read_info(rd.png, rd.info);

  const png_uint_32 w = png_get_image_width(rd.png, rd.info);
  const png_uint_32 h = png_get_image_height(rd.png, rd.info);
  const int depth = png_get_bit_depth(rd.png, rd.info);
  const int color = png_get_color_type(rd.png, rd.info);
  if (color != PNG_COLOR_TYPE_GRAY || depth != 16) {
    throw std::runtime_error("depth raster must be 16-bit single-channel PNG, got " +
                             std::to_string(depth) + "-bit color type " +
                             std::to_string(color) + ": " + path);
  }
  png_set_swap(rd.png);  // PNG stores 16-bit samples big-endian
  png_read_update_info(rd.png, rd.info);

  ImageU16 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  auto rows = row_pointers(reinterpret_cast<unsigned char*>(img.pixels.data()),
                           img.height, static_cast<std::size_t>(w) * 2);
  png_read_image(rd.png, rows.data());
  png_read_end(rd.png, nullptr);
  return img;
}

ImageU8 read_png_gray8(const std::string& path) {
  FileHandle fh;
  fh.f = std::fopen(path.c_str(), "rb");
  if (!fh.f) throw std::runtime_error("cannot open PNG file: " + path);

  Reader rd;
  if (setjmp(png_jmpbuf(rd.png))) {
    throw std::runtime_error("failed to read PNG " + path + ": " + rd.message);
  }
  png_init_io(rd.png, fh.f);
  png_read_info(rd.png, rd.info);

  const int color = png_get_color_type(rd.png, rd.info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(rd.png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(rd.png, rd.info) < 8) {
    png_set_expand_gray_1_2_4_to_8(rd.png);
  }
  if (png_get_valid(rd.png, rd.info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(rd.png);
  png_set_strip_16(rd.png);
  png_set_strip_alpha(rd.png);
  if (color & PNG_COLOR_MASK_COLOR) {
    png_set_rgb_to_gray_fixed(rd.png, 1 /* silent */, -1, -1);
  }
  png_read_update_info(rd.png, rd.info);

  const png_uint_32 w = png_get_image_width(rd.png, rd.info);
  const png_uint_32 h = png_get_image_height(rd.png, rd.info);
  if (png_get_rowbytes(rd.png, rd.info) != w) {
    throw std::runtime_error("grayscale conversion failed for PNG: " + path);
  }

  ImageU8 img;
  img.width = static_cast<int>(w);
  img.height = static_cast<int>(h);
  img.pixels.resize(static_cast<std::size_t>(w) * h);
  auto rows = row_pointers(img.pixels.data(), img.height, w);
  png_read_image(rd.png, rows.data());
  png_read_end(rd.png, nullptr);
  return img;
}

namespace {

template <typename Image>
void write_gray(const std::string& path, const Image& image, int bit_depth) {
  const std::size_t expected =
      static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height);
  if (image.width <= 0 || image.height <= 0 || image.pixels.size() != expected) {
    throw std::invalid_argument("image dimensions do not match pixel count: " + path);
  }

  FileHandle fh;
  fh.f = std::fopen(path.c_str(), "wb");
  if (!fh.f) throw std::runtime_error("cannot create PNG file: " + path);

  Writer wr;
  if (setjmp(png_jmpbuf(wr.png))) {
    throw std::runtime_error("failed to write PNG " + path + ": " + wr.message);
  }
  png_init_io(wr.png, fh.f);
  png_set_IHDR(wr.png, wr.info, static_cast<png_uint_32>(image.width),
               static_cast<png_uint_32>(image.height), bit_depth, PNG_COLOR_TYPE_GRAY,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(wr.png, wr.info);
  if (bit_depth == 16) png_set_swap(wr.png);

  const std::size_t stride =
      static_cast<std::size_t>(image.width) * static_cast<std::size_t>(bit_depth / 8);
  auto* base = reinterpret_cast<unsigned char*>(
      const_cast<typename decltype(image.pixels)::value_type*>(image.pixels.data()));
  auto rows = row_pointers(base, image.height, stride);
  png_write_image(wr.png, rows.data());
  png_write_end(wr.png, nullptr);
}

}  // namespace

void write_png_gray16(const std::string& path, const ImageU16& image) {
  write_gray(path, image, 16);
}

void write_png_gray8(const std::string& path, const ImageU8& image) {
  write_gray(path, image, 8);
}

}  // namespace flowstab
