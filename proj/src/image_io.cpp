#include "neuralmat/image.hpp"

#include <jpeglib.h>
#include <png.h>

#include <ImfChannelList.h>
#include <ImfFrameBuffer.h>
#include <ImfHeader.h>
#include <ImfInputFile.h>
#include <ImfOutputFile.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>

namespace neuralmat {

namespace fs = std::filesystem;

float srgb_encode(float linear) { return std::pow(std::clamp(linear, 0.0f, 1.0f), 1.0f / 2.2f); }
float srgb_decode(float encoded) { return std::pow(std::clamp(encoded, 0.0f, 1.0f), 2.2f); }

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const fs::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw IoError("cannot open '" + path.string() + "'");
  return f;
}

bool has_png_signature(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[8] = {};
  in.read(reinterpret_cast<char*>(sig), 8);
  return in.gcount() == 8 && png_sig_cmp(sig, 0, 8) == 0;
}

bool has_jpeg_signature(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  unsigned char sig[3] = {};
  in.read(reinterpret_cast<char*>(sig), 3);
  return in.gcount() == 3 && sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF;
}

Image read_png(const fs::path& path) {
  FilePtr file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed for '" + path.string() + "'");
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_read_struct(p, i, nullptr); }
  } guard{&png, &info};

  if (setjmp(png_jmpbuf(png))) throw IoError("corrupt PNG file '" + path.string() + "'");
  png_init_io(png, file.get());
  png_read_info(png, info);

  const int depth = png_get_bit_depth(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_swap(png);  // little-endian 16-bit samples
  png_read_update_info(png, info);

  const int width = static_cast<int>(png_get_image_width(png, info));
  const int height = static_cast<int>(png_get_image_height(png, info));
  const int channels = png_get_channels(png, info);
  const int out_depth = png_get_bit_depth(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  std::vector<unsigned char> buffer(rowbytes * height);
  std::vector<png_bytep> rows(height);
  for (int i = 0; i < height; ++i) rows[i] = buffer.data() + i * rowbytes;
  png_read_image(png, rows.data());

  const int color_channels = (channels >= 3) ? 3 : 1;
  Image img(color_channels, height, width);
  const float scale = out_depth == 16 ? 1.0f / 65535.0f : 1.0f / 255.0f;
  for (int i = 0; i < height; ++i)
    for (int j = 0; j < width; ++j)
      for (int c = 0; c < color_channels; ++c) {
        const std::size_t idx = static_cast<std::size_t>(j) * channels + c;
        float v;
        if (out_depth == 16) {
          std::uint16_t s;
          std::memcpy(&s, rows[i] + 2 * idx, 2);
          v = s * scale;
        } else {
          v = rows[i][idx] * scale;
        }
        img.at(c, i, j) = v;
      }
  return img;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const fs::path& path) {
  FilePtr file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_error_exit;
  // Declared before setjmp so a decode error unwinds them normally.
  std::vector<unsigned char> row;
  Image img;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw IoError("corrupt JPEG file '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = cinfo.num_components == 1 ? JCS_GRAYSCALE : JCS_RGB;
  jpeg_start_decompress(&cinfo);
  const int width = static_cast<int>(cinfo.output_width);
  const int height = static_cast<int>(cinfo.output_height);
  const int channels = cinfo.output_components;
  row.resize(static_cast<std::size_t>(width) * channels);
  img = Image(channels, height, width);
  while (cinfo.output_scanline < cinfo.output_height) {
    const int i = static_cast<int>(cinfo.output_scanline);
    JSAMPROW ptr = row.data();
    jpeg_read_scanlines(&cinfo, &ptr, 1);
    for (int j = 0; j < width; ++j)
      for (int c = 0; c < channels; ++c) img.at(c, i, j) = row[static_cast<std::size_t>(j) * channels + c] / 255.0f;
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return img;
}

const char* exr_channel_name(int channels, int c) {
  static const char* rgb[] = {"R", "G", "B"};
  return channels == 1 ? "Y" : rgb[c];
}

}  // namespace

Image read_image(const fs::path& path) {
  if (!fs::exists(path)) throw IoError("image file not found: '" + path.string() + "'");
  if (has_png_signature(path)) return read_png(path);
  if (has_jpeg_signature(path)) return read_jpeg(path);
  const auto ext = path.extension().string();
  if (ext == ".exr") return read_exr(path);
  throw IoError("unsupported or corrupt image file '" + path.string() + "'");
}

void write_png(const fs::path& path, const Image& img, int bit_depth) {
  if (bit_depth != 8 && bit_depth != 16) throw std::invalid_argument("write_png: bit depth must be 8 or 16");
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_png: need 1 or 3 channels");
  FilePtr file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (!png || !info) throw IoError("libpng initialization failed for '" + path.string() + "'");
  struct Guard {
    png_structp* p;
    png_infop* i;
    ~Guard() { png_destroy_write_struct(p, i); }
  } guard{&png, &info};

  const int bytes = bit_depth / 8;
  const std::size_t rowbytes = static_cast<std::size_t>(img.width) * img.channels * bytes;
  std::vector<unsigned char> buffer(rowbytes * img.height);
  const float maxv = bit_depth == 16 ? 65535.0f : 255.0f;
  for (int i = 0; i < img.height; ++i)
    for (int j = 0; j < img.width; ++j)
      for (int c = 0; c < img.channels; ++c) {
        const auto q = static_cast<std::uint32_t>(std::lround(std::clamp(img.at(c, i, j), 0.0f, 1.0f) * maxv));
        unsigned char* dst = buffer.data() + i * rowbytes + (static_cast<std::size_t>(j) * img.channels + c) * bytes;
        if (bit_depth == 16) {
          dst[0] = static_cast<unsigned char>(q >> 8);  // PNG is big-endian
          dst[1] = static_cast<unsigned char>(q & 0xFF);
        } else {
          dst[0] = static_cast<unsigned char>(q);
        }
      }
  std::vector<png_bytep> rows(img.height);
  for (int i = 0; i < img.height; ++i) rows[i] = buffer.data() + i * rowbytes;

  if (setjmp(png_jmpbuf(png))) throw IoError("failed writing PNG '" + path.string() + "'");
  png_init_io(png, file.get());
  png_set_IHDR(png, info, img.width, img.height, bit_depth,
               img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
}

void write_exr(const fs::path& path, const Image& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("write_exr: need 1 or 3 channels");
  try {
    Imf::Header header(img.width, img.height);
    header.compression() = Imf::NO_COMPRESSION;
    for (int c = 0; c < img.channels; ++c)
      header.channels().insert(exr_channel_name(img.channels, c), Imf::Channel(Imf::FLOAT));
    Imf::FrameBuffer fb;
    for (int c = 0; c < img.channels; ++c) {
      char* base = reinterpret_cast<char*>(const_cast<float*>(img.data.data() + c * img.plane()));
      fb.insert(exr_channel_name(img.channels, c),
                Imf::Slice(Imf::FLOAT, base, sizeof(float), sizeof(float) * img.width));
    }
    Imf::OutputFile out(path.c_str(), header);
    out.setFrameBuffer(fb);
    out.writePixels(img.height);
  } catch (const std::exception& e) {
    throw IoError("failed writing EXR '" + path.string() + "': " + e.what());
  }
}

Image read_exr(const fs::path& path) {
  try {
    Imf::InputFile in(path.c_str());
    const auto& header = in.header();
    const auto window = header.dataWindow();
    const int width = window.max.x - window.min.x + 1;
    const int height = window.max.y - window.min.y + 1;
    const bool rgb = header.channels().findChannel("R") != nullptr;
    const int channels = rgb ? 3 : 1;
    if (!rgb && header.channels().findChannel("Y") == nullptr)
      throw IoError("EXR '" + path.string() + "' has neither RGB nor Y channels");
    Image img(channels, height, width);
    Imf::FrameBuffer fb;
    for (int c = 0; c < channels; ++c) {
      char* base = reinterpret_cast<char*>(img.data.data() + c * img.plane()) -
                   (static_cast<std::ptrdiff_t>(window.min.x) + static_cast<std::ptrdiff_t>(window.min.y) * width) *
                       static_cast<std::ptrdiff_t>(sizeof(float));
      fb.insert(exr_channel_name(channels, c), Imf::Slice(Imf::FLOAT, base, sizeof(float), sizeof(float) * width));
    }
    in.setFrameBuffer(fb);
    in.readPixels(window.min.y, window.max.y);
    return img;
  } catch (const IoError&) {
    throw;
  } catch (const std::exception& e) {
    throw IoError("failed reading EXR '" + path.string() + "': " + e.what());
  }
}

Image to_rgb(const Image& img) {
  if (img.channels == 3) return img;
  if (img.channels != 1) throw std::invalid_argument("to_rgb: expected 1 or 3 channels");
  Image out(3, img.height, img.width);
  for (int c = 0; c < 3; ++c) std::copy(img.data.begin(), img.data.end(), out.data.begin() + c * img.plane());
  return out;
}

Image resize_bilinear(const Image& img, int width, int height) {
  if (width < 1 || height < 1) throw std::invalid_argument("resize_bilinear: invalid target size");
  Image out(img.channels, height, width);
  const double sx = static_cast<double>(img.width) / width;
  const double sy = static_cast<double>(img.height) / height;
  for (int i = 0; i < height; ++i) {
    const double y = std::clamp((i + 0.5) * sy - 0.5, 0.0, img.height - 1.0);
    const int y0 = static_cast<int>(y);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fy = y - y0;
    for (int j = 0; j < width; ++j) {
      const double x = std::clamp((j + 0.5) * sx - 0.5, 0.0, img.width - 1.0);
      const int x0 = static_cast<int>(x);
      const int x1 = std::min(x0 + 1, img.width - 1);
      const double fx = x - x0;
      for (int c = 0; c < img.channels; ++c) {
        const double top = img.at(c, y0, x0) * (1 - fx) + img.at(c, y0, x1) * fx;
        const double bottom = img.at(c, y1, x0) * (1 - fx) + img.at(c, y1, x1) * fx;
        out.at(c, i, j) = static_cast<float>(top * (1 - fy) + bottom * fy);
      }
    }
  }
  return out;
}

Image center_crop_resize(const Image& img, int width, int height) {
  const double target = static_cast<double>(width) / height;
  int cw = img.width, ch = img.height;
  if (static_cast<double>(img.width) / img.height > target)
    cw = std::max(1, static_cast<int>(std::lround(img.height * target)));
  else
    ch = std::max(1, static_cast<int>(std::lround(img.width / target)));
  const int x0 = (img.width - cw) / 2, y0 = (img.height - ch) / 2;
  Image crop(img.channels, ch, cw);
  for (int c = 0; c < img.channels; ++c)
    for (int i = 0; i < ch; ++i)
      for (int j = 0; j < cw; ++j) crop.at(c, i, j) = img.at(c, y0 + i, x0 + j);
  if (cw == width && ch == height) return crop;
  return resize_bilinear(crop, width, height);
}

}  // namespace neuralmat
