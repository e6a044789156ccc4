#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include <jpeglib.h>

#include "neuralmat/hash.hpp"
#include "neuralmat/image.hpp"

using namespace neuralmat;
namespace fs = std::filesystem;

namespace {

Image ramp(int c, int h, int w) {
  Image img(c, h, w);
  for (int k = 0; k < c; ++k)
    for (int i = 0; i < h; ++i)
      for (int j = 0; j < w; ++j) img.at(k, i, j) = static_cast<float>((k * 37 + i * w + j) % 251) / 250.0f;
  return img;
}

fs::path tmp(const std::string& name) { return fs::temp_directory_path() / name; }

void write_jpeg(const fs::path& path, int w, int h, unsigned char gray) {
  jpeg_compress_struct cinfo;
  jpeg_error_mgr jerr;
  cinfo.err = jpeg_std_error(&jerr);
  jpeg_create_compress(&cinfo);
  FILE* f = std::fopen(path.c_str(), "wb");
  jpeg_stdio_dest(&cinfo, f);
  cinfo.image_width = w;
  cinfo.image_height = h;
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  jpeg_set_quality(&cinfo, 95, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  std::vector<unsigned char> row(3 * w, gray);
  while (cinfo.next_scanline < cinfo.image_height) {
    JSAMPROW r = row.data();
    jpeg_write_scanlines(&cinfo, &r, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::fclose(f);
}

}  // namespace

TEST(Png, EightBitRoundTripWithinQuantum) {
  const auto img = ramp(3, 9, 13);
  const auto p = tmp("nm_rt8.png");
  write_png(p, img, 8);
  const auto back = read_image(p);
  ASSERT_TRUE(back.same_shape(img));
  for (std::size_t k = 0; k < img.data.size(); ++k) EXPECT_NEAR(back.data[k], img.data[k], 0.5 / 255 + 1e-6);
  fs::remove(p);
}

TEST(Png, SixteenBitGrayRoundTrip) {
  const auto img = ramp(1, 7, 5);
  const auto p = tmp("nm_rt16.png");
  write_png(p, img, 16);
  const auto back = read_image(p);
  ASSERT_EQ(back.channels, 1);
  for (std::size_t k = 0; k < img.data.size(); ++k) EXPECT_NEAR(back.data[k], img.data[k], 0.5 / 65535 + 1e-6);
  EXPECT_EQ(to_rgb(back).channels, 3);
  fs::remove(p);
}

TEST(Png, ClampsAndIsByteDeterministic) {
  Image img(3, 2, 2, 2.0f);
  img.data[0] = -1.0f;
  const auto a = tmp("nm_det_a.png"), b = tmp("nm_det_b.png");
  write_png(a, img, 16);
  write_png(b, img, 16);
  EXPECT_EQ(sha256_file(a), sha256_file(b));
  const auto back = read_image(a);
  EXPECT_EQ(back.data[0], 0.0f);
  EXPECT_EQ(back.data[1], 1.0f);
  EXPECT_THROW(write_png(a, img, 12), std::invalid_argument);
  fs::remove(a);
  fs::remove(b);
}

TEST(Exr, FloatRoundTripIsExact) {
  Image img = ramp(3, 6, 4);
  img.data[5] = 3.75f;
  img.data[6] = -0.25f;
  const auto p = tmp("nm_rt.exr");
  write_exr(p, img);
  const auto back = read_exr(p);
  ASSERT_TRUE(back.same_shape(img));
  EXPECT_EQ(back.data, img.data);
  EXPECT_EQ(read_image(p).data, img.data);
  fs::remove(p);
}

TEST(Jpeg, ReadsRgbScaledToUnit) {
  const auto p = tmp("nm_gray.jpg");
  write_jpeg(p, 16, 8, 128);
  const auto img = read_image(p);
  EXPECT_EQ(img.channels, 3);
  EXPECT_EQ(img.width, 16);
  EXPECT_EQ(img.height, 8);
  for (float v : img.data) EXPECT_NEAR(v, 128.0f / 255.0f, 3.0f / 255.0f);
  fs::remove(p);
}

TEST(ImageErrors, MissingAndCorruptNameThePath) {
  try {
    read_image("/nonexistent/flash.png");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("/nonexistent/flash.png"), std::string::npos);
  }
  const auto p = tmp("nm_corrupt.png");
  {
    std::ofstream out(p, std::ios::binary);
    out << "\x89PNG\r\n\x1a\n" << "garbage that is not a png stream";
  }
  try {
    read_image(p);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find(p.string()), std::string::npos);
  }
  std::ofstream(p, std::ios::binary) << "plain text";
  EXPECT_THROW(read_image(p), IoError);
  fs::remove(p);
}

TEST(Resize, ConstantStaysConstantAndIdentityIsExact) {
  const Image flat(3, 10, 20, 0.3f);
  for (float v : resize_bilinear(flat, 7, 5).data) EXPECT_FLOAT_EQ(v, 0.3f);
  const auto img = ramp(3, 8, 8);
  EXPECT_EQ(resize_bilinear(img, 8, 8).data, img.data);
  EXPECT_THROW(resize_bilinear(img, 0, 4), std::invalid_argument);
}

TEST(Resize, CenterCropKeepsTheMiddle) {
  Image img(1, 4, 8, 0.0f);
  for (int i = 0; i < 4; ++i)
    for (int j = 2; j < 6; ++j) img.at(0, i, j) = 1.0f;
  const auto out = center_crop_resize(img, 4, 4);
  ASSERT_EQ(out.width, 4);
  for (float v : out.data) EXPECT_EQ(v, 1.0f);
  EXPECT_EQ(center_crop_resize(img, 16, 8).width, 16);
}

TEST(Gamma, EncodeDecodeInverse) {
  for (float v : {0.0f, 0.01f, 0.2f, 0.5f, 1.0f}) EXPECT_NEAR(srgb_decode(srgb_encode(v)), v, 1e-6f);
  EXPECT_EQ(srgb_encode(2.0f), 1.0f);
  EXPECT_EQ(srgb_encode(-1.0f), 0.0f);
}
