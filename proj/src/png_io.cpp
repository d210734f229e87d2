#include "dcmvc/png_io.hpp"

#include <png.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "dcmvc/common.hpp"

namespace dcmvc {

namespace {

struct FileCloser {
  FILE* f;
  ~FileCloser() {
    if (f) std::fclose(f);
  }
};

void check_frame_shape(const Tensor& t, int channels, const char* what) {
  const auto& s = t.shape();
  DCMVC_CHECK(int(s.size()) == 3 && s[0] == channels && s[1] > 0 && s[2] > 0,
              std::string(what) + ": expected a (" + std::to_string(channels) +
                  ",H,W) tensor");
}

uint8_t to_byte(float v) {
  const float c = std::min(1.0f, std::max(0.0f, v));
  return uint8_t(std::lround(c * 255.0f));
}

void write_rgb8(const std::string& path, const std::vector<uint8_t>& rgb, int w, int h) {
  FileCloser fc{std::fopen(path.c_str(), "wb")};
  DCMVC_CHECK(fc.f, "png write: cannot open " + path);
  png_structp pp = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  DCMVC_CHECK(pp, "png write: out of memory");
  png_infop ip = png_create_info_struct(pp);
  if (!ip) {
    png_destroy_write_struct(&pp, nullptr);
    fail("png write: out of memory");
  }
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_write_struct(&pp, &ip);
    fail("png write: libpng failure for " + path);
  }
  png_init_io(pp, fc.f);
  png_set_IHDR(pp, ip, png_uint_32(w), png_uint_32(h), 8, PNG_COLOR_TYPE_RGB,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(pp, ip);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y)
    rows[size_t(y)] = const_cast<png_bytep>(rgb.data() + size_t(y) * size_t(w) * 3);
  png_write_image(pp, rows.data());
  png_write_end(pp, nullptr);
  png_destroy_write_struct(&pp, &ip);
}

// Five-stop dark-to-warm ramp, close enough to viridis for feature maps.
void colormap(float t, uint8_t* rgb) {
  static const float stops[5][3] = {{0.267f, 0.005f, 0.329f},
                                    {0.229f, 0.322f, 0.546f},
                                    {0.127f, 0.566f, 0.551f},
                                    {0.369f, 0.789f, 0.383f},
                                    {0.993f, 0.906f, 0.144f}};
  t = std::min(1.0f, std::max(0.0f, t)) * 4.0f;
  const int i = std::min(3, int(t));
  const float f = t - float(i);
  for (int c = 0; c < 3; ++c)
    rgb[c] = to_byte(stops[i][c] + f * (stops[i + 1][c] - stops[i][c]));
}

void hsv_to_rgb(float hue, float sat, float val, uint8_t* rgb) {
  const float h6 = hue * 6.0f;
  const int i = int(h6) % 6;
  const float f = h6 - std::floor(h6);
  const float p = val * (1 - sat), q = val * (1 - sat * f), t = val * (1 - sat * (1 - f));
  float r, g, b;
  switch (i) {
    case 0: r = val; g = t; b = p; break;
    case 1: r = q; g = val; b = p; break;
    case 2: r = p; g = val; b = t; break;
    case 3: r = p; g = q; b = val; break;
    case 4: r = t; g = p; b = val; break;
    default: r = val; g = p; b = q; break;
  }
  rgb[0] = to_byte(r);
  rgb[1] = to_byte(g);
  rgb[2] = to_byte(b);
}

}  // namespace

Tensor read_png_rgb(const std::string& path) {
  FileCloser fc{std::fopen(path.c_str(), "rb")};
  DCMVC_CHECK(fc.f, "png read: cannot open " + path);
  png_structp pp = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  DCMVC_CHECK(pp, "png read: out of memory");
  png_infop ip = png_create_info_struct(pp);
  if (!ip) {
    png_destroy_read_struct(&pp, nullptr, nullptr);
    fail("png read: out of memory");
  }
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_read_struct(&pp, &ip, nullptr);
    fail("png read: not a valid PNG: " + path);
  }
  png_init_io(pp, fc.f);
  png_read_info(pp, ip);

  // normalize every color type to 8-bit RGB
  png_set_expand(pp);
  png_set_strip_16(pp);
  png_set_strip_alpha(pp);
  png_set_gray_to_rgb(pp);
  png_read_update_info(pp, ip);

  const int w = int(png_get_image_width(pp, ip));
  const int h = int(png_get_image_height(pp, ip));
  DCMVC_CHECK(png_get_channels(pp, ip) == 3, "png read: channel normalization failed");

  std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
  std::vector<png_bytep> rows(static_cast<size_t>(h));
  for (int y = 0; y < h; ++y) rows[size_t(y)] = rgb.data() + size_t(y) * size_t(w) * 3;
  png_read_image(pp, rows.data());
  png_read_end(pp, nullptr);
  png_destroy_read_struct(&pp, &ip, nullptr);

  Tensor out({3, h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        out[(int64_t(c) * h + y) * w + x] =
            float(rgb[(size_t(y) * size_t(w) + size_t(x)) * 3 + size_t(c)]) / 255.0f;
  return out;
}

void write_png_rgb(const std::string& path, const Tensor& frame) {
  check_frame_shape(frame, 3, "png write");
  const int h = frame.shape()[1], w = frame.shape()[2];
  std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c)
        rgb[(size_t(y) * size_t(w) + size_t(x)) * 3 + size_t(c)] =
            to_byte(frame[(int64_t(c) * h + y) * w + x]);
  write_rgb8(path, rgb, w, h);
}

void write_png_heatmap(const std::string& path, const Tensor& field) {
  const auto& s = field.shape();
  DCMVC_CHECK((s.size() == 2 || s.size() == 3) && s[s.size() - 1] > 0 && s[s.size() - 2] > 0,
              "png heatmap: expected a (H,W) or (C,H,W) tensor");
  const int ch = s.size() == 3 ? s[0] : 1;
  const int h = s[s.size() - 2], w = s[s.size() - 1];

  std::vector<float> mag(size_t(h) * size_t(w));
  float lo = 1e30f, hi = -1e30f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0;
      for (int c = 0; c < ch; ++c) {
        const float v = field[(int64_t(c) * h + y) * w + x];
        acc += double(v) * double(v);
      }
      const float m = float(std::sqrt(acc / double(ch)));
      mag[size_t(y) * size_t(w) + size_t(x)] = m;
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
  const float span = hi - lo;

  std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
  for (size_t i = 0; i < mag.size(); ++i)
    colormap(span > 0 ? (mag[i] - lo) / span : 0.5f, &rgb[i * 3]);
  write_rgb8(path, rgb, w, h);
}

void write_png_flow(const std::string& path, const Tensor& flow) {
  check_frame_shape(flow, 2, "png flow");
  const int h = flow.shape()[1], w = flow.shape()[2];
  float max_mag = 1e-6f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float dx = flow[int64_t(y) * w + x];
      const float dy = flow[(int64_t(h) + y) * w + x];
      max_mag = std::max(max_mag, std::hypot(dx, dy));
    }

  std::vector<uint8_t> rgb(size_t(w) * size_t(h) * 3);
  constexpr float kTau = 6.28318530717958647692f;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const float dx = flow[int64_t(y) * w + x];
      const float dy = flow[(int64_t(h) + y) * w + x];
      float hue = std::atan2(dy, dx) / kTau;
      if (hue < 0) hue += 1.0f;
      const float sat = std::hypot(dx, dy) / max_mag;
      hsv_to_rgb(hue, sat, 1.0f, &rgb[(size_t(y) * size_t(w) + size_t(x)) * 3]);
    }
  write_rgb8(path, rgb, w, h);
}

}  // namespace dcmvc
