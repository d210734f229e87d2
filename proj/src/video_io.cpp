#include "dcmvc/video_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dcmvc/common.hpp"
#include "dcmvc/png_io.hpp"

namespace dcmvc {

namespace {

uint8_t clamp_byte(float v) {
  return uint8_t(std::lround(std::min(255.0f, std::max(0.0f, v))));
}

void check_even(int w, int h, const char* what) {
  DCMVC_CHECK(w > 0 && h > 0 && w % 2 == 0 && h % 2 == 0,
              std::string(what) + ": 4:2:0 needs even positive dimensions, got " +
                  std::to_string(w) + "x" + std::to_string(h));
}

std::ifstream open_binary(const std::string& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  DCMVC_CHECK(in.good(), std::string(what) + ": cannot open " + path);
  return in;
}

}  // namespace

Tensor yuv420_frame_to_rgb(const uint8_t* y, const uint8_t* u, const uint8_t* v,
                           int width, int height) {
  check_even(width, height, "yuv420");
  const int cw = width / 2;
  Tensor out({3, height, width});
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const float Y = float(y[r * width + c]);
      const float Cb = float(u[(r / 2) * cw + c / 2]) - 128.0f;
      const float Cr = float(v[(r / 2) * cw + c / 2]) - 128.0f;
      const float R = Y + 1.402f * Cr;
      const float G = Y - 0.344136f * Cb - 0.714136f * Cr;
      const float B = Y + 1.772f * Cb;
      const int64_t px = int64_t(r) * width + c;
      out[px] = std::min(1.0f, std::max(0.0f, R / 255.0f));
      out[int64_t(height) * width + px] = std::min(1.0f, std::max(0.0f, G / 255.0f));
      out[2 * int64_t(height) * width + px] = std::min(1.0f, std::max(0.0f, B / 255.0f));
    }
  }
  return out;
}

Sequence read_y4m(const std::string& path, int max_frames) {
  std::ifstream in = open_binary(path, "y4m");
  std::string header;
  DCMVC_CHECK(bool(std::getline(in, header)), "y4m: missing stream header in " + path);
  DCMVC_CHECK(header.rfind("YUV4MPEG2", 0) == 0,
              "y4m: bad magic, expected YUV4MPEG2 in " + path);

  int w = 0, h = 0;
  std::string colorspace = "420";
  std::istringstream hs(header);
  std::string tok;
  hs >> tok;  // magic
  while (hs >> tok) {
    if (tok.size() < 2) fail("y4m: malformed header token `" + tok + "`");
    switch (tok[0]) {
      case 'W': w = std::atoi(tok.c_str() + 1); break;
      case 'H': h = std::atoi(tok.c_str() + 1); break;
      case 'C': colorspace = tok.substr(1); break;
      case 'F': case 'I': case 'A': case 'X': break;  // irrelevant here
      default: fail("y4m: unknown header token `" + tok + "`");
    }
  }
  DCMVC_CHECK(w > 0 && h > 0, "y4m: header must declare positive W and H");
  DCMVC_CHECK(colorspace.rfind("420", 0) == 0,
              "y4m: unsupported colorspace C" + colorspace + ", only 4:2:0");
  check_even(w, h, "y4m");

  const size_t ysz = size_t(w) * size_t(h), csz = ysz / 4;
  std::vector<uint8_t> yb(ysz), ub(csz), vb(csz);
  Sequence seq;
  seq.width = w;
  seq.height = h;
  while (max_frames <= 0 || int(seq.frames.size()) < max_frames) {
    std::string fh;
    if (!std::getline(in, fh)) break;  // clean end of stream
    DCMVC_CHECK(fh.rfind("FRAME", 0) == 0, "y4m: expected FRAME marker, got `" + fh + "`");
    in.read(reinterpret_cast<char*>(yb.data()), std::streamsize(ysz));
    in.read(reinterpret_cast<char*>(ub.data()), std::streamsize(csz));
    in.read(reinterpret_cast<char*>(vb.data()), std::streamsize(csz));
    DCMVC_CHECK(in.gcount() == std::streamsize(csz) && !in.fail(),
                "y4m: truncated frame " + std::to_string(seq.frames.size()));
    seq.frames.push_back(yuv420_frame_to_rgb(yb.data(), ub.data(), vb.data(), w, h));
  }
  DCMVC_CHECK(!seq.frames.empty(), "y4m: no frames in " + path);
  return seq;
}

Sequence read_raw_yuv420(const std::string& path, int width, int height,
                         int max_frames) {
  check_even(width, height, "raw yuv");
  std::ifstream in = open_binary(path, "raw yuv");
  in.seekg(0, std::ios::end);
  const int64_t fsize = int64_t(in.tellg());
  in.seekg(0);
  const int64_t frame_bytes = int64_t(width) * height * 3 / 2;
  DCMVC_CHECK(fsize > 0 && fsize % frame_bytes == 0,
              "raw yuv: file size " + std::to_string(fsize) +
                  " is not a multiple of the " + std::to_string(frame_bytes) +
                  "-byte frame size for " + std::to_string(width) + "x" +
                  std::to_string(height));
  int n = int(fsize / frame_bytes);
  if (max_frames > 0) n = std::min(n, max_frames);

  const size_t ysz = size_t(width) * size_t(height), csz = ysz / 4;
  std::vector<uint8_t> yb(ysz), ub(csz), vb(csz);
  Sequence seq;
  seq.width = width;
  seq.height = height;
  for (int t = 0; t < n; ++t) {
    in.read(reinterpret_cast<char*>(yb.data()), std::streamsize(ysz));
    in.read(reinterpret_cast<char*>(ub.data()), std::streamsize(csz));
    in.read(reinterpret_cast<char*>(vb.data()), std::streamsize(csz));
    DCMVC_CHECK(!in.fail(), "raw yuv: short read at frame " + std::to_string(t));
    seq.frames.push_back(yuv420_frame_to_rgb(yb.data(), ub.data(), vb.data(), width, height));
  }
  return seq;
}

Sequence read_png_dir(const std::string& path, int max_frames) {
  namespace fs = std::filesystem;
  DCMVC_CHECK(fs::is_directory(path), "png dir: not a directory: " + path);
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(path)) {
    if (e.is_regular_file() && e.path().extension() == ".png")
      names.push_back(e.path().string());
  }
  DCMVC_CHECK(!names.empty(), "png dir: no .png files in " + path);
  std::sort(names.begin(), names.end());
  if (max_frames > 0 && int(names.size()) > max_frames)
    names.resize(size_t(max_frames));

  Sequence seq;
  for (const auto& n : names) {
    Tensor f = read_png_rgb(n);
    if (seq.frames.empty()) {
      seq.height = f.shape()[1];
      seq.width = f.shape()[2];
    } else {
      DCMVC_CHECK(f.shape()[1] == seq.height && f.shape()[2] == seq.width,
                  "png dir: frame sizes differ at " + n);
    }
    seq.frames.push_back(std::move(f));
  }
  return seq;
}

void write_y4m(const std::string& path, const std::vector<Tensor>& frames) {
  DCMVC_CHECK(!frames.empty(), "y4m write: no frames");
  const auto& s = frames[0].shape();
  DCMVC_CHECK(s.size() == 3 && s[0] == 3, "y4m write: frames must be (3,H,W)");
  const int h = s[1], w = s[2];
  check_even(w, h, "y4m write");

  std::ofstream out(path, std::ios::binary);
  DCMVC_CHECK(out.good(), "y4m write: cannot open " + path);
  out << "YUV4MPEG2 W" << w << " H" << h << " F30:1 Ip A1:1 C420\n";

  const int cw = w / 2, chh = h / 2;
  std::vector<uint8_t> yb(size_t(w) * size_t(h)), ub(size_t(cw) * size_t(chh)),
      vb(size_t(cw) * size_t(chh));
  for (const auto& f : frames) {
    DCMVC_CHECK(f.shape() == frames[0].shape(), "y4m write: frame sizes differ");
    std::vector<float> cb(size_t(cw) * size_t(chh), 0), cr(size_t(cw) * size_t(chh), 0);
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        const int64_t px = int64_t(r) * w + c;
        const float R = f[px] * 255.0f;
        const float G = f[int64_t(h) * w + px] * 255.0f;
        const float B = f[2 * int64_t(h) * w + px] * 255.0f;
        const float Y = 0.299f * R + 0.587f * G + 0.114f * B;
        yb[size_t(px)] = clamp_byte(Y);
        const size_t cpx = size_t(r / 2) * size_t(cw) + size_t(c / 2);
        cb[cpx] += (B - Y) / 1.772f * 0.25f;
        cr[cpx] += (R - Y) / 1.402f * 0.25f;
      }
    }
    for (size_t i = 0; i < cb.size(); ++i) {
      ub[i] = clamp_byte(cb[i] + 128.0f);
      vb[i] = clamp_byte(cr[i] + 128.0f);
    }
    out << "FRAME\n";
    out.write(reinterpret_cast<const char*>(yb.data()), std::streamsize(yb.size()));
    out.write(reinterpret_cast<const char*>(ub.data()), std::streamsize(ub.size()));
    out.write(reinterpret_cast<const char*>(vb.data()), std::streamsize(vb.size()));
  }
  DCMVC_CHECK(out.good(), "y4m write: write failed for " + path);
}

Sequence ingest(const std::string& path, int max_frames, int raw_width, int raw_height) {
  namespace fs = std::filesystem;
  if (fs::is_directory(path)) return read_png_dir(path, max_frames);
  const std::string ext = fs::path(path).extension().string();
  if (ext == ".y4m") return read_y4m(path, max_frames);
  if (ext == ".yuv" || ext == ".raw") {
    DCMVC_CHECK(raw_width > 0 && raw_height > 0,
                "raw yuv input needs explicit --width and --height");
    return read_raw_yuv420(path, raw_width, raw_height, max_frames);
  }
  fail("unrecognized input format for " + path +
       " (expected .y4m, .yuv/.raw, or a directory of PNGs)");
}

}  // namespace dcmvc
