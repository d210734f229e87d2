#ifndef DCMVC_VIDEO_IO_HPP
#define DCMVC_VIDEO_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dcmvc/tensor.hpp"

namespace dcmvc {

struct Sequence {
  int width = 0, height = 0;
  std::vector<Tensor> frames;  // (3,H,W) RGB in [0,1]
};

// One 4:2:0 frame to RGB: BT.601 full-range matrix, nearest-neighbor chroma
// upsampling. Planes are w*h and (w/2)*(h/2) bytes.
Tensor yuv420_frame_to_rgb(const uint8_t* y, const uint8_t* u, const uint8_t* v,
                           int width, int height);

// max_frames <= 0 reads everything.
Sequence read_y4m(const std::string& path, int max_frames = 0);
Sequence read_raw_yuv420(const std::string& path, int width, int height,
                         int max_frames = 0);
Sequence read_png_dir(const std::string& path, int max_frames = 0);

// 4:2:0 Y4M with the inverse BT.601 full-range conversion and 2x2 chroma
// averaging; lossy like any RGB->YUV420 trip.
void write_y4m(const std::string& path, const std::vector<Tensor>& frames);

// Dispatch on the source: a directory of PNGs, a .y4m file, or raw .yuv
// (raw needs explicit dimensions).
Sequence ingest(const std::string& path, int max_frames = 0, int raw_width = 0,
                int raw_height = 0);

}  // namespace dcmvc

#endif
