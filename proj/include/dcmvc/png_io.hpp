#ifndef DCMVC_PNG_IO_HPP
#define DCMVC_PNG_IO_HPP

#include <string>

#include "dcmvc/tensor.hpp"

namespace dcmvc {

// 8-bit RGB PNG. Write quantizes with round(x*255); read returns k/255, so
// read-then-write reproduces the pixel bytes exactly.
Tensor read_png_rgb(const std::string& path);  // (3,H,W) in [0,1]
void write_png_rgb(const std::string& path, const Tensor& frame);

// Visualization for dump-context: per-pixel channel L2 norm under a
// perceptual colormap, normalized to the field's own range.
void write_png_heatmap(const std::string& path, const Tensor& field);

// (2,H,W) displacement field as the usual color wheel: hue = direction,
// saturation = magnitude relative to the field's maximum.
void write_png_flow(const std::string& path, const Tensor& flow);

}  // namespace dcmvc

#endif
