#ifndef DCMVC_SVG_PLOT_HPP
#define DCMVC_SVG_PLOT_HPP

#include <string>
#include <vector>

#include "dcmvc/evaluation.hpp"

namespace dcmvc {

// Per-frame quality/bitrate chart: PSNR on the top panel, bpp on the bottom,
// I-frames marked with vertical rules. Standalone static SVG document.
std::string render_trace_svg(const std::vector<FrameTraceRow>& trace);

}  // namespace dcmvc

#endif
