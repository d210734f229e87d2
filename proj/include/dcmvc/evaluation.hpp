#ifndef DCMVC_EVALUATION_HPP
#define DCMVC_EVALUATION_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dcmvc/model.hpp"
#include "dcmvc/tensor.hpp"

namespace dcmvc {

// One operating point on a rate-distortion curve.
struct RDPoint {
  double bpp = 0;      // bits per pixel, > 0
  double psnr_db = 0;  // RGB PSNR, dB
};

struct FrameTraceRow {
  int index = 0;
  char type = 'I';  // 'I' or 'P'
  double bpp = 0;
  double psnr_db = 0;
};

struct EvalResult {
  std::vector<FrameTraceRow> trace;
  RDPoint summary;  // sequence bpp (total bits / total pixels), mean PSNR
};

double psnr_from_mse(double mse);

// RGB PSNR over all samples, inputs in [0,1]. Lossless pairs cap at 100 dB.
double psnr(const Tensor& a, const Tensor& b);

// Bjontegaard rate delta in percent: cubic fit of log10(bpp) against PSNR
// for both curves, averaged over the common PSNR interval. Negative means
// the test curve saves bitrate relative to the anchor.
double bd_rate(const std::vector<RDPoint>& anchor, const std::vector<RDPoint>& test);

// Decodes the stream and scores every frame against the source sequence.
// `original` must hold at least as many frames as the stream carries.
EvalResult eval_sequence(CodecModel& model, const std::vector<uint8_t>& stream,
                         const std::vector<Tensor>& original);

std::string trace_csv(const std::vector<FrameTraceRow>& trace);
std::string summary_json(const std::string& name, const RDPoint& summary);

// Parses an RD curve from CSV with `bpp,psnr_db` lines. A non-numeric first
// line is treated as a header and skipped.
std::vector<RDPoint> parse_rd_csv(const std::string& text);

// Inverse of trace_csv.
std::vector<FrameTraceRow> parse_trace_csv(const std::string& text);

}  // namespace dcmvc

#endif
