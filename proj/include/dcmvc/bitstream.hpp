#ifndef DCMVC_BITSTREAM_HPP
#define DCMVC_BITSTREAM_HPP

#include <cstdint>
#include <utility>
#include <vector>

#include "dcmvc/common.hpp"

namespace dcmvc {

// Container layout (all integers little-endian):
//   magic "DCMV", version u16, width u16, height u16 (pre-padding),
//   frame_count u16, intra_period i16 (-1 = single leading I-frame),
//   lambda_index u8, C_ctx u16, C_feat u16, C_y u16,
// then one unit per frame:
//   frame_type u8 (0 = I, 1 = P),
//   I: raw length u32, raw bytes
//   P: motion length u32, context length u32, motion bytes, context bytes.
struct StreamHeader {
  uint16_t version = 1;
  uint16_t width = 0, height = 0;
  uint16_t frame_count = 0;
  int16_t intra_period = -1;
  uint8_t lambda_index = 0;
  uint16_t c_ctx = 0, c_feat = 0, c_y = 0;
};

struct FrameUnit {
  uint8_t frame_type = 0;           // 0 = I, 1 = P
  std::vector<uint8_t> p0;          // I: raw payload; P: motion payload
  std::vector<uint8_t> p1;          // P: context payload; empty for I

  size_t payload_bytes() const { return p0.size() + p1.size(); }
};

std::vector<uint8_t> write_stream(const StreamHeader& h,
                                  const std::vector<FrameUnit>& units);

// Streaming reader: header parsed up front, units pulled one at a time
// without looking ahead. Frame-type placement against the intra period is
// checked as units are read.
class StreamReader {
 public:
  StreamReader(const uint8_t* data, size_t size);

  const StreamHeader& header() const { return header_; }
  bool has_next() const { return unit_index_ < header_.frame_count; }
  FrameUnit next_unit();
  // True exactly when frame t must be an I-frame under intra period p.
  static bool is_intra_slot(int t, int intra_period) {
    return t == 0 || (intra_period > 0 && t % intra_period == 0);
  }

 private:
  const uint8_t* data_;
  size_t size_, pos_ = 0;
  StreamHeader header_;
  int unit_index_ = 0;
};

std::pair<StreamHeader, std::vector<FrameUnit>> read_stream(
    const std::vector<uint8_t>& bytes);

}  // namespace dcmvc

#endif
