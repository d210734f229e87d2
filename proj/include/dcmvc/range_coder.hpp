#ifndef DCMVC_RANGE_CODER_HPP
#define DCMVC_RANGE_CODER_HPP

#include <cstdint>
#include <vector>

#include "dcmvc/common.hpp"

namespace dcmvc {

// Byte-oriented range coder (carry-counting variant). Frequencies come from
// 16-bit-total CDF tables; encoder and decoder must consume identical
// (cum, freq, total) triples in the same order. Encoding nothing yields an
// empty payload.
class RangeEncoder {
 public:
  void encode(uint32_t cum, uint32_t freq, uint32_t total);
  std::vector<uint8_t> finish();

 private:
  void shift_low();

  std::vector<uint8_t> out_;
  uint64_t low_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint8_t cache_ = 0;
  uint64_t cache_size_ = 1;
  bool any_ = false;
};

class RangeDecoder {
 public:
  // Reads 5 header bytes immediately; construct only for nonempty payloads.
  RangeDecoder(const uint8_t* data, size_t size);

  // Returns a value in [0, total); the caller locates the symbol whose
  // [cum, cum+freq) bracket contains it, then calls consume.
  uint32_t decode_target(uint32_t total);
  void consume(uint32_t cum, uint32_t freq, uint32_t total);

  size_t consumed() const { return pos_; }

 private:
  uint8_t next_byte();

  const uint8_t* data_;
  size_t size_, pos_ = 0;
  int overrun_ = 0;
  uint32_t range_ = 0xFFFFFFFFu;
  uint32_t code_ = 0;
};

}  // namespace dcmvc

#endif
