#include "dcmvc/range_coder.hpp"

namespace dcmvc {

namespace {
constexpr uint32_t kTop = 1u << 24;
}

void RangeEncoder::encode(uint32_t cum, uint32_t freq, uint32_t total) {
  DCMVC_CHECK(freq > 0 && cum + freq <= total && total <= (1u << 16),
              "range encoder: invalid frequency interval");
  any_ = true;
  const uint32_t r = range_ / total;
  low_ += static_cast<uint64_t>(cum) * r;
  range_ = r * freq;
  while (range_ < kTop) {
    shift_low();
    range_ <<= 8;
  }
}

void RangeEncoder::shift_low() {
  if (static_cast<uint32_t>(low_) < 0xFF000000u || (low_ >> 32) != 0) {
    uint8_t carry = static_cast<uint8_t>(low_ >> 32);
    do {
      out_.push_back(static_cast<uint8_t>(cache_ + carry));
      cache_ = 0xFF;
    } while (--cache_size_ != 0);
    cache_ = static_cast<uint8_t>(low_ >> 24);
  }
  ++cache_size_;
  low_ = static_cast<uint32_t>(low_) << 8;
}

std::vector<uint8_t> RangeEncoder::finish() {
  if (!any_) return {};
  // encode() leaves range_ >= kTop, so the smallest multiple of kTop inside
  // [low, low+range) is a valid codeword with 24 trailing zero bits; emit
  // only its significant bytes and let the decoder imply the zero tail
  low_ = (low_ + (kTop - 1)) & ~static_cast<uint64_t>(kTop - 1);
  shift_low();
  shift_low();
  return std::move(out_);
}

RangeDecoder::RangeDecoder(const uint8_t* data, size_t size)
    : data_(data), size_(size) {
  // first byte is the encoder's initial cache and always zero
  const uint8_t lead = next_byte();
  DCMVC_CHECK(lead == 0, "range decoder: corrupt payload header");
  for (int i = 0; i < 4; ++i) code_ = (code_ << 8) | next_byte();
}

uint8_t RangeDecoder::next_byte() {
  if (pos_ < size_) return data_[pos_++];
  // the encoder trims the codeword's three zero tail bytes; reading further
  // than that means the payload lost real content
  ++overrun_;
  DCMVC_CHECK(overrun_ <= 3, "range decoder: truncated payload");
  return 0;
}

uint32_t RangeDecoder::decode_target(uint32_t total) {
  const uint32_t r = range_ / total;
  uint32_t v = code_ / r;
  if (v >= total) v = total - 1;
  return v;
}

void RangeDecoder::consume(uint32_t cum, uint32_t freq, uint32_t total) {
  const uint32_t r = range_ / total;
  code_ -= cum * r;
  range_ = r * freq;
  while (range_ < kTop) {
    code_ = (code_ << 8) | next_byte();
    range_ <<= 8;
  }
}

}  // namespace dcmvc
