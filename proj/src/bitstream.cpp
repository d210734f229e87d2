#include "dcmvc/bitstream.hpp"

#include <cstring>
#include <string>
#include <type_traits>

namespace dcmvc {

namespace {

constexpr char kMagic[4] = {'D', 'C', 'M', 'V'};

template <typename T>
void put_le(std::vector<uint8_t>& out, T v) {
  using U = std::make_unsigned_t<T>;
  const U u = static_cast<U>(v);
  for (size_t i = 0; i < sizeof(T); ++i)
    out.push_back(static_cast<uint8_t>(u >> (8 * i)));
}

void validate_header(const StreamHeader& h) {
  DCMVC_CHECK(h.version == 1, "stream: unsupported version " + std::to_string(h.version));
  DCMVC_CHECK(h.width >= 1 && h.height >= 1, "stream: zero frame dimensions");
  DCMVC_CHECK(h.intra_period == -1 || (h.intra_period >= 1 && h.intra_period <= 1024),
              "stream: intra period out of range: " + std::to_string(h.intra_period));
}

}  // namespace

std::vector<uint8_t> write_stream(const StreamHeader& h,
                                  const std::vector<FrameUnit>& units) {
  validate_header(h);
  DCMVC_CHECK(units.size() == h.frame_count,
              "stream: unit count does not match header frame count");
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_le<uint16_t>(out, h.version);
  put_le<uint16_t>(out, h.width);
  put_le<uint16_t>(out, h.height);
  put_le<uint16_t>(out, h.frame_count);
  put_le<int16_t>(out, h.intra_period);
  out.push_back(h.lambda_index);
  put_le<uint16_t>(out, h.c_ctx);
  put_le<uint16_t>(out, h.c_feat);
  put_le<uint16_t>(out, h.c_y);
  for (size_t t = 0; t < units.size(); ++t) {
    const FrameUnit& u = units[t];
    const bool want_i = StreamReader::is_intra_slot(static_cast<int>(t), h.intra_period);
    DCMVC_CHECK(u.frame_type == (want_i ? 0 : 1),
                "stream: frame " + std::to_string(t) + " type violates intra period");
    out.push_back(u.frame_type);
    if (u.frame_type == 0) {
      DCMVC_CHECK(u.p1.empty(), "stream: I-frame with a second payload");
      put_le<uint32_t>(out, static_cast<uint32_t>(u.p0.size()));
      out.insert(out.end(), u.p0.begin(), u.p0.end());
    } else {
      put_le<uint32_t>(out, static_cast<uint32_t>(u.p0.size()));
      put_le<uint32_t>(out, static_cast<uint32_t>(u.p1.size()));
      out.insert(out.end(), u.p0.begin(), u.p0.end());
      out.insert(out.end(), u.p1.begin(), u.p1.end());
    }
  }
  return out;
}

StreamReader::StreamReader(const uint8_t* data, size_t size)
    : data_(data), size_(size) {
  DCMVC_CHECK(size_ >= 21, "stream: truncated header");
  DCMVC_CHECK(std::memcmp(data_, kMagic, 4) == 0, "stream: bad magic");
  pos_ = 4;
  auto u16 = [&] {
    const uint16_t v = static_cast<uint16_t>(data_[pos_] | (data_[pos_ + 1] << 8));
    pos_ += 2;
    return v;
  };
  header_.version = u16();
  header_.width = u16();
  header_.height = u16();
  header_.frame_count = u16();
  header_.intra_period = static_cast<int16_t>(u16());
  header_.lambda_index = data_[pos_++];
  header_.c_ctx = u16();
  header_.c_feat = u16();
  header_.c_y = u16();
  validate_header(header_);
}

FrameUnit StreamReader::next_unit() {
  DCMVC_CHECK(has_next(), "stream: reading past the last frame unit");
  auto need = [&](size_t n, const char* what) {
    DCMVC_CHECK(pos_ + n <= size_, std::string("stream: truncated ") + what +
                                       " at frame " + std::to_string(unit_index_));
  };
  auto u32 = [&](const char* what) {
    need(4, what);
    const uint32_t v = static_cast<uint32_t>(data_[pos_]) |
                       (static_cast<uint32_t>(data_[pos_ + 1]) << 8) |
                       (static_cast<uint32_t>(data_[pos_ + 2]) << 16) |
                       (static_cast<uint32_t>(data_[pos_ + 3]) << 24);
    pos_ += 4;
    return v;
  };
  FrameUnit u;
  need(1, "frame type");
  u.frame_type = data_[pos_++];
  DCMVC_CHECK(u.frame_type <= 1, "stream: unknown frame type at frame " +
                                     std::to_string(unit_index_));
  const bool want_i = is_intra_slot(unit_index_, header_.intra_period);
  DCMVC_CHECK(u.frame_type == (want_i ? 0 : 1),
              "stream: frame " + std::to_string(unit_index_) +
                  " type violates intra period");
  if (u.frame_type == 0) {
    const uint32_t n = u32("I payload length");
    need(n, "I payload");
    u.p0.assign(data_ + pos_, data_ + pos_ + n);
    pos_ += n;
  } else {
    const uint32_t nm = u32("motion payload length");
    const uint32_t nc = u32("context payload length");
    need(static_cast<size_t>(nm) + nc, "P payload");
    u.p0.assign(data_ + pos_, data_ + pos_ + nm);
    pos_ += nm;
    u.p1.assign(data_ + pos_, data_ + pos_ + nc);
    pos_ += nc;
  }
  ++unit_index_;
  return u;
}

std::pair<StreamHeader, std::vector<FrameUnit>> read_stream(
    const std::vector<uint8_t>& bytes) {
  StreamReader r(bytes.data(), bytes.size());
  std::vector<FrameUnit> units;
  while (r.has_next()) units.push_back(r.next_unit());
  return {r.header(), std::move(units)};
}

}  // namespace dcmvc
