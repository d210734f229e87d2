#ifndef DCMVC_ENTROPY_HPP
#define DCMVC_ENTROPY_HPP

#include <cstdint>
#include <vector>

#include "dcmvc/tensor.hpp"

namespace dcmvc {

// Symbol alphabet for quantized latents: integers in [-kLatentMax, kLatentMax].
constexpr int kLatentMax = 64;
constexpr int kNumSymbols = 2 * kLatentMax + 1;
constexpr uint32_t kCdfTotal = 1u << 16;

// Per-element 16-bit-total CDF tables, discretized from a Gaussian with the
// given means/scales. Tail mass is folded into the edge bins and every bin
// keeps a nonzero frequency, so every symbol in range stays codable. The
// construction is pure double arithmetic from (mean, scale), hence identical
// on encoder and decoder.
struct CdfTables {
  int64_t n = 0;
  std::vector<uint16_t> freq;  // n * kNumSymbols
  std::vector<uint32_t> cdf;   // n * (kNumSymbols + 1), last entry kCdfTotal
};

CdfTables build_cdf_tables(const Tensor& mean, const Tensor& scale);

// Self-information of the symbols under the table model, in bits. This is
// the accounting estimate the coder is held to (payload <= estimate + fixed
// overhead, >= estimate - 1 bit).
double table_bits(const Tensor& symbols, const CdfTables& t);

// Encode/decode one latent plane. Symbols are float tensors holding exact
// integers in [-kLatentMax, kLatentMax].
std::vector<uint8_t> encode_plane(const Tensor& symbols, const CdfTables& t);
Tensor decode_plane(const uint8_t* data, size_t size, const CdfTables& t,
                    const std::vector<int>& shape);

}  // namespace dcmvc

#endif
