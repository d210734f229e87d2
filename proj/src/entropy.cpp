#include "dcmvc/entropy.hpp"

#include <cmath>

#include "dcmvc/range_coder.hpp"

namespace dcmvc {

namespace {

inline double norm_cdf(double t) {
  return 0.5 * (1.0 + std::erf(t * 0.70710678118654752440));
}

inline int sym_of(float v) {
  const int s = static_cast<int>(std::lround(v)) + kLatentMax;
  DCMVC_CHECK(s >= 0 && s < kNumSymbols,
              "entropy: symbol outside alphabet support");
  return s;
}

}  // namespace

CdfTables build_cdf_tables(const Tensor& mean, const Tensor& scale) {
  DCMVC_CHECK(mean.same_shape(scale), "entropy: mean/scale shape mismatch");
  CdfTables t;
  t.n = mean.numel();
  t.freq.resize(static_cast<size_t>(t.n) * kNumSymbols);
  t.cdf.resize(static_cast<size_t>(t.n) * (kNumSymbols + 1));
  // floor(p * spread) + 1 per bin keeps every frequency positive while the
  // total stays <= kCdfTotal; the residual goes to the heaviest bin
  constexpr double spread = static_cast<double>(kCdfTotal - kNumSymbols);
  for (int64_t i = 0; i < t.n; ++i) {
    const double mu = mean[i];
    const double sg = scale[i];
    DCMVC_CHECK(sg > 0.0, "entropy: nonpositive scale");
    uint16_t* f = t.freq.data() + static_cast<size_t>(i) * kNumSymbols;
    uint32_t total = 0;
    int heaviest = 0;
    double prev = 0.0;  // cdf at left edge of current bin, tails folded in
    for (int s = 0; s < kNumSymbols; ++s) {
      const int v = s - kLatentMax;
      const double right =
          s == kNumSymbols - 1 ? 1.0 : norm_cdf((v + 0.5 - mu) / sg);
      const double p = right - prev;
      prev = right;
      const uint32_t fi = 1u + static_cast<uint32_t>(p * spread);
      f[s] = static_cast<uint16_t>(fi);
      total += fi;
      if (f[s] > f[heaviest]) heaviest = s;
    }
    DCMVC_CHECK(total <= kCdfTotal, "entropy: CDF quantization overflow");
    f[heaviest] = static_cast<uint16_t>(f[heaviest] + (kCdfTotal - total));
    uint32_t* c = t.cdf.data() + static_cast<size_t>(i) * (kNumSymbols + 1);
    c[0] = 0;
    for (int s = 0; s < kNumSymbols; ++s) c[s + 1] = c[s] + f[s];
  }
  return t;
}

double table_bits(const Tensor& symbols, const CdfTables& t) {
  DCMVC_CHECK(symbols.numel() == t.n, "entropy: symbol/table count mismatch");
  constexpr double inv_ln2 = 1.4426950408889634074;
  double bits = 0.0;
  for (int64_t i = 0; i < t.n; ++i) {
    const int s = sym_of(symbols[i]);
    const uint16_t f = t.freq[static_cast<size_t>(i) * kNumSymbols + s];
    bits -= std::log(static_cast<double>(f) / kCdfTotal) * inv_ln2;
  }
  return bits;
}

std::vector<uint8_t> encode_plane(const Tensor& symbols, const CdfTables& t) {
  DCMVC_CHECK(symbols.numel() == t.n, "entropy: symbol/table count mismatch");
  RangeEncoder rc;
  for (int64_t i = 0; i < t.n; ++i) {
    const int s = sym_of(symbols[i]);
    const uint32_t* c = t.cdf.data() + static_cast<size_t>(i) * (kNumSymbols + 1);
    rc.encode(c[s], c[s + 1] - c[s], kCdfTotal);
  }
  return rc.finish();
}

Tensor decode_plane(const uint8_t* data, size_t size, const CdfTables& t,
                    const std::vector<int>& shape) {
  Tensor out(shape);
  DCMVC_CHECK(out.numel() == t.n, "entropy: shape/table count mismatch");
  if (t.n == 0) return out;
  RangeDecoder rc(data, size);
  for (int64_t i = 0; i < t.n; ++i) {
    const uint32_t* c = t.cdf.data() + static_cast<size_t>(i) * (kNumSymbols + 1);
    const uint32_t target = rc.decode_target(kCdfTotal);
    // binary search for the bracketing symbol
    int lo = 0, hi = kNumSymbols - 1;
    while (lo < hi) {
      const int mid = (lo + hi + 1) / 2;
      if (c[mid] <= target)
        lo = mid;
      else
        hi = mid - 1;
    }
    rc.consume(c[lo], c[lo + 1] - c[lo], kCdfTotal);
    out[i] = static_cast<float>(lo - kLatentMax);
  }
  return out;
}

}  // namespace dcmvc
