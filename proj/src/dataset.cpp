#include "dcmvc/dataset.hpp"

#include <cmath>

namespace dcmvc {

namespace {

constexpr float kTau = 6.28318530717958647692f;

// Sum of a few sinusoids with shared geometry across channels and slightly
// offset phases, so RGB stays correlated like natural footage. Frequencies
// sit in a band the flow estimator can lock onto: long enough wavelengths to
// keep a 2.5 px shift unambiguous, short enough to carry gradient.
struct BandTexture {
  static constexpr int kWaves = 4;
  float wx[kWaves], wy[kWaves], amp[kWaves];
  float phase[kWaves][3];

  BandTexture() = default;
  BandTexture(Rng& rng, float amp_lo, float amp_hi) {
    for (int k = 0; k < kWaves; ++k) {
      const float w = rng.uniform(0.2f, 0.3f);
      const float th = rng.uniform(0.0f, kTau);
      wx[k] = w * std::cos(th);
      wy[k] = w * std::sin(th);
      amp[k] = rng.uniform(amp_lo, amp_hi);
      const float base = rng.uniform(0.0f, kTau);
      const float skew = rng.uniform(0.0f, 0.6f);
      for (int c = 0; c < 3; ++c) phase[k][c] = base + skew * float(c);
    }
  }

  float at(int c, float x, float y) const {
    float v = 0;
    for (int k = 0; k < kWaves; ++k)
      v += amp[k] * std::sin(wx[k] * x + wy[k] * y + phase[k][c]);
    return v;
  }
};

struct Sprite {
  BandTexture tex;
  float cx, cy, vx, vy, radius;
  float tint[3];
};

}  // namespace

std::vector<Tensor> make_clip(Rng& rng, const ClipSpec& spec) {
  const int h = spec.height, w = spec.width;
  const BandTexture bg(rng, 0.06f, 0.12f);

  const float speed = rng.uniform(0.3f * spec.max_speed, spec.max_speed);
  const float dir = rng.uniform(0.0f, kTau);
  const float gvx = speed * std::cos(dir);
  const float gvy = speed * std::sin(dir);
  const float spin = rng.uniform(-0.006f, 0.006f);  // rad per frame
  const float ctry = 0.5f * float(h - 1), ctrx = 0.5f * float(w - 1);

  const int nspr = spec.sprites <= 0 ? 0 : rng.uniform_int(1, spec.sprites);
  std::vector<Sprite> sprites;
  sprites.resize(size_t(nspr));
  for (auto& s : sprites) {
    s.tex = BandTexture(rng, 0.10f, 0.16f);
    s.cx = rng.uniform(0.15f * float(w), 0.85f * float(w));
    s.cy = rng.uniform(0.15f * float(h), 0.85f * float(h));
    s.vx = rng.uniform(-1.2f, 1.2f);
    s.vy = rng.uniform(-1.2f, 1.2f);
    s.radius = rng.uniform(5.0f, 10.0f);
    for (float& t : s.tint) t = rng.uniform(0.35f, 0.65f);
  }

  std::vector<Tensor> frames;
  frames.reserve(size_t(spec.frames));
  for (int t = 0; t < spec.frames; ++t) {
    Tensor f({3, h, w});
    const float ang = -spin * float(t);
    const float ca = std::cos(ang), sa = std::sin(ang);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        // rigid global motion: rotate about the center, then translate
        const float rx = float(x) - ctrx, ry = float(y) - ctry;
        const float sx = ca * rx - sa * ry + ctrx - float(t) * gvx;
        const float sy = sa * rx + ca * ry + ctry - float(t) * gvy;
        float px[3];
        for (int c = 0; c < 3; ++c) px[c] = 0.5f + bg.at(c, sx, sy);

        for (const auto& s : sprites) {
          const float scx = s.cx + float(t) * s.vx;
          const float scy = s.cy + float(t) * s.vy;
          const float d = std::hypot(float(x) - scx, float(y) - scy);
          float a = std::min(1.0f, std::max(0.0f, (s.radius - d) * 0.5f + 0.5f));
          a = a * a * (3.0f - 2.0f * a);
          if (a <= 0) continue;
          for (int c = 0; c < 3; ++c) {
            const float sv = s.tint[c] + s.tex.at(c, float(x) - scx, float(y) - scy);
            px[c] += a * (sv - px[c]);
          }
        }

        for (int c = 0; c < 3; ++c) {
          float v = px[c] + rng.uniform(-spec.noise, spec.noise);
          v = std::min(1.0f, std::max(0.0f, v));
          f[(int64_t(c) * h + y) * w + x] = std::round(v * 255.0f) / 255.0f;
        }
      }
    }
    frames.push_back(std::move(f));
  }
  return frames;
}

std::vector<std::vector<Tensor>> make_corpus(uint64_t seed, int clips,
                                             const ClipSpec& spec) {
  std::vector<std::vector<Tensor>> out;
  out.reserve(size_t(clips));
  Rng master(seed);
  for (int i = 0; i < clips; ++i) {
    Rng sub(master.next_u64());
    out.push_back(make_clip(sub, spec));
  }
  return out;
}

}  // namespace dcmvc
