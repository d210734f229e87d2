#ifndef DCMVC_DATASET_HPP
#define DCMVC_DATASET_HPP

#include <vector>

#include "dcmvc/rng.hpp"
#include "dcmvc/tensor.hpp"

namespace dcmvc {

// Knobs for the procedural clip generator.
struct ClipSpec {
  int frames = 7;
  int height = 64;
  int width = 64;
  int sprites = 2;          // locally moving patches over the global motion
  float max_speed = 1.5f;   // global translation, px per frame
  float noise = 1.5f / 255.0f;  // additive amplitude before the 8-bit snap
};

// One clip: band-limited textures under a constant global translation plus a
// slow rotation, with independently moving soft-edged sprites on top. Frames
// are snapped to the 8-bit grid so a raw I-frame reproduces them exactly.
std::vector<Tensor> make_clip(Rng& rng, const ClipSpec& spec);

// `clips` independent clips; clip i depends only on (seed, i).
std::vector<std::vector<Tensor>> make_corpus(uint64_t seed, int clips,
                                             const ClipSpec& spec);

}  // namespace dcmvc

#endif
