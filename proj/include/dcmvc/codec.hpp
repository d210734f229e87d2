#ifndef DCMVC_CODEC_HPP
#define DCMVC_CODEC_HPP

#include <cstdint>
#include <vector>

#include "dcmvc/bitstream.hpp"
#include "dcmvc/model.hpp"

namespace dcmvc {

// Everything a P-frame depends on from the past: the previous reconstruction
// and the propagated feature, both at padded resolution.
struct PropagationState {
  Tensor ref_frame;    // 3 x H x W
  Tensor ref_feature;  // C_feat x H x W
};

// Per-frame accounting. bpp fields divide payload bits by the original
// (pre-padding) pixel count; mse is measured on the original crop.
struct FrameStats {
  int index = 0;
  char type = 'I';
  double bpp = 0, bpp_motion = 0, bpp_ctx = 0;
  double bits_est = 0;  // entropy-model estimate, bits
  double mse = 0;
  double decouple = 0, cor_g = 0, cor_l = 0;
  int64_t saturations = 0;  // latent entries clamped at the alphabet edge
  uint64_t cm_hash = 0;     // hash of the decoded-side modulation tensors
};

// Replicate-pad on the right/bottom up to the next multiple; identity when
// already aligned.
Tensor pad_to_multiple(const Tensor& x, int multiple);
Tensor crop_top_left(const Tensor& x, int h, int w);

// I-frames travel as interleaved 8-bit RGB of the original crop.
std::vector<uint8_t> quantize_frame_8bit(const Tensor& x);
Tensor dequantize_frame_8bit(const std::vector<uint8_t>& raw, int h, int w);

// State after an intra refresh: padded reconstruction plus a feature
// extracted from it (there is no propagated feature to continue from).
PropagationState refresh_state(CodecModel& model, const Tensor& recon_orig);

struct PFrameResult {
  FrameUnit unit;
  Tensor recon;    // padded
  Tensor feature;  // padded
  double bits_est_motion = 0, bits_est_ctx = 0;
  double decouple = 0, cor_g = 0, cor_l = 0;
  int64_t saturations = 0;
  uint64_t cm_hash = 0;
};

struct PDecodeResult {
  Tensor recon;
  Tensor feature;
  uint64_t cm_hash = 0;
};

PFrameResult encode_p_frame(CodecModel& model, const Tensor& x_pad,
                            const PropagationState& state);
PDecodeResult decode_p_frame(CodecModel& model, const FrameUnit& unit,
                             const PropagationState& state);

struct EncodeResult {
  std::vector<uint8_t> bytes;
  std::vector<FrameStats> stats;
};

// frames: original-size 3xHxW tensors in [0,1], all alike. intra_period -1
// means a single leading I-frame; p > 0 refreshes every p-th frame.
EncodeResult encode_sequence(CodecModel& model, const std::vector<Tensor>& frames,
                             int intra_period);

struct DecodeResult {
  StreamHeader header;
  std::vector<Tensor> frames;  // original crop
  std::vector<uint64_t> cm_hashes;
};

DecodeResult decode_stream(CodecModel& model, const std::vector<uint8_t>& bytes);

}  // namespace dcmvc

#endif
