#ifndef DCMVC_MODEL_HPP
#define DCMVC_MODEL_HPP

#include <string>

#include "dcmvc/nets.hpp"

namespace dcmvc {

enum class CompMode { kOff, kConcat, kFull };

const char* comp_mode_name(CompMode m);
CompMode comp_mode_from_name(const std::string& s);

// Channel widths and ablation switches. With orientation off but
// compensation on, the oriented branch degrades to context extracted from
// the prediction frame itself (no re-estimated flow).
struct ModelConfig {
  int c_ctx = 32;    // temporal context channels
  int c_feat = 32;   // propagated feature channels
  int c_y = 48;      // contextual latent channels
  int c_h = 32;      // hidden width of coding nets
  int c_mv = 16;     // motion latent channels
  int flow_levels = 3;
  int flow_width = 16;
  bool orientation = true;
  CompMode comp = CompMode::kFull;
  float base_lambda = 170.0f;

  bool needs_oriented_branch() const {
    return orientation || comp != CompMode::kOff;
  }
  int lambda_index() const;  // position in {85, 170, 380, 840}
};

struct ContextNodes {
  NodeId c0 = kNoNode, c1 = kNoNode, c2 = kNoNode;
};

struct DecoupleNodes {
  NodeId g_prop = kNoNode, g_orient = kNoNode;  // G, Ǧ
  NodeId l_prop = kNoNode, l_orient = kNoNode;  // L, Ľ
  NodeId cor_g = kNoNode, cor_l = kNoNode, loss = kNoNode;
};

// Everything the P-frame forward produces, for losses, stats and dumps.
struct PFrameNodes {
  NodeId x_hat = kNoNode, f_next = kNoNode;
  NodeId v = kNoNode, v_hat = kNoNode;
  NodeId x_pred = kNoNode;        // prediction frame (warped reference)
  NodeId v_orient = kNoNode;      // oriented flow, when orientation is on
  NodeId x_warp_orient = kNoNode; // reference aligned by the oriented flow
  NodeId c0_orient = kNoNode;     // oriented context (or its ablation stand-in)
  ContextNodes ctx;
  NodeId c0_bar = kNoNode;
  NodeId my_hat = kNoNode, y_hat = kNoNode;
  NodeId my_mean = kNoNode, my_scale = kNoNode;
  NodeId y_mean = kNoNode, y_scale = kNoNode;
  NodeId bits_motion = kNoNode, bits_ctx = kNoNode;  // differentiable sums
  DecoupleNodes dec;
};

class CodecModel {
 public:
  CodecModel() = default;
  CodecModel(const ModelConfig& cfg, uint64_t seed);

  static CodecModel from_checkpoint(const std::string& path);
  void save(const std::string& path) const { ps_.save(path); }

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return ps_; }
  const ParamStore& params() const { return ps_; }

  // --- graph builders, shared by training, encoding and decoding ---

  // reference feature from a fresh I-frame reconstruction
  NodeId refresh_feature(Binder& b, NodeId x_hat_i) const;

  NodeId motion_estimate(Binder& b, NodeId ref_frame, NodeId x_t) const;
  NodeId motion_encode(Binder& b, NodeId v) const;                   // -> latent
  NodeId motion_decode(Binder& b, NodeId my_hat) const;              // -> v_hat
  void motion_prior(Binder& b, NodeId ref_feat, NodeId* mean, NodeId* scale) const;

  ContextNodes mine_temporal_context(Binder& b, NodeId ref_feat, NodeId v_hat) const;
  NodeId extract_ref_context(Binder& b, NodeId frame) const;  // conv features

  // prediction frame, oriented flow, oriented context per the ablation mode
  void orient(Binder& b, NodeId ref_frame, NodeId v_hat, NodeId* x_pred,
              NodeId* v_orient, NodeId* c0_orient) const;

  // C̄0 from (C0, oriented); fills `dec` in full mode
  NodeId compensate(Binder& b, NodeId c0, NodeId c0_orient, DecoupleNodes* dec) const;

  NodeId contextual_encode(Binder& b, NodeId x_t, NodeId c0_bar,
                           const ContextNodes& ctx) const;
  NodeId contextual_decode(Binder& b, NodeId y_hat, NodeId c0_bar,
                           const ContextNodes& ctx) const;
  void y_prior(Binder& b, NodeId c2, NodeId* mean, NodeId* scale) const;
  void generate_frame(Binder& b, NodeId feat, NodeId* x_hat, NodeId* f_next) const;

  // Full P-frame pass from original frame and propagated state. Training and
  // the encoder side share this; the decoder rebuilds the same tail from
  // decoded latents.
  PFrameNodes p_frame_forward(Binder& b, NodeId x_t, NodeId ref_frame,
                              NodeId ref_feat) const;

 private:
  void register_all(uint64_t seed);

  ModelConfig cfg_;
  ParamStore ps_;
};

extern const float kLambdaSet[4];  // {85, 170, 380, 840}

// Context scale consumed by each coding stage (-1 = none). The decoder
// mirrors the encoder: the scales it injects are the encoder's reversed.
constexpr int kEncStageCtxScale[4] = {0, 1, 2, -1};
constexpr int kDecStageCtxScale[5] = {-1, 2, 1, 0, -1};

}  // namespace dcmvc

#endif
