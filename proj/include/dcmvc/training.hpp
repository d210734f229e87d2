#ifndef DCMVC_TRAINING_HPP
#define DCMVC_TRAINING_HPP

#include <array>
#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "dcmvc/model.hpp"
#include "dcmvc/tensor.hpp"

namespace dcmvc {

struct TrainConfig {
  // rate-distortion operating point and loss weights
  float base_lambda = 170.0f;
  float alpha = 0.2f;
  std::array<float, 4> hierarchical_weights{0.5f, 1.2f, 0.5f, 0.9f};
  int frames_per_clip = 7;  // 32 in long-sequence mode
  float learning_rate = 4e-4f;
  int steps = 400;  // end-to-end stage
  uint64_t seed = 1;

  // ablation switches
  bool orientation = true;
  std::string compensation_mode = "full";  // full | concat | off
  bool decouple_loss = true;

  // desk-scale knobs, no paper counterpart
  int warmup_steps = 150;  // motion warm-up stage
  int batch_clips = 4;
  int crop = 64;         // clip side length, multiple of 16
  int corpus_clips = 24; // procedural training corpus size
  int sprites = 2;
  float max_speed = 1.5f;
  float noise = 1.5f / 255.0f;
  float grad_clip = 1.0f;  // global-norm bound, 0 disables

  // model widths used when training from scratch
  int c_ctx = 8, c_feat = 8, c_y = 8, c_h = 8, c_mv = 4;
  int flow_levels = 2, flow_width = 8;
};

// Strict parse: every key must be a TrainConfig field of the right type;
// unknown keys are rejected. Absent keys keep their defaults.
TrainConfig train_config_from_json(const std::string& text);

ModelConfig model_config_from(const TrainConfig& cfg);

struct LossBreakdown {
  double d = 0;         // mean squared error on [0,1] frames
  double r = 0;         // estimated bits per pixel
  double decouple = 0;  // decoupling loss value (logged even when unweighted)
  double total = 0;     // lambda_t * d + alpha * decouple + r
  double cor_g = 0, cor_l = 0;
  double lambda_t = 0;
};

// total = lambda_t * mse(x, x_hat) + alpha * decouple + bits_est / pixels.
// `decouple` may be kNoNode (term treated as zero). Breakdown values are
// written to `out` when given.
NodeId rd_loss(Graph& g, NodeId x, NodeId x_hat, NodeId bits_est, NodeId decouple,
               float lambda_t, float alpha, LossBreakdown* out = nullptr);

struct TrainResult {
  int warmup_steps = 0;
  int steps = 0;
  double final_total = 0;  // mean P-frame total of the last step
};

// Two-stage cascaded training. Stage 1 warms up motion estimation/coding
// with a warp-reconstruction loss; stage 2 codes frames_per_clip-frame
// chains end to end, reconstruction feeding the next frame's state. Writes
// the per-frame loss log as CSV to `log`. Deterministic given (model seed,
// config, dataset).
TrainResult train_cascaded(CodecModel& model,
                           const std::vector<std::vector<Tensor>>& dataset,
                           const TrainConfig& cfg, std::ostream& log);

}  // namespace dcmvc

#endif
