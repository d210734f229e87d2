#include "dcmvc/training.hpp"

#include <cmath>
#include <cstdio>
#include <map>
#include <ostream>

#include <json.hpp>

#include "dcmvc/common.hpp"
#include "dcmvc/entropy.hpp"
#include "dcmvc/flow.hpp"
#include "dcmvc/rng.hpp"

namespace dcmvc {

namespace {

// The motion warm-up runs hotter than the end-to-end stage: flow heads are
// zero-initialized and need large steps to start moving, and the tight norm
// clip keeps the photometric loss from blowing up the pyramid.
constexpr float kWarmupLr = 2e-3f;
constexpr float kWarmupClip = 0.5f;
constexpr float kWarmupRateWeight = 0.01f;

void set_f(const nlohmann::json& v, const char* key, float* dst) {
  DCMVC_CHECK(v.is_number(), std::string("train config: `") + key + "` must be a number");
  *dst = v.get<float>();
}

void set_i(const nlohmann::json& v, const char* key, int* dst) {
  DCMVC_CHECK(v.is_number_integer(),
              std::string("train config: `") + key + "` must be an integer");
  *dst = v.get<int>();
}

void set_b(const nlohmann::json& v, const char* key, bool* dst) {
  DCMVC_CHECK(v.is_boolean(), std::string("train config: `") + key + "` must be a bool");
  *dst = v.get<bool>();
}

double grad_norm(const std::map<std::string, Tensor>& grads) {
  double acc = 0;
  for (const auto& [name, g] : grads) {
    (void)name;
    for (int64_t i = 0; i < g.numel(); ++i) acc += double(g[i]) * double(g[i]);
  }
  return std::sqrt(acc);
}

void scale_grads(std::map<std::string, Tensor>& grads, float f) {
  for (auto& [name, g] : grads) {
    (void)name;
    for (int64_t i = 0; i < g.numel(); ++i) g[i] *= f;
  }
}

void clip_grads(std::map<std::string, Tensor>& grads, float bound) {
  if (bound <= 0) return;
  const double n = grad_norm(grads);
  if (n > bound) scale_grads(grads, float(bound / n));
}

int pixel_count(const Tensor& frame) {
  const auto& s = frame.shape();
  return s[s.size() - 2] * s[s.size() - 1];
}

void log_row(std::ostream& log, int step, int t, const LossBreakdown& lb) {
  char line[256];
  std::snprintf(line, sizeof(line), "%d,%d,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g,%.8g\n",
                step, t, lb.lambda_t, lb.d, lb.r, lb.decouple, lb.cor_g, lb.cor_l,
                lb.total);
  log << line;
}

}  // namespace

TrainConfig train_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("train config: ") + e.what());
  }
  DCMVC_CHECK(j.is_object(), "train config: top level must be a JSON object");

  TrainConfig c;
  for (const auto& [key, v] : j.items()) {
    if (key == "base_lambda") set_f(v, "base_lambda", &c.base_lambda);
    else if (key == "alpha") set_f(v, "alpha", &c.alpha);
    else if (key == "hierarchical_weights") {
      DCMVC_CHECK(v.is_array() && v.size() == 4,
                  "train config: `hierarchical_weights` must be an array of 4 numbers");
      for (int i = 0; i < 4; ++i) set_f(v[size_t(i)], "hierarchical_weights", &c.hierarchical_weights[size_t(i)]);
    }
    else if (key == "frames_per_clip") set_i(v, "frames_per_clip", &c.frames_per_clip);
    else if (key == "learning_rate") set_f(v, "learning_rate", &c.learning_rate);
    else if (key == "steps") set_i(v, "steps", &c.steps);
    else if (key == "seed") {
      DCMVC_CHECK(v.is_number_integer() && v.get<int64_t>() >= 0,
                  "train config: `seed` must be a nonnegative integer");
      c.seed = v.get<uint64_t>();
    }
    else if (key == "orientation") set_b(v, "orientation", &c.orientation);
    else if (key == "compensation_mode") {
      DCMVC_CHECK(v.is_string(), "train config: `compensation_mode` must be a string");
      c.compensation_mode = v.get<std::string>();
    }
    else if (key == "decouple_loss") set_b(v, "decouple_loss", &c.decouple_loss);
    else if (key == "warmup_steps") set_i(v, "warmup_steps", &c.warmup_steps);
    else if (key == "batch_clips") set_i(v, "batch_clips", &c.batch_clips);
    else if (key == "crop") set_i(v, "crop", &c.crop);
    else if (key == "corpus_clips") set_i(v, "corpus_clips", &c.corpus_clips);
    else if (key == "sprites") set_i(v, "sprites", &c.sprites);
    else if (key == "max_speed") set_f(v, "max_speed", &c.max_speed);
    else if (key == "noise") set_f(v, "noise", &c.noise);
    else if (key == "grad_clip") set_f(v, "grad_clip", &c.grad_clip);
    else if (key == "c_ctx") set_i(v, "c_ctx", &c.c_ctx);
    else if (key == "c_feat") set_i(v, "c_feat", &c.c_feat);
    else if (key == "c_y") set_i(v, "c_y", &c.c_y);
    else if (key == "c_h") set_i(v, "c_h", &c.c_h);
    else if (key == "c_mv") set_i(v, "c_mv", &c.c_mv);
    else if (key == "flow_levels") set_i(v, "flow_levels", &c.flow_levels);
    else if (key == "flow_width") set_i(v, "flow_width", &c.flow_width);
    else fail("train config: unknown key `" + key + "`");
  }

  bool lambda_ok = false;
  for (float l : kLambdaSet) lambda_ok = lambda_ok || c.base_lambda == l;
  DCMVC_CHECK(lambda_ok, "train config: base_lambda must be one of 85, 170, 380, 840");
  DCMVC_CHECK(c.alpha >= 0, "train config: alpha must be >= 0");
  for (float w : c.hierarchical_weights)
    DCMVC_CHECK(w > 0, "train config: hierarchical_weights must be positive");
  DCMVC_CHECK(c.frames_per_clip >= 2, "train config: frames_per_clip must be >= 2");
  DCMVC_CHECK(c.learning_rate > 0, "train config: learning_rate must be > 0");
  DCMVC_CHECK(c.steps >= 0 && c.warmup_steps >= 0, "train config: step counts must be >= 0");
  DCMVC_CHECK(c.batch_clips >= 1, "train config: batch_clips must be >= 1");
  DCMVC_CHECK(c.crop >= 32 && c.crop % 16 == 0,
              "train config: crop must be a multiple of 16, at least 32");
  DCMVC_CHECK(c.corpus_clips >= 1, "train config: corpus_clips must be >= 1");
  comp_mode_from_name(c.compensation_mode);  // validates the name
  return c;
}

ModelConfig model_config_from(const TrainConfig& cfg) {
  ModelConfig m;
  m.c_ctx = cfg.c_ctx;
  m.c_feat = cfg.c_feat;
  m.c_y = cfg.c_y;
  m.c_h = cfg.c_h;
  m.c_mv = cfg.c_mv;
  m.flow_levels = cfg.flow_levels;
  m.flow_width = cfg.flow_width;
  m.orientation = cfg.orientation;
  m.comp = comp_mode_from_name(cfg.compensation_mode);
  m.base_lambda = cfg.base_lambda;
  return m;
}

NodeId rd_loss(Graph& g, NodeId x, NodeId x_hat, NodeId bits_est, NodeId decouple,
               float lambda_t, float alpha, LossBreakdown* out) {
  const int npx = pixel_count(g.value(x));
  const NodeId d = g.mse(x, x_hat);
  const NodeId r = g.scale(bits_est, 1.0f / float(npx));
  NodeId total = g.scale(d, lambda_t);
  if (decouple != kNoNode) total = g.add(total, g.scale(decouple, alpha));
  total = g.add(total, r);
  if (out) {
    out->d = g.value(d)[0];
    out->r = g.value(r)[0];
    out->decouple = decouple == kNoNode ? 0.0 : g.value(decouple)[0];
    out->total = g.value(total)[0];
    out->lambda_t = lambda_t;
  }
  return total;
}

TrainResult train_cascaded(CodecModel& model,
                           const std::vector<std::vector<Tensor>>& dataset,
                           const TrainConfig& cfg, std::ostream& log) {
  const int fpc = cfg.frames_per_clip;
  std::vector<int> usable;
  for (size_t i = 0; i < dataset.size(); ++i) {
    if (int(dataset[i].size()) >= fpc) {
      usable.push_back(int(i));
    } else {
      log << "# warning: clip " << i << " has " << dataset[i].size()
          << " frames, needs " << fpc << ", skipped\n";
    }
  }
  DCMVC_CHECK(!usable.empty(), "train_cascaded: no clip has frames_per_clip frames");

  const bool full_comp = model.config().comp == CompMode::kFull;
  const float alpha_eff = cfg.decouple_loss ? cfg.alpha : 0.0f;
  Rng rng(cfg.seed);
  log << "step,frame_index_in_clip,lambda_t,D,R,decouple,cor_G,cor_L,total\n";

  // stage 1: motion estimation and coding on frame pairs
  for (int step = 0; step < cfg.warmup_steps; ++step) {
    const auto& clip = dataset[size_t(usable[size_t(rng.uniform_int(0, int(usable.size()) - 1))])];
    const int t = rng.uniform_int(1, int(clip.size()) - 1);
    const int npx = pixel_count(clip[size_t(t)]);

    Graph g;
    Binder b(g, model.params(), true);
    const NodeId ref = g.leaf(clip[size_t(t - 1)]);
    const NodeId tgt = g.leaf(clip[size_t(t)]);

    FlowPyramid pyr;
    const NodeId v = flow_estimate(b, "mest", ref, tgt, model.config().flow_levels, &pyr);
    NodeId photo = kNoNode;
    for (size_t l = 0; l < pyr.flows.size(); ++l) {
      const NodeId pl = g.mse(warp(g, pyr.refs[l], pyr.flows[l]), pyr.tgts[l]);
      photo = photo == kNoNode ? pl : g.add(photo, pl);
    }

    const NodeId feat = model.refresh_feature(b, ref);
    const NodeId my_hat = g.quantize_ste(model.motion_encode(b, v), float(kLatentMax));
    NodeId m_mean = kNoNode, m_scale = kNoNode;
    model.motion_prior(b, feat, &m_mean, &m_scale);
    const NodeId v_hat = model.motion_decode(b, my_hat);
    const NodeId warp_loss = g.mse(warp(g, ref, v_hat), tgt);
    const NodeId rate = g.scale(g.sum(g.gaussian_bits(my_hat, m_mean, m_scale)),
                                kWarmupRateWeight / float(npx));
    NodeId loss = g.add(g.add(photo, warp_loss), rate);

    if (model.config().orientation) {
      // warm up the orientation estimator on its inference-time task: align
      // the reference to the prediction frame (detached, so this loss cannot
      // drag the motion path toward the orientation net's current output)
      const NodeId x_pred = g.leaf(g.value(warp(g, ref, v_hat)));
      FlowPyramid opyr;
      flow_estimate(b, "orient.flow", ref, x_pred, model.config().flow_levels, &opyr);
      for (size_t l = 0; l < opyr.flows.size(); ++l)
        loss = g.add(loss, g.mse(warp(g, opyr.refs[l], opyr.flows[l]), opyr.tgts[l]));
    }

    g.backward(loss);
    std::map<std::string, Tensor> grads;
    b.collect_grads(grads);
    clip_grads(grads, kWarmupClip);
    model.params().adam_step(grads, kWarmupLr);

    if (step % 25 == 0 || step + 1 == cfg.warmup_steps)
      log << "# warmup step " << step << " loss " << g.value(loss)[0] << "\n";
  }

  // stage 2: cascaded end-to-end
  TrainResult res;
  res.warmup_steps = cfg.warmup_steps;
  for (int step = 0; step < cfg.steps; ++step) {
    std::map<std::string, Tensor> grads;
    double step_total = 0;
    for (int bc = 0; bc < cfg.batch_clips; ++bc) {
      const auto& clip = dataset[size_t(usable[size_t(rng.uniform_int(0, int(usable.size()) - 1))])];
      const int start = rng.uniform_int(0, int(clip.size()) - fpc);

      Graph g;
      Binder b(g, model.params(), true);
      NodeId ref_frame = g.leaf(clip[size_t(start)]);
      NodeId ref_feat = model.refresh_feature(b, ref_frame);

      NodeId clip_sum = kNoNode;
      for (int t = 1; t < fpc; ++t) {
        const NodeId x_t = g.leaf(clip[size_t(start + t)]);
        const PFrameNodes n = model.p_frame_forward(b, x_t, ref_frame, ref_feat);
        const float lambda_t =
            cfg.base_lambda * cfg.hierarchical_weights[size_t(t % 4)];
        const NodeId bits = g.add(n.bits_motion, n.bits_ctx);
        const NodeId dec = full_comp ? n.dec.loss : kNoNode;

        LossBreakdown lb;
        const NodeId loss_t = rd_loss(g, x_t, n.x_hat, bits, dec, lambda_t, alpha_eff, &lb);
        if (full_comp) {
          lb.cor_g = g.value(n.dec.cor_g)[0];
          lb.cor_l = g.value(n.dec.cor_l)[0];
        }
        log_row(log, step, t, lb);

        clip_sum = clip_sum == kNoNode ? loss_t : g.add(clip_sum, loss_t);
        ref_frame = n.x_hat;
        ref_feat = n.f_next;
      }
      const NodeId clip_loss = g.scale(clip_sum, 1.0f / float(fpc - 1));
      g.backward(clip_loss);
      b.collect_grads(grads);
      step_total += g.value(clip_loss)[0];
    }
    scale_grads(grads, 1.0f / float(cfg.batch_clips));
    clip_grads(grads, cfg.grad_clip);
    model.params().adam_step(grads, cfg.learning_rate);
    res.final_total = step_total / double(cfg.batch_clips);
    ++res.steps;
  }
  return res;
}

}  // namespace dcmvc
