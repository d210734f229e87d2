#include "dcmvc/model.hpp"

#include <cmath>
#include <cstdio>

#include "dcmvc/common.hpp"
#include "dcmvc/context.hpp"
#include "dcmvc/flow.hpp"

namespace dcmvc {

const float kLambdaSet[4] = {85.0f, 170.0f, 380.0f, 840.0f};

const char* comp_mode_name(CompMode m) {
  switch (m) {
    case CompMode::kOff: return "off";
    case CompMode::kConcat: return "concat";
    case CompMode::kFull: return "full";
  }
  return "?";
}

CompMode comp_mode_from_name(const std::string& s) {
  if (s == "off") return CompMode::kOff;
  if (s == "concat") return CompMode::kConcat;
  if (s == "full") return CompMode::kFull;
  fail("unknown compensation mode '" + s + "' (expected full|concat|off)");
}

int ModelConfig::lambda_index() const {
  int best = 0;
  float bd = std::fabs(base_lambda - kLambdaSet[0]);
  for (int i = 1; i < 4; ++i) {
    float d = std::fabs(base_lambda - kLambdaSet[i]);
    if (d < bd) { bd = d; best = i; }
  }
  return best;
}

static void validate_config(const ModelConfig& c) {
  DCMVC_CHECK(c.c_ctx >= 2 && c.c_ctx % 2 == 0,
              "c_ctx must be even and >= 2, got " + std::to_string(c.c_ctx));
  DCMVC_CHECK(c.c_feat >= 1 && c.c_y >= 1 && c.c_h >= 2 && c.c_mv >= 1,
              "channel widths must be positive");
  DCMVC_CHECK(c.flow_levels >= 1 && c.flow_levels <= 8,
              "flow_levels out of range: " + std::to_string(c.flow_levels));
  DCMVC_CHECK(c.flow_width >= 4, "flow_width too small: " + std::to_string(c.flow_width));
  DCMVC_CHECK(c.base_lambda > 0.0f, "base_lambda must be positive");
}

CodecModel::CodecModel(const ModelConfig& cfg, uint64_t seed) : cfg_(cfg) {
  validate_config(cfg_);
  register_all(seed);
}

void CodecModel::register_all(uint64_t seed) {
  Rng rng(seed);
  const ModelConfig& c = cfg_;

  register_flow_net(ps_, rng, "mest", c.flow_levels, c.flow_width);

  register_conv(ps_, rng, "refresh.c0", c.c_h, 3, 3);
  register_conv(ps_, rng, "refresh.c1", c.c_feat, c.c_h, 3);

  register_conv(ps_, rng, "menc.c0", c.c_h, 2, 3);
  register_conv(ps_, rng, "menc.c1", c.c_h, c.c_h, 3);
  register_conv(ps_, rng, "menc.c2", c.c_h, c.c_h, 3);
  register_conv(ps_, rng, "menc.c3", c.c_mv, c.c_h, 3);

  register_conv(ps_, rng, "mprior.c0", c.c_h, c.c_feat, 3);
  register_conv(ps_, rng, "mprior.c1", 2 * c.c_mv, c.c_h, 3, true, true);

  register_conv(ps_, rng, "mdec.c0", c.c_h, c.c_mv, 3);
  register_conv(ps_, rng, "mdec.c1", c.c_h, c.c_h, 3);
  register_conv(ps_, rng, "mdec.c2", c.c_h, c.c_h, 3);
  register_conv(ps_, rng, "mdec.c3", 2, c.c_h, 3, true, true);

  for (int k = 0; k < 3; ++k) {
    char nm[32];
    std::snprintf(nm, sizeof nm, "ctxmine.p%d", k);
    register_conv(ps_, rng, nm, c.c_ctx, c.c_feat, 3);
  }
  for (int k = 0; k < 3; ++k) {
    char nm[32];
    std::snprintf(nm, sizeof nm, "ctxmine.r%d.c0", k);
    register_conv(ps_, rng, nm, c.c_ctx, c.c_ctx, 3);
    std::snprintf(nm, sizeof nm, "ctxmine.r%d.c1", k);
    register_conv(ps_, rng, nm, c.c_ctx, c.c_ctx, 3, true, true);
  }

  if (c.needs_oriented_branch()) {
    if (c.orientation)
      register_flow_net(ps_, rng, "orient.flow", c.flow_levels, c.flow_width);
    register_conv(ps_, rng, "orient.feat.c0", c.c_h, 3, 3);
    register_conv(ps_, rng, "orient.feat.c1", c.c_ctx, c.c_h, 3);
  }

  if (c.comp == CompMode::kFull) {
    register_conv(ps_, rng, "comp.mx.c0", c.c_ctx, c.c_ctx, 3);
    register_global_extractor(ps_, rng, "comp.gp", c.c_ctx);
    register_global_extractor(ps_, rng, "comp.go", c.c_ctx);
    register_coupling(ps_, rng, "comp.lp", c.c_ctx, 2);
    register_coupling(ps_, rng, "comp.lo", c.c_ctx, 2);
    register_global_extractor(ps_, rng, "comp.gf", c.c_ctx);
    register_coupling(ps_, rng, "comp.lf", c.c_ctx, 2);
    register_conv(ps_, rng, "comp.mf.c0", c.c_ctx, 2 * c.c_ctx, 3, true, true);
  } else if (c.comp == CompMode::kConcat) {
    register_conv(ps_, rng, "comp.cc.c0", c.c_h, 2 * c.c_ctx, 3);
    register_conv(ps_, rng, "comp.cc.c1", c.c_ctx, c.c_h, 3, true, true);
  }

  register_conv(ps_, rng, "cenc.s0", c.c_h, 3 + c.c_ctx, 3);
  register_conv(ps_, rng, "cenc.s1", c.c_h, c.c_h + c.c_ctx, 3);
  register_conv(ps_, rng, "cenc.s2", c.c_h, c.c_h + c.c_ctx, 3);
  register_conv(ps_, rng, "cenc.s3", c.c_y, c.c_h, 3);

  register_conv(ps_, rng, "yprior.c0", c.c_h, c.c_ctx, 3);
  register_conv(ps_, rng, "yprior.c1", c.c_h, c.c_h, 3);
  register_conv(ps_, rng, "yprior.c2", 2 * c.c_y, c.c_h, 3, true, true);

  register_conv(ps_, rng, "cdec.c0", c.c_h, c.c_y, 3);
  register_conv(ps_, rng, "cdec.c1", c.c_h, c.c_h + c.c_ctx, 3);
  register_conv(ps_, rng, "cdec.c2", c.c_h, c.c_h + c.c_ctx, 3);
  register_conv(ps_, rng, "cdec.c3", c.c_h, c.c_h + c.c_ctx, 3);
  register_conv(ps_, rng, "cdec.c4", c.c_feat, c.c_h, 3);

  register_conv(ps_, rng, "gen.trunk", c.c_h, c.c_feat, 3);
  register_conv(ps_, rng, "gen.img", 3, c.c_h, 3);
  register_conv(ps_, rng, "gen.feat", c.c_feat, c.c_h, 3);

  ps_.add("meta.base_lambda", Tensor::full({1}, cfg_.base_lambda));
}

CodecModel CodecModel::from_checkpoint(const std::string& path) {
  ParamStore loaded = ParamStore::load(path);

  ModelConfig cfg;
  DCMVC_CHECK(loaded.has("refresh.c0.w") && loaded.has("ctxmine.p0.w") &&
              loaded.has("cenc.s3.w") && loaded.has("menc.c3.w") &&
              loaded.has("mest.l0.c0.w") && loaded.has("meta.base_lambda"),
              "checkpoint lacks required parameters: " + path);
  cfg.c_h = loaded.get("refresh.c0.w").dim(0);
  cfg.c_feat = loaded.get("refresh.c1.w").dim(0);
  cfg.c_ctx = loaded.get("ctxmine.p0.w").dim(0);
  cfg.c_y = loaded.get("cenc.s3.w").dim(0);
  cfg.c_mv = loaded.get("menc.c3.w").dim(0);
  cfg.flow_width = loaded.get("mest.l0.c0.w").dim(0);
  cfg.flow_levels = 0;
  while (true) {
    char nm[32];
    std::snprintf(nm, sizeof nm, "mest.l%d.c0.w", cfg.flow_levels);
    if (!loaded.has(nm)) break;
    ++cfg.flow_levels;
  }
  cfg.orientation = loaded.has("orient.flow.l0.c0.w");
  if (loaded.has("comp.mf.c0.w")) cfg.comp = CompMode::kFull;
  else if (loaded.has("comp.cc.c0.w")) cfg.comp = CompMode::kConcat;
  else cfg.comp = CompMode::kOff;
  cfg.base_lambda = loaded.get("meta.base_lambda").item();

  CodecModel m(cfg, 0);
  DCMVC_CHECK(m.ps_.size() == loaded.size(),
              "checkpoint parameter inventory mismatch: " + std::to_string(loaded.size()) +
              " stored, " + std::to_string(m.ps_.size()) + " expected");
  for (const auto& e : m.ps_.entries()) {
    DCMVC_CHECK(loaded.has(e.name), "checkpoint missing parameter " + e.name);
    const Tensor& src = loaded.get(e.name);
    DCMVC_CHECK(src.same_shape(e.value),
                "checkpoint shape mismatch for " + e.name + ": " + src.shape_str() +
                " vs " + e.value.shape_str());
  }
  m.ps_ = std::move(loaded);
  return m;
}

// --- builders ---

NodeId CodecModel::refresh_feature(Binder& b, NodeId x_hat_i) const {
  NodeId h = b.g().leaky_relu(b.conv("refresh.c0", x_hat_i));
  return b.conv("refresh.c1", h);
}

NodeId CodecModel::motion_estimate(Binder& b, NodeId ref_frame, NodeId x_t) const {
  return flow_estimate(b, "mest", ref_frame, x_t, cfg_.flow_levels);
}

NodeId CodecModel::motion_encode(Binder& b, NodeId v) const {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv("menc.c0", v, 2));
  h = g.leaky_relu(b.conv("menc.c1", h, 2));
  h = g.leaky_relu(b.conv("menc.c2", h, 2));
  return b.conv("menc.c3", h, 2);
}

NodeId CodecModel::motion_decode(Binder& b, NodeId my_hat) const {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv("mdec.c0", g.upsample_bilinear2(my_hat)));
  h = g.leaky_relu(b.conv("mdec.c1", g.upsample_bilinear2(h)));
  h = g.leaky_relu(b.conv("mdec.c2", g.upsample_bilinear2(h)));
  return b.conv("mdec.c3", g.upsample_bilinear2(h));
}

// mean in the first half of the prior output, log-scale in the second;
// scale bounded to [0.04, 4096]
static void split_prior(Graph& g, NodeId pr, int ch, NodeId* mean, NodeId* scale) {
  *mean = g.slice_c(pr, 0, ch);
  NodeId raw = g.clamp(g.slice_c(pr, ch, 2 * ch), -8.0f, 8.0f);
  *scale = g.clamp(g.exp_(raw), 0.04f, 4096.0f);
}

void CodecModel::motion_prior(Binder& b, NodeId ref_feat, NodeId* mean,
                              NodeId* scale) const {
  Graph& g = b.g();
  NodeId p = g.avg_pool2(g.avg_pool2(g.avg_pool2(ref_feat)));
  NodeId h = g.leaky_relu(b.conv("mprior.c0", p, 2));
  split_prior(g, b.conv("mprior.c1", h), cfg_.c_mv, mean, scale);
}

ContextNodes CodecModel::mine_temporal_context(Binder& b, NodeId ref_feat,
                                               NodeId v_hat) const {
  Graph& g = b.g();
  NodeId feat[3], vk[3];
  feat[0] = ref_feat;
  feat[1] = g.avg_pool2(feat[0]);
  feat[2] = g.avg_pool2(feat[1]);
  vk[0] = v_hat;
  vk[1] = flow_down2(g, vk[0]);
  vk[2] = flow_down2(g, vk[1]);

  ContextNodes out;
  NodeId* slot[3] = {&out.c0, &out.c1, &out.c2};
  for (int k = 0; k < 3; ++k) {
    char nm[32];
    std::snprintf(nm, sizeof nm, "ctxmine.p%d", k);
    NodeId w = warp(g, b.conv(nm, feat[k]), vk[k]);
    std::snprintf(nm, sizeof nm, "ctxmine.r%d.c0", k);
    NodeId r = g.leaky_relu(b.conv(nm, w));
    std::snprintf(nm, sizeof nm, "ctxmine.r%d.c1", k);
    *slot[k] = g.add(w, b.conv(nm, r));
  }
  return out;
}

NodeId CodecModel::extract_ref_context(Binder& b, NodeId frame) const {
  NodeId h = b.g().leaky_relu(b.conv("orient.feat.c0", frame));
  return b.conv("orient.feat.c1", h);
}

void CodecModel::orient(Binder& b, NodeId ref_frame, NodeId v_hat,
                        NodeId* x_pred, NodeId* v_orient, NodeId* c0_orient) const {
  Graph& g = b.g();
  *x_pred = warp(g, ref_frame, v_hat);
  *v_orient = kNoNode;
  *c0_orient = kNoNode;
  if (!cfg_.needs_oriented_branch()) return;
  if (cfg_.orientation) {
    *v_orient = flow_estimate(b, "orient.flow", ref_frame, *x_pred, cfg_.flow_levels);
    *c0_orient = warp(g, extract_ref_context(b, ref_frame), *v_orient);
  } else {
    *c0_orient = extract_ref_context(b, *x_pred);
  }
}

NodeId CodecModel::compensate(Binder& b, NodeId c0, NodeId c0_orient,
                              DecoupleNodes* dec) const {
  Graph& g = b.g();
  if (cfg_.comp == CompMode::kOff) return c0;
  DCMVC_CHECK(c0_orient != kNoNode, "compensation needs an oriented context");
  DCMVC_CHECK(g.value(c0).same_shape(g.value(c0_orient)),
              "context shape mismatch: " + g.value(c0).shape_str() + " vs " +
              g.value(c0_orient).shape_str());

  if (cfg_.comp == CompMode::kConcat) {
    NodeId h = g.leaky_relu(b.conv("comp.cc.c0", g.concat_c({c0, c0_orient})));
    return g.add(c0, b.conv("comp.cc.c1", h));
  }

  NodeId m_p = g.leaky_relu(b.conv("comp.mx.c0", c0));
  NodeId m_o = g.leaky_relu(b.conv("comp.mx.c0", c0_orient));
  NodeId g_p = global_extract(b, "comp.gp", m_p);
  NodeId g_o = global_extract(b, "comp.go", m_o);
  NodeId l_p = coupling_forward(b, "comp.lp", m_p);
  NodeId l_o = coupling_forward(b, "comp.lo", m_o);

  if (dec != nullptr) {
    dec->g_prop = g_p;
    dec->g_orient = g_o;
    dec->l_prop = l_p;
    dec->l_orient = l_o;
    dec->cor_g = cosine_correlation(g, g_o, g_p);
    dec->cor_l = cosine_correlation(g, l_o, l_p);
    dec->loss = decoupling_loss_node(g, dec->cor_l, dec->cor_g);
  }

  NodeId gf = global_extract(b, "comp.gf", g.add(g_p, g_o));
  NodeId lf = coupling_forward(b, "comp.lf", g.add(l_p, l_o));
  return g.add(c0, b.conv("comp.mf.c0", g.concat_c({gf, lf})));
}

NodeId CodecModel::contextual_encode(Binder& b, NodeId x_t, NodeId c0_bar,
                                     const ContextNodes& ctx) const {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv("cenc.s0", g.concat_c({x_t, c0_bar}), 2));
  h = g.leaky_relu(b.conv("cenc.s1", g.concat_c({h, ctx.c1}), 2));
  h = g.leaky_relu(b.conv("cenc.s2", g.concat_c({h, ctx.c2}), 2));
  return b.conv("cenc.s3", h, 2);
}

NodeId CodecModel::contextual_decode(Binder& b, NodeId y_hat, NodeId c0_bar,
                                     const ContextNodes& ctx) const {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv("cdec.c0", g.upsample_bilinear2(y_hat)));
  h = g.leaky_relu(b.conv("cdec.c1", g.concat_c({g.upsample_bilinear2(h), ctx.c2})));
  h = g.leaky_relu(b.conv("cdec.c2", g.concat_c({g.upsample_bilinear2(h), ctx.c1})));
  h = g.leaky_relu(b.conv("cdec.c3", g.concat_c({g.upsample_bilinear2(h), c0_bar})));
  return b.conv("cdec.c4", h);
}

void CodecModel::y_prior(Binder& b, NodeId c2, NodeId* mean, NodeId* scale) const {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv("yprior.c0", c2, 2));
  h = g.leaky_relu(b.conv("yprior.c1", h, 2));
  split_prior(g, b.conv("yprior.c2", h), cfg_.c_y, mean, scale);
}

void CodecModel::generate_frame(Binder& b, NodeId feat, NodeId* x_hat,
                                NodeId* f_next) const {
  Graph& g = b.g();
  NodeId t = g.leaky_relu(b.conv("gen.trunk", feat));
  *x_hat = g.clamp(g.add_const(b.conv("gen.img", t), 0.5f), 0.0f, 1.0f);
  *f_next = b.conv("gen.feat", t);
}

PFrameNodes CodecModel::p_frame_forward(Binder& b, NodeId x_t, NodeId ref_frame,
                                        NodeId ref_feat) const {
  Graph& g = b.g();
  PFrameNodes n;

  n.v = motion_estimate(b, ref_frame, x_t);
  NodeId my = motion_encode(b, n.v);
  n.my_hat = g.quantize_ste(my, 64.0f);
  motion_prior(b, ref_feat, &n.my_mean, &n.my_scale);
  n.bits_motion = g.sum(g.gaussian_bits(n.my_hat, n.my_mean, n.my_scale));

  n.v_hat = motion_decode(b, n.my_hat);
  n.ctx = mine_temporal_context(b, ref_feat, n.v_hat);
  orient(b, ref_frame, n.v_hat, &n.x_pred, &n.v_orient, &n.c0_orient);
  if (cfg_.orientation && n.v_orient != kNoNode)
    n.x_warp_orient = warp(g, ref_frame, n.v_orient);
  n.c0_bar = compensate(b, n.ctx.c0, n.c0_orient, &n.dec);

  NodeId y = contextual_encode(b, x_t, n.c0_bar, n.ctx);
  n.y_hat = g.quantize_ste(y, 64.0f);
  y_prior(b, n.ctx.c2, &n.y_mean, &n.y_scale);
  n.bits_ctx = g.sum(g.gaussian_bits(n.y_hat, n.y_mean, n.y_scale));

  NodeId feat = contextual_decode(b, n.y_hat, n.c0_bar, n.ctx);
  generate_frame(b, feat, &n.x_hat, &n.f_next);
  return n;
}

}  // namespace dcmvc
