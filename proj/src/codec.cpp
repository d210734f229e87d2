#include "dcmvc/codec.hpp"

#include <cmath>
#include <string>

#include "dcmvc/entropy.hpp"

namespace dcmvc {

namespace {

void check_frame(const Tensor& x, const char* who) {
  DCMVC_CHECK(x.rank() == 3 && x.dim(0) == 3,
              std::string(who) + ": expected a 3xHxW frame, got " + x.shape_str());
  DCMVC_CHECK(x.all_finite(), std::string(who) + ": non-finite frame values");
}

uint64_t hash_tensor(uint64_t h, const Tensor& t) {
  return fnv1a64(t.data(), sizeof(float) * static_cast<size_t>(t.numel()), h);
}

// modulation audit hash: prediction frame, then the oriented branch when the
// variant has one
uint64_t modulation_hash(const Graph& g, NodeId x_pred, NodeId v_orient,
                         NodeId c0_orient) {
  uint64_t h = hash_tensor(0xcbf29ce484222325ull, g.value(x_pred));
  if (v_orient != kNoNode) h = hash_tensor(h, g.value(v_orient));
  if (c0_orient != kNoNode) h = hash_tensor(h, g.value(c0_orient));
  return h;
}

std::vector<int> tensor_shape(const Tensor& t) {
  std::vector<int> s;
  for (int i = 0; i < t.rank(); ++i) s.push_back(t.dim(i));
  return s;
}

int64_t count_saturated(const Tensor& symbols) {
  int64_t n = 0;
  for (int64_t i = 0; i < symbols.numel(); ++i)
    if (symbols[i] == float(kLatentMax) || symbols[i] == float(-kLatentMax)) ++n;
  return n;
}

double crop_mse(const Tensor& recon_pad, const Tensor& orig) {
  double acc = 0;
  const int h = orig.dim(1), w = orig.dim(2);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        const double d = static_cast<double>(recon_pad.at(c, y, x)) - orig.at(c, y, x);
        acc += d * d;
      }
  return acc / (3.0 * h * w);
}

}  // namespace

Tensor pad_to_multiple(const Tensor& x, int multiple) {
  DCMVC_CHECK(x.rank() == 3, "pad_to_multiple: rank-3 tensor required");
  DCMVC_CHECK(multiple > 0, "pad_to_multiple: nonpositive multiple");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int ph = (h + multiple - 1) / multiple * multiple;
  const int pw = (w + multiple - 1) / multiple * multiple;
  if (ph == h && pw == w) return x;
  Tensor out({c, ph, pw});
  for (int k = 0; k < c; ++k)
    for (int y = 0; y < ph; ++y)
      for (int xx = 0; xx < pw; ++xx)
        out.at(k, y, xx) = x.at(k, std::min(y, h - 1), std::min(xx, w - 1));
  return out;
}

Tensor crop_top_left(const Tensor& x, int h, int w) {
  DCMVC_CHECK(x.rank() == 3, "crop_top_left: rank-3 tensor required");
  DCMVC_CHECK(h >= 1 && w >= 1 && h <= x.dim(1) && w <= x.dim(2),
              "crop_top_left: crop " + std::to_string(h) + "x" + std::to_string(w) +
                  " outside " + x.shape_str());
  if (h == x.dim(1) && w == x.dim(2)) return x;
  Tensor out({x.dim(0), h, w});
  for (int c = 0; c < x.dim(0); ++c)
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx) out.at(c, y, xx) = x.at(c, y, xx);
  return out;
}

std::vector<uint8_t> quantize_frame_8bit(const Tensor& x) {
  check_frame(x, "quantize_frame_8bit");
  const int h = x.dim(1), w = x.dim(2);
  std::vector<uint8_t> raw(static_cast<size_t>(h) * w * 3);
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c) {
        const float v = x.at(c, y, xx) * 255.0f;
        const long q = std::lroundf(v < 0.0f ? 0.0f : (v > 255.0f ? 255.0f : v));
        raw[i++] = static_cast<uint8_t>(q);
      }
  return raw;
}

Tensor dequantize_frame_8bit(const std::vector<uint8_t>& raw, int h, int w) {
  DCMVC_CHECK(raw.size() == static_cast<size_t>(h) * w * 3,
              "dequantize_frame_8bit: payload is " + std::to_string(raw.size()) +
                  " bytes, want " + std::to_string(static_cast<size_t>(h) * w * 3));
  Tensor out({3, h, w});
  size_t i = 0;
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      for (int c = 0; c < 3; ++c)
        out.at(c, y, xx) = static_cast<float>(raw[i++]) / 255.0f;
  return out;
}

PropagationState refresh_state(CodecModel& model, const Tensor& recon_orig) {
  check_frame(recon_orig, "refresh_state");
  Tensor padded = pad_to_multiple(recon_orig, 16);
  Graph g;
  Binder b(g, model.params(), false);
  NodeId feat = model.refresh_feature(b, g.leaf(padded));
  return PropagationState{std::move(padded), g.value(feat)};
}

PFrameResult encode_p_frame(CodecModel& model, const Tensor& x_pad,
                            const PropagationState& state) {
  check_frame(x_pad, "encode_p_frame");
  DCMVC_CHECK(x_pad.same_shape(state.ref_frame),
              "encode_p_frame: frame " + x_pad.shape_str() + " vs state " +
                  state.ref_frame.shape_str());

  Graph g;
  Binder b(g, model.params(), false);
  PFrameNodes n = model.p_frame_forward(b, g.leaf(x_pad), g.leaf(state.ref_frame),
                                        g.leaf(state.ref_feature));

  PFrameResult r;
  const CdfTables mt = build_cdf_tables(g.value(n.my_mean), g.value(n.my_scale));
  const CdfTables yt = build_cdf_tables(g.value(n.y_mean), g.value(n.y_scale));
  r.unit.frame_type = 1;
  r.unit.p0 = encode_plane(g.value(n.my_hat), mt);
  r.unit.p1 = encode_plane(g.value(n.y_hat), yt);
  r.saturations = count_saturated(g.value(n.my_hat)) + count_saturated(g.value(n.y_hat));
  r.recon = g.value(n.x_hat);
  r.feature = g.value(n.f_next);
  r.bits_est_motion = g.value(n.bits_motion).item();
  r.bits_est_ctx = g.value(n.bits_ctx).item();
  if (n.dec.loss != kNoNode) {
    r.decouple = g.value(n.dec.loss).item();
    r.cor_g = g.value(n.dec.cor_g).item();
    r.cor_l = g.value(n.dec.cor_l).item();
  }
  r.cm_hash = modulation_hash(g, n.x_pred, n.v_orient, n.c0_orient);
  return r;
}

PDecodeResult decode_p_frame(CodecModel& model, const FrameUnit& unit,
                             const PropagationState& state) {
  DCMVC_CHECK(unit.frame_type == 1, "decode_p_frame: unit is not a P-frame");

  Graph g;
  Binder b(g, model.params(), false);
  NodeId rf = g.leaf(state.ref_frame);
  NodeId ff = g.leaf(state.ref_feature);

  NodeId my_mean = kNoNode, my_scale = kNoNode;
  model.motion_prior(b, ff, &my_mean, &my_scale);
  const CdfTables mt = build_cdf_tables(g.value(my_mean), g.value(my_scale));
  NodeId my_hat = g.leaf(decode_plane(unit.p0.data(), unit.p0.size(), mt,
                                      tensor_shape(g.value(my_mean))));

  NodeId v_hat = model.motion_decode(b, my_hat);
  ContextNodes ctx = model.mine_temporal_context(b, ff, v_hat);

  NodeId x_pred = kNoNode, v_orient = kNoNode, c0_orient = kNoNode;
  model.orient(b, rf, v_hat, &x_pred, &v_orient, &c0_orient);
  DecoupleNodes dec;
  NodeId c0_bar = model.compensate(b, ctx.c0, c0_orient, &dec);

  NodeId y_mean = kNoNode, y_scale = kNoNode;
  model.y_prior(b, ctx.c2, &y_mean, &y_scale);
  const CdfTables yt = build_cdf_tables(g.value(y_mean), g.value(y_scale));
  NodeId y_hat = g.leaf(decode_plane(unit.p1.data(), unit.p1.size(), yt,
                                     tensor_shape(g.value(y_mean))));

  NodeId feat = model.contextual_decode(b, y_hat, c0_bar, ctx);
  NodeId x_hat = kNoNode, f_next = kNoNode;
  model.generate_frame(b, feat, &x_hat, &f_next);

  PDecodeResult r;
  r.recon = g.value(x_hat);
  r.feature = g.value(f_next);
  r.cm_hash = modulation_hash(g, x_pred, v_orient, c0_orient);
  return r;
}

EncodeResult encode_sequence(CodecModel& model, const std::vector<Tensor>& frames,
                             int intra_period) {
  DCMVC_CHECK(!frames.empty(), "encode_sequence: no frames");
  DCMVC_CHECK(intra_period == -1 || intra_period > 0,
              "encode_sequence: intra period must be -1 or positive, got " +
                  std::to_string(intra_period));
  for (const Tensor& f : frames) {
    check_frame(f, "encode_sequence");
    DCMVC_CHECK(f.same_shape(frames[0]),
                "encode_sequence: frame shape drifts from " + frames[0].shape_str() +
                    " to " + f.shape_str());
  }
  const int h = frames[0].dim(1), w = frames[0].dim(2);
  DCMVC_CHECK(h <= 65535 && w <= 65535 && frames.size() <= 65535,
              "encode_sequence: dimensions exceed the container's 16-bit fields");

  StreamHeader hdr;
  hdr.width = static_cast<uint16_t>(w);
  hdr.height = static_cast<uint16_t>(h);
  hdr.frame_count = static_cast<uint16_t>(frames.size());
  hdr.intra_period = static_cast<int16_t>(intra_period);
  hdr.lambda_index = static_cast<uint8_t>(model.config().lambda_index());
  hdr.c_ctx = static_cast<uint16_t>(model.config().c_ctx);
  hdr.c_feat = static_cast<uint16_t>(model.config().c_feat);
  hdr.c_y = static_cast<uint16_t>(model.config().c_y);

  const double px = static_cast<double>(h) * w;
  EncodeResult out;
  std::vector<FrameUnit> units;
  PropagationState state;

  for (size_t t = 0; t < frames.size(); ++t) {
    FrameStats s;
    s.index = static_cast<int>(t);
    if (StreamReader::is_intra_slot(static_cast<int>(t), intra_period)) {
      FrameUnit u;
      u.frame_type = 0;
      u.p0 = quantize_frame_8bit(frames[t]);
      Tensor recon = dequantize_frame_8bit(u.p0, h, w);
      s.type = 'I';
      s.bpp = static_cast<double>(u.p0.size()) * 8.0 / px;
      s.bits_est = static_cast<double>(u.p0.size()) * 8.0;
      s.mse = crop_mse(recon, frames[t]);
      state = refresh_state(model, recon);
      units.push_back(std::move(u));
    } else {
      PFrameResult r = encode_p_frame(model, pad_to_multiple(frames[t], 16), state);
      s.type = 'P';
      s.bpp_motion = static_cast<double>(r.unit.p0.size()) * 8.0 / px;
      s.bpp_ctx = static_cast<double>(r.unit.p1.size()) * 8.0 / px;
      s.bpp = static_cast<double>(r.unit.payload_bytes()) * 8.0 / px;
      s.bits_est = r.bits_est_motion + r.bits_est_ctx;
      s.mse = crop_mse(r.recon, frames[t]);
      s.decouple = r.decouple;
      s.cor_g = r.cor_g;
      s.cor_l = r.cor_l;
      s.saturations = r.saturations;
      s.cm_hash = r.cm_hash;
      state.ref_frame = std::move(r.recon);
      state.ref_feature = std::move(r.feature);
      units.push_back(std::move(r.unit));
    }
    out.stats.push_back(s);
  }
  out.bytes = write_stream(hdr, units);
  return out;
}

DecodeResult decode_stream(CodecModel& model, const std::vector<uint8_t>& bytes) {
  StreamReader reader(bytes.data(), bytes.size());
  const StreamHeader& hdr = reader.header();
  const ModelConfig& cfg = model.config();
  DCMVC_CHECK(hdr.c_ctx == cfg.c_ctx && hdr.c_feat == cfg.c_feat &&
                  hdr.c_y == cfg.c_y &&
                  hdr.lambda_index == static_cast<uint8_t>(cfg.lambda_index()),
              "decode_stream: stream was produced by a different model family");

  const int h = hdr.height, w = hdr.width;
  DecodeResult out;
  out.header = hdr;
  PropagationState state;

  int t = 0;
  while (reader.has_next()) {
    try {
      FrameUnit u = reader.next_unit();
      if (u.frame_type == 0) {
        Tensor recon = dequantize_frame_8bit(u.p0, h, w);
        state = refresh_state(model, recon);
        out.frames.push_back(std::move(recon));
        out.cm_hashes.push_back(0);
      } else {
        PDecodeResult r = decode_p_frame(model, u, state);
        out.frames.push_back(crop_top_left(r.recon, h, w));
        out.cm_hashes.push_back(r.cm_hash);
        state.ref_frame = std::move(r.recon);
        state.ref_feature = std::move(r.feature);
      }
    } catch (const Error& e) {
      fail("frame " + std::to_string(t) + ": " + e.what());
    }
    ++t;
  }
  return out;
}

}  // namespace dcmvc
