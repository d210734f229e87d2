#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "dcmvc/codec.hpp"
#include "dcmvc/entropy.hpp"
#include "dcmvc/graph.hpp"
#include "dcmvc/model.hpp"
#include "dcmvc/nets.hpp"
#include "dcmvc/rng.hpp"
#include "oracle.hpp"

using namespace dcmvc;

namespace {

bool bit_equal(const Tensor& a, const Tensor& b) {
  return a.same_shape(b) &&
         std::memcmp(a.data(), b.data(),
                     sizeof(float) * static_cast<size_t>(a.numel())) == 0;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  REQUIRE(a.same_shape(b));
  double m = 0;
  for (int64_t i = 0; i < a.numel(); ++i)
    m = std::max(m, std::fabs(static_cast<double>(a[i]) - b[i]));
  return m;
}

ModelConfig tiny_config(bool orientation, CompMode comp) {
  ModelConfig c;
  c.c_ctx = 4;
  c.c_feat = 4;
  c.c_y = 4;
  c.c_h = 4;
  c.c_mv = 2;
  c.flow_levels = 2;
  c.flow_width = 4;
  c.orientation = orientation;
  c.comp = comp;
  return c;
}

Tensor rand_frame(Rng& rng, int h, int w) {
  Tensor t({3, h, w});
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(0.02f, 0.98f);
  return t;
}

double crop_mse_ref(const Tensor& recon, const Tensor& orig) {
  double acc = 0;
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < orig.dim(1); ++y)
      for (int x = 0; x < orig.dim(2); ++x) {
        const double d = static_cast<double>(recon.at(c, y, x)) - orig.at(c, y, x);
        acc += d * d;
      }
  return acc / (3.0 * orig.dim(1) * orig.dim(2));
}

int64_t edge_count(const Tensor& symbols) {
  int64_t n = 0;
  for (int64_t i = 0; i < symbols.numel(); ++i)
    if (std::fabs(symbols[i]) == static_cast<float>(kLatentMax)) ++n;
  return n;
}

oracle::DT param_dt(CodecModel& m, const std::string& name) {
  return oracle::from_tensor(m.params().get(name));
}

// double-precision replica of the contextual encoder stack
oracle::DT cenc_ref(CodecModel& m, const oracle::DT& x, const oracle::DT& c0b,
                    const oracle::DT& c1, const oracle::DT& c2) {
  auto stage = [&](const char* nm, const oracle::DT& in, bool act) {
    oracle::DT w = param_dt(m, std::string(nm) + ".w");
    oracle::DT b = param_dt(m, std::string(nm) + ".b");
    oracle::DT y = oracle::conv2d(in, w, &b, 2, 1);
    return act ? oracle::leaky_relu(y, 0.1) : y;
  };
  oracle::DT h = stage("cenc.s0", oracle::concat_c({x, c0b}), true);
  h = stage("cenc.s1", oracle::concat_c({h, c1}), true);
  h = stage("cenc.s2", oracle::concat_c({h, c2}), true);
  return stage("cenc.s3", h, false);
}

}  // namespace

TEST_CASE("frame padding, cropping and 8-bit intra coding round trip") {
  Rng rng(5);
  Tensor x = rand_frame(rng, 37, 29);

  Tensor p = pad_to_multiple(x, 16);
  CHECK(p.dim(0) == 3);
  CHECK(p.dim(1) == 48);
  CHECK(p.dim(2) == 32);
  // replicated edges
  CHECK(p.at(1, 47, 10) == x.at(1, 36, 10));
  CHECK(p.at(2, 10, 31) == x.at(2, 10, 28));
  CHECK(p.at(0, 47, 31) == x.at(0, 36, 28));
  CHECK(bit_equal(crop_top_left(p, 37, 29), x));
  CHECK(bit_equal(pad_to_multiple(p, 16), p));

  // exact 8-bit grid survives the trip untouched
  Tensor grid({3, 5, 4});
  int v = 0;
  for (int64_t i = 0; i < grid.numel(); ++i, v = (v + 37) % 256)
    grid[i] = static_cast<float>(v) / 255.0f;
  std::vector<uint8_t> raw = quantize_frame_8bit(grid);
  CHECK(raw.size() == 3u * 5u * 4u);
  CHECK(bit_equal(dequantize_frame_8bit(raw, 5, 4), grid));

  // interleaving is (y, x, c) with values clamped to [0, 255]
  Tensor px({3, 1, 2});
  px.at(0, 0, 0) = 1.5f;   // clamps to 255
  px.at(1, 0, 0) = 0.5f;   // 128 after rounding
  px.at(2, 0, 0) = -0.2f;  // clamps to 0
  px.at(0, 0, 1) = 10.0f / 255.0f;
  px.at(1, 0, 1) = 20.0f / 255.0f;
  px.at(2, 0, 1) = 30.0f / 255.0f;
  raw = quantize_frame_8bit(px);
  CHECK(raw == std::vector<uint8_t>{255, 128, 0, 10, 20, 30});

  CHECK_THROWS_AS(crop_top_left(x, 38, 29), Error);
  CHECK_THROWS_AS(dequantize_frame_8bit(raw, 2, 2), Error);
}

TEST_CASE("quantization rounds ties away from zero and clamps to the alphabet") {
  Graph g;
  Tensor x({9});
  const float in[9] = {0.4f, 0.5f, -0.5f, -2.5f, 2.5f, 3.0f, -7.0f, 100.0f, -100.0f};
  const float want[9] = {0.0f, 1.0f, -1.0f, -3.0f, 3.0f, 3.0f, -7.0f, 64.0f, -64.0f};
  for (int i = 0; i < 9; ++i) x[i] = in[i];
  NodeId q = g.quantize_ste(g.leaf(x), 64.0f);
  for (int i = 0; i < 9; ++i) CHECK(g.value(q)[i] == want[i]);
}

TEST_CASE("straight-through quantization has identity gradient") {
  Rng rng(11);
  Graph g;
  Tensor x = oracle::rand_tensor(rng, {2, 5, 7}, -90.0f, 90.0f);
  x[0] = 200.0f;  // clamped entries keep the identity gradient too
  x[1] = -200.0f;
  NodeId xi = g.leaf(x, true);
  g.backward(g.sum(g.quantize_ste(xi, 64.0f)));
  Tensor gr = g.grad(xi);
  for (int64_t i = 0; i < gr.numel(); ++i) CHECK(gr[i] == 1.0f);
}

TEST_CASE("rate estimate matches the Gaussian bin mass") {
  Graph g;

  // concentrated: the model is certain, the symbol costs ~nothing
  {
    Tensor y({3}), mu({3}), sg({3});
    for (int i = 0; i < 3; ++i) {
      y[i] = static_cast<float>(i - 1);
      mu[i] = y[i];
      sg[i] = 0.04f;
    }
    NodeId bits = g.gaussian_bits(g.leaf(y), g.leaf(mu), g.leaf(sg));
    for (int i = 0; i < 3; ++i) {
      CHECK(g.value(bits)[i] >= 0.0f);
      CHECK(g.value(bits)[i] < 1e-6f);
    }
  }

  // hopeless: probability floored at 2^-16, exactly 16 bits
  {
    Tensor y({2}), mu({2}), sg({2});
    y[0] = 64.0f;
    y[1] = -64.0f;
    mu[0] = 0.0f;
    mu[1] = 10.0f;
    sg[0] = sg[1] = 0.04f;
    NodeId bits = g.gaussian_bits(g.leaf(y), g.leaf(mu), g.leaf(sg));
    CHECK(g.value(bits)[0] == 16.0f);
    CHECK(g.value(bits)[1] == 16.0f);
  }

  // wide: per-bin mass against numeric integration of the same density
  {
    const double mu = 0.7, sg = 50.0;
    Tensor y({7}), mt({7}), st({7});
    for (int i = 0; i < 7; ++i) {
      y[i] = static_cast<float>(i - 3);
      mt[i] = static_cast<float>(mu);
      st[i] = static_cast<float>(sg);
    }
    NodeId bits = g.gaussian_bits(g.leaf(y), g.leaf(mt), g.leaf(st));
    for (int i = 0; i < 7; ++i) {
      const double lo = (i - 3) - 0.5, hi = (i - 3) + 0.5;
      const double want = -std::log2(oracle::gaussian_mass_numeric(mu, sg, lo, hi));
      CHECK(g.value(bits)[i] == doctest::Approx(want).epsilon(1e-6));
    }
  }

  // additive across disjoint splits
  {
    Rng rng(3);
    Tensor y = oracle::rand_tensor(rng, {6, 4, 4}, -8.0f, 8.0f);
    for (int64_t i = 0; i < y.numel(); ++i) y[i] = std::round(y[i]);
    Tensor mu = oracle::rand_tensor(rng, {6, 4, 4}, -2.0f, 2.0f);
    Tensor sg = oracle::rand_tensor(rng, {6, 4, 4}, 0.1f, 5.0f);
    NodeId yi = g.leaf(y), mi = g.leaf(mu), si = g.leaf(sg);
    NodeId whole = g.sum(g.gaussian_bits(yi, mi, si));
    NodeId parts = g.add(
        g.sum(g.gaussian_bits(g.slice_c(yi, 0, 2), g.slice_c(mi, 0, 2),
                              g.slice_c(si, 0, 2))),
        g.sum(g.gaussian_bits(g.slice_c(yi, 2, 6), g.slice_c(mi, 2, 6),
                              g.slice_c(si, 2, 6))));
    CHECK(g.value(whole).item() ==
          doctest::Approx(g.value(parts).item()).epsilon(1e-6));
  }
}

TEST_CASE("p-frame coding is deterministic across graph rebuilds") {
  CodecModel model(tiny_config(true, CompMode::kFull), 21);
  Rng rng(22);
  Tensor ref = rand_frame(rng, 32, 48);
  Tensor x = rand_frame(rng, 32, 48);
  PropagationState state = refresh_state(model, ref);

  PFrameResult a = encode_p_frame(model, x, state);
  PFrameResult b = encode_p_frame(model, x, state);
  CHECK(a.unit.p0 == b.unit.p0);
  CHECK(a.unit.p1 == b.unit.p1);
  CHECK(bit_equal(a.recon, b.recon));
  CHECK(bit_equal(a.feature, b.feature));
  CHECK(a.bits_est_motion == b.bits_est_motion);
  CHECK(a.bits_est_ctx == b.bits_est_ctx);
  CHECK(a.cm_hash == b.cm_hash);

  PDecodeResult da = decode_p_frame(model, a.unit, state);
  PDecodeResult db = decode_p_frame(model, a.unit, state);
  CHECK(bit_equal(da.recon, db.recon));
  CHECK(da.cm_hash == db.cm_hash);
}

TEST_CASE("contextual encoder shape, oracle forward and input gradient") {
  CodecModel model(tiny_config(false, CompMode::kOff), 31);
  Rng rng(32);
  const int h = 32, w = 32;
  Tensor x = rand_frame(rng, h, w);
  Tensor c0b = oracle::rand_tensor(rng, {4, h, w}, -1.0f, 1.0f);
  Tensor c1 = oracle::rand_tensor(rng, {4, h / 2, w / 2}, -1.0f, 1.0f);
  Tensor c2 = oracle::rand_tensor(rng, {4, h / 4, w / 4}, -1.0f, 1.0f);

  Graph g;
  Binder b(g, model.params(), false);
  ContextNodes ctx;
  ctx.c1 = g.leaf(c1);
  ctx.c2 = g.leaf(c2);
  NodeId y = model.contextual_encode(b, g.leaf(x), g.leaf(c0b), ctx);
  CHECK(g.value(y).rank() == 3);
  CHECK(g.value(y).dim(0) == 4);
  CHECK(g.value(y).dim(1) == h / 16);
  CHECK(g.value(y).dim(2) == w / 16);

  oracle::DT want = cenc_ref(model, oracle::from_tensor(x), oracle::from_tensor(c0b),
                             oracle::from_tensor(c1), oracle::from_tensor(c2));
  const Tensor& got = g.value(y);
  double md = 0;
  for (int64_t i = 0; i < got.numel(); ++i)
    md = std::max(md, std::fabs(got[i] - want.v[static_cast<size_t>(i)]));
  CHECK(md < 1e-4);

  oracle::FdCase fc;
  fc.inputs = {x, c0b, c1, c2};
  fc.diff = {true, false, false, false};
  fc.build = [&model](Graph& gg, const std::vector<NodeId>& in) {
    Binder bb(gg, model.params(), false);
    ContextNodes cc;
    cc.c1 = in[2];
    cc.c2 = in[3];
    return model.contextual_encode(bb, in[0], in[1], cc);
  };
  fc.ref = [&model](const std::vector<oracle::DT>& in) {
    return cenc_ref(model, in[0], in[1], in[2], in[3]);
  };
  Rng frng(33);
  CHECK(oracle::fd_max_rel_err(fc, frng) < 1e-3);

  // mismatched context resolution is rejected
  Graph g2;
  Binder b2(g2, model.params(), false);
  ContextNodes bad;
  bad.c1 = g2.leaf(c2);
  bad.c2 = g2.leaf(c1);
  CHECK_THROWS_AS(model.contextual_encode(b2, g2.leaf(x), g2.leaf(c0b), bad), Error);
}

TEST_CASE("context injection mirrors across encoder and decoder stages") {
  std::vector<int> enc, dec;
  for (int s : kEncStageCtxScale)
    if (s >= 0) enc.push_back(s);
  for (int s : kDecStageCtxScale)
    if (s >= 0) dec.push_back(s);
  std::reverse(dec.begin(), dec.end());
  CHECK(enc == dec);

  // each context scale actually reaches the decoder output
  CodecModel model(tiny_config(false, CompMode::kOff), 41);
  Rng rng(42);
  const int h = 32, w = 48;
  Tensor yh = oracle::rand_tensor(rng, {4, h / 16, w / 16}, -3.0f, 3.0f);
  for (int64_t i = 0; i < yh.numel(); ++i) yh[i] = std::round(yh[i]);
  Tensor c0b = oracle::rand_tensor(rng, {4, h, w}, -1.0f, 1.0f);
  Tensor c1 = oracle::rand_tensor(rng, {4, h / 2, w / 2}, -1.0f, 1.0f);
  Tensor c2 = oracle::rand_tensor(rng, {4, h / 4, w / 4}, -1.0f, 1.0f);

  auto run = [&](const Tensor& tc0, const Tensor& tc1, const Tensor& tc2) {
    Graph g;
    Binder b(g, model.params(), false);
    ContextNodes ctx;
    ctx.c1 = g.leaf(tc1);
    ctx.c2 = g.leaf(tc2);
    NodeId f = model.contextual_decode(b, g.leaf(yh), g.leaf(tc0), ctx);
    NodeId xh = kNoNode, fn = kNoNode;
    model.generate_frame(b, f, &xh, &fn);
    return g.value(xh);
  };
  Tensor base = run(c0b, c1, c2);
  CHECK(max_abs_diff(base, run(Tensor({4, h, w}), c1, c2)) > 1e-6);
  CHECK(max_abs_diff(base, run(c0b, Tensor({4, h / 2, w / 2}), c2)) > 1e-6);
  CHECK(max_abs_diff(base, run(c0b, c1, Tensor({4, h / 4, w / 4}))) > 1e-6);
}

TEST_CASE("frame generator clamps to [0,1] and emits the propagated feature") {
  CodecModel model(tiny_config(false, CompMode::kOff), 51);
  Rng rng(52);
  Tensor feat = oracle::rand_tensor(rng, {4, 16, 16}, -100.0f, 100.0f);

  Graph g;
  Binder b(g, model.params(), false);
  NodeId xh = kNoNode, fn = kNoNode;
  model.generate_frame(b, g.leaf(feat), &xh, &fn);

  const Tensor& img = g.value(xh);
  CHECK(img.dim(0) == 3);
  CHECK(img.dim(1) == 16);
  CHECK(img.dim(2) == 16);
  bool in_range = true, hit_lo = false, hit_hi = false;
  for (int64_t i = 0; i < img.numel(); ++i) {
    in_range = in_range && img[i] >= 0.0f && img[i] <= 1.0f;
    hit_lo = hit_lo || img[i] == 0.0f;
    hit_hi = hit_hi || img[i] == 1.0f;
  }
  CHECK(in_range);
  // with +-100 features the clamp must actually engage on both sides
  CHECK(hit_lo);
  CHECK(hit_hi);
  CHECK(g.value(fn).dim(0) == 4);
  CHECK(g.value(fn).dim(1) == 16);
  CHECK(g.value(fn).dim(2) == 16);
}

TEST_CASE("encoder and decoder reconstructions are bit-identical in every variant") {
  struct Variant {
    bool orientation;
    CompMode comp;
  };
  const Variant variants[4] = {{false, CompMode::kOff},
                               {true, CompMode::kConcat},
                               {false, CompMode::kFull},
                               {true, CompMode::kFull}};
  for (int vi = 0; vi < 4; ++vi) {
    CAPTURE(vi);
    CodecModel model(tiny_config(variants[vi].orientation, variants[vi].comp),
                     60 + static_cast<uint64_t>(vi));
    Rng rng(70 + static_cast<uint64_t>(vi));
    PropagationState state = refresh_state(model, rand_frame(rng, 32, 48));

    for (int t = 0; t < 2; ++t) {  // second frame consumes propagated state
      CAPTURE(t);
      Tensor x = rand_frame(rng, 32, 48);
      PFrameResult enc = encode_p_frame(model, x, state);
      PDecodeResult dec = decode_p_frame(model, enc.unit, state);
      CHECK(bit_equal(enc.recon, dec.recon));
      CHECK(bit_equal(enc.feature, dec.feature));
      CHECK(enc.cm_hash == dec.cm_hash);
      if (variants[vi].comp == CompMode::kFull) {
        CHECK(enc.decouple >= 0.0);
        CHECK(enc.cor_g >= -1.0);
        CHECK(enc.cor_g <= 1.0);
        CHECK(enc.cor_l >= -1.0);
        CHECK(enc.cor_l <= 1.0);
      } else {
        CHECK(enc.decouple == 0.0);
      }
      state.ref_frame = enc.recon;
      state.ref_feature = enc.feature;
    }
  }
}

TEST_CASE("sequence round trip reproduces stats, hashes and rates") {
  CodecModel model(tiny_config(true, CompMode::kFull), 81);
  Rng rng(82);
  const int h = 37, w = 29;
  std::vector<Tensor> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(rand_frame(rng, h, w));

  EncodeResult enc = encode_sequence(model, frames, -1);
  REQUIRE(enc.stats.size() == 4);
  CHECK(enc.stats[0].type == 'I');
  for (int t = 1; t < 4; ++t) CHECK(enc.stats[static_cast<size_t>(t)].type == 'P');

  DecodeResult dec = decode_stream(model, enc.bytes);
  CHECK(dec.header.width == w);
  CHECK(dec.header.height == h);
  CHECK(dec.header.frame_count == 4);
  CHECK(dec.header.intra_period == -1);
  REQUIRE(dec.frames.size() == 4);

  // I-frame: exactly the 8-bit quantized original
  CHECK(bit_equal(dec.frames[0],
                  dequantize_frame_8bit(quantize_frame_8bit(frames[0]), h, w)));
  CHECK(dec.cm_hashes[0] == 0);

  const double px = static_cast<double>(h) * w;
  auto [rh, units] = read_stream(enc.bytes);
  REQUIRE(units.size() == 4);
  for (size_t t = 0; t < 4; ++t) {
    const FrameStats& s = enc.stats[t];
    CHECK(dec.frames[t].dim(1) == h);
    CHECK(dec.frames[t].dim(2) == w);
    // decoded reconstruction carries exactly the mse the encoder reported
    CHECK(crop_mse_ref(dec.frames[t], frames[t]) == s.mse);
    // accounting identity against the actual container payload
    CHECK(s.bpp == static_cast<double>(units[t].payload_bytes()) * 8.0 / px);
    if (s.type == 'P') {
      CHECK(s.bpp_motion == static_cast<double>(units[t].p0.size()) * 8.0 / px);
      CHECK(s.bpp_ctx == static_cast<double>(units[t].p1.size()) * 8.0 / px);
      CHECK(dec.cm_hashes[t] == s.cm_hash);
      CHECK(s.bits_est > 0.0);
    }
  }

  // periodic refresh places I-frames exactly on the period
  std::vector<Tensor> five(frames.begin(), frames.end());
  five.push_back(rand_frame(rng, h, w));
  EncodeResult enc2 = encode_sequence(model, five, 2);
  const char want_types[5] = {'I', 'P', 'I', 'P', 'I'};
  for (int t = 0; t < 5; ++t)
    CHECK(enc2.stats[static_cast<size_t>(t)].type == want_types[t]);
  DecodeResult dec2 = decode_stream(model, enc2.bytes);
  CHECK(dec2.frames.size() == 5);
  for (size_t t = 0; t < 5; ++t)
    CHECK(crop_mse_ref(dec2.frames[t], five[t]) == enc2.stats[t].mse);
}

TEST_CASE("malformed inputs and streams are rejected") {
  CodecModel model(tiny_config(true, CompMode::kFull), 91);
  Rng rng(92);
  std::vector<Tensor> frames = {rand_frame(rng, 24, 24), rand_frame(rng, 24, 24)};

  CHECK_THROWS_AS(encode_sequence(model, {}, -1), Error);
  CHECK_THROWS_AS(encode_sequence(model, frames, 0), Error);
  CHECK_THROWS_AS(encode_sequence(model, frames, -2), Error);

  std::vector<Tensor> drift = {rand_frame(rng, 24, 24), rand_frame(rng, 24, 32)};
  CHECK_THROWS_WITH_AS(encode_sequence(model, drift, -1),
                       doctest::Contains("drifts"), Error);

  std::vector<Tensor> poisoned = {rand_frame(rng, 24, 24), rand_frame(rng, 24, 24)};
  poisoned[1][5] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_WITH_AS(encode_sequence(model, poisoned, -1),
                       doctest::Contains("non-finite"), Error);

  EncodeResult enc = encode_sequence(model, frames, -1);

  // decoding with a different model family is refused up front
  ModelConfig other = tiny_config(true, CompMode::kFull);
  other.c_y = 6;
  CodecModel stranger(other, 93);
  CHECK_THROWS_WITH_AS(decode_stream(stranger, enc.bytes),
                       doctest::Contains("different model"), Error);

  std::vector<uint8_t> cut(enc.bytes.begin(), enc.bytes.end() - 9);
  CHECK_THROWS_AS(decode_stream(model, cut), Error);

  // a P unit handed to the I path and vice versa
  auto [hdr, units] = read_stream(enc.bytes);
  PropagationState state = refresh_state(model, frames[0]);
  CHECK_THROWS_AS(decode_p_frame(model, units[0], state), Error);

  Tensor padded = pad_to_multiple(frames[1], 16);
  PropagationState small = refresh_state(model, rand_frame(rng, 16, 16));
  CHECK_THROWS_WITH_AS(encode_p_frame(model, padded, small),
                       doctest::Contains("vs state"), Error);
}

TEST_CASE("payload tracks the rate estimate within the per-plane overhead") {
  CodecModel model(tiny_config(true, CompMode::kFull), 101);
  Rng rng(102);
  PropagationState state = refresh_state(model, rand_frame(rng, 32, 48));
  Tensor x = rand_frame(rng, 32, 48);
  PFrameResult r = encode_p_frame(model, x, state);

  // rebuild the decoder-side tables and symbols independently
  Graph g;
  Binder b(g, model.params(), false);
  NodeId ff = g.leaf(state.ref_feature);
  NodeId mmean = kNoNode, mscale = kNoNode;
  model.motion_prior(b, ff, &mmean, &mscale);
  CdfTables mt = build_cdf_tables(g.value(mmean), g.value(mscale));
  std::vector<int> mshape = {g.value(mmean).dim(0), g.value(mmean).dim(1),
                             g.value(mmean).dim(2)};
  Tensor msym = decode_plane(r.unit.p0.data(), r.unit.p0.size(), mt, mshape);

  NodeId vh = model.motion_decode(b, g.leaf(msym));
  ContextNodes ctx = model.mine_temporal_context(b, ff, vh);
  NodeId ymean = kNoNode, yscale = kNoNode;
  model.y_prior(b, ctx.c2, &ymean, &yscale);
  CdfTables yt = build_cdf_tables(g.value(ymean), g.value(yscale));
  std::vector<int> yshape = {g.value(ymean).dim(0), g.value(ymean).dim(1),
                             g.value(ymean).dim(2)};
  Tensor ysym = decode_plane(r.unit.p1.data(), r.unit.p1.size(), yt, yshape);

  // the differentiable estimate agrees with the discretized-table cost
  const double mtb = table_bits(msym, mt);
  const double ytb = table_bits(ysym, yt);
  CHECK(std::fabs(r.bits_est_motion - mtb) <= std::max(0.02 * mtb, 8.0));
  CHECK(std::fabs(r.bits_est_ctx - ytb) <= std::max(0.02 * ytb, 8.0));

  // per plane: payload within +2 bytes of the estimate, never below -1 bit
  // (half-bit grace covers the 16-bit CDF discretization)
  const double p0_bits = static_cast<double>(r.unit.p0.size()) * 8.0;
  const double p1_bits = static_cast<double>(r.unit.p1.size()) * 8.0;
  CHECK(p0_bits <= r.bits_est_motion + 16.0 + 0.5);
  CHECK(p1_bits <= r.bits_est_ctx + 16.0 + 0.5);
  CHECK(p0_bits >= r.bits_est_motion - 1.0);
  CHECK(p1_bits >= r.bits_est_ctx - 1.0);
  CHECK(r.saturations == edge_count(msym) + edge_count(ysym));
}

TEST_CASE("saturated latents are counted and still code losslessly") {
  CodecModel model(tiny_config(false, CompMode::kOff), 111);
  Tensor& b3 = model.params().get("menc.c3.b");
  b3[0] += 100.0f;   // every channel-0 latent lands past +L_max
  b3[1] -= 100.0f;   // and channel 1 past -L_max

  Rng rng(112);
  PropagationState state = refresh_state(model, rand_frame(rng, 32, 48));
  Tensor x = rand_frame(rng, 32, 48);
  PFrameResult enc = encode_p_frame(model, x, state);
  CHECK(enc.saturations > 0);

  PDecodeResult dec = decode_p_frame(model, enc.unit, state);
  CHECK(bit_equal(enc.recon, dec.recon));
  CHECK(bit_equal(enc.feature, dec.feature));

  std::vector<Tensor> frames = {rand_frame(rng, 32, 48), x};
  EncodeResult seq = encode_sequence(model, frames, -1);
  CHECK(seq.stats[0].saturations == 0);
  CHECK(seq.stats[1].saturations > 0);
}
