#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include <json.hpp>

#include "dcmvc/bitstream.hpp"
#include "dcmvc/codec.hpp"
#include "dcmvc/common.hpp"
#include "dcmvc/evaluation.hpp"
#include "dcmvc/rng.hpp"
#include "oracle.hpp"

using namespace dcmvc;

namespace {

ModelConfig tiny_config() {
  ModelConfig c;
  c.c_ctx = 4;
  c.c_feat = 4;
  c.c_y = 4;
  c.c_h = 4;
  c.c_mv = 2;
  c.flow_levels = 2;
  c.flow_width = 4;
  return c;
}

// frame already on the 8-bit grid, so raw intra coding is lossless
Tensor rand_frame8(Rng& rng, int h, int w) {
  Tensor t({3, h, w});
  for (int64_t i = 0; i < t.numel(); ++i)
    t[i] = float(rng.uniform_int(0, 255)) / 255.0f;
  return t;
}

std::vector<RDPoint> curve(std::initializer_list<std::pair<double, double>> pts) {
  std::vector<RDPoint> c;
  for (const auto& [b, p] : pts) c.push_back({b, p});
  return c;
}

std::vector<oracle::Pt> to_oracle(const std::vector<RDPoint>& c) {
  std::vector<oracle::Pt> o;
  for (const auto& p : c) o.push_back({p.bpp, p.psnr_db});
  return o;
}

const std::vector<RDPoint> kCurveA =
    curve({{0.05, 30}, {0.1, 33}, {0.2, 36}, {0.4, 39}});
const std::vector<RDPoint> kCurveB =
    curve({{0.04, 30}, {0.08, 33}, {0.16, 36}, {0.32, 39}});

}  // namespace

TEST_CASE("psnr formula, cap and symmetry") {
  Rng rng(11);
  Tensor a({3, 7, 9});
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = rng.uniform(0.0f, 1.0f);

  CHECK(psnr(a, a) == doctest::Approx(100.0));  // lossless cap

  Tensor zeros({2, 4, 4}), ones({2, 4, 4});
  for (int64_t i = 0; i < ones.numel(); ++i) ones[i] = 1.0f;
  CHECK(psnr(zeros, ones) == doctest::Approx(0.0).epsilon(1e-9));  // MSE 1

  // uniform +0.1 offset without clamping: MSE is 0.01 exactly
  for (int64_t i = 0; i < a.numel(); ++i) a[i] = std::min(a[i], 0.9f);
  Tensor b = a;
  for (int64_t i = 0; i < b.numel(); ++i) b[i] = a[i] + 0.1f;
  CHECK(psnr(a, b) == doctest::Approx(20.0).epsilon(1e-5));  // MSE 0.01
  CHECK(psnr(a, b) == doctest::Approx(psnr(b, a)));

  CHECK(psnr_from_mse(0.0) == doctest::Approx(100.0));
  CHECK(psnr_from_mse(1e-11) == doctest::Approx(100.0));  // capped
  CHECK(psnr_from_mse(0.001) == doctest::Approx(30.0));

  Tensor c({3, 7, 8});
  CHECK_THROWS_WITH_AS(psnr(a, c), doctest::Contains("shape"), Error);
}

TEST_CASE("bd rate matches the numeric oracle") {
  const double fix = bd_rate(kCurveA, kCurveB);
  CHECK(fix == doctest::Approx(-20.0).epsilon(0.005));
  CHECK(std::fabs(fix - oracle::bd_rate_numeric(to_oracle(kCurveA), to_oracle(kCurveB))) <
        0.1);

  CHECK(bd_rate(kCurveA, kCurveA) == doctest::Approx(0.0).epsilon(1e-9));

  std::vector<RDPoint> halved = kCurveA;
  for (auto& p : halved) p.bpp *= 0.5;
  CHECK(bd_rate(kCurveA, halved) == doctest::Approx(-50.0).epsilon(2e-4));

  // a few less regular monotone curves, still vs the oracle
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<RDPoint> a, t;
    double bpp_a = 0.04 + rng.uniform() * 0.02, q_a = 28 + rng.uniform() * 2;
    double bpp_t = bpp_a * (0.6 + rng.uniform() * 0.7), q_t = q_a + rng.uniform() - 0.5;
    const int n = 4 + (trial % 3);
    for (int i = 0; i < n; ++i) {
      a.push_back({bpp_a, q_a});
      t.push_back({bpp_t, q_t});
      bpp_a *= 1.7 + rng.uniform() * 0.5;
      bpp_t *= 1.7 + rng.uniform() * 0.5;
      q_a += 2.0 + rng.uniform();
      q_t += 2.0 + rng.uniform();
    }
    const double got = bd_rate(a, t);
    const double want = oracle::bd_rate_numeric(to_oracle(a), to_oracle(t));
    CHECK(std::fabs(got - want) < 0.1);
  }
}

TEST_CASE("bd rate antisymmetry and translation invariance") {
  const double ab = bd_rate(kCurveA, kCurveB);
  const double ba = bd_rate(kCurveB, kCurveA);
  CHECK(std::fabs((1.0 + ab / 100.0) * (1.0 + ba / 100.0) - 1.0) < 0.005);

  std::vector<RDPoint> a2 = kCurveA, b2 = kCurveB;
  for (auto& p : a2) p.psnr_db += 7.31;
  for (auto& p : b2) p.psnr_db += 7.31;
  CHECK(std::fabs(bd_rate(a2, b2) - ab) < 1e-6);
}

TEST_CASE("bd rate rejects malformed curves") {
  std::vector<RDPoint> three = curve({{0.05, 30}, {0.1, 33}, {0.2, 36}});
  CHECK_THROWS_WITH_AS(bd_rate(three, kCurveB), doctest::Contains("at least 4"), Error);
  CHECK_THROWS_WITH_AS(bd_rate(kCurveA, three), doctest::Contains("at least 4"), Error);

  std::vector<RDPoint> bad_psnr = kCurveA;
  std::swap(bad_psnr[1].psnr_db, bad_psnr[2].psnr_db);
  CHECK_THROWS_WITH_AS(bd_rate(bad_psnr, kCurveB),
                       doctest::Contains("strictly increasing"), Error);

  std::vector<RDPoint> dup_bpp = kCurveA;
  dup_bpp[2].bpp = dup_bpp[1].bpp;
  CHECK_THROWS_WITH_AS(bd_rate(kCurveA, dup_bpp),
                       doctest::Contains("strictly increasing"), Error);

  std::vector<RDPoint> nonpos = kCurveA;
  nonpos[0].bpp = 0.0;
  CHECK_THROWS_WITH_AS(bd_rate(nonpos, kCurveB), doctest::Contains("bpp"), Error);

  std::vector<RDPoint> high = kCurveA;
  for (auto& p : high) p.psnr_db += 40;  // disjoint quality ranges
  CHECK_THROWS_WITH_AS(bd_rate(high, kCurveB), doctest::Contains("overlap"), Error);
}

TEST_CASE("eval_sequence on a raw intra-only stream") {
  CodecModel model(tiny_config(), 123);
  Rng rng(9);
  std::vector<Tensor> frames;
  for (int t = 0; t < 3; ++t) frames.push_back(rand_frame8(rng, 37, 29));

  const EncodeResult enc = encode_sequence(model, frames, 1);  // every frame intra
  const EvalResult ev = eval_sequence(model, enc.bytes, frames);

  REQUIRE(ev.trace.size() == frames.size());
  for (const auto& row : ev.trace) {
    CHECK(row.type == 'I');
    CHECK(row.psnr_db == doctest::Approx(100.0));  // 8-bit frames code losslessly
    CHECK(row.bpp == doctest::Approx(24.0).epsilon(1e-12));  // 3 bytes per pixel
  }
  CHECK(ev.summary.psnr_db == doctest::Approx(100.0));
  double mean_bpp = 0;
  for (const auto& row : ev.trace) mean_bpp += row.bpp / double(ev.trace.size());
  CHECK(std::fabs(ev.summary.bpp - mean_bpp) < 1e-9);
}

TEST_CASE("eval_sequence traces P frames and validates inputs") {
  CodecModel model(tiny_config(), 321);
  Rng rng(77);
  std::vector<Tensor> frames;
  for (int t = 0; t < 4; ++t) frames.push_back(rand_frame8(rng, 32, 48));

  const EncodeResult enc = encode_sequence(model, frames, -1);
  const EvalResult ev = eval_sequence(model, enc.bytes, frames);

  REQUIRE(ev.trace.size() == 4);
  CHECK(ev.trace[0].type == 'I');
  for (int t = 1; t < 4; ++t) {
    CHECK(ev.trace[size_t(t)].type == 'P');
    CHECK(std::isfinite(ev.trace[size_t(t)].psnr_db));
    CHECK(ev.trace[size_t(t)].bpp > 0);
  }

  // the aggregate is total bits over total pixels, cross-checked per unit
  StreamReader reader(enc.bytes.data(), enc.bytes.size());
  double bits = 0;
  while (reader.has_next()) bits += double(reader.next_unit().payload_bytes()) * 8.0;
  CHECK(ev.summary.bpp == doctest::Approx(bits / (32.0 * 48.0 * 4.0)).epsilon(1e-12));

  // per-frame indices are recorded in the trace
  for (int t = 0; t < 4; ++t) CHECK(ev.trace[size_t(t)].index == t);

  std::vector<Tensor> too_few(frames.begin(), frames.begin() + 2);
  CHECK_THROWS_WITH_AS(eval_sequence(model, enc.bytes, too_few),
                       doctest::Contains("4 frames but only 2"), Error);

  std::vector<Tensor> wrong_shape = frames;
  wrong_shape[2] = rand_frame8(rng, 32, 47);
  CHECK_THROWS_WITH_AS(eval_sequence(model, enc.bytes, wrong_shape),
                       doctest::Contains("frame 2"), Error);
}

TEST_CASE("trace csv and rd csv round trips") {
  std::vector<FrameTraceRow> rows;
  rows.push_back({0, 'I', 24.0, 100.0});
  rows.push_back({1, 'P', 0.1234567, 31.654321});
  rows.push_back({2, 'P', 0.0078125, 29.25});

  const std::string csv = trace_csv(rows);
  CHECK(csv.substr(0, csv.find('\n')) == "t,type,bpp,psnr_db");
  CHECK(csv.find("1,P,0.123457,31.654321") != std::string::npos);  // 6 decimals

  const auto back = parse_trace_csv(csv);
  REQUIRE(back.size() == rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    CHECK(back[i].index == rows[i].index);
    CHECK(back[i].type == rows[i].type);
    CHECK(back[i].bpp == doctest::Approx(rows[i].bpp).epsilon(1e-6));
    CHECK(back[i].psnr_db == doctest::Approx(rows[i].psnr_db).epsilon(1e-6));
  }
  CHECK_THROWS_WITH_AS(parse_trace_csv("t,type,bpp,psnr_db\n0,Q,1,2\n"),
                       doctest::Contains("line 2"), Error);

  const auto with_header = parse_rd_csv("bpp,psnr_db\n0.05,30\n0.1,33\n");
  REQUIRE(with_header.size() == 2);
  CHECK(with_header[0].bpp == doctest::Approx(0.05));
  CHECK(with_header[1].psnr_db == doctest::Approx(33.0));

  const auto bare = parse_rd_csv("0.2,36\r\n0.4,39\n\n");
  REQUIRE(bare.size() == 2);
  CHECK(bare[1].bpp == doctest::Approx(0.4));

  CHECK_THROWS_WITH_AS(parse_rd_csv("0.05,30\nnot a row\n"),
                       doctest::Contains("line 2"), Error);
}

TEST_CASE("summary json carries name and metrics") {
  const std::string js = summary_json("seq \"x\".dcmv", {0.3125, 34.5});
  const nlohmann::json j = nlohmann::json::parse(js);
  CHECK(j.at("name").get<std::string>() == "seq \"x\".dcmv");
  CHECK(j.at("bpp").get<double>() == doctest::Approx(0.3125));
  CHECK(j.at("psnr_db").get<double>() == doctest::Approx(34.5));
}
