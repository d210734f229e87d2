#include "dcmvc/evaluation.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "dcmvc/bitstream.hpp"
#include "dcmvc/codec.hpp"
#include "dcmvc/common.hpp"

namespace dcmvc {

namespace {

// Least-squares cubic through (u, y): normal equations solved by Gaussian
// elimination with partial pivoting. With exactly four distinct abscissae
// this is the interpolating polynomial.
std::array<double, 4> fit_cubic(const std::vector<double>& u, const std::vector<double>& y) {
  double a[4][5] = {};
  for (size_t k = 0; k < u.size(); ++k) {
    double pw[7] = {1, 0, 0, 0, 0, 0, 0};
    for (int i = 1; i < 7; ++i) pw[i] = pw[i - 1] * u[k];
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) a[i][j] += pw[i + j];
      a[i][4] += pw[i] * y[k];
    }
  }
  for (int col = 0; col < 4; ++col) {
    int piv = col;
    for (int r = col + 1; r < 4; ++r)
      if (std::fabs(a[r][col]) > std::fabs(a[piv][col])) piv = r;
    for (int j = 0; j < 5; ++j) std::swap(a[col][j], a[piv][j]);
    DCMVC_CHECK(std::fabs(a[col][col]) > 1e-30, "bd_rate: degenerate curve fit");
    for (int r = 0; r < 4; ++r) {
      if (r == col) continue;
      const double f = a[r][col] / a[col][col];
      for (int j = col; j < 5; ++j) a[r][j] -= f * a[col][j];
    }
  }
  std::array<double, 4> c;
  for (int i = 0; i < 4; ++i) c[i] = a[i][4] / a[i][i];
  return c;
}

// Exact mean of the cubic over [lo, hi] via its antiderivative.
double cubic_mean(const std::array<double, 4>& c, double lo, double hi) {
  auto F = [&](double x) {
    return x * (c[0] + x * (c[1] / 2 + x * (c[2] / 3 + x * c[3] / 4)));
  };
  return (F(hi) - F(lo)) / (hi - lo);
}

std::vector<RDPoint> checked_curve(std::vector<RDPoint> pts, const char* which) {
  DCMVC_CHECK(pts.size() >= 4,
              std::string("bd_rate: ") + which + " curve needs at least 4 points");
  std::sort(pts.begin(), pts.end(),
            [](const RDPoint& a, const RDPoint& b) { return a.bpp < b.bpp; });
  for (size_t i = 0; i < pts.size(); ++i) {
    DCMVC_CHECK(pts[i].bpp > 0, std::string("bd_rate: ") + which + " curve has bpp <= 0");
    if (i > 0)
      DCMVC_CHECK(pts[i].bpp > pts[i - 1].bpp && pts[i].psnr_db > pts[i - 1].psnr_db,
                  std::string("bd_rate: ") + which +
                      " curve is not strictly increasing in bpp and psnr");
  }
  return pts;
}

}  // namespace

double psnr_from_mse(double mse) {
  if (mse <= 0) return 100.0;
  return std::min(100.0, 10.0 * std::log10(1.0 / mse));
}

double psnr(const Tensor& a, const Tensor& b) {
  DCMVC_CHECK(a.shape() == b.shape(), "psnr: shape mismatch");
  double acc = 0;
  for (int64_t i = 0; i < a.numel(); ++i) {
    const double d = double(a[i]) - double(b[i]);
    acc += d * d;
  }
  return psnr_from_mse(acc / double(a.numel()));
}

double bd_rate(const std::vector<RDPoint>& anchor, const std::vector<RDPoint>& test) {
  const auto ca = checked_curve(anchor, "anchor");
  const auto ct = checked_curve(test, "test");

  const double lo = std::max(ca.front().psnr_db, ct.front().psnr_db);
  const double hi = std::min(ca.back().psnr_db, ct.back().psnr_db);
  DCMVC_CHECK(hi > lo, "bd_rate: PSNR ranges do not overlap");

  // center the abscissa on the integration interval for conditioning
  const double mid = 0.5 * (lo + hi);
  auto fit = [&](const std::vector<RDPoint>& pts) {
    std::vector<double> u, y;
    for (const auto& p : pts) {
      u.push_back(p.psnr_db - mid);
      y.push_back(std::log10(p.bpp));
    }
    return fit_cubic(u, y);
  };
  const double avg_a = cubic_mean(fit(ca), lo - mid, hi - mid);
  const double avg_t = cubic_mean(fit(ct), lo - mid, hi - mid);
  return (std::pow(10.0, avg_t - avg_a) - 1.0) * 100.0;
}

EvalResult eval_sequence(CodecModel& model, const std::vector<uint8_t>& stream,
                         const std::vector<Tensor>& original) {
  // one container pass for the per-frame payload sizes
  StreamReader reader(stream.data(), stream.size());
  const StreamHeader hdr = reader.header();
  std::vector<int64_t> payload;
  std::vector<char> type;
  while (reader.has_next()) {
    FrameUnit u = reader.next_unit();
    payload.push_back(int64_t(u.payload_bytes()));
    type.push_back(u.frame_type == 0 ? 'I' : 'P');
  }
  DCMVC_CHECK(original.size() >= payload.size(),
              "eval_sequence: stream has " + std::to_string(payload.size()) +
                  " frames but only " + std::to_string(original.size()) +
                  " originals were supplied");

  DecodeResult dec = decode_stream(model, stream);
  const double px = double(hdr.width) * double(hdr.height);

  EvalResult out;
  double psnr_sum = 0;
  int64_t bits_total = 0;
  for (size_t t = 0; t < dec.frames.size(); ++t) {
    FrameTraceRow row;
    row.index = int(t);
    row.type = type[t];
    row.bpp = double(payload[t]) * 8.0 / px;
    try {
      row.psnr_db = psnr(dec.frames[t], original[t]);
    } catch (const Error& e) {
      fail("frame " + std::to_string(t) + ": " + e.what());
    }
    psnr_sum += row.psnr_db;
    bits_total += payload[t] * 8;
    out.trace.push_back(row);
  }
  out.summary.bpp = double(bits_total) / (px * double(dec.frames.size()));
  out.summary.psnr_db = psnr_sum / double(dec.frames.size());
  return out;
}

std::string trace_csv(const std::vector<FrameTraceRow>& trace) {
  std::string s = "t,type,bpp,psnr_db\n";
  char line[96];
  for (const auto& r : trace) {
    std::snprintf(line, sizeof(line), "%d,%c,%.6f,%.6f\n", r.index, r.type, r.bpp,
                  r.psnr_db);
    s += line;
  }
  return s;
}

std::string summary_json(const std::string& name, const RDPoint& summary) {
  nlohmann::json j;
  j["name"] = name;
  j["bpp"] = summary.bpp;
  j["psnr_db"] = summary.psnr_db;
  return j.dump(2) + "\n";
}

std::vector<FrameTraceRow> parse_trace_csv(const std::string& text) {
  std::vector<FrameTraceRow> rows;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (lineno == 1 && line.rfind("t,", 0) == 0) continue;  // header
    FrameTraceRow r;
    char ty;
    if (std::sscanf(line.c_str(), "%d , %c , %lf , %lf", &r.index, &ty, &r.bpp,
                    &r.psnr_db) != 4 ||
        (ty != 'I' && ty != 'P'))
      fail("trace csv: line " + std::to_string(lineno) + ": expected `t,type,bpp,psnr_db`");
    r.type = ty;
    rows.push_back(r);
  }
  return rows;
}

std::vector<RDPoint> parse_rd_csv(const std::string& text) {
  std::vector<RDPoint> pts;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    RDPoint p;
    char trailing[2];
    const int got = std::sscanf(line.c_str(), " %lf , %lf %1s", &p.bpp, &p.psnr_db, trailing);
    if (got != 2) {
      if (lineno == 1) continue;  // header row
      fail("rd csv: line " + std::to_string(lineno) + ": expected `bpp,psnr_db`");
    }
    pts.push_back(p);
  }
  return pts;
}

}  // namespace dcmvc
