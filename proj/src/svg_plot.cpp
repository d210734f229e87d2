#include "dcmvc/svg_plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdarg>
#include <cstdio>

#include "dcmvc/common.hpp"

namespace dcmvc {

namespace {

constexpr int kWidth = 880;
constexpr int kPanelH = 230;
constexpr int kGap = 46;
constexpr int kLeft = 64, kRight = 20, kTop = 34;

struct Scale {
  double lo, hi;
  double y0, y1;  // pixel range, y0 is the bottom
  double at(double v) const { return y0 + (v - lo) / (hi - lo) * (y1 - y0); }
};

// widen a data range slightly and pick a tick step of 1/2/5 * 10^k
Scale make_scale(double lo, double hi, double py0, double py1, double* tick) {
  if (hi - lo < 1e-9) {
    lo -= 0.5;
    hi += 0.5;
  }
  const double pad = (hi - lo) * 0.08;
  lo -= pad;
  hi += pad;
  const double raw = (hi - lo) / 5.0;
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double r = raw / mag;
  *tick = (r < 1.5 ? 1.0 : r < 3.5 ? 2.0 : r < 7.5 ? 5.0 : 10.0) * mag;
  return {lo, hi, py0, py1};
}

void fmt(std::string& s, const char* f, ...) {
  char buf[512];
  va_list ap;
  va_start(ap, f);
  std::vsnprintf(buf, sizeof(buf), f, ap);
  va_end(ap);
  s += buf;
}

void panel(std::string& s, const std::vector<FrameTraceRow>& trace, bool psnr_panel,
           int top) {
  const int bottom = top + kPanelH;
  const double x0 = kLeft, x1 = kWidth - kRight;
  const int n = int(trace.size());

  double lo = 1e30, hi = -1e30;
  for (const auto& r : trace) {
    const double v = psnr_panel ? r.psnr_db : r.bpp;
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  double tick = 1;
  Scale sc = make_scale(lo, hi, double(bottom), double(top), &tick);
  auto px = [&](int t) { return x0 + (n > 1 ? double(t) / double(n - 1) : 0.5) * (x1 - x0); };

  fmt(s, "<rect x='%g' y='%d' width='%g' height='%d' fill='#fafafa' stroke='#ccc'/>\n",
      x0, top, x1 - x0, kPanelH);

  // horizontal grid and axis labels
  for (double v = std::ceil(sc.lo / tick) * tick; v <= sc.hi + 1e-9; v += tick) {
    const double y = sc.at(v);
    fmt(s, "<line x1='%g' y1='%g' x2='%g' y2='%g' stroke='#e0e0e0'/>\n", x0, y, x1, y);
    fmt(s, "<text x='%g' y='%g' font-size='11' text-anchor='end' fill='#555'>%.*f</text>\n",
        x0 - 6, y + 4, tick < 0.95 ? 2 : 0, v);
  }
  // I-frame markers
  for (const auto& r : trace)
    if (r.type == 'I')
      fmt(s,
          "<line x1='%g' y1='%d' x2='%g' y2='%d' stroke='#d88' "
          "stroke-dasharray='3,3'/>\n",
          px(r.index), top, px(r.index), bottom);

  std::string pts;
  for (const auto& r : trace)
    fmt(pts, "%.1f,%.1f ", px(r.index), sc.at(psnr_panel ? r.psnr_db : r.bpp));
  fmt(s, "<polyline points='%s' fill='none' stroke='%s' stroke-width='1.6'/>\n",
      pts.c_str(), psnr_panel ? "#2266bb" : "#22883a");

  // x ticks every ~16 frames
  const int step = std::max(1, (n / 96) * 16 + (n < 96 ? std::max(1, n / 6) : 0));
  for (int t = 0; t < n; t += (n >= 96 ? 16 : step))
    fmt(s, "<text x='%g' y='%d' font-size='11' text-anchor='middle' fill='#555'>%d</text>\n",
        px(t), bottom + 14, t);

  fmt(s,
      "<text x='%d' y='%d' font-size='12' fill='#333' transform='rotate(-90 %d %d)' "
      "text-anchor='middle'>%s</text>\n",
      18, top + kPanelH / 2, 18, top + kPanelH / 2, psnr_panel ? "PSNR (dB)" : "bpp");
}

}  // namespace

std::string render_trace_svg(const std::vector<FrameTraceRow>& trace) {
  DCMVC_CHECK(!trace.empty(), "trace plot: empty trace");
  const int total_h = kTop + kPanelH * 2 + kGap + 30;
  std::string s;
  fmt(s,
      "<svg xmlns='http://www.w3.org/2000/svg' width='%d' height='%d' "
      "viewBox='0 0 %d %d' font-family='sans-serif'>\n",
      kWidth, total_h, kWidth, total_h);
  fmt(s, "<rect width='%d' height='%d' fill='white'/>\n", kWidth, total_h);
  fmt(s,
      "<text x='%d' y='20' font-size='14' fill='#111'>Per-frame quality and "
      "bitrate (%d frames)</text>\n",
      kLeft, int(trace.size()));
  panel(s, trace, true, kTop);
  panel(s, trace, false, kTop + kPanelH + kGap);
  fmt(s, "<text x='%d' y='%d' font-size='12' fill='#333'>frame index</text>\n",
      kWidth / 2 - 30, total_h - 6);
  s += "</svg>\n";
  return s;
}

}  // namespace dcmvc
