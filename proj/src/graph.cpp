#include "dcmvc/graph.hpp"

#include <cmath>
#include <cstring>
#include <sstream>

namespace dcmvc {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
constexpr double kLn2 = 0.69314718055994530942;
constexpr double kProbFloor = 1.0 / 65536.0;  // 2^-16

// ---------------------------------------------------------------------------
// dense kernels
//
// All accumulation loops run in a fixed order (j innermost, k ascending) so
// results are bit-reproducible run to run.

// C[MxN] += A[MxK] * B[KxN]
void gemm_acc(const float* __restrict a, const float* __restrict b,
              float* __restrict c, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    float* __restrict crow = c + static_cast<size_t>(i) * n;
    const float* __restrict arow = a + static_cast<size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const float av = arow[p];
      if (av == 0.0f) continue;
      const float* __restrict brow = b + static_cast<size_t>(p) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[MxN] += A^T * B where A is [KxM], B is [KxN]
void gemm_tn_acc(const float* __restrict a, const float* __restrict b,
                 float* __restrict c, int m, int k, int n) {
  for (int p = 0; p < k; ++p) {
    const float* __restrict arow = a + static_cast<size_t>(p) * m;
    const float* __restrict brow = b + static_cast<size_t>(p) * n;
    for (int i = 0; i < m; ++i) {
      const float av = arow[i];
      if (av == 0.0f) continue;
      float* __restrict crow = c + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

void transpose(const float* __restrict src, float* __restrict dst, int rows,
               int cols) {
  for (int r = 0; r < rows; ++r)
    for (int j = 0; j < cols; ++j)
      dst[static_cast<size_t>(j) * rows + r] = src[static_cast<size_t>(r) * cols + j];
}

struct ConvDims {
  int cin, h, w, cout, k, stride, pad, ho, wo;
};

ConvDims conv_dims(const Tensor& x, const Tensor& w, int stride, int pad) {
  DCMVC_CHECK(x.rank() == 3, "conv2d: input must be rank 3, got " + x.shape_str());
  DCMVC_CHECK(w.rank() == 4, "conv2d: weight must be rank 4, got " + w.shape_str());
  ConvDims d;
  d.cin = x.dim(0);
  d.h = x.dim(1);
  d.w = x.dim(2);
  d.cout = w.dim(0);
  d.k = w.dim(2);
  d.stride = stride;
  d.pad = pad;
  DCMVC_CHECK(w.dim(1) == d.cin, "conv2d: weight expects " + std::to_string(w.dim(1)) +
                                     " input channels, input has " + std::to_string(d.cin));
  DCMVC_CHECK(w.dim(2) == w.dim(3), "conv2d: non-square kernel");
  DCMVC_CHECK(stride >= 1 && pad >= 0, "conv2d: bad stride/pad");
  d.ho = (d.h + 2 * pad - d.k) / stride + 1;
  d.wo = (d.w + 2 * pad - d.k) / stride + 1;
  DCMVC_CHECK(d.ho >= 1 && d.wo >= 1, "conv2d: kernel larger than padded input");
  return d;
}

void im2col(const float* x, const ConvDims& d, float* col) {
  const int n = d.ho * d.wo;
  for (int ci = 0; ci < d.cin; ++ci) {
    const float* plane = x + static_cast<size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        float* crow = col + (static_cast<size_t>(ci) * d.k * d.k + ky * d.k + kx) * n;
        for (int y = 0; y < d.ho; ++y) {
          const int iy = y * d.stride + ky - d.pad;
          float* out = crow + static_cast<size_t>(y) * d.wo;
          if (iy < 0 || iy >= d.h) {
            std::memset(out, 0, sizeof(float) * static_cast<size_t>(d.wo));
            continue;
          }
          const float* irow = plane + static_cast<size_t>(iy) * d.w;
          for (int xo = 0; xo < d.wo; ++xo) {
            const int ix = xo * d.stride + kx - d.pad;
            out[xo] = (ix >= 0 && ix < d.w) ? irow[ix] : 0.0f;
          }
        }
      }
    }
  }
}

void col2im_acc(const float* col, const ConvDims& d, float* gx) {
  const int n = d.ho * d.wo;
  for (int ci = 0; ci < d.cin; ++ci) {
    float* plane = gx + static_cast<size_t>(ci) * d.h * d.w;
    for (int ky = 0; ky < d.k; ++ky) {
      for (int kx = 0; kx < d.k; ++kx) {
        const float* crow = col + (static_cast<size_t>(ci) * d.k * d.k + ky * d.k + kx) * n;
        for (int y = 0; y < d.ho; ++y) {
          const int iy = y * d.stride + ky - d.pad;
          if (iy < 0 || iy >= d.h) continue;
          const float* in = crow + static_cast<size_t>(y) * d.wo;
          float* irow = plane + static_cast<size_t>(iy) * d.w;
          for (int xo = 0; xo < d.wo; ++xo) {
            const int ix = xo * d.stride + kx - d.pad;
            if (ix >= 0 && ix < d.w) irow[ix] += in[xo];
          }
        }
      }
    }
  }
}

inline double norm_pdf(double t) { return kInvSqrt2Pi * std::exp(-0.5 * t * t); }
inline double norm_cdf(double t) { return 0.5 * (1.0 + std::erf(t * kInvSqrt2)); }

}  // namespace

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kScale: return "scale";
    case Op::kAddConst: return "add_const";
    case Op::kConv2d: return "conv2d";
    case Op::kBilinearSample: return "bilinear_sample";
    case Op::kLeakyRelu: return "leaky_relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kExp: return "exp";
    case Op::kSqrt: return "sqrt";
    case Op::kClamp: return "clamp";
    case Op::kAvgPool2: return "avg_pool2";
    case Op::kGlobalAvgPool: return "global_avg_pool";
    case Op::kUpNearest2: return "upsample_nearest2";
    case Op::kUpBilinear2: return "upsample_bilinear2";
    case Op::kConcatC: return "concat_c";
    case Op::kSliceC: return "slice_c";
    case Op::kSum: return "sum";
    case Op::kMulChannel: return "mul_channel";
    case Op::kQuantizeSte: return "quantize_ste";
    case Op::kGaussianBits: return "gaussian_bits";
  }
  return "?";
}

const Node& Graph::node(NodeId id) const {
  DCMVC_CHECK(id >= 0 && static_cast<size_t>(id) < nodes_.size(),
              "Graph: invalid node id " + std::to_string(id));
  return nodes_[static_cast<size_t>(id)];
}

Node& Graph::node_mut(NodeId id) {
  DCMVC_CHECK(id >= 0 && static_cast<size_t>(id) < nodes_.size(),
              "Graph: invalid node id " + std::to_string(id));
  return nodes_[static_cast<size_t>(id)];
}

void Graph::clear() { nodes_.clear(); }

NodeId Graph::push(Op op, std::vector<NodeId> in, OpAux aux, Tensor val) {
  Node n;
  n.op = op;
  n.aux = aux;
  n.requires_grad = false;
  for (NodeId i : in) {
    if (i != kNoNode && node(i).requires_grad) n.requires_grad = true;
  }
  n.in = std::move(in);
  n.val = std::move(val);
  const NodeId id = static_cast<NodeId>(nodes_.size());
  if (check_finite_enabled() && !n.val.all_finite()) {
    fail(std::string("non-finite value produced by node ") + std::to_string(id) +
         " (" + op_name(op) + ")");
  }
  nodes_.push_back(std::move(n));
  return id;
}

NodeId Graph::leaf(Tensor v, bool requires_grad) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(v);
  n.requires_grad = requires_grad;
  const NodeId id = static_cast<NodeId>(nodes_.size());
  if (check_finite_enabled() && !n.val.all_finite()) {
    fail("non-finite value in leaf node " + std::to_string(id));
  }
  nodes_.push_back(std::move(n));
  return id;
}

#define BINARY_SAME_SHAPE(NAME, OPK, EXPR)                                      \
  NodeId Graph::NAME(NodeId a, NodeId b) {                                      \
    const Tensor& ta = value(a);                                                \
    const Tensor& tb = value(b);                                                \
    DCMVC_CHECK(ta.same_shape(tb), std::string(#NAME) + ": shape mismatch " +   \
                                       ta.shape_str() + " vs " + tb.shape_str());\
    Tensor out(ta.shape());                                                     \
    const float* pa = ta.data();                                                \
    const float* pb = tb.data();                                                \
    float* po = out.data();                                                     \
    const int64_t n = ta.numel();                                               \
    for (int64_t i = 0; i < n; ++i) po[i] = (EXPR);                             \
    return push(Op::OPK, {a, b}, {}, std::move(out));                           \
  }

BINARY_SAME_SHAPE(add, kAdd, pa[i] + pb[i])
BINARY_SAME_SHAPE(sub, kSub, pa[i] - pb[i])
BINARY_SAME_SHAPE(mul, kMul, pa[i] * pb[i])
BINARY_SAME_SHAPE(div, kDiv, pa[i] / pb[i])
#undef BINARY_SAME_SHAPE

#define UNARY(NAME, OPK, EXPR)                       \
  NodeId Graph::NAME(NodeId x) {                     \
    const Tensor& tx = value(x);                     \
    Tensor out(tx.shape());                          \
    const float* px = tx.data();                     \
    float* po = out.data();                          \
    const int64_t n = tx.numel();                    \
    for (int64_t i = 0; i < n; ++i) {                \
      const float v = px[i];                         \
      po[i] = (EXPR);                                \
    }                                                \
    return push(Op::OPK, {x}, {}, std::move(out));   \
  }

UNARY(tanh_, kTanh, std::tanh(v))
UNARY(exp_, kExp, std::exp(v))
UNARY(sqrt_, kSqrt, v > 0.0f ? std::sqrt(v) : 0.0f)
#undef UNARY

NodeId Graph::sigmoid(NodeId x) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const float* px = tx.data();
  float* po = out.data();
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) {
    const float v = px[i];
    po[i] = v >= 0.0f ? 1.0f / (1.0f + std::exp(-v))
                      : std::exp(v) / (1.0f + std::exp(v));
  }
  return push(Op::kSigmoid, {x}, {}, std::move(out));
}

NodeId Graph::leaky_relu(NodeId x, float slope) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const float* px = tx.data();
  float* po = out.data();
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) po[i] = px[i] > 0.0f ? px[i] : slope * px[i];
  OpAux aux;
  aux.f0 = slope;
  return push(Op::kLeakyRelu, {x}, aux, std::move(out));
}

NodeId Graph::scale(NodeId x, float f) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = tx[i] * f;
  OpAux aux;
  aux.f0 = f;
  return push(Op::kScale, {x}, aux, std::move(out));
}

NodeId Graph::add_const(NodeId x, float f) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = tx[i] + f;
  OpAux aux;
  aux.f0 = f;
  return push(Op::kAddConst, {x}, aux, std::move(out));
}

NodeId Graph::clamp(NodeId x, float lo, float hi) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) out[i] = std::min(std::max(tx[i], lo), hi);
  OpAux aux;
  aux.f0 = lo;
  aux.f1 = hi;
  return push(Op::kClamp, {x}, aux, std::move(out));
}

NodeId Graph::conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad) {
  const Tensor& tx = value(x);
  const Tensor& tw = value(w);
  const ConvDims d = conv_dims(tx, tw, stride, pad);
  const int n = d.ho * d.wo;
  const int kk = d.cin * d.k * d.k;
  Tensor out({d.cout, d.ho, d.wo});
  if (b != kNoNode) {
    const Tensor& tb = value(b);
    DCMVC_CHECK(tb.rank() == 1 && tb.dim(0) == d.cout,
                "conv2d: bias shape " + tb.shape_str() + " does not match Cout");
    for (int c = 0; c < d.cout; ++c) {
      float* row = out.data() + static_cast<size_t>(c) * n;
      const float bv = tb[c];
      for (int j = 0; j < n; ++j) row[j] = bv;
    }
  }
  std::vector<float> col(static_cast<size_t>(kk) * n);
  im2col(tx.data(), d, col.data());
  gemm_acc(tw.data(), col.data(), out.data(), d.cout, kk, n);
  OpAux aux;
  aux.i0 = stride;
  aux.i1 = pad;
  return push(Op::kConv2d, {x, w, b}, aux, std::move(out));
}

NodeId Graph::bilinear_sample(NodeId src, NodeId flow) {
  const Tensor& ts = value(src);
  const Tensor& tf = value(flow);
  DCMVC_CHECK(ts.rank() == 3 && tf.rank() == 3 && tf.dim(0) == 2,
              "bilinear_sample: need (C,H,W) source and (2,H,W) flow");
  DCMVC_CHECK(ts.dim(1) == tf.dim(1) && ts.dim(2) == tf.dim(2),
              "bilinear_sample: extent mismatch, source " + ts.shape_str() +
                  " vs flow " + tf.shape_str());
  const int c = ts.dim(0), h = ts.dim(1), w = ts.dim(2);
  Tensor out({c, h, w});
  const float* u = tf.data();                                // horizontal
  const float* v = tf.data() + static_cast<size_t>(h) * w;   // vertical
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const int j = y * w + x;
      float sx = static_cast<float>(x) + u[j];
      float sy = static_cast<float>(y) + v[j];
      sx = std::min(std::max(sx, 0.0f), static_cast<float>(w - 1));
      sy = std::min(std::max(sy, 0.0f), static_cast<float>(h - 1));
      const int x0 = std::min(static_cast<int>(sx), w - 1);
      const int y0 = std::min(static_cast<int>(sy), h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const int y1 = std::min(y0 + 1, h - 1);
      const float fx = sx - static_cast<float>(x0);
      const float fy = sy - static_cast<float>(y0);
      for (int ci = 0; ci < c; ++ci) {
        const float* p = ts.data() + static_cast<size_t>(ci) * h * w;
        const float p00 = p[y0 * w + x0], p01 = p[y0 * w + x1];
        const float p10 = p[y1 * w + x0], p11 = p[y1 * w + x1];
        out.at(ci, y, x) = (1.0f - fy) * ((1.0f - fx) * p00 + fx * p01) +
                           fy * ((1.0f - fx) * p10 + fx * p11);
      }
    }
  }
  return push(Op::kBilinearSample, {src, flow}, {}, std::move(out));
}

NodeId Graph::avg_pool2(NodeId x) {
  const Tensor& tx = value(x);
  DCMVC_CHECK(tx.rank() == 3, "avg_pool2: rank-3 input required");
  const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
  DCMVC_CHECK(h % 2 == 0 && w % 2 == 0, "avg_pool2: extents must be even, got " + tx.shape_str());
  Tensor out({c, h / 2, w / 2});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < h / 2; ++y)
      for (int xo = 0; xo < w / 2; ++xo)
        out.at(ci, y, xo) = 0.25f * (tx.at(ci, 2 * y, 2 * xo) + tx.at(ci, 2 * y, 2 * xo + 1) +
                                     tx.at(ci, 2 * y + 1, 2 * xo) + tx.at(ci, 2 * y + 1, 2 * xo + 1));
  return push(Op::kAvgPool2, {x}, {}, std::move(out));
}

NodeId Graph::global_avg_pool(NodeId x) {
  const Tensor& tx = value(x);
  DCMVC_CHECK(tx.rank() == 3, "global_avg_pool: rank-3 input required");
  const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
  Tensor out({c, 1, 1});
  const double inv = 1.0 / (static_cast<double>(h) * w);
  for (int ci = 0; ci < c; ++ci) {
    double acc = 0.0;
    const float* p = tx.data() + static_cast<size_t>(ci) * h * w;
    for (int j = 0; j < h * w; ++j) acc += p[j];
    out[ci] = static_cast<float>(acc * inv);
  }
  return push(Op::kGlobalAvgPool, {x}, {}, std::move(out));
}

NodeId Graph::upsample_nearest2(NodeId x) {
  const Tensor& tx = value(x);
  DCMVC_CHECK(tx.rank() == 3, "upsample_nearest2: rank-3 input required");
  const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int ci = 0; ci < c; ++ci)
    for (int y = 0; y < 2 * h; ++y)
      for (int xo = 0; xo < 2 * w; ++xo)
        out.at(ci, y, xo) = tx.at(ci, y / 2, xo / 2);
  return push(Op::kUpNearest2, {x}, {}, std::move(out));
}

NodeId Graph::upsample_bilinear2(NodeId x) {
  const Tensor& tx = value(x);
  DCMVC_CHECK(tx.rank() == 3, "upsample_bilinear2: rank-3 input required");
  const int c = tx.dim(0), h = tx.dim(1), w = tx.dim(2);
  Tensor out({c, 2 * h, 2 * w});
  for (int y = 0; y < 2 * h; ++y) {
    float sy = (static_cast<float>(y) + 0.5f) * 0.5f - 0.5f;
    sy = std::min(std::max(sy, 0.0f), static_cast<float>(h - 1));
    const int y0 = std::min(static_cast<int>(sy), h - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const float fy = sy - static_cast<float>(y0);
    for (int xo = 0; xo < 2 * w; ++xo) {
      float sx = (static_cast<float>(xo) + 0.5f) * 0.5f - 0.5f;
      sx = std::min(std::max(sx, 0.0f), static_cast<float>(w - 1));
      const int x0 = std::min(static_cast<int>(sx), w - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const float fx = sx - static_cast<float>(x0);
      for (int ci = 0; ci < c; ++ci) {
        const float* p = tx.data() + static_cast<size_t>(ci) * h * w;
        const float p00 = p[y0 * w + x0], p01 = p[y0 * w + x1];
        const float p10 = p[y1 * w + x0], p11 = p[y1 * w + x1];
        out.at(ci, y, xo) = (1.0f - fy) * ((1.0f - fx) * p00 + fx * p01) +
                            fy * ((1.0f - fx) * p10 + fx * p11);
      }
    }
  }
  return push(Op::kUpBilinear2, {x}, {}, std::move(out));
}

NodeId Graph::concat_c(const std::vector<NodeId>& xs) {
  DCMVC_CHECK(!xs.empty(), "concat_c: no inputs");
  const Tensor& t0 = value(xs[0]);
  DCMVC_CHECK(t0.rank() == 3, "concat_c: rank-3 inputs required");
  const int h = t0.dim(1), w = t0.dim(2);
  int ctot = 0;
  for (NodeId id : xs) {
    const Tensor& t = value(id);
    DCMVC_CHECK(t.rank() == 3 && t.dim(1) == h && t.dim(2) == w,
                "concat_c: spatial extent mismatch at input " + t.shape_str());
    ctot += t.dim(0);
  }
  Tensor out({ctot, h, w});
  float* po = out.data();
  for (NodeId id : xs) {
    const Tensor& t = value(id);
    std::memcpy(po, t.data(), sizeof(float) * static_cast<size_t>(t.numel()));
    po += t.numel();
  }
  return push(Op::kConcatC, xs, {}, std::move(out));
}

NodeId Graph::slice_c(NodeId x, int from, int to) {
  const Tensor& tx = value(x);
  DCMVC_CHECK(tx.rank() == 3, "slice_c: rank-3 input required");
  DCMVC_CHECK(0 <= from && from < to && to <= tx.dim(0),
              "slice_c: bad channel range [" + std::to_string(from) + "," +
                  std::to_string(to) + ") for " + tx.shape_str());
  const int h = tx.dim(1), w = tx.dim(2);
  Tensor out({to - from, h, w});
  std::memcpy(out.data(), tx.data() + static_cast<size_t>(from) * h * w,
              sizeof(float) * static_cast<size_t>(out.numel()));
  OpAux aux;
  aux.i0 = from;
  aux.i1 = to;
  return push(Op::kSliceC, {x}, aux, std::move(out));
}

NodeId Graph::sum(NodeId x) {
  const Tensor& tx = value(x);
  double acc = 0.0;
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) acc += tx[i];
  return push(Op::kSum, {x}, {}, Tensor::scalar(static_cast<float>(acc)));
}

NodeId Graph::mul_channel(NodeId x, NodeId s) {
  const Tensor& tx = value(x);
  const Tensor& ts = value(s);
  DCMVC_CHECK(tx.rank() == 3 && ts.rank() == 3 && ts.dim(1) == 1 && ts.dim(2) == 1 &&
                  ts.dim(0) == tx.dim(0),
              "mul_channel: need (C,H,W) and (C,1,1), got " + tx.shape_str() + " and " +
                  ts.shape_str());
  const int c = tx.dim(0), hw = tx.dim(1) * tx.dim(2);
  Tensor out(tx.shape());
  for (int ci = 0; ci < c; ++ci) {
    const float sv = ts[ci];
    const float* p = tx.data() + static_cast<size_t>(ci) * hw;
    float* po = out.data() + static_cast<size_t>(ci) * hw;
    for (int j = 0; j < hw; ++j) po[j] = p[j] * sv;
  }
  return push(Op::kMulChannel, {x, s}, {}, std::move(out));
}

NodeId Graph::quantize_ste(NodeId x, float lmax) {
  const Tensor& tx = value(x);
  Tensor out(tx.shape());
  const int64_t n = tx.numel();
  for (int64_t i = 0; i < n; ++i) {
    float r = std::round(tx[i]);  // ties away from zero
    out[i] = std::min(std::max(r, -lmax), lmax);
  }
  OpAux aux;
  aux.f0 = lmax;
  return push(Op::kQuantizeSte, {x}, aux, std::move(out));
}

NodeId Graph::gaussian_bits(NodeId yhat, NodeId mean, NodeId scale) {
  const Tensor& ty = value(yhat);
  const Tensor& tm = value(mean);
  const Tensor& ts = value(scale);
  DCMVC_CHECK(ty.same_shape(tm) && ty.same_shape(ts),
              "gaussian_bits: shape mismatch between symbols and entropy params");
  Tensor out(ty.shape());
  const int64_t n = ty.numel();
  for (int64_t i = 0; i < n; ++i) {
    const double sg = ts[i];
    DCMVC_CHECK(sg > 0.0, "gaussian_bits: nonpositive scale");
    const double ctr = ty[i] - tm[i];
    const double p = norm_cdf((ctr + 0.5) / sg) - norm_cdf((ctr - 0.5) / sg);
    out[i] = static_cast<float>(-std::log2(std::max(p, kProbFloor)));
  }
  return push(Op::kGaussianBits, {yhat, mean, scale}, {}, std::move(out));
}

NodeId Graph::mean(NodeId x) {
  const int64_t n = value(x).numel();
  return scale(sum(x), 1.0f / static_cast<float>(n));
}

NodeId Graph::mse(NodeId a, NodeId b) {
  NodeId d = sub(a, b);
  return mean(mul(d, d));
}

Tensor Graph::grad(NodeId id) const {
  const Node& n = node(id);
  if (!n.has_grad) return Tensor::zeros(n.val.shape());
  return n.grd;
}

Tensor& Graph::ensure_grad(NodeId id) {
  Node& n = node_mut(id);
  if (!n.has_grad) {
    n.grd = Tensor::zeros(n.val.shape());
    n.has_grad = true;
  }
  return n.grd;
}

void Graph::backward(NodeId root) {
  const Node& r = node(root);
  DCMVC_CHECK(r.val.numel() == 1,
              "backward: loss node must be scalar, got " + r.val.shape_str());
  for (auto& n : nodes_) {
    n.has_grad = false;
    n.grd = Tensor();
  }
  ensure_grad(root)[0] = 1.0f;
  for (NodeId id = root; id >= 0; --id) {
    const Node& n = node(id);
    if (!n.has_grad || !n.requires_grad || n.op == Op::kLeaf) continue;
    backward_node(id);
  }
}

void Graph::backward_node(NodeId id) {
  Node& n = node_mut(id);
  const Tensor& g = n.grd;
  auto rg = [&](NodeId i) { return i != kNoNode && node(i).requires_grad; };

  switch (n.op) {
    case Op::kLeaf:
      break;
    case Op::kAdd: {
      for (int s = 0; s < 2; ++s) {
        if (!rg(n.in[s])) continue;
        Tensor& gi = ensure_grad(n.in[s]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
      break;
    }
    case Op::kSub: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
      if (rg(n.in[1])) {
        Tensor& gi = ensure_grad(n.in[1]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] -= g[i];
      }
      break;
    }
    case Op::kMul: {
      const Tensor& a = value(n.in[0]);
      const Tensor& b = value(n.in[1]);
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i] * b[i];
      }
      if (rg(n.in[1])) {
        Tensor& gi = ensure_grad(n.in[1]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i] * a[i];
      }
      break;
    }
    case Op::kDiv: {
      const Tensor& a = value(n.in[0]);
      const Tensor& b = value(n.in[1]);
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i] / b[i];
      }
      if (rg(n.in[1])) {
        Tensor& gi = ensure_grad(n.in[1]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] -= g[i] * a[i] / (b[i] * b[i]);
      }
      break;
    }
    case Op::kScale: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i] * n.aux.f0;
      }
      break;
    }
    case Op::kAddConst: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
      break;
    }
    case Op::kLeakyRelu: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        Tensor& gi = ensure_grad(n.in[0]);
        const float s = n.aux.f0;
        for (int64_t i = 0; i < g.numel(); ++i)
          gi[i] += g[i] * (x[i] > 0.0f ? 1.0f : s);
      }
      break;
    }
    case Op::kSigmoid: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi[i] += g[i] * n.val[i] * (1.0f - n.val[i]);
      }
      break;
    }
    case Op::kTanh: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi[i] += g[i] * (1.0f - n.val[i] * n.val[i]);
      }
      break;
    }
    case Op::kExp: {
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i] * n.val[i];
      }
      break;
    }
    case Op::kSqrt: {
      // subgradient 0 at x <= 0
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi[i] += x[i] > 0.0f ? g[i] * 0.5f / n.val[i] : 0.0f;
      }
      break;
    }
    case Op::kClamp: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i)
          gi[i] += (x[i] > n.aux.f0 && x[i] < n.aux.f1) ? g[i] : 0.0f;
      }
      break;
    }
    case Op::kConv2d: {
      const Tensor& x = value(n.in[0]);
      const Tensor& w = value(n.in[1]);
      const ConvDims d = conv_dims(x, w, n.aux.i0, n.aux.i1);
      const int nsp = d.ho * d.wo;
      const int kk = d.cin * d.k * d.k;
      if (n.in[2] != kNoNode && rg(n.in[2])) {
        Tensor& gb = ensure_grad(n.in[2]);
        for (int c = 0; c < d.cout; ++c) {
          double acc = 0.0;
          const float* row = g.data() + static_cast<size_t>(c) * nsp;
          for (int j = 0; j < nsp; ++j) acc += row[j];
          gb[c] += static_cast<float>(acc);
        }
      }
      const bool need_gw = rg(n.in[1]);
      const bool need_gx = rg(n.in[0]);
      if (need_gw) {
        std::vector<float> col(static_cast<size_t>(kk) * nsp);
        im2col(x.data(), d, col.data());
        std::vector<float> colT(col.size());
        transpose(col.data(), colT.data(), kk, nsp);
        Tensor& gw = ensure_grad(n.in[1]);
        gemm_acc(g.data(), colT.data(), gw.data(), d.cout, nsp, kk);
      }
      if (need_gx) {
        std::vector<float> gcol(static_cast<size_t>(kk) * nsp, 0.0f);
        gemm_tn_acc(w.data(), g.data(), gcol.data(), kk, d.cout, nsp);
        Tensor& gx = ensure_grad(n.in[0]);
        col2im_acc(gcol.data(), d, gx.data());
      }
      break;
    }
    case Op::kBilinearSample: {
      const Tensor& src = value(n.in[0]);
      const Tensor& flow = value(n.in[1]);
      const int c = src.dim(0), h = src.dim(1), w = src.dim(2);
      const bool need_gs = rg(n.in[0]);
      const bool need_gf = rg(n.in[1]);
      Tensor* gs = need_gs ? &ensure_grad(n.in[0]) : nullptr;
      Tensor* gf = need_gf ? &ensure_grad(n.in[1]) : nullptr;
      const float* u = flow.data();
      const float* v = flow.data() + static_cast<size_t>(h) * w;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const int j = y * w + x;
          const float rsx = static_cast<float>(x) + u[j];
          const float rsy = static_cast<float>(y) + v[j];
          const float sx = std::min(std::max(rsx, 0.0f), static_cast<float>(w - 1));
          const float sy = std::min(std::max(rsy, 0.0f), static_cast<float>(h - 1));
          const bool in_x = rsx > 0.0f && rsx < static_cast<float>(w - 1);
          const bool in_y = rsy > 0.0f && rsy < static_cast<float>(h - 1);
          const int x0 = std::min(static_cast<int>(sx), w - 1);
          const int y0 = std::min(static_cast<int>(sy), h - 1);
          const int x1 = std::min(x0 + 1, w - 1);
          const int y1 = std::min(y0 + 1, h - 1);
          const float fx = sx - static_cast<float>(x0);
          const float fy = sy - static_cast<float>(y0);
          float du = 0.0f, dv = 0.0f;
          for (int ci = 0; ci < c; ++ci) {
            const float go = g.at(ci, y, x);
            if (go == 0.0f) continue;
            const float* p = src.data() + static_cast<size_t>(ci) * h * w;
            const float p00 = p[y0 * w + x0], p01 = p[y0 * w + x1];
            const float p10 = p[y1 * w + x0], p11 = p[y1 * w + x1];
            if (need_gs) {
              float* q = gs->data() + static_cast<size_t>(ci) * h * w;
              q[y0 * w + x0] += go * (1.0f - fy) * (1.0f - fx);
              q[y0 * w + x1] += go * (1.0f - fy) * fx;
              q[y1 * w + x0] += go * fy * (1.0f - fx);
              q[y1 * w + x1] += go * fy * fx;
            }
            if (need_gf) {
              if (in_x) du += go * ((1.0f - fy) * (p01 - p00) + fy * (p11 - p10));
              if (in_y) dv += go * ((1.0f - fx) * (p10 - p00) + fx * (p11 - p01));
            }
          }
          if (need_gf) {
            gf->data()[j] += du;
            gf->data()[static_cast<size_t>(h) * w + j] += dv;
          }
        }
      }
      break;
    }
    case Op::kAvgPool2: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < h / 2; ++y)
            for (int xo = 0; xo < w / 2; ++xo) {
              const float gv = 0.25f * g.at(ci, y, xo);
              gi.at(ci, 2 * y, 2 * xo) += gv;
              gi.at(ci, 2 * y, 2 * xo + 1) += gv;
              gi.at(ci, 2 * y + 1, 2 * xo) += gv;
              gi.at(ci, 2 * y + 1, 2 * xo + 1) += gv;
            }
      }
      break;
    }
    case Op::kGlobalAvgPool: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
        const float inv = 1.0f / static_cast<float>(hw);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int ci = 0; ci < c; ++ci) {
          const float gv = g[ci] * inv;
          float* q = gi.data() + static_cast<size_t>(ci) * hw;
          for (int j = 0; j < hw; ++j) q[j] += gv;
        }
      }
      break;
    }
    case Op::kUpNearest2: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int ci = 0; ci < c; ++ci)
          for (int y = 0; y < 2 * h; ++y)
            for (int xo = 0; xo < 2 * w; ++xo)
              gi.at(ci, y / 2, xo / 2) += g.at(ci, y, xo);
      }
      break;
    }
    case Op::kUpBilinear2: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
        Tensor& gi = ensure_grad(n.in[0]);
        for (int y = 0; y < 2 * h; ++y) {
          float sy = (static_cast<float>(y) + 0.5f) * 0.5f - 0.5f;
          sy = std::min(std::max(sy, 0.0f), static_cast<float>(h - 1));
          const int y0 = std::min(static_cast<int>(sy), h - 1);
          const int y1 = std::min(y0 + 1, h - 1);
          const float fy = sy - static_cast<float>(y0);
          for (int xo = 0; xo < 2 * w; ++xo) {
            float sx = (static_cast<float>(xo) + 0.5f) * 0.5f - 0.5f;
            sx = std::min(std::max(sx, 0.0f), static_cast<float>(w - 1));
            const int x0 = std::min(static_cast<int>(sx), w - 1);
            const int x1 = std::min(x0 + 1, w - 1);
            const float fx = sx - static_cast<float>(x0);
            for (int ci = 0; ci < c; ++ci) {
              const float go = g.at(ci, y, xo);
              if (go == 0.0f) continue;
              float* q = gi.data() + static_cast<size_t>(ci) * h * w;
              q[y0 * w + x0] += go * (1.0f - fy) * (1.0f - fx);
              q[y0 * w + x1] += go * (1.0f - fy) * fx;
              q[y1 * w + x0] += go * fy * (1.0f - fx);
              q[y1 * w + x1] += go * fy * fx;
            }
          }
        }
      }
      break;
    }
    case Op::kConcatC: {
      int64_t off = 0;
      for (NodeId src : n.in) {
        const Tensor& t = value(src);
        if (rg(src)) {
          Tensor& gi = ensure_grad(src);
          for (int64_t i = 0; i < t.numel(); ++i) gi[i] += g[off + i];
        }
        off += t.numel();
      }
      break;
    }
    case Op::kSliceC: {
      if (rg(n.in[0])) {
        const Tensor& x = value(n.in[0]);
        const int h = x.dim(1), w = x.dim(2);
        Tensor& gi = ensure_grad(n.in[0]);
        float* q = gi.data() + static_cast<size_t>(n.aux.i0) * h * w;
        for (int64_t i = 0; i < g.numel(); ++i) q[i] += g[i];
      }
      break;
    }
    case Op::kSum: {
      if (rg(n.in[0])) {
        const float gv = g[0];
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < gi.numel(); ++i) gi[i] += gv;
      }
      break;
    }
    case Op::kMulChannel: {
      const Tensor& x = value(n.in[0]);
      const Tensor& s = value(n.in[1]);
      const int c = x.dim(0), hw = x.dim(1) * x.dim(2);
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int ci = 0; ci < c; ++ci) {
          const float sv = s[ci];
          const float* gp = g.data() + static_cast<size_t>(ci) * hw;
          float* q = gi.data() + static_cast<size_t>(ci) * hw;
          for (int j = 0; j < hw; ++j) q[j] += gp[j] * sv;
        }
      }
      if (rg(n.in[1])) {
        Tensor& gsc = ensure_grad(n.in[1]);
        for (int ci = 0; ci < c; ++ci) {
          double acc = 0.0;
          const float* gp = g.data() + static_cast<size_t>(ci) * hw;
          const float* xp = x.data() + static_cast<size_t>(ci) * hw;
          for (int j = 0; j < hw; ++j) acc += static_cast<double>(gp[j]) * xp[j];
          gsc[ci] += static_cast<float>(acc);
        }
      }
      break;
    }
    case Op::kQuantizeSte: {
      // straight-through: identity gradient
      if (rg(n.in[0])) {
        Tensor& gi = ensure_grad(n.in[0]);
        for (int64_t i = 0; i < g.numel(); ++i) gi[i] += g[i];
      }
      break;
    }
    case Op::kGaussianBits: {
      const Tensor& yh = value(n.in[0]);
      const Tensor& mu = value(n.in[1]);
      const Tensor& sc = value(n.in[2]);
      const bool gy = rg(n.in[0]), gm = rg(n.in[1]), gsd = rg(n.in[2]);
      Tensor* ty = gy ? &ensure_grad(n.in[0]) : nullptr;
      Tensor* tm = gm ? &ensure_grad(n.in[1]) : nullptr;
      Tensor* tsd = gsd ? &ensure_grad(n.in[2]) : nullptr;
      for (int64_t i = 0; i < g.numel(); ++i) {
        const double sg = sc[i];
        const double ctr = yh[i] - mu[i];
        const double b = (ctr + 0.5) / sg;
        const double a = (ctr - 0.5) / sg;
        const double p = norm_cdf(b) - norm_cdf(a);
        if (p <= kProbFloor) continue;  // flat region of the floor
        const double dbits_dp = -1.0 / (p * kLn2);
        const double pb = norm_pdf(b), pa = norm_pdf(a);
        const double dp_dy = (pb - pa) / sg;
        const double dp_ds = (a * pa - b * pb) / sg;
        const double gv = g[i];
        if (gy) (*ty)[i] += static_cast<float>(gv * dbits_dp * dp_dy);
        if (gm) (*tm)[i] += static_cast<float>(gv * dbits_dp * (-dp_dy));
        if (gsd) (*tsd)[i] += static_cast<float>(gv * dbits_dp * dp_ds);
      }
      break;
    }
  }
}

}  // namespace dcmvc
