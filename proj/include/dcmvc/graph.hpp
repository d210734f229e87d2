#ifndef DCMVC_GRAPH_HPP
#define DCMVC_GRAPH_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "dcmvc/tensor.hpp"

namespace dcmvc {

using NodeId = int32_t;
constexpr NodeId kNoNode = -1;

enum class Op : uint8_t {
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kScale,      // x * f0
  kAddConst,   // x + f0
  kConv2d,     // in: x, w, [b]; i0=stride, i1=pad
  kBilinearSample,  // in: src (C,H,W), flow (2,H,W); clamp-to-edge
  kLeakyRelu,  // f0 = negative slope
  kSigmoid,
  kTanh,
  kExp,
  kSqrt,
  kClamp,      // f0 = lo, f1 = hi; subgradient zero outside (lo, hi)
  kAvgPool2,   // 2x2 stride-2 mean
  kGlobalAvgPool,  // (C,H,W) -> (C,1,1)
  kUpNearest2,
  kUpBilinear2,
  kConcatC,
  kSliceC,     // i0 = from, i1 = to (exclusive)
  kSum,        // -> {1}
  kMulChannel,   // x (C,H,W) * s (C,1,1)
  kQuantizeSte,  // round ties-away, clamp to +-f0; identity gradient
  kGaussianBits, // in: yhat, mean, scale; per-entry -log2 P(bin), floored
};

const char* op_name(Op op);

struct OpAux {
  int i0 = 0, i1 = 0;
  float f0 = 0.0f, f1 = 0.0f;
};

struct Node {
  Op op = Op::kLeaf;
  std::vector<NodeId> in;
  OpAux aux;
  Tensor val;
  Tensor grd;          // allocated lazily during backward
  bool requires_grad = false;
  bool has_grad = false;
};

// Eagerly evaluated tape: every builder computes its forward value on the
// spot and records the node, so node order is topological by construction.
// backward() walks the tape once in reverse.
class Graph {
 public:
  NodeId leaf(Tensor v, bool requires_grad = false);

  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId div(NodeId a, NodeId b);
  NodeId scale(NodeId x, float f);
  NodeId add_const(NodeId x, float f);
  // b = kNoNode for a bias-free convolution
  NodeId conv2d(NodeId x, NodeId w, NodeId b, int stride, int pad);
  NodeId bilinear_sample(NodeId src, NodeId flow);
  NodeId leaky_relu(NodeId x, float slope = 0.1f);
  NodeId sigmoid(NodeId x);
  NodeId tanh_(NodeId x);
  NodeId exp_(NodeId x);
  NodeId sqrt_(NodeId x);
  NodeId clamp(NodeId x, float lo, float hi);
  NodeId avg_pool2(NodeId x);
  NodeId global_avg_pool(NodeId x);
  NodeId upsample_nearest2(NodeId x);
  NodeId upsample_bilinear2(NodeId x);
  NodeId concat_c(const std::vector<NodeId>& xs);
  NodeId slice_c(NodeId x, int from, int to);
  NodeId sum(NodeId x);
  NodeId mul_channel(NodeId x, NodeId s);
  NodeId quantize_ste(NodeId x, float lmax);
  NodeId gaussian_bits(NodeId yhat, NodeId mean, NodeId scale);

  // composites
  NodeId mean(NodeId x);
  NodeId mse(NodeId a, NodeId b);

  // Backward from a scalar node. Fills gradients for every requires_grad
  // node on a path to `root`; others keep zero (never-allocated) grads.
  void backward(NodeId root);

  const Tensor& value(NodeId id) const { return node(id).val; }
  // Returns the gradient tensor; zeros if the node was not reached.
  Tensor grad(NodeId id) const;
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }

  size_t num_nodes() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  void clear();

 private:
  Node& node_mut(NodeId id);
  NodeId push(Op op, std::vector<NodeId> in, OpAux aux, Tensor val);
  Tensor& ensure_grad(NodeId id);
  void backward_node(NodeId id);

  std::vector<Node> nodes_;
};

}  // namespace dcmvc

#endif
