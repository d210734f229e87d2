#include "dcmvc/flow.hpp"

#include <algorithm>

namespace dcmvc {

NodeId flow_down2(Graph& g, NodeId flow) {
  return g.scale(g.avg_pool2(flow), 0.5f);
}

NodeId flow_up2(Graph& g, NodeId flow) {
  return g.scale(g.upsample_bilinear2(flow), 2.0f);
}

void register_flow_net(ParamStore& ps, Rng& rng, const std::string& prefix,
                       int levels, int width) {
  for (int l = 0; l < levels; ++l) {
    const std::string lp = prefix + ".l" + std::to_string(l);
    register_conv(ps, rng, lp + ".c0", width, 8, 3);
    register_conv(ps, rng, lp + ".c1", width, width, 3);
    register_conv(ps, rng, lp + ".c2", 2, width, 3, true, /*zero=*/true);
  }
}

NodeId flow_estimate(Binder& b, const std::string& prefix, NodeId ref,
                     NodeId tgt, int max_levels, FlowPyramid* pyr) {
  Graph& g = b.g();
  const Tensor& tr = g.value(ref);
  const Tensor& tt = g.value(tgt);
  DCMVC_CHECK(tr.same_shape(tt), "flow_estimate: frames of unequal shape, " +
                                     tr.shape_str() + " vs " + tt.shape_str());
  DCMVC_CHECK(tr.rank() == 3, "flow_estimate: rank-3 frames required");
  int levels = 1;
  while (levels < max_levels &&
         std::min(tr.dim(1), tr.dim(2)) / (1 << levels) >= 8)
    ++levels;

  std::vector<NodeId> refs{ref}, tgts{tgt};
  for (int l = 1; l < levels; ++l) {
    refs.push_back(g.avg_pool2(refs.back()));
    tgts.push_back(g.avg_pool2(tgts.back()));
  }

  NodeId flow = kNoNode;
  for (int l = levels - 1; l >= 0; --l) {
    NodeId up;
    if (flow == kNoNode) {
      const Tensor& c = g.value(refs[static_cast<size_t>(l)]);
      up = g.leaf(Tensor::zeros({2, c.dim(1), c.dim(2)}), false);
    } else {
      up = flow_up2(g, flow);
    }
    const NodeId warped = warp(g, refs[static_cast<size_t>(l)], up);
    const NodeId feat = g.concat_c({warped, tgts[static_cast<size_t>(l)], up});
    const std::string lp = prefix + ".l" + std::to_string(l);
    NodeId h = g.leaky_relu(b.conv(lp + ".c0", feat));
    h = g.leaky_relu(b.conv(lp + ".c1", h));
    const NodeId res = b.conv(lp + ".c2", h);
    flow = g.add(up, res);
    if (pyr != nullptr) {
      pyr->flows.push_back(flow);
      pyr->refs.push_back(refs[static_cast<size_t>(l)]);
      pyr->tgts.push_back(tgts[static_cast<size_t>(l)]);
    }
  }
  if (pyr != nullptr) {
    std::reverse(pyr->flows.begin(), pyr->flows.end());
    std::reverse(pyr->refs.begin(), pyr->refs.end());
    std::reverse(pyr->tgts.begin(), pyr->tgts.end());
  }
  return flow;
}

}  // namespace dcmvc
