#ifndef DCMVC_FLOW_HPP
#define DCMVC_FLOW_HPP

#include <string>

#include "dcmvc/nets.hpp"

namespace dcmvc {

// Bilinear warp: out(p) = src(p + flow(p)), clamp-to-edge.
inline NodeId warp(Graph& g, NodeId src, NodeId flow) {
  return g.bilinear_sample(src, flow);
}

// Flow resampling keeps displacement units consistent with the resolution:
// halved extents halve the values, doubled extents double them.
NodeId flow_down2(Graph& g, NodeId flow);
NodeId flow_up2(Graph& g, NodeId flow);

// Coarse-to-fine residual flow estimator. Per level: a small conv head on
// (warped reference, target, upsampled flow) predicts a residual added to
// the upsampled coarser flow. Heads end in a zero-initialized conv, so the
// untrained estimator returns exactly zero flow.
void register_flow_net(ParamStore& ps, Rng& rng, const std::string& prefix,
                       int levels, int width);

// Per-level tensors of one estimation pass, finest first. Training applies
// the photometric loss at every level; a loss only at the finest level
// leaves the coarse heads with too weak a signal to learn alignment.
struct FlowPyramid {
  std::vector<NodeId> flows, refs, tgts;
};

// Uses at most `max_levels` pyramid levels, fewer if the coarsest level
// would drop under 8x8. ref/tgt are (3,H,W) frames of equal shape.
NodeId flow_estimate(Binder& b, const std::string& prefix, NodeId ref,
                     NodeId tgt, int max_levels, FlowPyramid* pyr = nullptr);

}  // namespace dcmvc

#endif
