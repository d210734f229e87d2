#ifndef DCMVC_CONTEXT_HPP
#define DCMVC_CONTEXT_HPP

#include <string>

#include "dcmvc/nets.hpp"

namespace dcmvc {

// Stacked affine coupling layers with a channel swap between layers.
// Per layer: (x1, x2) = split(x); y = concat(x1, x2 * exp(s(x1)) + b(x1)),
// s = tanh(raw) so |s| < 1. The final convs of s and b are zero-initialized,
// making the untrained stack an exact identity.
void register_coupling(ParamStore& ps, Rng& rng, const std::string& prefix,
                       int channels, int layers = 2);
NodeId coupling_forward(Binder& b, const std::string& prefix, NodeId x,
                        int layers = 2);
NodeId coupling_inverse(Binder& b, const std::string& prefix, NodeId y,
                        int layers = 2);
// Sum of s over the affected entries; the log-determinant of the forward
// Jacobian (the coupling map is triangular).
NodeId coupling_logdet(Binder& b, const std::string& prefix, NodeId x,
                       int layers = 2);

// Global extractor: two stride-2 convs, channel attention gated by the
// globally pooled response, upsample back to full resolution, output conv.
void register_global_extractor(ParamStore& ps, Rng& rng,
                               const std::string& prefix, int channels);
NodeId global_extract(Binder& b, const std::string& prefix, NodeId x);

// dot(a,b) / (|a||b| + 1e-8) over flattened tensors, as a graph scalar.
NodeId cosine_correlation(Graph& g, NodeId a, NodeId b);

// cor_l^2 / (cor_g^2 + 1e-6)
NodeId decoupling_loss_node(Graph& g, NodeId cor_l, NodeId cor_g);

}  // namespace dcmvc

#endif
