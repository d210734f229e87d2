#include "dcmvc/context.hpp"

#include <algorithm>

namespace dcmvc {

namespace {

std::string layer_prefix(const std::string& prefix, int k) {
  return prefix + ".k" + std::to_string(k);
}

// two-conv head used for both s and b of a coupling layer
NodeId coupling_head(Binder& b, const std::string& prefix, NodeId x) {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv(prefix + ".c0", x));
  return b.conv(prefix + ".c1", h);
}

}  // namespace

void register_coupling(ParamStore& ps, Rng& rng, const std::string& prefix,
                       int channels, int layers) {
  DCMVC_CHECK(channels % 2 == 0, "coupling: channel count must be even, got " +
                                     std::to_string(channels));
  const int half = channels / 2;
  for (int k = 0; k < layers; ++k) {
    const std::string lp = layer_prefix(prefix, k);
    register_conv(ps, rng, lp + ".s.c0", half, half, 3);
    register_conv(ps, rng, lp + ".s.c1", half, half, 3, true, /*zero=*/true);
    register_conv(ps, rng, lp + ".b.c0", half, half, 3);
    register_conv(ps, rng, lp + ".b.c1", half, half, 3, true, /*zero=*/true);
  }
}

NodeId coupling_forward(Binder& b, const std::string& prefix, NodeId x,
                        int layers) {
  Graph& g = b.g();
  const int c = g.value(x).dim(0);
  DCMVC_CHECK(c % 2 == 0, "coupling: odd channel count " + std::to_string(c));
  const int half = c / 2;
  NodeId cur = x;
  for (int k = 0; k < layers; ++k) {
    const std::string lp = layer_prefix(prefix, k);
    NodeId x1 = g.slice_c(cur, 0, half);
    NodeId x2 = g.slice_c(cur, half, c);
    NodeId s = g.tanh_(coupling_head(b, lp + ".s", x1));
    NodeId t = coupling_head(b, lp + ".b", x1);
    NodeId y2 = g.add(g.mul(x2, g.exp_(s)), t);
    // swap halves between layers so both get transformed
    cur = g.concat_c({y2, x1});
  }
  return cur;
}

NodeId coupling_inverse(Binder& b, const std::string& prefix, NodeId y,
                        int layers) {
  Graph& g = b.g();
  const int c = g.value(y).dim(0);
  DCMVC_CHECK(c % 2 == 0, "coupling: odd channel count " + std::to_string(c));
  const int half = c / 2;
  NodeId cur = y;
  for (int k = layers - 1; k >= 0; --k) {
    // undo the swap: forward emitted concat(y2, x1)
    NodeId y2 = g.slice_c(cur, 0, half);
    NodeId x1 = g.slice_c(cur, half, c);
    const std::string lp = layer_prefix(prefix, k);
    NodeId s = g.tanh_(coupling_head(b, lp + ".s", x1));
    NodeId t = coupling_head(b, lp + ".b", x1);
    NodeId x2 = g.mul(g.sub(y2, t), g.exp_(g.scale(s, -1.0f)));
    cur = g.concat_c({x1, x2});
  }
  return cur;
}

NodeId coupling_logdet(Binder& b, const std::string& prefix, NodeId x,
                       int layers) {
  Graph& g = b.g();
  const int c = g.value(x).dim(0);
  const int half = c / 2;
  NodeId cur = x;
  NodeId total = kNoNode;
  for (int k = 0; k < layers; ++k) {
    const std::string lp = layer_prefix(prefix, k);
    NodeId x1 = g.slice_c(cur, 0, half);
    NodeId x2 = g.slice_c(cur, half, c);
    NodeId s = g.tanh_(coupling_head(b, lp + ".s", x1));
    NodeId t = coupling_head(b, lp + ".b", x1);
    NodeId ssum = g.sum(s);
    total = total == kNoNode ? ssum : g.add(total, ssum);
    cur = g.concat_c({g.add(g.mul(x2, g.exp_(s)), t), x1});
  }
  return total;
}

void register_global_extractor(ParamStore& ps, Rng& rng,
                               const std::string& prefix, int channels) {
  const int mid = std::max(channels / 2, 4);
  register_conv(ps, rng, prefix + ".d0", channels, channels, 3);
  register_conv(ps, rng, prefix + ".d1", channels, channels, 3);
  register_conv(ps, rng, prefix + ".a0", mid, channels, 1);
  register_conv(ps, rng, prefix + ".a1", channels, mid, 1);
  register_conv(ps, rng, prefix + ".o", channels, channels, 3);
}

NodeId global_extract(Binder& b, const std::string& prefix, NodeId x) {
  Graph& g = b.g();
  NodeId h = g.leaky_relu(b.conv(prefix + ".d0", x, 2));
  h = g.leaky_relu(b.conv(prefix + ".d1", h, 2));
  NodeId z = g.global_avg_pool(h);
  z = g.leaky_relu(b.conv(prefix + ".a0", z, 1, 0));
  z = g.sigmoid(b.conv(prefix + ".a1", z, 1, 0));
  h = g.mul_channel(h, z);
  h = g.upsample_bilinear2(g.upsample_bilinear2(h));
  return b.conv(prefix + ".o", h);
}

NodeId cosine_correlation(Graph& g, NodeId a, NodeId b) {
  DCMVC_CHECK(g.value(a).same_shape(g.value(b)),
              "cosine_correlation: shape mismatch " + g.value(a).shape_str() +
                  " vs " + g.value(b).shape_str());
  NodeId dot = g.sum(g.mul(a, b));
  NodeId na = g.sqrt_(g.sum(g.mul(a, a)));
  NodeId nb = g.sqrt_(g.sum(g.mul(b, b)));
  return g.div(dot, g.add_const(g.mul(na, nb), 1e-8f));
}

NodeId decoupling_loss_node(Graph& g, NodeId cor_l, NodeId cor_g) {
  NodeId num = g.mul(cor_l, cor_l);
  NodeId den = g.add_const(g.mul(cor_g, cor_g), 1e-6f);
  return g.div(num, den);
}

}  // namespace dcmvc
