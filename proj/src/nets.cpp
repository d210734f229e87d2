#include "dcmvc/nets.hpp"

#include <cmath>

namespace dcmvc {

void register_conv(ParamStore& ps, Rng& rng, const std::string& name, int cout,
                   int cin, int k, bool bias, bool zero) {
  Tensor w({cout, cin, k, k});
  if (!zero) {
    const float bound = std::sqrt(6.0f / static_cast<float>(cin * k * k));
    for (int64_t i = 0; i < w.numel(); ++i)
      w[i] = static_cast<float>(rng.uniform(-bound, bound));
  }
  ps.add(name + ".w", std::move(w));
  if (bias) ps.add(name + ".b", Tensor::zeros({cout}));
}

NodeId Binder::p(const std::string& name) {
  auto it = bound_.find(name);
  if (it != bound_.end()) return it->second;
  const NodeId id = g_.leaf(ps_.get(name), train_);
  bound_.emplace(name, id);
  return id;
}

NodeId Binder::conv(const std::string& name, NodeId x, int stride, int pad) {
  const NodeId w = p(name + ".w");
  const NodeId b = ps_.has(name + ".b") ? p(name + ".b") : kNoNode;
  const int k = g_.value(w).dim(2);
  if (pad < 0) pad = k / 2;
  return g_.conv2d(x, w, b, stride, pad);
}

void Binder::collect_grads(std::map<std::string, Tensor>& acc) const {
  for (const auto& [name, id] : bound_) {
    if (!g_.requires_grad(id)) continue;
    Tensor grad = g_.grad(id);
    auto it = acc.find(name);
    if (it == acc.end()) {
      acc.emplace(name, std::move(grad));
    } else {
      Tensor& t = it->second;
      for (int64_t i = 0; i < t.numel(); ++i) t[i] += grad[i];
    }
  }
}

}  // namespace dcmvc
