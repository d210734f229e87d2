#ifndef DCMVC_NETS_HPP
#define DCMVC_NETS_HPP

#include <map>
#include <string>

#include "dcmvc/graph.hpp"
#include "dcmvc/param_store.hpp"
#include "dcmvc/rng.hpp"

namespace dcmvc {

// Registers weight "<name>.w" (cout,cin,k,k) and, if bias, "<name>.b" (cout).
// Kaiming-uniform weights (bound sqrt(6/fan_in)), zero bias; zero=true zeroes
// the weight too (used for residual-flow heads and coupling finals so the
// untrained nets compute exactly 0).
void register_conv(ParamStore& ps, Rng& rng, const std::string& name, int cout,
                   int cin, int k, bool bias = true, bool zero = false);

// Binds parameters of one ParamStore into one Graph, once each, so repeated
// use within a graph shares the leaf and gradients accumulate across frames.
class Binder {
 public:
  Binder(Graph& g, ParamStore& ps, bool train) : g_(g), ps_(ps), train_(train) {}

  Graph& g() { return g_; }
  bool train() const { return train_; }

  NodeId p(const std::string& name);

  // Convolution by registered name; pad -1 means same-padding k/2.
  NodeId conv(const std::string& name, NodeId x, int stride = 1, int pad = -1);

  // Gradients of all bound parameters after backward(), summed into `acc`.
  void collect_grads(std::map<std::string, Tensor>& acc) const;

 private:
  Graph& g_;
  ParamStore& ps_;
  bool train_;
  std::map<std::string, NodeId> bound_;
};

}  // namespace dcmvc

#endif
