#ifndef DCMVC_PARAM_STORE_HPP
#define DCMVC_PARAM_STORE_HPP

#include <cstdint>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "dcmvc/tensor.hpp"

namespace dcmvc {

// Named parameter tensors plus Adam state, in a stable insertion order.
// Checkpoints serialize parameters only (optimizer state is not persisted).
class ParamStore {
 public:
  struct Entry {
    std::string name;
    Tensor value;
    Tensor m, v;  // Adam first/second moments, allocated on first use
  };

  Tensor& add(const std::string& name, Tensor init);
  bool has(const std::string& name) const { return index_.count(name) != 0; }
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;

  size_t size() const { return entries_.size(); }
  const std::vector<Entry>& entries() const { return entries_; }
  int64_t step() const { return step_; }

  // One Adam update over all parameters. Missing names in `grads` count as
  // zero gradient. beta1 0.9, beta2 0.999, eps 1e-8.
  void adam_step(const std::map<std::string, Tensor>& grads, float lr);

  void save(const std::string& path) const;
  static ParamStore load(const std::string& path);

 private:
  std::vector<Entry> entries_;
  std::unordered_map<std::string, size_t> index_;
  int64_t step_ = 0;
};

}  // namespace dcmvc

#endif
