#include "dcmvc/tensor.hpp"

#include <cmath>
#include <sstream>

namespace dcmvc {

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  int64_t n = 1;
  for (int d : shape_) {
    DCMVC_CHECK(d > 0, "Tensor: nonpositive extent in shape");
    n *= d;
  }
  DCMVC_CHECK(!shape_.empty(), "Tensor: empty shape");
  data_.assign(static_cast<size_t>(n), 0.0f);
}

Tensor Tensor::full(std::vector<int> shape, float v) {
  Tensor t(std::move(shape));
  for (auto& x : t.data_) x = v;
  return t;
}

Tensor Tensor::from(std::vector<int> shape, std::vector<float> data) {
  Tensor t;
  t.shape_ = std::move(shape);
  int64_t n = 1;
  for (int d : t.shape_) n *= d;
  DCMVC_CHECK(!t.shape_.empty() && n == static_cast<int64_t>(data.size()),
              "Tensor::from: shape does not match data length");
  t.data_ = std::move(data);
  return t;
}

bool Tensor::all_finite() const {
  for (float v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

std::string Tensor::shape_str() const {
  std::ostringstream os;
  os << "(";
  for (size_t i = 0; i < shape_.size(); ++i) {
    if (i) os << ",";
    os << shape_[i];
  }
  os << ")";
  return os.str();
}

}  // namespace dcmvc
