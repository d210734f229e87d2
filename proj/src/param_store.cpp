#include "dcmvc/param_store.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>

namespace dcmvc {

namespace {

// Checkpoint layout, little-endian:
//   magic "CMWT", version u32, count u32, then per parameter:
//   name length u16, UTF-8 name, rank u8, extents u32 each, raw f32 data.
constexpr char kMagic[4] = {'C', 'M', 'W', 'T'};
constexpr uint32_t kVersion = 1;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

void put(std::FILE* f, const void* p, size_t n) {
  DCMVC_CHECK(std::fwrite(p, 1, n, f) == n, "checkpoint: write failed");
}

void take(std::FILE* f, void* p, size_t n, const char* what) {
  DCMVC_CHECK(std::fread(p, 1, n, f) == n,
              std::string("checkpoint: truncated while reading ") + what);
}

template <typename T>
void put_le(std::FILE* f, T v) {
  unsigned char b[sizeof(T)];
  for (size_t i = 0; i < sizeof(T); ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
  put(f, b, sizeof(T));
}

template <typename T>
T take_le(std::FILE* f, const char* what) {
  unsigned char b[sizeof(T)];
  take(f, b, sizeof(T), what);
  T v = 0;
  for (size_t i = 0; i < sizeof(T); ++i) v |= static_cast<T>(b[i]) << (8 * i);
  return v;
}

}  // namespace

Tensor& ParamStore::add(const std::string& name, Tensor init) {
  DCMVC_CHECK(!index_.count(name), "ParamStore: duplicate parameter name " + name);
  index_[name] = entries_.size();
  entries_.push_back(Entry{name, std::move(init), Tensor(), Tensor()});
  return entries_.back().value;
}

Tensor& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  DCMVC_CHECK(it != index_.end(), "ParamStore: unknown parameter " + name);
  return entries_[it->second].value;
}

const Tensor& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  DCMVC_CHECK(it != index_.end(), "ParamStore: unknown parameter " + name);
  return entries_[it->second].value;
}

void ParamStore::adam_step(const std::map<std::string, Tensor>& grads, float lr) {
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  ++step_;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  for (auto& [name, g] : grads) {
    DCMVC_CHECK(index_.count(name), "adam_step: gradient for unknown parameter " + name);
    DCMVC_CHECK(g.same_shape(entries_[index_.at(name)].value),
                "adam_step: gradient shape mismatch for " + name);
  }
  for (auto& e : entries_) {
    auto it = grads.find(e.name);
    if (e.m.empty()) {
      e.m = Tensor::zeros(e.value.shape());
      e.v = Tensor::zeros(e.value.shape());
    }
    if (it == grads.end()) continue;  // zero gradient: moments decay toward 0,
                                      // update stays 0 while they are 0
    const Tensor& g = it->second;
    for (int64_t i = 0; i < e.value.numel(); ++i) {
      const double gi = g[i];
      const double m = b1 * e.m[i] + (1.0 - b1) * gi;
      const double v = b2 * e.v[i] + (1.0 - b2) * gi * gi;
      e.m[i] = static_cast<float>(m);
      e.v[i] = static_cast<float>(v);
      const double mh = m / bc1;
      const double vh = v / bc2;
      e.value[i] = static_cast<float>(e.value[i] - lr * mh / (std::sqrt(vh) + eps));
    }
  }
}

void ParamStore::save(const std::string& path) const {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  DCMVC_CHECK(f != nullptr, "checkpoint: cannot open for writing: " + path);
  put(f.get(), kMagic, 4);
  put_le<uint32_t>(f.get(), kVersion);
  put_le<uint32_t>(f.get(), static_cast<uint32_t>(entries_.size()));
  for (const auto& e : entries_) {
    DCMVC_CHECK(e.name.size() <= 0xFFFF, "checkpoint: parameter name too long");
    put_le<uint16_t>(f.get(), static_cast<uint16_t>(e.name.size()));
    put(f.get(), e.name.data(), e.name.size());
    DCMVC_CHECK(e.value.rank() <= 0xFF, "checkpoint: rank too large");
    unsigned char rank = static_cast<unsigned char>(e.value.rank());
    put(f.get(), &rank, 1);
    for (int d = 0; d < e.value.rank(); ++d)
      put_le<uint32_t>(f.get(), static_cast<uint32_t>(e.value.dim(d)));
    put(f.get(), e.value.data(), sizeof(float) * static_cast<size_t>(e.value.numel()));
  }
}

ParamStore ParamStore::load(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  DCMVC_CHECK(f != nullptr, "checkpoint: cannot open: " + path);
  char magic[4];
  take(f.get(), magic, 4, "magic");
  DCMVC_CHECK(std::memcmp(magic, kMagic, 4) == 0, "checkpoint: bad magic in " + path);
  const uint32_t version = take_le<uint32_t>(f.get(), "version");
  DCMVC_CHECK(version == kVersion,
              "checkpoint: unsupported version " + std::to_string(version));
  const uint32_t count = take_le<uint32_t>(f.get(), "count");
  ParamStore ps;
  for (uint32_t i = 0; i < count; ++i) {
    const uint16_t len = take_le<uint16_t>(f.get(), "name length");
    std::string name(len, '\0');
    take(f.get(), name.data(), len, "name");
    unsigned char rank = 0;
    take(f.get(), &rank, 1, "rank");
    DCMVC_CHECK(rank >= 1, "checkpoint: zero-rank parameter " + name);
    std::vector<int> shape(rank);
    for (int d = 0; d < rank; ++d) {
      const uint32_t e = take_le<uint32_t>(f.get(), "extent");
      DCMVC_CHECK(e >= 1 && e <= (1u << 24), "checkpoint: bad extent in " + name);
      shape[static_cast<size_t>(d)] = static_cast<int>(e);
    }
    Tensor t(shape);
    take(f.get(), t.data(), sizeof(float) * static_cast<size_t>(t.numel()), "tensor data");
    DCMVC_CHECK(t.all_finite(), "checkpoint: non-finite values in " + name);
    ps.add(name, std::move(t));
  }
  return ps;
}

}  // namespace dcmvc
