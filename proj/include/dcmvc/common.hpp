#ifndef DCMVC_COMMON_HPP
#define DCMVC_COMMON_HPP

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dcmvc {

// All recoverable failures surface as this exception type. The CLI maps it
// to a one-line error on stderr and a nonzero exit code.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

[[noreturn]] inline void fail(const std::string& msg) { throw Error(msg); }

#define DCMVC_CHECK(cond, msg)           \
  do {                                   \
    if (!(cond)) ::dcmvc::fail((msg));   \
  } while (0)

// Runtime toggle for the non-finite-value checks in graph forward passes.
// On by default in debug builds; tests enable it explicitly.
bool check_finite_enabled();
void set_check_finite(bool on);

// FNV-1a over raw bytes. Used to compare encoder/decoder intermediates.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace dcmvc

#endif
