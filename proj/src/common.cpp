#include "dcmvc/common.hpp"

namespace dcmvc {

namespace {
#ifdef NDEBUG
bool g_check_finite = false;
#else
bool g_check_finite = true;
#endif
}  // namespace

bool check_finite_enabled() { return g_check_finite; }
void set_check_finite(bool on) { g_check_finite = on; }

}  // namespace dcmvc
