#include <atomic>
#include <cstdlib>
#include <string>

#include "tapid/errors.hpp"
#include "tapid/simd/kernels.hpp"

namespace tapid::simd {

namespace {

const KernelTable* resolve(std::string_view name) {
  if (name == "scalar") return &scalar_kernels();
  if (name == "avx2") {
    if (const auto* t = avx2_kernels()) return t;
    throw InvalidInput("avx2 kernels unavailable on this CPU/build");
  }
  if (name == "auto" || name.empty()) {
    if (const auto* t = avx2_kernels()) return t;
    return &scalar_kernels();
  }
  throw InvalidInput("unknown kernel variant '" + std::string(name) + "'");
}

const KernelTable* initial() {
  const char* env = std::getenv("TAPID_KERNELS");
  return resolve(env ? std::string_view(env) : std::string_view("auto"));
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> current{initial()};
  return current;
}

}  // namespace

const KernelTable& active_kernels() { return *slot().load(std::memory_order_acquire); }

void select_kernels(std::string_view name) {
  slot().store(resolve(name), std::memory_order_release);
}

}  // namespace tapid::simd
