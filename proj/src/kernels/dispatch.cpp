#include <atomic>
#include <cmath>
#include <cstdlib>
#include <limits>
#include <string>

#include "srlab/error.hpp"
#include "srlab/kernels.hpp"

namespace srlab::kernels {

namespace {

constexpr KernelTable kScalar{scalar::max, scalar::sum, scalar::dot, scalar::axpy, scalar::scale};
#if defined(__x86_64__) || defined(_M_X64)
constexpr KernelTable kAvx2{avx2::max, avx2::sum, avx2::dot, avx2::axpy, avx2::scale};
#endif

Isa initial_isa() {
  if (const char* env = std::getenv("SRLAB_SIMD")) {
    const std::string v(env);
    if (v == "scalar") return Isa::Scalar;
    if (v == "avx2" && isa_available(Isa::Avx2)) return Isa::Avx2;
  }
  return isa_available(Isa::Avx2) ? Isa::Avx2 : Isa::Scalar;
}

std::atomic<const KernelTable*>& current() {
  static std::atomic<const KernelTable*> ptr{&table(initial_isa())};
  return ptr;
}

}  // namespace

std::string_view to_string(Isa isa) noexcept {
  return isa == Isa::Avx2 ? "avx2" : "scalar";
}

bool isa_available(Isa isa) noexcept {
  switch (isa) {
    case Isa::Scalar:
      return true;
    case Isa::Avx2:
#if defined(__x86_64__) || defined(_M_X64)
      return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
      return false;
#endif
  }
  return false;
}

const KernelTable& table(Isa isa) {
  if (!isa_available(isa)) {
    fail(ErrorKind::InvalidArgument, "ISA not available on this CPU: " + std::string(to_string(isa)));
  }
#if defined(__x86_64__) || defined(_M_X64)
  if (isa == Isa::Avx2) return kAvx2;
#endif
  return kScalar;
}

Isa active_isa() noexcept {
  return current().load(std::memory_order_relaxed) == &kScalar ? Isa::Scalar : Isa::Avx2;
}

void select_isa(Isa isa) { current().store(&table(isa), std::memory_order_relaxed); }

double max(std::span<const double> x) { return current().load(std::memory_order_relaxed)->max(x.data(), x.size()); }
double sum(std::span<const double> x) { return current().load(std::memory_order_relaxed)->sum(x.data(), x.size()); }

double dot(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidArgument, "dot: size mismatch");
  return current().load(std::memory_order_relaxed)->dot(x.data(), y.data(), x.size());
}

void axpy(double a, std::span<const double> x, std::span<double> y) {
  if (x.size() != y.size()) fail(ErrorKind::InvalidArgument, "axpy: size mismatch");
  current().load(std::memory_order_relaxed)->axpy(a, x.data(), y.data(), x.size());
}

void scale(double a, std::span<double> x) { current().load(std::memory_order_relaxed)->scale(a, x.data(), x.size()); }

double log_sum_exp(std::span<const double> x) {
  const double m = max(x);
  if (m == -std::numeric_limits<double>::infinity()) return m;
  double s = 0.0;
  for (double v : x) s += std::exp(v - m);
  return m + std::log(s);
}

void softmax(std::span<const double> x, std::span<double> out) {
  if (x.size() != out.size()) fail(ErrorKind::InvalidArgument, "softmax: size mismatch");
  const double m = max(x);
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = std::exp(x[i] - m);
  const double s = sum(out);
  scale(1.0 / s, out);
}

}  // namespace srlab::kernels
