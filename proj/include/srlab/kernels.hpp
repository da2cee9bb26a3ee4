#pragma once

// Dense double-precision primitives used by the policy and loss code.
// Every primitive has a scalar reference implementation; AVX2 variants are
// picked at runtime when the CPU supports them. SRLAB_SIMD=scalar|avx2 in the
// environment forces a choice at first use.

#include <cstddef>
#include <span>
#include <string_view>

namespace srlab::kernels {

enum class Isa { Scalar, Avx2 };

std::string_view to_string(Isa isa) noexcept;

struct KernelTable {
  double (*max)(const double* x, std::size_t n);
  double (*sum)(const double* x, std::size_t n);
  double (*dot)(const double* x, const double* y, std::size_t n);
  // y += a * x
  void (*axpy)(double a, const double* x, double* y, std::size_t n);
  // x *= a
  void (*scale)(double a, double* x, std::size_t n);
};

bool isa_available(Isa isa) noexcept;
/// Table for a specific ISA. Throws InvalidArgument if the CPU lacks it.
const KernelTable& table(Isa isa);
Isa active_isa() noexcept;
/// Switches the process-wide dispatch. Throws InvalidArgument if unavailable.
void select_isa(Isa isa);

/// Restores the previous ISA on scope exit. Test helper.
class ScopedIsa {
 public:
  explicit ScopedIsa(Isa isa) : previous_(active_isa()) { select_isa(isa); }
  ~ScopedIsa() { select_isa(previous_); }
  ScopedIsa(const ScopedIsa&) = delete;
  ScopedIsa& operator=(const ScopedIsa&) = delete;

 private:
  Isa previous_;
};

// Dispatching front-ends. Empty input: max is -inf, sum/dot are 0.
double max(std::span<const double> x);
double sum(std::span<const double> x);
double dot(std::span<const double> x, std::span<const double> y);
void axpy(double a, std::span<const double> x, std::span<double> y);
void scale(double a, std::span<double> x);

/// log(sum(exp(x))) with max-subtraction. -inf entries contribute zero;
/// all -inf gives -inf.
double log_sum_exp(std::span<const double> x);
/// out = exp(x - log_sum_exp(x)); `out` may alias `x`.
void softmax(std::span<const double> x, std::span<double> out);

namespace scalar {
double max(const double* x, std::size_t n);
double sum(const double* x, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
}  // namespace scalar

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
double max(const double* x, std::size_t n);
double sum(const double* x, std::size_t n);
double dot(const double* x, const double* y, std::size_t n);
void axpy(double a, const double* x, double* y, std::size_t n);
void scale(double a, double* x, std::size_t n);
}  // namespace avx2
#endif

}  // namespace srlab::kernels
