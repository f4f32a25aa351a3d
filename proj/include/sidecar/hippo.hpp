#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "sidecar/linalg.hpp"

namespace sidecar {

/// Which HiPPO state matrix to build.
///
/// PaperEq1:     A[i][i] = -(2i+1), A[i][j] = -1 (i > j), B[i] = 1.
/// StandardLegS: A[i][i] = -(i+1),  A[i][j] = -sqrt(2i+1)sqrt(2j+1) (i > j),
///               B[i] = sqrt(2i+1).
/// Indices are 0-based; entries above the diagonal are zero in both.
/// The PaperEq1 input vector is all ones because that matrix comes with no
/// companion B of its own.
enum class HippoVariant { PaperEq1, StandardLegS };

std::string_view to_string(HippoVariant v);
/// Accepts "PaperEq1" / "StandardLegS"; throws ContractError otherwise.
HippoVariant parse_hippo_variant(std::string_view name);

struct HippoMatrices {
  Matrix a;
  Vector b;
};

HippoMatrices hippo_matrix(std::size_t n_states, HippoVariant variant);

/// Bilinear (Tustin) map:
///   A_d = (I - dt/2 A)^-1 (I + dt/2 A),  B_d = (I - dt/2 A)^-1 dt B.
/// Lower-triangular inputs go through forward substitution, so A_d keeps
/// exact zeros above the diagonal.
HippoMatrices discretize_bilinear(const Matrix& a, const Vector& b, double dt);

/// Continuous and discretized single-input state space, immutable once built.
class SsmCore {
 public:
  SsmCore(std::size_t n_states, HippoVariant variant, double dt);

  std::size_t n_states() const { return a_continuous_.rows(); }
  HippoVariant variant() const { return variant_; }
  double dt() const { return dt_; }
  const Matrix& a_continuous() const { return a_continuous_; }
  const Vector& b_continuous() const { return b_continuous_; }
  const Matrix& a_discrete() const { return a_discrete_; }
  const Vector& b_discrete() const { return b_discrete_; }

 private:
  HippoVariant variant_;
  double dt_;
  Matrix a_continuous_;
  Vector b_continuous_;
  Matrix a_discrete_;
  Vector b_discrete_;
};

struct SsmState {
  Vector x;
  std::size_t steps_taken = 0;

  static SsmState zeros(const SsmCore& core) { return {Vector(core.n_states()), 0}; }
};

/// x' = A_d x + B_d u.
SsmState ssm_step(const SsmCore& core, const SsmState& state, double u);

/// Element t is the state after consuming inputs[0..t].
std::vector<SsmState> ssm_scan(const SsmCore& core, std::span<const double> inputs, const SsmState& x0);

struct Reconstruction {
  std::vector<double> times;   // absolute time in [0, steps_taken*dt], ascending
  std::vector<double> values;
};

/// Decodes the input history held in a StandardLegS state.
///
/// With a fixed step the LegS recurrence runs on an exponential clock: the
/// state holds orthonormal Legendre coefficients of u(T + ln y) for
/// y in (0, 1], where T is the elapsed time. The elapsed window [0, T] maps to
/// y in [e^-T, 1]; samples are spaced uniformly in y, so recent history is
/// sampled more densely than old history.
Reconstruction reconstruct_legendre(const SsmCore& core, const SsmState& state, std::size_t n_points);

}  // namespace sidecar
