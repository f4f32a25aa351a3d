#include "sidecar/hippo.hpp"

#include <algorithm>
#include <cmath>

#include "sidecar/errors.hpp"

namespace sidecar {

std::string_view to_string(HippoVariant v) {
  switch (v) {
    case HippoVariant::PaperEq1:
      return "PaperEq1";
    case HippoVariant::StandardLegS:
      return "StandardLegS";
  }
  return "unknown";
}

HippoVariant parse_hippo_variant(std::string_view name) {
  if (name == "PaperEq1") return HippoVariant::PaperEq1;
  if (name == "StandardLegS") return HippoVariant::StandardLegS;
  throw ContractError("unknown hippo variant '" + std::string(name) + "'");
}

HippoMatrices hippo_matrix(std::size_t n_states, HippoVariant variant) {
  if (n_states == 0) throw ContractError("hippo_matrix: n_states must be >= 1");
  Matrix a(n_states, n_states);
  Vector b(n_states);
  for (std::size_t i = 0; i < n_states; ++i) {
    const double di = static_cast<double>(i);
    if (variant == HippoVariant::PaperEq1) {
      a(i, i) = -(2.0 * di + 1.0);
      for (std::size_t j = 0; j < i; ++j) a(i, j) = -1.0;
      b[i] = 1.0;
    } else {
      a(i, i) = -(di + 1.0);
      for (std::size_t j = 0; j < i; ++j) {
        a(i, j) = -std::sqrt(2.0 * di + 1.0) * std::sqrt(2.0 * static_cast<double>(j) + 1.0);
      }
      b[i] = std::sqrt(2.0 * di + 1.0);
    }
  }
  return {std::move(a), std::move(b)};
}

HippoMatrices discretize_bilinear(const Matrix& a, const Vector& b, double dt) {
  if (a.rows() != a.cols()) throw DimensionError("discretize_bilinear: A must be square");
  if (b.size() != a.rows()) throw DimensionError("discretize_bilinear: B length does not match A");
  if (!(dt > 0.0) || !std::isfinite(dt)) throw ContractError("discretize_bilinear: dt must be positive");

  const std::size_t n = a.rows();
  const double half = dt / 2.0;
  Matrix lhs(n, n);
  Matrix rhs(n, n + 1);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double eye = (i == j) ? 1.0 : 0.0;
      lhs(i, j) = eye - half * a(i, j);
      rhs(i, j) = eye + half * a(i, j);
    }
    rhs(i, n) = dt * b[i];
  }

  const Matrix solved = is_lower_triangular(a) ? solve_lower_triangular(lhs, rhs) : solve_linear(lhs, rhs);
  Matrix a_d(n, n);
  Vector b_d(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) a_d(i, j) = solved(i, j);
    b_d[i] = solved(i, n);
  }
  return {std::move(a_d), std::move(b_d)};
}

SsmCore::SsmCore(std::size_t n_states, HippoVariant variant, double dt) : variant_(variant), dt_(dt) {
  auto continuous = hippo_matrix(n_states, variant);
  auto discrete = discretize_bilinear(continuous.a, continuous.b, dt);
  a_continuous_ = std::move(continuous.a);
  b_continuous_ = std::move(continuous.b);
  a_discrete_ = std::move(discrete.a);
  b_discrete_ = std::move(discrete.b);
  for (std::size_t i = 0; i < n_states; ++i) {
    if (std::abs(a_discrete_(i, i)) >= 1.0) throw ContractError("SsmCore: discretized system is not stable");
  }
}

SsmState ssm_step(const SsmCore& core, const SsmState& state, double u) {
  const std::size_t n = core.n_states();
  if (state.x.size() != n) throw DimensionError("ssm_step: state length does not match core");
  const Matrix& a = core.a_discrete();
  const Vector& b = core.b_discrete();
  SsmState next{Vector(n), state.steps_taken + 1};
  for (std::size_t i = 0; i < n; ++i) {
    double acc = b[i] * u;
    // A_d is lower triangular.
    for (std::size_t j = 0; j <= i; ++j) acc += a(i, j) * state.x[j];
    next.x[i] = acc;
  }
  return next;
}

std::vector<SsmState> ssm_scan(const SsmCore& core, std::span<const double> inputs, const SsmState& x0) {
  std::vector<SsmState> out;
  out.reserve(inputs.size());
  const SsmState* prev = &x0;
  for (double u : inputs) {
    out.push_back(ssm_step(core, *prev, u));
    prev = &out.back();
  }
  return out;
}

Reconstruction reconstruct_legendre(const SsmCore& core, const SsmState& state, std::size_t n_points) {
  if (core.variant() != HippoVariant::StandardLegS) {
    throw ContractError("reconstruct_legendre: no decode basis for the PaperEq1 variant");
  }
  if (state.steps_taken == 0) throw ContractError("reconstruct_legendre: state has not consumed any input");
  if (state.x.size() != core.n_states()) throw DimensionError("reconstruct_legendre: state length does not match core");

  const double elapsed = static_cast<double>(state.steps_taken) * core.dt();
  const double y_min = std::exp(-elapsed);
  Reconstruction out;
  out.times.reserve(n_points);
  out.values.reserve(n_points);
  for (std::size_t p = 0; p < n_points; ++p) {
    const double frac = n_points == 1 ? 1.0 : static_cast<double>(p) / static_cast<double>(n_points - 1);
    const double y = y_min + (1.0 - y_min) * frac;
    double value = 0.0;
    for (std::size_t k = 0; k < core.n_states(); ++k) {
      const double norm = std::sqrt(2.0 * static_cast<double>(k) + 1.0);
      value += state.x[k] * norm * std::legendre(static_cast<unsigned>(k), 2.0 * y - 1.0);
    }
    out.times.push_back(std::max(0.0, elapsed + std::log(y)));
    out.values.push_back(value);
  }
  return out;
}

}  // namespace sidecar
