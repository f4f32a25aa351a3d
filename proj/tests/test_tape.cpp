#include <doctest.h>

#include <cmath>
#include <functional>

#include "sidecar/errors.hpp"
#include "sidecar/hippo.hpp"
#include "sidecar/tape.hpp"

using namespace sidecar;

namespace {

// Builds a scalar loss from one parameter; returns analytic vs central
// difference worst relative error.
double fd_error(const Matrix& x0, const std::function<NodeId(Tape&, NodeId)>& build) {
  Tape tape;
  const NodeId x = tape.parameter(x0);
  tape.backward(build(tape, x));
  const Matrix g = tape.grad(x);
  double worst = 0.0;
  for (std::size_t i = 0; i < x0.size(); ++i) {
    auto eval = [&](double delta) {
      Matrix xp = x0;
      xp.values()[i] += delta;
      Tape t;
      return t.value(build(t, t.constant(xp)))(0, 0);
    };
    const double h = 1e-6;
    const double numeric = (eval(h) - eval(-h)) / (2 * h);
    const double analytic = g.size() ? g.values()[i] : 0.0;
    const double denom = std::max({std::abs(numeric), std::abs(analytic), 1e-6});
    worst = std::max(worst, std::abs(numeric - analytic) / denom);
  }
  return worst;
}

// Weighted sum of all entries so every output coordinate matters.
NodeId weighted_sum(Tape& t, NodeId y) {
  const Matrix& v = t.value(y);
  Matrix w(v.cols(), 1);
  for (std::size_t i = 0; i < w.rows(); ++i) w(i, 0) = 0.3 + 0.1 * static_cast<double>(i);
  Matrix ones(1, v.rows(), 1.0);
  return t.matmul(t.constant(ones), t.matmul(y, t.constant(w)));
}

const Matrix kX{{0.3, -1.2, 0.8}, {1.1, 0.4, -0.6}, {-0.2, 0.9, 0.5}};

}  // namespace

TEST_CASE("tape ops match finite differences") {
  const Matrix w{{0.5, -0.3, 0.2}, {0.1, 0.7, -0.4}};
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) { return weighted_sum(t, t.matmul_bt(x, t.constant(w))); }) < 1e-7);
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) { return weighted_sum(t, t.silu(x)); }) < 1e-7);
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) {
          return weighted_sum(t, t.rms_norm(x, t.constant(Matrix{{1.0, 0.5, 2.0}})));
        }) < 1e-7);
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) { return weighted_sum(t, t.causal_softmax(x)); }) < 1e-7);
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) {
          const NodeId parts[] = {t.slice_cols(x, 1, 2), t.scale(x, -0.7)};
          return weighted_sum(t, t.concat_cols(parts));
        }) < 1e-7);
  CHECK(fd_error(kX, [&](Tape& t, NodeId x) {
          return t.lm_loss(t.add(x, t.scale(x, 2.0)), std::vector<std::uint32_t>{2, 0, 1});
        }) < 1e-7);
  CHECK(fd_error(Matrix{{0.7}}, [&](Tape& t, NodeId s) { return weighted_sum(t, t.scalar_mul(s, t.constant(kX))); }) <
        1e-7);
}

TEST_CASE("ssm_readout backward matches finite differences in both inputs") {
  const SsmCore core(4, HippoVariant::PaperEq1, 1.0);
  const Matrix c_out{{0.2, -0.1, 0.4, 0.3}, {-0.5, 0.6, 0.1, 0.2}, {0.3, 0.3, -0.2, 0.1}};
  CHECK(fd_error(kX, [&](Tape& t, NodeId u) { return weighted_sum(t, t.ssm_readout(u, core, t.constant(c_out))); }) <
        1e-7);
  CHECK(fd_error(c_out, [&](Tape& t, NodeId c) { return weighted_sum(t, t.ssm_readout(t.constant(kX), core, c)); }) <
        1e-7);
}

TEST_CASE("ssm_readout forward agrees with ssm_scan") {
  const SsmCore core(5, HippoVariant::StandardLegS, 0.3);
  Matrix u(6, 1);
  std::vector<double> seq(6);
  for (std::size_t k = 0; k < 6; ++k) u(k, 0) = seq[k] = std::sin(static_cast<double>(k));
  Matrix c(1, 5);
  c(0, 3) = 1.0;
  Tape t;
  const Matrix y = t.value(t.ssm_readout(t.constant(u), core, t.constant(c)));
  const auto states = ssm_scan(core, seq, SsmState::zeros(core));
  for (std::size_t k = 0; k < 6; ++k) CHECK(y(k, 0) == doctest::Approx(states[k].x[3]).epsilon(1e-14));
}

TEST_CASE("causal_softmax masks the future exactly") {
  Tape t;
  const Matrix p = t.value(t.causal_softmax(t.constant(kX)));
  CHECK(p(0, 1) == 0.0);
  CHECK(p(0, 2) == 0.0);
  CHECK(p(1, 2) == 0.0);
  CHECK(p(0, 0) == 1.0);
}

TEST_CASE("constants record no gradient and shape errors are raised") {
  Tape t;
  const NodeId a = t.constant(kX);
  const NodeId b = t.silu(a);
  CHECK_FALSE(t.requires_grad(b));
  CHECK_THROWS_AS(t.backward(b), DimensionError);
  CHECK_THROWS_AS(t.add(a, t.constant(Matrix(2, 2))), DimensionError);
  CHECK_THROWS_AS(t.matmul_bt(a, t.constant(Matrix(2, 2))), DimensionError);
}
