#include "sidecar/tape.hpp"

#include <algorithm>
#include <cmath>

#include "sidecar/errors.hpp"

namespace sidecar {
namespace {

void require_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw DimensionError(std::string(op) + ": shape mismatch");
  }
}

Matrix matmul_transposed_rhs(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) throw DimensionError("matmul_bt: inner dimensions differ");
  Matrix out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto a_row = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto b_row = b.row(j);
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a_row[k] * b_row[k];
      out(i, j) = acc;
    }
  }
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

NodeId Tape::push(Matrix value, bool requires_grad) {
  nodes_.push_back(Node{std::move(value), Matrix(), requires_grad, nullptr});
  return nodes_.size() - 1;
}

NodeId Tape::constant(Matrix value) { return push(std::move(value), false); }

NodeId Tape::parameter(Matrix value) { return push(std::move(value), true); }

bool Tape::any_requires(std::initializer_list<NodeId> ids) const {
  return std::any_of(ids.begin(), ids.end(), [this](NodeId id) { return nodes_[id].requires_grad; });
}

void Tape::accumulate(NodeId id, const Matrix& g) {
  Node& node = nodes_[id];
  if (!node.requires_grad) return;
  if (node.grad.size() == 0) {
    node.grad = g;
    return;
  }
  auto dst = node.grad.values();
  auto src = g.values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

NodeId Tape::matmul(NodeId a, NodeId b) {
  const NodeId out = push(sidecar::matmul(value(a), value(b)), any_requires({a, b}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, a, b, out] {
      const Matrix& g = nodes_[out].grad;
      if (requires_grad(a)) accumulate(a, matmul_transposed_rhs(g, value(b)));
      if (requires_grad(b)) accumulate(b, sidecar::matmul(value(a).transposed(), g));
    };
  }
  return out;
}

NodeId Tape::matmul_bt(NodeId a, NodeId b) {
  const NodeId out = push(matmul_transposed_rhs(value(a), value(b)), any_requires({a, b}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, a, b, out] {
      const Matrix& g = nodes_[out].grad;
      if (requires_grad(a)) accumulate(a, sidecar::matmul(g, value(b)));
      if (requires_grad(b)) accumulate(b, sidecar::matmul(g.transposed(), value(a)));
    };
  }
  return out;
}

NodeId Tape::add(NodeId a, NodeId b) {
  require_same_shape(value(a), value(b), "add");
  Matrix sum = value(a);
  auto dst = sum.values();
  auto src = value(b).values();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
  const NodeId out = push(std::move(sum), any_requires({a, b}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, a, b, out] {
      const Matrix g = nodes_[out].grad;
      accumulate(a, g);
      accumulate(b, g);
    };
  }
  return out;
}

NodeId Tape::scale(NodeId a, double factor) {
  Matrix scaled = value(a);
  for (double& v : scaled.values()) v *= factor;
  const NodeId out = push(std::move(scaled), requires_grad(a));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, a, out, factor] {
      Matrix g = nodes_[out].grad;
      for (double& v : g.values()) v *= factor;
      accumulate(a, g);
    };
  }
  return out;
}

NodeId Tape::scalar_mul(NodeId s, NodeId a) {
  if (value(s).rows() != 1 || value(s).cols() != 1) throw DimensionError("scalar_mul: scale must be 1x1");
  const double factor = value(s)(0, 0);
  Matrix scaled = value(a);
  for (double& v : scaled.values()) v *= factor;
  const NodeId out = push(std::move(scaled), any_requires({s, a}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, s, a, out] {
      const Matrix& g = nodes_[out].grad;
      if (requires_grad(s)) {
        double acc = 0.0;
        auto gv = g.values();
        auto av = value(a).values();
        for (std::size_t i = 0; i < gv.size(); ++i) acc += gv[i] * av[i];
        accumulate(s, Matrix(1, 1, acc));
      }
      if (requires_grad(a)) {
        Matrix da = g;
        const double factor = value(s)(0, 0);
        for (double& v : da.values()) v *= factor;
        accumulate(a, da);
      }
    };
  }
  return out;
}

NodeId Tape::rms_norm(NodeId x, NodeId weight, double eps) {
  const Matrix& xv = value(x);
  const Matrix& w = value(weight);
  if (w.rows() != 1 || w.cols() != xv.cols()) throw DimensionError("rms_norm: weight must be 1 x cols");
  const std::size_t d = xv.cols();
  Matrix y(xv.rows(), d);
  std::vector<double> inv_rms(xv.rows());
  for (std::size_t r = 0; r < xv.rows(); ++r) {
    double ss = 0.0;
    for (double v : xv.row(r)) ss += v * v;
    inv_rms[r] = 1.0 / std::sqrt(ss / static_cast<double>(d) + eps);
    for (std::size_t c = 0; c < d; ++c) y(r, c) = xv(r, c) * inv_rms[r] * w(0, c);
  }
  const NodeId out = push(std::move(y), any_requires({x, weight}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, x, weight, out, inv_rms = std::move(inv_rms)] {
      const Matrix& g = nodes_[out].grad;
      const Matrix& xv = value(x);
      const Matrix& w = value(weight);
      const std::size_t d = xv.cols();
      Matrix dx(xv.rows(), d);
      Matrix dw(1, d);
      for (std::size_t r = 0; r < xv.rows(); ++r) {
        const double s = inv_rms[r];
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += g(r, c) * w(0, c) * xv(r, c);
        const double coeff = dot * s * s * s / static_cast<double>(d);
        for (std::size_t c = 0; c < d; ++c) {
          dx(r, c) = g(r, c) * w(0, c) * s - xv(r, c) * coeff;
          dw(0, c) += g(r, c) * xv(r, c) * s;
        }
      }
      if (requires_grad(x)) accumulate(x, dx);
      if (requires_grad(weight)) accumulate(weight, dw);
    };
  }
  return out;
}

NodeId Tape::silu(NodeId x) {
  Matrix y = value(x);
  for (double& v : y.values()) v = v * sigmoid(v);
  const NodeId out = push(std::move(y), requires_grad(x));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, x, out] {
      Matrix dx = nodes_[out].grad;
      auto xv = value(x).values();
      auto dv = dx.values();
      for (std::size_t i = 0; i < dv.size(); ++i) {
        const double s = sigmoid(xv[i]);
        dv[i] *= s * (1.0 + xv[i] * (1.0 - s));
      }
      accumulate(x, dx);
    };
  }
  return out;
}

NodeId Tape::causal_softmax(NodeId scores) {
  const Matrix& s = value(scores);
  if (s.rows() > s.cols()) throw DimensionError("causal_softmax: more rows than columns");
  Matrix p(s.rows(), s.cols());
  for (std::size_t i = 0; i < s.rows(); ++i) {
    double peak = s(i, 0);
    for (std::size_t j = 1; j <= i; ++j) peak = std::max(peak, s(i, j));
    double total = 0.0;
    for (std::size_t j = 0; j <= i; ++j) {
      p(i, j) = std::exp(s(i, j) - peak);
      total += p(i, j);
    }
    for (std::size_t j = 0; j <= i; ++j) p(i, j) /= total;
  }
  const NodeId out = push(std::move(p), requires_grad(scores));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, scores, out] {
      const Matrix& g = nodes_[out].grad;
      const Matrix& p = value(out);
      Matrix ds(p.rows(), p.cols());
      for (std::size_t i = 0; i < p.rows(); ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j <= i; ++j) dot += p(i, j) * g(i, j);
        for (std::size_t j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (g(i, j) - dot);
      }
      accumulate(scores, ds);
    };
  }
  return out;
}

NodeId Tape::slice_cols(NodeId x, std::size_t begin, std::size_t count) {
  const Matrix& xv = value(x);
  if (begin + count > xv.cols()) throw DimensionError("slice_cols: range out of bounds");
  Matrix y(xv.rows(), count);
  for (std::size_t r = 0; r < xv.rows(); ++r)
    for (std::size_t c = 0; c < count; ++c) y(r, c) = xv(r, begin + c);
  const NodeId out = push(std::move(y), requires_grad(x));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, x, out, begin, count] {
      const Matrix& g = nodes_[out].grad;
      Matrix dx(value(x).rows(), value(x).cols());
      for (std::size_t r = 0; r < g.rows(); ++r)
        for (std::size_t c = 0; c < count; ++c) dx(r, begin + c) = g(r, c);
      accumulate(x, dx);
    };
  }
  return out;
}

NodeId Tape::concat_cols(std::span<const NodeId> parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no parts");
  const std::size_t rows = value(parts.front()).rows();
  std::size_t cols = 0;
  bool needs_grad = false;
  for (NodeId p : parts) {
    if (value(p).rows() != rows) throw DimensionError("concat_cols: row counts differ");
    cols += value(p).cols();
    needs_grad = needs_grad || requires_grad(p);
  }
  Matrix y(rows, cols);
  std::size_t offset = 0;
  for (NodeId p : parts) {
    const Matrix& pv = value(p);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < pv.cols(); ++c) y(r, offset + c) = pv(r, c);
    offset += pv.cols();
  }
  const NodeId out = push(std::move(y), needs_grad);
  if (needs_grad) {
    nodes_[out].backward = [this, out, ids = std::vector<NodeId>(parts.begin(), parts.end())] {
      const Matrix& g = nodes_[out].grad;
      std::size_t offset = 0;
      for (NodeId p : ids) {
        const std::size_t width = value(p).cols();
        if (requires_grad(p)) {
          Matrix dp(g.rows(), width);
          for (std::size_t r = 0; r < g.rows(); ++r)
            for (std::size_t c = 0; c < width; ++c) dp(r, c) = g(r, offset + c);
          accumulate(p, dp);
        }
        offset += width;
      }
    };
  }
  return out;
}

NodeId Tape::ssm_readout(NodeId u, const SsmCore& core, NodeId c_out) {
  const Matrix& uv = value(u);
  const Matrix& cv = value(c_out);
  const std::size_t steps = uv.rows();
  const std::size_t channels = uv.cols();
  const std::size_t n = core.n_states();
  if (cv.rows() != channels || cv.cols() != n) throw DimensionError("ssm_readout: c_out must be channels x n_states");

  // states[c] is steps x n: the trajectory of channel c.
  std::vector<Matrix> states(channels, Matrix(steps, n));
  Matrix y(steps, channels);
  const Matrix& a = core.a_discrete();
  const Vector& b = core.b_discrete();
  for (std::size_t c = 0; c < channels; ++c) {
    Matrix& x = states[c];
    for (std::size_t t = 0; t < steps; ++t) {
      double readout = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        double acc = b[i] * uv(t, c);
        if (t > 0) {
          for (std::size_t j = 0; j <= i; ++j) acc += a(i, j) * x(t - 1, j);
        }
        x(t, i) = acc;
        readout += cv(c, i) * acc;
      }
      y(t, c) = readout;
    }
  }

  const NodeId out = push(std::move(y), any_requires({u, c_out}));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, u, c_out, out, &core, states = std::move(states)] {
      const Matrix& g = nodes_[out].grad;
      const Matrix& cv = value(c_out);
      const Matrix& a = core.a_discrete();
      const Vector& b = core.b_discrete();
      const std::size_t steps = g.rows();
      const std::size_t channels = g.cols();
      const std::size_t n = core.n_states();
      Matrix du(steps, channels);
      Matrix dc(channels, n);
      std::vector<double> adjoint(n), carried(n);
      for (std::size_t c = 0; c < channels; ++c) {
        std::fill(carried.begin(), carried.end(), 0.0);
        for (std::size_t t = steps; t-- > 0;) {
          // adjoint = g(t,c) * c_row + A_d^T * adjoint(t+1)
          for (std::size_t i = 0; i < n; ++i) adjoint[i] = g(t, c) * cv(c, i) + carried[i];
          double du_t = 0.0;
          for (std::size_t i = 0; i < n; ++i) {
            du_t += b[i] * adjoint[i];
            dc(c, i) += g(t, c) * states[c](t, i);
          }
          du(t, c) = du_t;
          std::fill(carried.begin(), carried.end(), 0.0);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j <= i; ++j) carried[j] += a(i, j) * adjoint[i];
        }
      }
      if (requires_grad(u)) accumulate(u, du);
      if (requires_grad(c_out)) accumulate(c_out, dc);
    };
  }
  return out;
}

NodeId Tape::lm_loss(NodeId logits, std::span<const std::uint32_t> targets) {
  const Matrix& z = value(logits);
  if (z.rows() != targets.size()) throw DimensionError("lm_loss: logits rows do not match target count");
  if (z.rows() == 0) throw DimensionError("lm_loss: no positions");
  const double inv_count = 1.0 / static_cast<double>(z.rows());
  Matrix probs(z.rows(), z.cols());
  double total = 0.0;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    if (targets[r] >= z.cols()) throw ContractError("lm_loss: target id out of range");
    double peak = z(r, 0);
    for (double v : z.row(r)) peak = std::max(peak, v);
    double sum = 0.0;
    for (std::size_t c = 0; c < z.cols(); ++c) {
      probs(r, c) = std::exp(z(r, c) - peak);
      sum += probs(r, c);
    }
    for (std::size_t c = 0; c < z.cols(); ++c) probs(r, c) /= sum;
    total += (peak + std::log(sum)) - z(r, targets[r]);
  }
  const NodeId out = push(Matrix(1, 1, total * inv_count), requires_grad(logits));
  if (nodes_[out].requires_grad) {
    nodes_[out].backward = [this, logits, out, inv_count, probs = std::move(probs),
                            targets = std::vector<std::uint32_t>(targets.begin(), targets.end())] {
      const double g = nodes_[out].grad(0, 0);
      Matrix dz = probs;
      for (std::size_t r = 0; r < dz.rows(); ++r) {
        dz(r, targets[r]) -= 1.0;
        for (double& v : dz.row(r)) v *= g * inv_count;
      }
      accumulate(logits, dz);
    };
  }
  return out;
}

void Tape::backward(NodeId root) {
  if (value(root).rows() != 1 || value(root).cols() != 1) throw DimensionError("backward: root must be 1x1");
  for (Node& node : nodes_) node.grad = Matrix();
  if (!nodes_[root].requires_grad) return;
  nodes_[root].grad = Matrix(1, 1, 1.0);
  for (std::size_t id = root + 1; id-- > 0;) {
    Node& node = nodes_[id];
    if (node.backward && node.grad.size() != 0) node.backward();
  }
}

}  // namespace sidecar
