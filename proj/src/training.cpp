#include "sidecar/training.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>

#include "sidecar/errors.hpp"

namespace sidecar {
namespace {

// A log term with q below this raises instead of returning Inf.
constexpr double kMinProbability = 1e-300;

void require_same_support(const Distribution& p, const Distribution& q, const char* op) {
  if (p.size() != q.size()) throw DimensionError(std::string(op) + ": distributions differ in length");
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0 && q[i] < kMinProbability) {
      std::ostringstream os;
      os << op << ": p[" << i << "] = " << p[i] << " where q[" << i << "] = " << q[i] << " (infinite loss)";
      throw InfiniteLossError(os.str());
    }
  }
}

double parameter_norm(std::span<const double> values) {
  double ss = 0.0;
  for (double v : values) ss += v * v;
  return std::sqrt(ss);
}

[[noreturn]] void abort_non_finite(HybridModel& model, std::size_t step, double loss) {
  std::ostringstream os;
  os << "non-finite loss " << loss << " at step " << step << "; parameter norms:";
  for (const auto& view : trainable_views(model)) os << " " << view.name << "=" << parameter_norm(view.values);
  throw NonFiniteLossError(os.str());
}

}  // namespace

Distribution::Distribution(std::vector<double> probabilities) : p_(std::move(probabilities)) {
  double total = 0.0;
  for (double v : p_) {
    if (!(v >= 0.0) || !std::isfinite(v)) throw ContractError("Distribution: entries must be finite and >= 0");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ContractError("Distribution: entries must sum to 1");
}

double cross_entropy(const Distribution& p, const Distribution& q) {
  require_same_support(p, q, "cross_entropy");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total -= p[i] * std::log(q[i]);
  }
  return total;
}

double kl_divergence(const Distribution& p, const Distribution& q) {
  require_same_support(p, q, "kl_divergence");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) total += p[i] * std::log(p[i] / q[i]);
  }
  return total;
}

double entropy(const Distribution& p) {
  double total = 0.0;
  for (double v : p.values()) {
    if (v > 0.0) total -= v * std::log(v);
  }
  return total;
}

std::vector<double> log_softmax(std::span<const double> logits) {
  if (logits.empty()) throw DimensionError("log_softmax: empty input");
  const double peak = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (double z : logits) sum += std::exp(z - peak);
  const double log_norm = peak + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) out[i] = logits[i] - log_norm;
  return out;
}

std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (double& v : out) v = std::exp(v);
  return out;
}

double sequence_lm_loss(const Matrix& logits, std::span<const TokenId> targets) {
  if (logits.rows() != targets.size()) throw DimensionError("sequence_lm_loss: logits rows do not match targets");
  if (targets.empty()) throw DimensionError("sequence_lm_loss: no positions");
  double total = 0.0;
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    if (targets[r] >= logits.cols()) throw ContractError("sequence_lm_loss: target id out of range");
    total -= log_softmax(logits.row(r))[targets[r]];
  }
  return total / static_cast<double>(targets.size());
}

std::size_t TrainBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& s : sequences) n += s.targets.size();
  return n;
}

TrainSequence sequence_from_bytes(std::string_view text, std::size_t max_seq_len) {
  if (text.size() < 2) throw ContractError("training text needs at least 2 bytes");
  const std::size_t n = std::min(text.size() - 1, max_seq_len);
  TrainSequence seq;
  seq.inputs.reserve(n);
  seq.targets.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    seq.inputs.push_back(static_cast<unsigned char>(text[i]));
    seq.targets.push_back(static_cast<unsigned char>(text[i + 1]));
  }
  return seq;
}

TrainBatch batch_from_texts(std::span<const std::string> texts, std::size_t max_seq_len) {
  TrainBatch batch;
  for (const auto& text : texts) batch.sequences.push_back(sequence_from_bytes(text, max_seq_len));
  return batch;
}

void validate_batch(const ModelConfig& config, const TrainBatch& batch) {
  if (batch.sequences.empty()) throw ContractError("training batch is empty");
  for (const auto& seq : batch.sequences) {
    if (seq.inputs.size() != seq.targets.size()) throw DimensionError("input/target lengths differ");
    validate_tokens(config, seq.inputs);
    for (TokenId t : seq.targets) {
      if (t >= config.vocab_size) throw ContractError("target id " + std::to_string(t) + " out of vocabulary");
    }
  }
}

std::vector<std::string> copy_task_texts(std::size_t n_sequences, std::size_t length) {
  std::vector<std::string> texts;
  texts.reserve(n_sequences);
  for (std::size_t i = 0; i < n_sequences; ++i) {
    texts.emplace_back(length, static_cast<char>('a' + (i % 26)));
  }
  return texts;
}

TrainBatch copy_task_batch(std::size_t max_seq_len, std::size_t n_sequences, std::size_t length) {
  const auto texts = copy_task_texts(n_sequences, length);
  return batch_from_texts(texts, max_seq_len);
}

double batch_loss(const HybridModel& model, const TrainBatch& batch) {
  validate_batch(model.config, batch);
  double total = 0.0;
  for (const auto& seq : batch.sequences) {
    total += sequence_lm_loss(forward(model, seq.inputs), seq.targets) * static_cast<double>(seq.targets.size());
  }
  return total / static_cast<double>(batch.token_count());
}

LossAndGradient loss_and_gradient(const HybridModel& model, const TrainBatch& batch) {
  validate_batch(model.config, batch);
  const auto params = trainable_parameters(model);
  LossAndGradient out;
  out.gradients.reserve(params.size());
  for (const auto& p : params) out.gradients.emplace_back(p.values.size(), 0.0);

  const double inv_tokens = 1.0 / static_cast<double>(batch.token_count());
  for (const auto& seq : batch.sequences) {
    Tape tape;
    const RecordedForward rec = record_forward(tape, model, seq.inputs, true);
    const NodeId loss = tape.lm_loss(rec.logits, seq.targets);
    // Token-weighted share of this sequence in the batch mean.
    const double weight = static_cast<double>(seq.targets.size()) * inv_tokens;
    const NodeId weighted = tape.scale(loss, weight);
    tape.backward(weighted);
    out.loss += tape.value(weighted)(0, 0);
    for (std::size_t i = 0; i < rec.trainable_nodes.size(); ++i) {
      const Matrix& g = tape.grad(rec.trainable_nodes[i]);
      if (g.size() == 0) continue;
      auto& dst = out.gradients[i];
      for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += g.values()[k];
    }
  }
  return out;
}

GradCheckReport grad_check(const HybridModel& model, const TrainBatch& batch, const GradCheckOptions& options) {
  const auto params = trainable_parameters(model);
  if (params.empty()) throw ContractError("grad_check: model has no trainable parameters");

  const LossAndGradient analytic = loss_and_gradient(model, batch);
  HybridModel probe = model;
  auto views = trainable_views(probe);
  SeededRng rng(options.sample_seed);

  GradCheckReport report;
  for (std::size_t b = 0; b < views.size(); ++b) {
    auto& view = views[b];
    const std::size_t n = view.values.size();
    std::vector<std::size_t> coords;
    if (n <= options.samples_per_block) {
      coords.resize(n);
      std::iota(coords.begin(), coords.end(), 0);
    } else {
      std::set<std::size_t> picked;
      while (picked.size() < options.samples_per_block) picked.insert(rng.next_u64() % n);
      coords.assign(picked.begin(), picked.end());
    }
    for (std::size_t idx : coords) {
      const double original = view.values[idx];
      view.values[idx] = original + options.step_size;
      const double up = batch_loss(probe, batch);
      view.values[idx] = original - options.step_size;
      const double down = batch_loss(probe, batch);
      view.values[idx] = original;

      GradCheckEntry e;
      e.parameter = view.name;
      e.index = idx;
      e.analytic = analytic.gradients[b][idx] * options.gradient_fault_scale;
      e.numeric = (up - down) / (2.0 * options.step_size);
      e.abs_error = std::abs(e.analytic - e.numeric);
      const double scale = std::max(std::abs(e.analytic), std::abs(e.numeric));
      e.rel_error = scale > 0.0 ? e.abs_error / scale : 0.0;
      e.passed = e.rel_error < options.tolerance || e.abs_error < options.absolute_fallback;
      if (e.abs_error >= options.absolute_fallback) report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
      if (!e.passed) report.failures.push_back(e);
      report.entries.push_back(std::move(e));
    }
  }
  report.passed = report.failures.empty();
  return report;
}

TrainReport train(HybridModel& model, std::span<const TrainBatch> batches, const TrainOptions& options) {
  if (model.trainable_mask.empty()) throw ContractError("train: trainable mask is empty");
  if (options.steps == 0) throw ContractError("train: steps must be >= 1");
  if (batches.empty()) throw ContractError("train: no training batches");
  if (trainable_parameters(model).empty()) throw ContractError("train: model has no trainable parameters");

  auto mean_loss = [&] {
    double total = 0.0;
    for (const auto& b : batches) total += batch_loss(model, b);
    return total / static_cast<double>(batches.size());
  };

  TrainReport report;
  report.initial_loss = mean_loss();
  if (!std::isfinite(report.initial_loss)) abort_non_finite(model, 0, report.initial_loss);

  auto views = trainable_views(model);
  std::vector<std::vector<double>> m(views.size()), v(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    m[i].assign(views[i].values.size(), 0.0);
    v[i].assign(views[i].values.size(), 0.0);
  }

  for (std::size_t step = 0; step < options.steps; ++step) {
    const TrainBatch& batch = batches[step % batches.size()];
    const LossAndGradient lg = loss_and_gradient(model, batch);
    if (!std::isfinite(lg.loss)) abort_non_finite(model, step, lg.loss);
    report.loss_curve.push_back(lg.loss);

    const double t = static_cast<double>(step + 1);
    const double correction1 = 1.0 - std::pow(options.beta1, t);
    const double correction2 = 1.0 - std::pow(options.beta2, t);
    for (std::size_t i = 0; i < views.size(); ++i) {
      auto values = views[i].values;
      const auto& g = lg.gradients[i];
      for (std::size_t k = 0; k < values.size(); ++k) {
        m[i][k] = options.beta1 * m[i][k] + (1.0 - options.beta1) * g[k];
        v[i][k] = options.beta2 * v[i][k] + (1.0 - options.beta2) * g[k] * g[k];
        const double m_hat = m[i][k] / correction1;
        const double v_hat = v[i][k] / correction2;
        values[k] -= options.lr * m_hat / (std::sqrt(v_hat) + options.epsilon);
      }
    }
  }

  report.steps = options.steps;
  report.final_loss = mean_loss();
  if (!std::isfinite(report.final_loss)) abort_non_finite(model, options.steps, report.final_loss);
  report.perplexity = perplexity(report.final_loss);
  return report;
}

}  // namespace sidecar
