#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sidecar/linalg.hpp"
#include "sidecar/model.hpp"

namespace sidecar {

/// Probability vector; entries >= 0 summing to 1 within 1e-9.
class Distribution {
 public:
  explicit Distribution(std::vector<double> probabilities);

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t i) const { return p_[i]; }
  std::span<const double> values() const { return p_; }

 private:
  std::vector<double> p_;
};

/// -sum p ln q, in nats.
double cross_entropy(const Distribution& p, const Distribution& q);
/// sum p ln(p/q); terms with p = 0 contribute 0.
double kl_divergence(const Distribution& p, const Distribution& q);
double entropy(const Distribution& p);

/// Row softmax with max subtraction.
std::vector<double> softmax(std::span<const double> logits);
std::vector<double> log_softmax(std::span<const double> logits);

/// Mean over rows of -log softmax(logits)[target].
double sequence_lm_loss(const Matrix& logits, std::span<const TokenId> targets);

inline double perplexity(double loss_nats) { return std::exp(loss_nats); }

struct TrainSequence {
  std::vector<TokenId> inputs;
  std::vector<TokenId> targets;
};

/// Next-token pairs; every sequence has inputs.size() == targets.size().
struct TrainBatch {
  std::vector<TrainSequence> sequences;

  std::size_t token_count() const;
};

/// Byte text -> (bytes[0..n-1], bytes[1..n]), truncated to max_seq_len inputs.
TrainSequence sequence_from_bytes(std::string_view text, std::size_t max_seq_len);
TrainBatch batch_from_texts(std::span<const std::string> texts, std::size_t max_seq_len);
void validate_batch(const ModelConfig& config, const TrainBatch& batch);

/// Bundled smoke task: each sequence repeats one byte, so the next token
/// always equals the current one.
std::vector<std::string> copy_task_texts(std::size_t n_sequences = 8, std::size_t length = 24);
TrainBatch copy_task_batch(std::size_t max_seq_len, std::size_t n_sequences = 8, std::size_t length = 24);

/// Token-weighted mean loss over every sequence of the batch.
double batch_loss(const HybridModel& model, const TrainBatch& batch);

struct LossAndGradient {
  double loss = 0.0;
  /// Aligned with trainable_parameters(model), flattened like the values.
  std::vector<std::vector<double>> gradients;
};

LossAndGradient loss_and_gradient(const HybridModel& model, const TrainBatch& batch);

struct GradCheckOptions {
  double step_size = 1e-5;
  double tolerance = 1e-4;
  double absolute_fallback = 1e-8;
  /// Coordinates probed per block with more than one value; 1x1 blocks are
  /// always checked.
  std::size_t samples_per_block = 6;
  std::uint64_t sample_seed = 17;
  /// Multiplies the analytic gradient before comparison. Anything other
  /// than 1.0 is fault injection.
  double gradient_fault_scale = 1.0;
};

struct GradCheckEntry {
  std::string parameter;
  std::size_t index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double abs_error = 0.0;
  double rel_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = false;
  /// Over coordinates outside the absolute fallback, i.e. those the
  /// relative tolerance actually judges.
  double max_rel_error = 0.0;
  /// Failing coordinates; empty when everything passed.
  std::vector<GradCheckEntry> failures;
};

/// Central differences (f(x+h) - f(x-h)) / 2h against the tape gradient of
/// batch_loss. A coordinate passes when its relative error is below the
/// tolerance or its absolute error is below the fallback.
GradCheckReport grad_check(const HybridModel& model, const TrainBatch& batch, const GradCheckOptions& options = {});

struct TrainOptions {
  std::size_t steps = 200;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct TrainReport {
  std::size_t steps = 0;
  std::vector<double> loss_curve;  // batch loss before each update
  double initial_loss = 0.0;       // mean over all batches before training
  double final_loss = 0.0;         // mean over all batches after training
  double perplexity = 0.0;         // exp(final_loss)
};

/// Adam over trainable_parameters only, cycling through the batches one per
/// step. Throws NonFiniteLossError if a loss turns NaN/Inf.
TrainReport train(HybridModel& model, std::span<const TrainBatch> batches, const TrainOptions& options);

}  // namespace sidecar
