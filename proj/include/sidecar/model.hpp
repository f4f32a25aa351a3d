#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "sidecar/hippo.hpp"
#include "sidecar/linalg.hpp"
#include "sidecar/tape.hpp"

namespace sidecar {

using TokenId = std::uint32_t;

/// Projections a LoRA adapter may wrap, per backbone layer.
inline const std::set<std::string>& lora_target_names() {
  static const std::set<std::string> names{"q", "k", "v", "o", "up", "down"};
  return names;
}

/// Desk-scale defaults: byte vocabulary, 4 layers with side-cars at 1 and 3,
/// LoRA r=4, alpha=8 (alpha/r = 2).
struct ModelConfig {
  std::size_t vocab_size = 256;
  std::size_t d_model = 64;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t max_seq_len = 128;
  std::set<std::size_t> sidecar_layers{1, 3};
  std::size_t ssm_channels = 16;
  std::size_t n_states = 16;
  double dt = 1.0;
  HippoVariant hippo_variant = HippoVariant::PaperEq1;
  std::size_t lora_rank = 4;
  double lora_alpha = 8.0;
  std::set<std::string> lora_targets{"q", "v"};
  std::uint64_t seed = 1;

  std::size_t d_ff() const { return 4 * d_model; }
  std::size_t head_dim() const { return d_model / n_heads; }

  bool operator==(const ModelConfig&) const = default;
};

/// Throws ConfigError naming the first violated invariant.
void validate_config(const ModelConfig& config);

struct BackboneLayer {
  Matrix attn_norm;  // 1 x d_model
  Matrix wq, wk, wv, wo;  // d_model x d_model, stored (out x in)
  Matrix mlp_norm;  // 1 x d_model
  Matrix w_up;  // d_ff x d_model
  Matrix w_down;  // d_model x d_ff
};

/// Frozen donor. Held through shared_ptr<const Backbone> so model copies
/// share it and nothing can write to it.
struct Backbone {
  Matrix embedding;  // vocab x d_model, tied to the output head
  std::vector<BackboneLayer> layers;
  Matrix final_norm;  // 1 x d_model
};

/// Parallel SSM branch at one layer:
/// h_out = layer(h) + gate * w_out(readout(ssm(w_in h))).
struct SidecarBlock {
  std::size_t layer_index = 0;
  Matrix w_in;   // channels x d_model
  std::shared_ptr<const SsmCore> core;
  Matrix c_out;  // channels x n_states
  Matrix w_out;  // d_model x channels
  double gate = 0.0;
};

/// y = x W^T + (alpha/r) (x A^T) B^T.
struct LoraAdapter {
  std::size_t layer_index = 0;
  std::string target;
  Matrix a;  // rank x d_in
  Matrix b;  // d_out x rank, zero at init
  std::size_t rank = 1;
  double alpha = 1.0;

  double scaling() const { return alpha / static_cast<double>(rank); }
};

struct TrainableMask {
  bool gates = true;
  bool ssm_projections = false;
  bool lora = true;

  bool empty() const { return !gates && !ssm_projections && !lora; }
  bool operator==(const TrainableMask&) const = default;
};

/// Parses a comma-separated subset of {gates, ssm_projections, lora}.
TrainableMask parse_trainable_mask(const std::string& text);
std::vector<std::string> mask_names(const TrainableMask& mask);

/// Initial values of each auditable parameter group, captured at init and
/// persisted with the model: "gates" holds each side-car gate, "lora_b" the
/// max |b| of each adapter.
using InitRecords = std::map<std::string, std::vector<double>>;

struct HybridModel {
  ModelConfig config;
  std::shared_ptr<const Backbone> backbone;
  std::vector<SidecarBlock> sidecars;
  std::vector<LoraAdapter> adapters;
  TrainableMask trainable_mask;
  InitRecords init_records;
};

struct InitOptions {
  TrainableMask mask{};
  /// One value per side-car; replaces the zero gate init. Used to build the
  /// mis-initialized models the gate auditor is meant to catch.
  std::optional<std::vector<double>> gate_init;
};

Backbone init_backbone(const ModelConfig& config);
HybridModel init_model(const ModelConfig& config, const InitOptions& options = {});

/// Rejects empty, overlong, or out-of-vocabulary sequences.
void validate_tokens(const ModelConfig& config, std::span<const TokenId> tokens);

/// seq_len x vocab logits of the full hybrid model.
Matrix forward(const HybridModel& model, std::span<const TokenId> tokens);
/// Same backbone with every side-car and adapter removed.
Matrix backbone_forward(const HybridModel& model, std::span<const TokenId> tokens);

/// Elementwise h_t + alpha * h_ssm.
Vector apply_gate_blend(const Vector& h_t, const Vector& h_ssm, double alpha);

struct NamedValues {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;
};

/// Writable view of one parameter block, valid while the model is alive and
/// its containers are not resized.
struct ParameterView {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::span<double> values;
};

/// Parameters enabled by the mask, ordered side-car by side-car
/// (gate, w_in, c_out, w_out) then adapter by adapter (a, b). Never backbone.
std::vector<NamedValues> trainable_parameters(const HybridModel& model);
std::vector<ParameterView> trainable_views(HybridModel& model);
/// Every side-car and adapter block regardless of mask, same ordering.
std::vector<NamedValues> extension_parameters(const HybridModel& model);
std::vector<ParameterView> extension_views(HybridModel& model);
std::vector<NamedValues> backbone_parameters(const Backbone& backbone);

std::size_t count_values(const std::vector<NamedValues>& params);

struct RecordedForward {
  NodeId logits = 0;
  /// Aligned with trainable_parameters(model); empty unless gradients tracked.
  std::vector<NodeId> trainable_nodes;
};

/// Records the hybrid forward pass on a tape. With track_gradients, masked-in
/// parameters become tape parameters; everything else is constant. The tape
/// refers to the model's SSM cores, so the model must outlive it.
RecordedForward record_forward(Tape& tape, const HybridModel& model, std::span<const TokenId> tokens,
                               bool track_gradients);

}  // namespace sidecar
