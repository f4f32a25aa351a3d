#include "sidecar/model.hpp"

#include <cmath>
#include <sstream>
#include <type_traits>

#include "sidecar/errors.hpp"

namespace sidecar {
namespace {

constexpr double kExtensionInitScale = 0.02;
constexpr double kEmbeddingScale = 0.3;
constexpr double kPositionScale = 0.1;

// RNG stream ids; the backbone stream does not depend on any extension
// setting, so the donor is a function of (dims, seed) only.
constexpr std::uint64_t kBackboneStream = 1;
constexpr std::uint64_t kSidecarStreamBase = 1000;
constexpr std::uint64_t kLoraStreamBase = 2000;

std::size_t target_index(const std::string& target) {
  std::size_t i = 0;
  for (const auto& name : lora_target_names()) {
    if (name == target) return i;
    ++i;
  }
  throw ConfigError("unknown LoRA target '" + target + "'");
}

const Matrix& target_weight(const BackboneLayer& layer, const std::string& target) {
  if (target == "q") return layer.wq;
  if (target == "k") return layer.wk;
  if (target == "v") return layer.wv;
  if (target == "o") return layer.wo;
  if (target == "up") return layer.w_up;
  if (target == "down") return layer.w_down;
  throw ConfigError("unknown LoRA target '" + target + "'");
}

Matrix ones_row(std::size_t n) { return Matrix(1, n, 1.0); }

Matrix sinusoidal_positions(std::size_t seq_len, std::size_t d_model) {
  Matrix pos(seq_len, d_model);
  for (std::size_t t = 0; t < seq_len; ++t) {
    for (std::size_t i = 0; i < d_model; ++i) {
      const double exponent = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      const double angle = static_cast<double>(t) / std::pow(10000.0, exponent);
      pos(t, i) = kPositionScale * ((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
    }
  }
  return pos;
}

std::string sidecar_prefix(const SidecarBlock& block) {
  return "sidecar." + std::to_string(block.layer_index) + ".";
}

std::string adapter_prefix(const LoraAdapter& adapter) {
  return "lora." + std::to_string(adapter.layer_index) + "." + adapter.target + ".";
}

NamedValues named(std::string name, const Matrix& m) {
  return {std::move(name), m.rows(), m.cols(), std::vector<double>(m.values().begin(), m.values().end())};
}

ParameterView view(std::string name, Matrix& m) { return {std::move(name), m.rows(), m.cols(), m.values()}; }

// Visits every extension block in canonical order with its parameter class.
enum class ParamClass { Gate, SsmProjection, Lora };

template <typename Model, typename Visitor>
void visit_extensions(Model& model, Visitor&& visit) {
  for (auto& block : model.sidecars) {
    const std::string prefix = sidecar_prefix(block);
    visit(ParamClass::Gate, prefix + "gate", block.gate);
    visit(ParamClass::SsmProjection, prefix + "w_in", block.w_in);
    visit(ParamClass::SsmProjection, prefix + "c_out", block.c_out);
    visit(ParamClass::SsmProjection, prefix + "w_out", block.w_out);
  }
  for (auto& adapter : model.adapters) {
    const std::string prefix = adapter_prefix(adapter);
    visit(ParamClass::Lora, prefix + "a", adapter.a);
    visit(ParamClass::Lora, prefix + "b", adapter.b);
  }
}

bool enabled(const TrainableMask& mask, ParamClass cls) {
  switch (cls) {
    case ParamClass::Gate:
      return mask.gates;
    case ParamClass::SsmProjection:
      return mask.ssm_projections;
    case ParamClass::Lora:
      return mask.lora;
  }
  return false;
}

// Holds the tape nodes for one layer's extension parameters.
struct ExtensionNodes {
  std::map<std::size_t, const SidecarBlock*> sidecar_by_layer;
  std::map<std::size_t, NodeId> gate, w_in, c_out, w_out;
  std::map<std::pair<std::size_t, std::string>, std::pair<NodeId, NodeId>> lora;
  std::map<std::pair<std::size_t, std::string>, double> lora_scaling;
};

class ForwardRecorder {
 public:
  ForwardRecorder(Tape& tape, const HybridModel& model, bool with_extensions)
      : tape_(tape), model_(model), with_extensions_(with_extensions) {}

  ExtensionNodes& extensions() { return ext_; }

  NodeId projection(NodeId x, std::size_t layer, const std::string& target, const Matrix& weight) {
    const NodeId base = tape_.matmul_bt(x, tape_.constant(weight));
    if (!with_extensions_) return base;
    auto it = ext_.lora.find({layer, target});
    if (it == ext_.lora.end()) return base;
    const auto [a, b] = it->second;
    const NodeId low_rank = tape_.matmul_bt(tape_.matmul_bt(x, a), b);
    return tape_.add(base, tape_.scale(low_rank, ext_.lora_scaling.at({layer, target})));
  }

  NodeId run(std::span<const TokenId> tokens) {
    const ModelConfig& cfg = model_.config;
    const Backbone& bb = *model_.backbone;
    const std::size_t seq = tokens.size();

    Matrix embedded = sinusoidal_positions(seq, cfg.d_model);
    for (std::size_t t = 0; t < seq; ++t) {
      const auto row = bb.embedding.row(tokens[t]);
      for (std::size_t i = 0; i < cfg.d_model; ++i) embedded(t, i) += row[i];
    }
    NodeId h = tape_.constant(std::move(embedded));

    const std::size_t dh = cfg.head_dim();
    const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
    for (std::size_t l = 0; l < bb.layers.size(); ++l) {
      const BackboneLayer& layer = bb.layers[l];
      const NodeId h_in = h;

      const NodeId x = tape_.rms_norm(h, tape_.constant(layer.attn_norm));
      const NodeId q = projection(x, l, "q", layer.wq);
      const NodeId k = projection(x, l, "k", layer.wk);
      const NodeId v = projection(x, l, "v", layer.wv);
      std::vector<NodeId> heads;
      heads.reserve(cfg.n_heads);
      for (std::size_t head = 0; head < cfg.n_heads; ++head) {
        const NodeId qh = tape_.slice_cols(q, head * dh, dh);
        const NodeId kh = tape_.slice_cols(k, head * dh, dh);
        const NodeId vh = tape_.slice_cols(v, head * dh, dh);
        const NodeId probs = tape_.causal_softmax(tape_.scale(tape_.matmul_bt(qh, kh), attn_scale));
        heads.push_back(tape_.matmul(probs, vh));
      }
      h = tape_.add(h, projection(tape_.concat_cols(heads), l, "o", layer.wo));

      const NodeId x2 = tape_.rms_norm(h, tape_.constant(layer.mlp_norm));
      const NodeId hidden = tape_.silu(projection(x2, l, "up", layer.w_up));
      h = tape_.add(h, projection(hidden, l, "down", layer.w_down));

      if (with_extensions_) {
        auto it = ext_.sidecar_by_layer.find(l);
        if (it != ext_.sidecar_by_layer.end()) {
          // The side-car reads the residual stream entering the layer.
          const NodeId channels_in = tape_.matmul_bt(h_in, ext_.w_in.at(l));
          const NodeId readout = tape_.ssm_readout(channels_in, *it->second->core, ext_.c_out.at(l));
          const NodeId h_ssm = tape_.matmul_bt(readout, ext_.w_out.at(l));
          h = tape_.add(h, tape_.scalar_mul(ext_.gate.at(l), h_ssm));
        }
      }
    }
    const NodeId final_hidden = tape_.rms_norm(h, tape_.constant(bb.final_norm));
    return tape_.matmul_bt(final_hidden, tape_.constant(bb.embedding));
  }

 private:
  Tape& tape_;
  const HybridModel& model_;
  bool with_extensions_;
  ExtensionNodes ext_;
};

Matrix evaluate(const HybridModel& model, std::span<const TokenId> tokens, bool with_extensions) {
  validate_tokens(model.config, tokens);
  Tape tape;
  if (with_extensions) return tape.value(record_forward(tape, model, tokens, false).logits);
  ForwardRecorder recorder(tape, model, false);
  return tape.value(recorder.run(tokens));
}

}  // namespace

void validate_config(const ModelConfig& c) {
  auto fail = [](const std::string& msg) { throw ConfigError("invalid model config: " + msg); };
  if (c.vocab_size == 0) fail("vocab_size must be >= 1");
  if (c.d_model == 0) fail("d_model must be >= 1");
  if (c.n_layers == 0) fail("n_layers must be >= 1");
  if (c.n_heads == 0) fail("n_heads must be >= 1");
  if (c.d_model % c.n_heads != 0) fail("d_model must be divisible by n_heads");
  if (c.max_seq_len == 0) fail("max_seq_len must be >= 1");
  for (std::size_t layer : c.sidecar_layers) {
    if (layer >= c.n_layers) {
      fail("sidecar layer " + std::to_string(layer) + " is not < n_layers (" + std::to_string(c.n_layers) + ")");
    }
  }
  if (!c.sidecar_layers.empty()) {
    if (c.ssm_channels == 0) fail("ssm_channels must be >= 1");
    if (c.n_states == 0) fail("n_states must be >= 1");
  }
  if (!(c.dt > 0.0) || !std::isfinite(c.dt)) fail("dt must be positive and finite");
  if (!c.lora_targets.empty() && c.lora_rank == 0) fail("lora_rank must be >= 1 when lora_targets is nonempty");
  if (!std::isfinite(c.lora_alpha)) fail("lora_alpha must be finite");
  for (const auto& target : c.lora_targets) {
    if (!lora_target_names().contains(target)) fail("unknown lora target '" + target + "'");
  }
}

TrainableMask parse_trainable_mask(const std::string& text) {
  TrainableMask mask{false, false, false};
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    if (item == "gates") {
      mask.gates = true;
    } else if (item == "ssm_projections") {
      mask.ssm_projections = true;
    } else if (item == "lora") {
      mask.lora = true;
    } else {
      throw ConfigError("unknown trainable group '" + item + "'");
    }
  }
  return mask;
}

std::vector<std::string> mask_names(const TrainableMask& mask) {
  std::vector<std::string> names;
  if (mask.gates) names.emplace_back("gates");
  if (mask.ssm_projections) names.emplace_back("ssm_projections");
  if (mask.lora) names.emplace_back("lora");
  return names;
}

Backbone init_backbone(const ModelConfig& config) {
  validate_config(config);
  SeededRng rng = SeededRng(config.seed).derive(kBackboneStream);
  const std::size_t d = config.d_model;
  const std::size_t ff = config.d_ff();
  const double in_scale = 1.0 / std::sqrt(static_cast<double>(d));
  const double ff_scale = 1.0 / std::sqrt(static_cast<double>(ff));

  Backbone bb;
  bb.embedding = seeded_gaussian_matrix(rng, config.vocab_size, d, kEmbeddingScale);
  bb.layers.reserve(config.n_layers);
  for (std::size_t l = 0; l < config.n_layers; ++l) {
    BackboneLayer layer;
    layer.attn_norm = ones_row(d);
    layer.wq = seeded_gaussian_matrix(rng, d, d, in_scale);
    layer.wk = seeded_gaussian_matrix(rng, d, d, in_scale);
    layer.wv = seeded_gaussian_matrix(rng, d, d, in_scale);
    layer.wo = seeded_gaussian_matrix(rng, d, d, 0.5 * in_scale);
    layer.mlp_norm = ones_row(d);
    layer.w_up = seeded_gaussian_matrix(rng, ff, d, in_scale);
    layer.w_down = seeded_gaussian_matrix(rng, d, ff, 0.5 * ff_scale);
    bb.layers.push_back(std::move(layer));
  }
  bb.final_norm = ones_row(d);
  return bb;
}

HybridModel init_model(const ModelConfig& config, const InitOptions& options) {
  validate_config(config);
  if (options.gate_init && options.gate_init->size() != config.sidecar_layers.size()) {
    throw ConfigError("gate_init must supply one value per side-car layer");
  }

  HybridModel model;
  model.config = config;
  model.backbone = std::make_shared<const Backbone>(init_backbone(config));
  model.trainable_mask = options.mask;

  const SeededRng root(config.seed);
  if (!config.sidecar_layers.empty()) {
    auto core = std::make_shared<const SsmCore>(config.n_states, config.hippo_variant, config.dt);
    std::size_t ordinal = 0;
    for (std::size_t layer : config.sidecar_layers) {
      SeededRng rng = root.derive(kSidecarStreamBase + layer);
      SidecarBlock block;
      block.layer_index = layer;
      block.w_in = seeded_gaussian_matrix(rng, config.ssm_channels, config.d_model, kExtensionInitScale);
      block.core = core;
      block.c_out = seeded_gaussian_matrix(rng, config.ssm_channels, config.n_states, kExtensionInitScale);
      block.w_out = seeded_gaussian_matrix(rng, config.d_model, config.ssm_channels, kExtensionInitScale);
      block.gate = options.gate_init ? (*options.gate_init)[ordinal] : 0.0;
      model.sidecars.push_back(std::move(block));
      ++ordinal;
    }
  }

  for (std::size_t l = 0; l < config.n_layers; ++l) {
    for (const auto& target : config.lora_targets) {
      const Matrix& weight = target_weight(model.backbone->layers[l], target);
      SeededRng rng = root.derive(kLoraStreamBase + l * 16 + target_index(target));
      LoraAdapter adapter;
      adapter.layer_index = l;
      adapter.target = target;
      adapter.rank = config.lora_rank;
      adapter.alpha = config.lora_alpha;
      adapter.a = seeded_gaussian_matrix(rng, config.lora_rank, weight.cols(),
                                         1.0 / std::sqrt(static_cast<double>(weight.cols())));
      adapter.b = Matrix(weight.rows(), config.lora_rank, 0.0);
      model.adapters.push_back(std::move(adapter));
    }
  }

  auto& gates = model.init_records["gates"];
  for (const auto& block : model.sidecars) gates.push_back(block.gate);
  auto& lora_b = model.init_records["lora_b"];
  for (const auto& adapter : model.adapters) lora_b.push_back(max_abs(adapter.b.values()));
  return model;
}

void validate_tokens(const ModelConfig& config, std::span<const TokenId> tokens) {
  if (tokens.empty()) throw ContractError("token sequence is empty");
  if (tokens.size() > config.max_seq_len) {
    throw ContractError("token sequence length " + std::to_string(tokens.size()) + " exceeds max_seq_len " +
                        std::to_string(config.max_seq_len));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] >= config.vocab_size) {
      throw ContractError("token id " + std::to_string(tokens[i]) + " at position " + std::to_string(i) +
                          " is not < vocab_size " + std::to_string(config.vocab_size));
    }
  }
}

RecordedForward record_forward(Tape& tape, const HybridModel& model, std::span<const TokenId> tokens,
                               bool track_gradients) {
  validate_tokens(model.config, tokens);
  ForwardRecorder recorder(tape, model, true);
  ExtensionNodes& ext = recorder.extensions();
  RecordedForward out;

  auto bind = [&](ParamClass cls, const Matrix& value) {
    if (track_gradients && enabled(model.trainable_mask, cls)) {
      const NodeId id = tape.parameter(value);
      out.trainable_nodes.push_back(id);
      return id;
    }
    return tape.constant(value);
  };

  for (const auto& block : model.sidecars) {
    const std::size_t l = block.layer_index;
    ext.sidecar_by_layer[l] = &block;
    ext.gate[l] = bind(ParamClass::Gate, Matrix(1, 1, block.gate));
    ext.w_in[l] = bind(ParamClass::SsmProjection, block.w_in);
    ext.c_out[l] = bind(ParamClass::SsmProjection, block.c_out);
    ext.w_out[l] = bind(ParamClass::SsmProjection, block.w_out);
  }
  for (const auto& adapter : model.adapters) {
    const auto key = std::make_pair(adapter.layer_index, adapter.target);
    const NodeId a = bind(ParamClass::Lora, adapter.a);
    const NodeId b = bind(ParamClass::Lora, adapter.b);
    ext.lora[key] = {a, b};
    ext.lora_scaling[key] = adapter.scaling();
  }
  out.logits = recorder.run(tokens);
  return out;
}

Matrix forward(const HybridModel& model, std::span<const TokenId> tokens) { return evaluate(model, tokens, true); }

Matrix backbone_forward(const HybridModel& model, std::span<const TokenId> tokens) {
  return evaluate(model, tokens, false);
}

Vector apply_gate_blend(const Vector& h_t, const Vector& h_ssm, double alpha) {
  if (h_t.size() != h_ssm.size()) throw DimensionError("apply_gate_blend: length mismatch");
  Vector out(h_t.size());
  for (std::size_t i = 0; i < h_t.size(); ++i) out[i] = h_t[i] + alpha * h_ssm[i];
  return out;
}

std::vector<NamedValues> trainable_parameters(const HybridModel& model) {
  std::vector<NamedValues> out;
  visit_extensions(model, [&](ParamClass cls, std::string name, const auto& value) {
    if (!enabled(model.trainable_mask, cls)) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(value)>, double>) {
      out.push_back({std::move(name), 1, 1, {value}});
    } else {
      out.push_back(named(std::move(name), value));
    }
  });
  return out;
}

std::vector<ParameterView> trainable_views(HybridModel& model) {
  std::vector<ParameterView> out;
  visit_extensions(model, [&](ParamClass cls, std::string name, auto& value) {
    if (!enabled(model.trainable_mask, cls)) return;
    if constexpr (std::is_same_v<std::decay_t<decltype(value)>, double>) {
      out.push_back({std::move(name), 1, 1, std::span<double>(&value, 1)});
    } else {
      out.push_back(view(std::move(name), value));
    }
  });
  return out;
}

std::vector<NamedValues> extension_parameters(const HybridModel& model) {
  std::vector<NamedValues> out;
  visit_extensions(model, [&](ParamClass, std::string name, const auto& value) {
    if constexpr (std::is_same_v<std::decay_t<decltype(value)>, double>) {
      out.push_back({std::move(name), 1, 1, {value}});
    } else {
      out.push_back(named(std::move(name), value));
    }
  });
  return out;
}

std::vector<ParameterView> extension_views(HybridModel& model) {
  std::vector<ParameterView> out;
  visit_extensions(model, [&](ParamClass, std::string name, auto& value) {
    if constexpr (std::is_same_v<std::decay_t<decltype(value)>, double>) {
      out.push_back({std::move(name), 1, 1, std::span<double>(&value, 1)});
    } else {
      out.push_back(view(std::move(name), value));
    }
  });
  return out;
}

std::vector<NamedValues> backbone_parameters(const Backbone& bb) {
  std::vector<NamedValues> out;
  out.push_back(named("backbone.embedding", bb.embedding));
  for (std::size_t l = 0; l < bb.layers.size(); ++l) {
    const auto& layer = bb.layers[l];
    const std::string p = "backbone.layer." + std::to_string(l) + ".";
    out.push_back(named(p + "attn_norm", layer.attn_norm));
    out.push_back(named(p + "wq", layer.wq));
    out.push_back(named(p + "wk", layer.wk));
    out.push_back(named(p + "wv", layer.wv));
    out.push_back(named(p + "wo", layer.wo));
    out.push_back(named(p + "mlp_norm", layer.mlp_norm));
    out.push_back(named(p + "w_up", layer.w_up));
    out.push_back(named(p + "w_down", layer.w_down));
  }
  out.push_back(named("backbone.final_norm", bb.final_norm));
  return out;
}

std::size_t count_values(const std::vector<NamedValues>& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.values.size();
  return n;
}

}  // namespace sidecar
