#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sidecar/errors.hpp"
#include "sidecar/model.hpp"
#include "sidecar/training.hpp"

namespace sidecar {

struct ProbeSet {
  std::string name;
  std::vector<std::vector<TokenId>> sequences;
};

/// Throws ContractError when empty or when any sequence is invalid for config.
void validate_probes(const ModelConfig& config, const ProbeSet& probes);
ProbeSet probes_from_texts(std::string name, std::span<const std::string> texts, std::size_t max_seq_len);

struct DivergenceReport {
  std::vector<double> per_probe_mean_kl;
  double mean_kl = 0.0;  // token-weighted over every probe position
  double max_kl = 0.0;
  std::size_t positions = 0;
  /// Set when adapted and base carry bit-identical parameters. A zero
  /// divergence with this flag means "nothing was compared", not "passed".
  bool identical_models = false;
};

/// Error raised when the reference model carries nonzero gates or LoRA b.
class NotABaseReferenceError : public ConfigError {
 public:
  using ConfigError::ConfigError;
};

/// Per-token KL(adapted || base) over the probe set.
DivergenceReport divergence_eval(const HybridModel& adapted, const HybridModel& base, const ProbeSet& probes);

/// True when configs, backbones, and every extension value agree bit for bit.
bool parameters_identical(const HybridModel& a, const HybridModel& b);

struct GatePolicy {
  std::map<std::string, double> expected{{"gates", 0.0}, {"lora_b", 0.0}};
  double tolerance = 0.0;
};

struct GateViolation {
  std::string group;
  std::size_t index = 0;
  double expected = 0.0;
  double actual = 0.0;
  double severity = 0.0;  // |actual - expected|
};

/// Compares the recorded initial values of each policy group against the
/// policy. Violations are sorted most severe first.
std::vector<GateViolation> gate_audit(const HybridModel& model, const GatePolicy& policy = {});

struct BudgetDecision {
  double projected_cost = 0.0;
  double cap = 0.0;
  bool passed = false;
};

/// projected = planned_steps / 1000 * cost_per_kstep; fails iff projected > cap.
BudgetDecision budget_gate(std::size_t planned_steps, double cost_per_kstep, double cap);

enum class CheckStatus { Pass, Fail, NotRun };

struct CheckResult {
  std::string check;
  CheckStatus status = CheckStatus::NotRun;
  std::optional<double> value;
  std::string detail;

  bool passed() const { return status == CheckStatus::Pass; }
};

struct ValidationReport {
  /// Always the six checks in execution order; checks after the first
  /// failure have status NotRun and no value.
  std::vector<CheckResult> checks;
  bool passed = false;
};

struct BudgetArgs {
  std::size_t planned_steps = 25908;
  double cost_per_kstep = 0.62;
  double cap = 20.0;
};

struct ValidationOptions {
  TrainOptions smoke{200, 1e-2};
  double min_loss_decrease = 0.10;
  GradCheckOptions grad{};
  /// Seed for the nonzero gate / LoRA-b values the gradient check runs at,
  /// so every parameter class has a live gradient path.
  std::uint64_t grad_check_seed = 99;
  BudgetArgs budget{};
  GatePolicy policy{};
};

inline const std::vector<std::string>& validation_check_names() {
  static const std::vector<std::string> names{"zero_gate_identity",        "grad_check", "train_smoke",
                                              "divergence_after_training", "gate_audit", "budget_gate"};
  return names;
}

/// Runs the six checks in order and stops at the first failure. Exceptions
/// inside a check become that check's failure.
ValidationReport run_validation_gate(const HybridModel& model, const HybridModel& base, const ProbeSet& probes,
                                     const TrainBatch& batch, const ValidationOptions& options = {});

/// Copy of model with every gate and LoRA b set to zero.
HybridModel zero_extensions(const HybridModel& model);
/// Copy with seeded nonzero gates and LoRA b, for gradient checking.
HybridModel activate_extensions(const HybridModel& model, std::uint64_t seed);

std::string to_string(CheckStatus status);
nlohmann::json to_json(const CheckResult& result);
nlohmann::json to_json(const ValidationReport& report);
nlohmann::json to_json(const DivergenceReport& report);
nlohmann::json to_json(const GateViolation& violation);
nlohmann::json to_json(const BudgetDecision& decision);
nlohmann::json to_json(const TrainReport& report);
nlohmann::json to_json(const GradCheckReport& report);

}  // namespace sidecar
