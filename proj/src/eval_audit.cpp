#include "sidecar/eval_audit.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <sstream>

#include "sidecar/errors.hpp"

namespace sidecar {
namespace {

bool bitwise_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool blocks_identical(const std::vector<NamedValues>& a, const std::vector<NamedValues>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].name != b[i].name || !bitwise_equal(a[i].values, b[i].values)) return false;
  }
  return true;
}

void require_base_reference(const HybridModel& base) {
  for (const auto& block : base.sidecars) {
    if (block.gate != 0.0) {
      throw NotABaseReferenceError("not a base reference: side-car gate at layer " +
                                   std::to_string(block.layer_index) + " is nonzero");
    }
  }
  for (const auto& adapter : base.adapters) {
    if (max_abs(adapter.b.values()) != 0.0) {
      throw NotABaseReferenceError("not a base reference: LoRA b of " + std::to_string(adapter.layer_index) + "." +
                                   adapter.target + " is nonzero");
    }
  }
}

CheckResult pass(std::string name, double value, std::string detail) {
  return {std::move(name), CheckStatus::Pass, value, std::move(detail)};
}

CheckResult fail(std::string name, std::optional<double> value, std::string detail) {
  return {std::move(name), CheckStatus::Fail, value, std::move(detail)};
}

}  // namespace

void validate_probes(const ModelConfig& config, const ProbeSet& probes) {
  if (probes.sequences.empty()) throw ContractError("probe set '" + probes.name + "' is empty");
  for (const auto& seq : probes.sequences) validate_tokens(config, seq);
}

ProbeSet probes_from_texts(std::string name, std::span<const std::string> texts, std::size_t max_seq_len) {
  ProbeSet probes{std::move(name), {}};
  for (const auto& text : texts) {
    if (text.empty()) throw ContractError("probe text is empty");
    const std::size_t n = std::min(text.size(), max_seq_len);
    std::vector<TokenId> seq(n);
    for (std::size_t i = 0; i < n; ++i) seq[i] = static_cast<unsigned char>(text[i]);
    probes.sequences.push_back(std::move(seq));
  }
  return probes;
}

bool parameters_identical(const HybridModel& a, const HybridModel& b) {
  if (!(a.config == b.config)) return false;
  if (a.backbone != b.backbone && !blocks_identical(backbone_parameters(*a.backbone), backbone_parameters(*b.backbone))) {
    return false;
  }
  return blocks_identical(extension_parameters(a), extension_parameters(b));
}

DivergenceReport divergence_eval(const HybridModel& adapted, const HybridModel& base, const ProbeSet& probes) {
  if (adapted.config.vocab_size != base.config.vocab_size || adapted.config.max_seq_len != base.config.max_seq_len) {
    throw ConfigError("divergence_eval: adapted and base models disagree on vocab_size or max_seq_len");
  }
  require_base_reference(base);
  validate_probes(adapted.config, probes);

  DivergenceReport report;
  report.identical_models = parameters_identical(adapted, base);
  double total = 0.0;
  for (const auto& seq : probes.sequences) {
    const Matrix p_logits = forward(adapted, seq);
    const Matrix q_logits = forward(base, seq);
    double probe_total = 0.0;
    for (std::size_t t = 0; t < seq.size(); ++t) {
      const auto log_p = log_softmax(p_logits.row(t));
      const auto log_q = log_softmax(q_logits.row(t));
      double kl = 0.0;
      for (std::size_t i = 0; i < log_p.size(); ++i) kl += std::exp(log_p[i]) * (log_p[i] - log_q[i]);
      // Rounding can leave a tiny negative value for near-equal rows.
      kl = std::max(kl, 0.0);
      probe_total += kl;
      report.max_kl = std::max(report.max_kl, kl);
    }
    report.per_probe_mean_kl.push_back(probe_total / static_cast<double>(seq.size()));
    total += probe_total;
    report.positions += seq.size();
  }
  report.mean_kl = total / static_cast<double>(report.positions);
  return report;
}

std::vector<GateViolation> gate_audit(const HybridModel& model, const GatePolicy& policy) {
  if (policy.tolerance < 0.0) throw ContractError("gate_audit: tolerance must be >= 0");
  std::vector<GateViolation> violations;
  for (const auto& [group, expected] : policy.expected) {
    auto it = model.init_records.find(group);
    if (it == model.init_records.end()) continue;
    for (std::size_t i = 0; i < it->second.size(); ++i) {
      const double actual = it->second[i];
      const double deviation = std::abs(actual - expected);
      if (deviation > policy.tolerance) violations.push_back({group, i, expected, actual, deviation});
    }
  }
  std::stable_sort(violations.begin(), violations.end(),
                   [](const GateViolation& a, const GateViolation& b) { return a.severity > b.severity; });
  return violations;
}

BudgetDecision budget_gate(std::size_t planned_steps, double cost_per_kstep, double cap) {
  if (cost_per_kstep < 0.0 || cap < 0.0) throw ContractError("budget_gate: inputs must be nonnegative");
  BudgetDecision d;
  d.projected_cost = static_cast<double>(planned_steps) * cost_per_kstep / 1000.0;
  d.cap = cap;
  d.passed = !(d.projected_cost > cap);
  return d;
}

HybridModel zero_extensions(const HybridModel& model) {
  HybridModel copy = model;
  for (auto& block : copy.sidecars) block.gate = 0.0;
  for (auto& adapter : copy.adapters) std::fill(adapter.b.values().begin(), adapter.b.values().end(), 0.0);
  return copy;
}

HybridModel activate_extensions(const HybridModel& model, std::uint64_t seed) {
  HybridModel copy = model;
  SeededRng rng(seed);
  for (auto& block : copy.sidecars) block.gate = 0.5 + 0.5 * rng.uniform();
  for (auto& adapter : copy.adapters) {
    for (double& v : adapter.b.values()) v = 0.02 * rng.gaussian();
  }
  return copy;
}

ValidationReport run_validation_gate(const HybridModel& model, const HybridModel& base, const ProbeSet& probes,
                                     const TrainBatch& batch, const ValidationOptions& options) {
  ValidationReport report;
  HybridModel trained = model;

  using CheckFn = std::function<CheckResult(const std::string&)>;
  const std::vector<CheckFn> checks{
      [&](const std::string& name) {
        validate_probes(model.config, probes);
        const HybridModel gated_off = zero_extensions(model);
        double worst = 0.0;
        for (const auto& seq : probes.sequences) {
          worst = std::max(worst, max_abs_diff(forward(gated_off, seq), backbone_forward(model, seq)));
        }
        if (worst == 0.0) return pass(name, worst, "zero-gate forward equals backbone forward exactly");
        return fail(name, worst, "zero-gate forward deviates from backbone forward");
      },
      [&](const std::string& name) {
        const HybridModel live = activate_extensions(model, options.grad_check_seed);
        const GradCheckReport gc = grad_check(live, batch, options.grad);
        std::ostringstream os;
        os << gc.entries.size() << " coordinates, max relative error " << gc.max_rel_error;
        if (gc.passed) return pass(name, gc.max_rel_error, os.str());
        const auto& first = gc.failures.front();
        os << "; first failure " << first.parameter << "[" << first.index << "] analytic " << first.analytic
           << " numeric " << first.numeric;
        return fail(name, gc.max_rel_error, os.str());
      },
      [&](const std::string& name) {
        const TrainBatch batches[] = {batch};
        const TrainReport tr = train(trained, batches, options.smoke);
        const double decrease = (tr.initial_loss - tr.final_loss) / tr.initial_loss;
        std::ostringstream os;
        os << "loss " << tr.initial_loss << " -> " << tr.final_loss << " over " << tr.steps << " steps";
        if (decrease >= options.min_loss_decrease) return pass(name, decrease, os.str());
        if (decrease <= 0.0) return fail(name, decrease, "loss did not decrease: " + os.str());
        return fail(name, decrease, "loss decrease below threshold: " + os.str());
      },
      [&](const std::string& name) {
        const DivergenceReport div = divergence_eval(trained, base, probes);
        if (div.identical_models) return fail(name, div.mean_kl, "identical models: training changed nothing");
        if (div.mean_kl > 0.0) return pass(name, div.mean_kl, "mean per-token KL(trained || base)");
        return fail(name, div.mean_kl, "trained model is indistinguishable from base on the probes");
      },
      [&](const std::string& name) {
        const auto violations = gate_audit(trained, options.policy);
        if (violations.empty()) return pass(name, 0.0, "all recorded initial values match the policy");
        const auto& worst = violations.front();
        std::ostringstream os;
        os << violations.size() << " violation(s); worst " << worst.group << "[" << worst.index << "] = " << worst.actual
           << " (expected " << worst.expected << ")";
        return fail(name, static_cast<double>(violations.size()), os.str());
      },
      [&](const std::string& name) {
        const BudgetDecision d =
            budget_gate(options.budget.planned_steps, options.budget.cost_per_kstep, options.budget.cap);
        std::ostringstream os;
        os << "projected " << d.projected_cost << " against cap " << d.cap;
        if (d.passed) return pass(name, d.projected_cost, os.str());
        return fail(name, d.projected_cost, "over budget: " + os.str());
      },
  };

  const auto& names = validation_check_names();
  bool halted = false;
  for (std::size_t i = 0; i < checks.size(); ++i) {
    if (halted) {
      report.checks.push_back({names[i], CheckStatus::NotRun, std::nullopt, "not run"});
      continue;
    }
    CheckResult result;
    try {
      result = checks[i](names[i]);
    } catch (const std::exception& e) {
      result = fail(names[i], std::nullopt, std::string("error: ") + e.what());
    }
    halted = !result.passed();
    report.checks.push_back(std::move(result));
  }
  report.passed = !halted;
  return report;
}

std::string to_string(CheckStatus status) {
  switch (status) {
    case CheckStatus::Pass:
      return "pass";
    case CheckStatus::Fail:
      return "fail";
    case CheckStatus::NotRun:
      return "not_run";
  }
  return "unknown";
}

nlohmann::json to_json(const CheckResult& r) {
  nlohmann::json j{{"check", r.check}, {"status", to_string(r.status)}, {"pass", r.passed()}, {"detail", r.detail}};
  j["value"] = r.value ? nlohmann::json(*r.value) : nlohmann::json(nullptr);
  return j;
}

nlohmann::json to_json(const ValidationReport& report) {
  nlohmann::json checks = nlohmann::json::array();
  for (const auto& c : report.checks) checks.push_back(to_json(c));
  return {{"pass", report.passed}, {"checks", checks}};
}

nlohmann::json to_json(const DivergenceReport& r) {
  return {{"mean_kl", r.mean_kl},
          {"max_kl", r.max_kl},
          {"positions", r.positions},
          {"per_probe_mean_kl", r.per_probe_mean_kl},
          {"identical_models", r.identical_models}};
}

nlohmann::json to_json(const GateViolation& v) {
  return {{"group", v.group}, {"index", v.index}, {"expected", v.expected}, {"actual", v.actual}, {"severity", v.severity}};
}

nlohmann::json to_json(const BudgetDecision& d) {
  return {{"projected_cost", d.projected_cost}, {"cap", d.cap}, {"pass", d.passed}};
}

nlohmann::json to_json(const TrainReport& r) {
  return {{"steps", r.steps},
          {"loss_curve", r.loss_curve},
          {"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"perplexity", r.perplexity}};
}

nlohmann::json to_json(const GradCheckReport& r) {
  nlohmann::json failures = nlohmann::json::array();
  for (const auto& e : r.failures) {
    failures.push_back({{"parameter", e.parameter},
                        {"index", e.index},
                        {"analytic", e.analytic},
                        {"numeric", e.numeric},
                        {"rel_error", e.rel_error},
                        {"abs_error", e.abs_error}});
  }
  return {{"pass", r.passed}, {"coordinates", r.entries.size()}, {"max_rel_error", r.max_rel_error}, {"failures", failures}};
}

}  // namespace sidecar
