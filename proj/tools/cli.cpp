#include "cli.hpp"

#include <CLI11.hpp>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <numbers>
#include <sstream>

#include "sidecar/data_io.hpp"
#include "sidecar/errors.hpp"
#include "sidecar/eval_audit.hpp"
#include "sidecar/hippo.hpp"
#include "sidecar/ics.hpp"
#include "sidecar/model_io.hpp"
#include "sidecar/training.hpp"

namespace sidecar::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Carries an exit code and optional issue list up to dispatch().
struct CliFailure {
  int code;
  std::string kind;
  std::string message;
  std::vector<std::string> issues;
};

void require_file(const std::string& path, const char* flag) {
  if (path.empty()) throw CliFailure{kUsageError, "usage", std::string("missing required flag ") + flag, {}};
  if (!fs::is_regular_file(path)) throw CliFailure{kIoError, "io", "file not found: " + path, {}};
}

void require_out(const std::string& path) {
  if (path.empty()) throw CliFailure{kUsageError, "usage", "missing required flag --out", {}};
}

struct Options {
  std::string config, model, base, out, probes, data, input, mask = "gates,lora", gate_init;
  std::size_t steps = 200;
  double lr = 1e-2;
  std::optional<std::uint64_t> seed;
  double budget_cap = 20.0;
  std::size_t planned_steps = 25908;
  double cost_per_kstep = 0.62;
  double tolerance = 0.0;
  bool strict = false;
  bool as_json = false;

  // hippo-demo
  std::size_t n_states = 16;
  double dt = 0.05;
  std::size_t demo_steps = 200;
  std::string variant = "StandardLegS";
  std::string signal = "sine";
  double period = 4.0;
  std::size_t points = 50;
};

std::vector<double> parse_double_list(const std::string& text) {
  std::vector<double> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    try {
      std::size_t used = 0;
      values.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw CliFailure{kUsageError, "usage", "not a number in list: '" + item + "'", {}};
    }
  }
  return values;
}

int cmd_hippo_demo(const Options& o, std::ostream& out) {
  const HippoVariant variant = parse_hippo_variant(o.variant);
  if (o.signal != "sine" && o.signal != "constant") {
    throw CliFailure{kUsageError, "usage", "--signal must be sine or constant", {}};
  }
  auto signal = [&](double t) {
    return o.signal == "constant" ? 1.0 : std::sin(2.0 * std::numbers::pi * t / o.period);
  };
  const SsmCore core(o.n_states, variant, o.dt);
  std::vector<double> inputs(o.demo_steps);
  for (std::size_t k = 0; k < o.demo_steps; ++k) inputs[k] = signal(static_cast<double>(k + 1) * o.dt);
  const auto states = ssm_scan(core, inputs, SsmState::zeros(core));
  if (states.empty()) throw CliFailure{kUsageError, "usage", "--steps must be >= 1", {}};
  const Reconstruction rec = reconstruct_legendre(core, states.back(), o.points);

  if (o.as_json) {
    json rows = json::array();
    for (std::size_t i = 0; i < rec.times.size(); ++i) {
      rows.push_back({{"t", rec.times[i]}, {"input", signal(rec.times[i])}, {"reconstruction", rec.values[i]}});
    }
    out << json{{"n_states", o.n_states}, {"dt", o.dt}, {"steps", o.demo_steps}, {"rows", rows}}.dump(2) << "\n";
    return kSuccess;
  }
  out << "t,input,reconstruction\n" << std::setprecision(17);
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    out << rec.times[i] << "," << signal(rec.times[i]) << "," << rec.values[i] << "\n";
  }
  return kSuccess;
}

int cmd_model_init(const Options& o, std::ostream& out) {
  ModelConfig config;
  if (!o.config.empty()) {
    require_file(o.config, "--config");
    config = load_config(o.config);
  }
  if (o.seed) config.seed = *o.seed;
  require_out(o.out);
  InitOptions init{parse_trainable_mask(o.mask), std::nullopt};
  if (!o.gate_init.empty()) init.gate_init = parse_double_list(o.gate_init);
  const HybridModel model = init_model(config, init);
  save_model(model, o.out);

  const std::size_t backbone_values = count_values(backbone_parameters(*model.backbone));
  const std::size_t trainable_values = count_values(trainable_parameters(model));
  if (o.as_json) {
    out << json{{"out", o.out},
                {"config", config_to_json(config)},
                {"backbone_values", backbone_values},
                {"trainable_values", trainable_values},
                {"trainable_mask", mask_names(model.trainable_mask)}}
               .dump(2)
        << "\n";
  } else {
    out << "wrote " << o.out << ": " << backbone_values << " frozen backbone values, " << trainable_values
        << " trainable values\n";
  }
  return kSuccess;
}

TrainBatch load_batch(const Options& o, const ModelConfig& config) {
  require_file(o.data, "--data");
  const auto texts = read_bytes_records(o.data);
  TrainBatch batch = batch_from_texts(texts, config.max_seq_len);
  validate_batch(config, batch);
  return batch;
}

ProbeSet load_probes(const Options& o, const ModelConfig& config) {
  require_file(o.probes, "--probes");
  const auto texts = read_bytes_records(o.probes);
  ProbeSet probes = probes_from_texts(fs::path(o.probes).filename().string(), texts, config.max_seq_len);
  validate_probes(config, probes);
  return probes;
}

int cmd_train(const Options& o, std::ostream& out) {
  require_file(o.model, "--model");
  require_out(o.out);
  HybridModel model = load_model(o.model);
  const TrainBatch batch = load_batch(o, model.config);
  const TrainBatch batches[] = {batch};
  const TrainReport report = train(model, batches, TrainOptions{o.steps, o.lr});
  save_model(model, o.out);
  if (o.as_json) {
    out << to_json(report).dump(2) << "\n";
  } else {
    out << "steps " << report.steps << "  loss " << report.initial_loss << " -> " << report.final_loss
        << "  perplexity " << report.perplexity << "\nwrote " << o.out << "\n";
  }
  return kSuccess;
}

int cmd_eval_divergence(const Options& o, std::ostream& out) {
  require_file(o.model, "--model");
  require_file(o.base, "--base");
  const HybridModel adapted = load_model(o.model);
  const HybridModel base = load_model(o.base);
  const ProbeSet probes = load_probes(o, adapted.config);
  const DivergenceReport report = divergence_eval(adapted, base, probes);
  if (o.as_json) {
    out << to_json(report).dump(2) << "\n";
  } else {
    out << "mean KL(adapted || base) " << report.mean_kl << " nats/token over " << report.positions
        << " positions, max " << report.max_kl << "\n";
    if (report.identical_models) out << "identical models: adapted and base parameters are bit-identical\n";
  }
  return kSuccess;
}

int cmd_audit_gates(const Options& o, std::ostream& out) {
  require_file(o.model, "--model");
  const HybridModel model = load_model(o.model);
  GatePolicy policy;
  policy.tolerance = o.tolerance;
  const auto violations = gate_audit(model, policy);
  if (o.as_json) {
    json list = json::array();
    for (const auto& v : violations) list.push_back(to_json(v));
    out << json{{"violations", list}, {"clean", violations.empty()}}.dump(2) << "\n";
  } else if (violations.empty()) {
    out << "clean: every recorded initial value matches the policy\n";
  } else {
    out << "group    index  expected  actual  severity\n";
    for (const auto& v : violations) {
      out << std::left << std::setw(9) << v.group << std::setw(7) << v.index << std::setw(10) << v.expected
          << std::setw(8) << v.actual << v.severity << "\n";
    }
  }
  return violations.empty() ? kSuccess : kCheckFailure;
}

int cmd_validate(const Options& o, std::ostream& out) {
  require_file(o.model, "--model");
  require_file(o.base, "--base");
  const HybridModel model = load_model(o.model);
  const HybridModel base = load_model(o.base);
  const ProbeSet probes = load_probes(o, model.config);
  const TrainBatch batch = load_batch(o, model.config);

  ValidationOptions options;
  options.smoke.steps = o.steps;
  options.smoke.lr = o.lr;
  options.budget = BudgetArgs{o.planned_steps, o.cost_per_kstep, o.budget_cap};
  const ValidationReport report = run_validation_gate(model, base, probes, batch, options);
  if (o.as_json) {
    out << to_json(report).dump(2) << "\n";
  } else {
    for (const auto& c : report.checks) {
      out << std::left << std::setw(28) << c.check << std::setw(9) << to_string(c.status);
      if (c.value) out << std::setw(14) << *c.value;
      out << c.detail << "\n";
    }
    out << (report.passed ? "PASS" : "FAIL") << "\n";
  }
  return report.passed ? kSuccess : kCheckFailure;
}

int cmd_ics_score(const Options& o, std::ostream& out) {
  require_file(o.input, "--in");
  const auto responses = read_scored_responses(o.input);
  const ics::IcsResult result = ics::ics_score(responses, o.strict);
  if (o.as_json) {
    out << ics::to_json(result).dump(2) << "\n";
  } else {
    out << "ICS " << result.composite << " over " << result.n_responses << " responses"
        << (result.strict ? "" : " (non-strict)") << "\n";
    for (std::size_t i = 0; i < ics::kCategories.size(); ++i) {
      out << "  " << std::left << std::setw(20) << ics::to_string(ics::kCategories[i]);
      if (result.per_category[i]) {
        out << *result.per_category[i] << "\n";
      } else {
        out << "-\n";
      }
    }
  }
  return kSuccess;
}

void emit_error(std::ostream& err, int code, const std::string& kind, const std::string& message,
                const std::vector<std::string>& issues = {}) {
  json j{{"error", {{"code", code}, {"kind", kind}, {"message", message}}}};
  if (!issues.empty()) j["error"]["issues"] = issues;
  err << j.dump() << "\n";
}

}  // namespace

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"HiPPO side-car toolkit: build, train, validate, and audit gated SSM side-cars", "sidecar"};
  app.require_subcommand(1);
  Options o;

  auto add_json = [&](CLI::App* sub) { sub->add_flag("--json", o.as_json, "Machine-readable JSON on stdout"); };

  auto* demo = app.add_subcommand("hippo-demo", "Reconstruct a signal from a StandardLegS state (CSV t,input,reconstruction)");
  demo->add_option("--n-states", o.n_states, "State size N")->capture_default_str();
  demo->add_option("--dt", o.dt, "Step size")->capture_default_str();
  demo->add_option("--steps", o.demo_steps, "Number of input samples")->capture_default_str();
  demo->add_option("--variant", o.variant, "PaperEq1 or StandardLegS")->capture_default_str();
  demo->add_option("--signal", o.signal, "sine or constant")->capture_default_str();
  demo->add_option("--period", o.period, "Sine period in time units")->capture_default_str();
  demo->add_option("--points", o.points, "Reconstruction samples")->capture_default_str();
  add_json(demo);

  auto* init = app.add_subcommand("model-init", "Initialize a hybrid model and write it to --out");
  init->add_option("--config", o.config, "Model config JSON (defaults when omitted)");
  init->add_option("--out", o.out, "Output model file");
  init->add_option("--seed", o.seed, "Override the config seed");
  init->add_option("--mask", o.mask, "Trainable groups: gates,ssm_projections,lora")->capture_default_str();
  init->add_option("--gate-init", o.gate_init, "Comma-separated initial gate per side-car (audit demos)");
  add_json(init);

  auto* train_cmd = app.add_subcommand("train", "Train the masked parameters on JSONL byte records");
  train_cmd->add_option("--model", o.model, "Input model file");
  train_cmd->add_option("--data", o.data, "Training JSONL with a 'bytes' field");
  train_cmd->add_option("--steps", o.steps, "Optimizer steps")->capture_default_str();
  train_cmd->add_option("--lr", o.lr, "Adam learning rate")->capture_default_str();
  train_cmd->add_option("--out", o.out, "Output model file");
  add_json(train_cmd);

  auto* div = app.add_subcommand("eval-divergence", "Per-token KL(adapted || base) on a probe set");
  div->add_option("--model", o.model, "Adapted model file");
  div->add_option("--base", o.base, "Zero-gate base reference model file");
  div->add_option("--probes", o.probes, "Probe JSONL with a 'bytes' field");
  add_json(div);

  auto* audit = app.add_subcommand("audit-gates", "Check recorded initial gate / LoRA-b values against the policy");
  audit->add_option("--model", o.model, "Model file");
  audit->add_option("--tolerance", o.tolerance, "Absolute tolerance")->capture_default_str();
  add_json(audit);

  auto* validate = app.add_subcommand("validate", "Run the ordered validation gate; exit 0 iff every check passes");
  validate->add_option("--model", o.model, "Model file");
  validate->add_option("--base", o.base, "Zero-gate base reference model file");
  validate->add_option("--probes", o.probes, "Probe JSONL");
  validate->add_option("--data", o.data, "Smoke-training JSONL");
  validate->add_option("--steps", o.steps, "Smoke-training steps")->capture_default_str();
  validate->add_option("--lr", o.lr, "Smoke-training learning rate")->capture_default_str();
  validate->add_option("--budget-cap", o.budget_cap, "Budget cap")->capture_default_str();
  validate->add_option("--planned-steps", o.planned_steps, "Planned run length for the budget gate")
      ->capture_default_str();
  validate->add_option("--cost-per-kstep", o.cost_per_kstep, "Cost per 1000 steps")->capture_default_str();
  add_json(validate);

  auto* ics_cmd = app.add_subcommand("ics-score", "Identity Consistency Score from scored JSONL responses");
  ics_cmd->add_option("--in", o.input, "Scored responses JSONL");
  ics_cmd->add_flag("--strict", o.strict, "Require the canonical 50-prompt, 10-per-category suite");
  add_json(ics_cmd);

  std::vector<std::string> argv_storage{"sidecar"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<const char*> argv;
  for (const auto& a : argv_storage) argv.push_back(a.c_str());

  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kSuccess;
  } catch (const CLI::ParseError& e) {
    emit_error(err, kUsageError, "usage", e.what());
    err << app.help();
    return kUsageError;
  }

  try {
    if (demo->parsed()) return cmd_hippo_demo(o, out);
    if (init->parsed()) return cmd_model_init(o, out);
    if (train_cmd->parsed()) return cmd_train(o, out);
    if (div->parsed()) return cmd_eval_divergence(o, out);
    if (audit->parsed()) return cmd_audit_gates(o, out);
    if (validate->parsed()) return cmd_validate(o, out);
    if (ics_cmd->parsed()) return cmd_ics_score(o, out);
  } catch (const CliFailure& f) {
    emit_error(err, f.code, f.kind, f.message, f.issues);
    return f.code;
  } catch (const ics::IcsError& e) {
    emit_error(err, kDataError, "data", e.what(), e.issues());
    return kDataError;
  } catch (const std::ios_base::failure& e) {
    emit_error(err, kIoError, "io", e.what());
    return kIoError;
  } catch (const std::exception& e) {
    // Format, config, contract, and numeric errors all trace back to input data.
    emit_error(err, kDataError, "data", e.what());
    return kDataError;
  }
  emit_error(err, kUsageError, "usage", "no subcommand");
  return kUsageError;
}

}  // namespace sidecar::cli
