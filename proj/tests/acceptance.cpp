// Acceptance suite: one PASS/FAIL line per headline criterion.
// Exit status is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iterator>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "cli.hpp"
#include "sidecar/eval_audit.hpp"
#include "sidecar/hippo.hpp"
#include "sidecar/ics.hpp"
#include "sidecar/model_io.hpp"
#include "sidecar/training.hpp"
#include "test_support.hpp"

using namespace sidecar;

namespace {

struct Outcome {
  bool ok;
  std::string detail;
};

int g_failures = 0;

void criterion(const char* name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o{false, ""};
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_seconds > 0 && secs >= limit_seconds) {
    o.ok = false;
    o.detail += " [over time limit " + std::to_string(limit_seconds) + " s]";
  }
  if (!o.ok) ++g_failures;
  std::printf("%s  %-34s %7.2fs  %s\n", o.ok ? "PASS" : "FAIL", name, secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

ModelConfig random_config(SeededRng& rng) {
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.next_u64() % n); };
  ModelConfig c;
  c.n_heads = 1 + pick(4);
  c.d_model = c.n_heads * (2 + pick(7));
  c.n_layers = 1 + pick(4);
  c.max_seq_len = 8 + pick(57);
  c.sidecar_layers.clear();
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    if (pick(2) == 0) c.sidecar_layers.insert(l);
  }
  c.ssm_channels = 1 + pick(8);
  c.n_states = 1 + pick(16);
  const double dts[] = {1e-2, 0.1, 0.5, 1.0, 2.0};
  c.dt = dts[pick(5)];
  c.hippo_variant = pick(2) ? HippoVariant::StandardLegS : HippoVariant::PaperEq1;
  c.lora_targets.clear();
  for (const auto& t : lora_target_names()) {
    if (pick(3) == 0) c.lora_targets.insert(t);
  }
  c.lora_rank = 1 + pick(8);
  c.lora_alpha = static_cast<double>(2 * c.lora_rank);
  c.seed = rng.next_u64();
  return c;
}

double sine4(double t) { return std::sin(2.0 * std::numbers::pi * t / 4.0); }

double reconstruction_error(std::size_t n, const std::function<double(double)>& f) {
  const double dt = 0.05;
  const SsmCore core(n, HippoVariant::StandardLegS, dt);
  std::vector<double> u(200);
  for (std::size_t k = 0; k < u.size(); ++k) u[k] = f(static_cast<double>(k + 1) * dt);
  const auto states = ssm_scan(core, u, SsmState::zeros(core));
  const Reconstruction rec = reconstruct_legendre(core, states.back(), 400);
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < rec.times.size(); ++i) {
    const double target = f(rec.times[i]);
    num += (rec.values[i] - target) * (rec.values[i] - target);
    den += target * target;
  }
  return std::sqrt(num / den);
}

Distribution random_distribution(SeededRng& rng, std::size_t n) {
  std::vector<double> p(n);
  double total = 0.0;
  for (auto& v : p) {
    v = rng.uniform() + 1e-3;
    total += v;
  }
  for (auto& v : p) v /= total;
  return Distribution(p);
}

std::vector<ics::ScoredResponse> uniform_suite(int c, int e, int r) {
  std::vector<ics::ScoredResponse> out;
  for (std::size_t k = 0; k < ics::kSuiteSize; ++k) {
    out.push_back({"p" + std::to_string(k), ics::kCategories[k / ics::kPerCategory], c, e, r});
  }
  return out;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

int main() {
  criterion("zero-gate identity", 30.0, [] {
    SeededRng rng(20240601);
    std::size_t compared = 0;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
      const ModelConfig c = random_config(rng);
      const HybridModel m = init_model(c);
      for (int s = 0; s < 20; ++s) {
        std::vector<TokenId> tokens(1 + rng.next_u64() % c.max_seq_len);
        for (auto& t : tokens) t = static_cast<TokenId>(rng.next_u64() % 256);
        worst = std::max(worst, max_abs_diff(forward(m, tokens), backbone_forward(m, tokens)));
        ++compared;
      }
    }
    return Outcome{worst == 0.0 && compared == 400, std::to_string(compared) + " sequences, max |diff| " + fmt("%g", worst)};
  });

  criterion("hippo construction", 0, [] {
    const auto eq1 = hippo_matrix(3, HippoVariant::PaperEq1);
    const bool exact = eq1.a == Matrix{{-1, 0, 0}, {-1, -3, 0}, {-1, -1, -5}};
    const auto legs = hippo_matrix(2, HippoVariant::StandardLegS);
    const Matrix oracle{{-1, 0}, {-std::sqrt(1.0) * std::sqrt(3.0), -2}};
    const double err = std::max({max_abs_diff(legs.a, oracle), std::abs(legs.b[0] - 1.0),
                                 std::abs(legs.b[1] - std::sqrt(3.0))});
    return Outcome{exact && err <= 1e-12,
                   std::string("N=3 exact ") + (exact ? "yes" : "no") + ", LegS N=2 err " + fmt("%.1e", err)};
  });

  criterion("discretization stability", 10.0, [] {
    double max_mag = 0.0, max_map_err = 0.0;
    std::size_t cores = 0;
    for (std::size_t n = 1; n <= 64; ++n) {
      for (auto v : {HippoVariant::PaperEq1, HippoVariant::StandardLegS}) {
        for (double dt : {1e-3, 1e-2, 0.1, 0.5, 1.0}) {
          const auto m = hippo_matrix(n, v);
          const auto d = discretize_bilinear(m.a, m.b, dt);
          if (!is_lower_triangular(d.a)) return Outcome{false, "lost triangularity"};
          const Vector lam = lower_triangular_eigenvalues(m.a);
          const Vector mu = lower_triangular_eigenvalues(d.a);
          const double c = dt / 2.0;
          for (std::size_t i = 0; i < n; ++i) {
            max_mag = std::max(max_mag, std::abs(mu[i]));
            max_map_err = std::max(max_map_err, std::abs(mu[i] - (1 + c * lam[i]) / (1 - c * lam[i])));
          }
          ++cores;
        }
      }
    }
    return Outcome{max_mag < 1.0 && max_map_err <= 1e-10, std::to_string(cores) + " systems, max |eig| " +
                                                               fmt("%.15f", max_mag) + ", map err " +
                                                               fmt("%.1e", max_map_err)};
  });

  criterion("reconstruction monotonicity", 0, [] {
    std::string detail = "sine err";
    bool ok = true;
    double previous = INFINITY;
    for (std::size_t n : {8u, 16u, 32u, 64u}) {
      const double e = reconstruction_error(n, sine4);
      ok = ok && (e < previous || std::abs(e - previous) <= 1e-12);
      previous = e;
      detail += " " + fmt("%.4f", e);
    }
    double worst_const = 0.0;
    for (std::size_t n : {4u, 5u, 8u, 16u, 32u, 64u}) {
      worst_const = std::max(worst_const, reconstruction_error(n, [](double) { return 2.5; }));
    }
    ok = ok && worst_const < 0.05;
    return Outcome{ok, detail + "; constant worst " + fmt("%.4f", worst_const)};
  });

  criterion("loss identities", 0, [] {
    SeededRng rng(77);
    double identity = 0.0, self_kl = 0.0, min_kl = INFINITY;
    for (int i = 0; i < 1000; ++i) {
      const std::size_t n = 2 + rng.next_u64() % 40;
      const Distribution p = random_distribution(rng, n), q = random_distribution(rng, n);
      identity = std::max(identity, std::abs(cross_entropy(p, q) - entropy(p) - kl_divergence(p, q)));
      self_kl = std::max(self_kl, std::abs(kl_divergence(p, p)));
      min_kl = std::min(min_kl, kl_divergence(p, q));
    }
    const Matrix uniform(3, 256, 0.0);
    const double uni = std::abs(sequence_lm_loss(uniform, std::vector<TokenId>{0, 128, 255}) - std::log(256.0));
    const bool ok = identity <= 1e-10 && self_kl <= 1e-12 && min_kl > 0.0 && uni <= 1e-12;
    return Outcome{ok, "CE-H-KL " + fmt("%.1e", identity) + ", KL(p,p) " + fmt("%.1e", self_kl) + ", min KL(p,q) " +
                           fmt("%.2e", min_kl) + ", uniform " + fmt("%.1e", uni)};
  });

  criterion("loss-perplexity consistency", 0, [] {
    const double ppl = perplexity(1.83);
    const bool ok = std::abs(ppl - 6.2339) < 5e-5 && std::round(ppl * 10.0) / 10.0 == 6.2;
    return Outcome{ok, "exp(1.83) = " + fmt("%.6f", ppl) + " -> 6.2 at two significant figures"};
  });

  criterion("gradient verification", 120.0, [] {
    HybridModel m = activate_extensions(init_model(ModelConfig{}), 99);
    m.trainable_mask = TrainableMask{true, true, true};
    const TrainBatch batch = copy_task_batch(m.config.max_seq_len);
    const GradCheckReport clean = grad_check(m, batch);
    std::set<std::string> classes;
    for (const auto& e : clean.entries) classes.insert(e.parameter.substr(e.parameter.rfind('.') + 1));
    const bool all_classes = classes == std::set<std::string>{"gate", "w_in", "c_out", "w_out", "a", "b"};

    // Coordinates large enough that finite-difference roundoff is negligible
    // must meet the relative bound on their own, without the fallback.
    double max_abs = 0.0, max_rel_large = 0.0;
    std::size_t large = 0;
    for (const auto& e : clean.entries) {
      max_abs = std::max(max_abs, e.abs_error);
      if (std::abs(e.analytic) >= 1e-6) {
        max_rel_large = std::max(max_rel_large, e.rel_error);
        ++large;
      }
    }

    GradCheckOptions faulty;
    faulty.gradient_fault_scale = 2.0;
    const GradCheckReport fault = grad_check(m, batch, faulty);
    const bool ok =
        clean.passed && all_classes && max_rel_large < 1e-4 && !fault.passed && !fault.failures.empty();
    return Outcome{ok, std::to_string(clean.entries.size()) + " coords over " + std::to_string(classes.size()) +
                           " classes, max abs " + fmt("%.1e", max_abs) + ", max rel " + fmt("%.1e", max_rel_large) +
                           " on " + std::to_string(large) + " coords with |g| >= 1e-6; x2 fault flagged " +
                           std::to_string(fault.failures.size()) + " coords"};
  });

  criterion("training smoke + evaluation", 300.0, [] {
    const ModelConfig c;
    const HybridModel base = init_model(c);
    HybridModel trained = base;
    const TrainBatch batches[] = {copy_task_batch(c.max_seq_len)};
    const TrainReport r = train(trained, batches, TrainOptions{200, 1e-2});
    const double decrease = 1.0 - r.final_loss / r.initial_loss;

    const auto texts = std::vector<std::string>{"the quick brown fox jumps over the lazy dog", "aaaaaaaabbbbbbbb",
                                                "state space models remember the past"};
    const ProbeSet probes = probes_from_texts("probes", texts, c.max_seq_len);
    const DivergenceReport after = divergence_eval(trained, base, probes);
    const DivergenceReport fresh = divergence_eval(init_model(c), base, probes);

    const auto frozen = backbone_parameters(*trained.backbone);
    const auto reference = backbone_parameters(init_backbone(c));
    bool unchanged = frozen.size() == reference.size();
    for (std::size_t i = 0; unchanged && i < frozen.size(); ++i) unchanged = frozen[i].values == reference[i].values;

    const bool ok = decrease >= 0.10 && after.mean_kl > 0.0 && fresh.mean_kl == 0.0 && fresh.identical_models &&
                    unchanged;
    return Outcome{ok, "loss " + fmt("%.4f", r.initial_loss) + " -> " + fmt("%.4f", r.final_loss) + " (" +
                           fmt("%.1f", 100 * decrease) + "%), KL trained " + fmt("%.4f", after.mean_kl) +
                           ", KL init " + fmt("%g", fresh.mean_kl) + (fresh.identical_models ? " flagged" : " unflagged") +
                           ", backbone " + (unchanged ? "bit-unchanged" : "CHANGED")};
  });

  criterion("gate audit finding pattern", 0, [] {
    ModelConfig c;
    c.sidecar_layers = {0, 1, 2};
    const HybridModel m = init_model(c, InitOptions{TrainableMask{}, std::vector<double>{0.0, 0.01, 1.0}});
    const auto v = gate_audit(m);
    const bool ok = v.size() == 2 && v[0].actual == 1.0 && v[1].actual == 0.01 && v[0].severity > v[1].severity;
    std::string detail = std::to_string(v.size()) + " violations";
    for (const auto& x : v) detail += ", gate " + fmt("%g", x.actual) + " severity " + fmt("%g", x.severity);
    return Outcome{ok, detail};
  });

  criterion("budget gate", 0, [] {
    const BudgetDecision run = budget_gate(25908, 0.62, 20.0);
    const BudgetDecision over = budget_gate(25908, 0.62, 16.0);
    const bool ok = run.passed && std::round(run.projected_cost) == 16.0 && !over.passed;
    return Outcome{ok, "projected " + fmt("%.5f", run.projected_cost) + " vs cap 20 " + (run.passed ? "pass" : "fail") +
                           "; vs cap 16 " + (over.passed ? "pass" : "fail")};
  });

  criterion("ics formula", 0, [] {
    const double top = ics::ics_score(uniform_suite(5, 5, 5), true).composite;
    const double bottom = ics::ics_score(uniform_suite(1, 1, 1), true).composite;
    const double mid = ics::ics_score(uniform_suite(4, 3, 5), true).composite;
    auto s = uniform_suite(1, 1, 1);
    for (std::size_t k = 0; k < s.size(); ++k) {
      s[k].consistency = 1 + static_cast<int>(k % 5);
      s[k].engagement = 1 + static_cast<int>((k / 3) % 5);
      s[k].reasoning = 5 - static_cast<int>(k % 4);
    }
    const double ref = ics::ics_score(s, true).composite;
    std::mt19937_64 shuffler(11);
    bool invariant = true;
    for (int i = 0; i < 100; ++i) {
      std::shuffle(s.begin(), s.end(), shuffler);
      invariant = invariant && ics::ics_score(s, true).composite == ref;
    }
    const bool ok = top == 100.0 && bottom == 20.0 && mid == 80.0 && invariant;
    return Outcome{ok, fmt("%.1f", top) + " / " + fmt("%.1f", bottom) + " / " + fmt("%.1f", mid) +
                           ", 100 shuffles " + (invariant ? "invariant" : "VARIED")};
  });

  criterion("determinism", 0, [] {
    sidecar::testing::TempDir dir("acceptance");
    const std::string a = (dir / "a.bin").string(), b = (dir / "b.bin").string();
    const std::string cfg = std::string(SIDECAR_DATA_DIR) + "/config.json";
    std::ostringstream out, err;
    const int ra = cli::dispatch({"model-init", "--config", cfg, "--out", a}, out, err);
    const int rb = cli::dispatch({"model-init", "--config", cfg, "--out", b}, out, err);
    const bool same_file = ra == 0 && rb == 0 && slurp(a) == slurp(b);

    const HybridModel m = activate_extensions(load_model(a), 5);
    save_model(m, dir / "m.bin");
    const HybridModel back = load_model(dir / "m.bin");
    const auto tokens = sidecar::testing::token_ramp(40, 256);
    const bool same_logits = sidecar::testing::bit_equal(forward(m, tokens), forward(back, tokens));
    return Outcome{same_file && same_logits, std::string("model-init files ") + (same_file ? "identical" : "DIFFER") +
                                                 ", round-trip logits " + (same_logits ? "bit-identical" : "DIFFER")};
  });

  std::printf("%d criteria failed\n", g_failures);
  return g_failures;
}
