#include <doctest.h>

#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "test_support.hpp"

using sidecar::testing::TempDir;

namespace {

const std::string kData = SIDECAR_DATA_DIR;

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = sidecar::cli::dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_text(const std::filesystem::path& p, const std::string& text) { std::ofstream(p) << text; }

const char* kTinyConfig =
    R"({"vocab_size": 256, "d_model": 8, "n_layers": 2, "n_heads": 2, "max_seq_len": 32,
        "sidecar_layers": [0, 1], "ssm_channels": 3, "n_states": 4, "lora_rank": 2, "lora_alpha": 4})";

}  // namespace

TEST_CASE("model-init is byte-identical across runs") {
  TempDir dir("cli_init");
  const auto a = (dir / "a.bin").string(), b = (dir / "b.bin").string();
  CHECK(run({"model-init", "--config", kData + "/config.json", "--out", a}).code == 0);
  CHECK(run({"model-init", "--config", kData + "/config.json", "--out", b}).code == 0);
  CHECK(slurp(a) == slurp(b));
  CHECK(run({"model-init", "--config", kData + "/config.json", "--out", b, "--seed", "2"}).code == 0);
  CHECK(slurp(a) != slurp(b));
}

TEST_CASE("validate on a fresh default model exits 0") {
  TempDir dir("cli_validate");
  const auto m = (dir / "m.bin").string();
  REQUIRE(run({"model-init", "--config", kData + "/config.json", "--out", m}).code == 0);
  const Run r = run({"validate", "--model", m, "--base", m, "--probes", kData + "/probes.jsonl", "--data",
                     kData + "/copy_task.jsonl", "--budget-cap", "20", "--json"});
  CHECK(r.code == 0);
  const auto j = nlohmann::json::parse(r.out);
  CHECK(j["pass"] == true);
  CHECK(j["checks"].size() == 6);
}

TEST_CASE("validate exits 1 when the budget cap is too small") {
  TempDir dir("cli_budget");
  const auto m = (dir / "m.bin").string();
  write_text(dir / "tiny.json", kTinyConfig);
  REQUIRE(run({"model-init", "--config", (dir / "tiny.json").string(), "--out", m}).code == 0);
  const Run r = run({"validate", "--model", m, "--base", m, "--probes", kData + "/probes.jsonl", "--data",
                     kData + "/copy_task.jsonl", "--steps", "40", "--budget-cap", "15"});
  CHECK(r.code == 1);
  CHECK(r.out.find("budget_gate") != std::string::npos);
  CHECK(r.out.find("FAIL") != std::string::npos);
}

TEST_CASE("train then eval-divergence and audit-gates") {
  TempDir dir("cli_train");
  write_text(dir / "tiny.json", kTinyConfig);
  const auto base = (dir / "base.bin").string(), trained = (dir / "trained.bin").string();
  REQUIRE(run({"model-init", "--config", (dir / "tiny.json").string(), "--out", base}).code == 0);

  const Run t = run({"train", "--model", base, "--data", kData + "/copy_task.jsonl", "--steps", "30", "--lr", "0.01",
                     "--out", trained, "--json"});
  REQUIRE(t.code == 0);
  const auto report = nlohmann::json::parse(t.out);
  CHECK(report["final_loss"].get<double>() < report["initial_loss"].get<double>());
  CHECK(report["loss_curve"].size() == 30);

  const Run d = run({"eval-divergence", "--model", trained, "--base", base, "--probes", kData + "/probes.jsonl",
                     "--json"});
  REQUIRE(d.code == 0);
  const auto div = nlohmann::json::parse(d.out);
  CHECK(div["mean_kl"].get<double>() > 0.0);
  CHECK(div["identical_models"] == false);

  const Run same = run({"eval-divergence", "--model", base, "--base", base, "--probes", kData + "/probes.jsonl"});
  CHECK(same.code == 0);
  CHECK(same.out.find("identical models") != std::string::npos);

  CHECK(run({"audit-gates", "--model", trained}).code == 0);

  // Reversed roles: the trained model is not a valid base.
  const Run rev = run({"eval-divergence", "--model", base, "--base", trained, "--probes", kData + "/probes.jsonl"});
  CHECK(rev.code == 4);
  CHECK(rev.err.find("not a base reference") != std::string::npos);
}

TEST_CASE("audit-gates reports mis-initialized gates with exit 1") {
  TempDir dir("cli_audit");
  const auto m = (dir / "m.bin").string();
  REQUIRE(run({"model-init", "--out", m, "--gate-init", "0.01,1.0"}).code == 0);
  const Run r = run({"audit-gates", "--model", m, "--json"});
  CHECK(r.code == 1);
  const auto j = nlohmann::json::parse(r.out);
  REQUIRE(j["violations"].size() == 2);
  CHECK(j["violations"][0]["actual"] == 1.0);
  CHECK(run({"audit-gates", "--model", m, "--tolerance", "0.02"}).code == 1);
  CHECK(run({"audit-gates", "--model", m, "--tolerance", "1.5"}).code == 0);
}

TEST_CASE("ics-score: strict suite, 49 records, JSON") {
  const Run ok = run({"ics-score", "--in", kData + "/scores.jsonl", "--strict", "--json"});
  REQUIRE(ok.code == 0);
  CHECK(nlohmann::json::parse(ok.out)["composite"].get<double>() == doctest::Approx(84.8));

  TempDir dir("cli_ics");
  std::ifstream in(kData + "/scores.jsonl");
  std::ofstream out(dir / "short.jsonl");
  std::string line;
  for (int i = 0; i < 49 && std::getline(in, line); ++i) out << line << "\n";
  out.close();

  const Run strict = run({"ics-score", "--in", (dir / "short.jsonl").string(), "--strict"});
  CHECK(strict.code != 0);
  const auto err = nlohmann::json::parse(strict.err);
  REQUIRE(err["error"]["issues"].size() == 1);
  CHECK(err["error"]["issues"][0].get<std::string>().find("expected 50") != std::string::npos);

  CHECK(run({"ics-score", "--in", (dir / "short.jsonl").string()}).code == 0);
}

TEST_CASE("hippo-demo emits a CSV reconstruction") {
  const Run r = run({"hippo-demo", "--n-states", "32", "--points", "25"});
  REQUIRE(r.code == 0);
  std::istringstream lines(r.out);
  std::string header;
  std::getline(lines, header);
  CHECK(header == "t,input,reconstruction");
  int rows = 0;
  for (std::string l; std::getline(lines, l);) ++rows;
  CHECK(rows == 25);
  CHECK(run({"hippo-demo", "--variant", "PaperEq1"}).code == 4);
}

TEST_CASE("errors map to documented exit codes") {
  TempDir dir("cli_errors");
  const Run unknown = run({"frobnicate"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("\"usage\"") != std::string::npos);
  CHECK(run({"model-init", "--out", (dir / "x.bin").string(), "--bogus"}).code == 2);
  CHECK(run({}).code == 2);
  CHECK(run({"train", "--model", (dir / "missing.bin").string(), "--data", kData + "/copy_task.jsonl", "--out",
             (dir / "o.bin").string()})
            .code == 3);
  CHECK(run({"model-init"}).code == 2);

  write_text(dir / "junk.bin", "SIDECARM not really a model");
  CHECK(run({"audit-gates", "--model", (dir / "junk.bin").string()}).code == 4);

  write_text(dir / "bad.json", R"({"d_model": 10, "n_heads": 4})");
  CHECK(run({"model-init", "--config", (dir / "bad.json").string(), "--out", (dir / "x.bin").string()}).code == 4);

  write_text(dir / "bad.jsonl", "{\"bytes\": \"ok\"}\nnot json\n");
  const auto m = (dir / "m.bin").string();
  REQUIRE(run({"model-init", "--out", m}).code == 0);
  const Run bad_data = run({"train", "--model", m, "--data", (dir / "bad.jsonl").string(), "--out", m});
  CHECK(bad_data.code == 4);
  CHECK(bad_data.err.find(":2:") != std::string::npos);
}
