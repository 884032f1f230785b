#include <doctest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <sstream>

#include <sys/wait.h>

#include "camgauge/bench.hpp"
#include "camgauge/cli.hpp"

using namespace camgauge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("camgauge_cli_" + name);
  fs::remove_all(p);
  return p;
}

struct Run {
  int code;
  std::string out, err;
};

Run run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = dispatch(args, out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> small_gen(const fs::path& out) {
  return {"dataset", "gen", "--out", out.string(), "--seed", "42", "--train-per-class", "4", "--test-per-class",
          "2", "--image-size", "64", "--scale-min", "12", "--scale-max", "32"};
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("dataset gen writes a manifest") {
    const fs::path d = scratch("data");
    const Run r = run(small_gen(d));
    CHECK(r.code == kExitOk);
    CHECK(fs::exists(d / "manifest.json"));
  }

  TEST_CASE("usage errors exit 2") {
    CHECK(run({"eval"}).code == kExitUsage);
    CHECK(run({"eval", "--data", "d"}).code == kExitUsage);
    CHECK(run({"train", "--data", "d", "--out", "o", "--bogus"}).code == kExitUsage);
    CHECK(run({"frobnicate"}).code == kExitUsage);
    CHECK(run({}).code == kExitUsage);
    CHECK(run({"correlate", "--results", "r.jsonl", "--against", "cosine", "--out"}).code == kExitUsage);
  }

  TEST_CASE("runtime failures exit 3") {
    const Run r = run({"correlate", "--results", scratch("none").string() + "/missing.jsonl"});
    CHECK(r.code == kExitRuntimeError);
    CHECK(r.err.find("error:") == 0);
  }

  TEST_CASE("help lists the pipeline flags") {
    const Run r = run({"--help"});
    CHECK(r.code == kExitOk);
    for (const char* flag : {"--seed", "--epochs", "--methods", "--metrics", "--layers", "--refine", "--refine-mode",
                             "--road-fractions", "--limit", "--workers", "--assert", "--backgrounds", "--against"})
      CHECK_MESSAGE(r.out.find(flag) != std::string::npos, std::string(flag));
  }

  TEST_CASE("worker count from the environment") {
    ::setenv("CAMGAUGE_WORKERS", "3", 1);
    CHECK(workers_from_env(1) == 3);
    ::setenv("CAMGAUGE_WORKERS", "zero", 1);
    CHECK(workers_from_env(1) == 1);
    ::unsetenv("CAMGAUGE_WORKERS");
    CHECK(workers_from_env(2) == 2);
  }

  TEST_CASE("train, eval, correlate, report and sanity end to end") {
    const fs::path d = scratch("pipeline_data"), ck = scratch("pipeline_ckpt"), res = scratch("pipeline_res");
    REQUIRE(run(small_gen(d)).code == kExitOk);
    const Run tr = run({"train", "--data", d.string(), "--out", ck.string(), "--epochs", "1", "--seed", "1"});
    REQUIRE(tr.code == kExitOk);
    CHECK(tr.out.find("test accuracy") != std::string::npos);
    CHECK(fs::exists(ck / "model.bin"));
    CHECK(fs::exists(ck / "train_log.json"));

    const std::string log = (res / "results.jsonl").string();
    const Run ev = run({"eval", "--model", ck.string(), "--data", d.string(), "--out", log, "--methods",
                        "gradcam,half", "--metrics", "ad,arcc,cosine", "--limit", "4", "--road-fractions", "0.2,0.6"});
    REQUIRE(ev.code == kExitOk);
    CHECK(ev.out.find("written 24") != std::string::npos);
    CHECK(read_records(log).size() == 24);
    const Run again = run({"eval", "--model", ck.string(), "--data", d.string(), "--out", log, "--methods",
                           "gradcam,half", "--metrics", "ad,arcc,cosine", "--limit", "4"});
    CHECK(again.out.find("written 0, skipped 24") != std::string::npos);

    const Run co = run({"correlate", "--results", log, "--out", (res / "corr.csv").string()});
    CHECK(co.code == kExitOk);
    CHECK(co.out.find("arcc") != std::string::npos);
    CHECK(fs::exists(res / "corr.csv"));

    const Run rp = run({"report", "--results", log, "--out", (res / "report").string()});
    CHECK(rp.code == kExitOk);
    CHECK(fs::exists(res / "report" / "summary.csv"));

    const std::string sanity_log = (res / "sanity.jsonl").string();
    const Run sa = run({"sanity", "--model", ck.string(), "--data", d.string(), "--limit", "3", "--out", sanity_log});
    REQUIRE((sa.code == kExitOk || sa.code == kExitInvariantFailed));
    CHECK(sa.out.find("all1s") != std::string::npos);
    bool all_pass = true;
    for (const auto& c : check_trivial_separation(summarize(read_records(sanity_log)))) all_pass = all_pass && c.passed;
    CHECK((sa.code == kExitOk) == all_pass);
    CHECK((sa.out.find("[FAIL]") == std::string::npos) == all_pass);
  }

  TEST_CASE("the installed binary reports usage errors") {
    const std::string cmd = std::string(CAMGAUGE_CLI_PATH) + " eval > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    CHECK(WEXITSTATUS(status) == kExitUsage);
  }
}
