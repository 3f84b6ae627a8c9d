#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sys/wait.h>

#include "doctest.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kRoot = fs::temp_directory_path() / "geoseg_cli_test";

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

int run(const std::string& args, const std::string& env = "") {
  const std::string cmd = env + " '" + std::string(GEOSEG_CLI_PATH) + "' " + args + " > '" + (kRoot / "stdout.txt").string() +
                          "' 2> '" + (kRoot / "stderr.txt").string() + "'";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string p(const std::string& name) { return "'" + (kRoot / name).string() + "'"; }

}  // namespace

TEST_CASE("end-to-end command line flow") {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  {
    std::ofstream(kRoot / "synth.json") << R"({"benchmark": {"sequences": 1, "unannotated": 1, "generalization": 1, "frames": 8}})";
    std::ofstream(kRoot / "run.json") << R"({"pretrain_steps": 4, "joint_steps": 4, "validate_every": 4})";
  }

  REQUIRE(run("gen-synth --config " + p("synth.json") + " --labeled-fraction 0.25 --seed 3 --out " + p("ds")) == 0);
  CHECK(fs::exists(kRoot / "ds" / "manifest.json"));
  CHECK(slurp(kRoot / "stderr.txt").find("[geoseg gen-synth] config {") != std::string::npos);

  REQUIRE(run("propagate --dataset " + p("ds") + " --seed 3 --occl-threshold 0.05") == 0);
  const json prop = json::parse(slurp(kRoot / "ds" / "propagated" / "report.json"));
  CHECK(prop.contains("pixel_coverage"));

  REQUIRE(run("train --dataset " + p("ds") + " --config " + p("run.json") + " --seed 5 --lambda 0.2 --out " + p("a")) == 0);
  const std::string log = slurp(kRoot / "stderr.txt");
  CHECK(log.find("\"lambda\":0.2") != std::string::npos);
  CHECK(log.find("\"seed\":5") != std::string::npos);
  REQUIRE(run("train --dataset " + p("ds") + " --config " + p("run.json") + " --seed 5 --lambda 0.2 --out " + p("b")) == 0);
  for (const char* f : {"checkpoint.gsck", "report.json", "metrics.jsonl"}) {
    CAPTURE(f);
    CHECK(fs::exists(kRoot / "a" / f));
    CHECK(slurp(kRoot / "a" / f) == slurp(kRoot / "b" / f));
  }
  json ca = json::parse(slurp(kRoot / "a" / "config.json")), cb = json::parse(slurp(kRoot / "b" / "config.json"));
  ca.erase("out");
  cb.erase("out");
  CHECK(ca == cb);

  REQUIRE(run("eval --dataset " + p("ds") + " --checkpoint " + p("a/checkpoint.gsck") + " --split validation --out " +
              p("eval.json")) == 0);
  const json ev = json::parse(slurp(kRoot / "eval.json"));
  CHECK(ev["accuracy"].get<double>() >= 0.0);
  CHECK(ev["accuracy"].get<double>() <= 1.0);

  const json manifest = json::parse(slurp(kRoot / "ds" / "manifest.json"));
  const std::string seq = manifest["frames"][0]["sequence"];
  REQUIRE(run("warp-preview --dataset " + p("ds") + " --source " + seq + "/0 --target " + seq + "/1 --out " + p("wp")) == 0);
  CHECK(fs::exists(kRoot / "wp" / "warped_labels.pgm"));
  CHECK(fs::exists(kRoot / "wp" / "overlay.ppm"));

  CHECK(run("gradcheck --op relu --instances 2 --seed 1") == 0);
  fs::remove_all(kRoot);
}

TEST_CASE("errors give a nonzero exit status") {
  fs::create_directories(kRoot);
  CHECK(run("") != 0);
  CHECK(run("train --no-such-flag") != 0);
  CHECK(run("eval --dataset " + p("missing")) != 0);
  CHECK(run("gradcheck --op relu --instances 1", "GEOSEG_THREADS=0") != 0);
  CHECK(run("gradcheck --op relu --instances 1", "GEOSEG_THREADS=two") != 0);
  CHECK(run("gradcheck --op no_such_op") != 0);
  CHECK(run("warp-preview --dataset " + p("") + " --source a --target b --out " + p("x")) != 0);
  fs::remove_all(kRoot);
}
