#include "doctest.h"
#include "geoseg/config.hpp"
#include "geoseg/error.hpp"
#include "json.hpp"

using namespace geoseg;
using nlohmann::json;

TEST_CASE("empty run config keeps every default") {
  const RunConfig c = parse_run_config("", "<none>");
  const TrainConfig d;
  CHECK(c.train.lambda == d.lambda);
  CHECK(c.train.lr == d.lr);
  CHECK(c.train.pretrain_steps == d.pretrain_steps);
  CHECK(c.levels == 3);
  CHECK(c.use_propagation);
  CHECK(c.weight_seed() == c.train.seed);
  const NetConfig n = c.net_config(4, 64, 64);
  CHECK(n == NetConfig{3, 8, 4, 64, 64});
}

TEST_CASE("run config values and round trip through JSON") {
  const RunConfig c = parse_run_config(
      R"({"lambda": 0.5, "lr": 0.001, "pretrain_steps": 10, "joint_steps": 20, "class_weights": [1, 2, 1, 1],
          "seed": 7, "init_seed": 3, "levels": 2, "use_propagation": false})",
      "cfg.json");
  CHECK(c.train.lambda == 0.5f);
  CHECK(c.train.lr == 0.001f);
  CHECK(c.train.class_weights == std::vector<float>{1, 2, 1, 1});
  CHECK(c.weight_seed() == 3);
  CHECK_FALSE(c.use_propagation);
  const std::string text = to_json(c);
  CHECK(json::parse(text)["lr"] == 0.001);
  const RunConfig again = parse_run_config(text, "again");
  CHECK(to_json(again) == text);
}

TEST_CASE("run config errors name the file and the key") {
  const auto message = [](const std::string& text) {
    try {
      parse_run_config(text, "cfg.json");
    } catch (const FormatError& e) {
      return std::string(e.what());
    }
    return std::string("(accepted)");
  };
  CHECK(message(R"({"lamda": 0.1})").find("unknown key 'lamda'") != std::string::npos);
  CHECK(message(R"({"lr": "fast"})").find("cfg.json.lr") != std::string::npos);
  CHECK(message(R"({"lr": -1})").find("cfg.json") != std::string::npos);
  CHECK(message("[1, 2]").find("top level must be an object") != std::string::npos);
  CHECK(message("{").find("cfg.json") != std::string::npos);
}

TEST_CASE("empty synth config is the default desk benchmark") {
  const SynthConfig c = parse_synth_config("", "<none>", 5);
  CHECK(c.annotated.size() == 4);
  CHECK(c.unannotated.size() == 2);
  CHECK(c.generalization.size() == 2);
  CHECK(c.annotated[0].trajectory.frames == 30);
  CHECK(c.options.labeled_fraction == doctest::Approx(1.0 / 30.0));
  // Same seed, same scenes.
  CHECK(to_json(c) == to_json(parse_synth_config("{}", "<none>", 5)));
  CHECK(to_json(c) != to_json(parse_synth_config("{}", "<none>", 6)));
}

TEST_CASE("synth config with explicit scenes and shared noise") {
  const SynthConfig c = parse_synth_config(
      R"({"scenes": [{"role": "annotated", "procedural": true, "name": "kitchen", "frames": 12},
                     {"role": "generalization", "procedural": true, "seed": 99}],
          "depth_noise": 0.01, "labeled_fraction": 0.25})",
      "synth.json", 1);
  REQUIRE(c.annotated.size() == 1);
  CHECK(c.annotated[0].name == "kitchen");
  CHECK(c.annotated[0].trajectory.frames == 12);
  CHECK(c.annotated[0].depth_noise == 0.01);
  CHECK(c.generalization.size() == 1);
  CHECK(c.generalization[0].seed == 99);
  CHECK(c.unannotated.empty());
  // The resolved document describes the same scenes.
  const SynthConfig again = parse_synth_config(to_json(c), "resolved", 12345);
  CHECK(to_json(again) == to_json(c));
}

TEST_CASE("synth config errors") {
  CHECK_THROWS_AS(parse_synth_config(R"({"scenes": [{"role": "train", "procedural": true}]})", "s", 0), FormatError);
  CHECK_THROWS_AS(parse_synth_config(R"({"benchmark": {"sequences": 0}})", "s", 0), FormatError);
  CHECK_THROWS_AS(parse_synth_config(R"({"labeled_fraction": 1.5})", "s", 0), FormatError);
  CHECK_THROWS_AS(parse_synth_config(R"({"scenes": [{"primitives": []}]})", "s", 0), FormatError);
  CHECK_THROWS_AS(parse_synth_config(R"({"benchmark": {"frames": 10, "size": 3}})", "s", 0), FormatError);
}
