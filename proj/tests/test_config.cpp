#include "doctest.h"
#include "json.hpp"
#include "wrenchfield/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>

using namespace wrenchfield;
using json = nlohmann::json;

namespace {

std::string error_of(const std::string& text) {
  try {
    config_from_json(text);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return {};
}

}  // namespace

TEST_CASE("empty document resolves to the defaults") {
  const ExperimentConfig def;
  CHECK(config_to_json(config_from_json("{}")) == config_to_json(def));
  CHECK(def.test_generation.seed != def.train_generation.seed);
}

TEST_CASE("resolved configuration round-trips") {
  auto c = config_from_json(R"({"seed": 9, "cfm": {"d_model": 64, "train": {"lr": 0.002}},
                                "train_generation": {"tier": "poor", "task": "sway",
                                                     "randomization": {"mass": [0.9, 1.1]}},
                                "sweep": {"sigmas": [0, 0.1]}, "eval": {"top_k": [1, 2, 5]}})");
  CHECK(c.seed == 9);
  CHECK(c.cfm.d_model == 64);
  CHECK(c.cfm.train.lr == doctest::Approx(0.002));
  CHECK(c.train_generation.task == Task::sway);
  CHECK(c.train_generation.randomization.mass[1] == doctest::Approx(1.1));
  CHECK(c.eval.top_k == std::vector<int>{1, 2, 5});
  const std::string text = config_to_json(c);
  CHECK(config_to_json(config_from_json(text)) == text);
}

TEST_CASE("schema violations name the offending path") {
  CHECK(error_of(R"({"cfm": {"d_modle": 3}})").find("/cfm/d_modle: unknown key") != std::string::npos);
  CHECK(error_of(R"({"seed": -1})").find("/seed") != std::string::npos);
  CHECK(error_of(R"({"cfm": {"layers": 2.5}})").find("/cfm/layers: expected an integer") != std::string::npos);
  CHECK(error_of(R"({"eval": {"delta": "half"}})").find("/eval/delta: expected a number") != std::string::npos);
  CHECK(error_of(R"({"eval": {"delta": 1.5}})").find("/eval/delta") != std::string::npos);
  CHECK(error_of(R"({"train_generation": {"tier": "excellent"}})").find("/train_generation") != std::string::npos);
  CHECK(error_of(R"({"train_generation": {"task": "dance"}})").find("/train_generation/task") != std::string::npos);
  CHECK(error_of(R"({"estimator": "svm"})").find("/estimator") != std::string::npos);
  CHECK(error_of(R"({"sweep": {"sigmas": [0.1]}})").find("/sweep/sigmas") != std::string::npos);
  CHECK(error_of(R"({"train_generation": {"randomization": {"mass": [1.0]}}})").find("mass") != std::string::npos);
  CHECK(error_of("{\"seed\": ").find("malformed JSON") != std::string::npos);
  CHECK(error_of("[1, 2]").find("expected an object") != std::string::npos);
}

TEST_CASE("missing config file is a named error") {
  try {
    load_config("/nonexistent/wf.json");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("/nonexistent/wf.json") != std::string::npos);
  }
}

TEST_CASE("schema covers every resolved key") {
  const json schema = json::parse(config_schema());
  const json cfg = json::parse(config_to_json(ExperimentConfig{}));
  std::function<void(const json&, const json&, const std::string&)> walk = [&](const json& s, const json& v,
                                                                                const std::string& path) {
    if (v.is_object()) {
      REQUIRE_MESSAGE(s.at("type") == "object", path);
      CHECK(s.at("additionalProperties") == false);
      CHECK(s.at("properties").size() == v.size());
      for (const auto& [k, x] : v.items()) walk(s.at("properties").at(k), x, path + "/" + k);
    } else if (v.is_array()) {
      CHECK_MESSAGE(s.at("type") == "array", path);
    } else if (v.is_boolean()) {
      CHECK_MESSAGE(s.at("type") == "boolean", path);
    } else if (v.is_string()) {
      CHECK_MESSAGE(s.at("type") == "string", path);
    } else if (v.is_number_integer()) {
      CHECK_MESSAGE(s.at("type") == "integer", path);
    } else {
      CHECK_MESSAGE(s.at("type") == "number", path);
    }
  };
  walk(schema, cfg, "");
}

TEST_CASE("shipped schema file is current") {
  std::ifstream in(WRENCHFIELD_SOURCE_DIR "/configs/schema.json");
  REQUIRE(in);
  std::stringstream ss;
  ss << in.rdbuf();
  CHECK(ss.str() == config_schema());
}

TEST_CASE("shipped configs parse") {
  for (const char* name : {"smoke.json", "desk.json"}) {
    CAPTURE(name);
    CHECK_NOTHROW(load_config(std::string(WRENCHFIELD_SOURCE_DIR "/configs/") + name));
  }
}

TEST_CASE("architectures follow the dataset header") {
  DatasetHeader h;
  h.obs_dim = 28;
  CfmSettings s;
  s.d_model = 48;
  const auto a = cfm_architecture(s, h);
  CHECK(a.obs_dim == 28);
  CHECK(a.d_model == 48);
  CHECK(a.steps == s.flow_steps);
  const auto m = mlp_architecture(MlpSettings{}, h);
  CHECK(m.obs_dim == 28);
  CHECK(m.input_dim() == 50 * 28);
}
