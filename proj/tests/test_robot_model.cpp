#include "doctest.h"
#include "test_support.hpp"
#include "wrenchfield/robot_model.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

using namespace wrenchfield;

TEST_CASE("fixture dimensions and structure") {
  const RobotModel m = planar_humanoid_fixture();
  CHECK(m.joint_count() == 6);
  CHECK(m.base_dof == 3);
  CHECK(m.region_count() == 7);
  CHECK(m.wrench_dim() == 3);
  CHECK(m.q_default.size() == 6);
  double sum = 0.0;
  for (const auto& b : m.bodies) sum += b.mass;
  CHECK(m.total_mass() == doctest::Approx(sum));
  CHECK(m.total_mass() == doctest::Approx(30.0).epsilon(0.1));
  for (int b = 0; b < static_cast<int>(m.bodies.size()); ++b) CHECK(m.joint_chain(b).size() <= 2);
  CHECK_NOTHROW(validate(m));
}

TEST_CASE("hop distances along the body tree") {
  const RobotModel m = planar_humanoid_fixture();
  CHECK(m.body_hops(0, 0) == 0);
  CHECK(m.body_hops(0, 1) == 1);
  CHECK(m.body_hops(1, 2) == 2);
  CHECK(m.body_hops(3, 5) == 1);
  CHECK(m.body_hops(5, 6) == 4);
  CHECK(m.body_hops(1, 5) == 3);
}

TEST_CASE("model JSON round trip is the identity") {
  const RobotModel m = planar_humanoid_fixture();
  const auto path = std::filesystem::temp_directory_path() / "wf_model_roundtrip.json";
  save_model(m, path.string());
  const RobotModel back = load_model(path.string());
  CHECK(back == m);
  CHECK(model_to_json_text(back) == model_to_json_text(m));
  std::filesystem::remove(path);
}

TEST_CASE("model validation errors") {
  const auto text = model_to_json_text(planar_humanoid_fixture());
  SUBCASE("non-positive mass names the body") {
    auto j = nlohmann::json::parse(text);
    j["bodies"][3]["mass_kg"] = 0.0;
    try {
      model_from_json_text(j.dump());
      FAIL("expected error");
    } catch (const ModelError& e) {
      CHECK(std::string(e.what()).find("left_thigh") != std::string::npos);
    }
  }
  SUBCASE("joint cycle") {
    auto j = nlohmann::json::parse(text);
    j["joints"][2]["parent_body"] = 5;  // left hip hangs off the left shank
    try {
      model_from_json_text(j.dump());
      FAIL("expected error");
    } catch (const ModelError& e) {
      CHECK(std::string(e.what()).find("joint graph not a tree") != std::string::npos);
    }
  }
  SUBCASE("unknown key reports the field path") {
    auto j = nlohmann::json::parse(text);
    j["joints"][1]["gear_ratio"] = 3;
    try {
      model_from_json_text(j.dump());
      FAIL("expected error");
    } catch (const ModelError& e) {
      CHECK(std::string(e.what()).find("joints[1].gear_ratio") != std::string::npos);
    }
  }
  SUBCASE("malformed file") {
    CHECK_THROWS_AS(model_from_json_text("{\"bodies\": [}"), ModelError);
  }
}

TEST_CASE("CoM-equivalent wrench") {
  const RobotModel m = planar_humanoid_fixture();
  const auto& r = m.regions[3];
  SUBCASE("zero lever arm") {
    const RegionWrench w = com_equivalent_wrench(m, 3, r.body, r.com, Vec2(12.0, -7.0));
    CHECK(w.wrench(2) == 0.0);
    CHECK(w.wrench(0) == 12.0);
    CHECK(w.wrench(1) == -7.0);
  }
  SUBCASE("scalar cross product example") {
    const RegionWrench w = com_equivalent_wrench(m, 3, r.body, r.com + Vec2(0.2, 0.0), Vec2(0.0, -10.0));
    CHECK(w.wrench(0) == doctest::Approx(0.0));
    CHECK(w.wrench(1) == doctest::Approx(-10.0));
    CHECK(w.wrench(2) == doctest::Approx(-2.0));
  }
  SUBCASE("region/body mismatch") {
    CHECK_THROWS_AS(com_equivalent_wrench(m, 3, 0, Vec2::Zero(), Vec2(1, 0)), ModelError);
  }
}
