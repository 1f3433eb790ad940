#include "doctest.h"
#include "wrenchfield/datagen.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

using namespace wrenchfield;

namespace {

TokenizedRollout synthetic_rollout(int frames, int event_begin, int event_end, int region) {
  TokenizedRollout r;
  r.obs = MatF::Random(frames, 21);
  r.wrench = MatF::Zero(frames, 21);
  for (int k = event_begin; k <= event_end; ++k) r.wrench.row(k).segment<3>(3 * region) << 10.0f, -5.0f, 1.0f;
  r.mask = derive_mask(r.wrench, 7, 3);
  return r;
}

std::string read_bytes(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("contact sampler statistics") {
  const RobotModel m = planar_humanoid_fixture();
  SamplerConfig cfg;
  Rng rng(42);
  const int n = 100000;
  double lo = 1e9, hi = -1e9, sum = 0.0;
  std::vector<int> hist(7, 0);
  for (int i = 0; i < n; ++i) {
    const ContactEvent ev = sample_contact(rng, cfg, m);
    const double mag = ev.force.norm();
    lo = std::min(lo, mag);
    hi = std::max(hi, mag);
    sum += mag;
    ++hist[ev.region];
    CHECK_MESSAGE(ev.duration >= 0.1, "duration");
    if (ev.duration > 0.4 || ev.start < 0.0 || ev.start + ev.duration > cfg.episode) FAIL("event outside episode");
  }
  CHECK(lo >= 30.0);
  CHECK(hi <= 100.0);
  CHECK(sum / n == doctest::Approx(65.0).epsilon(1.0 / 65.0));
  const double p = 1.0 / 7.0, sd = std::sqrt(n * p * (1 - p));
  for (int c : hist) CHECK(std::abs(c - n * p) < 3 * sd);

  SamplerConfig fixed;
  fixed.force_min = fixed.force_max = 50.0;
  for (int i = 0; i < 100; ++i) CHECK(sample_contact(rng, fixed, m).force.norm() == doctest::Approx(50.0).epsilon(1e-12));
}

TEST_CASE("simultaneous contacts use distinct regions") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(3);
  for (int k = 1; k <= 5; ++k) {
    const auto evs = sample_simultaneous(rng, SamplerConfig{}, m, k);
    REQUIRE(evs.size() == static_cast<std::size_t>(k));
    std::set<int> regions;
    for (const auto& e : evs) {
      regions.insert(e.region);
      CHECK(e.start == evs[0].start);
    }
    CHECK(regions.size() == static_cast<std::size_t>(k));
  }
  CHECK_THROWS_AS(sample_simultaneous(rng, SamplerConfig{}, m, 8), DataError);
}

TEST_CASE("impedance-normalized torque") {
  PDGains g{Eigen::VectorXd::Constant(1, 80.0), Eigen::VectorXd::Constant(1, 2.0)};
  CHECK(impedance_normalized_torque(Eigen::VectorXd::Constant(1, 13.0), g, 0.3, 1.0, 1e-3)(0) ==
        doctest::Approx(13.0 / 26.001));
  CHECK(impedance_normalized_torque(Eigen::VectorXd::Zero(1), g, 0.3, 1.0, 1e-3)(0) == 0.0);
  PDGains pure{Eigen::VectorXd::Constant(1, 80.0), Eigen::VectorXd::Zero(1)};
  CHECK(impedance_normalized_torque(Eigen::VectorXd::Constant(1, 24.0), pure, 0.3, 1.0, 1e-12)(0) ==
        doctest::Approx(1.0));
}

TEST_CASE("observation tokens") {
  const RobotModel m = planar_humanoid_fixture();
  const ObservationConfig cfg;
  const PDGains g = default_gains(m);
  RawFrame raw{m.q_default, Eigen::VectorXd::Zero(6), 0.0, 0.0, Eigen::VectorXd::Zero(6), Eigen::VectorXd::Zero(6)};
  const auto L = observation_layout(m, cfg);
  CHECK(L.dim() == 21);
  SUBCASE("rest posture") {
    const Eigen::VectorXd o = build_observation(m, raw, cfg, g);
    Eigen::VectorXd expect = Eigen::VectorXd::Zero(21);
    expect(L.gdir() + 1) = -1.0;
    CHECK((o - expect).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("joint velocity weight") {
    raw.qd_joint(3) = 2.0;
    CHECK(build_observation(m, raw, cfg, g)(L.qd() + 3) == doctest::Approx(0.1));
  }
  SUBCASE("quarter-turn pitch") {
    raw.pitch = M_PI / 2;
    const Eigen::VectorXd o = build_observation(m, raw, cfg, g);
    CHECK(o(L.gdir()) == doctest::Approx(-1.0));
    CHECK(std::abs(o(L.gdir() + 1)) < 1e-12);
  }
  SUBCASE("noiseless tokens invert to raw signals") {
    Rng rng(1);
    std::normal_distribution<double> n(0.0, 1.0);
    for (int i = 0; i < 6; ++i) {
      raw.q_joint(i) += 0.2 * n(rng);
      raw.qd_joint(i) = n(rng);
      raw.tau(i) = 20 * n(rng);
    }
    raw.omega = 0.4;
    raw.pitch = -0.3;
    const RawFrame back = decode_observation(m, build_observation(m, raw, cfg, g), cfg, g);
    CHECK((back.q_joint - raw.q_joint).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.qd_joint - raw.qd_joint).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((back.tau - raw.tau).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(back.omega == doctest::Approx(0.4));
    CHECK(back.pitch == doctest::Approx(-0.3));
  }
  SUBCASE("command channel") {
    ObservationConfig c2 = cfg;
    c2.include_command = true;
    raw.command = Eigen::VectorXd::Constant(6, 0.05);
    const Eigen::VectorXd o = build_observation(m, raw, c2, g);
    CHECK(o.size() == 27);
    CHECK(o.tail(6).isApproxToConstant(0.05));
  }
}

TEST_CASE("windowing and labels") {
  SUBCASE("window count") {
    const auto r = synthetic_rollout(100, 60, 70, 3);
    const auto clips = windowize(r, 50, 50);
    REQUIRE(clips.size() == 2);
    CHECK_FALSE(clips[0].positive);
    CHECK(clips[1].positive);
    for (int t = 0; t < 50; ++t)
      for (int i = 0; i < 7; ++i) {
        const bool on = (i == 3) && (t + 50 >= 60) && (t + 50 <= 70);
        CHECK((clips[1].wrench.row(t).segment<3>(3 * i).norm() > 0) == on);
        CHECK((clips[1].mask(t, i) == 1.0f) == on);
      }
  }
  SUBCASE("partial overlap counts as positive") {
    const auto r = synthetic_rollout(100, 45, 55, 1);
    const auto clips = windowize(r, 50, 50);
    CHECK(clips[0].positive);
    CHECK(clips[1].positive);
  }
  SUBCASE("too short") { CHECK_THROWS_AS(windowize(synthetic_rollout(30, 0, 0, 0), 50, 10), DataError); }
  SUBCASE("overlapping stride") { CHECK(windowize(synthetic_rollout(400, 0, 0, 0), 50, 10).size() == 36); }
}

TEST_CASE("dataset assembly ratio and determinism") {
  std::vector<Clip> clips;
  const auto pos = synthetic_rollout(50, 10, 20, 2);
  const auto neg = synthetic_rollout(50, 0, -1, 0);
  for (int i = 0; i < 100; ++i) clips.push_back(extract_clip(pos, {i, 0, true}, 50));
  for (int i = 0; i < 1000; ++i) clips.push_back(extract_clip(neg, {100 + i, 0, false}, 50));
  const Dataset ds = assemble_dataset(clips, 9, {}, DatasetHeader{});
  CHECK(ds.size() == 500);
  CHECK(ds.header.positive_count == 100);
  std::int64_t p = 0;
  for (std::int64_t i = 0; i < ds.size(); ++i) p += ds.positive(i);
  CHECK(p == 100);

  const auto a = tmp("wf_a.wsds"), b = tmp("wf_b.wsds");
  write_dataset(a.string(), ds);
  write_dataset(b.string(), assemble_dataset(clips, 9, {}, DatasetHeader{}));
  CHECK(read_bytes(a) == read_bytes(b));
  std::filesystem::remove(a);
  std::filesystem::remove(b);

  std::vector<Clip> none(clips.begin() + 100, clips.end());
  try {
    assemble_dataset(none, 1, {}, DatasetHeader{});
    FAIL("expected error");
  } catch (const DataError& e) {
    CHECK(std::string(e.what()) == "no positive clips");
  }
  std::vector<Clip> few(clips.begin(), clips.begin() + 150);
  CHECK_THROWS_AS(assemble_dataset(few, 1, {}, DatasetHeader{}), DataError);
  AssemblyOptions rep;
  rep.repeat_minority = true;
  const Dataset r = assemble_dataset(few, 1, rep, DatasetHeader{});
  CHECK(r.size() == 500);
  CHECK(r.header.negatives_repeated);
}

TEST_CASE("dataset file round trip and corruption") {
  const auto r = synthetic_rollout(600, 60, 75, 4);
  Dataset ds = assemble_dataset(windowize(r, 50, 10), 2, {}, DatasetHeader{});
  ds.header.meta["tier"] = "good";
  const auto path = tmp("wf_rt.wsds");
  write_dataset(path.string(), ds);
  const Dataset back = read_dataset(path.string());
  CHECK(back.header == ds.header);
  CHECK(back.obs == ds.obs);
  CHECK(back.wrench == ds.wrench);
  CHECK(back.mask == ds.mask);

  std::string bytes = read_bytes(path);
  SUBCASE("bad magic") {
    bytes[0] = 'X';
    std::ofstream(path, std::ios::binary) << bytes;
    try {
      read_dataset(path.string());
      FAIL("expected error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find("bad magic") != std::string::npos);
    }
  }
  SUBCASE("truncated body") {
    const std::size_t record = 4 * 50 * (21 + 21 + 7);
    std::ofstream(path, std::ios::binary) << bytes.substr(0, bytes.size() - record);
    try {
      read_dataset(path.string());
      FAIL("expected error");
    } catch (const DataError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("expected " + std::to_string(ds.size()) + " records, found " + std::to_string(ds.size() - 1)) !=
            std::string::npos);
    }
  }
  SUBCASE("extra records") {
    std::ofstream(path, std::ios::binary) << bytes << bytes.substr(bytes.size() - 4 * 50 * 49);
    CHECK_THROWS_WITH_AS(read_dataset(path.string()), doctest::Contains("count mismatch"), DataError);
  }
  std::filesystem::remove(path);
}

TEST_CASE("domain randomization") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(5);
  SUBCASE("identity ranges leave the model unchanged") {
    const auto w = domain_randomize(m, {}, rng, RandomizationRanges{});
    CHECK(w.model == m);
    CHECK(w.ground.friction == GroundContactConfig{}.friction);
  }
  SUBCASE("mass scale mean") {
    RandomizationRanges r;
    r.mass[0] = 0.9;
    r.mass[1] = 1.1;
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) {
      const auto w = domain_randomize(m, {}, rng, r);
      sum += w.model.bodies[0].mass / m.bodies[0].mass;
      if (i < 20) CHECK_NOTHROW(validate(w.model));
    }
    CHECK(sum / 10000 == doctest::Approx(1.0).epsilon(0.01));
  }
  SUBCASE("non-positive mass range") {
    RandomizationRanges r;
    r.mass[0] = 0.0;
    CHECK_THROWS_AS(domain_randomize(m, {}, rng, r), DataError);
  }
}

TEST_CASE("observation noise injection") {
  const RobotModel m = planar_humanoid_fixture();
  const auto L = observation_layout(m, ObservationConfig{});
  MatF w = MatF::Zero(50, 21);
  w.col(L.gdir() + 1).setConstant(-1.0f);
  Rng rng(8);
  CHECK(inject_noise(w, L, NoiseSigma{}, rng) == w);
  NoiseSigma s;
  s.q = 0.01;
  s.gdir = 0.05;
  double sum2 = 0.0;
  long count = 0;
  for (int rep = 0; rep < 334; ++rep) {
    const MatF n = inject_noise(w, L, s, rng);
    sum2 += n.leftCols(6).cast<double>().squaredNorm();
    count += n.rows() * 6;
    for (int t = 0; t < n.rows(); ++t) CHECK(n.row(t).segment<2>(L.gdir()).norm() == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(n.col(L.qd()).cwiseAbs().maxCoeff() == 0.0f);
  }
  CHECK(count >= 100000);
  CHECK(std::sqrt(sum2 / count) == doctest::Approx(0.01).epsilon(0.05));
}

TEST_CASE("generated rollouts: labels reconstruct the applied events") {
  const RobotModel m = planar_humanoid_fixture();
  GenerationConfig cfg;
  cfg.rollouts = 4;
  cfg.sampler.episode = 3.0;
  cfg.seed = 100;
  cfg.assembly.max_positives = 5;
  const auto gen = generate_rollouts(m, default_gains(m), cfg, true);
  REQUIRE(gen.raw.size() == 4);
  for (std::size_t e = 0; e < gen.raw.size(); ++e) {
    const Rollout& r = gen.raw[e];
    const ContactEvent& ev = gen.events[e].at(0);
    for (int k = 0; k < r.n_frames; ++k) {
      const Kinematics kin = compute_kinematics(m, r.state(k));
      Eigen::VectorXd expect = Eigen::VectorXd::Zero(21);
      if (ev.active(k * r.frame_dt)) expect.segment<3>(3 * ev.region) = event_region_wrench(m, kin, ev);
      CHECK((r.wrench.row(k).transpose() - expect).cwiseAbs().maxCoeff() < 1e-12);
      for (int i = 0; i < 7; ++i)
        CHECK((gen.tokens[e].mask(k, i) > 0) == (gen.tokens[e].wrench.row(k).segment<3>(3 * i).norm() > 0));
    }
  }
  const Dataset ds = build_dataset(m, cfg, gen);
  CHECK(ds.size() == 5 * ds.header.positive_count);
  CHECK(ds.header.meta.at("contacts_per_clip") == "1");
}
