#include "doctest.h"
#include "wrenchfield/cfm.hpp"
#include "wrenchfield/estimators.hpp"

#include <filesystem>

using namespace wrenchfield;

namespace {

struct ObserverTrace {
  std::vector<double> t;
  std::vector<Eigen::VectorXd> residual;
  std::vector<Eigen::VectorXd> expected;  // true external generalized force
};

/// Standing under PD control with an optional constant point force, observed
/// at the physics rate with the ground force supplied as known input.
ObserverTrace observe_standing(const RobotModel& m, double seconds, double dt, const std::vector<PointForce>& ext,
                               double gain = 50.0) {
  const GroundContactConfig ground;
  const PDGains gains = default_gains(m);
  const ControllerTier tier = tier_from_label("good");
  GeneralizedState x = standing_state(m, ground);
  Eigen::VectorXd tau = pd_torques(m, x, gains, tier);
  MomentumObserverState obs = make_observer(m, gain);
  gmo_update(obs, m, x, tau, dt, Eigen::VectorXd::Zero(m.dof()));
  ObserverTrace tr;
  const long steps = std::lround(seconds / dt);
  for (long k = 0; k < steps; ++k) {
    Eigen::VectorXd gf;
    const Eigen::VectorXd applied = generalized_point_forces(m, x, ext);
    x = step(m, x, tau, ext, ground, dt, {}, &gf);
    tau = pd_torques(m, x, gains, tier);
    tr.residual.push_back(gmo_update(obs, m, x, tau, dt, gf));
    tr.expected.push_back(applied);
    tr.t.push_back((k + 1) * dt);
  }
  return tr;
}

GeneralizedState perturbed_stance(const RobotModel& m, Rng& rng) {
  GeneralizedState x = standing_state(m, GroundContactConfig{});
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (int j = 0; j < m.joint_count(); ++j) x.q_joint(j) += u(rng);
  x.q_base(2) += 0.3 * u(rng);
  for (int i = 0; i < x.v.size(); ++i) x.v(i) = u(rng);
  return x;
}

Eigen::Vector3d random_wrench(Rng& rng) {
  std::uniform_real_distribution<double> mag(30.0, 100.0), ang(-3.14159265358979, 3.14159265358979),
      tq(-5.0, 5.0);
  const double a = ang(rng), f = mag(rng);
  return {f * std::cos(a), f * std::sin(a), tq(rng)};
}

}  // namespace

TEST_CASE("momentum observer: zero residual in free fall from rest") {
  RobotModel m = planar_humanoid_fixture();
  GeneralizedState x = make_state(m, Eigen::Vector3d(0, 1, 0), m.q_default);
  MomentumObserverState obs = make_observer(m);
  const Eigen::VectorXd tau = Eigen::VectorXd::Zero(m.joint_count());
  const Eigen::VectorXd zero = Eigen::VectorXd::Zero(m.dof());
  gmo_update(obs, m, x, tau, 1e-3, zero);
  for (int k = 0; k < 1000; ++k) {
    x = step(m, x, tau, {}, {}, 1e-3, StepOptions{false, true});
    CHECK(gmo_update(obs, m, x, tau, 1e-3, zero).norm() < 1e-6);
  }
}

TEST_CASE("momentum observer: constant torso wrench is recovered within 5% after 5/K_O") {
  const RobotModel m = planar_humanoid_fixture();
  const int torso = m.regions.at(0).body;
  const std::vector<PointForce> ext{{torso, m.regions[0].com, Vec2(40.0, -25.0)}};
  const double gain = 50.0;
  const auto tr = observe_standing(m, 0.3, 1e-3, ext, gain);
  for (std::size_t k = 0; k < tr.t.size(); ++k) {
    if (tr.t[k] < 5.0 / gain - 1e-12) continue;
    const double rel = (tr.residual[k] - tr.expected[k]).norm() / tr.expected[k].norm();
    CHECK(rel < 0.05);
  }
}

TEST_CASE("momentum observer: zero-force residual stays at integration-error level over 10 s") {
  const RobotModel m = planar_humanoid_fixture();
  const auto coarse = observe_standing(m, 10.0, 1e-3, {});
  const auto fine = observe_standing(m, 10.0, 5e-4, {});
  double max_c = 0.0, max_f = 0.0;
  for (const auto& r : coarse.residual) max_c = std::max(max_c, r.norm());
  for (const auto& r : fine.residual) max_f = std::max(max_f, r.norm());
  const double weight = m.total_mass() * kGravity;
  MESSAGE("max |r| dt=1e-3: " << max_c << ", dt=5e-4: " << max_f);
  CHECK(max_c < 0.02 * weight);
  // first order: halving dt roughly halves the bound
  CHECK(max_f < 0.75 * max_c);
}

TEST_CASE("momentum observer: residual trajectory converges at first order in dt") {
  const RobotModel m = planar_humanoid_fixture();
  const std::vector<PointForce> ext{{m.regions.at(3).body, m.regions[3].com, Vec2(-30.0, 10.0)}};
  auto at = [&](double dt) {
    const auto tr = observe_standing(m, 0.2, dt, ext);
    return tr.residual.back();
  };
  const Eigen::VectorXd r1 = at(1e-3), r2 = at(5e-4), r3 = at(2.5e-4);
  const double e12 = (r1 - r2).norm(), e23 = (r2 - r3).norm();
  MESSAGE("successive differences " << e12 << " " << e23 << " ratio " << e12 / e23);
  CHECK(e23 < e12);
  CHECK(e12 / e23 == doctest::Approx(2.0).epsilon(0.35));
}

TEST_CASE("momentum observer rejects bad arguments") {
  const RobotModel m = planar_humanoid_fixture();
  CHECK_THROWS_AS(make_observer(m, 0.0), EstimatorError);
  MomentumObserverState s = make_observer(m);
  const GeneralizedState x = standing_state(m, {});
  CHECK_THROWS_AS(gmo_update(s, m, x, Eigen::VectorXd::Zero(6), 0.0, Eigen::VectorXd::Zero(9)), EstimatorError);
}

TEST_CASE("localization: consistent residual selects the true region and wrench") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(4);
  for (int trial = 0; trial < 20; ++trial) {
    const GeneralizedState x = perturbed_stance(m, rng);
    const int region = trial % m.region_count();
    const Eigen::Vector3d f = random_wrench(rng);
    const Eigen::VectorXd r = region_jacobian(m, x, region).J.transpose() * f;
    const Localization loc = gmo_localize(m, x, r, 1.0);
    CHECK(loc.region == region);
    CHECK(loc.ties.size() == 1);
    CHECK((loc.wrench - f).norm() < 1e-8 * f.norm());
    CHECK(loc.errors(region) < 1e-8 * r.norm());
    CHECK(loc.mask.sum() <= 1.0 + 1e-12);
    CHECK(loc.mask(region) > 0.5);
  }
}

TEST_CASE("localization: zero residual gives a uniform mask and zero wrench") {
  const RobotModel m = planar_humanoid_fixture();
  const GeneralizedState x = standing_state(m, {});
  const Localization loc = gmo_localize(m, x, Eigen::VectorXd::Zero(m.dof()), 1.0);
  CHECK(loc.wrench.isZero());
  CHECK(loc.ties.size() == static_cast<std::size_t>(m.region_count()));
  CHECK(loc.region == 0);
  for (int i = 0; i < m.region_count(); ++i) CHECK(loc.mask(i) == doctest::Approx(loc.mask(0)));
  CHECK(loc.mask(0) < 0.5);
}

TEST_CASE("localization: two regions on one body form a reported tie") {
  RobotModel m = planar_humanoid_fixture();
  SurfaceRegion extra = m.regions.at(0);
  extra.index = m.region_count();
  extra.com += Vec2(0.05, 0.1);
  m.regions.push_back(extra);
  const GeneralizedState x = standing_state(m, {});
  const Eigen::Vector3d f(50.0, 20.0, 1.0);
  const Eigen::VectorXd r = region_jacobian(m, x, extra.index).J.transpose() * f;
  const Localization loc = gmo_localize(m, x, r, 1.0);
  REQUIRE(loc.ties.size() == 2);
  CHECK(loc.ties[0] == 0);
  CHECK(loc.ties[1] == extra.index);
  CHECK(loc.region == 0);  // lowest index wins
  CHECK((region_jacobian(m, x, 0).J.transpose() * loc.wrench - r).norm() < 1e-8 * r.norm());
  CHECK(loc.mask(0) == doctest::Approx(loc.mask(extra.index)));
}

TEST_CASE("particle filter: weights normalized, ESS bounded, resampling keeps the count") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(9);
  CpfConfig cfg;
  ParticleSet set = cpf_init(m.region_count(), cfg, rng);
  CHECK(set.particles.size() == 200);
  CHECK(set.weight_sum() == doctest::Approx(1.0));
  CHECK(set.ess() == doctest::Approx(200.0));
  const GeneralizedState x = perturbed_stance(m, rng);
  const Eigen::VectorXd r = region_jacobian(m, x, 4).J.transpose() * random_wrench(rng);
  for (int k = 0; k < 5; ++k) {
    cpf_step(set, m, x, r, rng, cfg);
    CHECK(set.particles.size() == 200);
    CHECK(set.weight_sum() == doctest::Approx(1.0));
    CHECK(set.ess() > 0.0);
    CHECK(set.ess() <= 200.0 + 1e-9);
    for (const auto& p : set.particles) CHECK(p.weight >= 0.0);
  }
  // skewed weights survive resampling as equal weights
  for (std::size_t i = 0; i < set.particles.size(); ++i) set.particles[i].weight = (i % 7 == 0) ? 1.0 : 1e-3;
  systematic_resample(set, rng);
  CHECK(set.particles.size() == 200);
  CHECK(set.weight_sum() == doctest::Approx(1.0));
  CHECK(set.ess() == doctest::Approx(200.0));
}

TEST_CASE("particle filter: zero residual leaves weights uniform") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(2);
  CpfConfig cfg;
  ParticleSet set = cpf_init(m.region_count(), cfg, rng);
  cpf_step(set, m, standing_state(m, {}), Eigen::VectorXd::Zero(m.dof()), rng, cfg);
  for (const auto& p : set.particles) CHECK(p.weight == doctest::Approx(1.0 / 200));
}

TEST_CASE("particle filter: multi-contact hypotheses use distinct regions") {
  const RobotModel m = planar_humanoid_fixture();
  Rng rng(12);
  CpfConfig cfg;
  cfg.contacts = 2;
  ParticleSet set = cpf_init(m.region_count(), cfg, rng);
  const GeneralizedState x = perturbed_stance(m, rng);
  const Eigen::VectorXd r = region_jacobian(m, x, 1).J.transpose() * random_wrench(rng) +
                            region_jacobian(m, x, 6).J.transpose() * random_wrench(rng);
  for (int k = 0; k < 10; ++k) cpf_step(set, m, x, r, rng, cfg);
  for (const auto& p : set.particles) {
    REQUIRE(p.regions.size() == 2);
    CHECK(p.regions[0] < p.regions[1]);
  }
  const Eigen::VectorXd mass = set.region_mass(m.region_count());
  CHECK(mass.sum() == doctest::Approx(2.0));
  CHECK(mass(1) > 0.5);
  CHECK(mass(6) > 0.5);
  CHECK_THROWS_AS(cpf_init(m.region_count(), CpfConfig{200, 0.5, 0.1, 8}, rng), EstimatorError);
}

TEST_CASE("window baselines emit records the scorer accepts") {
  const RobotModel m = planar_humanoid_fixture();
  GenerationConfig g;
  g.rollouts = 2;
  g.sampler.episode = 3.0;
  g.seed = 55;
  const auto gen = generate_rollouts(m, default_gains(m), g, true);
  const PDGains eff = effective_gains(default_gains(m), tier_from_label("good"));
  const auto& tok = gen.tokens[0];
  const int start = std::max(0, static_cast<int>(gen.events[0][0].start / 0.02) - 10);
  const MatF obs = tok.obs.middleRows(start, 50);
  const WindowSignals w = window_signals(m, gen.raw[0], start, obs, g.observation, eff);
  REQUIRE(w.states.size() == 50);
  // decoded noise-free tokens reproduce the logged state
  CHECK((w.states[5].q_joint - gen.raw[0].q_joint.row(start + 5).transpose()).norm() < 1e-5);
  const auto gp = gmo_predict(m, w, GmoConfig{}, 0.5);
  const auto cp = cpf_predict(m, w, CpfWindowConfig{}, 0.5, 3);
  for (const auto* p : {&gp, &cp}) {
    CHECK_NOTHROW(validate(*p, 50, m.region_count(), m.wrench_dim()));
    CHECK(p->mask.minCoeff() >= 0.0f);
    CHECK(p->mask.maxCoeff() <= 1.0f + 1e-6f);
    CHECK(p->runtime_ms >= 0.0);
  }
  CHECK(gp.estimator == "gmo");
  CHECK(cp.estimator == "cpf");
  CHECK_THROWS_AS(window_signals(m, gen.raw[0], gen.raw[0].n_frames - 10, obs, g.observation, eff), EstimatorError);
}

TEST_CASE("mlp: epoch loss decreases over the first 10 epochs on a 100-clip smoke set") {
  const RobotModel m = planar_humanoid_fixture();
  GenerationConfig g;
  g.rollouts = 20;
  g.sampler.episode = 3.0;
  g.seed = 77;
  g.assembly.max_positives = 20;
  const Dataset ds = build_dataset(m, g, generate_rollouts(m, default_gains(m), g));
  REQUIRE(ds.size() == 100);
  MlpRegressor net(MlpArchitecture{}, 3);
  MlpTrainConfig cfg;
  cfg.batch = 100;  // one step per epoch
  cfg.steps = 10;
  cfg.log_every = 1;
  cfg.warmup = 0;
  cfg.lr = 3e-4;
  cfg.lr_min = 3e-4;
  cfg.seed = 5;
  const auto hist = train_mlp(net, ds, cfg);
  REQUIRE(hist.loss.size() == 10);
  for (std::size_t e = 1; e < hist.loss.size(); ++e) CHECK(hist.loss[e] < hist.loss[e - 1]);

  const auto pred = mlp_predict(net, ds.obs, 0.5);
  REQUIRE(pred.size() == 100);
  CHECK_NOTHROW(score(pred, ds, region_hop_matrix(m)));
}

TEST_CASE("mlp: all-zero data drives outputs to zero and the mask to its prior") {
  Dataset ds;
  ds.header.count = 32;
  ds.resize(32);
  ds.obs.setZero();
  ds.wrench.setZero();
  ds.mask.setZero();
  MlpArchitecture a;
  a.hidden = {64, 64};
  MlpRegressor net(a, 1);
  MlpTrainConfig cfg;
  cfg.steps = 1000;
  cfg.batch = 16;
  cfg.lr = 1e-2;
  cfg.lr_min = 1e-2;
  cfg.warmup = 0;
  train_mlp(net, ds, cfg);
  const auto pred = mlp_predict(net, ds.obs.topRows(1), 0.5);
  CHECK(pred[0].mask.maxCoeff() < 0.05f);
  CHECK(pred[0].wrench.cwiseAbs().maxCoeff() == 0.0f);
  // raw regression output before gating
  nn::Tape<float> tape;
  std::vector<nn::Var> vars;
  for (const auto& p : net.params()) vars.push_back(tape.constant(p.value));
  const auto out = net.forward(tape, vars, tape.constant(Eigen::MatrixXf::Zero(a.input_dim(), 1)));
  CHECK(tape.value(out.first).cwiseAbs().maxCoeff() < 0.05f);
}

TEST_CASE("mlp: checkpoint round trip and dimension errors") {
  MlpArchitecture a;
  a.hidden = {32, 16};
  MlpRegressor net(a, 8);
  const auto path = (std::filesystem::temp_directory_path() / "wf_mlp.wsmf").string();
  save_mlp(net, path, R"({"seed":8})");
  std::string meta;
  const MlpRegressor back = load_mlp(path, &meta);
  CHECK(meta == R"({"seed":8})");
  CHECK(back.arch() == a);
  REQUIRE(back.params().size() == net.params().size());
  for (std::size_t i = 0; i < net.params().size(); ++i) CHECK(back.params()[i].value == net.params()[i].value);
  CHECK_THROWS_AS(load_checkpoint(path), CfmError);
  std::filesystem::remove(path);

  CHECK_THROWS_AS(mlp_predict(net, MatF::Zero(2, 10), 0.5), EstimatorError);
  Dataset wrong;
  wrong.header.obs_dim = 25;
  wrong.resize(2);
  CHECK_THROWS_AS(train_mlp(net, wrong, {}), EstimatorError);
  CHECK_THROWS_AS(mlp_architecture_from_json(R"({"h_win":50})"), EstimatorError);
}
