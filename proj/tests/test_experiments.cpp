#include "doctest.h"
#include "wrenchfield/experiments.hpp"

#include <set>

using namespace wrenchfield;

namespace {

ExperimentConfig tiny_config() {
  ExperimentConfig c;
  c.seed = 3;
  c.train_generation.rollouts = 8;
  c.train_generation.seed = 100;
  c.test_generation.rollouts = 4;
  c.test_generation.seed = 5000;
  c.test_generation.assembly.max_positives = 12;
  c.cfm.d_model = 16;
  c.cfm.layers = 1;
  c.cfm.attn_dim = 8;
  c.cfm.train.steps = 5;
  c.cfm.train.batch = 8;
  c.cfm.train.warmup = 1;
  c.cfm.train.log_every = 5;
  c.mlp.hidden = {32};
  c.mlp.train.steps = 5;
  c.mlp.train.batch = 8;
  c.mlp.train.warmup = 1;
  c.mlp.train.log_every = 5;
  c.baselines.cpf.filter.particles = 30;
  c.baselines.validation.rollouts = 3;
  c.baselines.validation.assembly.max_positives = 6;
  c.robustness.episodes = 3;
  return c;
}

struct Setup {
  ExperimentConfig cfg = tiny_config();
  RobotModel model = planar_humanoid_fixture();
  PDGains gains = default_gains(model);
};

}  // namespace

TEST_CASE("every estimator emits records the scorer accepts") {
  Setup s;
  const EvalSet set = make_eval_set(s.model, s.gains, s.cfg.test_generation);
  REQUIRE(set.refs.size() == static_cast<std::size_t>(set.data.size()));
  const Dataset train = build_dataset(s.model, s.cfg.train_generation,
                                      generate_rollouts(s.model, s.gains, s.cfg.train_generation));
  const auto cfm = fit_cfm(train, s.cfg.cfm, 0.5);
  const auto mlp = fit_mlp(train, s.cfg.mlp);
  EstimatorBank bank;
  bank.cfm = &cfm;
  bank.mlp = &mlp;
  bank.cpf = s.cfg.baselines.cpf;
  const auto hops = region_hop_matrix(s.model);
  for (const char* e : {"cfm", "mlp", "gmo", "cpf"}) {
    CAPTURE(e);
    const auto preds = predict(e, bank, s.model, s.gains, set, set.data.obs, 0.5);
    REQUIRE(preds.size() == static_cast<std::size_t>(set.data.size()));
    for (const auto& p : preds) CHECK_NOTHROW(validate(p, 50, 7, 3));
    const auto rep = score(preds, set.data, hops);
    CHECK(rep.detection + rep.miss == doctest::Approx(100.0));
  }
  CHECK_THROWS_AS(predict("svm", bank, s.model, s.gains, set, set.data.obs, 0.5), ExperimentError);
  EvalSet stripped = set;
  stripped.rollouts.raw.clear();
  CHECK_THROWS_AS(predict("gmo", bank, s.model, s.gains, stripped, set.data.obs, 0.5), ExperimentError);
}

TEST_CASE("noisy windows are deterministic and sigma 0 is the identity") {
  Setup s;
  const Dataset ds = build_dataset(s.model, s.cfg.test_generation,
                                   generate_rollouts(s.model, s.gains, s.cfg.test_generation));
  CHECK(noisy_windows(ds, 0.0, 1) == ds.obs);
  const MatF a = noisy_windows(ds, 0.02, 1);
  CHECK(a == noisy_windows(ds, 0.02, 1));
  CHECK(a != noisy_windows(ds, 0.02, 2));
  const double dev = (a - ds.obs).cwiseAbs().mean();
  CHECK(dev > 0.005);
  CHECK(dev < 0.05);
  CHECK_THROWS_AS(noisy_windows(ds, -0.1, 1), ExperimentError);
}

TEST_CASE("noise sweep shape and zero-sigma column") {
  Setup s;
  const EvalSet set = make_eval_set(s.model, s.gains, s.cfg.test_generation);
  EstimatorBank bank;
  bank.cpf = s.cfg.baselines.cpf;
  const std::vector<double> sig{0.0, 0.01, 0.05};
  const auto r = noise_sweep(s.model, s.gains, bank, set, sig, {"gmo", "cpf"}, s.cfg.eval);
  REQUIRE(r.rows.size() == sig.size() * 2);
  CHECK(r.rows[0].sigma == 0.0);
  CHECK(r.rows[0].report.estimator == "gmo");
  const auto clean = score(predict("gmo", bank, s.model, s.gains, set, set.data.obs, s.cfg.eval.delta), set.data,
                           region_hop_matrix(s.model), s.cfg.eval);
  CHECK(metrics_csv_row(r.rows[0].report, false) == metrics_csv_row(clean, false));
  CHECK(r.localization_drop.size() == 2);
  CHECK(r.monotone.size() == 2);
  CHECK(r.localization_drop.at("gmo") == doctest::Approx(r.rows[0].report.localization - r.rows[4].report.localization));
  const std::string md = sweep_markdown(r);
  CHECK(md.find("Monotone degradation") != std::string::npos);
  CHECK(sweep_csv(r) == sweep_csv(noise_sweep(s.model, s.gains, bank, set, sig, {"gmo", "cpf"}, s.cfg.eval)));
  CHECK_THROWS_AS(noise_sweep(s.model, s.gains, bank, set, {0.0}, {"gmo"}, s.cfg.eval), ExperimentError);
}

TEST_CASE("single-contact multi-contact eval reduces to the standard eval") {
  Setup s;
  EstimatorBank bank;
  const auto r = multi_contact_eval(s.model, s.gains, bank, 1, s.cfg.test_generation, {1, 2}, {"gmo"}, s.cfg.eval);
  REQUIRE(r.rows.size() == 2);
  const EvalSet set = make_eval_set(s.model, s.gains, s.cfg.test_generation);
  const auto rep = score(predict("gmo", bank, s.model, s.gains, set, set.data.obs, s.cfg.eval.delta), set.data,
                         region_hop_matrix(s.model), s.cfg.eval);
  CHECK(metrics_csv_row(r.rows[0].report, false) == metrics_csv_row(rep, false));
  CHECK(r.rows[1].contacts == 2);
  CHECK(r.rows[1].report.strict_detection <= r.rows[1].report.detection);
  const std::string md = multi_contact_markdown(r, false);
  CHECK(md.find("Top-1") != std::string::npos);
  CHECK(md.find("Top-3") != std::string::npos);
  CHECK_THROWS_AS(multi_contact_eval(s.model, s.gains, bank, 1, s.cfg.test_generation, {8}, {"gmo"}, s.cfg.eval),
                  ExperimentError);
  CHECK_THROWS_AS(multi_contact_eval(s.model, s.gains, bank, 2, s.cfg.test_generation, {1}, {"gmo"}, s.cfg.eval),
                  ExperimentError);
}

TEST_CASE("identical datasets across tiers give identical metrics") {
  Setup s;
  const Dataset train = build_dataset(s.model, s.cfg.train_generation,
                                      generate_rollouts(s.model, s.gains, s.cfg.train_generation));
  const Dataset test = build_dataset(s.model, s.cfg.test_generation,
                                     generate_rollouts(s.model, s.gains, s.cfg.test_generation));
  std::vector<Dataset> copies(3, train);
  const std::vector<std::string> tiers{"good", "fair", "poor"};
  for (int i = 0; i < 3; ++i) copies[i].header.meta["tier"] = tiers[i];
  const RobustnessReport rob = tier_robustness(s.model, s.gains, s.cfg.train_generation, 3, 0.05, 25);
  const auto r = robustness_ablation(s.model, s.cfg, tiers, {&copies[0], &copies[1], &copies[2]}, {rob, rob, rob},
                                     test);
  REQUIRE(r.tiers.size() == 3);
  for (int i = 1; i < 3; ++i) {
    auto a = r.tiers[0].report, b = r.tiers[i].report;
    a.estimator = b.estimator = "x";
    CHECK(metrics_csv_row(a, false) == metrics_csv_row(b, false));
  }
  CHECK(r.sr_ordered);
  CHECK(r.fa_improves);
  const std::string md = robustness_markdown(r);
  int rows = 0;
  for (std::size_t p = md.find("\n| "); p != std::string::npos; p = md.find("\n| ", p + 1)) ++rows;
  CHECK(rows == 17);  // header plus 16 metric rows
  for (const char* name : {"SR (%)", "ITAE mean", "VioMag mean", "RVR", "Detection rate", "False alarm rate",
                           "Target link", "Tolerant +/-1 link", "Target timestamp", "Tolerant +/-0.1 s",
                           "Distance (links)", "Interval (ms)", "Force mag", "Force dir", "Torque mag", "Torque dir"})
    CHECK_MESSAGE(md.find(name) != std::string::npos, name);
  CHECK_THROWS_AS(robustness_ablation(s.model, s.cfg, {"poor"}, {&copies[0]}, {rob}, test), ExperimentError);
}

TEST_CASE("tier robustness orders on a hard push") {
  Setup s;
  GenerationConfig g = s.cfg.train_generation;
  g.sampler.force_min = 150.0;
  g.sampler.force_max = 150.0;
  g.sampler.duration_min = g.sampler.duration_max = 0.4;
  g.tier = "good";
  const auto good = tier_robustness(s.model, s.gains, g, 6, 0.05, 25);
  g.tier = "poor";
  const auto poor = tier_robustness(s.model, s.gains, g, 6, 0.05, 25);
  CHECK(good.rollouts == 6);
  CHECK(good.sr >= poor.sr);
  CHECK(good.itae_mean < poor.itae_mean);
}

TEST_CASE("command and unified observations differ only in the command columns") {
  Setup s;
  GenerationConfig g = s.cfg.test_generation;
  g.task = Task::sway;
  const Dataset plain = build_dataset(s.model, g, generate_rollouts(s.model, s.gains, g));
  g.observation.include_command = true;
  const Dataset cmd = build_dataset(s.model, g, generate_rollouts(s.model, s.gains, g));
  const int n = s.model.joint_count();
  REQUIRE(cmd.header.obs_dim == plain.header.obs_dim + n);
  REQUIRE(cmd.size() == plain.size());
  CHECK(cmd.wrench == plain.wrench);
  for (int k = 0; k < 50; ++k)
    CHECK(cmd.obs.middleCols(k * cmd.header.obs_dim, plain.header.obs_dim) ==
          plain.obs.middleCols(k * plain.header.obs_dim, plain.header.obs_dim));
}

TEST_CASE("cross-task ablation reports the three estimator groups") {
  Setup s;
  const auto r = cross_task_ablation(s.model, s.gains, s.cfg);
  REQUIRE(r.rows.size() == 6);
  std::set<std::string> groups;
  for (const auto& row : r.rows) groups.insert(row.estimator);
  CHECK(groups == std::set<std::string>{"command", "unified", "single:standing"});
  REQUIRE(r.single_task_shift.count("sway"));
  const std::string md = cross_task_markdown(r);
  CHECK((md.find("| sway | +") != std::string::npos || md.find("| sway | -") != std::string::npos));
}

TEST_CASE("baseline tuning keeps the best grid point") {
  Setup s;
  BaselineSettings b = s.cfg.baselines;
  b.gmo_temperature_grid = {0.1, 1.0, 10.0};
  b.cpf_threshold_grid = {2.0, 20.0};
  const auto t = tune_baselines(s.model, s.gains, b, s.cfg.eval);
  REQUIRE(t.grid.size() == 5);
  double best_gmo = -1e9;
  for (const auto& p : t.grid)
    if (p.estimator == "gmo") best_gmo = std::max(best_gmo, p.objective);
  bool found = false;
  for (const auto& p : t.grid)
    if (p.estimator == "gmo" && p.params.at("temperature") == t.gmo.temperature) found = p.objective == best_gmo;
  CHECK(found);
  CHECK(grid_csv(t.grid).find("temperature=") != std::string::npos);
  const auto none = tune_baselines(s.model, s.gains, s.cfg.baselines, s.cfg.eval);
  CHECK(none.grid.empty());
}

TEST_CASE("concatenation keeps records and counts") {
  Setup s;
  const Dataset a = build_dataset(s.model, s.cfg.test_generation,
                                  generate_rollouts(s.model, s.gains, s.cfg.test_generation));
  const Dataset ab = concat_datasets({&a, &a});
  CHECK(ab.size() == 2 * a.size());
  CHECK(ab.header.positive_count == 2 * a.header.positive_count);
  CHECK(ab.obs.bottomRows(a.size()) == a.obs);
  Dataset bad = a;
  bad.header.obs_dim = 28;
  CHECK_THROWS_AS(concat_datasets({&a, &bad}), ExperimentError);
}
