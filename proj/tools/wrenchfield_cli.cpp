#include "wrenchfield/experiments.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace wrenchfield;

namespace {

class MissingFile : public std::runtime_error {
 public:
  explicit MissingFile(const std::string& path) : std::runtime_error("file not found: " + path), path_(path) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<double> delta;
  std::optional<int> steps;
  std::string out;
  std::string estimator;
  std::string data;
  std::string model;
  std::string mlp_model;
  std::string pred;
  std::string gt;
  std::string split = "train";
  std::string dataset_out;
  int episodes = 0;
  std::vector<std::string> pretrained;
};

const std::string& need_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError(what + " path not given");
  if (!fs::exists(path)) throw MissingFile(path);
  return path;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream f(p, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + p.string());
  f << text;
  if (!f) throw std::runtime_error("write failed for " + p.string());
}

void log_line(const std::string& s) { std::cerr << s << std::endl; }

/// Context of one run: resolved configuration, fixture and output directory.
struct Run {
  std::string command;
  ExperimentConfig cfg;
  Options opt;
  RobotModel model = planar_humanoid_fixture();
  PDGains gains;
  fs::path out;

  Run(std::string cmd, const Options& o) : command(std::move(cmd)), opt(o) {
    if (!o.config.empty()) cfg = load_config(need_file(o.config, "config"));
    if (o.seed) {
      cfg.seed = *o.seed;
      cfg.cfm.train.seed = *o.seed;
      cfg.mlp.train.seed = *o.seed;
    }
    if (o.delta) cfg.eval.delta = *o.delta;
    if (o.steps) cfg.cfm.flow_steps = *o.steps;
    if (!o.out.empty()) cfg.output_dir = o.out;
    if (!o.estimator.empty()) cfg.estimator = o.estimator;
    if (!o.model.empty()) cfg.model = o.model;
    if (!o.mlp_model.empty()) cfg.mlp_model = o.mlp_model;
    cfg.validate();
    gains = default_gains(model);
    out = cfg.output_dir;
    fs::create_directories(out);
    write_text(out / "config.json", config_to_json(cfg));
    json run{{"command", command}, {"seed", cfg.seed}, {"git_describe", WRENCHFIELD_GIT_DESCRIBE}};
    write_text(out / "run.json", run.dump(2) + "\n");
  }

  void report(const std::string& csv, const std::string& md) const {
    write_text(out / "metrics.csv", csv);
    write_text(out / "report.md", md);
    log_line("wrote " + (out / "report.md").string());
  }

  EstimatorBank bank(std::optional<VelocityField<float>>& cfm, std::optional<MlpRegressor>& mlp,
                     const std::vector<std::string>& needed, int* trained_contacts = nullptr) const {
    EstimatorBank b;
    b.gmo = cfg.baselines.gmo;
    b.cpf = cfg.baselines.cpf;
    b.flow_steps = cfg.cfm.flow_steps;
    b.seed = cfg.seed;
    std::vector<std::string> metas;
    for (const auto& e : needed) {
      std::string meta;
      if (e == "cfm" && !cfm) {
        cfm.emplace(load_checkpoint(need_file(cfg.model, "CFM model"), &meta));
        metas.push_back(meta);
      } else if (e == "mlp" && !mlp) {
        mlp.emplace(load_mlp(need_file(cfg.mlp_model, "MLP model"), &meta));
        metas.push_back(meta);
      }
    }
    if (trained_contacts) {
      *trained_contacts = 1;
      for (const auto& m : metas) {
        const json j = json::parse(m);
        if (!j.contains("train_contacts_per_clip"))
          throw ExperimentError("checkpoint metadata lacks the training contact count");
        const int k = std::stoi(j.at("train_contacts_per_clip").get<std::string>());
        if (k != 1) *trained_contacts = k;
      }
    }
    if (cfm) b.cfm = &*cfm;
    if (mlp) b.mlp = &*mlp;
    return b;
  }

  /// Grid-searched baseline parameters when any grid is configured.
  void tune(EstimatorBank& b) const {
    const TuningResult t = tune_baselines(model, gains, cfg.baselines, cfg.eval, log_line);
    b.gmo = t.gmo;
    b.cpf = t.cpf;
    if (!t.grid.empty()) write_text(out / "grid.csv", grid_csv(t.grid));
    json sel{{"gmo", {{"gain", t.gmo.gain}, {"temperature", t.gmo.temperature}}},
             {"cpf", {{"threshold", t.cpf.threshold}, {"sigma_lik", t.cpf.filter.sigma_lik}, {"gmo_gain", t.cpf.gmo_gain}}}};
    write_text(out / "baseline_params.json", sel.dump(2) + "\n");
  }
};

std::string timing_csv(const std::vector<std::pair<std::string, double>>& rows) {
  std::ostringstream s;
  s << "estimator,runtime_ms_per_window\n";
  for (const auto& [e, t] : rows) s << e << ',' << t << '\n';
  return s.str();
}

// --- subcommands -------------------------------------------------------------------

void cmd_rollout(const Options& o) {
  Run run("rollout", o);
  GenerationConfig g = run.cfg.train_generation;
  if (o.episodes > 0) g.rollouts = o.episodes;
  const auto gen = generate_rollouts(run.model, run.gains, g, true);
  const auto& rs = run.cfg.robustness;
  const RobustnessReport rep = robustness_metrics(gen.raw, rs.recovery_eps, rs.recovery_window);
  std::ostringstream per;
  per << "episode,seed,fell,itae,viomag,t_rec_s\n" << std::setprecision(6);
  for (std::size_t e = 0; e < gen.raw.size(); ++e) {
    const auto one = robustness_metrics(std::vector<Rollout>{gen.raw[e]}, rs.recovery_eps, rs.recovery_window);
    per << e << ',' << g.seed + e << ',' << (gen.raw[e].fell ? 1 : 0) << ',' << one.itae_mean << ','
        << one.viomag_mean << ',' << one.t_rec.front() << '\n';
  }
  write_text(run.out / "episodes.csv", per.str());
  std::ostringstream csv, md;
  csv << std::setprecision(6) << "tier,task,episodes,sr_pct,itae_mean,viomag_mean,rvr\n"
      << g.tier << ',' << task_name(g.task) << ',' << rep.rollouts << ',' << 100 * rep.sr << ',' << rep.itae_mean
      << ',' << rep.viomag_mean << ',' << rep.rvr << '\n';
  md << std::fixed << std::setprecision(3) << "# Controller robustness\n\n| Metric | " << g.tier
     << " |\n|---|---|\n| Episodes | " << rep.rollouts << " |\n| SR (%) | " << 100 * rep.sr << " |\n| ITAE mean | "
     << rep.itae_mean << " |\n| VioMag mean | " << rep.viomag_mean << " |\n| RVR | " << rep.rvr << " |\n";
  run.report(csv.str(), md.str());
}

void cmd_gen_data(const Options& o) {
  Run run("gen-data", o);
  if (o.split != "train" && o.split != "test") throw UsageError("--split must be train or test");
  const GenerationConfig& g = o.split == "train" ? run.cfg.train_generation : run.cfg.test_generation;
  log_line("simulating " + std::to_string(g.rollouts) + " rollouts");
  const auto gen = generate_rollouts(run.model, run.gains, g);
  const Dataset ds = build_dataset(run.model, g, gen);
  std::string path = o.dataset_out;
  if (path.empty()) path = (run.out / (o.split + ".wsds")).string();
  write_dataset(path, ds);
  int fell = 0;
  for (bool f : gen.fell) fell += f;
  std::ostringstream csv, md;
  csv << "split,path,clips,positives,negatives,rollouts,fell,obs_dim\n"
      << o.split << ',' << path << ',' << ds.size() << ',' << ds.header.positive_count << ','
      << ds.size() - ds.header.positive_count << ',' << g.rollouts << ',' << fell << ',' << ds.header.obs_dim << '\n';
  md << "# Dataset\n\n| Field | Value |\n|---|---|\n| Split | " << o.split << " |\n| Clips | " << ds.size()
     << " |\n| Positive clips | " << ds.header.positive_count << " |\n| Rollouts | " << g.rollouts
     << " |\n| Fallen rollouts | " << fell << " |\n| Tier | " << g.tier << " |\n| Task | " << task_name(g.task)
     << " |\n| Contacts per event | " << g.contacts_per_episode << " |\n";
  run.report(csv.str(), md.str());
}

void cmd_train(const Options& o) {
  Run run("train", o);
  const std::string path = o.data.empty() ? run.cfg.train_data : o.data;
  const Dataset ds = read_dataset(need_file(path, "training dataset"));
  std::ostringstream csv, md;
  const std::string meta = training_meta(ds, run.cfg.seed);
  if (run.cfg.estimator == "cfm") {
    TrainHistory h;
    const auto m = fit_cfm(ds, run.cfg.cfm, run.cfg.eval.delta, &h, log_line);
    save_checkpoint(m, (run.out / "model.wsmf").string(), meta);
    csv << "step,total,mask,wrench,consistency,sparsity\n" << std::setprecision(6);
    for (std::size_t i = 0; i < h.steps.size(); ++i)
      csv << h.steps[i] << ',' << h.loss[i].total << ',' << h.loss[i].mask << ',' << h.loss[i].wrench << ','
          << h.loss[i].consistency << ',' << h.loss[i].sparsity << '\n';
    md << "# CFM training\n\n| Field | Value |\n|---|---|\n| Clips | " << ds.size() << " |\n| Steps | "
       << run.cfg.cfm.train.steps << " |\n| Parameters | " << m.params().scalar_count() << " |\n| Final loss | "
       << (h.loss.empty() ? 0.0 : h.loss.back().total) << " |\n";
  } else if (run.cfg.estimator == "mlp") {
    MlpTrainHistory h;
    const auto m = fit_mlp(ds, run.cfg.mlp, &h, log_line);
    save_mlp(m, (run.out / "mlp.wsmf").string(), meta);
    csv << "step,loss\n" << std::setprecision(6);
    for (std::size_t i = 0; i < h.steps.size(); ++i) csv << h.steps[i] << ',' << h.loss[i] << '\n';
    md << "# MLP training\n\n| Field | Value |\n|---|---|\n| Clips | " << ds.size() << " |\n| Steps | "
       << run.cfg.mlp.train.steps << " |\n| Parameters | " << m.params().scalar_count() << " |\n| Final loss | "
       << (h.loss.empty() ? 0.0 : h.loss.back()) << " |\n";
  } else {
    throw UsageError("train supports --estimator cfm or mlp");
  }
  run.report(csv.str(), md.str());
}

void cmd_infer(const Options& o) {
  Run run("infer", o);
  const std::string path = o.data.empty() ? run.cfg.test_data : o.data;
  const Dataset ds = read_dataset(need_file(path, "input dataset"));
  const std::string e = run.cfg.estimator;
  if (e != "cfm" && e != "mlp") throw UsageError("infer supports --estimator cfm or mlp; use baseline for gmo/cpf");
  std::optional<VelocityField<float>> cfm;
  std::optional<MlpRegressor> mlp;
  const EstimatorBank b = run.bank(cfm, mlp, {e});
  const auto preds = e == "cfm" ? predict_cfm(*b.cfm, ds.obs, b.flow_steps, run.cfg.eval.delta, b.seed)
                                : mlp_predict(*b.mlp, ds.obs, run.cfg.eval.delta);
  write_dataset((run.out / "predictions.wsds").string(), predictions_to_dataset(preds, ds, false));
  write_text(run.out / "timing.csv", timing_csv({{e, preds.empty() ? 0.0 : preds.front().runtime_ms}}));
  std::ostringstream md;
  md << "# Inference\n\n| Field | Value |\n|---|---|\n| Estimator | " << e << " |\n| Windows | " << ds.size()
     << " |\n| Flow steps | " << b.flow_steps << " |\n";
  run.report("estimator,windows\n" + e + "," + std::to_string(ds.size()) + "\n", md.str());
}

void cmd_eval(const Options& o) {
  Run run("eval", o);
  const Dataset pred = read_dataset(need_file(o.pred, "prediction dataset (--pred)"));
  const Dataset gt = read_dataset(need_file(o.gt, "ground-truth dataset (--gt)"));
  const auto preds = predictions_from_dataset(pred);
  MetricsReport rep = score(preds, gt, region_hop_matrix(run.model), run.cfg.eval);
  run.report(metrics_csv({rep}, false), metrics_markdown({rep}, "Contact estimation metrics", false));
}

void cmd_baseline(const Options& o) {
  Run run("baseline", o);
  std::vector<std::string> which;
  if (o.estimator.empty()) which = {"gmo", "cpf"};
  else if (o.estimator == "gmo" || o.estimator == "cpf") which = {o.estimator};
  else throw UsageError("baseline supports --estimator gmo or cpf");
  std::optional<VelocityField<float>> cfm;
  std::optional<MlpRegressor> mlp;
  EstimatorBank b = run.bank(cfm, mlp, {});
  run.tune(b);
  const EvalSet set = make_eval_set(run.model, run.gains, run.cfg.test_generation);
  const auto hops = region_hop_matrix(run.model);
  std::vector<MetricsReport> reps;
  std::vector<std::pair<std::string, double>> timing;
  for (const auto& e : which) {
    const auto preds = predict(e, b, run.model, run.gains, set, set.data.obs, run.cfg.eval.delta);
    write_dataset((run.out / (e + "_predictions.wsds")).string(), predictions_to_dataset(preds, set.data, false));
    reps.push_back(score(preds, set.data, hops, run.cfg.eval));
    reps.back().estimator = e;
    timing.emplace_back(e, reps.back().runtime_ms);
  }
  write_dataset((run.out / "test.wsds").string(), set.data);
  write_text(run.out / "timing.csv", timing_csv(timing));
  run.report(metrics_csv(reps, false), metrics_markdown(reps, "Model-based baselines", false));
}

void cmd_sweep_noise(const Options& o) {
  Run run("sweep-noise", o);
  std::optional<VelocityField<float>> cfm;
  std::optional<MlpRegressor> mlp;
  EstimatorBank b = run.bank(cfm, mlp, run.cfg.sweep.estimators);
  run.tune(b);
  const EvalSet set = make_eval_set(run.model, run.gains, run.cfg.test_generation);
  const auto res =
      noise_sweep(run.model, run.gains, b, set, run.cfg.sweep.sigmas, run.cfg.sweep.estimators, run.cfg.eval, log_line);
  json flags;
  for (const auto& [e, d] : res.localization_drop) flags[e] = {{"localization_drop", d}, {"monotone", res.monotone.at(e)}};
  write_text(run.out / "flags.json", flags.dump(2) + "\n");
  run.report(sweep_csv(res), sweep_markdown(res));
}

void cmd_multi_contact(const Options& o) {
  Run run("multi-contact", o);
  std::optional<VelocityField<float>> cfm;
  std::optional<MlpRegressor> mlp;
  int trained = 1;
  EstimatorBank b = run.bank(cfm, mlp, run.cfg.multi_contact.estimators, &trained);
  const auto& est = run.cfg.multi_contact.estimators;
  if (std::find(est.begin(), est.end(), "gmo") != est.end() || std::find(est.begin(), est.end(), "cpf") != est.end())
    run.tune(b);
  const auto res = multi_contact_eval(run.model, run.gains, b, trained, run.cfg.test_generation,
                                      run.cfg.multi_contact.contacts, est, run.cfg.eval, log_line);
  std::ostringstream t;
  t << "contacts,estimator,runtime_ms_per_window\n";
  for (const auto& r : res.rows) t << r.contacts << ',' << r.report.estimator << ',' << r.report.runtime_ms << '\n';
  write_text(run.out / "timing.csv", t.str());
  run.report(multi_contact_csv(res, false), multi_contact_markdown(res, false));
}

void cmd_ablate_robustness(const Options& o) {
  Run run("ablate-robustness", o);
  std::map<std::string, VelocityField<float>> owned;
  for (const auto& spec : o.pretrained) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--pretrained expects tier=path, got '" + spec + "'");
    const std::string tier = spec.substr(0, eq);
    tier_from_label(tier);
    owned.emplace(tier, load_checkpoint(need_file(spec.substr(eq + 1), "pretrained model")));
  }
  std::map<std::string, const VelocityField<float>*> pre;
  for (const auto& [t, m] : owned) pre[t] = &m;
  const auto res = robustness_ablation(run.model, run.gains, run.cfg, pre, log_line);
  run.report(robustness_csv(res), robustness_markdown(res));
}

void cmd_ablate_crosstask(const Options& o) {
  Run run("ablate-crosstask", o);
  const auto res = cross_task_ablation(run.model, run.gains, run.cfg, log_line);
  run.report(cross_task_csv(res), cross_task_markdown(res));
}

std::string category(const std::exception& e) {
  if (dynamic_cast<const MissingFile*>(&e)) return "missing_file";
  if (dynamic_cast<const UsageError*>(&e)) return "usage";
  if (dynamic_cast<const ConfigError*>(&e)) return "config";
  if (dynamic_cast<const DataError*>(&e)) return "data";
  if (dynamic_cast<const CfmError*>(&e) || dynamic_cast<const EstimatorError*>(&e)) return "model";
  if (dynamic_cast<const EvalError*>(&e)) return "eval";
  if (dynamic_cast<const ExperimentError*>(&e)) return "experiment";
  return "runtime";
}

int fail(const std::string& cat, const std::string& msg, const std::string& path = {}) {
  json j{{"error", cat}, {"message", msg}};
  if (!path.empty()) j["path"] = path;
  std::cerr << j.dump() << std::endl;
  return cat == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Contact wrench field estimation: simulation, training, inference and evaluation"};
  app.require_subcommand(0, 1);
  bool print_schema = false;
  app.add_flag("--print-schema", print_schema, "print the configuration JSON schema and exit");
  Options o;

  struct Sub {
    const char* name;
    const char* help;
    void (*fn)(const Options&);
  };
  const std::vector<Sub> subs{
      {"rollout", "simulate episodes and report controller robustness", cmd_rollout},
      {"gen-data", "simulate rollouts and write a clip dataset", cmd_gen_data},
      {"train", "train the CFM or MLP estimator on a dataset", cmd_train},
      {"infer", "run a trained estimator over a dataset and write predictions", cmd_infer},
      {"eval", "score predictions against ground truth", cmd_eval},
      {"baseline", "grid-search and evaluate the GMO and CPF baselines", cmd_baseline},
      {"sweep-noise", "compare estimators under observation noise", cmd_sweep_noise},
      {"multi-contact", "zero-shot evaluation on simultaneous contacts", cmd_multi_contact},
      {"ablate-robustness", "controller-robustness ablation across tiers", cmd_ablate_robustness},
      {"ablate-crosstask", "command-channel, unified and single-task estimators across tasks", cmd_ablate_crosstask},
  };
  std::vector<std::pair<CLI::App*, void (*)(const Options&)>> handlers;
  for (const auto& s : subs) {
    CLI::App* c = app.add_subcommand(s.name, s.help);
    c->add_option("--config", o.config, "experiment configuration (JSON)");
    c->add_option("--seed", o.seed, "master seed");
    c->add_option("--delta", o.delta, "mask threshold");
    c->add_option("--steps", o.steps, "flow integration steps K");
    c->add_option("--out", o.out, "output directory");
    c->add_option("--estimator", o.estimator, "cfm, mlp, gmo or cpf")
        ->check(CLI::IsMember({"cfm", "mlp", "gmo", "cpf"}));
    const std::string n = s.name;
    if (n == "train" || n == "infer") c->add_option("--data", o.data, "dataset path");
    if (n == "infer" || n == "sweep-noise" || n == "multi-contact")
      c->add_option("--model", o.model, "CFM checkpoint");
    if (n == "multi-contact") c->add_option("--mlp-model", o.mlp_model, "MLP checkpoint");
    if (n == "eval") {
      c->add_option("--pred", o.pred, "prediction dataset")->required();
      c->add_option("--gt", o.gt, "ground-truth dataset")->required();
    }
    if (n == "gen-data") {
      c->add_option("--split", o.split, "train or test");
      c->add_option("--dataset", o.dataset_out, "output dataset path");
    }
    if (n == "rollout") c->add_option("--episodes", o.episodes, "episode count");
    if (n == "ablate-robustness") c->add_option("--pretrained", o.pretrained, "tier=checkpoint, repeatable");
    handlers.emplace_back(c, s.fn);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what());
  }
  if (print_schema) {
    std::cout << config_schema();
    return 0;
  }
  if (app.get_subcommands().empty()) return fail("usage", "a subcommand is required (see --help)");
  try {
    for (const auto& [c, fn] : handlers)
      if (c->parsed()) fn(o);
  } catch (const MissingFile& e) {
    return fail("missing_file", e.what(), e.path());
  } catch (const std::exception& e) {
    return fail(category(e), e.what());
  }
  return 0;
}
