#include "wrenchfield/experiments.hpp"

#include "json.hpp"

#include <chrono>
#include <iomanip>
#include <sstream>

namespace wrenchfield {

using json = nlohmann::json;

namespace {

double ms_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

void say(const LogFn& log, const std::string& s) {
  if (log) log(s);
}

MatF window_of(const MatF& rows, std::int64_t i, int h, int d) {
  return Eigen::Map<const MatF>(rows.row(i).data(), h, d);
}

std::string fmt(double v, int prec = 2) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(prec) << v;
  return s.str();
}

}  // namespace

// --- training ------------------------------------------------------------------

VelocityField<float> fit_cfm(const Dataset& ds, const CfmSettings& s, double delta, TrainHistory* history,
                             const LogFn& log) {
  CfmArchitecture a = cfm_architecture(s, ds.header);
  a.delta = delta;
  if (s.standardize_inputs) {
    const InputScaling sc = fit_input_scaling(ds);
    a.obs_shift = sc.shift;
    a.obs_scale = sc.scale;
  }
  VelocityField<float> model(a, s.train.seed);
  const auto h = train_cfm(model, ds, s.train, [&](long step, const LossBreakdown& l) {
    say(log, "cfm step " + std::to_string(step) + " loss " + fmt(l.total, 5) + " mask " + fmt(l.mask, 5) +
                 " wrench " + fmt(l.wrench, 5));
  });
  if (history) *history = h;
  return model;
}

MlpRegressor fit_mlp(const Dataset& ds, const MlpSettings& s, MlpTrainHistory* history, const LogFn& log) {
  MlpArchitecture a = mlp_architecture(s, ds.header);
  if (s.standardize_inputs) {
    const InputScaling sc = fit_input_scaling(ds);
    a.obs_shift = sc.shift;
    a.obs_scale = sc.scale;
  }
  MlpRegressor model(a, s.train.seed);
  const auto h = train_mlp(model, ds, s.train, [&](long step, double loss) {
    say(log, "mlp step " + std::to_string(step) + " loss " + fmt(loss, 5));
  });
  if (history) *history = h;
  return model;
}

std::string training_meta(const Dataset& ds, std::uint64_t seed) {
  json j;
  for (const auto& [k, v] : ds.header.meta) j["train_" + k] = v;
  j["train_count"] = ds.size();
  j["train_positives"] = ds.header.positive_count;
  j["train_sampler_hash"] = ds.header.sampler_hash;
  j["train_model_hash"] = ds.header.model_hash;
  j["seed"] = seed;
  return j.dump();
}

EvalSet make_eval_set(const RobotModel& model, const PDGains& gains, const GenerationConfig& gen) {
  EvalSet s;
  s.generation = gen;
  s.rollouts = generate_rollouts(model, gains, gen, true);
  s.data = build_dataset(model, gen, s.rollouts, &s.refs);
  return s;
}

Dataset concat_datasets(const std::vector<const Dataset*>& parts) {
  if (parts.empty()) throw ExperimentError("concat_datasets: no parts");
  Dataset out;
  out.header = parts.front()->header;
  std::int64_t n = 0, pos = 0;
  for (const auto* p : parts) {
    const auto& h = p->header;
    if (h.h_win != out.header.h_win || h.n_regions != out.header.n_regions || h.wrench_dim != out.header.wrench_dim ||
        h.obs_dim != out.header.obs_dim)
      throw ExperimentError("concat_datasets: record shapes differ");
    n += p->size();
    pos += h.positive_count;
  }
  out.resize(n);
  std::int64_t at = 0;
  for (const auto* p : parts) {
    out.obs.middleRows(at, p->size()) = p->obs;
    out.wrench.middleRows(at, p->size()) = p->wrench;
    out.mask.middleRows(at, p->size()) = p->mask;
    at += p->size();
  }
  out.header.count = n;
  out.header.positive_count = pos;
  return out;
}

// --- prediction ------------------------------------------------------------------

std::vector<PredictionRecord> predict_cfm(const VelocityField<float>& model, const MatF& windows, int flow_steps,
                                          double delta, std::uint64_t seed) {
  Rng rng(seed);
  const auto t0 = std::chrono::steady_clock::now();
  const auto g = sample(model, windows, FlowSchedule{flow_steps}, rng, delta);
  const double per = g.empty() ? 0.0 : ms_since(t0) / static_cast<double>(g.size());
  std::vector<PredictionRecord> out;
  out.reserve(g.size());
  for (const auto& p : g) out.push_back({"cfm", p.mask, p.gated, per});
  return out;
}

std::vector<PredictionRecord> predict(const std::string& estimator, const EstimatorBank& bank,
                                      const RobotModel& model, const PDGains& gains, const EvalSet& set,
                                      const MatF& windows, double delta) {
  const auto& h = set.data.header;
  if (windows.rows() != set.data.size() || windows.cols() != static_cast<Eigen::Index>(h.h_win) * h.obs_dim)
    throw ExperimentError("predict: windows do not match the evaluation set");
  if (estimator == "cfm") {
    if (!bank.cfm) throw ExperimentError("predict: no CFM model loaded");
    return predict_cfm(*bank.cfm, windows, bank.flow_steps, delta, bank.seed);
  }
  if (estimator == "mlp") {
    if (!bank.mlp) throw ExperimentError("predict: no MLP model loaded");
    const auto t0 = std::chrono::steady_clock::now();
    auto out = mlp_predict(*bank.mlp, windows, delta);
    const double per = out.empty() ? 0.0 : ms_since(t0) / static_cast<double>(out.size());
    for (auto& p : out) p.runtime_ms = per;
    return out;
  }
  if (estimator != "gmo" && estimator != "cpf") throw ExperimentError("predict: unknown estimator '" + estimator + "'");
  if (set.rollouts.raw.size() != set.rollouts.tokens.size() || set.refs.size() != static_cast<std::size_t>(windows.rows()))
    throw ExperimentError("predict: model-based baselines need the raw rollouts of the evaluation set");
  const PDGains eff = effective_gains(gains, tier_from_label(set.generation.tier));
  std::vector<PredictionRecord> out;
  out.reserve(set.refs.size());
  for (std::size_t i = 0; i < set.refs.size(); ++i) {
    const ClipRef& ref = set.refs[i];
    const WindowSignals sig =
        window_signals(model, set.rollouts.raw[ref.rollout], ref.start,
                       window_of(windows, static_cast<std::int64_t>(i), h.h_win, h.obs_dim),
                       set.generation.observation, eff);
    out.push_back(estimator == "gmo" ? gmo_predict(model, sig, bank.gmo, delta)
                                     : cpf_predict(model, sig, bank.cpf, delta, i));
  }
  return out;
}

MatF noisy_windows(const Dataset& ds, double sigma, std::uint64_t seed) {
  if (sigma < 0) throw ExperimentError("noise sigma must be >= 0");
  if (sigma == 0.0) return ds.obs;
  const auto& h = ds.header;
  const ObservationLayout layout = layout_from_header(h);
  MatF out(ds.obs.rows(), ds.obs.cols());
  for (std::int64_t i = 0; i < ds.size(); ++i) {
    Rng rng(seed ^ (static_cast<std::uint64_t>(i + 1) * 0x9E3779B97F4A7C15ULL));
    const MatF w = inject_noise(window_of(ds.obs, i, h.h_win, h.obs_dim), layout, NoiseSigma::uniform(sigma), rng);
    out.row(i) = Eigen::Map<const Eigen::RowVectorXf>(w.data(), w.size());
  }
  return out;
}

// --- baseline tuning --------------------------------------------------------------

double tuning_objective(const MetricsReport& r) { return r.localization - r.false_alarm; }

TuningResult tune_baselines(const RobotModel& model, const PDGains& gains, const BaselineSettings& s,
                            const ScoreOptions& opts, const LogFn& log) {
  TuningResult res;
  res.gmo = s.gmo;
  res.cpf = s.cpf;
  const bool tune_gmo = !s.gmo_gain_grid.empty() || !s.gmo_temperature_grid.empty();
  const bool tune_cpf = !s.cpf_threshold_grid.empty() || !s.cpf_sigma_grid.empty();
  if (!tune_gmo && !tune_cpf) return res;
  const EvalSet val = make_eval_set(model, gains, s.validation);
  const auto hops = region_hop_matrix(model);
  say(log, "tuning on " + std::to_string(val.data.size()) + " validation clips");

  auto or_default = [](const std::vector<double>& g, double d) { return g.empty() ? std::vector<double>{d} : g; };
  EstimatorBank bank;
  bank.cpf = s.cpf;
  if (tune_gmo) {
    double best = -1e300;
    for (double gain : or_default(s.gmo_gain_grid, s.gmo.gain))
      for (double temp : or_default(s.gmo_temperature_grid, s.gmo.temperature)) {
        bank.gmo = {gain, temp};
        auto rep = score(predict("gmo", bank, model, gains, val, val.data.obs, opts.delta), val.data, hops, opts);
        GridPoint p{"gmo", {{"gain", gain}, {"temperature", temp}}, tuning_objective(rep), rep};
        say(log, "gmo gain " + fmt(gain) + " temperature " + fmt(temp, 3) + " objective " + fmt(p.objective));
        if (p.objective > best) {
          best = p.objective;
          res.gmo = bank.gmo;
        }
        res.grid.push_back(std::move(p));
      }
    if (!s.gmo_gain_grid.empty()) res.cpf.gmo_gain = res.gmo.gain;
  }
  if (tune_cpf) {
    double best = -1e300;
    CpfWindowConfig base = res.cpf;
    for (double thr : or_default(s.cpf_threshold_grid, s.cpf.threshold))
      for (double sig : or_default(s.cpf_sigma_grid, s.cpf.filter.sigma_lik)) {
        bank.cpf = base;
        bank.cpf.threshold = thr;
        bank.cpf.filter.sigma_lik = sig;
        auto rep = score(predict("cpf", bank, model, gains, val, val.data.obs, opts.delta), val.data, hops, opts);
        GridPoint p{"cpf", {{"threshold", thr}, {"sigma_lik", sig}}, tuning_objective(rep), rep};
        say(log, "cpf threshold " + fmt(thr) + " sigma " + fmt(sig, 3) + " objective " + fmt(p.objective));
        if (p.objective > best) {
          best = p.objective;
          res.cpf = bank.cpf;
        }
        res.grid.push_back(std::move(p));
      }
  }
  return res;
}

std::string grid_csv(const std::vector<GridPoint>& grid) {
  std::ostringstream s;
  s << std::setprecision(6) << "estimator,params,objective,localization_pct,false_alarm_pct,detection_pct\n";
  for (const auto& p : grid) {
    s << p.estimator << ',';
    bool first = true;
    for (const auto& [k, v] : p.params) {
      s << (first ? "" : ";") << k << '=' << v;
      first = false;
    }
    s << ',' << p.objective << ',' << p.report.localization << ',' << p.report.false_alarm << ','
      << p.report.detection << '\n';
  }
  return s.str();
}

// --- noise sweep --------------------------------------------------------------------

NoiseSweepResult noise_sweep(const RobotModel& model, const PDGains& gains, const EstimatorBank& bank,
                             const EvalSet& set, const std::vector<double>& sigmas,
                             const std::vector<std::string>& estimators, const ScoreOptions& opts, const LogFn& log) {
  if (sigmas.size() < 2) throw ExperimentError("noise sweep needs at least two sigma values");
  NoiseSweepResult res;
  const auto hops = region_hop_matrix(model);
  std::map<std::string, std::vector<double>> loc;
  for (double sigma : sigmas) {
    const MatF w = noisy_windows(set.data, sigma, bank.seed + 17);
    for (const auto& e : estimators) {
      MetricsReport rep = score(predict(e, bank, model, gains, set, w, opts.delta), set.data, hops, opts);
      rep.estimator = e;
      say(log, "sigma " + fmt(sigma, 3) + " " + e + " localization " + fmt(rep.localization, 1));
      loc[e].push_back(rep.localization);
      res.rows.push_back({sigma, std::move(rep)});
    }
  }
  for (const auto& [e, v] : loc) {
    res.localization_drop[e] = v.front() - v.back();
    bool mono = true;
    for (std::size_t i = 1; i < v.size(); ++i) mono = mono && v[i] <= v[i - 1];
    res.monotone[e] = mono;
  }
  return res;
}

std::string sweep_csv(const NoiseSweepResult& r) {
  std::string out = "sigma," + metrics_csv_header(false) + "\n";
  for (const auto& row : r.rows) {
    std::ostringstream s;
    s << std::setprecision(6) << row.sigma;
    out += s.str() + "," + metrics_csv_row(row.report, false) + "\n";
  }
  return out;
}

std::string sweep_markdown(const NoiseSweepResult& r) {
  std::ostringstream s;
  s << "# Noise sweep\n\nGaussian noise of standard deviation sigma on every normalized observation channel; the "
       "same per-clip noise stream is scaled for every sigma.\n\n";
  std::vector<double> sig;
  std::vector<std::string> est;
  for (const auto& row : r.rows) {
    if (std::find(sig.begin(), sig.end(), row.sigma) == sig.end()) sig.push_back(row.sigma);
    if (std::find(est.begin(), est.end(), row.report.estimator) == est.end()) est.push_back(row.report.estimator);
  }
  auto table = [&](const std::string& title, auto get, int prec) {
    s << "| " << title << " |";
    for (const auto& e : est) s << ' ' << e << " |";
    s << "\n|---|";
    for (std::size_t i = 0; i < est.size(); ++i) s << "---|";
    s << '\n';
    for (double sv : sig) {
      s << "| " << fmt(sv, 3) << " |";
      for (const auto& e : est)
        for (const auto& row : r.rows)
          if (row.sigma == sv && row.report.estimator == e) s << ' ' << fmt(get(row.report), prec) << " |";
      s << '\n';
    }
    s << '\n';
  };
  table("Localization accuracy (%) vs sigma", [](const MetricsReport& m) { return m.localization; }, 1);
  table("Detection (%) vs sigma", [](const MetricsReport& m) { return m.detection; }, 1);
  table("False alarm (%) vs sigma", [](const MetricsReport& m) { return m.false_alarm; }, 1);
  table("Force magnitude error (N) vs sigma", [](const MetricsReport& m) { return m.force_mag; }, 2);
  s << "| Estimator | Localization drop (pp) | Monotone degradation |\n|---|---|---|\n";
  for (const auto& e : est)
    s << "| " << e << " | " << fmt(r.localization_drop.at(e), 1) << " | " << (r.monotone.at(e) ? "yes" : "no")
      << " |\n";
  return s.str();
}

// --- multi-contact --------------------------------------------------------------------

MultiContactResult multi_contact_eval(const RobotModel& model, const PDGains& gains, const EstimatorBank& bank,
                                      int trained_contacts, const GenerationConfig& test_template,
                                      const std::vector<int>& contacts, const std::vector<std::string>& estimators,
                                      const ScoreOptions& opts, const LogFn& log) {
  if (trained_contacts != 1)
    throw ExperimentError("multi-contact evaluation needs models trained on single-contact data (trained on " +
                          std::to_string(trained_contacts) + " contacts per clip)");
  const auto hops = region_hop_matrix(model);
  MultiContactResult res;
  for (int k : contacts) {
    if (k < 1 || k > model.region_count())
      throw ExperimentError("contact count " + std::to_string(k) + " outside [1, " +
                            std::to_string(model.region_count()) + "]");
    GenerationConfig g = test_template;
    g.contacts_per_episode = k;
    const EvalSet set = make_eval_set(model, gains, g);
    EstimatorBank b = bank;
    b.cpf.filter.contacts = k;
    for (const auto& e : estimators) {
      MetricsReport rep = score(predict(e, b, model, gains, set, set.data.obs, opts.delta), set.data, hops, opts);
      rep.estimator = e;
      say(log, "k " + std::to_string(k) + " " + e + " detection " + fmt(rep.detection, 1) + " false alarm " +
                   fmt(rep.false_alarm, 1));
      res.rows.push_back({k, std::move(rep)});
    }
  }
  return res;
}

std::string multi_contact_csv(const MultiContactResult& r, bool with_runtime) {
  std::string out = "contacts," + metrics_csv_header(with_runtime) + "\n";
  for (const auto& row : r.rows) out += std::to_string(row.contacts) + "," + metrics_csv_row(row.report, with_runtime) + "\n";
  return out;
}

std::string multi_contact_markdown(const MultiContactResult& r, bool with_runtime) {
  std::ostringstream s;
  s << "# Multi-contact evaluation\n\nModels trained on single-contact clips; k simultaneous contacts on distinct "
       "regions. Strict detection requires every true region among the detected regions.\n\n";
  s << "| k | Estimator |" << (with_runtime ? " Time (ms) |" : "")
    << " Detection | Strict detection | False alarm | Top-1 any hit | Top-3 any hit |\n|---|---|"
    << (with_runtime ? "---|" : "") << "---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    const auto& m = row.report;
    auto hit = [&](int k) {
      for (const auto& b : m.topk)
        if (b.k == k) return fmt(b.any_exact_hit, 1);
      return std::string("-");
    };
    s << "| " << row.contacts << " | " << m.estimator << " |";
    if (with_runtime) s << ' ' << fmt(m.runtime_ms) << " |";
    s << ' ' << fmt(m.detection, 1) << " | " << fmt(m.strict_detection, 1) << " | " << fmt(m.false_alarm, 1) << " | "
      << hit(1) << " | " << hit(3) << " |\n";
  }
  s << '\n';
  std::vector<int> ks;
  for (const auto& row : r.rows)
    if (std::find(ks.begin(), ks.end(), row.contacts) == ks.end()) ks.push_back(row.contacts);
  for (int k : ks) {
    std::vector<MetricsReport> reps;
    for (const auto& row : r.rows)
      if (row.contacts == k) reps.push_back(row.report);
    s << metrics_markdown(reps, std::to_string(k) + " simultaneous contact" + (k > 1 ? "s" : ""), with_runtime);
  }
  return s.str();
}

// --- controller robustness ------------------------------------------------------------

RobustnessReport tier_robustness(const RobotModel& model, const PDGains& gains, const GenerationConfig& gen,
                                 int episodes, double eps, int window) {
  GenerationConfig g = gen;
  g.rollouts = episodes;
  const auto r = generate_rollouts(model, gains, g, true);
  return robustness_metrics(r.raw, eps, window);
}

namespace {

void set_ordering_flags(RobustnessAblationResult& res) {
  res.sr_ordered = res.fa_improves = res.location_improves = true;
  for (std::size_t i = 1; i < res.tiers.size(); ++i) {
    const auto& a = res.tiers[i - 1];
    const auto& b = res.tiers[i];
    res.sr_ordered = res.sr_ordered && a.robustness.sr >= b.robustness.sr;
    res.fa_improves = res.fa_improves && a.report.false_alarm <= b.report.false_alarm;
    res.location_improves = res.location_improves && a.report.tolerant_link >= b.report.tolerant_link;
  }
}

struct TierInput {
  std::string tier;
  RobustnessReport robustness;
  const Dataset* train = nullptr;            // trained when model is null
  const VelocityField<float>* model = nullptr;
};

RobustnessAblationResult run_ablation(const RobotModel& model, const ExperimentConfig& cfg,
                                      const std::vector<TierInput>& tiers, const Dataset& test, const LogFn& log) {
  const auto hops = region_hop_matrix(model);
  RobustnessAblationResult res;
  for (const auto& t : tiers) {
    TierResult tr;
    tr.tier = t.tier;
    tr.robustness = t.robustness;
    std::optional<VelocityField<float>> trained;
    const VelocityField<float>* m = t.model;
    if (!m) {
      if (!t.train) throw ExperimentError("tier " + t.tier + " has neither a model nor training data");
      say(log, "training tier " + t.tier + " on " + std::to_string(t.train->size()) + " clips");
      trained.emplace(fit_cfm(*t.train, cfg.cfm, cfg.eval.delta, nullptr, log));
      m = &*trained;
    }
    tr.report = score(predict_cfm(*m, test.obs, cfg.cfm.flow_steps, cfg.eval.delta, cfg.seed), test, hops, cfg.eval);
    tr.report.estimator = t.tier;
    say(log, "tier " + t.tier + " SR " + fmt(100 * tr.robustness.sr, 1) + " false alarm " +
                 fmt(tr.report.false_alarm, 1));
    res.tiers.push_back(std::move(tr));
  }
  set_ordering_flags(res);
  return res;
}

}  // namespace

RobustnessAblationResult robustness_ablation(const RobotModel& model, const PDGains& gains,
                                             const ExperimentConfig& cfg,
                                             const std::map<std::string, const VelocityField<float>*>& pretrained,
                                             const LogFn& log) {
  const auto& rs = cfg.robustness;
  GenerationConfig tg = cfg.test_generation;
  tg.tier = rs.test_tier;
  const Dataset test = build_dataset(model, tg, generate_rollouts(model, gains, tg));
  RobustnessAblationResult res;
  for (const auto& tier : rs.tiers) {
    GenerationConfig g = cfg.train_generation;
    g.tier = tier;
    TierInput in;
    in.tier = tier;
    in.robustness = tier_robustness(model, gains, g, rs.episodes, rs.recovery_eps, rs.recovery_window);
    const auto it = pretrained.find(tier);
    std::optional<Dataset> data;
    if (it != pretrained.end() && it->second) {
      in.model = it->second;
    } else {
      say(log, "generating " + std::to_string(g.rollouts) + " " + tier + "-tier rollouts");
      data.emplace(build_dataset(model, g, generate_rollouts(model, gains, g)));
      in.train = &*data;
    }
    // Tiers run one at a time so only one training set is resident.
    auto one = run_ablation(model, cfg, {in}, test, log);
    res.tiers.push_back(std::move(one.tiers.front()));
  }
  set_ordering_flags(res);
  return res;
}

RobustnessAblationResult robustness_ablation(const RobotModel& model, const ExperimentConfig& cfg,
                                             const std::vector<std::string>& tiers,
                                             const std::vector<const Dataset*>& train_sets,
                                             const std::vector<RobustnessReport>& robustness, const Dataset& test,
                                             const LogFn& log) {
  if (tiers.size() != train_sets.size() || tiers.size() != robustness.size())
    throw ExperimentError("robustness ablation: tiers, datasets and robustness reports differ in count");
  std::vector<TierInput> in;
  for (std::size_t i = 0; i < tiers.size(); ++i) {
    if (!train_sets[i]) throw ExperimentError("robustness ablation: missing dataset for tier " + tiers[i]);
    const auto& meta = train_sets[i]->header.meta;
    const auto it = meta.find("tier");
    if (it == meta.end() || it->second != tiers[i])
      throw ExperimentError("robustness ablation: dataset tier '" + (it == meta.end() ? std::string("?") : it->second) +
                            "' does not match tier '" + tiers[i] + "'");
    in.push_back({tiers[i], robustness[i], train_sets[i], nullptr});
  }
  return run_ablation(model, cfg, in, test, log);
}

std::string robustness_csv(const RobustnessAblationResult& r) {
  std::ostringstream s;
  s << std::setprecision(6)
    << "tier,sr_pct,itae_mean,viomag_mean,rvr,detection_pct,false_alarm_pct,target_link_pct,tolerant_link_pct,"
       "target_time_pct,tolerant_time_pct,distance_links,interval_ms,force_mag_N,force_dir_deg,torque_mag_Nm,"
       "torque_dir_deg\n";
  for (const auto& t : r.tiers) {
    const auto& m = t.report;
    const auto& b = t.robustness;
    s << t.tier << ',' << 100 * b.sr << ',' << b.itae_mean << ',' << b.viomag_mean << ',' << b.rvr << ','
      << m.detection << ',' << m.false_alarm << ',' << m.target_link << ',' << m.tolerant_link << ','
      << m.target_time << ',' << m.tolerant_time << ',' << m.distance_links << ',' << m.interval_ms << ','
      << m.force_mag << ',' << m.force_dir_deg << ',' << m.torque_mag << ',' << m.torque_dir_deg << '\n';
  }
  return s.str();
}

std::string robustness_markdown(const RobustnessAblationResult& r) {
  std::ostringstream s;
  s << "# Controller robustness and contact estimation\n\nOne estimator trained per tier; all scored on the same "
       "test set.\n\n| Group | Metric |";
  for (const auto& t : r.tiers) s << ' ' << t.tier << " |";
  s << "\n|---|---|";
  for (std::size_t i = 0; i < r.tiers.size(); ++i) s << "---|";
  s << '\n';
  auto row = [&](const std::string& group, const std::string& name, auto get, int prec) {
    s << "| " << group << " | " << name << " |";
    for (const auto& t : r.tiers) s << ' ' << fmt(get(t), prec) << " |";
    s << '\n';
  };
  row("Robustness", "SR (%)", [](const TierResult& t) { return 100 * t.robustness.sr; }, 1);
  row("Robustness", "ITAE mean", [](const TierResult& t) { return t.robustness.itae_mean; }, 3);
  row("Robustness", "VioMag mean", [](const TierResult& t) { return t.robustness.viomag_mean; }, 3);
  row("Robustness", "RVR", [](const TierResult& t) { return t.robustness.rvr; }, 3);
  row("Whether", "Detection rate (%)", [](const TierResult& t) { return t.report.detection; }, 1);
  row("Whether", "False alarm rate (%)", [](const TierResult& t) { return t.report.false_alarm; }, 1);
  row("Where", "Target link (%)", [](const TierResult& t) { return t.report.target_link; }, 1);
  row("Where", "Tolerant +/-1 link (%)", [](const TierResult& t) { return t.report.tolerant_link; }, 1);
  row("When", "Target timestamp (%)", [](const TierResult& t) { return t.report.target_time; }, 1);
  row("When", "Tolerant +/-0.1 s (%)", [](const TierResult& t) { return t.report.tolerant_time; }, 1);
  row("Where", "Distance (links)", [](const TierResult& t) { return t.report.distance_links; }, 2);
  row("When", "Interval (ms)", [](const TierResult& t) { return t.report.interval_ms; }, 1);
  row("What", "Force mag (N)", [](const TierResult& t) { return t.report.force_mag; }, 2);
  row("What", "Force dir (deg)", [](const TierResult& t) { return t.report.force_dir_deg; }, 1);
  row("What", "Torque mag (N m)", [](const TierResult& t) { return t.report.torque_mag; }, 2);
  row("What", "Torque dir (deg, planar sign)", [](const TierResult& t) { return t.report.torque_dir_deg; }, 1);
  s << "\nSR ordered along tiers: " << (r.sr_ordered ? "yes" : "no")
    << ". False alarm improves with robustness: " << (r.fa_improves ? "yes" : "no")
    << ". Tolerant link improves with robustness: " << (r.location_improves ? "yes" : "no") << ".\n";
  return s.str();
}

// --- cross-task observation ablation ---------------------------------------------------

namespace {

Dataset drop_command(const Dataset& ds, int n_joints) {
  const auto& h = ds.header;
  if (h.meta.count("command_channel") && h.meta.at("command_channel") != "true") return ds;
  const int keep = h.obs_dim - n_joints;
  Dataset out;
  out.header = h;
  out.header.obs_dim = keep;
  out.header.meta["command_channel"] = "false";
  out.resize(ds.size());
  out.wrench = ds.wrench;
  out.mask = ds.mask;
  for (std::int64_t i = 0; i < ds.size(); ++i)
    for (int k = 0; k < h.h_win; ++k)
      out.obs.row(i).segment(k * keep, keep) = ds.obs.row(i).segment(k * h.obs_dim, keep);
  return out;
}

}  // namespace

CrossTaskResult cross_task_ablation(const RobotModel& model, const PDGains& gains, const ExperimentConfig& cfg,
                                    const LogFn& log) {
  const auto& ct = cfg.cross_task;
  const int n = model.joint_count();
  const auto hops = region_hop_matrix(model);
  std::vector<Dataset> cmd_train, cmd_test, uni_train, uni_test;
  for (const auto& task : ct.tasks) {
    GenerationConfig g = cfg.train_generation;
    g.task = task_from_name(task);
    g.observation.include_command = true;
    say(log, "generating " + task + " data");
    cmd_train.push_back(build_dataset(model, g, generate_rollouts(model, gains, g)));
    GenerationConfig t = cfg.test_generation;
    t.task = g.task;
    t.observation.include_command = true;
    cmd_test.push_back(build_dataset(model, t, generate_rollouts(model, gains, t)));
    uni_train.push_back(drop_command(cmd_train.back(), n));
    uni_test.push_back(drop_command(cmd_test.back(), n));
  }
  std::vector<const Dataset*> cmd_parts, uni_parts;
  for (std::size_t i = 0; i < ct.tasks.size(); ++i) {
    cmd_parts.push_back(&cmd_train[i]);
    uni_parts.push_back(&uni_train[i]);
  }
  const auto single_it = std::find(ct.tasks.begin(), ct.tasks.end(), ct.single_task);
  if (single_it == ct.tasks.end()) throw ExperimentError("single task '" + ct.single_task + "' is not among the tasks");
  const std::size_t single = static_cast<std::size_t>(single_it - ct.tasks.begin());

  say(log, "training command-channel estimator");
  const auto m_cmd = fit_cfm(concat_datasets(cmd_parts), cfg.cfm, cfg.eval.delta, nullptr, log);
  say(log, "training unified estimator");
  const auto m_uni = fit_cfm(concat_datasets(uni_parts), cfg.cfm, cfg.eval.delta, nullptr, log);
  say(log, "training single-task estimator");
  const auto m_single = fit_cfm(uni_train[single], cfg.cfm, cfg.eval.delta, nullptr, log);

  CrossTaskResult res;
  auto run = [&](const std::string& name, const VelocityField<float>& m, const std::vector<Dataset>& tests) {
    for (std::size_t i = 0; i < tests.size(); ++i) {
      MetricsReport rep =
          score(predict_cfm(m, tests[i].obs, cfg.cfm.flow_steps, cfg.eval.delta, cfg.seed), tests[i], hops, cfg.eval);
      rep.estimator = name;
      res.rows.push_back({name, ct.tasks[i], std::move(rep)});
    }
  };
  run("command", m_cmd, cmd_test);
  run("unified", m_uni, uni_test);
  const std::string sname = "single:" + ct.single_task;
  run(sname, m_single, uni_test);
  double on = 0.0;
  for (const auto& r : res.rows)
    if (r.estimator == sname && r.condition == ct.single_task) on = r.report.detection;
  for (const auto& r : res.rows)
    if (r.estimator == sname && r.condition != ct.single_task) res.single_task_shift[r.condition] = r.report.detection - on;
  return res;
}

std::string cross_task_csv(const CrossTaskResult& r) {
  std::string out = "condition," + metrics_csv_header(false) + "\n";
  for (const auto& row : r.rows) out += row.condition + "," + metrics_csv_row(row.report, false) + "\n";
  return out;
}

std::string cross_task_markdown(const CrossTaskResult& r) {
  std::ostringstream s;
  s << "# Cross-task observation ablation\n\nEstimators: command = extra PD-target channel, trained on all tasks; "
       "unified = shared observation, trained on all tasks; single = trained on one task.\n\n"
       "| Estimator | Task | Detection | False alarm | Tolerant link | Tolerant time | Localization |\n"
       "|---|---|---|---|---|---|---|\n";
  for (const auto& row : r.rows) {
    const auto& m = row.report;
    s << "| " << row.estimator << " | " << row.condition << " | " << fmt(m.detection, 1) << " | "
      << fmt(m.false_alarm, 1) << " | " << fmt(m.tolerant_link, 1) << " | " << fmt(m.tolerant_time, 1) << " | "
      << fmt(m.localization, 1) << " |\n";
  }
  if (!r.single_task_shift.empty()) {
    s << "\n| Off-task condition | Detection change of the single-task estimator (pp) |\n|---|---|\n";
    for (const auto& [c, d] : r.single_task_shift) s << "| " << c << " | " << (d >= 0 ? "+" : "") << fmt(d, 1) << " |\n";
  }
  return s.str();
}

}  // namespace wrenchfield
