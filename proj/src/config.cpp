#include "wrenchfield/config.hpp"

#include "json.hpp"

#include <fstream>
#include <limits>
#include <set>
#include <sstream>
#include <type_traits>

namespace wrenchfield {

using json = nlohmann::json;

namespace {

// One field list per struct drives serialization, parsing and the schema.

template <class F> void fields(SamplerConfig& c, F&& f) {
  f("force_min", c.force_min);
  f("force_max", c.force_max);
  f("duration_min", c.duration_min);
  f("duration_max", c.duration_max);
  f("episode", c.episode);
  f("lead_in", c.lead_in);
}

template <class F> void fields(ObservationConfig& c, F&& f) {
  f("w_q", c.w_q);
  f("w_qd", c.w_qd);
  f("w_omega", c.w_omega);
  f("w_g", c.w_g);
  f("w_tau", c.w_tau);
  f("dq_ref", c.dq_ref);
  f("dqd_ref", c.dqd_ref);
  f("eps_norm", c.eps_norm);
  f("include_command", c.include_command);
}

template <class F> void fields(GroundContactConfig& c, F&& f) {
  f("stiffness", c.stiffness);
  f("damping", c.damping);
  f("friction", c.friction);
  f("v_reg", c.v_reg);
}

template <class F> void fields(EpisodeOptions& c, F&& f) {
  f("settle", c.settle);
  f("dt", c.dt);
  f("log_every", c.log_every);
  f("init_jitter", c.init_jitter);
  f("ground", c.ground);
  f("sway_amplitude", c.sway_amplitude);
  f("sway_frequency", c.sway_frequency);
}

template <class F> void fields(RandomizationRanges& c, F&& f) {
  f("mass", c.mass);
  f("inertia", c.inertia);
  f("damping_add", c.damping_add);
  f("torque_limit", c.torque_limit);
  f("friction", c.friction);
}

template <class F> void fields(AssemblyOptions& c, F&& f) {
  f("neg_per_pos", c.neg_per_pos);
  f("max_positives", c.max_positives);
  f("repeat_minority", c.repeat_minority);
}

template <class F> void fields(GenerationConfig& c, F&& f) {
  f("rollouts", c.rollouts);
  f("seed", c.seed);
  f("tier", c.tier);
  f("task", c.task);
  f("contacts_per_episode", c.contacts_per_episode);
  f("h_win", c.h_win);
  f("stride", c.stride);
  f("sampler", c.sampler);
  f("observation", c.observation);
  f("episode", c.episode);
  f("randomization", c.randomization);
  f("assembly", c.assembly);
}

template <class F> void fields(CfmLossWeights& c, F&& f) {
  f("lambda_neg", c.lambda_neg);
  f("lambda_c", c.lambda_c);
  f("lambda_s", c.lambda_s);
}

template <class F> void fields(CfmTrainConfig& c, F&& f) {
  f("steps", c.steps);
  f("batch", c.batch);
  f("lr", c.lr);
  f("lr_min", c.lr_min);
  f("warmup", c.warmup);
  f("grad_clip", c.grad_clip);
  f("seed", c.seed);
  f("noise_augment", c.noise_augment);
  f("loss", c.loss);
  f("log_every", c.log_every);
}

template <class F> void fields(CfmSettings& c, F&& f) {
  f("d_model", c.d_model);
  f("layers", c.layers);
  f("expansion", c.expansion);
  f("head", c.head);
  f("attn_dim", c.attn_dim);
  f("time_mixing", c.time_mixing);
  f("time_hidden", c.time_hidden);
  f("wrench_scale", c.wrench_scale);
  f("flow_steps", c.flow_steps);
  f("sigma_min", c.sigma_min);
  f("standardize_inputs", c.standardize_inputs);
  f("train", c.train);
}

template <class F> void fields(MlpTrainConfig& c, F&& f) {
  f("steps", c.steps);
  f("batch", c.batch);
  f("lr", c.lr);
  f("lr_min", c.lr_min);
  f("warmup", c.warmup);
  f("grad_clip", c.grad_clip);
  f("seed", c.seed);
  f("noise_augment", c.noise_augment);
  f("lambda_neg", c.lambda_neg);
  f("lambda_sparse", c.lambda_sparse);
  f("log_every", c.log_every);
}

template <class F> void fields(MlpSettings& c, F&& f) {
  f("hidden", c.hidden);
  f("wrench_scale", c.wrench_scale);
  f("standardize_inputs", c.standardize_inputs);
  f("train", c.train);
}

template <class F> void fields(GmoConfig& c, F&& f) {
  f("gain", c.gain);
  f("temperature", c.temperature);
}

template <class F> void fields(CpfConfig& c, F&& f) {
  f("particles", c.particles);
  f("sigma_lik", c.sigma_lik);
  f("rejuvenation", c.rejuvenation);
  f("contacts", c.contacts);
}

template <class F> void fields(CpfWindowConfig& c, F&& f) {
  f("filter", c.filter);
  f("gmo_gain", c.gmo_gain);
  f("threshold", c.threshold);
  f("seed", c.seed);
}

template <class F> void fields(BaselineSettings& c, F&& f) {
  f("gmo", c.gmo);
  f("cpf", c.cpf);
  f("gmo_gain_grid", c.gmo_gain_grid);
  f("gmo_temperature_grid", c.gmo_temperature_grid);
  f("cpf_threshold_grid", c.cpf_threshold_grid);
  f("cpf_sigma_grid", c.cpf_sigma_grid);
  f("validation", c.validation);
}

template <class F> void fields(ScoreOptions& c, F&& f) {
  f("delta", c.delta);
  f("min_duration", c.min_duration);
  f("time_tolerance", c.time_tolerance);
  f("link_tolerance", c.link_tolerance);
  f("frame_dt", c.frame_dt);
  f("top_k", c.top_k);
}

template <class F> void fields(SweepSettings& c, F&& f) {
  f("sigmas", c.sigmas);
  f("estimators", c.estimators);
}

template <class F> void fields(MultiContactSettings& c, F&& f) {
  f("contacts", c.contacts);
  f("estimators", c.estimators);
}

template <class F> void fields(RobustnessSettings& c, F&& f) {
  f("tiers", c.tiers);
  f("episodes", c.episodes);
  f("test_tier", c.test_tier);
  f("recovery_eps", c.recovery_eps);
  f("recovery_window", c.recovery_window);
}

template <class F> void fields(CrossTaskSettings& c, F&& f) {
  f("tasks", c.tasks);
  f("single_task", c.single_task);
}

template <class F> void fields(ExperimentConfig& c, F&& f) {
  f("seed", c.seed);
  f("output_dir", c.output_dir);
  f("model", c.model);
  f("mlp_model", c.mlp_model);
  f("train_data", c.train_data);
  f("test_data", c.test_data);
  f("estimator", c.estimator);
  f("eval", c.eval);
  f("train_generation", c.train_generation);
  f("test_generation", c.test_generation);
  f("cfm", c.cfm);
  f("mlp", c.mlp);
  f("baselines", c.baselines);
  f("sweep", c.sweep);
  f("multi_contact", c.multi_contact);
  f("robustness", c.robustness);
  f("cross_task", c.cross_task);
}

template <class T, class = void>
struct has_fields : std::false_type {};
template <class T>
struct has_fields<T, std::void_t<decltype(fields(std::declval<T&>(), [](const char*, auto&) {}))>> : std::true_type {};

template <class T> struct is_vector : std::false_type {};
template <class T> struct is_vector<std::vector<T>> : std::true_type {};

// --- serialization ---

template <class T>
json to_j(T& v) {
  if constexpr (has_fields<T>::value) {
    json j = json::object();
    fields(v, [&](const char* k, auto& x) { j[k] = to_j(x); });
    return j;
  } else if constexpr (std::is_same_v<T, Task>) {
    return task_name(v);
  } else if constexpr (std::is_array_v<T>) {
    return json::array({v[0], v[1]});
  } else if constexpr (is_vector<T>::value) {
    json a = json::array();
    for (auto& e : v) a.push_back(to_j(e));
    return a;
  } else {
    return v;
  }
}

// --- parsing ---

[[noreturn]] void fail(const std::string& path, const std::string& what) {
  throw ConfigError("config " + (path.empty() ? std::string("/") : path) + ": " + what);
}

template <class T>
void from_j(const json& j, T& v, const std::string& path) {
  if constexpr (has_fields<T>::value) {
    if (!j.is_object()) fail(path, "expected an object");
    std::set<std::string> known;
    fields(v, [&](const char* k, auto& x) {
      known.insert(k);
      if (j.contains(k)) from_j(j.at(k), x, path + "/" + k);
    });
    for (const auto& [k, _] : j.items())
      if (!known.count(k)) fail(path + "/" + k, "unknown key");
  } else if constexpr (std::is_same_v<T, Task>) {
    if (!j.is_string()) fail(path, "expected a string");
    try {
      v = task_from_name(j.get<std::string>());
    } catch (const std::exception& e) {
      fail(path, e.what());
    }
  } else if constexpr (std::is_array_v<T>) {
    if (!j.is_array() || j.size() != 2) fail(path, "expected an array [min, max]");
    from_j(j[0], v[0], path + "/0");
    from_j(j[1], v[1], path + "/1");
  } else if constexpr (is_vector<T>::value) {
    if (!j.is_array()) fail(path, "expected an array");
    v.clear();
    v.resize(j.size());
    for (std::size_t i = 0; i < j.size(); ++i) from_j(j[i], v[i], path + "/" + std::to_string(i));
  } else if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) fail(path, "expected a boolean");
    v = j.get<bool>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) fail(path, "expected a string");
    v = j.get<std::string>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) fail(path, "expected a number");
    v = j.get<T>();
  } else if constexpr (std::is_unsigned_v<T>) {
    if (!j.is_number_unsigned()) fail(path, "expected a non-negative integer");
    v = j.get<T>();
  } else {
    static_assert(std::is_integral_v<T>);
    if (!j.is_number_integer()) fail(path, "expected an integer");
    const auto x = j.get<std::int64_t>();
    if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<T>::max()))
      fail(path, "integer out of range");
    if (x < static_cast<std::int64_t>(std::numeric_limits<T>::min()) ||
        x > static_cast<std::int64_t>(std::numeric_limits<T>::max()))
      fail(path, "integer out of range");
    v = static_cast<T>(x);
  }
}

// --- schema ---

template <class T>
json schema_of(T& v) {
  if constexpr (has_fields<T>::value) {
    json props = json::object();
    fields(v, [&](const char* k, auto& x) { props[k] = schema_of(x); });
    return {{"type", "object"}, {"properties", props}, {"additionalProperties", false}};
  } else if constexpr (std::is_same_v<T, Task>) {
    return {{"type", "string"}, {"enum", {"standing", "sway"}}};
  } else if constexpr (std::is_array_v<T>) {
    return {{"type", "array"}, {"items", {{"type", "number"}}}, {"minItems", 2}, {"maxItems", 2}};
  } else if constexpr (is_vector<T>::value) {
    typename T::value_type e{};
    return {{"type", "array"}, {"items", schema_of(e)}};
  } else if constexpr (std::is_same_v<T, bool>) {
    return {{"type", "boolean"}};
  } else if constexpr (std::is_same_v<T, std::string>) {
    return {{"type", "string"}};
  } else if constexpr (std::is_floating_point_v<T>) {
    return {{"type", "number"}};
  } else if constexpr (std::is_unsigned_v<T>) {
    return {{"type", "integer"}, {"minimum", 0}};
  } else {
    return {{"type", "integer"}};
  }
}

void check_estimators(const std::vector<std::string>& names, const std::string& path,
                      const std::set<std::string>& allowed) {
  if (names.empty()) fail(path, "needs at least one estimator");
  for (const auto& n : names)
    if (!allowed.count(n)) fail(path, "unknown estimator '" + n + "'");
}

void check_generation(const GenerationConfig& g, const std::string& path) {
  if (g.rollouts < 1) fail(path + "/rollouts", "must be >= 1");
  if (g.contacts_per_episode < 1) fail(path + "/contacts_per_episode", "must be >= 1");
  if (g.h_win < 1) fail(path + "/h_win", "must be >= 1");
  if (g.stride < 1) fail(path + "/stride", "must be >= 1");
  if (g.assembly.neg_per_pos < 0) fail(path + "/assembly/neg_per_pos", "must be >= 0");
  if (g.episode.log_every < 1) fail(path + "/episode/log_every", "must be >= 1");
  if (!(g.episode.dt > 0)) fail(path + "/episode/dt", "must be positive");
  try {
    tier_from_label(g.tier);
    g.sampler.validate();
    g.randomization.validate();
    validate(g.episode.ground);
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
}

void check_tier(const std::string& t, const std::string& path) {
  try {
    tier_from_label(t);
  } catch (const std::exception& e) {
    fail(path, e.what());
  }
}

}  // namespace

ExperimentConfig::ExperimentConfig() {
  test_generation.rollouts = 60;
  test_generation.seed = 900000;
  test_generation.assembly.max_positives = 200;
  baselines.validation.rollouts = 20;
  baselines.validation.seed = 800000;
  baselines.validation.assembly.max_positives = 50;
}

void ExperimentConfig::validate() const {
  static const std::set<std::string> all{"cfm", "mlp", "gmo", "cpf"};
  if (!all.count(estimator)) fail("/estimator", "must be one of cfm, mlp, gmo, cpf");
  if (!(eval.delta > 0 && eval.delta < 1)) fail("/eval/delta", "must lie in (0, 1)");
  if (eval.min_duration < 1) fail("/eval/min_duration", "must be >= 1");
  if (eval.time_tolerance < 0) fail("/eval/time_tolerance", "must be >= 0");
  if (eval.link_tolerance < 0) fail("/eval/link_tolerance", "must be >= 0");
  if (!(eval.frame_dt > 0)) fail("/eval/frame_dt", "must be positive");
  for (int k : eval.top_k)
    if (k < 1) fail("/eval/top_k", "entries must be >= 1");
  check_generation(train_generation, "/train_generation");
  check_generation(test_generation, "/test_generation");
  check_generation(baselines.validation, "/baselines/validation");
  if (cfm.flow_steps < 1) fail("/cfm/flow_steps", "must be >= 1");
  if (cfm.head != "attention" && cfm.head != "linear") fail("/cfm/head", "must be 'attention' or 'linear'");
  if (cfm.train.steps < 1) fail("/cfm/train/steps", "must be >= 1");
  if (cfm.train.batch < 1) fail("/cfm/train/batch", "must be >= 1");
  if (!(cfm.train.lr > 0)) fail("/cfm/train/lr", "must be positive");
  if (mlp.train.steps < 1) fail("/mlp/train/steps", "must be >= 1");
  if (mlp.train.batch < 1) fail("/mlp/train/batch", "must be >= 1");
  if (!(mlp.train.lr > 0)) fail("/mlp/train/lr", "must be positive");
  if (mlp.hidden.empty()) fail("/mlp/hidden", "needs at least one layer");
  if (!(baselines.gmo.gain > 0)) fail("/baselines/gmo/gain", "must be positive");
  if (!(baselines.gmo.temperature > 0)) fail("/baselines/gmo/temperature", "must be positive");
  if (baselines.cpf.filter.particles < 1) fail("/baselines/cpf/filter/particles", "must be >= 1");
  if (!(baselines.cpf.filter.sigma_lik > 0)) fail("/baselines/cpf/filter/sigma_lik", "must be positive");
  if (baselines.cpf.filter.rejuvenation < 0 || baselines.cpf.filter.rejuvenation > 1)
    fail("/baselines/cpf/filter/rejuvenation", "must lie in [0, 1]");
  for (double v : baselines.gmo_gain_grid)
    if (!(v > 0)) fail("/baselines/gmo_gain_grid", "entries must be positive");
  for (double v : baselines.gmo_temperature_grid)
    if (!(v > 0)) fail("/baselines/gmo_temperature_grid", "entries must be positive");
  for (double v : baselines.cpf_sigma_grid)
    if (!(v > 0)) fail("/baselines/cpf_sigma_grid", "entries must be positive");
  for (double v : baselines.cpf_threshold_grid)
    if (v < 0) fail("/baselines/cpf_threshold_grid", "entries must be >= 0");
  if (sweep.sigmas.size() < 2) fail("/sweep/sigmas", "needs at least two values");
  for (double s : sweep.sigmas)
    if (s < 0) fail("/sweep/sigmas", "entries must be >= 0");
  check_estimators(sweep.estimators, "/sweep/estimators", all);
  if (multi_contact.contacts.empty()) fail("/multi_contact/contacts", "needs at least one value");
  for (int k : multi_contact.contacts)
    if (k < 1) fail("/multi_contact/contacts", "entries must be >= 1");
  check_estimators(multi_contact.estimators, "/multi_contact/estimators", all);
  if (robustness.tiers.empty()) fail("/robustness/tiers", "needs at least one tier");
  for (std::size_t i = 0; i < robustness.tiers.size(); ++i)
    check_tier(robustness.tiers[i], "/robustness/tiers/" + std::to_string(i));
  check_tier(robustness.test_tier, "/robustness/test_tier");
  if (robustness.episodes < 1) fail("/robustness/episodes", "must be >= 1");
  if (robustness.recovery_window < 1) fail("/robustness/recovery_window", "must be >= 1");
  if (cross_task.tasks.empty()) fail("/cross_task/tasks", "needs at least one task");
  for (const auto& t : cross_task.tasks) try {
      task_from_name(t);
    } catch (const std::exception& e) {
      fail("/cross_task/tasks", e.what());
    }
  try {
    task_from_name(cross_task.single_task);
  } catch (const std::exception& e) {
    fail("/cross_task/single_task", e.what());
  }
}

ExperimentConfig config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: malformed JSON: ") + e.what());
  }
  ExperimentConfig cfg;
  from_j(j, cfg, "");
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return config_from_json(ss.str());
}

std::string config_to_json(const ExperimentConfig& cfg) {
  auto copy = cfg;
  return to_j(copy).dump(2) + "\n";
}

std::string config_schema() {
  ExperimentConfig cfg;
  json s = schema_of(cfg);
  s["$schema"] = "https://json-schema.org/draft/2020-12/schema";
  s["title"] = "wrenchfield experiment configuration";
  return s.dump(2) + "\n";
}

CfmArchitecture cfm_architecture(const CfmSettings& s, const DatasetHeader& data) {
  CfmArchitecture a;
  a.h_win = data.h_win;
  a.n_regions = data.n_regions;
  a.wrench_dim = data.wrench_dim;
  a.obs_dim = data.obs_dim;
  a.d_model = s.d_model;
  a.layers = s.layers;
  a.expansion = s.expansion;
  a.head = s.head;
  a.attn_dim = s.attn_dim;
  a.time_mixing = s.time_mixing;
  a.time_hidden = s.time_hidden;
  a.wrench_scale = s.wrench_scale;
  a.steps = s.flow_steps;
  a.sigma_min = s.sigma_min;
  return a;
}

MlpArchitecture mlp_architecture(const MlpSettings& s, const DatasetHeader& data) {
  MlpArchitecture a;
  a.h_win = data.h_win;
  a.n_regions = data.n_regions;
  a.wrench_dim = data.wrench_dim;
  a.obs_dim = data.obs_dim;
  a.hidden = s.hidden;
  a.wrench_scale = s.wrench_scale;
  return a;
}

}  // namespace wrenchfield
