#include "wrenchfield/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "json.hpp"

namespace wrenchfield {

using nlohmann::json;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

namespace {

double uniform(Rng& rng, double lo, double hi) {
  return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
}

}  // namespace

void SamplerConfig::validate() const {
  if (!(force_min > 0.0) || force_max < force_min) throw DataError("sampler force range must satisfy 0 < min <= max");
  if (!(duration_min > 0.0) || duration_max < duration_min)
    throw DataError("sampler duration range must satisfy 0 < min <= max");
  if (lead_in < 0.0 || episode < lead_in + duration_max)
    throw DataError("sampler episode too short for lead_in + max duration");
}

std::string SamplerConfig::to_json() const {
  return json{{"force_min_n", force_min},       {"force_max_n", force_max}, {"duration_min_s", duration_min},
              {"duration_max_s", duration_max}, {"episode_s", episode},     {"lead_in_s", lead_in}}
      .dump();
}

ContactEvent sample_contact(Rng& rng, const SamplerConfig& cfg, const RobotModel& model) {
  ContactEvent ev;
  const double mag = uniform(rng, cfg.force_min, cfg.force_max);
  const double ang = uniform(rng, 0.0, 2.0 * M_PI);
  ev.force = Vec2(mag * std::cos(ang), mag * std::sin(ang));
  ev.duration = uniform(rng, cfg.duration_min, cfg.duration_max);
  ev.region = std::uniform_int_distribution<int>(0, model.region_count() - 1)(rng);
  const auto& pts = model.regions[ev.region].points;
  ev.point = pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)];
  ev.start = uniform(rng, cfg.lead_in, cfg.episode - ev.duration);
  return ev;
}

std::vector<ContactEvent> sample_simultaneous(Rng& rng, const SamplerConfig& cfg, const RobotModel& model, int k) {
  if (k < 0 || k > model.region_count())
    throw DataError("cannot place " + std::to_string(k) + " simultaneous contacts on " +
                    std::to_string(model.region_count()) + " regions");
  std::vector<ContactEvent> out;
  if (k == 0) return out;
  std::vector<int> regions(model.region_count());
  std::iota(regions.begin(), regions.end(), 0);
  for (int i = 0; i < k; ++i) {
    const int j = std::uniform_int_distribution<int>(i, model.region_count() - 1)(rng);
    std::swap(regions[i], regions[j]);
  }
  const ContactEvent first = sample_contact(rng, cfg, model);
  for (int i = 0; i < k; ++i) {
    ContactEvent ev = i == 0 ? first : sample_contact(rng, cfg, model);
    ev.region = regions[i];
    const auto& pts = model.regions[ev.region].points;
    ev.point = pts[std::uniform_int_distribution<std::size_t>(0, pts.size() - 1)(rng)];
    ev.start = first.start;
    ev.duration = first.duration;
    out.push_back(ev);
  }
  return out;
}

ObservationLayout observation_layout(const RobotModel& model, const ObservationConfig& cfg) {
  return {model.joint_count(), cfg.include_command};
}

Eigen::VectorXd impedance_normalized_torque(const Eigen::VectorXd& tau, const PDGains& gains, double dq_ref,
                                            double dqd_ref, double eps_norm) {
  const Eigen::ArrayXd denom = gains.k.array() * dq_ref + gains.d.array() * dqd_ref + eps_norm;
  if ((denom <= 0.0).any()) throw DataError("torque normalization denominator must be positive");
  return (tau.array() / denom).matrix();
}

PDGains effective_gains(const PDGains& gains, const ControllerTier& tier) {
  return {gains.k * tier.gain_scale, gains.d * tier.gain_scale};
}

Vec2 gravity_direction(double pitch) { return rot2(pitch).transpose() * Vec2(0.0, -1.0); }

Eigen::VectorXd build_observation(const RobotModel& model, const RawFrame& raw, const ObservationConfig& cfg,
                                  const PDGains& effective) {
  const ObservationLayout L = observation_layout(model, cfg);
  const int n = L.n;
  Eigen::VectorXd o(L.dim());
  o.segment(L.q(), n) = cfg.w_q * (raw.q_joint - model.q_default);
  o.segment(L.qd(), n) = cfg.w_qd * raw.qd_joint;
  o(L.omega()) = cfg.w_omega * raw.omega;
  o.segment<2>(L.gdir()) = cfg.w_g * gravity_direction(raw.pitch);
  o.segment(L.tau(), n) =
      cfg.w_tau * impedance_normalized_torque(raw.tau, effective, cfg.dq_ref, cfg.dqd_ref, cfg.eps_norm);
  if (L.command) o.segment(L.cmd(), n) = raw.command;
  return o;
}

RawFrame decode_observation(const RobotModel& model, const Eigen::VectorXd& token, const ObservationConfig& cfg,
                            const PDGains& effective) {
  const ObservationLayout L = observation_layout(model, cfg);
  const int n = L.n;
  RawFrame raw;
  raw.q_joint = token.segment(L.q(), n) / cfg.w_q + model.q_default;
  raw.qd_joint = token.segment(L.qd(), n) / cfg.w_qd;
  raw.omega = token(L.omega()) / cfg.w_omega;
  const Vec2 g = token.segment<2>(L.gdir()) / cfg.w_g;
  raw.pitch = std::atan2(-g.x(), -g.y());
  const Eigen::ArrayXd denom = effective.k.array() * cfg.dq_ref + effective.d.array() * cfg.dqd_ref + cfg.eps_norm;
  raw.tau = (token.segment(L.tau(), n).array() / cfg.w_tau * denom).matrix();
  return raw;
}

RawFrame raw_frame(const RobotModel& model, const Rollout& r, int frame) {
  const int n = model.joint_count();
  RawFrame raw;
  raw.q_joint = r.q_joint.row(frame).transpose();
  raw.qd_joint = r.v.row(frame).tail(n).transpose();
  raw.omega = r.v(frame, 2);
  raw.pitch = r.q_base(frame, 2);
  raw.tau = r.tau.row(frame).transpose();
  raw.command = r.q_target.row(frame).transpose() - model.q_default;
  return raw;
}

MatF derive_mask(const MatF& wrench, int regions, int wrench_dim) {
  MatF m(wrench.rows(), regions);
  for (Eigen::Index t = 0; t < wrench.rows(); ++t)
    for (int i = 0; i < regions; ++i)
      m(t, i) = wrench.row(t).segment(i * wrench_dim, wrench_dim).squaredNorm() > 0.0f ? 1.0f : 0.0f;
  return m;
}

TokenizedRollout tokenize(const RobotModel& model, const Rollout& r, const ObservationConfig& cfg,
                          const PDGains& effective) {
  const ObservationLayout L = observation_layout(model, cfg);
  TokenizedRollout t;
  t.obs.resize(r.n_frames, L.dim());
  for (int k = 0; k < r.n_frames; ++k)
    t.obs.row(k) = build_observation(model, raw_frame(model, r, k), cfg, effective).cast<float>().transpose();
  t.wrench = r.wrench.cast<float>();
  t.mask = derive_mask(t.wrench, model.region_count(), model.wrench_dim());
  return t;
}

std::vector<ClipRef> window_refs(const TokenizedRollout& r, int rollout_index, int h_win, int stride) {
  if (h_win < 1 || stride < 1) throw DataError("window length and stride must be >= 1");
  std::vector<ClipRef> refs;
  for (int s = 0; s + h_win <= r.frames(); s += stride)
    refs.push_back({rollout_index, s, r.mask.middleRows(s, h_win).maxCoeff() > 0.0f});
  return refs;
}

Clip extract_clip(const TokenizedRollout& r, const ClipRef& ref, int h_win) {
  Clip c;
  c.obs = r.obs.middleRows(ref.start, h_win);
  c.wrench = r.wrench.middleRows(ref.start, h_win);
  c.mask = r.mask.middleRows(ref.start, h_win);
  c.positive = ref.positive;
  c.rollout = ref.rollout;
  c.start = ref.start;
  return c;
}

std::vector<Clip> windowize(const TokenizedRollout& r, int h_win, int stride, int rollout_index) {
  if (r.frames() < h_win)
    throw DataError("rollout too short: " + std::to_string(r.frames()) + " frames < window " + std::to_string(h_win));
  std::vector<Clip> out;
  for (const auto& ref : window_refs(r, rollout_index, h_win, stride)) out.push_back(extract_clip(r, ref, h_win));
  return out;
}

std::string header_to_json(const DatasetHeader& h) {
  json j{{"version", h.version},
         {"h_win", h.h_win},
         {"n_regions", h.n_regions},
         {"wrench_dim", h.wrench_dim},
         {"obs_dim", h.obs_dim},
         {"count", h.count},
         {"positive_count", h.positive_count},
         {"positives_repeated", h.positives_repeated},
         {"negatives_repeated", h.negatives_repeated},
         {"sampler_hash", h.sampler_hash},
         {"model_hash", h.model_hash},
         {"source", h.source},
         {"meta", h.meta}};
  return j.dump();
}

DatasetHeader header_from_json(const std::string& text) {
  DatasetHeader h;
  try {
    const json j = json::parse(text);
    h.version = j.at("version").get<std::uint32_t>();
    h.h_win = j.at("h_win").get<int>();
    h.n_regions = j.at("n_regions").get<int>();
    h.wrench_dim = j.at("wrench_dim").get<int>();
    h.obs_dim = j.at("obs_dim").get<int>();
    h.count = j.at("count").get<std::int64_t>();
    h.positive_count = j.at("positive_count").get<std::int64_t>();
    h.positives_repeated = j.at("positives_repeated").get<bool>();
    h.negatives_repeated = j.at("negatives_repeated").get<bool>();
    h.sampler_hash = j.at("sampler_hash").get<std::string>();
    h.model_hash = j.at("model_hash").get<std::string>();
    h.source = j.at("source").get<std::string>();
    h.meta = j.at("meta").get<std::map<std::string, std::string>>();
  } catch (const json::exception& e) {
    throw DataError(std::string("bad dataset header: ") + e.what());
  }
  if (h.source != "sim" && h.source != "sensor" && h.source != "prediction")
    throw DataError("bad dataset header: source must be sim, sensor or prediction");
  if (h.h_win < 1 || h.n_regions < 1 || h.wrench_dim < 1 || h.obs_dim < 1 || h.count < 0)
    throw DataError("bad dataset header: non-positive dimension");
  return h;
}

Clip Dataset::clip(std::int64_t i) const {
  const int H = header.h_win;
  Clip c;
  c.obs = Eigen::Map<const MatF>(obs.row(i).data(), H, header.obs_dim);
  c.wrench = Eigen::Map<const MatF>(wrench.row(i).data(), H, header.n_regions * header.wrench_dim);
  c.mask = Eigen::Map<const MatF>(mask.row(i).data(), H, header.n_regions);
  c.positive = c.mask.maxCoeff() > 0.0f;
  return c;
}

void Dataset::resize(std::int64_t count) {
  const int H = header.h_win;
  obs.resize(count, H * header.obs_dim);
  wrench.resize(count, H * header.n_regions * header.wrench_dim);
  mask.resize(count, H * header.n_regions);
  header.count = count;
}

void Dataset::set(std::int64_t i, const Clip& c) {
  if (c.obs.size() != obs.cols() || c.wrench.size() != wrench.cols() || c.mask.size() != mask.cols())
    throw DataError("clip shape does not match dataset header");
  obs.row(i) = Eigen::Map<const Eigen::RowVectorXf>(c.obs.data(), c.obs.size());
  wrench.row(i) = Eigen::Map<const Eigen::RowVectorXf>(c.wrench.data(), c.wrench.size());
  mask.row(i) = Eigen::Map<const Eigen::RowVectorXf>(c.mask.data(), c.mask.size());
}

std::vector<std::size_t> assemble_indices(const std::vector<ClipRef>& refs, std::uint64_t seed,
                                          const AssemblyOptions& opts, bool* repeated_negatives) {
  if (opts.neg_per_pos < 0) throw DataError("neg_per_pos must be >= 0");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < refs.size(); ++i) (refs[i].positive ? pos : neg).push_back(i);
  if (pos.empty()) throw DataError("no positive clips");
  Rng rng(seed);
  std::shuffle(pos.begin(), pos.end(), rng);
  std::shuffle(neg.begin(), neg.end(), rng);
  if (opts.max_positives >= 0 && static_cast<std::int64_t>(pos.size()) > opts.max_positives)
    pos.resize(opts.max_positives);
  const std::size_t need = pos.size() * opts.neg_per_pos;
  bool repeated = false;
  if (neg.size() < need) {
    if (!opts.repeat_minority || neg.empty())
      throw DataError("negative class exhausted: need " + std::to_string(need) + " negatives, have " +
                      std::to_string(neg.size()) + " (repetition disabled)");
    repeated = true;
    const std::size_t have = neg.size();
    for (std::size_t i = have; i < need; ++i) neg.push_back(neg[i % have]);
  }
  neg.resize(need);
  if (repeated_negatives) *repeated_negatives = repeated;
  std::vector<std::size_t> out(pos);
  out.insert(out.end(), neg.begin(), neg.end());
  std::shuffle(out.begin(), out.end(), rng);
  return out;
}

Dataset assemble_dataset(const std::vector<Clip>& clips, std::uint64_t seed, const AssemblyOptions& opts,
                         DatasetHeader header) {
  std::vector<ClipRef> refs;
  refs.reserve(clips.size());
  for (const auto& c : clips) refs.push_back({c.rollout, c.start, c.positive});
  bool repeated = false;
  const auto idx = assemble_indices(refs, seed, opts, &repeated);
  Dataset ds;
  ds.header = header;
  ds.header.negatives_repeated = repeated;
  if (!clips.empty()) {
    ds.header.h_win = static_cast<int>(clips.front().obs.rows());
    ds.header.obs_dim = static_cast<int>(clips.front().obs.cols());
  }
  ds.resize(static_cast<std::int64_t>(idx.size()));
  std::int64_t positives = 0;
  for (std::size_t i = 0; i < idx.size(); ++i) {
    ds.set(static_cast<std::int64_t>(i), clips[idx[i]]);
    positives += clips[idx[i]].positive;
  }
  ds.header.positive_count = positives;
  return ds;
}

void RandomizationRanges::validate() const {
  auto check = [](const double r[2], const char* name, bool allow_zero) {
    if (r[1] < r[0]) throw DataError(std::string("randomization range '") + name + "' has max < min");
    if (allow_zero ? r[0] < 0.0 : !(r[0] > 0.0))
      throw DataError(std::string("randomization range '") + name + "' produces non-positive values");
  };
  check(mass, "mass", false);
  check(inertia, "inertia", false);
  check(torque_limit, "torque_limit", false);
  check(friction, "friction", true);
  if (damping_add[0] < 0.0 || damping_add[1] < damping_add[0])
    throw DataError("randomization range 'damping_add' must satisfy 0 <= min <= max");
}

bool RandomizationRanges::identity() const {
  return mass[0] == 1 && mass[1] == 1 && inertia[0] == 1 && inertia[1] == 1 && damping_add[0] == 0 &&
         damping_add[1] == 0 && torque_limit[0] == 1 && torque_limit[1] == 1 && friction[0] == 1 && friction[1] == 1;
}

RandomizedWorld domain_randomize(const RobotModel& model, const GroundContactConfig& ground, Rng& rng,
                                 const RandomizationRanges& ranges) {
  ranges.validate();
  RandomizedWorld w{model, ground};
  for (auto& b : w.model.bodies) {
    b.mass *= uniform(rng, ranges.mass[0], ranges.mass[1]);
    b.inertia *= uniform(rng, ranges.inertia[0], ranges.inertia[1]);
  }
  for (auto& j : w.model.joints) {
    j.damping += uniform(rng, ranges.damping_add[0], ranges.damping_add[1]);
    j.torque_limit *= uniform(rng, ranges.torque_limit[0], ranges.torque_limit[1]);
  }
  w.ground.friction *= uniform(rng, ranges.friction[0], ranges.friction[1]);
  validate(w.model);
  return w;
}

MatF inject_noise(const MatF& window, const ObservationLayout& L, const NoiseSigma& sigma, Rng& rng) {
  if (sigma.q < 0 || sigma.qd < 0 || sigma.omega < 0 || sigma.gdir < 0 || sigma.tau < 0 || sigma.command < 0)
    throw DataError("noise sigma must be non-negative");
  if (window.cols() != L.dim()) throw DataError("window width does not match the observation layout");
  MatF out = window;
  if (sigma.zero()) return out;
  std::normal_distribution<double> normal(0.0, 1.0);
  auto add = [&](int start, int len, double s, Eigen::Index t) {
    for (int c = start; c < start + len; ++c) out(t, c) += static_cast<float>(s * normal(rng));
  };
  for (Eigen::Index t = 0; t < out.rows(); ++t) {
    add(L.q(), L.n, sigma.q, t);
    add(L.qd(), L.n, sigma.qd, t);
    add(L.omega(), 1, sigma.omega, t);
    add(L.gdir(), 2, sigma.gdir, t);
    add(L.tau(), L.n, sigma.tau, t);
    if (L.command) add(L.cmd(), L.n, sigma.command, t);
    const float norm = out.row(t).segment<2>(L.gdir()).norm();
    if (norm > 0.0f) out.row(t).segment<2>(L.gdir()) /= norm;
  }
  return out;
}

GeneratedRollouts generate_rollouts(const RobotModel& model, const PDGains& gains, const GenerationConfig& cfg,
                                    bool keep_raw) {
  cfg.sampler.validate();
  cfg.randomization.validate();
  const ControllerTier tier = tier_from_label(cfg.tier);
  const PDGains eff = effective_gains(gains, tier);
  GeneratedRollouts out;
  out.tokens.reserve(cfg.rollouts);
  for (int e = 0; e < cfg.rollouts; ++e) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(e);
    Rng rng(seed);
    EpisodeOptions opts = cfg.episode;
    opts.task = cfg.task;
    RobotModel world = model;
    if (!cfg.randomization.identity()) {
      RandomizedWorld w = domain_randomize(model, cfg.episode.ground, rng, cfg.randomization);
      world = std::move(w.model);
      opts.ground = w.ground;
    }
    const auto events = sample_simultaneous(rng, cfg.sampler, world, cfg.contacts_per_episode);
    Rollout r = run_episode(world, gains, tier, events, cfg.sampler.episode, seed, opts);
    out.tokens.push_back(tokenize(world, r, cfg.observation, eff));
    out.events.push_back(events);
    out.fell.push_back(r.fell);
    if (keep_raw) out.raw.push_back(std::move(r));
  }
  return out;
}

Dataset build_dataset(const RobotModel& model, const GenerationConfig& cfg, const GeneratedRollouts& gen,
                      std::vector<ClipRef>* chosen) {
  std::vector<ClipRef> refs;
  for (std::size_t e = 0; e < gen.tokens.size(); ++e) {
    if (gen.tokens[e].frames() < cfg.h_win) continue;
    auto r = window_refs(gen.tokens[e], static_cast<int>(e), cfg.h_win, cfg.stride);
    refs.insert(refs.end(), r.begin(), r.end());
  }
  bool repeated = false;
  const auto idx = assemble_indices(refs, cfg.seed, cfg.assembly, &repeated);

  Dataset ds;
  ds.header.h_win = cfg.h_win;
  ds.header.n_regions = model.region_count();
  ds.header.wrench_dim = model.wrench_dim();
  ds.header.obs_dim = observation_layout(model, cfg.observation).dim();
  ds.header.negatives_repeated = repeated;
  ds.header.sampler_hash = hex64(cfg.sampler.hash());
  ds.header.model_hash = hex64(fnv1a(model_to_json_text(model)));
  ds.header.meta = {{"tier", cfg.tier},
                    {"task", task_name(cfg.task)},
                    {"contacts_per_clip", std::to_string(cfg.contacts_per_episode)},
                    {"seed", std::to_string(cfg.seed)},
                    {"rollouts", std::to_string(cfg.rollouts)},
                    {"stride", std::to_string(cfg.stride)},
                    {"command_channel", cfg.observation.include_command ? "true" : "false"}};
  ds.resize(static_cast<std::int64_t>(idx.size()));
  std::int64_t positives = 0;
  if (chosen) chosen->clear();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const ClipRef& ref = refs[idx[i]];
    ds.set(static_cast<std::int64_t>(i), extract_clip(gen.tokens[ref.rollout], ref, cfg.h_win));
    positives += ref.positive;
    if (chosen) chosen->push_back(ref);
  }
  ds.header.positive_count = positives;
  return ds;
}

}  // namespace wrenchfield
