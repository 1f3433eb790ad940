#include "wrenchfield/control.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace wrenchfield {

void validate(const PDGains& gains, int n) {
  if (gains.k.size() != n || gains.d.size() != n) throw ControlError("PD gain vectors must have one entry per joint");
  if ((gains.k.array() <= 0.0).any()) throw ControlError("PD stiffness must be positive");
  if ((gains.d.array() < 0.0).any()) throw ControlError("PD damping must be non-negative");
}

PDGains default_gains(const RobotModel& model) {
  PDGains g;
  g.k.resize(model.joint_count());
  g.d.resize(model.joint_count());
  for (int j = 0; j < model.joint_count(); ++j) {
    const bool shoulder = model.joints[j].name.find("shoulder") != std::string::npos;
    g.k(j) = shoulder ? 60.0 : 320.0;
    g.d(j) = shoulder ? 3.0 : 10.0;
  }
  return g;
}

ControllerTier tier_from_label(const std::string& label) {
  if (label == "good") return {"good", 1.0, 1.0};
  if (label == "fair") return {"fair", 0.5, 0.8};
  if (label == "poor") return {"poor", 0.25, 0.6};
  throw ControlError("unknown controller tier '" + label + "' (expected good, fair or poor)");
}

std::vector<ControllerTier> standard_tiers() {
  return {tier_from_label("good"), tier_from_label("fair"), tier_from_label("poor")};
}

Eigen::VectorXd pd_torques(const RobotModel& model, const GeneralizedState& state, const PDGains& gains,
                           const ControllerTier& tier, const Eigen::VectorXd* target, Eigen::VectorXd* unclamped) {
  const int n = model.joint_count();
  const Eigen::VectorXd& q_ref = target ? *target : model.q_default;
  const Eigen::VectorXd raw = tier.gain_scale * (gains.k.cwiseProduct(q_ref - state.q_joint) -
                                                 gains.d.cwiseProduct(state.v.tail(n)));
  if (unclamped) *unclamped = raw;
  Eigen::VectorXd tau(n);
  for (int j = 0; j < n; ++j) {
    const double lim = model.joints[j].torque_limit * tier.torque_limit_scale;
    tau(j) = std::clamp(raw(j), -lim, lim);
  }
  return tau;
}

double torque_violation(const RobotModel& model, const ControllerTier& tier, const Eigen::VectorXd& unclamped) {
  double v = 0.0;
  for (int j = 0; j < model.joint_count(); ++j)
    v += std::max(0.0, std::abs(unclamped(j)) - model.joints[j].torque_limit * tier.torque_limit_scale);
  return v;
}

Eigen::Vector3d event_region_wrench(const RobotModel& model, const Kinematics& kin, const ContactEvent& ev) {
  const auto& reg = model.regions.at(ev.region);
  const Vec2 f_body = rot2(kin.angle[reg.body]).transpose() * ev.force;
  const RegionWrench w = com_equivalent_wrench(model, ev.region, reg.body, ev.point, f_body);
  return world_to_base(kin.angle[0], Eigen::Vector3d(ev.force.x(), ev.force.y(), w.wrench(2)));
}

std::string task_name(Task task) { return task == Task::standing ? "standing" : "sway"; }

Task task_from_name(const std::string& name) {
  if (name == "standing") return Task::standing;
  if (name == "sway") return Task::sway;
  throw ControlError("unknown task '" + name + "' (expected standing or sway)");
}

GeneralizedState Rollout::state(int frame) const {
  GeneralizedState s;
  s.t_phys = frame * frame_dt;
  s.q_base = q_base.row(frame).transpose();
  s.q_joint = q_joint.row(frame).transpose();
  s.v = v.row(frame).transpose();
  return s;
}

GeneralizedState standing_state(const RobotModel& model, const GroundContactConfig& ground) {
  if (model.foot_points.empty()) throw ControlError("standing requires foot contact points");
  // Base pitch that levels the first foot body.
  double pitch = 0.0;
  for (int j : model.joint_chain(model.foot_points.front().body)) pitch -= model.q_default(j);
  GeneralizedState s = make_state(model, Eigen::Vector3d(0.0, 0.0, pitch), model.q_default);
  const Kinematics kin = compute_kinematics(model, s);
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& fp : model.foot_points) lowest = std::min(lowest, kin.point_position(fp.body, fp.point).y());
  const double sink = model.total_mass() * kGravity / (ground.stiffness * model.foot_points.size());
  s.q_base(1) = -lowest - sink;
  return s;
}

Eigen::VectorXd task_target(const RobotModel& model, const EpisodeOptions& opts, double t, double phase) {
  Eigen::VectorXd q = model.q_default;
  if (opts.task == Task::sway && t > 0.0) {
    const double offset = opts.sway_amplitude *
                          (std::sin(2.0 * M_PI * opts.sway_frequency * t + phase) - std::sin(phase));
    for (int j = 0; j < model.joint_count(); ++j) {
      const auto& name = model.joints[j].name;
      // Hips and knees move in opposition so the feet stay flat while the torso sways.
      if (name.find("hip") != std::string::npos) q(j) += offset;
      if (name.find("knee") != std::string::npos) q(j) -= offset;
    }
  }
  return q;
}

bool fallen(const RobotModel& model, const GeneralizedState& state) {
  return state.q_base(1) < model.fall.min_base_height || std::abs(state.q_base(2)) > model.fall.max_abs_pitch;
}

Rollout run_episode(const RobotModel& model, const PDGains& gains, const ControllerTier& tier,
                    const std::vector<ContactEvent>& events, double duration, std::uint64_t seed,
                    const EpisodeOptions& opts) {
  if (!(duration > 0.0)) throw ControlError("episode duration must be positive");
  if (opts.log_every < 1) throw ControlError("log_every must be >= 1");
  validate(gains, model.joint_count());
  validate(opts.ground);
  for (const auto& ev : events)
    if (ev.region < 0 || ev.region >= model.region_count()) throw ControlError("contact event on unknown region");

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  GeneralizedState s = standing_state(model, opts.ground);
  for (int j = 0; j < model.joint_count(); ++j) s.q_joint(j) += opts.init_jitter * unit(rng);
  const double phase = M_PI * (unit(rng) + 1.0);

  const int n = model.joint_count();
  const int nd = model.dof();
  const int nw = model.region_count() * model.wrench_dim();

  const long settle_steps = std::lround(opts.settle / opts.dt);
  for (long k = 0; k < settle_steps; ++k) {
    const Eigen::VectorXd tau = pd_torques(model, s, gains, tier);
    s = step(model, s, tau, {}, opts.ground, opts.dt);
  }
  s.t_phys = 0.0;

  const long total_steps = std::lround(duration / opts.dt);
  const int frames = static_cast<int>(total_steps / opts.log_every);
  Rollout r;
  r.frame_dt = opts.dt * opts.log_every;
  r.events = events;
  r.q_base.resize(frames, 3);
  r.q_joint.resize(frames, n);
  r.v.resize(frames, nd);
  r.tau.resize(frames, n);
  r.q_target.resize(frames, n);
  r.wrench = Eigen::MatrixXd::Zero(frames, nw);
  r.ground_gf = Eigen::MatrixXd::Zero(frames, nd);
  r.posture_error.resize(frames);
  r.violation.resize(frames);
  for (const auto& ev : events) {
    const int f = static_cast<int>(std::ceil(ev.start / r.frame_dt - 1e-9));
    if (f < frames && (r.first_event_frame < 0 || f < r.first_event_frame)) r.first_event_frame = f;
  }

  Eigen::VectorXd ground_acc = Eigen::VectorXd::Zero(nd);
  Eigen::VectorXd ground_gf(nd);
  int frame = 0;
  for (long k = 0; k < total_steps && frame < frames; ++k) {
    const double t = k * opts.dt;
    const Eigen::VectorXd target = task_target(model, opts, t, phase);
    Eigen::VectorXd unclamped;
    const Eigen::VectorXd tau = pd_torques(model, s, gains, tier, &target, &unclamped);
    std::vector<PointForce> ext;
    for (const auto& ev : events)
      if (ev.active(t)) ext.push_back({model.regions[ev.region].body, ev.point, ev.force});

    if (k % opts.log_every == 0) {
      r.q_base.row(frame) = s.q_base.transpose();
      r.q_joint.row(frame) = s.q_joint.transpose();
      r.v.row(frame) = s.v.transpose();
      r.tau.row(frame) = tau.transpose();
      r.q_target.row(frame) = target.transpose();
      r.posture_error(frame) = (s.q_joint - target).norm();
      r.violation(frame) = torque_violation(model, tier, unclamped);
      if (frame > 0) r.ground_gf.row(frame) = (ground_acc / opts.log_every).transpose();
      ground_acc.setZero();
      bool any = false;
      Kinematics kin;
      for (const auto& ev : events) {
        if (!ev.active(t)) continue;
        if (!any) kin = compute_kinematics(model, s);
        any = true;
        r.wrench.block<1, 3>(frame, 3 * ev.region) += event_region_wrench(model, kin, ev).transpose();
      }
      ++frame;
      if (fallen(model, s)) {
        r.fell = true;
        break;
      }
    }
    s = step(model, s, tau, ext, opts.ground, opts.dt, {}, &ground_gf);
    ground_acc += ground_gf;
  }
  r.n_frames = frame;
  if (frame < frames) {
    auto trim = [frame](Eigen::MatrixXd& m) { m.conservativeResize(frame, Eigen::NoChange); };
    trim(r.q_base);
    trim(r.q_joint);
    trim(r.v);
    trim(r.tau);
    trim(r.q_target);
    trim(r.wrench);
    trim(r.ground_gf);
    r.posture_error.conservativeResize(frame);
    r.violation.conservativeResize(frame);
    if (r.first_event_frame >= frame) r.first_event_frame = -1;
  }
  return r;
}

int recovery_frame(const Eigen::VectorXd& e, int reference, double eps, int window) {
  const int T = static_cast<int>(e.size());
  int run = 0;
  for (int k = std::max(0, reference); k < T; ++k) {
    run = e(k) <= eps ? run + 1 : 0;
    if (run == window) return k - window + 1;
  }
  return -1;
}

RobustnessInput robustness_input(const Rollout& r) {
  return {r.posture_error, r.violation, r.fell, std::max(0, r.first_event_frame), r.frame_dt};
}

RobustnessReport robustness_metrics(const std::vector<RobustnessInput>& rollouts, double eps, int recovery_window) {
  if (rollouts.empty()) throw ControlError("robustness metrics need at least one rollout");
  if (recovery_window < 1) throw ControlError("recovery window must be >= 1 frame");
  RobustnessReport rep;
  rep.rollouts = static_cast<int>(rollouts.size());
  int survived = 0, recovered = 0;
  for (const auto& r : rollouts) {
    if (!r.fell) ++survived;
    double itae = 0.0;
    for (int k = 0; k < r.posture_error.size(); ++k) itae += (k * r.frame_dt) * r.posture_error(k) * r.frame_dt;
    rep.itae_mean += itae;
    if (r.violation.size() > 0) rep.viomag_mean += r.violation.mean();
    const int k = r.fell ? -1 : recovery_frame(r.posture_error, r.reference_frame, eps, recovery_window);
    if (k >= 0) {
      ++recovered;
      rep.t_rec.push_back((k - r.reference_frame) * r.frame_dt);
    } else {
      rep.t_rec.push_back(std::numeric_limits<double>::infinity());
    }
  }
  const double nr = static_cast<double>(rollouts.size());
  rep.sr = survived / nr;
  rep.rvr = recovered / nr;
  rep.itae_mean /= nr;
  rep.viomag_mean /= nr;
  return rep;
}

RobustnessReport robustness_metrics(const std::vector<Rollout>& rollouts, double eps, int recovery_window) {
  std::vector<RobustnessInput> in;
  in.reserve(rollouts.size());
  for (const auto& r : rollouts) in.push_back(robustness_input(r));
  return robustness_metrics(in, eps, recovery_window);
}

}  // namespace wrenchfield
