#pragma once

#include "wrenchfield/dynamics.hpp"

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

namespace wrenchfield {

class ControlError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct PDGains {
  Eigen::VectorXd k;  // N*m/rad
  Eigen::VectorXd d;  // N*m*s/rad
};

void validate(const PDGains& gains, int n);

/// Fixture gains: stiff legs, soft shoulders.
PDGains default_gains(const RobotModel& model);

struct ControllerTier {
  std::string label = "good";
  double gain_scale = 1.0;
  double torque_limit_scale = 1.0;
};

ControllerTier tier_from_label(const std::string& label);
std::vector<ControllerTier> standard_tiers();

/// Joint-space PD torques about `target` (defaults to q_default), clamped to
/// the tier-scaled limits. `unclamped` receives the pre-clamp law if given.
Eigen::VectorXd pd_torques(const RobotModel& model, const GeneralizedState& state, const PDGains& gains,
                           const ControllerTier& tier, const Eigen::VectorXd* target = nullptr,
                           Eigen::VectorXd* unclamped = nullptr);

/// Sum over joints of max(0, |tau_unclamped| - limit).
double torque_violation(const RobotModel& model, const ControllerTier& tier, const Eigen::VectorXd& unclamped);

/// A push on one region: world-frame force at a body-frame point, active on
/// [start, start + duration) in logged time.
struct ContactEvent {
  int region = 0;
  Vec2 point = Vec2::Zero();
  Vec2 force = Vec2::Zero();
  double start = 0.0;
  double duration = 0.0;

  bool active(double t) const { return t >= start && t < start + duration; }
};

/// Region wrench (f_x, f_z, tau) in the base frame equivalent to `ev` at the
/// region CoM, for the given kinematic state.
Eigen::Vector3d event_region_wrench(const RobotModel& model, const Kinematics& kin, const ContactEvent& ev);

enum class Task { standing, sway };

std::string task_name(Task task);
Task task_from_name(const std::string& name);

struct EpisodeOptions {
  double settle = 1.0;        // unlogged settling time before t = 0
  double dt = 1e-3;           // physics step
  int log_every = 20;         // 50 Hz at dt = 1e-3
  double init_jitter = 0.02;  // seeded joint offset amplitude at start [rad]
  GroundContactConfig ground;
  Task task = Task::standing;
  double sway_amplitude = 0.15;  // rad on hips and knees
  double sway_frequency = 0.5;   // Hz
};

/// 50 Hz log of one episode. Row k of every matrix is frame k.
struct Rollout {
  double frame_dt = 0.02;
  int n_frames = 0;
  Eigen::MatrixXd q_base;        // frames x 3 (x, z, pitch)
  Eigen::MatrixXd q_joint;       // frames x n
  Eigen::MatrixXd v;             // frames x (b+n); columns 0..1 world base velocity, 2 base angular velocity
  Eigen::MatrixXd tau;           // frames x n, applied (post clamp) torque
  Eigen::MatrixXd q_target;      // frames x n, PD target posture
  Eigen::MatrixXd wrench;        // frames x (N*w), base-frame ground truth region wrenches
  Eigen::MatrixXd ground_gf;     // frames x (b+n), mean ground generalized force over the preceding frame interval
  Eigen::VectorXd posture_error; // e(k)
  Eigen::VectorXd violation;     // v(k)
  std::vector<ContactEvent> events;
  bool fell = false;
  int first_event_frame = -1;    // -1 when no event starts inside the log

  GeneralizedState state(int frame) const;
};

/// Initial double-support stance with flat feet and the base height set for
/// a static spring load.
GeneralizedState standing_state(const RobotModel& model, const GroundContactConfig& ground);

/// PD target at logged time t.
Eigen::VectorXd task_target(const RobotModel& model, const EpisodeOptions& opts, double t, double phase);

Rollout run_episode(const RobotModel& model, const PDGains& gains, const ControllerTier& tier,
                    const std::vector<ContactEvent>& events, double duration, std::uint64_t seed,
                    const EpisodeOptions& opts = {});

bool fallen(const RobotModel& model, const GeneralizedState& state);

struct RobustnessReport {
  double sr = 0.0;
  double itae_mean = 0.0;
  double viomag_mean = 0.0;
  double rvr = 0.0;
  std::vector<double> t_rec;  // seconds from the first event onset; infinity when never recovered
  int rollouts = 0;
};

struct RobustnessInput {
  Eigen::VectorXd posture_error;
  Eigen::VectorXd violation;
  bool fell = false;
  int reference_frame = 0;  // frame from which recovery is searched
  double frame_dt = 0.02;
};

RobustnessInput robustness_input(const Rollout& r);

/// First frame k >= reference with e(j) <= eps for j in [k, k + window - 1];
/// returns -1 if none.
int recovery_frame(const Eigen::VectorXd& e, int reference, double eps, int window);

RobustnessReport robustness_metrics(const std::vector<RobustnessInput>& rollouts, double eps = 0.05,
                                    int recovery_window = 25);
RobustnessReport robustness_metrics(const std::vector<Rollout>& rollouts, double eps = 0.05,
                                    int recovery_window = 25);

}  // namespace wrenchfield
