#pragma once

#include "wrenchfield/robot_model.hpp"

#include <Eigen/Dense>

#include <optional>
#include <vector>

namespace wrenchfield {

inline constexpr double kGravity = 9.81;

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Base pose (x, z, pitch), joint angles and generalized velocity
/// [xdot, zdot, pitchdot, qdot_joints]. Base velocities are world aligned.
struct GeneralizedState {
  double t_phys = 0.0;
  Eigen::Vector3d q_base = Eigen::Vector3d::Zero();
  Eigen::VectorXd q_joint;
  Eigen::VectorXd v;

  Eigen::VectorXd q() const {
    Eigen::VectorXd out(3 + q_joint.size());
    out << q_base, q_joint;
    return out;
  }
  Eigen::Ref<const Eigen::VectorXd> v_joint() const { return v.tail(q_joint.size()); }
  bool finite() const { return q_base.allFinite() && q_joint.allFinite() && v.allFinite(); }
};

GeneralizedState make_state(const RobotModel& model, const Eigen::Vector3d& q_base,
                            const Eigen::VectorXd& q_joint,
                            const std::optional<Eigen::VectorXd>& v = std::nullopt);

/// H(q), symmetric positive definite, with base/joint block views.
struct MassMatrix {
  Eigen::MatrixXd H;
  int base_dof = 3;

  auto bb() const { return H.topLeftCorner(base_dof, base_dof); }
  auto bj() const { return H.topRightCorner(base_dof, H.cols() - base_dof); }
  auto jj() const { return H.bottomRightCorner(H.rows() - base_dof, H.cols() - base_dof); }
};

/// C(q,v)v + g(q).
struct BiasForce {
  Eigen::VectorXd h;
  int base_dof = 3;

  auto b() const { return h.head(base_dof); }
  auto j() const { return h.tail(h.size() - base_dof); }
};

/// Rows (v_x, v_z, omega) of a body-fixed point in world coordinates.
struct PointJacobian {
  Eigen::MatrixXd J;
  int base_dof = 3;

  auto b() const { return J.leftCols(base_dof); }
  auto j() const { return J.rightCols(J.cols() - base_dof); }
};

/// Per-body world-frame kinematics. Spatial (motion) vectors are ordered
/// (omega, v_x, v_z) and refer to the world origin.
struct Kinematics {
  std::vector<double> angle;       // world angle of each body frame
  std::vector<Vec2> origin;        // world position of each body frame
  std::vector<Vec2> com;           // world CoM of each body
  std::vector<Eigen::Vector3d> joint_axis;  // motion subspace of each body's parent joint
  Eigen::Matrix3d base_axes;       // motion subspace of the floating base
  std::vector<Eigen::Vector3d> velocity;     // spatial velocity of each body
  std::vector<Eigen::Matrix3d> inertia;      // spatial inertia about the world origin

  Vec2 point_position(int body, const Vec2& local) const {
    return origin[body] + rot2(angle[body]) * local;
  }
};

Kinematics compute_kinematics(const RobotModel& model, const GeneralizedState& state);

MassMatrix mass_matrix(const RobotModel& model, const GeneralizedState& state);

/// Inverse dynamics: generalized force producing acceleration `a` under
/// gravity (optional) and the current velocities.
Eigen::VectorXd inverse_dynamics(const RobotModel& model, const GeneralizedState& state,
                                 const Eigen::VectorXd& a, bool with_gravity = true);

BiasForce bias_forces(const RobotModel& model, const GeneralizedState& state);

/// dH/dt along the current velocity.
Eigen::MatrixXd mass_matrix_derivative(const RobotModel& model, const GeneralizedState& state);

PointJacobian point_jacobian(const RobotModel& model, const GeneralizedState& state, int body_id,
                             const Vec2& point_local);

/// World-frame generalized velocity to spatial body velocity map (3 x dof).
Eigen::MatrixXd body_jacobian(const RobotModel& model, const Kinematics& kin, int body_id);

/// Jacobian of a region CoM point with the host body's angular row.
PointJacobian region_jacobian(const RobotModel& model, const GeneralizedState& state, int region);

/// Region Jacobians stacked by region index: (w*N) x (b+n).
Eigen::MatrixXd lift_jacobian(const RobotModel& model, const GeneralizedState& state);

/// Planar wrench (f_x, f_z, tau) rotated between world and base frames.
/// The moment is frame invariant.
Eigen::Vector3d world_to_base(double pitch, const Eigen::Vector3d& wrench_world);
Eigen::Vector3d base_to_world(double pitch, const Eigen::Vector3d& wrench_base);

struct ExternalWrench {
  PointJacobian jacobian;
  Eigen::Vector3d wrench = Eigen::Vector3d::Zero();  // (f_x, f_z, tau), world frame
};

/// Sum of J^T F over the list.
Eigen::VectorXd generalized_force(int dof, const std::vector<ExternalWrench>& ext);

/// Solves H a = S^T tau_m + sum J^T F - h.
Eigen::VectorXd forward_dynamics(const RobotModel& model, const GeneralizedState& state,
                                 const Eigen::VectorXd& tau_m,
                                 const std::vector<ExternalWrench>& ext = {});

struct GroundContactConfig {
  double stiffness = 50000.0;
  double damping = 500.0;
  double friction = 1.0;
  double v_reg = 0.1;
};

void validate(const GroundContactConfig& cfg);

struct GroundForce {
  int body = 0;
  Vec2 point_local = Vec2::Zero();
  Vec2 force = Vec2::Zero();  // world frame
};

std::vector<GroundForce> ground_contact_forces(const RobotModel& model,
                                               const GeneralizedState& state,
                                               const GroundContactConfig& cfg);

/// A point force applied to a body, world frame.
struct PointForce {
  int body = 0;
  Vec2 point_local = Vec2::Zero();
  Vec2 force = Vec2::Zero();
};

/// J^T f summed over point forces.
Eigen::VectorXd generalized_point_forces(const RobotModel& model, const GeneralizedState& state,
                                         const std::vector<PointForce>& forces);

struct StepOptions {
  bool ground = true;
  bool gravity = true;
};

/// Semi-implicit Euler: v += a dt, then q += v dt. Joint viscous damping from
/// the model is applied on top of tau_m. `ground_generalized` receives the
/// generalized ground force used in the step.
GeneralizedState step(const RobotModel& model, const GeneralizedState& state,
                      const Eigen::VectorXd& tau_m, const std::vector<PointForce>& external,
                      const GroundContactConfig& cfg, double dt, StepOptions opts = {},
                      Eigen::VectorXd* ground_generalized = nullptr);

double kinetic_energy(const RobotModel& model, const GeneralizedState& state);
double potential_energy(const RobotModel& model, const GeneralizedState& state);
Vec2 center_of_mass(const RobotModel& model, const GeneralizedState& state);

}  // namespace wrenchfield
