#include "wrenchfield/dynamics.hpp"

#include <cmath>
#include <sstream>

namespace wrenchfield {

namespace {

// Motion cross product m x (.), spatial vectors ordered (omega, v_x, v_z).
Eigen::Matrix3d crm(const Eigen::Vector3d& m) {
  Eigen::Matrix3d x;
  x << 0.0, 0.0, 0.0,
       m(2), 0.0, -m(0),
       -m(1), m(0), 0.0;
  return x;
}

// Force cross product m x* (.) = -crm(m)^T.
Eigen::Matrix3d crf(const Eigen::Vector3d& m) { return -crm(m).transpose(); }

Eigen::Matrix3d spatial_inertia(double mass, double inertia_com, const Vec2& c) {
  Eigen::Matrix3d I;
  I << inertia_com + mass * c.squaredNorm(), -mass * c.y(), mass * c.x(),
       -mass * c.y(), mass, 0.0,
       mass * c.x(), 0.0, mass;
  return I;
}

// Unit rotation about a world point, expressed at the world origin.
Eigen::Vector3d revolute_axis(const Vec2& p) { return {1.0, p.y(), -p.x()}; }

void check_dims(const RobotModel& model, const GeneralizedState& s) {
  if (s.q_joint.size() != model.joint_count() || s.v.size() != model.dof()) {
    std::ostringstream os;
    os << "state dimension mismatch: model has " << model.joint_count() << " joints / dof "
       << model.dof() << ", state has q_joint " << s.q_joint.size() << " / v " << s.v.size();
    throw DynamicsError(os.str());
  }
}

int joint_column(const RobotModel& model, int body) {
  return model.base_dof + model.bodies[body].parent_joint;
}

}  // namespace

GeneralizedState make_state(const RobotModel& model, const Eigen::Vector3d& q_base,
                            const Eigen::VectorXd& q_joint, const std::optional<Eigen::VectorXd>& v) {
  GeneralizedState s;
  s.q_base = q_base;
  s.q_joint = q_joint;
  s.v = v ? *v : Eigen::VectorXd::Zero(model.dof());
  check_dims(model, s);
  return s;
}

Kinematics compute_kinematics(const RobotModel& model, const GeneralizedState& state) {
  check_dims(model, state);
  const int nb = static_cast<int>(model.bodies.size());
  Kinematics k;
  k.angle.resize(nb);
  k.origin.resize(nb);
  k.com.resize(nb);
  k.joint_axis.resize(nb, Eigen::Vector3d::Zero());
  k.velocity.resize(nb);
  k.inertia.resize(nb);

  const Vec2 base_pos(state.q_base(0), state.q_base(1));
  k.angle[0] = state.q_base(2);
  k.origin[0] = base_pos;
  k.base_axes << 0.0, 0.0, 1.0,
                 1.0, 0.0, base_pos.y(),
                 0.0, 1.0, -base_pos.x();
  k.velocity[0] = k.base_axes * state.v.head<3>();

  for (int i = 1; i < nb; ++i) {
    const auto& jt = model.joints[model.bodies[i].parent_joint];
    const int p = jt.parent_body;
    const double qj = state.q_joint(jt.id);
    k.angle[i] = k.angle[p] + qj;
    k.origin[i] = k.origin[p] + rot2(k.angle[p]) * jt.position;
    k.joint_axis[i] = revolute_axis(k.origin[i]);
    k.velocity[i] = k.velocity[p] + k.joint_axis[i] * state.v(model.base_dof + jt.id);
  }
  for (int i = 0; i < nb; ++i) {
    const auto& b = model.bodies[i];
    k.com[i] = k.origin[i] + rot2(k.angle[i]) * b.com;
    k.inertia[i] = spatial_inertia(b.mass, b.inertia, k.com[i]);
  }
  return k;
}

namespace {

MassMatrix mass_matrix_from(const RobotModel& model, const Kinematics& kin) {
  const int nb = static_cast<int>(model.bodies.size());
  const int nd = model.dof();
  const int nbase = model.base_dof;

  // Composite inertias; in world coordinates they add without transforms.
  std::vector<Eigen::Matrix3d> composite = kin.inertia;
  for (int i = nb - 1; i >= 1; --i) {
    composite[model.joints[model.bodies[i].parent_joint].parent_body] += composite[i];
  }

  MassMatrix out;
  out.base_dof = nbase;
  out.H = Eigen::MatrixXd::Zero(nd, nd);
  out.H.topLeftCorner(nbase, nbase) = kin.base_axes.transpose() * composite[0] * kin.base_axes;
  for (int i = 1; i < nb; ++i) {
    const Eigen::Vector3d F = composite[i] * kin.joint_axis[i];
    const int ci = joint_column(model, i);
    out.H(ci, ci) = kin.joint_axis[i].dot(F);
    int k = model.joints[model.bodies[i].parent_joint].parent_body;
    while (k != 0) {
      const int ck = joint_column(model, k);
      out.H(ck, ci) = out.H(ci, ck) = kin.joint_axis[k].dot(F);
      k = model.joints[model.bodies[k].parent_joint].parent_body;
    }
    const Eigen::Vector3d fb = kin.base_axes.transpose() * F;
    out.H.block(0, ci, nbase, 1) = fb;
    out.H.block(ci, 0, 1, nbase) = fb.transpose();
  }
  return out;
}

}  // namespace

MassMatrix mass_matrix(const RobotModel& model, const GeneralizedState& state) {
  return mass_matrix_from(model, compute_kinematics(model, state));
}

namespace {

Eigen::VectorXd inverse_dynamics_from(const RobotModel& model, const GeneralizedState& state,
                                      const Kinematics& kin, const Eigen::VectorXd& a, bool with_gravity) {
  if (a.size() != model.dof()) throw DynamicsError("acceleration dimension mismatch");
  const int nb = static_cast<int>(model.bodies.size());
  const int nbase = model.base_dof;
  const Eigen::Vector3d vb = state.v.head<3>();

  std::vector<Eigen::Vector3d> acc(nb), force(nb);
  // Base axes move with the base origin: d/dt of the rotation column is (0, zdot, -xdot).
  Eigen::Vector3d base_bias(0.0, vb(2) * vb(1), -vb(2) * vb(0));
  acc[0] = kin.base_axes * a.head<3>() + base_bias;
  if (with_gravity) acc[0] += Eigen::Vector3d(0.0, 0.0, kGravity);
  for (int i = 1; i < nb; ++i) {
    const auto& jt = model.joints[model.bodies[i].parent_joint];
    const double qd = state.v(nbase + jt.id);
    const double qdd = a(nbase + jt.id);
    acc[i] = acc[jt.parent_body] + kin.joint_axis[i] * qdd + crm(kin.velocity[i]) * (kin.joint_axis[i] * qd);
  }
  for (int i = 0; i < nb; ++i) {
    force[i] = kin.inertia[i] * acc[i] + crf(kin.velocity[i]) * (kin.inertia[i] * kin.velocity[i]);
  }
  Eigen::VectorXd tau(model.dof());
  for (int i = nb - 1; i >= 1; --i) {
    const auto& jt = model.joints[model.bodies[i].parent_joint];
    tau(nbase + jt.id) = kin.joint_axis[i].dot(force[i]);
    force[jt.parent_body] += force[i];
  }
  tau.head(nbase) = kin.base_axes.transpose() * force[0];
  return tau;
}

}  // namespace

Eigen::VectorXd inverse_dynamics(const RobotModel& model, const GeneralizedState& state,
                                 const Eigen::VectorXd& a, bool with_gravity) {
  return inverse_dynamics_from(model, state, compute_kinematics(model, state), a, with_gravity);
}

BiasForce bias_forces(const RobotModel& model, const GeneralizedState& state) {
  BiasForce out;
  out.base_dof = model.base_dof;
  out.h = inverse_dynamics(model, state, Eigen::VectorXd::Zero(model.dof()), true);
  return out;
}

Eigen::MatrixXd body_jacobian(const RobotModel& model, const Kinematics& kin, int body_id) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(3, model.dof());
  J.leftCols(model.base_dof) = kin.base_axes;
  int b = body_id;
  while (model.bodies[b].parent_joint >= 0) {
    J.col(joint_column(model, b)) = kin.joint_axis[b];
    b = model.joints[model.bodies[b].parent_joint].parent_body;
  }
  return J;
}

Eigen::MatrixXd mass_matrix_derivative(const RobotModel& model, const GeneralizedState& state) {
  const Kinematics kin = compute_kinematics(model, state);
  const int nb = static_cast<int>(model.bodies.size());
  const int nd = model.dof();
  const Eigen::Vector3d vb = state.v.head<3>();
  Eigen::MatrixXd Hdot = Eigen::MatrixXd::Zero(nd, nd);
  for (int i = 0; i < nb; ++i) {
    const Eigen::MatrixXd J = body_jacobian(model, kin, i);
    Eigen::MatrixXd Jdot = Eigen::MatrixXd::Zero(3, nd);
    Jdot.col(2) = Eigen::Vector3d(0.0, vb(1), -vb(0));
    int b = i;
    while (model.bodies[b].parent_joint >= 0) {
      Jdot.col(joint_column(model, b)) = crm(kin.velocity[b]) * kin.joint_axis[b];
      b = model.joints[model.bodies[b].parent_joint].parent_body;
    }
    const Eigen::Matrix3d& I = kin.inertia[i];
    const Eigen::Matrix3d Idot = crf(kin.velocity[i]) * I - I * crm(kin.velocity[i]);
    const Eigen::MatrixXd IJ = I * J;
    Hdot.noalias() += Jdot.transpose() * IJ;
    Hdot.noalias() += IJ.transpose() * Jdot;
    Hdot.noalias() += J.transpose() * Idot * J;
  }
  return Hdot;
}

PointJacobian point_jacobian(const RobotModel& model, const GeneralizedState& state, int body_id,
                             const Vec2& point_local) {
  if (body_id < 0 || body_id >= static_cast<int>(model.bodies.size()))
    throw DynamicsError("unknown body " + std::to_string(body_id));
  const Kinematics kin = compute_kinematics(model, state);
  const Eigen::MatrixXd Js = body_jacobian(model, kin, body_id);
  const Vec2 p = kin.point_position(body_id, point_local);
  PointJacobian out;
  out.base_dof = model.base_dof;
  out.J.resize(3, model.dof());
  out.J.row(0) = Js.row(1) - p.y() * Js.row(0);
  out.J.row(1) = Js.row(2) + p.x() * Js.row(0);
  out.J.row(2) = Js.row(0);
  return out;
}

PointJacobian region_jacobian(const RobotModel& model, const GeneralizedState& state, int region) {
  if (region < 0 || region >= model.region_count())
    throw DynamicsError("unknown region " + std::to_string(region));
  const auto& r = model.regions[region];
  return point_jacobian(model, state, r.body, r.com);
}

Eigen::MatrixXd lift_jacobian(const RobotModel& model, const GeneralizedState& state) {
  const int w = model.wrench_dim();
  const Kinematics kin = compute_kinematics(model, state);
  Eigen::MatrixXd J(w * model.region_count(), model.dof());
  for (int i = 0; i < model.region_count(); ++i) {
    const auto& r = model.regions[i];
    const Eigen::MatrixXd Js = body_jacobian(model, kin, r.body);
    const Vec2 p = kin.point_position(r.body, r.com);
    J.row(w * i) = Js.row(1) - p.y() * Js.row(0);
    J.row(w * i + 1) = Js.row(2) + p.x() * Js.row(0);
    J.row(w * i + 2) = Js.row(0);
  }
  return J;
}

Eigen::Vector3d world_to_base(double pitch, const Eigen::Vector3d& wrench_world) {
  Eigen::Vector3d out;
  out.head<2>() = rot2(pitch).transpose() * wrench_world.head<2>();
  out(2) = wrench_world(2);
  return out;
}

Eigen::Vector3d base_to_world(double pitch, const Eigen::Vector3d& wrench_base) {
  Eigen::Vector3d out;
  out.head<2>() = rot2(pitch) * wrench_base.head<2>();
  out(2) = wrench_base(2);
  return out;
}

Eigen::VectorXd generalized_force(int dof, const std::vector<ExternalWrench>& ext) {
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(dof);
  for (const auto& e : ext) tau.noalias() += e.jacobian.J.transpose() * e.wrench;
  return tau;
}

namespace {

Eigen::VectorXd solve_spd(const Eigen::MatrixXd& H, const Eigen::VectorXd& rhs) {
  Eigen::LLT<Eigen::MatrixXd> llt(H);
  if (llt.info() != Eigen::Success) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    const auto ev = es.eigenvalues();
    std::ostringstream os;
    os << "mass matrix is singular (condition number " << ev.maxCoeff() / std::abs(ev.minCoeff()) << ")";
    throw DynamicsError(os.str());
  }
  return llt.solve(rhs);
}

}  // namespace

Eigen::VectorXd forward_dynamics(const RobotModel& model, const GeneralizedState& state,
                                 const Eigen::VectorXd& tau_m, const std::vector<ExternalWrench>& ext) {
  if (tau_m.size() != model.joint_count()) throw DynamicsError("tau_m dimension mismatch");
  const MassMatrix H = mass_matrix(model, state);
  Eigen::VectorXd rhs = generalized_force(model.dof(), ext) - bias_forces(model, state).h;
  rhs.tail(model.joint_count()) += tau_m;
  return solve_spd(H.H, rhs);
}

void validate(const GroundContactConfig& cfg) {
  if (!(cfg.stiffness > 0.0) || !(cfg.damping >= 0.0) || !(cfg.friction >= 0.0) || !(cfg.v_reg > 0.0))
    throw DynamicsError("ground contact config requires k_g > 0, d_g >= 0, mu >= 0, v_reg > 0");
}

namespace {

std::vector<GroundForce> ground_forces_from(const RobotModel& model, const GeneralizedState& state,
                                            const Kinematics& kin, const GroundContactConfig& cfg) {
  std::vector<GroundForce> out;
  for (const auto& fp : model.foot_points) {
    const Vec2 p = kin.point_position(fp.body, fp.point);
    if (p.y() >= 0.0) continue;
    const Eigen::MatrixXd Js = body_jacobian(model, kin, fp.body);
    const Eigen::Vector3d V = Js * state.v;
    const Vec2 vel(V(1) - V(0) * p.y(), V(2) + V(0) * p.x());
    double normal = cfg.stiffness * (-p.y()) + cfg.damping * std::max(0.0, -vel.y());
    normal = std::max(0.0, normal);
    const double tangential = -cfg.friction * normal * std::tanh(vel.x() / cfg.v_reg);
    out.push_back({fp.body, fp.point, Vec2(tangential, normal)});
  }
  return out;
}

template <class Forces>
void accumulate_point_forces(const RobotModel& model, const Kinematics& kin, const Forces& forces,
                             Eigen::VectorXd& tau) {
  for (const auto& f : forces) {
    const Eigen::MatrixXd Js = body_jacobian(model, kin, f.body);
    const Vec2 p = kin.point_position(f.body, f.point_local);
    // J^T [f; 0] for rows (v_x, v_z) = (Js1 - p_z Js0, Js2 + p_x Js0).
    tau.noalias() += Js.row(1).transpose() * f.force.x() + Js.row(2).transpose() * f.force.y() +
                     Js.row(0).transpose() * (p.x() * f.force.y() - p.y() * f.force.x());
  }
}

}  // namespace

std::vector<GroundForce> ground_contact_forces(const RobotModel& model, const GeneralizedState& state,
                                               const GroundContactConfig& cfg) {
  if (model.foot_points.empty()) return {};
  return ground_forces_from(model, state, compute_kinematics(model, state), cfg);
}

Eigen::VectorXd generalized_point_forces(const RobotModel& model, const GeneralizedState& state,
                                         const std::vector<PointForce>& forces) {
  Eigen::VectorXd tau = Eigen::VectorXd::Zero(model.dof());
  if (forces.empty()) return tau;
  accumulate_point_forces(model, compute_kinematics(model, state), forces, tau);
  return tau;
}

GeneralizedState step(const RobotModel& model, const GeneralizedState& state, const Eigen::VectorXd& tau_m,
                      const std::vector<PointForce>& external, const GroundContactConfig& cfg, double dt,
                      StepOptions opts, Eigen::VectorXd* ground_generalized) {
  if (!(dt > 0.0) || dt > 0.01) throw DynamicsError("dt must lie in (0, 0.01]");
  if (tau_m.size() != model.joint_count()) throw DynamicsError("tau_m dimension mismatch");
  const int nbase = model.base_dof;
  const int nj = model.joint_count();
  const Kinematics kin = compute_kinematics(model, state);

  Eigen::VectorXd ground = Eigen::VectorXd::Zero(model.dof());
  if (opts.ground && !model.foot_points.empty())
    accumulate_point_forces(model, kin, ground_forces_from(model, state, kin, cfg), ground);
  if (ground_generalized) *ground_generalized = ground;

  Eigen::VectorXd rhs = ground;
  accumulate_point_forces(model, kin, external, rhs);
  for (int j = 0; j < nj; ++j) rhs(nbase + j) += tau_m(j) - model.joints[j].damping * state.v(nbase + j);
  rhs -= inverse_dynamics_from(model, state, kin, Eigen::VectorXd::Zero(model.dof()), opts.gravity);
  const Eigen::VectorXd a = solve_spd(mass_matrix_from(model, kin).H, rhs);

  GeneralizedState next = state;
  next.v = state.v + a * dt;
  next.q_base += next.v.head<3>() * dt;
  next.q_joint += next.v.tail(nj) * dt;
  next.t_phys = state.t_phys + dt;
  if (!next.finite()) throw DynamicsError("simulation diverged: non-finite state at t = " + std::to_string(next.t_phys));
  return next;
}

double kinetic_energy(const RobotModel& model, const GeneralizedState& state) {
  const MassMatrix H = mass_matrix(model, state);
  return 0.5 * state.v.dot(H.H * state.v);
}

double potential_energy(const RobotModel& model, const GeneralizedState& state) {
  const Kinematics kin = compute_kinematics(model, state);
  double pe = 0.0;
  for (std::size_t i = 0; i < model.bodies.size(); ++i) pe += model.bodies[i].mass * kGravity * kin.com[i].y();
  return pe;
}

Vec2 center_of_mass(const RobotModel& model, const GeneralizedState& state) {
  const Kinematics kin = compute_kinematics(model, state);
  Vec2 c = Vec2::Zero();
  for (std::size_t i = 0; i < model.bodies.size(); ++i) c += model.bodies[i].mass * kin.com[i];
  return c / model.total_mass();
}

}  // namespace wrenchfield
