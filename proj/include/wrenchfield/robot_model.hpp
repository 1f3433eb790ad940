#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>
#include <vector>

namespace wrenchfield {

using Vec2 = Eigen::Vector2d;

// Planar convention used throughout: world axes (x forward, z up), angles are
// counter-clockwise in the x-z plane (a rotation about -y), and the scalar
// cross product is a x b = a_x b_z - a_z b_x.
inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

inline Eigen::Matrix2d rot2(double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  Eigen::Matrix2d r;
  r << c, -s, s, c;
  return r;
}

class ModelError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BodySpec {
  int id = 0;
  std::string name;
  int parent_joint = -1;  // -1 for the floating base
  double mass = 0.0;
  Vec2 com = Vec2::Zero();
  double inertia = 0.0;  // about the CoM
  std::vector<Vec2> surface_points;
};

struct JointSpec {
  int id = 0;
  std::string name;
  int parent_body = 0;
  int child_body = 0;
  std::string type = "revolute";
  Eigen::Vector3d axis{0.0, -1.0, 0.0};
  Vec2 position = Vec2::Zero();  // in the parent body frame
  double lower = -3.14159;
  double upper = 3.14159;
  double torque_limit = 0.0;
  double damping = 0.0;  // viscous, N*m*s/rad; zero unless randomized
};

/// One candidate contact site. `index` is 0-based in memory and 1-based on disk.
struct SurfaceRegion {
  int index = 0;
  int body = 0;
  Vec2 com = Vec2::Zero();
  std::vector<Vec2> points;
};

struct FootPoint {
  int body = 0;
  Vec2 point = Vec2::Zero();
};

struct FallThresholds {
  double min_base_height = 0.0;
  double max_abs_pitch = 0.0;
};

struct RobotModel {
  std::vector<BodySpec> bodies;
  std::vector<JointSpec> joints;
  std::vector<SurfaceRegion> regions;
  std::vector<FootPoint> foot_points;
  int base_dof = 3;
  Eigen::VectorXd q_default;
  FallThresholds fall;
  std::string region_com_source = "body_com";

  int joint_count() const { return static_cast<int>(joints.size()); }
  int dof() const { return base_dof + joint_count(); }
  int wrench_dim() const { return base_dof; }
  int region_count() const { return static_cast<int>(regions.size()); }
  double total_mass() const;

  /// Hop distance between two bodies along the joint tree.
  int body_hops(int body_a, int body_b) const;
  int region_hops(int region_a, int region_b) const {
    return body_hops(regions.at(region_a).body, regions.at(region_b).body);
  }
  /// Chain of joints from the base down to `body`, base-most first.
  std::vector<int> joint_chain(int body) const;

  bool operator==(const RobotModel&) const;
};

/// Throws ModelError describing the first violated invariant.
void validate(const RobotModel& model);

/// Floating torso + shoulders, hips and knees; one region per body.
RobotModel planar_humanoid_fixture();

RobotModel load_model(const std::string& path);
void save_model(const RobotModel& model, const std::string& path);
RobotModel model_from_json_text(const std::string& text);
std::string model_to_json_text(const RobotModel& model);

/// Planar wrench at a region CoM: (f_x, f_z, tau).
struct RegionWrench {
  int region = 0;
  Eigen::Vector3d wrench = Eigen::Vector3d::Zero();
};

/// Force `force` acting at `point_body` on body `body`, moved to the CoM of
/// `region`: [f; (p - c) x f]. The planar moment is frame invariant, so the
/// returned linear part is in whichever frame `force` was given in.
/// Throws ModelError if `body` does not host `region`.
RegionWrench com_equivalent_wrench(const RobotModel& model, int region, int body,
                                   const Vec2& point_body, const Vec2& force);

}  // namespace wrenchfield
