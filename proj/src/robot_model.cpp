#include "wrenchfield/robot_model.hpp"

#include "json.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace wrenchfield {

using nlohmann::json;

double RobotModel::total_mass() const {
  return std::accumulate(bodies.begin(), bodies.end(), 0.0,
                         [](double acc, const BodySpec& b) { return acc + b.mass; });
}

std::vector<int> RobotModel::joint_chain(int body) const {
  std::vector<int> chain;
  int b = body;
  while (bodies.at(b).parent_joint >= 0) {
    const int j = bodies[b].parent_joint;
    chain.push_back(j);
    b = joints.at(j).parent_body;
  }
  return {chain.rbegin(), chain.rend()};
}

int RobotModel::body_hops(int body_a, int body_b) const {
  auto ancestors = [&](int b) {
    std::vector<int> path{b};
    while (bodies.at(b).parent_joint >= 0) {
      b = joints.at(bodies[b].parent_joint).parent_body;
      path.push_back(b);
    }
    return path;
  };
  const auto pa = ancestors(body_a);
  const auto pb = ancestors(body_b);
  for (std::size_t i = 0; i < pa.size(); ++i) {
    for (std::size_t k = 0; k < pb.size(); ++k) {
      if (pa[i] == pb[k]) return static_cast<int>(i + k);
    }
  }
  return -1;
}

namespace {

bool same_points(const std::vector<Vec2>& a, const std::vector<Vec2>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

bool RobotModel::operator==(const RobotModel& o) const {
  if (base_dof != o.base_dof || bodies.size() != o.bodies.size() ||
      joints.size() != o.joints.size() || regions.size() != o.regions.size() ||
      foot_points.size() != o.foot_points.size() || q_default != o.q_default ||
      fall.min_base_height != o.fall.min_base_height ||
      fall.max_abs_pitch != o.fall.max_abs_pitch || region_com_source != o.region_com_source)
    return false;
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const auto &a = bodies[i], &b = o.bodies[i];
    if (a.id != b.id || a.name != b.name || a.parent_joint != b.parent_joint ||
        a.mass != b.mass || a.com != b.com || a.inertia != b.inertia ||
        !same_points(a.surface_points, b.surface_points))
      return false;
  }
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto &a = joints[i], &b = o.joints[i];
    if (a.id != b.id || a.name != b.name || a.parent_body != b.parent_body ||
        a.child_body != b.child_body || a.type != b.type || a.axis != b.axis ||
        a.position != b.position || a.lower != b.lower || a.upper != b.upper ||
        a.torque_limit != b.torque_limit || a.damping != b.damping)
      return false;
  }
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const auto &a = regions[i], &b = o.regions[i];
    if (a.index != b.index || a.body != b.body || a.com != b.com || !same_points(a.points, b.points))
      return false;
  }
  for (std::size_t i = 0; i < foot_points.size(); ++i) {
    if (foot_points[i].body != o.foot_points[i].body ||
        foot_points[i].point != o.foot_points[i].point)
      return false;
  }
  return true;
}

void validate(const RobotModel& m) {
  if (m.base_dof != 3 && m.base_dof != 6)
    throw ModelError("base_dof must be 3 or 6, got " + std::to_string(m.base_dof));
  if (m.base_dof == 6)
    throw ModelError("base_dof 6 (spatial) models are not supported by the planar dynamics engine");
  if (m.bodies.empty()) throw ModelError("model has no bodies");
  const int nb = static_cast<int>(m.bodies.size());
  for (int i = 0; i < nb; ++i) {
    const auto& b = m.bodies[i];
    if (b.id != i) throw ModelError("bodies[" + std::to_string(i) + "] has id " + std::to_string(b.id));
    if (!(b.mass > 0.0) || !std::isfinite(b.mass))
      throw ModelError("body '" + b.name + "' has non-positive mass");
    if (!(b.inertia > 0.0) || !std::isfinite(b.inertia))
      throw ModelError("body '" + b.name + "' has non-positive inertia");
  }
  if (m.bodies[0].parent_joint != -1) throw ModelError("base body must not have a parent joint");

  const int nj = m.joint_count();
  std::vector<int> parent_of(nb, -1);
  std::vector<int> child_count(nb, 0);
  for (int j = 0; j < nj; ++j) {
    const auto& jt = m.joints[j];
    if (jt.id != j) throw ModelError("joints[" + std::to_string(j) + "] has id " + std::to_string(jt.id));
    if (jt.type != "revolute") throw ModelError("joint '" + jt.name + "' has unsupported type " + jt.type);
    if (jt.parent_body < 0 || jt.parent_body >= nb || jt.child_body < 0 || jt.child_body >= nb)
      throw ModelError("joint '" + jt.name + "' references an unknown body");
    if (jt.axis != Eigen::Vector3d(0.0, -1.0, 0.0))
      throw ModelError("joint '" + jt.name + "' axis must be (0,-1,0) for planar models");
    if (jt.torque_limit < 0.0) throw ModelError("joint '" + jt.name + "' has negative torque limit");
    if (jt.lower > jt.upper) throw ModelError("joint '" + jt.name + "' has inverted limits");
    ++child_count[jt.child_body];
    parent_of[jt.child_body] = jt.parent_body;
  }
  // Tree rooted at body 0: every other body has exactly one parent joint, the
  // base has none, and following parents terminates at the base.
  if (child_count[0] != 0) throw ModelError("joint graph not a tree: base body has a parent joint");
  for (int b = 1; b < nb; ++b) {
    if (child_count[b] != 1)
      throw ModelError("joint graph not a tree: body '" + m.bodies[b].name + "' has " +
                       std::to_string(child_count[b]) + " parent joints");
    if (m.joints[m.bodies[b].parent_joint].child_body != b)
      throw ModelError("body '" + m.bodies[b].name + "' parent_joint does not point at it");
  }
  for (int b = 1; b < nb; ++b) {
    std::set<int> seen;
    int cur = b;
    while (cur != 0) {
      if (!seen.insert(cur).second) throw ModelError("joint graph not a tree: cycle through body '" + m.bodies[b].name + "'");
      cur = parent_of[cur];
      if (cur < 0) throw ModelError("joint graph not a tree: body '" + m.bodies[b].name + "' is disconnected");
    }
  }
  // The dynamics sweeps rely on parents being listed before children.
  for (int j = 0; j < nj; ++j)
    if (m.joints[j].parent_body >= m.joints[j].child_body)
      throw ModelError("joint '" + m.joints[j].name + "': parent body must precede child body");

  if (m.q_default.size() != nj)
    throw ModelError("q_default has length " + std::to_string(m.q_default.size()) + ", expected " +
                     std::to_string(nj));
  for (std::size_t r = 0; r < m.regions.size(); ++r) {
    const auto& reg = m.regions[r];
    if (reg.index != static_cast<int>(r)) throw ModelError("region indices must be contiguous");
    if (reg.body < 0 || reg.body >= nb) throw ModelError("region " + std::to_string(r + 1) + " references an unknown body");
    if (reg.points.empty()) throw ModelError("region " + std::to_string(r + 1) + " has no surface points");
    Vec2 lo = reg.points.front(), hi = reg.points.front();
    for (const auto& p : reg.points) {
      lo = lo.cwiseMin(p);
      hi = hi.cwiseMax(p);
    }
    const double slack = 1e-9;
    if ((reg.com.array() < lo.array() - slack).any() || (reg.com.array() > hi.array() + slack).any())
      throw ModelError("region " + std::to_string(r + 1) + " CoM lies outside its surface points");
  }
  for (const auto& fp : m.foot_points)
    if (fp.body < 0 || fp.body >= nb) throw ModelError("foot point references an unknown body");
  if (!(m.fall.min_base_height >= 0.0) || !(m.fall.max_abs_pitch > 0.0))
    throw ModelError("fall thresholds must be non-negative height and positive pitch");
}

RobotModel planar_humanoid_fixture() {
  RobotModel m;
  m.base_dof = 3;

  auto side_points = [](double half_width, double z0, double z1, int count) {
    std::vector<Vec2> pts;
    for (int k = 0; k < count; ++k) {
      const double z = z0 + (z1 - z0) * (k + 0.5) / count;
      pts.emplace_back(half_width, z);
      pts.emplace_back(-half_width, z);
    }
    return pts;
  };

  BodySpec torso{0, "torso", -1, 10.0, Vec2(0.0, 0.25), 10.0 * (0.5 * 0.5 + 0.24 * 0.24) / 12.0,
                 side_points(0.12, 0.05, 0.5, 5)};
  torso.surface_points.emplace_back(0.0, 0.5);
  m.bodies.push_back(torso);

  const double arm_len = 0.45;
  for (int side = 0; side < 2; ++side) {
    m.bodies.push_back({1 + side, side == 0 ? "left_arm" : "right_arm", side, 1.5, Vec2(0.0, -0.22),
                        1.5 * arm_len * arm_len / 12.0, side_points(0.04, -arm_len, -0.05, 4)});
  }
  const double thigh_len = 0.35;
  for (int side = 0; side < 2; ++side) {
    m.bodies.push_back({3 + side, side == 0 ? "left_thigh" : "right_thigh", 2 + side, 3.5,
                        Vec2(0.0, -0.17), 3.5 * thigh_len * thigh_len / 12.0,
                        side_points(0.06, -thigh_len + 0.03, -0.03, 3)});
  }
  for (int side = 0; side < 2; ++side) {
    auto pts = side_points(0.05, -0.35, -0.03, 3);
    pts.emplace_back(-0.2, -0.39);
    pts.emplace_back(0.1, -0.39);
    m.bodies.push_back({5 + side, side == 0 ? "left_shank_foot" : "right_shank_foot", 4 + side, 5.0,
                        Vec2(-0.06, -0.30), 0.06, pts});
  }

  auto make_joint = [](int id, const char* name, int parent, int child, Vec2 pos, double lo,
                       double hi, double limit) {
    JointSpec j;
    j.id = id;
    j.name = name;
    j.parent_body = parent;
    j.child_body = child;
    j.position = pos;
    j.lower = lo;
    j.upper = hi;
    j.torque_limit = limit;
    return j;
  };
  m.joints.push_back(make_joint(0, "left_shoulder", 0, 1, Vec2(0.0, 0.45), -3.0, 3.0, 40.0));
  m.joints.push_back(make_joint(1, "right_shoulder", 0, 2, Vec2(0.0, 0.45), -3.0, 3.0, 40.0));
  m.joints.push_back(make_joint(2, "left_hip", 0, 3, Vec2(0.0, 0.0), -1.5, 2.5, 150.0));
  m.joints.push_back(make_joint(3, "right_hip", 0, 4, Vec2(0.0, 0.0), -1.5, 2.5, 150.0));
  m.joints.push_back(make_joint(4, "left_knee", 3, 5, Vec2(0.0, -thigh_len), -2.5, 0.0, 150.0));
  m.joints.push_back(make_joint(5, "right_knee", 4, 6, Vec2(0.0, -thigh_len), -2.5, 0.0, 150.0));

  for (const auto& b : m.bodies) {
    SurfaceRegion r;
    r.index = b.id;
    r.body = b.id;
    r.com = b.com;
    r.points = b.surface_points;
    m.regions.push_back(r);
  }
  for (int body : {5, 6}) {
    m.foot_points.push_back({body, Vec2(-0.38, -0.42)});
    m.foot_points.push_back({body, Vec2(0.22, -0.42)});
  }

  // Slight crouch, torso pitched 0.1 rad forward, shanks vertical, arms hanging.
  m.q_default.resize(6);
  m.q_default << 0.1, 0.1, 0.5, 0.5, -0.4, -0.4;
  m.fall.min_base_height = 0.45;
  m.fall.max_abs_pitch = 0.8;
  return m;
}

// --- JSON -------------------------------------------------------------------

namespace {

json vec2_json(const Vec2& v) { return json::array({v.x(), v.y()}); }

json points_json(const std::vector<Vec2>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back(vec2_json(p));
  return a;
}

void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ModelError(where + ": expected an object");
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool ok = false;
    for (const char* k : allowed) ok = ok || it.key() == k;
    if (!ok) throw ModelError(where + "." + it.key() + ": unknown key");
  }
}

template <typename T>
T field(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ModelError(where + "." + key + ": missing");
  try {
    return obj.at(key).get<T>();
  } catch (const json::exception&) {
    throw ModelError(where + "." + key + ": wrong type");
  }
}

Vec2 vec2_field(const json& obj, const std::string& where, const char* key) {
  const auto v = field<std::vector<double>>(obj, where, key);
  if (v.size() != 2) throw ModelError(where + "." + key + ": expected 2 numbers");
  return {v[0], v[1]};
}

std::vector<Vec2> points_field(const json& obj, const std::string& where, const char* key) {
  const auto raw = field<std::vector<std::vector<double>>>(obj, where, key);
  std::vector<Vec2> pts;
  for (std::size_t i = 0; i < raw.size(); ++i) {
    if (raw[i].size() != 2)
      throw ModelError(where + "." + key + "[" + std::to_string(i) + "]: expected 2 numbers");
    pts.emplace_back(raw[i][0], raw[i][1]);
  }
  return pts;
}

}  // namespace

std::string model_to_json_text(const RobotModel& m) {
  json j;
  j["base_dof"] = m.base_dof;
  j["region_com_source"] = m.region_com_source;
  j["bodies"] = json::array();
  for (const auto& b : m.bodies) {
    j["bodies"].push_back({{"id", b.id},
                           {"name", b.name},
                           {"parent_joint", b.parent_joint},
                           {"mass_kg", b.mass},
                           {"com_m", vec2_json(b.com)},
                           {"inertia_kgm2", b.inertia},
                           {"surface_points_m", points_json(b.surface_points)}});
  }
  j["joints"] = json::array();
  for (const auto& jt : m.joints) {
    j["joints"].push_back({{"id", jt.id},
                           {"name", jt.name},
                           {"parent_body", jt.parent_body},
                           {"child_body", jt.child_body},
                           {"type", jt.type},
                           {"axis", {jt.axis.x(), jt.axis.y(), jt.axis.z()}},
                           {"position_m", vec2_json(jt.position)},
                           {"limits_rad", {jt.lower, jt.upper}},
                           {"torque_limit_nm", jt.torque_limit},
                           {"damping_nms_per_rad", jt.damping}});
  }
  j["regions"] = json::array();
  for (const auto& r : m.regions) {
    j["regions"].push_back({{"index", r.index + 1},
                            {"body", r.body},
                            {"com_m", vec2_json(r.com)},
                            {"points_m", points_json(r.points)}});
  }
  j["foot_points"] = json::array();
  for (const auto& f : m.foot_points) j["foot_points"].push_back({{"body", f.body}, {"point_m", vec2_json(f.point)}});
  j["q_default_rad"] = std::vector<double>(m.q_default.data(), m.q_default.data() + m.q_default.size());
  j["fall_thresholds"] = {{"min_base_height_m", m.fall.min_base_height},
                          {"max_abs_pitch_rad", m.fall.max_abs_pitch}};
  return j.dump(2);
}

RobotModel model_from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ModelError(std::string("model: parse error: ") + e.what());
  }
  check_keys(j, "model", {"bodies", "joints", "regions", "foot_points", "base_dof", "q_default_rad",
                          "fall_thresholds", "region_com_source"});
  RobotModel m;
  m.base_dof = field<int>(j, "model", "base_dof");
  if (j.contains("region_com_source")) m.region_com_source = field<std::string>(j, "model", "region_com_source");

  const auto& bodies = j.at("bodies");
  if (!bodies.is_array()) throw ModelError("model.bodies: expected an array");
  for (std::size_t i = 0; i < bodies.size(); ++i) {
    const std::string where = "bodies[" + std::to_string(i) + "]";
    const auto& b = bodies[i];
    check_keys(b, where, {"id", "name", "parent_joint", "mass_kg", "com_m", "inertia_kgm2", "surface_points_m"});
    BodySpec s;
    s.id = field<int>(b, where, "id");
    s.name = field<std::string>(b, where, "name");
    s.parent_joint = field<int>(b, where, "parent_joint");
    s.mass = field<double>(b, where, "mass_kg");
    s.com = vec2_field(b, where, "com_m");
    s.inertia = field<double>(b, where, "inertia_kgm2");
    s.surface_points = points_field(b, where, "surface_points_m");
    m.bodies.push_back(s);
  }
  const auto& joints = j.at("joints");
  if (!joints.is_array()) throw ModelError("model.joints: expected an array");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const std::string where = "joints[" + std::to_string(i) + "]";
    const auto& jt = joints[i];
    check_keys(jt, where, {"id", "name", "parent_body", "child_body", "type", "axis", "position_m",
                           "limits_rad", "torque_limit_nm", "damping_nms_per_rad"});
    JointSpec s;
    s.id = field<int>(jt, where, "id");
    s.name = field<std::string>(jt, where, "name");
    s.parent_body = field<int>(jt, where, "parent_body");
    s.child_body = field<int>(jt, where, "child_body");
    s.type = field<std::string>(jt, where, "type");
    const auto axis = field<std::vector<double>>(jt, where, "axis");
    if (axis.size() != 3) throw ModelError(where + ".axis: expected 3 numbers");
    s.axis = Eigen::Vector3d(axis[0], axis[1], axis[2]);
    s.position = vec2_field(jt, where, "position_m");
    const auto lim = field<std::vector<double>>(jt, where, "limits_rad");
    if (lim.size() != 2) throw ModelError(where + ".limits_rad: expected 2 numbers");
    s.lower = lim[0];
    s.upper = lim[1];
    s.torque_limit = field<double>(jt, where, "torque_limit_nm");
    if (jt.contains("damping_nms_per_rad")) s.damping = field<double>(jt, where, "damping_nms_per_rad");
    m.joints.push_back(s);
  }
  const auto& regions = j.at("regions");
  if (!regions.is_array()) throw ModelError("model.regions: expected an array");
  for (std::size_t i = 0; i < regions.size(); ++i) {
    const std::string where = "regions[" + std::to_string(i) + "]";
    const auto& r = regions[i];
    check_keys(r, where, {"index", "body", "com_m", "points_m"});
    SurfaceRegion s;
    s.index = field<int>(r, where, "index") - 1;
    s.body = field<int>(r, where, "body");
    s.com = vec2_field(r, where, "com_m");
    s.points = points_field(r, where, "points_m");
    m.regions.push_back(s);
  }
  if (j.contains("foot_points")) {
    const auto& feet = j.at("foot_points");
    for (std::size_t i = 0; i < feet.size(); ++i) {
      const std::string where = "foot_points[" + std::to_string(i) + "]";
      check_keys(feet[i], where, {"body", "point_m"});
      m.foot_points.push_back({field<int>(feet[i], where, "body"), vec2_field(feet[i], where, "point_m")});
    }
  }
  const auto q = field<std::vector<double>>(j, "model", "q_default_rad");
  m.q_default = Eigen::Map<const Eigen::VectorXd>(q.data(), static_cast<Eigen::Index>(q.size()));
  const auto& fall = j.at("fall_thresholds");
  check_keys(fall, "fall_thresholds", {"min_base_height_m", "max_abs_pitch_rad"});
  m.fall.min_base_height = field<double>(fall, "fall_thresholds", "min_base_height_m");
  m.fall.max_abs_pitch = field<double>(fall, "fall_thresholds", "max_abs_pitch_rad");
  for (std::size_t b = 0; b < m.bodies.size(); ++b) {
    const int pj = m.bodies[b].parent_joint;
    if (pj >= static_cast<int>(m.joints.size()))
      throw ModelError("bodies[" + std::to_string(b) + "].parent_joint: unknown joint");
  }
  validate(m);
  return m;
}

RobotModel load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ModelError("cannot open model file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return model_from_json_text(ss.str());
}

void save_model(const RobotModel& model, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ModelError("cannot write model file: " + path);
  out << model_to_json_text(model) << "\n";
}

RegionWrench com_equivalent_wrench(const RobotModel& model, int region, int body,
                                   const Vec2& point_body, const Vec2& force) {
  if (region < 0 || region >= model.region_count()) throw ModelError("unknown region " + std::to_string(region));
  const auto& reg = model.regions[region];
  if (reg.body != body)
    throw ModelError("region " + std::to_string(region + 1) + " is hosted by body " +
                     std::to_string(reg.body) + ", not " + std::to_string(body));
  RegionWrench w;
  w.region = region;
  w.wrench << force.x(), force.y(), cross2(point_body - reg.com, force);
  return w;
}

}  // namespace wrenchfield
