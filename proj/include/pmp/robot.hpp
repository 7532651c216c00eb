#pragma once

#include "pmp/common.hpp"
#include "pmp/json_util.hpp"

#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace pmp {

struct JointSpec {
  std::string name;
  int index = 0;
  double limit_lo = -kPi;
  double limit_hi = kPi;
  double default_q0 = 0.0;
  double torque_limit = 0.0;
  bool is_upper = false;
  double armature = 0.0;  // reflected rotor inertia added to the joint diagonal
};

// A rigid link in the sagittal plane. At zero joint angle the link frame is
// aligned with its parent frame and the link extends along local -z.
struct LinkSpec {
  std::string name;
  int parent = -1;          // -1 is the floating base, otherwise a link index
  Vec2 attach{0.0, 0.0};    // joint location in the parent frame
  double length = 0.0;
  double mass = 0.0;
  double inertia = 0.0;     // about the link COM
  double com_offset = 0.0;  // distance from the joint along the link axis
  std::vector<Vec2> contacts;  // ground contact points in the link frame

  Vec2 tip() const { return {0.0, -length}; }
  Vec2 com() const { return {0.0, -com_offset}; }
};

struct BaseSpec {
  double mass = 0.0;
  double inertia = 0.0;
  double nominal_height = 0.0;
  Vec2 com{0.0, 0.0};
};

// Planar articulated robot: link i is driven by joint i. Lower-body joints
// occupy indices [0, n_lower), upper-body joints [n_lower, n_lower + n_upper).
struct RobotModel {
  std::string name;
  BaseSpec base;
  std::vector<LinkSpec> links;
  std::vector<JointSpec> joints;
  std::vector<int> keypoint_joints;
  int n_upper = 0;
  int n_lower = 0;

  int n_joints() const { return static_cast<int>(joints.size()); }

  Vec default_q() const {
    Vec q(n_joints());
    for (int i = 0; i < n_joints(); ++i) q[i] = joints[i].default_q0;
    return q;
  }
  Vec default_upper() const { return default_q().tail(n_upper); }
  Vec default_lower() const { return default_q().head(n_lower); }

  Vec upper_lo() const {
    Vec v(n_upper);
    for (int i = 0; i < n_upper; ++i) v[i] = joints[n_lower + i].limit_lo;
    return v;
  }
  Vec upper_hi() const {
    Vec v(n_upper);
    for (int i = 0; i < n_upper; ++i) v[i] = joints[n_lower + i].limit_hi;
    return v;
  }
  Vec torque_limits() const {
    Vec v(n_joints());
    for (int i = 0; i < n_joints(); ++i) v[i] = joints[i].torque_limit;
    return v;
  }
  std::vector<std::string> upper_joint_names() const {
    std::vector<std::string> out;
    for (int i = 0; i < n_upper; ++i) out.push_back(joints[n_lower + i].name);
    return out;
  }
  // Links carrying contact points, in link order. Each is reported as one foot.
  std::vector<int> foot_links() const {
    std::vector<int> out;
    for (int i = 0; i < static_cast<int>(links.size()); ++i)
      if (!links[i].contacts.empty()) out.push_back(i);
    return out;
  }
  double total_mass() const {
    double m = base.mass;
    for (const auto& l : links) m += l.mass;
    return m;
  }

  void validate() const {
    if (links.size() != joints.size())
      throw SchemaError("robot: link count " + std::to_string(links.size()) +
                        " != joint count " + std::to_string(joints.size()));
    int upper = 0, lower = 0;
    for (int i = 0; i < n_joints(); ++i) {
      const auto& j = joints[i];
      if (j.index != i) throw SchemaError("robot: joint indices must be contiguous from 0 (joint '" + j.name + "')");
      if (!(j.limit_lo < j.limit_hi)) throw SchemaError("robot: joint '" + j.name + "' has limit_lo >= limit_hi");
      if (j.default_q0 < j.limit_lo || j.default_q0 > j.limit_hi)
        throw SchemaError("robot: joint '" + j.name + "' default_q0 outside limits");
      if (j.is_upper) {
        ++upper;
      } else {
        if (upper > 0) throw SchemaError("robot: lower-body joints must precede upper-body joints");
        ++lower;
      }
      const auto& l = links[i];
      if (l.parent < -1 || l.parent >= i) throw SchemaError("robot: link '" + l.name + "' parent must precede it");
      if (l.mass <= 0.0 || l.inertia < 0.0) throw SchemaError("robot: link '" + l.name + "' needs positive mass");
    }
    if (upper != n_upper || lower != n_lower)
      throw SchemaError("robot: n_upper/n_lower disagree with joint flags");
    for (int k : keypoint_joints)
      if (k < 0 || k >= n_joints()) throw SchemaError("robot: keypoint joint index " + std::to_string(k) + " out of range");
    if (base.mass <= 0.0 || base.inertia <= 0.0) throw SchemaError("robot: base needs positive mass and inertia");
  }
};

inline void to_json(nlohmann::json& j, const RobotModel& r) {
  using nlohmann::json;
  json links = json::array();
  for (const auto& l : r.links) {
    json c = json::array();
    for (const auto& p : l.contacts) c.push_back({p.x(), p.y()});
    links.push_back({{"name", l.name}, {"parent", l.parent}, {"attach", {l.attach.x(), l.attach.y()}},
                     {"length", l.length}, {"mass", l.mass}, {"inertia", l.inertia},
                     {"com_offset", l.com_offset}, {"contacts", c}});
  }
  json joints = json::array();
  for (const auto& s : r.joints)
    joints.push_back({{"name", s.name}, {"index", s.index}, {"limit_lo", s.limit_lo}, {"limit_hi", s.limit_hi},
                      {"default_q0", s.default_q0}, {"torque_limit", s.torque_limit},
                      {"is_upper", s.is_upper}, {"armature", s.armature}});
  j = json{{"name", r.name},
           {"base", {{"mass", r.base.mass}, {"inertia", r.base.inertia},
                     {"nominal_height", r.base.nominal_height}, {"com", {r.base.com.x(), r.base.com.y()}}}},
           {"links", links},
           {"joints", joints},
           {"n_upper", r.n_upper},
           {"n_lower", r.n_lower},
           {"keypoint_joints", r.keypoint_joints}};
}

inline RobotModel robot_from_json(const nlohmann::json& j) {
  using namespace json_util;
  RobotModel r;
  r.name = get<std::string>(j, "name", "robot");
  const auto& b = field(j, "base", "robot");
  r.base.mass = get<double>(b, "mass", "base");
  r.base.inertia = get<double>(b, "inertia", "base");
  r.base.nominal_height = get<double>(b, "nominal_height", "base");
  if (b.contains("com")) r.base.com = get_vec2(b, "com", "base");
  const auto& links = field(j, "links", "robot");
  for (std::size_t i = 0; i < links.size(); ++i) {
    const auto ctx = "links[" + std::to_string(i) + "]";
    const auto& l = links[i];
    LinkSpec s;
    s.name = get<std::string>(l, "name", ctx);
    s.parent = get<int>(l, "parent", ctx);
    s.attach = get_vec2(l, "attach", ctx);
    s.length = get<double>(l, "length", ctx);
    s.mass = get<double>(l, "mass", ctx);
    s.inertia = get<double>(l, "inertia", ctx);
    s.com_offset = get<double>(l, "com_offset", ctx);
    if (l.contains("contacts")) {
      const auto& c = l.at("contacts");
      for (std::size_t k = 0; k < c.size(); ++k) s.contacts.push_back(as_vec2(c[k], ctx + ".contacts[" + std::to_string(k) + "]"));
    }
    r.links.push_back(std::move(s));
  }
  const auto& joints = field(j, "joints", "robot");
  for (std::size_t i = 0; i < joints.size(); ++i) {
    const auto ctx = "joints[" + std::to_string(i) + "]";
    const auto& o = joints[i];
    JointSpec s;
    s.name = get<std::string>(o, "name", ctx);
    s.index = get<int>(o, "index", ctx);
    s.limit_lo = get<double>(o, "limit_lo", ctx);
    s.limit_hi = get<double>(o, "limit_hi", ctx);
    s.default_q0 = get<double>(o, "default_q0", ctx);
    s.torque_limit = get<double>(o, "torque_limit", ctx);
    s.is_upper = get<bool>(o, "is_upper", ctx);
    s.armature = o.contains("armature") ? get<double>(o, "armature", ctx) : 0.0;
    r.joints.push_back(std::move(s));
  }
  r.n_upper = get<int>(j, "n_upper", "robot");
  r.n_lower = get<int>(j, "n_lower", "robot");
  r.keypoint_joints = get<std::vector<int>>(j, "keypoint_joints", "robot");
  r.validate();
  return r;
}

inline RobotModel load_robot(const std::string& path) {
  return robot_from_json(json_util::parse_file(path));
}

inline void save_robot(const RobotModel& r, const std::string& path) {
  nlohmann::json j = r;
  json_util::write_file(path, j.dump(2) + "\n");
}

// Desk-scale planar humanoid: hip/knee/ankle per leg, shoulder/elbow per arm.
// Mirrors models/planar_h1.json.
inline RobotModel default_robot() {
  RobotModel r;
  r.name = "planar_h1";
  r.base = BaseSpec{5.0, 0.12, 0.7468, {0.0, 0.15}};
  auto leg = [&](const std::string& side, int first) {
    r.links.push_back({side + "_thigh", -1, {0.0, -0.05}, 0.32, 1.2, 0.012, 0.14, {}});
    r.links.push_back({side + "_shank", first, {0.0, -0.32}, 0.32, 0.7, 0.007, 0.13, {}});
    r.links.push_back({side + "_foot", first + 1, {0.0, -0.32}, 0.06, 0.3, 0.002, 0.03,
                       {Vec2{-0.05, -0.06}, Vec2{0.13, -0.06}}});
    r.joints.push_back({side + "_hip", first, -1.2, 1.6, 0.1, 60.0, false, 0.02});
    r.joints.push_back({side + "_knee", first + 1, -2.2, 0.05, -0.2, 80.0, false, 0.02});
    r.joints.push_back({side + "_ankle", first + 2, -0.9, 0.9, 0.1, 30.0, false, 0.02});
  };
  auto arm = [&](const std::string& side, int first) {
    r.links.push_back({side + "_upper_arm", -1, {0.0, 0.38}, 0.24, 0.6, 0.004, 0.10, {}});
    r.links.push_back({side + "_forearm", first, {0.0, -0.24}, 0.24, 0.4, 0.003, 0.12, {}});
    r.joints.push_back({side + "_shoulder", first, -1.0, 2.6, 0.0, 20.0, true, 0.01});
    r.joints.push_back({side + "_elbow", first + 1, 0.0, 2.2, 0.3, 15.0, true, 0.01});
  };
  leg("left", 0);
  leg("right", 3);
  arm("left", 6);
  arm("right", 8);
  r.n_lower = 6;
  r.n_upper = 4;
  r.keypoint_joints = {6, 7, 8, 9, 2, 5};
  r.validate();
  return r;
}

}  // namespace pmp
