#include "vact/domain.hpp"

#include <cmath>

#include "vact/errors.hpp"

namespace vact {

std::string to_string(Actuation a) {
  switch (a) {
    case Actuation::joint_velocity: return "joint_velocity";
    case Actuation::joint_position: return "joint_position";
    case Actuation::end_effector_pose: return "end_effector_pose";
  }
  throw ValidationError("unknown actuation");
}

std::string to_string(ControlFrame f) {
  return f == ControlFrame::absolute ? "absolute" : "delta";
}

Actuation actuation_from_string(const std::string& s) {
  if (s == "joint_velocity") return Actuation::joint_velocity;
  if (s == "joint_position") return Actuation::joint_position;
  if (s == "end_effector_pose") return Actuation::end_effector_pose;
  throw ValidationError("unknown actuation: " + s);
}

ControlFrame control_frame_from_string(const std::string& s) {
  if (s == "absolute") return ControlFrame::absolute;
  if (s == "delta") return ControlFrame::delta;
  throw ValidationError("unknown control frame: " + s);
}

ControlMode make_control_mode(Actuation actuation, ControlFrame frame) {
  if (actuation == Actuation::joint_velocity && frame == ControlFrame::absolute) {
    throw ValidationError("(joint_velocity, absolute) is not a valid control mode");
  }
  return ControlMode{actuation, frame};
}

std::string ControlMode::prose() const {
  std::string act;
  switch (actuation) {
    case Actuation::joint_velocity: act = "joint velocity"; break;
    case Actuation::joint_position: act = "joint position"; break;
    case Actuation::end_effector_pose: act = "end effector pose"; break;
  }
  return to_string(frame) + " " + act;
}

int Episode::actioned_frames() const {
  int n = 0;
  for (const Frame& f : frames) {
    if (!f.action) break;
    ++n;
  }
  return n;
}

RobotRegistry RobotRegistry::defaults() {
  RobotRegistry r;
  for (const char* name : {"Franka", "Panda", "Sawyer", "xArm", "UR5", "Kuka", "WidowX",
                           "Jaco", "PR2", "Fanuc", "PlanarArm"}) {
    r.add(name);
  }
  return r;
}

namespace {

bool all_finite(const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

void check_camera(const CameraModel& c, std::vector<Violation>& out) {
  auto bad = [&](const std::string& field, const std::string& msg) {
    out.push_back({0, "camera." + field, msg});
  };
  if (!(c.fx > 0.0)) bad("fx", "focal length must be > 0");
  if (!(c.fy > 0.0)) bad("fy", "focal length must be > 0");
  if (c.width <= 0 || c.height <= 0) bad("width", "image size must be positive");
  if (!(c.cx >= 0.0 && c.cx < c.width)) bad("cx", "principal point outside [0, width)");
  if (!(c.cy >= 0.0 && c.cy < c.height)) bad("cy", "principal point outside [0, height)");
  const auto& E = c.extrinsic;
  if (E[3][0] != 0.0 || E[3][1] != 0.0 || E[3][2] != 0.0 || E[3][3] != 1.0) {
    bad("extrinsic", "bottom row must be (0, 0, 0, 1)");
  }
  // Rotation block orthonormal within 1e-9: R * R^T == I.
  double max_dev = 0.0;
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double dot = 0.0;
      for (int k = 0; k < 3; ++k) dot += E[i][k] * E[j][k];
      max_dev = std::max(max_dev, std::abs(dot - (i == j ? 1.0 : 0.0)));
    }
  }
  if (max_dev > 1e-9) bad("extrinsic", "rotation block not orthonormal");
}

}  // namespace

std::vector<Violation> validate_episode(const Episode& e, const RobotRegistry& registry) {
  std::vector<Violation> out;

  if (e.robot.name.empty()) {
    out.push_back({0, "robot", "robot name is empty"});
  } else if (!registry.contains(e.robot.name)) {
    out.push_back({0, "robot", "robot '" + e.robot.name + "' not in registry"});
  }
  if (e.mode.actuation == Actuation::joint_velocity && e.mode.frame == ControlFrame::absolute) {
    out.push_back({0, "mode", "(joint_velocity, absolute) is not a valid control mode"});
  }
  if (e.frames.empty()) {
    out.push_back({0, "frames", "episode has no frames"});
    return out;
  }
  if (e.camera) check_camera(*e.camera, out);

  // Contiguity is reported once, at the first break.
  for (std::size_t i = 0; i < e.frames.size(); ++i) {
    if (e.frames[i].index != static_cast<int>(i) + 1) {
      out.push_back({static_cast<int>(i) + 1, "index",
                     "non-contiguous indices: expected " + std::to_string(i + 1) + ", found " +
                         std::to_string(e.frames[i].index)});
      break;
    }
  }

  const std::size_t joint_dim = e.frames.front().state.joints.size();
  bool any_keypoint = false;
  for (const Frame& f : e.frames) {
    if (f.ee_pos_3d || f.ee_bbox) any_keypoint = true;
  }

  for (std::size_t i = 0; i < e.frames.size(); ++i) {
    const Frame& f = e.frames[i];
    const int t = static_cast<int>(i) + 1;
    if (f.state.joints.size() != joint_dim) {
      out.push_back({t, "state.joints", "joint dimensionality differs from frame 1"});
    }
    if (!all_finite(f.state.joints)) {
      out.push_back({t, "state.joints", "non-finite joint value"});
    }
    if (!(f.state.gripper >= 0.0 && f.state.gripper <= 1.0)) {
      out.push_back({t, "gripper", "gripper outside [0,1]"});
    }
    if (f.action) {
      const auto& v = f.action->values;
      if (v.empty() || !all_finite(v)) {
        out.push_back({t, "action", "action missing values or non-finite"});
      } else {
        if (v.back() < 0.0 || v.back() > 1.0) {
          out.push_back({t, "action", "gripper command outside [0,1]"});
        }
        if ((e.mode.actuation == Actuation::joint_velocity ||
             e.mode.actuation == Actuation::joint_position) &&
            v.size() != joint_dim + 1) {
          out.push_back({t, "action", "joint-mode arity must be joint count + 1"});
        }
      }
    } else if (i + 1 != e.frames.size()) {
      out.push_back({t, "action", "action absent on a non-final frame"});
    }
    if (f.ee_bbox) {
      const auto& b = *f.ee_bbox;
      if (!(b[0] < b[2]) || !(b[1] < b[3])) {
        out.push_back({t, "ee_bbox", "bbox must satisfy x_min < x_max and y_min < y_max"});
      } else if (e.camera &&
                 (b[0] < 0.0 || b[1] < 0.0 || b[2] > e.camera->width || b[3] > e.camera->height)) {
        out.push_back({t, "ee_bbox", "bbox outside image bounds"});
      }
    }
    if (any_keypoint && !f.ee_pos_3d && !f.ee_bbox) {
      out.push_back({t, "ee_pos_3d", "frame lacks both ee_pos_3d and ee_bbox while the episode "
                                     "carries keypoint data"});
    }
  }
  return out;
}

}  // namespace vact
