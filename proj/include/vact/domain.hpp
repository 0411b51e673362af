#pragma once

#include <array>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace vact {

enum class Actuation { joint_velocity, joint_position, end_effector_pose };
enum class ControlFrame { absolute, delta };

struct RobotType {
  std::string name;
};

struct ControlMode {
  Actuation actuation = Actuation::joint_velocity;
  ControlFrame frame = ControlFrame::delta;

  // English rendering used in prompts and histograms, e.g. "delta joint velocity".
  std::string prose() const;
  bool operator==(const ControlMode&) const = default;
};

// Velocities are inherently rate commands; (joint_velocity, absolute) is
// rejected here and everywhere a mode is parsed.
ControlMode make_control_mode(Actuation actuation, ControlFrame frame);

std::string to_string(Actuation a);
std::string to_string(ControlFrame f);
Actuation actuation_from_string(const std::string& s);
ControlFrame control_frame_from_string(const std::string& s);

struct ProprioState {
  std::vector<double> joints;  // radians
  double gripper = 0.0;        // [0,1], 0 = closed, 1 = open
};

struct Action {
  std::vector<double> values;  // joint command + trailing gripper command
};

struct CameraModel {
  double fx = 0.0, fy = 0.0;  // focal lengths, pixels
  double cx = 0.0, cy = 0.0;  // principal point, pixels
  std::array<std::array<double, 4>, 4> extrinsic{};  // rigid transform, world -> camera
  int width = 0, height = 0;
};

struct Frame {
  int index = 0;  // 1-based timestep
  std::string image_ref;
  ProprioState state;
  std::optional<Action> action;  // absent only on the final frame
  std::optional<std::array<double, 3>> ee_pos_3d;  // world meters
  std::optional<std::array<double, 4>> ee_bbox;    // x_min, y_min, x_max, y_max pixels
};

struct Episode {
  std::string id;
  std::string subset;
  RobotType robot;
  ControlMode mode;
  std::string instruction;
  std::vector<Frame> frames;  // indices 1..N contiguous
  std::optional<CameraModel> camera;

  int length() const { return static_cast<int>(frames.size()); }
  // Number of leading frames carrying an action (N or N-1).
  int actioned_frames() const;
};

struct Violation {
  int frame_index = 0;  // 0 for episode-level problems
  std::string field;
  std::string message;
};

// Robot names accepted by validation; extendable at corpus load time.
class RobotRegistry {
 public:
  static RobotRegistry defaults();
  void add(const std::string& name) { names_.insert(name); }
  bool contains(const std::string& name) const { return names_.count(name) > 0; }

 private:
  std::set<std::string> names_;
};

// Pure: same episode, same violation list. Violations are data, not failures.
std::vector<Violation> validate_episode(const Episode& e,
                                        const RobotRegistry& registry = RobotRegistry::defaults());

}  // namespace vact
