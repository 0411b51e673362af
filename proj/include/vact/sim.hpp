#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "vact/domain.hpp"
#include "vact/trace.hpp"

namespace vact {

enum class TaskKind { reach, pick, stack, destack };

struct TaskSpec {
  TaskKind kind = TaskKind::reach;
  std::string target_id;       // object tasks
  Point2 target_point;         // reach
  double epsilon = 0.02;       // success / interaction radius, meters
  double lift_height = 0.05;   // planar pick treats lift as implied by a held grasp
};

struct SimObject {
  std::string id;
  Point2 position;
  std::optional<std::string> stacked_on;
};

struct ArmState {
  std::vector<double> joints;        // radians, cumulative-angle chain
  std::vector<double> link_lengths;  // meters, all > 0
  double gripper = 1.0;              // [0,1], 1 = open
  std::optional<std::string> held_object;
};

struct SceneState {
  ArmState arm;
  std::vector<SimObject> objects;
  TaskSpec task;
  int step_count = 0;
};

struct SimParams {
  std::vector<double> link_lengths = {0.30, 0.25, 0.20};
  std::vector<double> initial_joints = {0.9, -0.6, 0.3};
  double initial_gripper = 1.0;
  double dt = 0.05;            // seconds per step
  double epsilon = 0.02;
  double lift_height = 0.05;
  int bbox_halfwidth_px = 3;   // synthesized detector boxes: keypoint +/- w
  double plane_z = 0.0;        // workspace plane embedded at this depth

  double reach() const;        // sum of link lengths
  CameraModel camera() const;  // overhead pinhole viewing the workspace
};

struct Image {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, 8-bit

  std::uint8_t at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
};

// End-effector position: sum of L_k * (cos Theta_k, sin Theta_k) with
// Theta_k the cumulative joint angle.
Point2 fk(std::span<const double> joints, std::span<const double> link_lengths);

// One control tick. Gripper commands crossing the 0.5 cut attach the nearest
// object within task epsilon (top of a stack first) or release at the current
// end-effector position, stacking when released within epsilon of another
// object. Throws SimError on arity/mode problems.
SceneState step(const SceneState& s, const Action& a, const ControlMode& mode, double dt);

bool success(const SceneState& s);

// Deterministic scene for (task, seed): object placements uniform per axis in
// the reachable workspace, resampled (bounded) until feasible.
SceneState sample_scene(TaskKind task, std::uint64_t seed, const SimParams& params);

struct DemoResult {
  Episode episode;
  std::vector<Image> images;       // one per frame, aligned with episode.frames
  std::vector<SceneState> states;  // scene at each frame
};

// Scripted successful demonstration: IK waypointing from the sampled scene,
// recorded through step() so a replay reproduces it exactly. Fully actioned
// (the final frame carries a hold action). Throws SimError when the
// controller cannot finish.
DemoResult scripted_demo(TaskKind task, std::uint64_t seed, const SimParams& params,
                         const ControlMode& mode, const std::string& subset);

// Arm links as lines over objects as filled squares, deterministic bytes.
Image render(const SceneState& s, const CameraModel& cam);

void write_pgm(const Image& img, const std::filesystem::path& path);
Image read_pgm(const std::filesystem::path& path);

std::string task_instruction(TaskKind k);
std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& s);

}  // namespace vact
