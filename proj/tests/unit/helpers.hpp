#pragma once

// Builders for synthetic episodes shared across the test binaries. All
// randomness goes through vact::Rng so every test is reproducible from a
// literal seed.

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "vact/domain.hpp"
#include "vact/rng.hpp"

namespace testutil {

inline vact::ProprioState state_of(std::vector<double> joints, double gripper) {
  vact::ProprioState s;
  s.joints = std::move(joints);
  s.gripper = gripper;
  return s;
}

inline vact::CameraModel test_camera() {
  vact::CameraModel c;
  c.fx = 100.0;
  c.fy = 100.0;
  c.cx = 64.0;
  c.cy = 64.0;
  c.width = 128;
  c.height = 128;
  c.extrinsic = {{{1, 0, 0, 0}, {0, 1, 0, 0}, {0, 0, 1, 0}, {0, 0, 0, 1}}};
  return c;
}

// Fully actioned N-frame episode with bbox keypoints walking diagonally.
inline vact::Episode make_episode(int n_frames, int joint_dim = 3,
                                  const std::string& id = "ep-1",
                                  const std::string& subset = "synthetic") {
  vact::Episode e;
  e.id = id;
  e.subset = subset;
  e.robot.name = "Franka";
  e.mode = vact::make_control_mode(vact::Actuation::joint_velocity,
                                   vact::ControlFrame::delta);
  e.instruction = "open the drawer";
  e.camera = test_camera();
  for (int t = 1; t <= n_frames; ++t) {
    vact::Frame f;
    f.index = t;
    f.image_ref = subset + "/frames/" + id + "/" + std::to_string(t) + ".pgm";
    f.state.joints.assign(joint_dim, 0.01 * t);
    f.state.gripper = 1.0;
    vact::Action a;
    a.values.assign(joint_dim, 0.1);
    a.values.push_back(1.0);
    f.action = a;
    const double cx = 10.0 + 2.0 * t;
    const double cy = 20.0 + 1.0 * t;
    f.ee_bbox = std::array<double, 4>{cx - 3, cy - 3, cx + 3, cy + 3};
    f.ee_pos_3d = std::array<double, 3>{0.01 * t, 0.02 * t, 1.0};
    e.frames.push_back(std::move(f));
  }
  return e;
}

// Randomized variant for property tests: random length, joint dim, keypoints.
inline vact::Episode random_episode(vact::Rng& rng, int max_len = 30,
                                    const std::string& subset = "synthetic") {
  const int n = 1 + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(max_len)));
  const int joints = 2 + static_cast<int>(rng.uniform_int(4));
  vact::Episode e = make_episode(n, joints,
                                 "ep-" + std::to_string(rng.next_u64() % 1000000), subset);
  for (auto& f : e.frames) {
    for (auto& j : f.state.joints) j = rng.uniform(-3.0, 3.0);
    f.state.gripper = rng.uniform(0.0, 1.0);
    for (auto& v : f.action->values) v = rng.uniform(-1.0, 1.0);
    f.action->values.back() = rng.uniform(0.0, 1.0);
    const double cx = rng.uniform(4.0, 123.0);
    const double cy = rng.uniform(4.0, 123.0);
    f.ee_bbox = std::array<double, 4>{cx - 3, cy - 3, cx + 3, cy + 3};
    f.ee_pos_3d = std::array<double, 3>{(cx - 64.0) / 100.0, (cy - 64.0) / 100.0, 1.0};
  }
  return e;
}

}  // namespace testutil
