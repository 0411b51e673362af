#pragma once

#include <array>

#include "vact/domain.hpp"

namespace vact {

enum class TraceKind { bbox_centers, projection };

// What happens to keypoints that land outside the image.
enum class OobPolicy { clamp, reject, keep };

struct TraceSource {
  TraceKind kind = TraceKind::bbox_centers;
  OobPolicy oob_policy = OobPolicy::clamp;
};

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

// Ordered end-effector pixel coordinates from step start_t to episode end.
struct VisualTrace {
  std::vector<Point2> points;
  int start_t = 1;
};

// Midpoint of a detector box. Throws TraceError on zero-area boxes.
Point2 bbox_center(const std::array<double, 4>& bbox);

// Pinhole projection through the camera extrinsic. Throws TraceError when the
// point lands at camera-frame depth <= 0.
Point2 project_point(const std::array<double, 3>& p_world, const CameraModel& cam);

// Keypoints of frames t..N in order; length N - t + 1.
VisualTrace build_trace(const Episode& e, int t, const TraceSource& src);

std::string to_string(TraceKind k);
std::string to_string(OobPolicy p);
TraceKind trace_kind_from_string(const std::string& s);
OobPolicy oob_policy_from_string(const std::string& s);

}  // namespace vact
