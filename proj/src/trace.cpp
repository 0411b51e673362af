#include "vact/trace.hpp"

#include <algorithm>
#include <sstream>

#include "vact/errors.hpp"

namespace vact {

std::string to_string(TraceKind k) {
  return k == TraceKind::bbox_centers ? "bbox_centers" : "projection";
}

std::string to_string(OobPolicy p) {
  switch (p) {
    case OobPolicy::clamp: return "clamp";
    case OobPolicy::reject: return "reject";
    case OobPolicy::keep: return "keep";
  }
  throw ValidationError("unknown oob policy");
}

TraceKind trace_kind_from_string(const std::string& s) {
  if (s == "bbox_centers") return TraceKind::bbox_centers;
  if (s == "projection") return TraceKind::projection;
  throw ValidationError("unknown trace kind: " + s);
}

OobPolicy oob_policy_from_string(const std::string& s) {
  if (s == "clamp") return OobPolicy::clamp;
  if (s == "reject") return OobPolicy::reject;
  if (s == "keep") return OobPolicy::keep;
  throw ValidationError("unknown oob policy: " + s);
}

Point2 bbox_center(const std::array<double, 4>& bbox) {
  if (!(bbox[0] < bbox[2]) || !(bbox[1] < bbox[3])) {
    throw TraceError("degenerate bbox (zero area)");
  }
  return {(bbox[0] + bbox[2]) / 2.0, (bbox[1] + bbox[3]) / 2.0};
}

Point2 project_point(const std::array<double, 3>& p_world, const CameraModel& cam) {
  const auto& E = cam.extrinsic;
  double pc[3];
  for (int i = 0; i < 3; ++i) {
    pc[i] = E[i][0] * p_world[0] + E[i][1] * p_world[1] + E[i][2] * p_world[2] + E[i][3];
  }
  if (!(pc[2] > 0.0)) {
    std::ostringstream msg;
    msg << "point behind camera (Z_c = " << pc[2] << ")";
    throw TraceError(msg.str());
  }
  return {cam.fx * pc[0] / pc[2] + cam.cx, cam.fy * pc[1] / pc[2] + cam.cy};
}

namespace {

Point2 frame_keypoint(const Episode& e, const Frame& f, const TraceSource& src) {
  if (src.kind == TraceKind::bbox_centers) {
    if (!f.ee_bbox) {
      throw TraceError("frame " + std::to_string(f.index) + ": no ee_bbox for bbox_centers trace");
    }
    try {
      return bbox_center(*f.ee_bbox);
    } catch (const TraceError&) {
      throw TraceError("frame " + std::to_string(f.index) + ": degenerate bbox");
    }
  }
  if (!e.camera) throw TraceError("projection trace requires an episode camera");
  if (!f.ee_pos_3d) {
    throw TraceError("frame " + std::to_string(f.index) + ": no ee_pos_3d for projection trace");
  }
  try {
    return project_point(*f.ee_pos_3d, *e.camera);
  } catch (const TraceError& ex) {
    throw TraceError("frame " + std::to_string(f.index) + ": " + ex.what());
  }
}

}  // namespace

VisualTrace build_trace(const Episode& e, int t, const TraceSource& src) {
  const int n = e.length();
  if (t < 1 || t > n) {
    throw TraceError("timestep " + std::to_string(t) + " outside 1.." + std::to_string(n));
  }

  VisualTrace trace;
  trace.start_t = t;
  trace.points.reserve(static_cast<std::size_t>(n - t + 1));
  for (int i = t; i <= n; ++i) {
    trace.points.push_back(frame_keypoint(e, e.frames[static_cast<std::size_t>(i - 1)], src));
  }

  // Out-of-bounds handling needs known image bounds; without a camera the
  // points pass through untouched.
  if (!e.camera) return trace;
  const double max_x = e.camera->width - 1.0;
  const double max_y = e.camera->height - 1.0;
  auto outside = [&](const Point2& p) {
    return p.x < 0.0 || p.x > max_x || p.y < 0.0 || p.y > max_y;
  };
  switch (src.oob_policy) {
    case OobPolicy::keep:
      break;
    case OobPolicy::clamp:
      for (Point2& p : trace.points) {
        p.x = std::clamp(p.x, 0.0, max_x);
        p.y = std::clamp(p.y, 0.0, max_y);
      }
      break;
    case OobPolicy::reject: {
      std::ostringstream bad;
      int count = 0;
      for (std::size_t i = 0; i < trace.points.size(); ++i) {
        if (outside(trace.points[i])) {
          if (count++) bad << ", ";
          bad << "frame " << (t + static_cast<int>(i)) << " (" << trace.points[i].x << ", "
              << trace.points[i].y << ")";
        }
      }
      if (count > 0) {
        throw TraceError("out-of-bounds trace points rejected: " + bad.str());
      }
      break;
    }
  }
  return trace;
}

}  // namespace vact
