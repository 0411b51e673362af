#include "vact/sim.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <utility>

#include "vact/codec.hpp"
#include "vact/errors.hpp"
#include "vact/rng.hpp"

namespace vact {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::reach: return "reach";
    case TaskKind::pick: return "pick";
    case TaskKind::stack: return "stack";
    case TaskKind::destack: return "destack";
  }
  throw ValidationError("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "reach") return TaskKind::reach;
  if (s == "pick") return TaskKind::pick;
  if (s == "stack") return TaskKind::stack;
  if (s == "destack") return TaskKind::destack;
  throw ValidationError("unknown task: " + s);
}

std::string task_instruction(TaskKind k) {
  switch (k) {
    case TaskKind::reach: return "reach the target";
    case TaskKind::pick: return "pick up the cube";
    case TaskKind::stack: return "stack the cube on the other cube";
    case TaskKind::destack: return "destack the cube";
  }
  throw ValidationError("unknown task kind");
}

double SimParams::reach() const {
  double sum = 0.0;
  for (double l : link_lengths) sum += l;
  return sum;
}

CameraModel SimParams::camera() const {
  // Overhead view 1.5 m above the table: world x keeps its sign, world y
  // flips (image rows grow downward). The full default workspace projects
  // with at least a bbox halfwidth of margin to every image edge.
  CameraModel cam;
  cam.fx = 100.0;
  cam.fy = 100.0;
  cam.cx = 64.0;
  cam.cy = 64.0;
  cam.width = 128;
  cam.height = 128;
  cam.extrinsic = {{{1.0, 0.0, 0.0, 0.0},
                    {0.0, -1.0, 0.0, 0.0},
                    {0.0, 0.0, -1.0, 1.5},
                    {0.0, 0.0, 0.0, 1.0}}};
  return cam;
}

Point2 fk(std::span<const double> joints, std::span<const double> link_lengths) {
  if (joints.empty() || joints.size() != link_lengths.size()) {
    throw SimError("fk needs matching, non-empty joints and link lengths");
  }
  double theta = 0.0, x = 0.0, y = 0.0;
  for (std::size_t k = 0; k < joints.size(); ++k) {
    theta += joints[k];
    x += link_lengths[k] * std::cos(theta);
    y += link_lengths[k] * std::sin(theta);
  }
  return {x, y};
}

namespace {

double dist(const Point2& a, const Point2& b) { return std::hypot(a.x - b.x, a.y - b.y); }

Point2 arm_ee(const ArmState& arm) { return fk(arm.joints, arm.link_lengths); }

SimObject* find_object(SceneState& s, const std::string& id) {
  for (auto& o : s.objects) {
    if (o.id == id) return &o;
  }
  return nullptr;
}

const SimObject* find_object(const SceneState& s, const std::string& id) {
  return find_object(const_cast<SceneState&>(s), id);
}

// An object with something stacked on it cannot be grasped first.
bool is_covered(const SceneState& s, const std::string& id) {
  for (const auto& o : s.objects) {
    if (o.stacked_on && *o.stacked_on == id) return true;
  }
  return false;
}

}  // namespace

SceneState step(const SceneState& s, const Action& a, const ControlMode& mode, double dt) {
  const std::size_t k = s.arm.joints.size();
  if (a.values.size() != k + 1) {
    throw SimError("action arity " + std::to_string(a.values.size()) + ", expected " +
                   std::to_string(k + 1));
  }
  for (double v : a.values) {
    if (!std::isfinite(v)) throw SimError("non-finite action value");
  }
  const double grip_cmd = a.values.back();
  if (grip_cmd < 0.0 || grip_cmd > 1.0) throw SimError("gripper command outside [0, 1]");
  if (mode.actuation == Actuation::end_effector_pose) {
    throw SimError("end-effector control is not supported by the planar arm");
  }
  if (!(dt > 0.0)) throw SimError("dt must be positive");

  SceneState next = s;
  for (std::size_t i = 0; i < k; ++i) {
    const double cmd = a.values[i];
    double& th = next.arm.joints[i];
    if (mode.actuation == Actuation::joint_velocity) {
      th += cmd * dt;
    } else if (mode.frame == ControlFrame::delta) {
      th += cmd;
    } else {
      th = cmd;
    }
  }

  const Point2 ee = arm_ee(next.arm);
  const double prev_grip = next.arm.gripper;
  next.arm.gripper = grip_cmd;

  const bool closing = prev_grip >= 0.5 && grip_cmd < 0.5;
  const bool opening = prev_grip < 0.5 && grip_cmd >= 0.5;

  if (closing && !next.arm.held_object) {
    // Grasp the nearest object within epsilon; a free top beats a covered
    // base, ties break on distance then id so the choice is deterministic.
    const SimObject* best = nullptr;
    bool best_covered = false;
    double best_d = 0.0;
    for (const auto& o : next.objects) {
      const double d = dist(o.position, ee);
      if (d > next.task.epsilon) continue;
      const bool covered = is_covered(next, o.id);
      bool better = false;
      if (!best) {
        better = true;
      } else if (covered != best_covered) {
        better = !covered;
      } else if (d != best_d) {
        better = d < best_d;
      } else {
        better = o.id < best->id;
      }
      if (better) {
        best = &o;
        best_covered = covered;
        best_d = d;
      }
    }
    if (best) {
      const std::string grabbed = best->id;
      next.arm.held_object = grabbed;
      find_object(next, grabbed)->stacked_on.reset();
      // Lifting a base out from under a stack strands what sat on it.
      for (auto& o : next.objects) {
        if (o.stacked_on && *o.stacked_on == grabbed) o.stacked_on.reset();
      }
    }
  } else if (opening && next.arm.held_object) {
    SimObject* held = find_object(next, *next.arm.held_object);
    held->position = ee;
    const SimObject* base = nullptr;
    double base_d = 0.0;
    for (const auto& o : next.objects) {
      if (o.id == held->id) continue;
      if (o.stacked_on && *o.stacked_on == held->id) continue;  // no cycles
      const double d = dist(o.position, ee);
      if (d > next.task.epsilon) continue;
      if (!base || d < base_d || (d == base_d && o.id < base->id)) {
        base = &o;
        base_d = d;
      }
    }
    held->stacked_on = base ? std::optional<std::string>(base->id) : std::nullopt;
    next.arm.held_object.reset();
  }

  if (next.arm.held_object) {
    find_object(next, *next.arm.held_object)->position = ee;
  }
  next.step_count = s.step_count + 1;
  return next;
}

bool success(const SceneState& s) {
  switch (s.task.kind) {
    case TaskKind::reach: {
      if (s.arm.joints.empty()) return false;
      return dist(arm_ee(s.arm), s.task.target_point) <= s.task.epsilon;
    }
    case TaskKind::pick: {
      return s.arm.held_object && *s.arm.held_object == s.task.target_id &&
             s.arm.gripper < 0.5;
    }
    case TaskKind::stack: {
      const SimObject* o = find_object(s, s.task.target_id);
      if (!o) return false;
      const bool held = s.arm.held_object && *s.arm.held_object == o->id;
      return !held && o->stacked_on.has_value();
    }
    case TaskKind::destack: {
      const SimObject* o = find_object(s, s.task.target_id);
      if (!o) return false;
      const bool held = s.arm.held_object && *s.arm.held_object == o->id;
      if (held || o->stacked_on) return false;
      for (const auto& other : s.objects) {
        if (other.id == o->id) continue;
        if (dist(other.position, o->position) <= s.task.epsilon) return false;
      }
      return true;
    }
  }
  return false;
}

SceneState sample_scene(TaskKind task, std::uint64_t seed, const SimParams& params) {
  if (params.link_lengths.empty() ||
      params.link_lengths.size() != params.initial_joints.size()) {
    throw SimError("params need matching, non-empty joints and link lengths");
  }
  for (double l : params.link_lengths) {
    if (!(l > 0.0)) throw SimError("link lengths must be positive");
  }
  if (!(params.epsilon > 0.0)) throw SimError("epsilon must be positive");

  SceneState s;
  s.arm.joints = params.initial_joints;
  s.arm.link_lengths = params.link_lengths;
  s.arm.gripper = params.initial_gripper;
  s.task.kind = task;
  s.task.epsilon = params.epsilon;
  s.task.lift_height = params.lift_height;

  Rng rng(seed);
  const Point2 ee0 = arm_ee(s.arm);
  const double r = params.reach();
  const double lo = 0.24 * r;
  const double hi = 0.90 * r;

  // Uniform per axis, kept clear of the base singularity, the reach
  // boundary, the arm's starting pose, and previously placed objects.
  std::vector<Point2> placed;
  auto draw_point = [&]() -> Point2 {
    for (int tries = 0; tries < 100; ++tries) {
      Point2 p{rng.uniform(-hi, hi), rng.uniform(-hi, hi)};
      const double d0 = std::hypot(p.x, p.y);
      if (d0 < lo || d0 > hi) continue;
      if (dist(p, ee0) < 0.10) continue;
      bool clear = true;
      for (const Point2& q : placed) {
        if (dist(p, q) < 0.12) {
          clear = false;
          break;
        }
      }
      if (!clear) continue;
      placed.push_back(p);
      return p;
    }
    throw SimError("no feasible placement after 100 draws");
  };

  switch (task) {
    case TaskKind::reach:
      s.task.target_point = draw_point();
      break;
    case TaskKind::pick:
      s.task.target_id = "cube";
      s.objects.push_back({"cube", draw_point(), std::nullopt});
      break;
    case TaskKind::stack: {
      s.task.target_id = "cube_a";
      const Point2 pa = draw_point();
      const Point2 pb = draw_point();
      s.objects.push_back({"cube_a", pa, std::nullopt});
      s.objects.push_back({"cube_b", pb, std::nullopt});
      break;
    }
    case TaskKind::destack: {
      s.task.target_id = "cube_a";
      const Point2 p = draw_point();
      s.objects.push_back({"cube_a", p, std::optional<std::string>("cube_b")});
      s.objects.push_back({"cube_b", p, std::nullopt});
      break;
    }
  }
  return s;
}

namespace {

// Damped least squares toward w, per-joint step clamped. The damping keeps
// the 2x2 normal matrix invertible straight through singular poses.
std::vector<double> ik_delta(const ArmState& arm, const Point2& w) {
  const std::size_t K = arm.joints.size();
  std::vector<double> theta(K);
  double acc = 0.0;
  for (std::size_t i = 0; i < K; ++i) {
    acc += arm.joints[i];
    theta[i] = acc;
  }
  std::vector<double> jx(K), jy(K);
  double sx = 0.0, sy = 0.0;
  for (std::size_t i = K; i-- > 0;) {
    sx += -arm.link_lengths[i] * std::sin(theta[i]);
    sy += arm.link_lengths[i] * std::cos(theta[i]);
    jx[i] = sx;
    jy[i] = sy;
  }

  const Point2 ee = arm_ee(arm);
  const double ex = w.x - ee.x;
  const double ey = w.y - ee.y;

  const double lambda2 = 0.05 * 0.05;
  double a00 = lambda2, a01 = 0.0, a11 = lambda2;
  for (std::size_t i = 0; i < K; ++i) {
    a00 += jx[i] * jx[i];
    a01 += jx[i] * jy[i];
    a11 += jy[i] * jy[i];
  }
  const double det = a00 * a11 - a01 * a01;
  const double ux = (a11 * ex - a01 * ey) / det;
  const double uy = (-a01 * ex + a00 * ey) / det;

  std::vector<double> d(K);
  for (std::size_t i = 0; i < K; ++i) {
    d[i] = std::clamp(jx[i] * ux + jy[i] * uy, -0.12, 0.12);
  }
  return d;
}

// Where a destacked cube gets set down: the first spot on a ring around the
// stack that stays inside the sampling annulus.
Point2 drop_point(const Point2& stack_pos, double lo, double hi, double ring) {
  for (int k = 0; k < 12; ++k) {
    const double ang = k * (3.14159265358979323846 / 6.0);
    const Point2 p{stack_pos.x + ring * std::cos(ang), stack_pos.y + ring * std::sin(ang)};
    const double d0 = std::hypot(p.x, p.y);
    if (d0 >= lo && d0 <= hi) return p;
  }
  throw SimError("no feasible drop point around the stack");
}

}  // namespace

DemoResult scripted_demo(TaskKind task, std::uint64_t seed, const SimParams& params,
                         const ControlMode& mode, const std::string& subset) {
  if (mode.actuation == Actuation::end_effector_pose) {
    throw SimError("end-effector control is not supported by the planar arm");
  }

  SceneState s = sample_scene(task, seed, params);
  const CameraModel cam = params.camera();
  const std::size_t K = s.arm.joints.size();

  DemoResult out;
  Episode& ep = out.episode;
  {
    char idbuf[64];
    std::snprintf(idbuf, sizeof idbuf, "%s-%016llx", to_string(task).c_str(),
                  static_cast<unsigned long long>(seed));
    ep.id = idbuf;
  }
  ep.subset = subset;
  ep.robot = {"PlanarArm"};
  ep.mode = mode;
  ep.instruction = task_instruction(task);
  ep.camera = cam;

  auto record_frame = [&](const SceneState& st, const Action& a) {
    Frame f;
    f.index = static_cast<int>(ep.frames.size()) + 1;
    char ref[192];
    std::snprintf(ref, sizeof ref, "%s/frames/%s/%04d.pgm", subset.c_str(), ep.id.c_str(),
                  f.index);
    f.image_ref = ref;
    f.state.joints = st.arm.joints;
    f.state.gripper = st.arm.gripper;
    f.action = a;
    const Point2 ee = arm_ee(st.arm);
    f.ee_pos_3d = {ee.x, ee.y, params.plane_z};
    const Point2 px = project_point(*f.ee_pos_3d, cam);
    const double bx = static_cast<double>(std::llround(px.x));
    const double by = static_cast<double>(std::llround(px.y));
    const double w = params.bbox_halfwidth_px;
    f.ee_bbox = {bx - w, by - w, bx + w, by + w};
    ep.frames.push_back(std::move(f));
    out.states.push_back(st);
    out.images.push_back(render(st, cam));
  };

  // Action values are quantized to three decimals at the source, so the text
  // codec reproduces them bit-exactly and a replayed episode retraces the
  // recorded one without drift.
  auto motion_action = [&](const std::vector<double>& dtheta) {
    Action a;
    a.values.reserve(K + 1);
    for (std::size_t i = 0; i < K; ++i) {
      double v = 0.0;
      if (mode.actuation == Actuation::joint_velocity) {
        v = dtheta[i] / params.dt;
      } else if (mode.frame == ControlFrame::delta) {
        v = dtheta[i];
      } else {
        v = s.arm.joints[i] + dtheta[i];
      }
      a.values.push_back(quantize(v, 3));
    }
    a.values.push_back(s.arm.gripper >= 0.5 ? 1.0 : 0.0);
    return a;
  };

  auto emit = [&](const Action& a) {
    record_frame(s, a);
    s = step(s, a, mode, params.dt);
  };

  struct Leg {
    Point2 goal;
    double grip_after = 0.0;
    bool has_grip = false;
  };
  std::vector<Leg> legs;
  auto obj_pos = [&](const char* id) {
    const SimObject* o = find_object(s, id);
    if (!o) throw SimError(std::string("scene is missing object ") + id);
    return o->position;
  };
  const double r = params.reach();
  switch (task) {
    case TaskKind::reach:
      legs.push_back({s.task.target_point, 0.0, false});
      break;
    case TaskKind::pick:
      legs.push_back({obj_pos("cube"), 0.0, true});
      break;
    case TaskKind::stack:
      legs.push_back({obj_pos("cube_a"), 0.0, true});
      legs.push_back({obj_pos("cube_b"), 1.0, true});
      break;
    case TaskKind::destack:
      legs.push_back({obj_pos("cube_a"), 0.0, true});
      legs.push_back({drop_point(obj_pos("cube_a"), 0.24 * r, 0.90 * r, 0.24 * r), 1.0, true});
      break;
  }

  const double tol = 0.6 * s.task.epsilon;
  int total = 0;
  for (const Leg& leg : legs) {
    // One straight Cartesian pull can wedge the arm: with the goal across the
    // base, damped least squares folds the chain into a pose whose Jacobian is
    // blind to the remaining error and the step collapses to zero. Hopping
    // along the polar interpolant keeps every intermediate error short and
    // mostly tangential, which the solver tracks from any pose it can reach.
    const Point2 from = arm_ee(s.arm);
    const double r0 = std::hypot(from.x, from.y);
    const double r1 = std::hypot(leg.goal.x, leg.goal.y);
    const double phi0 = std::atan2(from.y, from.x);
    const double dphi =
        std::remainder(std::atan2(leg.goal.y, leg.goal.x) - phi0, 2.0 * std::numbers::pi);
    const int hops = std::max(
        1, static_cast<int>(
               std::ceil(std::max(std::abs(dphi) / 0.3, std::abs(r1 - r0) / 0.08))));
    int leg_steps = 0;
    for (int k = 1; k <= hops; ++k) {
      const double f = static_cast<double>(k) / hops;
      const Point2 sub =
          k == hops ? leg.goal
                    : Point2{(r0 + f * (r1 - r0)) * std::cos(phi0 + f * dphi),
                             (r0 + f * (r1 - r0)) * std::sin(phi0 + f * dphi)};
      const double sub_tol = k == hops ? tol : 0.03;
      while (dist(arm_ee(s.arm), sub) > sub_tol) {
        if (++leg_steps > 200 || ++total > 600) {
          throw SimError("demo controller failed to reach a waypoint");
        }
        emit(motion_action(ik_delta(s.arm, sub)));
      }
    }
    if (leg.has_grip) {
      Action g = motion_action(std::vector<double>(K, 0.0));
      g.values.back() = leg.grip_after;
      emit(g);
      ++total;
    }
  }
  if (!success(s)) throw SimError("demo finished without task success");

  // Closing frame: the success state under a hold action, so every frame
  // carries an action and replays stay aligned.
  record_frame(s, motion_action(std::vector<double>(K, 0.0)));
  return out;
}

namespace {

void draw_line(Image& img, long long x0, long long y0, long long x1, long long y1,
               std::uint8_t v) {
  auto put = [&](long long x, long long y) {
    if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
    img.pixels[static_cast<std::size_t>(y) * img.width + x] = v;
  };
  long long dx = std::llabs(x1 - x0);
  long long sx = x0 < x1 ? 1 : -1;
  long long dy = -std::llabs(y1 - y0);
  long long sy = y0 < y1 ? 1 : -1;
  long long err = dx + dy;
  while (true) {
    put(x0, y0);
    if (x0 == x1 && y0 == y1) break;
    const long long e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

}  // namespace

Image render(const SceneState& s, const CameraModel& cam) {
  Image img;
  img.width = cam.width;
  img.height = cam.height;
  img.pixels.assign(static_cast<std::size_t>(cam.width) * cam.height, 24);

  // The workspace plane is embedded at z = 0 for rendering.
  auto to_px = [&](const Point2& p) {
    const Point2 q = project_point({p.x, p.y, 0.0}, cam);
    return std::pair<long long, long long>{std::llround(q.x), std::llround(q.y)};
  };

  // Objects first, in id order so overlap resolution is deterministic.
  std::vector<const SimObject*> objs;
  objs.reserve(s.objects.size());
  for (const auto& o : s.objects) objs.push_back(&o);
  std::sort(objs.begin(), objs.end(),
            [](const SimObject* a, const SimObject* b) { return a->id < b->id; });
  for (const SimObject* o : objs) {
    const auto [cx, cy] = to_px(o->position);
    for (long long dy = -4; dy <= 4; ++dy) {
      for (long long dx = -4; dx <= 4; ++dx) {
        const long long x = cx + dx, y = cy + dy;
        if (x < 0 || y < 0 || x >= img.width || y >= img.height) continue;
        img.pixels[static_cast<std::size_t>(y) * img.width + x] = 128;
      }
    }
  }

  // Arm links last: the end-effector pixel must read as arm, not object.
  if (!s.arm.joints.empty()) {
    double theta = 0.0, x = 0.0, y = 0.0;
    auto prev = to_px({0.0, 0.0});
    for (std::size_t k = 0; k < s.arm.joints.size(); ++k) {
      theta += s.arm.joints[k];
      x += s.arm.link_lengths[k] * std::cos(theta);
      y += s.arm.link_lengths[k] * std::sin(theta);
      const auto cur = to_px({x, y});
      draw_line(img, prev.first, prev.second, cur.first, cur.second, 255);
      prev = cur;
    }
  }
  return img;
}

void write_pgm(const Image& img, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "P5\n" << img.width << " " << img.height << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.pixels.data()),
          static_cast<std::streamsize>(img.pixels.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Image read_pgm(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());

  // Header tokens may be separated by whitespace or #-comment lines; the
  // raster starts after the single whitespace byte following maxval.
  auto next_token = [&]() -> std::string {
    std::string tok;
    int c;
    while ((c = f.get()) != EOF) {
      if (c == '#') {
        while ((c = f.get()) != EOF && c != '\n') {
        }
        continue;
      }
      if (std::isspace(c)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(c));
    }
    return tok;
  };

  if (next_token() != "P5") throw IoError(path.string() + ": not a binary PGM");
  auto parse_dim = [&](const std::string& tok, const char* what) -> int {
    if (tok.empty() || tok.size() > 9 ||
        tok.find_first_not_of("0123456789") != std::string::npos) {
      throw IoError(path.string() + ": bad " + what);
    }
    return std::stoi(tok);
  };
  Image img;
  img.width = parse_dim(next_token(), "width");
  img.height = parse_dim(next_token(), "height");
  const int maxval = parse_dim(next_token(), "maxval");
  if (img.width <= 0 || img.height <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError(path.string() + ": unsupported PGM geometry");
  }
  img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
  f.read(reinterpret_cast<char*>(img.pixels.data()),
         static_cast<std::streamsize>(img.pixels.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.pixels.size())) {
    throw IoError(path.string() + ": truncated raster");
  }
  return img;
}

}  // namespace vact
