#include <doctest.h>

#include <cmath>

#include "helpers.hpp"
#include "vact/errors.hpp"
#include "vact/rng.hpp"
#include "vact/sim.hpp"
#include "vact/trace.hpp"

using namespace vact;
using testutil::make_episode;

TEST_CASE("bbox center is the midpoint") {
  CHECK(bbox_center({10, 20, 30, 40}).x == 20.0);
  CHECK(bbox_center({10, 20, 30, 40}).y == 30.0);
  CHECK(bbox_center({0, 0, 128, 128}).x == 64.0);
  CHECK(bbox_center({0, 0, 128, 128}).y == 64.0);
  CHECK(bbox_center({5, 5, 6, 9}).x == 5.5);
  CHECK(bbox_center({5, 5, 6, 9}).y == 7.0);
}

TEST_CASE("degenerate bbox is an error") {
  CHECK_THROWS_AS(bbox_center({10, 20, 10, 40}), TraceError);
  CHECK_THROWS_AS(bbox_center({10, 20, 30, 20}), TraceError);
  CHECK_THROWS_AS(bbox_center({30, 20, 10, 40}), TraceError);
}

TEST_CASE("pinhole projection with identity extrinsic") {
  const CameraModel cam = testutil::test_camera();
  const Point2 principal = project_point({0, 0, 1}, cam);
  CHECK(principal.x == doctest::Approx(64).epsilon(1e-12));
  CHECK(principal.y == doctest::Approx(64).epsilon(1e-12));

  const Point2 off = project_point({0.1, -0.2, 1.0}, cam);
  CHECK(off.x == doctest::Approx(74).epsilon(1e-12));
  CHECK(off.y == doctest::Approx(44).epsilon(1e-12));

  CHECK_THROWS_AS(project_point({0, 0, -1}, cam), TraceError);
  CHECK_THROWS_AS(project_point({0, 0, 0}, cam), TraceError);
}

TEST_CASE("projection is scale invariant along the ray") {
  const CameraModel cam = testutil::test_camera();
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const std::array<double, 3> p = {rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                     rng.uniform(0.2, 5.0)};
    const double lambda = rng.uniform(0.1, 10.0);
    const Point2 a = project_point(p, cam);
    const Point2 b = project_point({lambda * p[0], lambda * p[1], lambda * p[2]}, cam);
    CHECK(std::abs(a.x - b.x) < 1e-9);
    CHECK(std::abs(a.y - b.y) < 1e-9);
  }
}

namespace {

// Independent oracle: full homogeneous 4-vector transform, then an explicit
// intrinsics stage, sharing no code with project_point.
Point2 homogeneous_oracle(const std::array<double, 3>& p, const CameraModel& cam) {
  const std::array<double, 4> ph = {p[0], p[1], p[2], 1.0};
  std::array<double, 4> q{};
  for (int r = 0; r < 4; ++r) {
    for (int c = 0; c < 4; ++c) q[r] += cam.extrinsic[r][c] * ph[c];
  }
  const std::array<double, 3> pixel_h = {cam.fx * q[0] + cam.cx * q[2],
                                         cam.fy * q[1] + cam.cy * q[2], q[2]};
  return {pixel_h[0] / pixel_h[2], pixel_h[1] / pixel_h[2]};
}

CameraModel random_camera(Rng& rng) {
  CameraModel cam = testutil::test_camera();
  cam.fx = rng.uniform(50.0, 400.0);
  cam.fy = rng.uniform(50.0, 400.0);
  cam.cx = rng.uniform(32.0, 96.0);
  cam.cy = rng.uniform(32.0, 96.0);
  // Rotation about z composed with rotation about x, plus a translation:
  // exercises every extrinsic row without needing a full random SO(3).
  const double a = rng.uniform(-3.14, 3.14);
  const double b = rng.uniform(-1.0, 1.0);
  const double ca = std::cos(a), sa = std::sin(a);
  const double cb = std::cos(b), sb = std::sin(b);
  cam.extrinsic = {{{ca, -sa, 0, rng.uniform(-0.3, 0.3)},
                    {sa * cb, ca * cb, -sb, rng.uniform(-0.3, 0.3)},
                    {sa * sb, ca * sb, cb, rng.uniform(-0.3, 0.3)},
                    {0, 0, 0, 1}}};
  return cam;
}

}  // namespace

TEST_CASE("projection matches the homogeneous-coordinates oracle") {
  Rng rng(12);
  int checked = 0;
  while (checked < 1000) {
    const CameraModel cam = random_camera(rng);
    const std::array<double, 3> p = {rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0),
                                     rng.uniform(-2.0, 2.0)};
    // In-frustum means positive camera-frame depth; skip the rest.
    const double zc = cam.extrinsic[2][0] * p[0] + cam.extrinsic[2][1] * p[1] +
                      cam.extrinsic[2][2] * p[2] + cam.extrinsic[2][3];
    if (zc < 0.1) continue;
    const Point2 got = project_point(p, cam);
    const Point2 want = homogeneous_oracle(p, cam);
    REQUIRE(std::abs(got.x - want.x) < 1e-9);
    REQUIRE(std::abs(got.y - want.y) < 1e-9);
    ++checked;
  }
}

TEST_CASE("trace length follows the suffix law") {
  const Episode e = make_episode(5);
  const TraceSource src;  // bbox_centers, clamp
  CHECK(build_trace(e, 3, src).points.size() == 3);
  CHECK(build_trace(e, 5, src).points.size() == 1);
  const VisualTrace full = build_trace(e, 1, src);
  CHECK(full.points.size() == 5);
  CHECK(full.start_t == 1);
  // First point is frame 1's keypoint: bbox centered at (12, 21).
  CHECK(full.points[0].x == doctest::Approx(12).epsilon(1e-12));
  CHECK(full.points[0].y == doctest::Approx(21).epsilon(1e-12));
}

TEST_CASE("trace timestep bounds are enforced") {
  const Episode e = make_episode(4);
  CHECK_THROWS_AS(build_trace(e, 0, TraceSource{}), TraceError);
  CHECK_THROWS_AS(build_trace(e, 5, TraceSource{}), TraceError);
}

TEST_CASE("suffix property holds across consecutive timesteps") {
  Rng rng(13);
  for (int rep = 0; rep < 50; ++rep) {
    const Episode e = testutil::random_episode(rng, 12);
    const int n = e.length();
    for (int t = 1; t < n; ++t) {
      const auto longer = build_trace(e, t, TraceSource{}).points;
      const auto shorter = build_trace(e, t + 1, TraceSource{}).points;
      REQUIRE(longer.size() == shorter.size() + 1);
      for (std::size_t i = 0; i < shorter.size(); ++i) {
        REQUIRE(longer[i + 1].x == shorter[i].x);
        REQUIRE(longer[i + 1].y == shorter[i].y);
      }
    }
  }
}

TEST_CASE("missing keypoints name the offending frame") {
  Episode e = make_episode(4);
  e.frames[2].ee_bbox.reset();
  try {
    build_trace(e, 1, TraceSource{});
    FAIL("expected TraceError");
  } catch (const TraceError& ex) {
    CHECK(std::string(ex.what()).find("frame 3") != std::string::npos);
  }

  TraceSource proj;
  proj.kind = TraceKind::projection;
  Episode e2 = make_episode(4);
  e2.frames[1].ee_pos_3d.reset();
  try {
    build_trace(e2, 1, proj);
    FAIL("expected TraceError");
  } catch (const TraceError& ex) {
    CHECK(std::string(ex.what()).find("frame 2") != std::string::npos);
  }
}

TEST_CASE("projection source requires a camera") {
  Episode e = make_episode(3);
  e.camera.reset();
  TraceSource proj;
  proj.kind = TraceKind::projection;
  CHECK_THROWS_AS(build_trace(e, 1, proj), TraceError);
}

TEST_CASE("out-of-bounds policies") {
  Episode e = make_episode(3);
  // Push frame 2's keypoint far past the right edge.
  e.frames[1].ee_bbox = std::array<double, 4>{149, 60, 155, 66};

  SUBCASE("clamp snaps to the border") {
    TraceSource src;
    src.oob_policy = OobPolicy::clamp;
    const auto pts = build_trace(e, 1, src).points;
    CHECK(pts[1].x == 127.0);
    CHECK(pts[1].y == 63.0);
  }
  SUBCASE("reject lists the offender") {
    TraceSource src;
    src.oob_policy = OobPolicy::reject;
    try {
      build_trace(e, 1, src);
      FAIL("expected TraceError");
    } catch (const TraceError& ex) {
      CHECK(std::string(ex.what()).find("frame 2") != std::string::npos);
    }
  }
  SUBCASE("keep passes the raw point through") {
    TraceSource src;
    src.oob_policy = OobPolicy::keep;
    const auto pts = build_trace(e, 1, src).points;
    CHECK(pts[1].x == 152.0);
  }
  SUBCASE("no camera means no bounds to apply") {
    e.camera.reset();
    TraceSource src;
    src.oob_policy = OobPolicy::clamp;
    const auto pts = build_trace(e, 1, src).points;
    CHECK(pts[1].x == 152.0);
  }
}

TEST_CASE("bbox and projection sources agree on simulator episodes") {
  // Simulator bboxes are synthesized around the projected keypoint, so the
  // two sources must land within half a pixel of each other.
  for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
    const DemoResult demo = scripted_demo(TaskKind::reach, seed, SimParams{},
                                          make_control_mode(Actuation::joint_velocity,
                                                            ControlFrame::delta),
                                          "sim_reach");
    TraceSource boxes;
    TraceSource proj;
    proj.kind = TraceKind::projection;
    const auto a = build_trace(demo.episode, 1, boxes).points;
    const auto b = build_trace(demo.episode, 1, proj).points;
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      REQUIRE(std::abs(a[i].x - b[i].x) <= 0.5);
      REQUIRE(std::abs(a[i].y - b[i].y) <= 0.5);
    }
  }
}
