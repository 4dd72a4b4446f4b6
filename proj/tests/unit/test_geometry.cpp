#include <doctest.h>

#include <cmath>
#include <random>

#include "gazefusion/geometry.hpp"

using namespace gazefusion;

namespace {

// Independent reference: explicit vectors and a normalized dot product.
double reference_error_deg(GazeAngles a, GazeAngles b) {
  const double ax = std::cos(a.pitch) * std::sin(a.yaw), ay = std::sin(a.pitch), az = std::cos(a.pitch) * std::cos(a.yaw);
  const double bx = std::cos(b.pitch) * std::sin(b.yaw), by = std::sin(b.pitch), bz = std::cos(b.pitch) * std::cos(b.yaw);
  const double na = std::sqrt(ax * ax + ay * ay + az * az), nb = std::sqrt(bx * bx + by * by + bz * bz);
  double c = (ax * bx + ay * by + az * bz) / (na * nb);
  c = std::fmax(-1.0, std::fmin(1.0, c));
  return std::acos(c) * 180.0 / M_PI;
}

}  // namespace

TEST_CASE("angular error known values") {
  CHECK(std::abs(angular_error_deg({0, 0}, {deg_to_rad(90), 0}) - 90.0) < 1e-12);
  CHECK(angular_error_deg({0.3, -0.2}, {0.3, -0.2}) == 0.0);
  CHECK(std::abs(angular_error_deg({0, 0}, {0, deg_to_rad(45)}) - 45.0) < 1e-12);
  CHECK(std::abs(angular_error_deg({0, 0}, {M_PI, 0}) - 180.0) < 1e-6);
}

TEST_CASE("angular error matches a dot-product reference on random pairs") {
  std::mt19937_64 rng(123);
  std::uniform_real_distribution<double> yaw(-M_PI, M_PI), pitch(-M_PI / 2, M_PI / 2);
  double worst = 0;
  for (int i = 0; i < 10000; ++i) {
    GazeAngles a{yaw(rng), pitch(rng)}, b{yaw(rng), pitch(rng)};
    const double e = angular_error_deg(a, b);
    worst = std::fmax(worst, std::abs(e - reference_error_deg(a, b)));
    CHECK(e >= 0.0);
    CHECK(e <= 180.0);
    CHECK(e == angular_error_deg(b, a));
  }
  CHECK(worst < 1e-10);
}

TEST_CASE("angle/vector round trip") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> yaw(-3.0, 3.0), pitch(-1.5, 1.5);
  for (int i = 0; i < 1000; ++i) {
    GazeAngles a{yaw(rng), pitch(rng)};
    GazeVector v = angles_to_vector(a);
    CHECK(v.x * v.x + v.y * v.y + v.z * v.z == doctest::Approx(1.0).epsilon(1e-14));
    GazeAngles back = vector_to_angles({3 * v.x, 3 * v.y, 3 * v.z});
    CHECK(back.yaw == doctest::Approx(a.yaw).epsilon(1e-12));
    CHECK(back.pitch == doctest::Approx(a.pitch).epsilon(1e-12));
  }
  GazeVector px = angles_to_vector({M_PI / 2, 0});
  CHECK(px.x == doctest::Approx(1.0));
  CHECK(std::abs(px.z) < 1e-15);
}

TEST_CASE("rotations are orthonormal and rotate by the stated angle") {
  std::mt19937_64 rng(6);
  std::normal_distribution<double> n;
  for (int i = 0; i < 100; ++i) {
    std::array<double, 3> axis{n(rng), n(rng), n(rng)};
    const double angle = 0.5 * n(rng);
    Mat3 r = axis_angle_rotation(axis, angle);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) {
        double dot = 0;
        for (int k = 0; k < 3; ++k) dot += r[k][a] * r[k][b];
        CHECK(dot == doctest::Approx(a == b ? 1.0 : 0.0).epsilon(1e-12));
      }
    // A vector perpendicular to the axis turns by exactly |angle|.
    const double norm = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    GazeVector u{axis[1] / norm, -axis[0] / norm, 0};
    const double un = std::sqrt(u.x * u.x + u.y * u.y);
    u = {u.x / un, u.y / un, 0};
    GazeVector w = rotate(r, u);
    const double c = u.x * w.x + u.y * w.y + u.z * w.z;
    CHECK(std::acos(std::fmin(1.0, c)) == doctest::Approx(std::abs(angle)).epsilon(1e-9));
  }
}

TEST_CASE("identity perturbation is bitwise and draws nothing") {
  std::mt19937_64 rng(7), untouched(7);
  GazeAngles a{0.1234567, -0.7654321};
  CHECK(perturb_annotation(a, AnnotationPerturbation::identity(), rng) == a);
  CHECK(rng() == untouched());
}

TEST_CASE("bias-only perturbation adds the bias") {
  std::mt19937_64 rng(1);
  AnnotationPerturbation p;
  p.bias = {0.01, -0.02};
  GazeAngles r = perturb_annotation({0.2, 0.1}, p, rng);
  CHECK(r.yaw == doctest::Approx(0.21).epsilon(1e-14));
  CHECK(r.pitch == doctest::Approx(0.08).epsilon(1e-14));
  CHECK(apply_offset({1, 2}, {0.5, -1}) == GazeAngles{1.5, 1});
}

TEST_CASE("rotation perturbation moves frontal gaze by the rotation angle") {
  std::mt19937_64 rng(1);
  AnnotationPerturbation p;
  p.axis = {0, 1, 0};
  p.angle = deg_to_rad(5);
  GazeAngles r = perturb_annotation({0, 0}, p, rng);
  CHECK(angular_error_deg({0, 0}, r) == doctest::Approx(5.0).epsilon(1e-12));
  CHECK(std::abs(r.pitch) < 1e-15);
}
