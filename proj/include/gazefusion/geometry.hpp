#pragma once

#include <array>
#include <random>

// Gaze angle conventions and the annotation-inconsistency model.
//
// Convention (used by every error number in this project): yaw is the
// horizontal angle, pitch the vertical angle with up positive, and
//   v = (cos(pitch)·sin(yaw), sin(pitch), cos(pitch)·cos(yaw))
// so (0,0) looks straight down +z and yaw = +90° points along +x.
namespace gazefusion {

struct GazeAngles {
  double yaw = 0.0;    // radians
  double pitch = 0.0;  // radians

  friend bool operator==(const GazeAngles&, const GazeAngles&) = default;
};

struct GazeVector {
  double x = 0.0, y = 0.0, z = 1.0;
};

using Mat3 = std::array<std::array<double, 3>, 3>;

double deg_to_rad(double deg);
double rad_to_deg(double rad);

GazeVector angles_to_vector(GazeAngles a);
// Inverse of angles_to_vector for any non-zero vector (normalized first).
GazeAngles vector_to_angles(GazeVector v);

// arccos(clamp(v_a·v_b)) in degrees; symmetric, in [0, 180].
double angular_error_deg(GazeAngles a, GazeAngles b);

// Componentwise g + delta.
GazeAngles apply_offset(GazeAngles g, GazeAngles delta);

// Rodrigues rotation about `axis` (normalized internally) by `angle` radians.
Mat3 axis_angle_rotation(std::array<double, 3> axis, double angle);
GazeVector rotate(const Mat3& r, GazeVector v);

// Dataset-constant label corruption: a residual rotation of the gaze vector,
// an additive angle bias, and i.i.d. Gaussian angle noise.
struct AnnotationPerturbation {
  std::array<double, 3> axis{0.0, 1.0, 0.0};
  double angle = 0.0;        // radians, about `axis`
  GazeAngles bias{};         // radians
  double noise_std = 0.0;    // radians, per component

  static AnnotationPerturbation identity() { return {}; }
  bool is_identity() const { return angle == 0.0 && bias.yaw == 0.0 && bias.pitch == 0.0 && noise_std == 0.0; }
  Mat3 rotation() const { return axis_angle_rotation(axis, angle); }
};

// v' = R·v, back to angles, + bias, + N(0, noise_std²) per component. Steps
// whose parameter is exactly zero are skipped, so the identity perturbation
// returns its input bit for bit and draws nothing from `rng`.
GazeAngles perturb_annotation(GazeAngles a, const AnnotationPerturbation& p, std::mt19937_64& rng);

}  // namespace gazefusion
