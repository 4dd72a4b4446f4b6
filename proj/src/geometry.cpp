#include "gazefusion/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gazefusion {

double deg_to_rad(double deg) { return deg * std::numbers::pi / 180.0; }
double rad_to_deg(double rad) { return rad * 180.0 / std::numbers::pi; }

GazeVector angles_to_vector(GazeAngles a) {
  const double cp = std::cos(a.pitch);
  return {cp * std::sin(a.yaw), std::sin(a.pitch), cp * std::cos(a.yaw)};
}

GazeAngles vector_to_angles(GazeVector v) {
  const double norm = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
  if (!(norm > 0.0)) throw std::invalid_argument("cannot convert a zero vector to gaze angles");
  const double y = std::clamp(v.y / norm, -1.0, 1.0);
  return {std::atan2(v.x, v.z), std::asin(y)};
}

double angular_error_deg(GazeAngles a, GazeAngles b) {
  const GazeVector va = angles_to_vector(a);
  const GazeVector vb = angles_to_vector(b);
  const double dot = va.x * vb.x + va.y * vb.y + va.z * vb.z;
  return rad_to_deg(std::acos(std::clamp(dot, -1.0, 1.0)));
}

GazeAngles apply_offset(GazeAngles g, GazeAngles delta) { return {g.yaw + delta.yaw, g.pitch + delta.pitch}; }

Mat3 axis_angle_rotation(std::array<double, 3> axis, double angle) {
  const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
  if (!(n > 0.0)) throw std::invalid_argument("rotation axis must be non-zero");
  const double x = axis[0] / n, y = axis[1] / n, z = axis[2] / n;
  const double c = std::cos(angle), s = std::sin(angle), t = 1.0 - c;
  return {{{t * x * x + c, t * x * y - s * z, t * x * z + s * y},
           {t * x * y + s * z, t * y * y + c, t * y * z - s * x},
           {t * x * z - s * y, t * y * z + s * x, t * z * z + c}}};
}

GazeVector rotate(const Mat3& r, GazeVector v) {
  return {r[0][0] * v.x + r[0][1] * v.y + r[0][2] * v.z, r[1][0] * v.x + r[1][1] * v.y + r[1][2] * v.z,
          r[2][0] * v.x + r[2][1] * v.y + r[2][2] * v.z};
}

GazeAngles perturb_annotation(GazeAngles a, const AnnotationPerturbation& p, std::mt19937_64& rng) {
  GazeAngles out = a;
  if (p.angle != 0.0) out = vector_to_angles(rotate(p.rotation(), angles_to_vector(a)));
  if (p.bias.yaw != 0.0 || p.bias.pitch != 0.0) out = apply_offset(out, p.bias);
  if (p.noise_std > 0.0) {
    std::normal_distribution<double> noise(0.0, p.noise_std);
    out.yaw += noise(rng);
    out.pitch += noise(rng);
  }
  return out;
}

}  // namespace gazefusion
