#pragma once

#include <Eigen/Dense>
#include <cmath>

#include "dukf/numerics.hpp"
#include "dukf/rng.hpp"

namespace dukf {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat6 = Eigen::Matrix<double, 6, 6>;

/// Constant-turn motion in the horizontal plane plus constant-velocity
/// vertical motion.  State layout: [x, vx, y, vy, z, vz].
struct MotionParams {
  double omega_rad_s = 0.0;  ///< turn rate; 0 degrades to constant velocity
  double period_s = 1.0;     ///< sampling period T
  double eta_sq = 0.0;       ///< process-noise intensity (per axis)
};

struct SensorNode {
  int id = 0;
  Eigen::Vector3d position_m = Eigen::Vector3d::Zero();
  double r_v = 0.0;  ///< measurement-noise variance (pre-fading)
  double r_n = 0.0;  ///< additive channel-noise variance (post-fading)
};

/// State transition matrix: block-diagonal coupling (x, vx, y, vy) through a
/// coordinated turn and (z, vz) through constant velocity.  The omega -> 0
/// limit is handled by series expansions of sin(wT)/w and (1-cos(wT))/w.
inline Mat6 transition_matrix(const MotionParams& p) {
  const double w = p.omega_rad_s;
  const double t = p.period_s;
  const double u = w * t;
  double sin_over_w;      // sin(wT)/w
  double one_m_cos_over_w;  // (1 - cos(wT))/w
  if (std::abs(u) < 1e-8) {
    const double u2 = u * u;
    sin_over_w = t * (1.0 - u2 / 6.0 + u2 * u2 / 120.0);
    one_m_cos_over_w = t * 0.5 * u * (1.0 - u2 / 12.0 + u2 * u2 / 360.0);
  } else {
    sin_over_w = std::sin(u) / w;
    one_m_cos_over_w = (1.0 - std::cos(u)) / w;
  }
  const double c = std::cos(u);
  const double s = std::sin(u);
  Mat6 f = Mat6::Zero();
  // Horizontal coordinated turn over (x, vx, y, vy).
  f(0, 0) = 1.0; f(0, 1) = sin_over_w;        f(0, 3) = -one_m_cos_over_w;
  f(1, 1) = c;                                 f(1, 3) = -s;
  f(2, 1) = one_m_cos_over_w; f(2, 2) = 1.0;  f(2, 3) = sin_over_w;
  f(3, 1) = s;                                 f(3, 3) = c;
  // Vertical constant velocity over (z, vz).
  f(4, 4) = 1.0; f(4, 5) = t;
  f(5, 5) = 1.0;
  return f;
}

/// Process-noise covariance: white-acceleration model, identical for all
/// three axes, applied per (position, velocity) pair.
inline Mat6 process_noise_cov(const MotionParams& p) {
  const double t = p.period_s;
  const double q11 = p.eta_sq * t * t * t / 3.0;
  const double q12 = p.eta_sq * t * t / 2.0;
  const double q22 = p.eta_sq * t;
  Mat6 q = Mat6::Zero();
  for (int axis = 0; axis < 3; ++axis) {
    const int i = 2 * axis;
    q(i, i) = q11;
    q(i, i + 1) = q12;
    q(i + 1, i) = q12;
    q(i + 1, i + 1) = q22;
  }
  return q;
}

inline Eigen::Vector3d state_position(const Vec6& x) {
  return Eigen::Vector3d(x(0), x(2), x(4));
}

inline Eigen::Vector3d state_velocity(const Vec6& x) {
  return Eigen::Vector3d(x(1), x(3), x(5));
}

/// One step of the true target: x' = F x + w with w ~ N(0, Q).  Consumes
/// exactly six draws from `rng` (even when eta_sq = 0), so stream alignment
/// is independent of the noise level.
inline Vec6 propagate_truth(const Vec6& x, const MotionParams& p,
                            RngStream& rng) {
  Vec6 z;
  for (int i = 0; i < 6; ++i) z(i) = sample_std_normal(rng);
  const Mat6 f = transition_matrix(p);
  if (p.eta_sq <= 0.0) return f * x;
  const Mat6 l = matrix_sqrt_psd(process_noise_cov(p));
  return f * x + l * z;
}

/// Noise-free range from a sensor to the target position in the state.
inline double range_measurement(const Vec6& x, const SensorNode& node) {
  return (state_position(x) - node.position_m).norm();
}

/// Range corrupted by the sensor's own measurement noise (variance r_v)
/// but before any channel effect.  Always consumes one draw.
inline double ideal_measurement(const Vec6& x, const SensorNode& node,
                                RngStream& rng) {
  const double n = sample_std_normal(rng);
  return range_measurement(x, node) + std::sqrt(node.r_v) * n;
}

}  // namespace dukf
