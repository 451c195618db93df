#include "disco/lie.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace disco {
namespace {

// Coefficients a = sin(t)/t, b = (1-cos(t))/t^2, c = (t-sin(t))/t^3 with
// series fallbacks where the direct forms cancel.
void rot_coeffs(double theta, double& a, double& b, double& c) {
  if (std::abs(theta) < 1e-4) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = 0.5 - t2 / 24.0;
    c = 1.0 / 6.0 - t2 / 120.0;
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / (theta * theta);
    c = (theta - std::sin(theta)) / (theta * theta * theta);
  }
}

Eigen::Matrix3d skew(const Eigen::Vector3d& w) {
  Eigen::Matrix3d k;
  k << 0, -w.z(), w.y(), w.z(), 0, -w.x(), -w.y(), w.x(), 0;
  return k;
}

RigidTransform exp2(VecRef x) {
  const double theta = x[0];
  const double s = std::sin(theta), co = std::cos(theta);
  double a, b;
  if (std::abs(theta) < 1e-4) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = theta * (0.5 - t2 / 24.0);
  } else {
    a = s / theta;
    b = (1.0 - co) / theta;
  }
  RigidTransform g;
  g.R = Mat(2, 2);
  g.R << co, -s, s, co;
  Eigen::Matrix2d v;
  v << a, -b, b, a;
  g.t = v * x.tail(2);
  return g;
}

RigidTransform exp3(VecRef x) {
  const Eigen::Vector3d w = x.head(3);
  const double theta = w.norm();
  double a, b, c;
  rot_coeffs(theta, a, b, c);
  const Eigen::Matrix3d k = skew(w);
  const Eigen::Matrix3d k2 = k * k;
  RigidTransform g;
  g.R = Eigen::Matrix3d::Identity() + a * k + b * k2;
  const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + b * k + c * k2;
  g.t = v * x.tail(3);
  return g;
}

Vec log2d(const Mat& R, const Vec& t) {
  const double theta = std::atan2(R(1, 0), R(0, 0));
  double a, b;
  if (std::abs(theta) < 1e-4) {
    const double t2 = theta * theta;
    a = 1.0 - t2 / 6.0;
    b = theta * (0.5 - t2 / 24.0);
  } else {
    a = std::sin(theta) / theta;
    b = (1.0 - std::cos(theta)) / theta;
  }
  const double det = a * a + b * b;
  Vec x(3);
  x[0] = theta;
  x[1] = (a * t[0] + b * t[1]) / det;
  x[2] = (-b * t[0] + a * t[1]) / det;
  return x;
}

Vec log3d(const Mat& R, const Vec& t) {
  const double cos_theta = std::min(1.0, std::max(-1.0, (R.trace() - 1.0) / 2.0));
  const double theta = std::acos(cos_theta);
  Eigen::Vector3d axis_scaled(R(2, 1) - R(1, 2), R(0, 2) - R(2, 0), R(1, 0) - R(0, 1));

  Eigen::Vector3d w;
  if (theta < 1e-6) {
    w = 0.5 * axis_scaled;
  } else if (theta < M_PI - 1e-3) {
    w = (theta / (2.0 * std::sin(theta))) * axis_scaled;
  } else {
    // Near pi the off-diagonal difference vanishes; recover the axis from the
    // symmetric part instead.
    const Eigen::Matrix3d B = 0.5 * (Eigen::Matrix3d(R) + Eigen::Matrix3d::Identity());
    int i = 0;
    B.diagonal().maxCoeff(&i);
    Eigen::Vector3d axis;
    axis[i] = std::sqrt(std::max(0.0, B(i, i)));
    for (int j = 0; j < 3; ++j)
      if (j != i) axis[j] = B(i, j) / axis[i];
    axis.normalize();
    // Half-angle sign is free near pi; pick the one matching the skew part.
    if (axis.dot(axis_scaled) < 0) axis = -axis;
    w = theta * axis;
  }

  double a, b, c;
  rot_coeffs(theta, a, b, c);
  const Eigen::Matrix3d k = skew(w);
  const Eigen::Matrix3d v = Eigen::Matrix3d::Identity() + b * k + c * (k * k);
  Vec x(6);
  x.head(3) = w;
  x.tail(3) = v.partialPivLu().solve(Eigen::Vector3d(t));
  return x;
}

}  // namespace

RigidTransform lie_exp(VecRef x) {
  if (x.size() == 3) return exp2(x);
  if (x.size() == 6) return exp3(x);
  throw config_error("rigid parameters must have length 3 (2D) or 6 (3D)");
}

Vec lie_log(const Mat& R, const Vec& t) {
  if (R.rows() == 2 && R.cols() == 2 && t.size() == 2) return log2d(R, t);
  if (R.rows() == 3 && R.cols() == 3 && t.size() == 3) return log3d(R, t);
  throw config_error("rigid transform must be 2x2+2 or 3x3+3");
}

}  // namespace disco
