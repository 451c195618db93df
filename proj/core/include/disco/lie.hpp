#pragma once

#include "disco/common.hpp"

namespace disco {

// Rigid transform p -> R p + t in 2 or 3 dimensions.
struct RigidTransform {
  Mat R;
  Vec t;
  int dim() const { return static_cast<int>(t.size()); }
  Vec apply(VecRef p) const { return R * p + t; }
  Mat apply(const Mat& pts) const { return (R * pts).colwise() + t; }
  RigidTransform inverse() const { return {R.transpose(), -(R.transpose() * t)}; }
};

// Exponential map of se(2) / se(3). Parameter layout: rotation generator
// coefficients first (1 angle in 2D, 3 axis-angle components in 3D), then the
// translation part, coupled through the V matrix. x must have length 3 or 6.
RigidTransform lie_exp(VecRef x);

// Inverse of lie_exp; lie_exp(lie_log(R, t)) reproduces (R, t) to 1e-9.
Vec lie_log(const Mat& R, const Vec& t);

inline Vec lie_log(const RigidTransform& g) { return lie_log(g.R, g.t); }

}  // namespace disco
