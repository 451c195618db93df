#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "disco/common.hpp"

namespace disco {

// Uniform d-dimensional binning grid: r bins per dimension over [lo, hi).
struct GridSpec {
  int d = 1;
  int r = 2;
  Vec lo, hi;  // one entry per dimension, lo < hi

  static GridSpec uniform(int d, int r, double lo, double hi) {
    GridSpec g;
    g.d = d;
    g.r = r;
    g.lo = Vec::Constant(d, lo);
    g.hi = Vec::Constant(d, hi);
    return g;
  }
};

// 1-based bin index: min(r, max(1, 1 + floor((y-lo)/((hi-lo)/r)))).
// Values outside [lo, hi] clamp to the boundary bins; total on finite reals.
int bin_index(double y, double lo, double hi, int r);

// p*d*r^d, with an overflow guard on r^d.
std::int64_t feature_dim(const GridSpec& grid, int p);

// Residual model: J terms g_j: R^p -> R^d with Jacobians d(g_j)/dx (d x p).
struct ResidualModel {
  int J = 0;
  int d = 0;
  int p = 0;
  virtual void eval(int j, VecRef x, Vec& g) const = 0;
  virtual void jacobian(int j, VecRef x, Mat& jac) const = 0;
  virtual ~ResidualModel() = default;
};

// Sparse vector as index-sorted (index, value) pairs. Feature vectors have at
// most p*d*J nonzeros out of p*d*r^d slots, so they are materialized sparsely
// and densified only where a dense view is required.
struct SparseFeature {
  std::int64_t dim = 0;
  std::vector<std::pair<std::int64_t, double>> nz;

  void reset(std::int64_t d) {
    dim = d;
    nz.clear();
  }
  Vec dense() const {
    Vec v = Vec::Zero(dim);
    for (const auto& [i, x] : nz) v[i] = x;
    return v;
  }
  // out = D * h
  void apply_map(const Mat& D, Vec& out) const {
    out.setZero(D.rows());
    for (const auto& [i, x] : nz) out.noalias() += x * D.col(i);
  }
  double sum() const {
    double s = 0;
    for (const auto& [i, x] : nz) s += x;
    return s;
  }
};

// h(x) = (1/J) sum_j  (+)_{l=1..p} (+)_{k=1..d}  [dg_j/dx]_{k,l} * unit cell
// of the binned residual g_j(x). Concatenation is l-major then k; the cell of
// the d-dimensional grid is row-major with dimension 1 slowest. Terms are
// accumulated in j order and scaled by 1/J once at the end.
void build_feature(VecRef x, const ResidualModel& model, const GridSpec& grid,
                   SparseFeature& out);

}  // namespace disco
