#include "disco/feature_grid.hpp"

#include <algorithm>
#include <cmath>

namespace disco {

int bin_index(double y, double lo, double hi, int r) {
  if (std::isnan(y)) return 1;
  const double w = (hi - lo) / r;
  const double t = std::floor((y - lo) / w);
  // Clamp in double first: a huge y must not overflow the integer cast.
  const double k = std::min(static_cast<double>(r), std::max(1.0, 1.0 + t));
  return static_cast<int>(k);
}

std::int64_t feature_dim(const GridSpec& grid, int p) {
  if (grid.d < 1 || grid.r < 2 || p < 1)
    throw config_error("feature_dim: need d >= 1, r >= 2, p >= 1");
  std::int64_t cells = 1;
  for (int i = 0; i < grid.d; ++i) {
    if (cells > (std::int64_t{1} << 56) / grid.r)
      throw config_error("feature_dim: r^d overflows");
    cells *= grid.r;
  }
  const std::int64_t pd = static_cast<std::int64_t>(p) * grid.d;
  if (cells > (std::int64_t{1} << 60) / pd)
    throw config_error("feature_dim: p*d*r^d overflows");
  return pd * cells;
}

void build_feature(VecRef x, const ResidualModel& model, const GridSpec& grid,
                   SparseFeature& out) {
  const int p = model.p, d = model.d, J = model.J;
  const std::int64_t dim = feature_dim(grid, p);
  out.reset(dim);
  if (J == 0) return;

  // Dense scratch keeps per-slot accumulation in exact j order; the touched
  // list makes clearing O(nnz).
  thread_local Vec scratch;
  thread_local std::vector<std::int64_t> touched;
  if (scratch.size() < dim) scratch = Vec::Zero(dim);
  touched.clear();

  std::int64_t cells = 1;
  for (int i = 0; i < d; ++i) cells *= grid.r;

  Vec g(d);
  Mat jac(d, p);
  for (int j = 0; j < J; ++j) {
    model.eval(j, x, g);
    model.jacobian(j, x, jac);
    if (!g.allFinite() || !jac.allFinite())
      throw numerical_error("build_feature: non-finite residual or Jacobian");
    // Row-major cell of the active bin, dimension 1 slowest.
    std::int64_t cell = 0;
    for (int a = 0; a < d; ++a)
      cell = cell * grid.r + (bin_index(g[a], grid.lo[a], grid.hi[a], grid.r) - 1);
    for (int l = 0; l < p; ++l) {
      for (int k = 0; k < d; ++k) {
        const std::int64_t idx = (static_cast<std::int64_t>(l) * d + k) * cells + cell;
        if (scratch[idx] == 0.0) touched.push_back(idx);
        scratch[idx] += jac(k, l);
      }
    }
  }

  std::sort(touched.begin(), touched.end());
  touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
  const double invJ = 1.0 / J;
  out.nz.reserve(touched.size());
  for (const std::int64_t idx : touched) {
    const double v = scratch[idx];
    scratch[idx] = 0.0;
    if (v != 0.0) out.nz.emplace_back(idx, v * invJ);
  }
}

}  // namespace disco
