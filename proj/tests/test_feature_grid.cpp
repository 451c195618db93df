#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <disco/feature_grid.hpp>
#include <disco/rng.hpp>

using namespace disco;

namespace {

// Tabulated residual model: g_j and its Jacobian are fixed per j, so the
// oracle below can re-derive the feature with plain loops.
struct TableModel final : ResidualModel {
  std::vector<Vec> g;
  std::vector<Mat> jac;
  void eval(int j, VecRef, Vec& out) const override { out = g[j]; }
  void jacobian(int j, VecRef, Mat& out) const override { out = jac[j]; }
};

// Mirrors the documented accumulation: j outer, then l, then k, into a dense
// vector, scaled by 1/J once at the end.
Vec naive_feature(const TableModel& m, const GridSpec& grid) {
  std::int64_t cells = 1;
  for (int k = 0; k < grid.d; ++k) cells *= grid.r;
  Vec acc = Vec::Zero(static_cast<Eigen::Index>(m.p) * m.d * cells);
  for (int j = 0; j < m.J; ++j) {
    std::int64_t cell = 0;
    for (int k = 0; k < grid.d; ++k)
      cell = cell * grid.r + (bin_index(m.g[j][k], grid.lo[k], grid.hi[k], grid.r) - 1);
    for (int l = 0; l < m.p; ++l)
      for (int k = 0; k < m.d; ++k)
        acc[(static_cast<std::int64_t>(l) * m.d + k) * cells + cell] += m.jac[j](k, l);
  }
  const double invJ = 1.0 / m.J;
  for (Eigen::Index i = 0; i < acc.size(); ++i) acc[i] *= invJ;
  return acc;
}

TableModel random_model(Rng& rng, int p, int d, int J, double lo, double hi) {
  TableModel m;
  m.J = J;
  m.d = d;
  m.p = p;
  for (int j = 0; j < J; ++j) {
    Vec g(d);
    for (int k = 0; k < d; ++k) g[k] = rng.uniform(lo - 0.5, hi + 0.5);  // spill the edges
    Mat jac(d, p);
    for (int k = 0; k < d; ++k)
      for (int l = 0; l < p; ++l) jac(k, l) = rng.uniform(-2.0, 2.0);
    m.g.push_back(g);
    m.jac.push_back(jac);
  }
  return m;
}

}  // namespace

TEST_CASE("bin_index clamps and covers the range") {
  CHECK(bin_index(-2.0, -2.0, 2.0, 40) == 1);
  CHECK(bin_index(-1.95, -2.0, 2.0, 40) == 1);  // mid-bin probes: edges are
  CHECK(bin_index(-1.85, -2.0, 2.0, 40) == 2);  // float-rounding territory
  CHECK(bin_index(-0.05, -2.0, 2.0, 40) == 20);
  CHECK(bin_index(0.05, -2.0, 2.0, 40) == 21);
  CHECK(bin_index(1.95, -2.0, 2.0, 40) == 40);
  CHECK(bin_index(2.0, -2.0, 2.0, 40) == 40);    // top edge clamps into bin r
  CHECK(bin_index(-50.0, -2.0, 2.0, 40) == 1);   // below range
  CHECK(bin_index(1e9, -2.0, 2.0, 40) == 40);    // above range
  CHECK(bin_index(std::numeric_limits<double>::quiet_NaN(), -2.0, 2.0, 40) == 1);
  CHECK(bin_index(std::numeric_limits<double>::infinity(), -2.0, 2.0, 40) == 40);
  CHECK(bin_index(-std::numeric_limits<double>::infinity(), -2.0, 2.0, 40) == 1);
  // single-bin grid maps everything to 1
  CHECK(bin_index(0.3, 0.0, 1.0, 1) == 1);
}

TEST_CASE("feature_dim multiplies and guards overflow") {
  CHECK(feature_dim(GridSpec::uniform(1, 40, -2, 2), 1) == 40);
  CHECK(feature_dim(GridSpec::uniform(2, 10, -1, 1), 12) == 12 * 2 * 100);
  CHECK_THROWS_AS(feature_dim(GridSpec::uniform(12, 40, -1, 1), 1), config_error);
}

TEST_CASE("build_feature equals the naive oracle exactly") {
  Rng rng(2024);
  for (int trial = 0; trial < 50; ++trial) {
    const int p = rng.uniform_int(1, 3);
    const int d = rng.uniform_int(1, 2);
    const int r = rng.uniform_int(2, 10);
    const int J = rng.uniform_int(1, 20);
    const double lo = rng.uniform(-2.0, 0.0);
    const double hi = lo + rng.uniform(0.5, 3.0);
    const GridSpec grid = GridSpec::uniform(d, r, lo, hi);
    const TableModel m = random_model(rng, p, d, J, lo, hi);

    SparseFeature out;
    const Vec x = Vec::Zero(p);
    build_feature(x, m, grid, out);
    const Vec expect = naive_feature(m, grid);

    REQUIRE(out.dim == expect.size());
    const Vec got = out.dense();
    for (Eigen::Index i = 0; i < expect.size(); ++i) {
      INFO("trial ", trial, " index ", i);
      CHECK(got[i] == expect[i]);  // bitwise: same accumulation order
    }
    // exact zeros are dropped from the sparse form
    for (const auto& [idx, v] : out.nz) CHECK(v != 0.0);
  }
}

TEST_CASE("cancelling jacobian entries leave no nonzero behind") {
  TableModel m;
  m.J = 2;
  m.d = 1;
  m.p = 1;
  m.g = {Vec::Constant(1, 0.5), Vec::Constant(1, 0.5)};  // same cell
  m.jac = {Mat::Constant(1, 1, 1.0), Mat::Constant(1, 1, -1.0)};
  SparseFeature out;
  build_feature(Vec::Zero(1), m, GridSpec::uniform(1, 4, 0, 1), out);
  CHECK(out.nz.empty());
  CHECK(out.dim == 4);
}

TEST_CASE("sparse feature helpers") {
  SparseFeature h;
  h.reset(6);
  h.nz = {{1, 0.25}, {4, 0.75}};
  CHECK(h.sum() == 1.0);
  const Vec d = h.dense();
  CHECK(d.size() == 6);
  CHECK(d[1] == 0.25);
  CHECK(d[4] == 0.75);
  CHECK(d[0] == 0.0);

  Mat D = Mat::Zero(2, 6);
  D(0, 1) = 2.0;
  D(1, 4) = 4.0;
  Vec u;
  h.apply_map(D, u);
  CHECK(u[0] == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(u[1] == doctest::Approx(3.0).epsilon(1e-15));
}
