#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <disco/rng.hpp>
#include <disco/sum.hpp>

using namespace disco;

namespace {

FeatureFn dense_feature(int f) {
  // h(x) = [x; 1; x^2 ...] truncated to f entries: a fixed nonlinear lift.
  return [f](VecRef x, SparseFeature& h) {
    h.reset(f);
    for (int i = 0; i < f; ++i) {
      const double base = x[i % x.size()];
      const double v = i < x.size() ? base : (i == x.size() ? 1.0 : base * base);
      if (v != 0.0) h.nz.emplace_back(i, v);
    }
  };
}

std::vector<TrainingInstance> linear_problem(int n, int p, int f, Rng& rng) {
  // x* = x0 - A h(x0) for a hidden A: exactly representable by one map.
  Mat A(p, f);
  for (int r = 0; r < p; ++r)
    for (int c = 0; c < f; ++c) A(r, c) = rng.uniform(-0.5, 0.5);
  std::vector<TrainingInstance> out;
  const FeatureFn fn = dense_feature(f);
  for (int i = 0; i < n; ++i) {
    TrainingInstance ti;
    ti.x0 = Vec::NullaryExpr(p, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    SparseFeature h;
    fn(ti.x0, h);
    Vec u;
    h.apply_map(A, u);
    ti.x_star = ti.x0 - u;
    ti.feature = fn;
    out.push_back(std::move(ti));
  }
  return out;
}

}  // namespace

TEST_CASE("ridge_solve equals the dense normal equations") {
  Rng rng(7);
  const int n = 60, f = 8, p = 3;
  std::vector<Vec> residuals, features;
  for (int i = 0; i < n; ++i) {
    residuals.push_back(Vec::NullaryExpr(p, [&](Eigen::Index) { return rng.uniform(-1, 1); }));
    features.push_back(Vec::NullaryExpr(f, [&](Eigen::Index) { return rng.uniform(-1, 1); }));
  }
  for (double lambda : {1e-2, 1e-6, 0.0}) {
    const Mat D = ridge_solve(residuals, features, lambda);
    REQUIRE(D.rows() == p);
    REQUIRE(D.cols() == f);
    Mat H = Mat::Zero(f, f), C = Mat::Zero(p, f);
    for (int i = 0; i < n; ++i) {
      H += features[i] * features[i].transpose();
      C += residuals[i] * features[i].transpose();
    }
    H /= n;
    C /= n;
    const double eff = lambda > 0 ? lambda : 1e-12;  // zero gets a jitter
    H += eff * Mat::Identity(f, f);
    const Mat expect = H.ldlt().solve(C.transpose()).transpose();
    CHECK((D - expect).cwiseAbs().maxCoeff() < 1e-9);
  }
}

TEST_CASE("one map nails an exactly linear problem") {
  Rng rng(11);
  auto instances = linear_problem(201, 2, 6, rng);
  const TrainingInstance fresh = instances.back();  // held out: same hidden A
  instances.pop_back();
  TrainOptions opt;
  opt.T = 1;
  opt.lambda = 0.0;
  auto [sum, report] = train_sum(instances, opt);
  REQUIRE(sum.T() == 1);
  REQUIRE(report.rmse.size() == 2);
  CHECK(report.rmse[0] > 0.1);
  CHECK(report.rmse[1] < 1e-5);
  CHECK(sum.training_rmse == report.rmse);

  // inference solves the held-out instance in one step; the solution is not a
  // stationary point of the map (h(x*) != 0), so cap the iteration count at
  // that single step instead of letting the last map repeat
  InferenceSettings is;
  is.max_iter = 1;
  const InferResult r = infer(fresh.x0, fresh.feature, sum, is);
  CHECK(r.iterations_used == 1);
  CHECK((r.x - fresh.x_star).norm() < 1e-4);
}

TEST_CASE("early stopping keeps the sub-threshold map") {
  Rng rng(13);
  const auto instances = linear_problem(150, 2, 6, rng);
  TrainOptions opt;
  opt.T = 6;
  opt.lambda = 0.0;

  SUBCASE("huge delta stops after the first map") {
    opt.early_stop_rmse_delta = 1e9;
    auto [sum, report] = train_sum(instances, opt);
    CHECK(sum.T() == 1);
    CHECK(report.rmse.size() == 2);
  }
  SUBCASE("later maps that stop helping end training, keeping the last one") {
    // map 1 takes the RMSE below 1e-5, so map 2's improvement cannot reach
    // the threshold: exactly two maps get stored.
    opt.early_stop_rmse_delta = 1e-4;
    auto [sum, report] = train_sum(instances, opt);
    CHECK(sum.T() == 2);
    REQUIRE(report.rmse.size() == 3);
    CHECK(report.rmse[0] - report.rmse[1] >= opt.early_stop_rmse_delta);
    CHECK(report.rmse[1] - report.rmse[2] < opt.early_stop_rmse_delta);
  }
}

TEST_CASE("training error is monotone on a nonlinear problem") {
  Rng rng(17);
  // x* is a nonlinear function of x0, so no single map is exact.
  std::vector<TrainingInstance> instances;
  const FeatureFn fn = dense_feature(5);
  for (int i = 0; i < 300; ++i) {
    TrainingInstance ti;
    ti.x0 = Vec::NullaryExpr(2, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    ti.x_star = Vec(2);
    ti.x_star << std::tanh(ti.x0[0] - 0.2), 0.5 * std::sin(ti.x0[1] * 2);
    ti.feature = fn;
    instances.push_back(std::move(ti));
  }
  TrainOptions opt;
  opt.T = 8;
  opt.lambda = 1e-8;
  auto [sum, report] = train_sum(instances, opt);
  REQUIRE(report.rmse.size() == static_cast<std::size_t>(sum.T()) + 1);
  for (std::size_t t = 1; t < report.rmse.size(); ++t)
    CHECK(report.rmse[t] <= report.rmse[t - 1] + 1e-12);
}

TEST_CASE("infer semantics") {
  // Hand-built SUM on p = 1, f = 1 with h(x) = x: each map halves x.
  UpdateMapSequence sum;
  sum.p = 1;
  sum.f = 1;
  const FeatureFn fn = [](VecRef x, SparseFeature& h) {
    h.reset(1);
    if (x[0] != 0.0) h.nz.emplace_back(0, x[0]);
  };
  const Vec x0 = Vec::Constant(1, 1.0);

  SUBCASE("no maps returns x0 untouched") {
    InferenceSettings is;
    const InferResult r = infer(x0, fn, sum, is);
    CHECK(r.x[0] == 1.0);
    CHECK(r.iterations_used == 0);
    CHECK(r.final_update_norm == 0.0);
  }

  sum.maps = {Mat::Constant(1, 1, 0.5), Mat::Constant(1, 1, 0.5)};

  SUBCASE("maps run once, then the last repeats until epsilon") {
    InferenceSettings is;
    is.epsilon = 0.05;  // update at x is 0.5 x: stops once x < 0.1
    is.max_iter = 100;
    const InferResult r = infer(x0, fn, sum, is);
    // x: 1 -> .5 -> .25 (two fixed maps) -> .125 -> .0625; update at .0625
    // is .03125 < eps, so it stops with 4 applications.
    CHECK(r.iterations_used == 4);
    CHECK(r.x[0] == doctest::Approx(0.0625).epsilon(1e-12));
    CHECK(r.final_update_norm == doctest::Approx(0.03125).epsilon(1e-12));
  }

  SUBCASE("max_iter caps the repeats") {
    InferenceSettings is;
    is.epsilon = 0.0;  // never satisfied by the norm test alone
    is.max_iter = 7;
    const InferResult r = infer(x0, fn, sum, is);
    CHECK(r.iterations_used == 7);
    CHECK(r.x[0] == doctest::Approx(std::pow(0.5, 7)).epsilon(1e-12));
  }

  SUBCASE("the fixed prefix runs even when epsilon is already met") {
    InferenceSettings is;
    is.epsilon = std::numeric_limits<double>::infinity();
    const InferResult r = infer(x0, fn, sum, is);
    CHECK(r.iterations_used == 2);  // both trained maps apply exactly once
    CHECK(r.x[0] == doctest::Approx(0.25).epsilon(1e-12));
  }

  SUBCASE("a NaN update stops the repeat loop instead of spreading") {
    UpdateMapSequence bad = sum;
    bad.maps = {Mat::Constant(1, 1, 0.5)};
    const FeatureFn nan_after = [](VecRef x, SparseFeature& h) {
      h.reset(1);
      h.nz.emplace_back(0, x[0] < 0.4 ? std::numeric_limits<double>::quiet_NaN() : x[0]);
    };
    InferenceSettings is;
    is.epsilon = 1e-9;
    is.max_iter = 50;
    const InferResult r = infer(x0, nan_after, bad, is);
    // prefix map: 1 -> 0.5; repeat: 0.5 -> 0.25; next update is NaN -> stop,
    // estimate keeps its last finite value.
    CHECK(std::isfinite(r.x[0]));
    CHECK(r.x[0] == doctest::Approx(0.25).epsilon(1e-12));
  }
}

TEST_CASE("feature normalization folds into the stored maps") {
  Rng rng(19);
  // Same linear problem, but one feature coordinate is scaled by 1e4: with
  // lambda = 0 the folded normalized solve must match the raw solve.
  const int f = 6;
  const FeatureFn base = dense_feature(f);
  const FeatureFn scaled = [base](VecRef x, SparseFeature& h) {
    base(x, h);
    for (auto& [i, v] : h.nz)
      if (i == 2) v *= 1e4;
  };
  std::vector<TrainingInstance> instances;
  for (int i = 0; i < 120; ++i) {
    TrainingInstance ti;
    ti.x0 = Vec::NullaryExpr(2, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    ti.x_star = Vec(2);
    ti.x_star << 0.3 * ti.x0[0] - 0.1, std::sin(ti.x0[1]);
    ti.feature = scaled;
    instances.push_back(std::move(ti));
  }
  TrainOptions raw;
  raw.T = 2;
  raw.lambda = 0.0;
  TrainOptions norm = raw;
  norm.normalize_features = true;
  auto [sum_raw, rep_raw] = train_sum(instances, raw);
  auto [sum_norm, rep_norm] = train_sum(instances, norm);
  // the normalized run reports the same training errors...
  for (std::size_t t = 0; t < rep_raw.rmse.size(); ++t)
    CHECK(rep_norm.rmse[t] == doctest::Approx(rep_raw.rmse[t]).epsilon(1e-5));
  // ...and its stored maps consume *raw* features
  InferenceSettings is;
  is.max_iter = 2;
  const InferResult a = infer(instances[0].x0, scaled, sum_raw, is);
  const InferResult b = infer(instances[0].x0, scaled, sum_norm, is);
  CHECK((a.x - b.x).norm() < 1e-6);
}

TEST_CASE("training input checks") {
  CHECK_THROWS_AS(train_sum(std::vector<TrainingInstance>{}, TrainOptions{}), config_error);
  Rng rng(23);
  auto instances = linear_problem(3, 2, 4, rng);
  TrainOptions opt;
  opt.T = 0;
  CHECK_THROWS_AS(train_sum(instances, opt), config_error);
}

TEST_CASE("monotonicity probe sees a monotone field") {
  TrainingInstance ti;
  ti.x_star = Vec::Constant(1, 0.25);
  ti.feature = [](VecRef x, SparseFeature& h) {
    h.reset(1);
    h.nz.emplace_back(0, x[0] - 0.25);  // h = x - x*
  };
  const Mat D = Mat::Constant(1, 1, 1.0);
  std::vector<Vec> samples;
  Rng rng(29);
  for (int i = 0; i < 64; ++i) samples.push_back(Vec::Constant(1, rng.uniform(-1, 1)));
  CHECK(monotonicity_probe(D, ti, samples) == 1.0);
  CHECK(monotonicity_probe(-D, ti, samples) < 0.2);
}
