#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <limits>
#include <vector>

#include <disco/pnp.hpp>
#include <disco/rng.hpp>

using namespace disco;

namespace {

Vec pose_vec(const Mat& X) {
  Vec x(12);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 4; ++c) x[r * 4 + c] = X(r, c);
  return x;
}

Eigen::Matrix3d random_rotation(Rng& rng) {
  Eigen::Quaterniond q(rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1), rng.normal(0, 1));
  q.normalize();
  return q.toRotationMatrix();
}

Vec residual_of(const Vec& x, const Eigen::Vector2d& p, const Eigen::Vector3d& s) {
  Eigen::Vector4d st;
  st << s, 1.0;
  const double d1 = x.segment(0, 4).dot(st);
  const double d2 = x.segment(4, 4).dot(st);
  const double d3 = x.segment(8, 4).dot(st);
  Vec g(2);
  g << p[0] - d1 / d3, p[1] - d2 / d3;
  return g;
}

}  // namespace

TEST_CASE("geometric residual Jacobian matches finite differences") {
  Rng rng(101);
  int tested = 0;
  while (tested < 100) {
    Vec x(12);
    for (int i = 0; i < 12; ++i) x[i] = rng.uniform(-1, 1);
    Eigen::Vector3d s(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Eigen::Vector2d p(rng.uniform(-1, 1), rng.uniform(-1, 1));
    Eigen::Vector4d st;
    st << s, 1.0;
    if (std::abs(x.segment(8, 4).dot(st)) < 0.3) continue;  // keep it nondegenerate

    const PnpResidual res = geometric_residual(x, p, s);
    REQUIRE(res.valid);
    CHECK((res.g - residual_of(x, p, s)).norm() < 1e-12);

    // assemble the full 2x12 Jacobian from the shared blocks
    Mat J(2, 12);
    J.setZero();
    J.block(0, 0, 1, 4) = res.a.transpose();
    J.block(0, 8, 1, 4) = res.b.transpose();
    J.block(1, 4, 1, 4) = res.a.transpose();
    J.block(1, 8, 1, 4) = res.c.transpose();

    const double step = 1e-6;
    for (int i = 0; i < 12; ++i) {
      Vec xp = x, xm = x;
      xp[i] += step;
      xm[i] -= step;
      const Vec fd = (residual_of(xp, p, s) - residual_of(xm, p, s)) / (2 * step);
      for (int r = 0; r < 2; ++r) {
        const double scale = std::max(1.0, std::abs(fd[r]));
        INFO("entry (", r, ",", i, ")");
        CHECK(std::abs(J(r, i) - fd[r]) / scale < 1e-5);
      }
    }
    ++tested;
  }
}

TEST_CASE("tiny depths mark the residual invalid") {
  Vec x = pose_vec((Mat(3, 4) << 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0).finished());
  // world point on the camera plane: depth 0
  const PnpResidual res = geometric_residual(x, {0.0, 0.0}, {0.3, 0.2, 0.0});
  CHECK_FALSE(res.valid);
}

TEST_CASE("rotation error agrees with the quaternion angle") {
  Rng rng(103);
  for (int i = 0; i < 50; ++i) {
    const Eigen::Matrix3d R1 = random_rotation(rng);
    const Eigen::Matrix3d R2 = random_rotation(rng);
    const Eigen::Quaterniond q1(R1), q2(R2);
    const double dot = std::min(1.0, std::abs(q1.dot(q2)));
    const double expect = 2 * std::acos(dot) * 180.0 / M_PI;
    CHECK(rotation_error(R1, R2) == doctest::Approx(expect).epsilon(1e-7));
  }
  CHECK(rotation_error(Eigen::Matrix3d::Identity(), Eigen::Matrix3d::Identity()) ==
        doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("input normalization is idempotent") {
  Rng rng(107);
  CorrespondenceSet corr;
  const int J = 40;
  corr.P.resize(2, J);
  corr.S.resize(3, J);
  corr.K << 700, 0, 300, 0, 700, 220, 0, 0, 1;
  for (int j = 0; j < J; ++j) {
    corr.P.col(j) << rng.uniform(0, 640), rng.uniform(0, 480);
    corr.S.col(j) << rng.uniform(-2, 2), rng.uniform(-2, 2), rng.uniform(3, 8);
  }
  const NormalizedPnp n1 = normalize_inputs(corr);
  CHECK(n1.Q.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);
  CHECK(n1.S.cwiseAbs().maxCoeff() <= 0.5 + 1e-12);

  CorrespondenceSet corr2;
  corr2.P = n1.Q;
  corr2.S = n1.S;  // K stays identity
  const NormalizedPnp n2 = normalize_inputs(corr2);
  CHECK((n2.record.T2 - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((n2.record.T3 - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff() < 1e-9);
  CHECK((n2.Q - n1.Q).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("too few points are rejected") {
    CorrespondenceSet tiny;
    tiny.P = corr.P.leftCols(5);
    tiny.S = corr.S.leftCols(5);
    CHECK_THROWS_AS(normalize_inputs(tiny), config_error);
  }
}

TEST_CASE("pose projection and sign fixing") {
  SUBCASE("scaled identity pose recovers exactly") {
    Mat X(3, 4);
    X << 2, 0, 0, 2, 0, 2, 0, 4, 0, 0, 2, 6;
    auto [R, t] = project_to_pose(X);
    CHECK((R - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((t - Eigen::Vector3d(1, 2, 3)).cwiseAbs().maxCoeff() < 1e-12);
  }
  SUBCASE("rank-deficient rotation block throws") {
    Mat X = Mat::Zero(3, 4);
    X(0, 0) = 1.0;  // rank-1 left block
    CHECK_THROWS_AS(project_to_pose(X), numerical_error);
  }
  SUBCASE("normalize_pose flips negative-depth solutions") {
    Mat X(3, 4);
    X << -1, 0, 0, 0, 0, -1, 0, 0, 0, 0, -1, 0;
    Mat world(3, 4);
    world << 0.1, -0.2, 0.3, 0.0, 0.1, 0.2, -0.1, 0.0, 5, 6, 7, 8;
    const Mat N = normalize_pose(X, world);
    CHECK(N(0, 0) == doctest::Approx(1.0 / std::sqrt(3)).epsilon(1e-12));
    CHECK(std::abs(N.norm() - 1.0) < 1e-12);
  }
}

TEST_CASE("DLT recovers an exact pose and inliers select correctly") {
  Rng rng(109);
  const Eigen::Matrix3d R = random_rotation(rng);
  const Eigen::Vector3d t(0.3, -0.2, 6.0);
  const int J = 24;
  Mat S(3, J), Q(2, J);
  CorrespondenceSet corr;
  corr.K << 800, 0, 320, 0, 800, 240, 0, 0, 1;
  corr.P.resize(2, J);
  for (int j = 0; j < J; ++j) {
    Eigen::Vector3d s(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    S.col(j) = s;
    const Eigen::Vector3d c = R * s + t;
    Q.col(j) << c[0] / c[2], c[1] / c[2];
    const Eigen::Vector3d pix = corr.K * c;
    corr.P.col(j) << pix[0] / pix[2], pix[1] / pix[2];
  }
  corr.S = S;

  const Mat X = dlt_pose(Q, S);
  auto [Re, te] = project_to_pose(X);
  CHECK(rotation_error(R, Re) < 1e-6);
  CHECK((te - t).norm() < 1e-6);

  SUBCASE("six points are required") {
    CHECK_THROWS_AS(dlt_pose(Q.leftCols(5), S.leftCols(5)), config_error);
  }
  SUBCASE("inlier selection thresholds reprojection error") {
    std::vector<int> all = select_inliers(R, t, corr, 1e-6);
    CHECK(all.size() == J);
    // corrupt one pixel by 30px: gone at 10px, kept at 50px
    corr.P(0, 3) += 30.0;
    std::vector<int> most = select_inliers(R, t, corr, 10.0);
    CHECK(most.size() == J - 1);
    for (int idx : most) CHECK(idx != 3);
    CHECK(select_inliers(R, t, corr, 50.0).size() == J);
  }
  SUBCASE("zero-depth points never count at finite thresholds") {
    CorrespondenceSet flat = corr;
    // land point 0 exactly on the camera plane: depth 0, infinitely far
    flat.S.col(0) = R.transpose() * (Eigen::Vector3d(1, 0, 0) - t);
    std::vector<int> kept = select_inliers(R, t, flat, 1e9);
    for (int idx : kept) CHECK(idx != 0);
    CHECK(kept.size() == J - 1);
  }
}

TEST_CASE("instance generator invariants") {
  PnpGenConfig cfg;
  cfg.j_lo = cfg.j_hi = 200;
  cfg.outlier_lo = cfg.outlier_hi = 0.3;
  for (int rep = 0; rep < 5; ++rep) {
    Rng rng = Rng::stream(1234, rep);
    const PnpInstance inst = gen_pnp_instance(cfg, rng);
    REQUIRE(inst.corr.size() == 200);
    REQUIRE(inst.outlier_mask.size() == 200);

    int flagged = 0;
    for (char m : inst.outlier_mask) flagged += m != 0;
    CHECK(flagged == 60);  // lround(0.3 * 200)

    // world points tightly fit [-1,1]^3
    const Vec lo = inst.corr.S.rowwise().minCoeff();
    const Vec hi = inst.corr.S.rowwise().maxCoeff();
    CHECK((hi - lo).maxCoeff() == doctest::Approx(2.0).epsilon(1e-9));
    CHECK((hi + lo).cwiseAbs().maxCoeff() < 1e-9);  // midrange centered

    for (int j = 0; j < 200; ++j) {
      // all pixels inside the frame, outliers included
      CHECK(inst.corr.P(0, j) >= 0.0);
      CHECK(inst.corr.P(0, j) <= cfg.width);
      CHECK(inst.corr.P(1, j) >= 0.0);
      CHECK(inst.corr.P(1, j) <= cfg.height);
      // positive depth for every true point
      const double depth = (inst.R * inst.corr.S.col(j) + inst.t)[2];
      CHECK(depth > 0.0);
      if (!inst.outlier_mask[j]) {
        // clean pixels reproject exactly (no noise configured)
        const Eigen::Vector3d c = inst.corr.K * (inst.R * inst.corr.S.col(j) + inst.t);
        CHECK(std::abs(inst.corr.P(0, j) - c[0] / c[2]) < 1e-9);
        CHECK(std::abs(inst.corr.P(1, j) - c[1] / c[2]) < 1e-9);
      }
    }
  }
}

TEST_CASE("feature layouts agree where they overlap") {
  PnpGenConfig cfg;
  cfg.j_lo = cfg.j_hi = 150;
  cfg.outlier_lo = cfg.outlier_hi = 0.0;
  Rng rng = Rng::stream(77, 3);
  const PnpInstance inst = gen_pnp_instance(cfg, rng);
  const NormalizedPnp norm = normalize_inputs(inst.corr);

  Vec x(12);
  x.setZero();
  x[0] = x[5] = x[10] = 1.0 / std::sqrt(3.0);

  SparseFeature compact, literal;
  pnp_feature(x, norm.Q, norm.S, false, compact);
  pnp_feature(x, norm.Q, norm.S, true, literal);
  CHECK(compact.dim == 1200);
  CHECK(literal.dim == 2400);
  CHECK(std::abs(compact.dense().norm() - 1.0) < 1e-12);
  CHECK(std::abs(literal.dense().norm() - 1.0) < 1e-12);

  // the literal layout duplicates the `a` block and keeps two zero blocks,
  // so the compact values reappear scaled by the changed normalizer
  const Vec vc = compact.dense();
  const Vec vl = literal.dense();
  double ratio = 0.0;
  auto match = [&](std::int64_t crow, std::int64_t lrow) {
    for (std::int64_t cell = 0; cell < 100; ++cell) {
      const double a = vc[crow * 100 + cell];
      const double b = vl[lrow * 100 + cell];
      if (a != 0.0) {
        const double r = b / a;
        if (ratio == 0.0) ratio = r;
        CHECK(r == doctest::Approx(ratio).epsilon(1e-9));
      } else {
        CHECK(b == 0.0);
      }
    }
  };
  for (std::int64_t i = 0; i < 4; ++i) {
    match(0 + i, (0 + i) * 2 + 0);   // a, first copy
    match(0 + i, (4 + i) * 2 + 1);   // a, duplicated copy
    match(4 + i, (8 + i) * 2 + 0);   // b
    match(8 + i, (8 + i) * 2 + 1);   // c
  }
  // structurally zero blocks stay empty
  for (std::int64_t i = 0; i < 4; ++i)
    for (std::int64_t cell = 0; cell < 100; ++cell) {
      CHECK(vl[((0 + i) * 2 + 1) * 100 + cell] == 0.0);
      CHECK(vl[((4 + i) * 2 + 0) * 100 + cell] == 0.0);
    }
}

TEST_CASE("solving without training is rejected") {
  PnpModel model;
  CorrespondenceSet corr;
  corr.P = Mat::Zero(2, 10);
  corr.S = Mat::Zero(3, 10);
  CHECK_THROWS_AS(solve_pnp(model, corr), config_error);
}

TEST_CASE("end-to-end pose recovery at reduced scale") {
  PnpTrainConfig tc;
  tc.n_train = 600;
  tc.K = 25;
  tc.seed = 0;
  auto [model, report] = train_pnp(tc);
  REQUIRE(model.sum.T() >= 1);
  for (std::size_t t = 1; t < report.rmse.size(); ++t)
    CHECK(report.rmse[t] <= report.rmse[t - 1] + 1e-12);

  PnpGenConfig gc;
  gc.j_lo = gc.j_hi = 400;
  gc.outlier_lo = gc.outlier_hi = 0.3;
  int hit = 0;
  for (int i = 0; i < 5; ++i) {
    Rng rng = Rng::stream(4242, (1ull << 63) | static_cast<std::uint64_t>(i));
    const PnpInstance inst = gen_pnp_instance(gc, rng);
    const PnpSolution sol = solve_pnp(model, inst.corr);
    hit += rotation_error(inst.R, sol.R) < 5.0;
  }
  CHECK(hit >= 3);
}
