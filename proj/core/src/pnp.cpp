#include "disco/pnp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "disco/feature_grid.hpp"
#include "disco/parallel.hpp"

namespace disco {
namespace {

constexpr double kMinDepth = 1e-9;
const GridSpec kResidualGrid = GridSpec::uniform(2, 10, -1.0, 1.0);

Eigen::Vector4d homog(const Eigen::Vector3d& s) { return {s.x(), s.y(), s.z(), 1.0}; }

Vec pose_to_vec(const Mat& X) {
  Vec x(12);
  for (int r = 0; r < 3; ++r) x.segment(4 * r, 4) = X.row(r).transpose();
  return x;
}

Mat vec_to_pose(VecRef x) {
  Mat X(3, 4);
  for (int r = 0; r < 3; ++r) X.row(r) = x.segment(4 * r, 4).transpose();
  return X;
}

Vec initial_pose_vec() {
  Mat X = Mat::Zero(3, 4);
  X(0, 0) = X(1, 1) = X(2, 2) = 1.0;
  return pose_to_vec(X / X.norm());
}

Eigen::Vector3d unit3(Rng& rng) {
  while (true) {
    Eigen::Vector3d v(rng.normal(0.0, 1.0), rng.normal(0.0, 1.0), rng.normal(0.0, 1.0));
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

// Tight isotropic midrange fit of `pts` into [-half, half]^d; returns
// (scale, center) with x' = (x - center) * scale.
std::pair<double, Vec> tight_fit(const Mat& pts, double half) {
  const Vec lo = pts.rowwise().minCoeff();
  const Vec hi = pts.rowwise().maxCoeff();
  const double extent = (hi - lo).maxCoeff();
  if (!(extent > 0)) throw config_error("degenerate (coincident) point set");
  return {2.0 * half / extent, 0.5 * (lo + hi)};
}

double mean_depth(const Mat& X, const Mat& world) {
  double s = 0;
  for (Eigen::Index j = 0; j < world.cols(); ++j)
    s += X.row(2).head(3).dot(world.col(j)) + X(2, 3);
  return s / static_cast<double>(world.cols());
}

Mat calibrated_points(const CorrespondenceSet& corr) {
  const Eigen::Matrix3d kinv = corr.K.inverse();
  Mat Q(2, corr.size());
  for (Eigen::Index j = 0; j < corr.size(); ++j) {
    const Eigen::Vector3d q = kinv * Eigen::Vector3d(corr.P(0, j), corr.P(1, j), 1.0);
    Q(0, j) = q.x() / q.z();
    Q(1, j) = q.y() / q.z();
  }
  return Q;
}

}  // namespace

PnpResidual geometric_residual(VecRef x, const Eigen::Vector2d& p, const Eigen::Vector3d& s) {
  if (x.size() != 12) throw config_error("pose vector must have 12 entries");
  const Eigen::Vector4d st = homog(s);
  PnpResidual r;
  const double d1 = x.segment(0, 4).dot(st);
  const double d2 = x.segment(4, 4).dot(st);
  const double depth = x.segment(8, 4).dot(st);
  if (std::abs(depth) < kMinDepth) {
    r.valid = false;
    return r;
  }
  r.valid = true;
  r.g = Eigen::Vector2d(p.x() - d1 / depth, p.y() - d2 / depth);
  r.a = -st / depth;
  r.b = st * (d1 / (depth * depth));
  r.c = st * (d2 / (depth * depth));
  return r;
}

void pnp_feature(VecRef x, const Mat& Q, const Mat& S, bool literal, SparseFeature& out) {
  const std::int64_t dim = literal ? 2400 : 1200;
  out.reset(dim);
  thread_local Vec acc;
  acc.setZero(dim);

  const Eigen::Index J = Q.cols();
  for (Eigen::Index j = 0; j < J; ++j) {
    const PnpResidual r = geometric_residual(x, Q.col(j), S.col(j));
    if (!r.valid) continue;
    const int b1 = bin_index(r.g.x(), -1.0, 1.0, 10);
    const int b2 = bin_index(r.g.y(), -1.0, 1.0, 10);
    const std::int64_t cell = (b1 - 1) * 10 + (b2 - 1);
    if (!literal) {
      // 12 distinct values x 100 cells, value-major.
      for (int i = 0; i < 4; ++i) {
        acc[(0 + i) * 100 + cell] += r.a[i];
        acc[(4 + i) * 100 + cell] += r.b[i];
        acc[(8 + i) * 100 + cell] += r.c[i];
      }
    } else {
      // Full (l, k) expansion: slot (l*2 + k)*100 + cell, keeping the
      // duplicated a-block and skipping the structurally zero blocks.
      for (int i = 0; i < 4; ++i) {
        acc[((0 + i) * 2 + 0) * 100 + cell] += r.a[i];   // dg1/dx1
        acc[((4 + i) * 2 + 1) * 100 + cell] += r.a[i];   // dg2/dx2
        acc[((8 + i) * 2 + 0) * 100 + cell] += r.b[i];   // dg1/dx3
        acc[((8 + i) * 2 + 1) * 100 + cell] += r.c[i];   // dg2/dx3
      }
    }
  }

  double norm2 = 0;
  for (std::int64_t i = 0; i < dim; ++i) norm2 += acc[i] * acc[i];
  if (norm2 <= 0) return;
  const double inv = 1.0 / std::sqrt(norm2);
  for (std::int64_t i = 0; i < dim; ++i)
    if (acc[i] != 0.0) out.nz.emplace_back(i, acc[i] * inv);
}

NormalizedPnp normalize_inputs(const CorrespondenceSet& corr) {
  if (corr.size() < 6) throw config_error("need at least 6 correspondences");
  if (corr.S.cols() != corr.P.cols()) throw config_error("2D/3D point count mismatch");
  if (std::abs(corr.K.determinant()) < 1e-12) throw config_error("singular intrinsics");

  NormalizedPnp out;
  const Mat Qc = calibrated_points(corr);
  const auto [s2, c2] = tight_fit(Qc, 0.5);
  const auto [s3, c3] = tight_fit(corr.S, 0.5);

  out.Q = (Qc.colwise() - c2) * s2;
  out.S = (corr.S.colwise() - c3) * s3;
  out.record.K = corr.K;
  out.record.T2 = Eigen::Matrix3d::Identity();
  out.record.T2(0, 0) = out.record.T2(1, 1) = s2;
  out.record.T2.block<2, 1>(0, 2) = -s2 * c2;
  out.record.T3 = Eigen::Matrix4d::Identity();
  out.record.T3.block<3, 3>(0, 0) *= s3;
  out.record.T3.block<3, 1>(0, 3) = -s3 * c3;
  return out;
}

Mat normalize_pose(const Mat& X, const Mat& world) {
  if (X.rows() != 3 || X.cols() != 4) throw config_error("pose must be 3x4");
  const double n = X.norm();
  if (!(n > 0)) throw config_error("zero pose matrix");
  Mat out = X / n;
  if (mean_depth(out, world) < 0) out = -out;
  return out;
}

std::pair<Eigen::Matrix3d, Eigen::Vector3d> project_to_pose(const Mat& X) {
  if (X.rows() != 3 || X.cols() != 4) throw config_error("pose must be 3x4");
  const Eigen::Matrix3d B = X.leftCols(3);
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(B, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  if (!(sv(0) > 0) || sv(2) <= 1e-12 * sv(0))
    throw numerical_error("pose rotation block is singular");
  Eigen::Matrix3d U = svd.matrixU();
  if ((U * svd.matrixV().transpose()).determinant() < 0) U.col(2) *= -1.0;
  const Eigen::Matrix3d R = U * svd.matrixV().transpose();
  const double scale = sv.mean();
  return {R, Eigen::Vector3d(X.col(3)) / scale};
}

std::vector<int> select_inliers(const Eigen::Matrix3d& R, const Eigen::Vector3d& t,
                                const CorrespondenceSet& corr, double threshold_px) {
  std::vector<int> idx;
  for (Eigen::Index j = 0; j < corr.size(); ++j) {
    const Eigen::Vector3d cam = R * Eigen::Vector3d(corr.S.col(j)) + t;
    double err = std::numeric_limits<double>::infinity();
    if (std::abs(cam.z()) >= kMinDepth) {
      const Eigen::Vector3d ph = corr.K * cam;
      err = (Eigen::Vector2d(ph.x() / ph.z(), ph.y() / ph.z()) -
             Eigen::Vector2d(corr.P.col(j)))
                .norm();
    }
    if (err <= threshold_px) idx.push_back(static_cast<int>(j));
  }
  return idx;
}

Mat dlt_pose(const Mat& Q_calibrated, const Mat& S) {
  const Eigen::Index J = Q_calibrated.cols();
  if (J < 6 || S.cols() != J) throw config_error("DLT needs at least 6 matched points");
  Mat A(2 * J, 12);
  for (Eigen::Index j = 0; j < J; ++j) {
    const Eigen::Vector4d st = homog(S.col(j));
    A.row(2 * j).segment(0, 4) = st.transpose();
    A.row(2 * j).segment(4, 4).setZero();
    A.row(2 * j).segment(8, 4) = -Q_calibrated(0, j) * st.transpose();
    A.row(2 * j + 1).segment(0, 4).setZero();
    A.row(2 * j + 1).segment(4, 4) = st.transpose();
    A.row(2 * j + 1).segment(8, 4) = -Q_calibrated(1, j) * st.transpose();
  }
  const Mat AtA = A.transpose() * A;
  Eigen::SelfAdjointEigenSolver<Mat> eig(AtA);
  const Vec x = eig.eigenvectors().col(0);  // smallest eigenvalue first
  return normalize_pose(vec_to_pose(x), S);
}

double rotation_error(const Eigen::Matrix3d& R_true, const Eigen::Matrix3d& R_est) {
  const double c = ((R_true.transpose() * R_est).trace() - 1.0) / 2.0;
  return std::acos(std::min(1.0, std::max(-1.0, c))) * 180.0 / M_PI;
}

PnpInstance gen_pnp_instance(const PnpGenConfig& cfg, Rng& rng) {
  if (cfg.j_lo < 6 || cfg.j_hi < cfg.j_lo) throw config_error("bad correspondence range");
  if (cfg.outlier_lo < 0 || cfg.outlier_hi > 1 || cfg.outlier_lo > cfg.outlier_hi)
    throw config_error("outlier fraction must stay within [0,1]");

  const int J = rng.uniform_int(cfg.j_lo, cfg.j_hi);
  const int mode = rng.uniform_int(0, 2);
  Mat S(3, J);
  if (mode == 0) {
    for (int j = 0; j < J; ++j)
      S.col(j) = Eigen::Vector3d(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0),
                                 rng.uniform(-1.0, 1.0));
  } else if (mode == 1) {
    for (int j = 0; j < J; ++j) S.col(j) = unit3(rng);
  } else {
    const int planes = rng.uniform_int(2, 4);
    std::vector<Eigen::Vector3d> normal(planes), tu(planes), tv(planes);
    std::vector<double> offset(planes);
    for (int k = 0; k < planes; ++k) {
      normal[k] = unit3(rng);
      offset[k] = rng.uniform(-0.5, 0.5);
      const Eigen::Vector3d helper =
          std::abs(normal[k].z()) < 0.9 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitX();
      tu[k] = normal[k].cross(helper).normalized();
      tv[k] = normal[k].cross(tu[k]);
    }
    for (int j = 0; j < J; ++j) {
      const int k = rng.uniform_int(0, planes - 1);
      S.col(j) = offset[k] * normal[k] + rng.uniform(-1.0, 1.0) * tu[k] +
                 rng.uniform(-1.0, 1.0) * tv[k];
    }
  }

  {
    const Eigen::Vector3d axis = unit3(rng);
    const double ang = rng.uniform(0.0, M_PI);
    S = Eigen::AngleAxisd(ang, axis).toRotationMatrix() * S;
  }
  const auto [s3, c3] = tight_fit(S, 1.0);
  S = (S.colwise() - c3) * s3;

  PnpInstance inst;
  inst.corr.S = S;
  const double f = rng.uniform(cfg.f_lo, cfg.f_hi);
  inst.corr.K = Eigen::Matrix3d::Identity();
  inst.corr.K(0, 0) = inst.corr.K(1, 1) = f;
  inst.corr.K(0, 2) = cfg.width / 2.0;
  inst.corr.K(1, 2) = cfg.height / 2.0;

  Mat P(2, J);
  bool placed = false;
  for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
    const double dist = rng.uniform(cfg.dist_lo, cfg.dist_hi);
    const Eigen::Vector3d dir = unit3(rng);
    const double roll = rng.uniform(0.0, 2.0 * M_PI);

    const Eigen::Vector3d c = dist * dir;
    const Eigen::Vector3d zc = -dir;
    const Eigen::Vector3d up =
        std::abs(zc.z()) < 0.99 ? Eigen::Vector3d::UnitZ() : Eigen::Vector3d::UnitY();
    const Eigen::Vector3d xc = up.cross(zc).normalized();
    const Eigen::Vector3d yc = zc.cross(xc);
    Eigen::Matrix3d Rl;
    Rl.row(0) = xc.transpose();
    Rl.row(1) = yc.transpose();
    Rl.row(2) = zc.transpose();
    const Eigen::Matrix3d R =
        Eigen::AngleAxisd(roll, Eigen::Vector3d::UnitZ()).toRotationMatrix() * Rl;
    const Eigen::Vector3d t = -R * c;

    placed = true;
    for (int j = 0; j < J && placed; ++j) {
      const Eigen::Vector3d cam = R * Eigen::Vector3d(S.col(j)) + t;
      if (cam.z() <= 0) {
        placed = false;
        break;
      }
      const Eigen::Vector3d ph = inst.corr.K * cam;
      const double u = ph.x() / ph.z(), v = ph.y() / ph.z();
      if (u < 0 || u > cfg.width || v < 0 || v > cfg.height) {
        placed = false;
        break;
      }
      P(0, j) = u;
      P(1, j) = v;
    }
    if (placed) {
      inst.R = R;
      inst.t = t;
    }
  }
  if (!placed) throw numerical_error("could not place a camera seeing every point");

  if (cfg.noise_sigma > 0)
    for (int j = 0; j < J; ++j) {
      P(0, j) += rng.normal(0.0, cfg.noise_sigma);
      P(1, j) += rng.normal(0.0, cfg.noise_sigma);
    }

  inst.outlier_mask.assign(static_cast<std::size_t>(J), 0);
  const double frac = cfg.outlier_hi > 0 || cfg.outlier_lo > 0
                          ? rng.uniform(cfg.outlier_lo, cfg.outlier_hi)
                          : 0.0;
  const int n_out = static_cast<int>(std::lround(frac * J));
  if (n_out > 0) {
    std::vector<int> idx(static_cast<std::size_t>(J));
    std::iota(idx.begin(), idx.end(), 0);
    for (int i = 0; i < n_out; ++i)
      std::swap(idx[static_cast<std::size_t>(i)],
                idx[static_cast<std::size_t>(rng.uniform_int(i, J - 1))]);
    for (int i = 0; i < n_out; ++i) {
      const int j = idx[static_cast<std::size_t>(i)];
      P(0, j) = rng.uniform(0.0, static_cast<double>(cfg.width));
      P(1, j) = rng.uniform(0.0, static_cast<double>(cfg.height));
      inst.outlier_mask[static_cast<std::size_t>(j)] = 1;
    }
  }
  inst.corr.P = std::move(P);
  return inst;
}

std::pair<PnpModel, TrainReport> train_pnp(const PnpTrainConfig& cfg) {
  if (cfg.n_train < 1) throw config_error("need at least one training instance");

  std::vector<NormalizedPnp> data(static_cast<std::size_t>(cfg.n_train));
  std::vector<Vec> stars(static_cast<std::size_t>(cfg.n_train));
  parallel_chunks(cfg.n_train, 16, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t i = b; i < e; ++i) {
      Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(i));
      const PnpInstance inst = gen_pnp_instance(cfg.gen, rng);
      NormalizedPnp norm = normalize_inputs(inst.corr);

      Mat Xgt(3, 4);
      Xgt.leftCols(3) = inst.R;
      Xgt.col(3) = inst.t;
      const Mat Xn = norm.record.T2 * Xgt * norm.record.T3.inverse();
      stars[static_cast<std::size_t>(i)] = pose_to_vec(normalize_pose(Xn, norm.S));
      data[static_cast<std::size_t>(i)] = std::move(norm);
    }
  });

  std::vector<TrainingInstance> set;
  set.reserve(data.size());
  const Vec x0 = initial_pose_vec();
  for (std::size_t i = 0; i < data.size(); ++i) {
    TrainingInstance ti;
    ti.x0 = x0;
    ti.x_star = stars[i];
    ti.feature = [d = &data[i], literal = cfg.literal_feature](VecRef x, SparseFeature& out) {
      pnp_feature(x, d->Q, d->S, literal, out);
    };
    set.push_back(std::move(ti));
  }

  TrainOptions opt;
  opt.T = cfg.K;
  opt.lambda = cfg.lambda;
  opt.chunk = 64;
  auto [sum, report] = train_sum(set, opt);

  PnpModel model;
  model.sum = std::move(sum);
  model.literal_feature = cfg.literal_feature;
  return {std::move(model), std::move(report)};
}

PnpSolution solve_pnp(const PnpModel& model, const CorrespondenceSet& corr, int max_iter,
                      double epsilon, double inlier_threshold_px) {
  if (model.sum.T() == 0) throw config_error("pose model is untrained");
  const NormalizedPnp norm = normalize_inputs(corr);

  FeatureFn fn = [&](VecRef x, SparseFeature& out) {
    pnp_feature(x, norm.Q, norm.S, model.literal_feature, out);
  };
  InferenceSettings s;
  s.max_iter = max_iter;
  s.epsilon = epsilon;
  const InferResult res = infer(initial_pose_vec(), fn, model.sum, s);

  PnpSolution sol;
  sol.iterations = res.iterations_used;
  sol.X_norm = vec_to_pose(res.x);

  const Mat X_cal =
      normalize_pose(norm.record.T2.inverse() * sol.X_norm * norm.record.T3, corr.S);
  auto [R0, t0] = project_to_pose(X_cal);
  sol.inliers = select_inliers(R0, t0, corr, inlier_threshold_px);

  if (static_cast<Eigen::Index>(sol.inliers.size()) >= 6) {
    const Mat Qc = calibrated_points(corr);
    Mat Qin(2, sol.inliers.size()), Sin(3, sol.inliers.size());
    for (std::size_t i = 0; i < sol.inliers.size(); ++i) {
      Qin.col(static_cast<Eigen::Index>(i)) = Qc.col(sol.inliers[i]);
      Sin.col(static_cast<Eigen::Index>(i)) = corr.S.col(sol.inliers[i]);
    }
    auto [R, t] = project_to_pose(dlt_pose(Qin, Sin));
    sol.R = R;
    sol.t = t;
  } else {
    sol.R = R0;
    sol.t = t0;
  }
  return sol;
}

ResultTable run_pnp_sweep(const PnpSweepConfig& cfg) {
  const PnpModel model = train_pnp(cfg.train).first;

  ResultTable table;
  for (std::size_t vi = 0; vi < cfg.values.size(); ++vi) {
    const double value = cfg.values[vi];
    PnpGenConfig gen = cfg.train.gen;
    if (cfg.axis == "outliers") {
      gen.outlier_lo = gen.outlier_hi = value;
    } else if (cfg.axis == "noise") {
      gen.noise_sigma = value;
    } else if (cfg.axis == "npoints") {
      gen.j_lo = gen.j_hi = static_cast<int>(std::lround(value));
    } else {
      throw config_error("unknown sweep axis: " + cfg.axis);
    }

    struct Trial {
      double rot, trans, iters, inliers;
    };
    std::vector<Trial> trials(static_cast<std::size_t>(cfg.trials));
    parallel_chunks(cfg.trials, 1, [&](std::int64_t b, std::int64_t e, int) {
      for (std::int64_t ti = b; ti < e; ++ti) {
        Rng rng = Rng::stream(cfg.seed, (1ull << 63) | (static_cast<std::uint64_t>(vi) << 32) |
                                            static_cast<std::uint64_t>(ti));
        const PnpInstance inst = gen_pnp_instance(gen, rng);
        const PnpSolution sol = solve_pnp(model, inst.corr);
        trials[static_cast<std::size_t>(ti)] = {
            rotation_error(inst.R, sol.R), (sol.t - inst.t).norm(),
            static_cast<double>(sol.iterations), static_cast<double>(sol.inliers.size())};
      }
    });
    for (int ti = 0; ti < cfg.trials; ++ti) {
      const Trial& tr = trials[static_cast<std::size_t>(ti)];
      table.add(value, ti, "rot_err_deg", tr.rot);
      table.add(value, ti, "trans_err", tr.trans);
      table.add(value, ti, "iterations", tr.iters);
      table.add(value, ti, "n_inliers", tr.inliers);
    }
  }
  return table;
}

}  // namespace disco
