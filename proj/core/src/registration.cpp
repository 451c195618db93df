#include "disco/registration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include <Eigen/Dense>

#include "disco/parallel.hpp"

namespace disco {
namespace {

// Pair weights with log-weight below this are dropped; the skipped mass is
// orders of magnitude below the 1e-12 agreement tolerance of the feature.
constexpr double kExpCutoff = -60.0;

Vec unit_vector(Rng& rng, int d) {
  Vec v(d);
  while (true) {
    for (int k = 0; k < d; ++k) v[k] = rng.normal(0.0, 1.0);
    const double n = v.norm();
    if (n > 1e-9) return v / n;
  }
}

Mat rotation_within(Rng& rng, int d, double angle_lo_deg, double angle_hi_deg) {
  const double angle = rng.uniform(angle_lo_deg, angle_hi_deg) * M_PI / 180.0;
  if (d == 2) {
    const double sign = rng.uniform(0.0, 1.0) < 0.5 ? -1.0 : 1.0;
    Vec x = Vec::Zero(3);
    x[0] = sign * angle;
    return lie_exp(x).R;
  }
  const Vec axis = unit_vector(rng, 3);
  Vec x = Vec::Zero(6);
  x.head(3) = axis * angle;
  return lie_exp(x).R;
}

// Largest bounding-box side length.
double max_side(const Mat& pts) {
  return (pts.rowwise().maxCoeff() - pts.rowwise().minCoeff()).maxCoeff();
}

// Kabsch: rigid (R, t) minimizing sum ||R src_i + t - dst_i||^2.
RigidTransform procrustes(const Mat& src, const Mat& dst) {
  const Vec sbar = src.rowwise().mean();
  const Vec dbar = dst.rowwise().mean();
  const Mat H = (src.colwise() - sbar) * (dst.colwise() - dbar).transpose();
  Eigen::JacobiSVD<Mat> svd(H, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Mat R = svd.matrixV() * svd.matrixU().transpose();
  if (R.determinant() < 0) {
    Mat V = svd.matrixV();
    V.col(V.cols() - 1) *= -1.0;
    R = V * svd.matrixU().transpose();
  }
  return {R, dbar - R * sbar};
}

// --- synthetic shapes -------------------------------------------------------
// 3D: an ellipsoid shell open at the bottom, a tilted tube, and an offset
// ball; asymmetric by construction. 2D: a closed blobby contour.

struct Surface3 {
  // ellipsoid patch
  const double ea = 1.0, eb = 0.75, ec = 0.6;
  const double th_lo = 0.15 * M_PI, th_hi = 0.75 * M_PI;
  // tube
  const Eigen::Vector3d base{0.5, 0.3, 0.35};
  const Eigen::Vector3d axis = Eigen::Vector3d(0.45, 0.3, 0.85).normalized();
  const double tube_r = 0.22, tube_len = 0.9;
  Eigen::Vector3d u, v;
  // ball
  const Eigen::Vector3d center{0.9, 0.15, 0.2};
  const double ball_r = 0.4;

  Surface3() {
    u = axis.cross(Eigen::Vector3d::UnitX()).normalized();
    v = axis.cross(u);
  }
  Eigen::Vector3d ellipsoid(double th, double ph) const {
    return {ea * std::sin(th) * std::cos(ph), eb * std::sin(th) * std::sin(ph),
            ec * std::cos(th)};
  }
  Eigen::Vector3d tube(double s, double ang) const {
    return base + s * axis + tube_r * (std::cos(ang) * u + std::sin(ang) * v);
  }
  Eigen::Vector3d ball(double th, double ph) const {
    return center + ball_r * Eigen::Vector3d(std::sin(th) * std::cos(ph),
                                             std::sin(th) * std::sin(ph), std::cos(th));
  }
};

Mat raw_model_3d() {
  const Surface3 s;
  Mat pts(3, 472);
  int idx = 0;
  for (int i = 0; i < 18; ++i) {
    const double th = s.th_lo + (s.th_hi - s.th_lo) * i / 17.0;
    for (int j = 0; j < 16; ++j) pts.col(idx++) = s.ellipsoid(th, 2.0 * M_PI * j / 16.0);
  }
  for (int i = 0; i < 10; ++i) {
    const double t = s.tube_len * i / 9.0;
    for (int j = 0; j < 8; ++j) pts.col(idx++) = s.tube(t, 2.0 * M_PI * j / 8.0);
  }
  for (int i = 0; i < 8; ++i) {
    const double th = M_PI * (i + 0.5) / 8.0;
    for (int j = 0; j < 13; ++j) pts.col(idx++) = s.ball(th, 2.0 * M_PI * j / 13.0);
  }
  return pts;
}

double contour_radius(double th) {
  return 1.0 + 0.3 * std::sin(3.0 * th) + 0.15 * std::cos(5.0 * th);
}

Mat raw_contour_2d(int n) {
  Mat pts(2, n);
  for (int k = 0; k < n; ++k) {
    const double th = 2.0 * M_PI * k / n;
    pts.col(k) = contour_radius(th) * Eigen::Vector2d(std::cos(th), std::sin(th));
  }
  return pts;
}

void model_frame(int dim, Vec& center, double& scale) {
  const Mat raw = dim == 3 ? raw_model_3d() : raw_contour_2d(200);
  center = raw.rowwise().mean();
  scale = 2.0 / max_side(raw);
}

}  // namespace

Mat normalize_cloud(const Mat& points) {
  if (points.cols() < 1) throw config_error("normalize_cloud: empty cloud");
  const Vec center = points.rowwise().mean();
  const double side = max_side(points);
  if (!(side > 0)) throw config_error("normalize_cloud: degenerate cloud");
  return (points.colwise() - center) * (2.0 / side);
}

Mat make_synthetic_model(int dim) {
  if (dim != 2 && dim != 3) throw config_error("dim must be 2 or 3");
  Vec center;
  double scale = 1.0;
  model_frame(dim, center, scale);
  const Mat raw = dim == 3 ? raw_model_3d() : raw_contour_2d(200);
  return (raw.colwise() - center) * scale;
}

Mat make_synthetic_dense(int dim, int n) {
  if (dim != 2 && dim != 3) throw config_error("dim must be 2 or 3");
  if (n < 1) throw config_error("dense cloud needs at least one point");
  Vec center;
  double scale = 1.0;
  model_frame(dim, center, scale);

  Mat raw(dim, n);
  if (dim == 2) {
    raw = raw_contour_2d(n);
  } else {
    const Surface3 s;
    Rng rng = Rng::stream(0xD15C0DE5u, static_cast<std::uint64_t>(n));
    for (int i = 0; i < n; ++i) {
      const double pick = rng.uniform(0.0, 472.0);
      if (pick < 288.0)
        raw.col(i) = s.ellipsoid(rng.uniform(s.th_lo, s.th_hi), rng.uniform(0.0, 2.0 * M_PI));
      else if (pick < 368.0)
        raw.col(i) = s.tube(rng.uniform(0.0, s.tube_len), rng.uniform(0.0, 2.0 * M_PI));
      else
        raw.col(i) = s.ball(rng.uniform(0.0, M_PI), rng.uniform(0.0, 2.0 * M_PI));
    }
  }
  return (raw.colwise() - center) * scale;
}

Mat compute_normals(const Mat& points, int k) {
  const int d = static_cast<int>(points.rows());
  const auto n = points.cols();
  if (d != 2 && d != 3) throw config_error("compute_normals: points must be 2D or 3D");
  if (k < d) throw config_error("compute_normals: k must be at least the dimension");
  if (n < 2) throw config_error("compute_normals: need at least two points");
  const Vec centroid = points.rowwise().mean();
  const int keff = static_cast<int>(std::min<Eigen::Index>(k, n - 1));

  Mat normals(d, n);
  parallel_chunks(n, 64, [&](std::int64_t b, std::int64_t e, int) {
    std::vector<std::pair<double, Eigen::Index>> dist(static_cast<std::size_t>(n));
    for (std::int64_t i = b; i < e; ++i) {
      for (Eigen::Index j = 0; j < n; ++j)
        dist[static_cast<std::size_t>(j)] = {(points.col(j) - points.col(i)).squaredNorm(), j};
      dist[static_cast<std::size_t>(i)].first = std::numeric_limits<double>::infinity();
      std::nth_element(dist.begin(), dist.begin() + keff - 1, dist.end());

      Vec mu = Vec::Zero(d);
      for (int a = 0; a < keff; ++a) mu += points.col(dist[static_cast<std::size_t>(a)].second);
      mu /= keff;
      Mat cov = Mat::Zero(d, d);
      for (int a = 0; a < keff; ++a) {
        const Vec q = points.col(dist[static_cast<std::size_t>(a)].second) - mu;
        cov.selfadjointView<Eigen::Lower>().rankUpdate(q, 1.0 / keff);
      }

      Eigen::SelfAdjointEigenSolver<Mat> eig(cov);  // reads the lower triangle
      const Vec evals = eig.eigenvalues();  // ascending
      Vec normal;
      // The smallest eigenvalue must be uniquely smallest, otherwise no
      // single surface direction exists (e.g. collinear points in 3D).
      if (evals[d - 1] <= 0 || evals[1] <= 1e-12 * evals[d - 1]) {
        normal = points.col(i) - centroid;
        const double len = normal.norm();
        normal = len > 1e-12 ? Vec(normal / len) : Vec(Vec::Unit(d, 0));
      } else {
        normal = eig.eigenvectors().col(0);
        if (normal.dot(points.col(i) - centroid) < 0) normal = -normal;
      }
      normals.col(i) = normal;
    }
  });
  return normals;
}

RegistrationModel make_registration_model(const Mat& model, double sigma2, int knn) {
  if (model.rows() != 2 && model.rows() != 3)
    throw config_error("model cloud must be 2D or 3D");
  if (model.cols() < model.rows() + 1)
    throw config_error("model cloud needs at least dim+1 points");
  if (!(sigma2 > 0)) throw config_error("sigma2 must be positive");
  if (!model.allFinite()) throw config_error("model cloud has non-finite points");
  RegistrationModel m;
  m.dim = static_cast<int>(model.rows());
  m.model = model;
  m.normals = compute_normals(model, knn);
  m.sigma2 = sigma2;
  return m;
}

void reg_feature(VecRef x, const Mat& scene, const RegistrationModel& model,
                 SparseFeature& out) {
  const auto nm = model.model.cols();
  out.reset(2 * nm);
  const RigidTransform g = lie_exp(x);
  const double inv_s2 = 1.0 / model.sigma2;

  thread_local Vec acc;
  acc.setZero(2 * nm);
  Vec y(model.dim), dy(model.dim);
  for (Eigen::Index b = 0; b < scene.cols(); ++b) {
    y.noalias() = g.R * scene.col(b) + g.t;
    for (Eigen::Index a = 0; a < nm; ++a) {
      dy = y - model.model.col(a);
      const double arg = -dy.squaredNorm() * inv_s2;
      if (arg < kExpCutoff) continue;
      const Eigen::Index slot = model.normals.col(a).dot(dy) > 0 ? a : a + nm;
      acc[slot] += std::exp(arg);
    }
  }
  const double z = acc.sum();
  if (z <= 0.0) return;
  const double inv_z = 1.0 / z;
  for (Eigen::Index s = 0; s < 2 * nm; ++s)
    if (acc[s] != 0.0) out.nz.emplace_back(s, acc[s] * inv_z);
}

PerturbConfig PerturbConfig::train3d() { return PerturbConfig{}; }

PerturbConfig PerturbConfig::test3d() {
  PerturbConfig c;
  c.sample_lo = 200;
  c.sample_hi = 600;
  c.angle_hi_deg = 60.0;
  c.noise_sigma = 0.0;
  c.outlier_hi = 0;
  c.cluster_hi = 0;
  c.removal_lo = c.removal_hi = 0.0;
  return c;
}

PerturbConfig PerturbConfig::train2d() {
  PerturbConfig c;
  c.dim = 2;
  c.resample = false;
  c.trans_range = 0.4;
  c.noise_sigma = 0.03;
  c.outlier_hi = -1;  // up to the model size
  c.outlier_box = 1.5;
  c.cluster_hi = 0;
  c.removal_lo = 0.0;
  c.removal_hi = 0.6;
  c.removal_mode = PerturbConfig::RemovalMode::near_point;
  return c;
}

PerturbConfig PerturbConfig::test2d() {
  PerturbConfig c = train2d();
  c.angle_hi_deg = 60.0;
  c.noise_sigma = 0.0;
  c.outlier_hi = 0;
  c.removal_hi = 0.0;
  return c;
}

std::pair<Mat, Vec> gen_perturbed_scene(const Mat& source, const PerturbConfig& cfg,
                                        Rng& rng) {
  const int d = static_cast<int>(source.rows());
  if (d != cfg.dim) throw config_error("source dimension disagrees with config");
  const auto ns = source.cols();
  if (ns < 1) throw config_error("empty source cloud");

  // Draw order is fixed: sample, rotation, translation, noise, removal,
  // sparse outliers, cluster. Steps consume randomness only when active.
  Mat pts;
  if (cfg.resample) {
    if (cfg.sample_lo < 1 || cfg.sample_hi < cfg.sample_lo)
      throw config_error("bad sample count range");
    const int e = rng.uniform_int(cfg.sample_lo, cfg.sample_hi);
    pts.resize(d, e);
    for (int i = 0; i < e; ++i)
      pts.col(i) = source.col(rng.uniform_int(0, static_cast<int>(ns) - 1));
  } else {
    pts = source;
  }
  const auto e = pts.cols();

  const Mat R = rotation_within(rng, d, cfg.angle_lo_deg, cfg.angle_hi_deg);
  Vec t(d);
  for (int k = 0; k < d; ++k) t[k] = rng.uniform(-cfg.trans_range, cfg.trans_range);
  pts = (R * pts).colwise() + t;

  if (cfg.noise_sigma > 0)
    for (Eigen::Index i = 0; i < e; ++i)
      for (int k = 0; k < d; ++k) pts(k, i) += rng.normal(0.0, cfg.noise_sigma);

  if (cfg.removal_hi > 0) {
    const double q = rng.uniform(cfg.removal_lo, cfg.removal_hi);
    const auto m = static_cast<Eigen::Index>(std::floor(q * static_cast<double>(e) + 1e-9));
    if (m > 0) {
      // Score each point; drop the m highest scores (ties broken by index so
      // results do not depend on the sort implementation).
      Vec score(e);
      if (cfg.removal_mode == PerturbConfig::RemovalMode::directional) {
        const Vec dir = unit_vector(rng, d);
        score = pts.transpose() * dir;
      } else {
        const int anchor = rng.uniform_int(0, static_cast<int>(e) - 1);
        const Vec a = pts.col(anchor);
        for (Eigen::Index i = 0; i < e; ++i) score[i] = -(pts.col(i) - a).squaredNorm();
      }
      std::vector<Eigen::Index> order(static_cast<std::size_t>(e));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](Eigen::Index a, Eigen::Index b) {
        return score[a] != score[b] ? score[a] < score[b] : a < b;
      });
      Mat kept(d, e - m);
      // Keep the low-score points in their original relative order.
      std::sort(order.begin(), order.end() - m);
      for (Eigen::Index i = 0; i  < e - m; ++i)
        kept.col(i) = pts.col(order[static_cast<std::size_t>(i)]);
      pts = std::move(kept);
    }
  }

  const int out_hi = cfg.outlier_hi < 0 ? static_cast<int>(ns) : cfg.outlier_hi;
  int n_out = 0;
  if (out_hi > 0 || cfg.outlier_lo > 0) {
    if (cfg.outlier_lo > out_hi) throw config_error("bad outlier count range");
    n_out = rng.uniform_int(cfg.outlier_lo, out_hi);
  }
  Mat outliers(d, n_out);
  for (int i = 0; i < n_out; ++i)
    for (int k = 0; k < d; ++k) outliers(k, i) = rng.uniform(-cfg.outlier_box, cfg.outlier_box);

  int n_cluster = 0;
  Mat cluster(d, 0);
  if (cfg.cluster_hi > 0) {
    n_cluster = rng.uniform_int(cfg.cluster_lo, cfg.cluster_hi);
    if (n_cluster > 0) {
      Vec center(d);
      for (int k = 0; k < d; ++k) center[k] = rng.uniform(-cfg.outlier_box, cfg.outlier_box);
      const double cs = rng.uniform(cfg.cluster_sigma_lo, cfg.cluster_sigma_hi);
      cluster.resize(d, n_cluster);
      for (int i = 0; i < n_cluster; ++i)
        for (int k = 0; k < d; ++k) cluster(k, i) = center[k] + rng.normal(0.0, cs);
    }
  }

  Mat scene(d, pts.cols() + n_out + n_cluster);
  scene.leftCols(pts.cols()) = pts;
  if (n_out > 0) scene.middleCols(pts.cols(), n_out) = outliers;
  if (n_cluster > 0) scene.rightCols(n_cluster) = cluster;

  const RigidTransform inv{R.transpose(), -(R.transpose() * t)};
  return {std::move(scene), lie_log(inv)};
}

RegTrainConfig RegTrainConfig::defaults3d() { return RegTrainConfig{}; }

RegTrainConfig RegTrainConfig::defaults2d() {
  RegTrainConfig c;
  c.dim = 2;
  c.n_train = 10000;
  c.lambda = 2e-2;
  c.sigma2 = 0.5;
  c.normalize_features = true;
  c.perturb = PerturbConfig::train2d();
  return c;
}

std::pair<RegistrationModel, TrainReport> train_registration(const Mat& model,
                                                             const RegTrainConfig& cfg) {
  if (cfg.dim != static_cast<int>(model.rows()))
    throw config_error("model dimension disagrees with config");
  if (cfg.perturb.dim != cfg.dim) throw config_error("perturbation dimension mismatch");
  if (cfg.n_train < 1) throw config_error("need at least one training instance");

  RegistrationModel reg = make_registration_model(model, cfg.sigma2, cfg.knn);
  const int p = cfg.dim == 3 ? 6 : 3;

  std::vector<Mat> scenes(static_cast<std::size_t>(cfg.n_train));
  std::vector<Vec> stars(static_cast<std::size_t>(cfg.n_train));
  parallel_chunks(cfg.n_train, 16, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t i = b; i < e; ++i) {
      Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(i));
      auto [scene, star] = gen_perturbed_scene(model, cfg.perturb, rng);
      scenes[static_cast<std::size_t>(i)] = std::move(scene);
      stars[static_cast<std::size_t>(i)] = std::move(star);
    }
  });

  std::vector<TrainingInstance> set;
  set.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    TrainingInstance ti;
    ti.x0 = Vec::Zero(p);
    ti.x_star = stars[i];
    ti.feature = [scene = &scenes[i], reg_ptr = &reg](VecRef x, SparseFeature& out) {
      reg_feature(x, *scene, *reg_ptr, out);
    };
    set.push_back(std::move(ti));
  }

  TrainOptions opt;
  opt.T = cfg.K;
  opt.lambda = cfg.lambda;
  opt.normalize_features = cfg.normalize_features;
  opt.chunk = 64;
  auto [sum, report] = train_sum(set, opt);
  reg.sum = std::move(sum);
  return {std::move(reg), std::move(report)};
}

InferResult register_cloud(const RegistrationModel& model, const Mat& scene, const Vec& x0,
                           int max_iter, double epsilon) {
  if (scene.rows() != model.dim) throw config_error("scene dimension disagrees with model");
  if (model.sum.T() == 0) throw config_error("registration model is untrained");
  FeatureFn fn = [&](VecRef x, SparseFeature& out) { reg_feature(x, scene, model, out); };
  InferenceSettings s;
  s.max_iter = max_iter;
  s.epsilon = epsilon;
  return infer(x0, fn, model.sum, s);
}

SuccessMetric success_metric(const Mat& model, const Vec& x_est, const Vec& x_star) {
  const RigidTransform ge = lie_exp(x_est);
  const RigidTransform gs = lie_exp(x_star);
  const Mat diff = ge.apply(model) - gs.apply(model);
  SuccessMetric out;
  out.mean_error = diff.colwise().norm().mean();
  out.success = out.mean_error < 0.05 * max_side(model);
  return out;
}

Vec icp_baseline(const Mat& model, const Mat& scene, const Vec& x0, int max_iter) {
  if (model.rows() != scene.rows()) throw config_error("icp: dimension mismatch");
  if (scene.cols() < 1 || model.cols() < 1) throw config_error("icp: empty cloud");
  RigidTransform g = lie_exp(x0);
  Mat matched(model.rows(), scene.cols());
  for (int it = 0; it < max_iter; ++it) {
    const Mat moved = g.apply(scene);
    for (Eigen::Index i = 0; i < moved.cols(); ++i) {
      Eigen::Index best = 0;
      (model.colwise() - moved.col(i)).colwise().squaredNorm().minCoeff(&best);
      matched.col(i) = model.col(best);
    }
    const RigidTransform next = procrustes(scene, matched);
    const double delta = (next.R - g.R).norm() + (next.t - g.t).norm();
    g = next;
    if (delta < 1e-12) break;
  }
  return lie_log(g);
}

ResultTable run_reg_sweep(const RegSweepConfig& cfg) {
  const Mat model = make_synthetic_model(cfg.dim);
  const RegistrationModel reg = train_registration(model, cfg.train).first;
  const Mat source = cfg.dim == 3 ? make_synthetic_dense(3, 20000) : model;
  const PerturbConfig base =
      cfg.dim == 3 ? PerturbConfig::test3d() : PerturbConfig::test2d();

  ResultTable table;
  const Vec x0 = Vec::Zero(cfg.dim == 3 ? 6 : 3);
  for (std::size_t vi = 0; vi < cfg.values.size(); ++vi) {
    const double value = cfg.values[vi];
    PerturbConfig pc = base;
    if (cfg.axis == "outliers") {
      pc.outlier_lo = pc.outlier_hi = static_cast<int>(std::lround(value));
    } else if (cfg.axis == "outlier_ratio") {
      pc.outlier_lo = pc.outlier_hi =
          static_cast<int>(std::lround(value * static_cast<double>(model.cols())));
    } else if (cfg.axis == "incomplete") {
      pc.removal_lo = pc.removal_hi = value;
    } else if (cfg.axis == "angle") {
      pc.angle_lo_deg = pc.angle_hi_deg = value;
    } else if (cfg.axis == "noise") {
      pc.noise_sigma = value;
    } else if (cfg.axis == "npoints") {
      pc.sample_lo = pc.sample_hi = static_cast<int>(std::lround(value));
    } else {
      throw config_error("unknown sweep axis: " + cfg.axis);
    }

    struct Trial {
      double do_err, icp_err, do_iters;
      bool do_ok, icp_ok;
    };
    std::vector<Trial> trials(static_cast<std::size_t>(cfg.trials));
    parallel_chunks(cfg.trials, 1, [&](std::int64_t b, std::int64_t e, int) {
      for (std::int64_t ti = b; ti < e; ++ti) {
        // High bit keeps test streams disjoint from training instance ids.
        Rng rng = Rng::stream(cfg.seed, (1ull << 63) |
                                            (static_cast<std::uint64_t>(vi) << 32) |
                                            static_cast<std::uint64_t>(ti));
        auto [scene, x_star] = gen_perturbed_scene(source, pc, rng);
        const InferResult res =
            register_cloud(reg, scene, x0, cfg.max_iter, cfg.epsilon);
        const Vec x_icp = icp_baseline(model, scene, x0, cfg.icp_max_iter);
        const SuccessMetric sd = success_metric(model, res.x, x_star);
        const SuccessMetric si = success_metric(model, x_icp, x_star);
        trials[static_cast<std::size_t>(ti)] = {sd.mean_error, si.mean_error,
                                                static_cast<double>(res.iterations_used),
                                                sd.success, si.success};
      }
    });

    for (int ti = 0; ti < cfg.trials; ++ti) {
      const Trial& tr = trials[static_cast<std::size_t>(ti)];
      table.add(value, ti, "do_success", tr.do_ok ? 1.0 : 0.0);
      table.add(value, ti, "icp_success", tr.icp_ok ? 1.0 : 0.0);
      table.add(value, ti, "do_error", tr.do_err);
      table.add(value, ti, "icp_error", tr.icp_err);
      table.add(value, ti, "do_iters", tr.do_iters);
    }
  }
  return table;
}

}  // namespace disco
