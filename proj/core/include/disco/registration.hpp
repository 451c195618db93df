#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "disco/common.hpp"
#include "disco/io.hpp"
#include "disco/lie.hpp"
#include "disco/rng.hpp"
#include "disco/sum.hpp"

namespace disco {

// Rigid registration with a learned update sequence. The estimate x lives in
// se(2) or se(3); the feature histograms scene mass onto the front/back sides
// of every model point.

// Per point: smallest eigenvector of the covariance of its k nearest
// neighbors, oriented away from the cloud centroid. Neighborhoods whose
// covariance does not single out a smallest direction (the two smallest
// eigenvalues tie, e.g. collinear points in 3D) fall back to the
// centroid-to-point direction.
Mat compute_normals(const Mat& points, int k);

struct RegistrationModel {
  int dim = 3;
  Mat model;    // d x N_M, normalized to [-1,1]
  Mat normals;  // d x N_M, unit columns
  double sigma2 = 0.03;
  UpdateMapSequence sum;
};

RegistrationModel make_registration_model(const Mat& model, double sigma2, int knn = 10);

// h in R^{2 N_M}: slot a accumulates exp(-||T(s_b;x) - m_a||^2 / sigma^2)
// over scene points strictly on the normal side of model point a, slot
// a + N_M over the rest (ties count as back). The result is scaled to sum to
// 1; with no mass it stays the zero vector.
void reg_feature(VecRef x, const Mat& scene, const RegistrationModel& model,
                 SparseFeature& out);

// Scene synthesis knobs. Magnitude-style fields are sampled uniformly from
// their [lo, hi] ranges per instance; a degenerate range pins the value.
struct PerturbConfig {
  int dim = 3;
  bool resample = true;  // sample scene points from the source with replacement
  int sample_lo = 400, sample_hi = 700;
  double angle_lo_deg = 0.0, angle_hi_deg = 85.0;
  double trans_range = 0.3;  // translation ~ U[-range, range]^d
  double noise_sigma = 0.05;
  int outlier_lo = 0, outlier_hi = 300;  // outlier_hi < 0 means "source size"
  double outlier_box = 1.0;              // sparse outliers ~ U[-box, box]^d
  int cluster_lo = 0, cluster_hi = 200;  // Gaussian-ball outliers
  double cluster_sigma_lo = 0.1, cluster_sigma_hi = 0.25;
  double removal_lo = 0.4, removal_hi = 0.8;
  enum class RemovalMode {
    directional,  // drop the top fraction along a random direction
    near_point    // drop the fraction closest to a random scene point
  } removal_mode = RemovalMode::directional;

  static PerturbConfig train3d();
  static PerturbConfig test3d();
  static PerturbConfig train2d();
  static PerturbConfig test2d();
};

// Samples a scene from `source`, applies a random rigid transform, noise,
// incompleteness, and outliers per config. x_star is the se(d) vector of the
// inverse transform (scene back onto source coordinates); x0 is always 0.
std::pair<Mat, Vec> gen_perturbed_scene(const Mat& source, const PerturbConfig& cfg,
                                        Rng& rng);

struct RegTrainConfig {
  int dim = 3;
  int n_train = 30000;
  int K = 30;
  double lambda = 3e-4;
  double sigma2 = 0.03;
  int knn = 10;
  bool normalize_features = false;  // per-element [0,1] scaling per map (2D)
  std::uint64_t seed = 0;
  PerturbConfig perturb = PerturbConfig::train3d();

  static RegTrainConfig defaults3d();
  static RegTrainConfig defaults2d();
};

std::pair<RegistrationModel, TrainReport> train_registration(const Mat& model,
                                                             const RegTrainConfig& cfg);

InferResult register_cloud(const RegistrationModel& model, const Mat& scene, const Vec& x0,
                           int max_iter = 1000, double epsilon = 1e-3);

struct SuccessMetric {
  double mean_error = 0.0;
  bool success = false;
};

// Mean l2 distance between model points under x_est and under x_star;
// success iff below 0.05 x (largest bounding-box side of the model).
SuccessMetric success_metric(const Mat& model, const Vec& x_est, const Vec& x_star);

// Point-to-point ICP: nearest-neighbor correspondences + orthogonal
// Procrustes updates until the transform stops moving or max_iter.
Vec icp_baseline(const Mat& model, const Mat& scene, const Vec& x0, int max_iter = 100);

// Zero-mean, largest bounding-box side scaled to length 2.
Mat normalize_cloud(const Mat& points);

// Deterministic test shapes in the normalized frame: a 472-point composite
// surface (3D) or a 200-point closed contour (2D). The dense variant samples
// the same surfaces (fixed internal seed) in the same frame, standing in for
// the original cloud that the sparse model would have been decimated from.
Mat make_synthetic_model(int dim);
Mat make_synthetic_dense(int dim, int n);

struct RegSweepConfig {
  int dim = 3;
  std::string axis = "outliers";  // outliers | incomplete | angle | noise | npoints
  std::vector<double> values;
  int trials = 50;
  int max_iter = 1000;
  double epsilon = 1e-3;
  int icp_max_iter = 100;
  std::uint64_t seed = 0;  // test-instance streams; training uses train.seed
  RegTrainConfig train = RegTrainConfig::defaults3d();
};

// Trains once on the synthetic model, then sweeps the chosen perturbation
// axis; emits do_success / icp_success / do_error / icp_error / do_iters
// rows per trial.
ResultTable run_reg_sweep(const RegSweepConfig& cfg);

}  // namespace disco
