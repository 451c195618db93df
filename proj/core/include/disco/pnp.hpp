#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "disco/common.hpp"
#include "disco/feature_grid.hpp"
#include "disco/io.hpp"
#include "disco/rng.hpp"
#include "disco/sum.hpp"

namespace disco {

// Camera-pose estimation from 2D-3D matches with unknown outliers. The pose
// is a 3x4 matrix X (rows x1, x2, x3) treated as a free 12-vector
// x = [x1; x2; x3] during optimization; rigidity is restored afterwards.

struct CorrespondenceSet {
  Mat P;  // 2 x J image points (pixels)
  Mat S;  // 3 x J world points
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
  Eigen::Index size() const { return P.cols(); }
};

// Residual g = p - (x1.s~ / x3.s~, x2.s~ / x3.s~) with s~ = [s; 1], plus the
// 12 distinct Jacobian values: a = -s~/(x3.s~) shared by dg1/dx1 and dg2/dx2,
// b = s~ (x1.s~)/(x3.s~)^2 = dg1/dx3, c likewise for g2. Depths below 1e-9
// in magnitude mark the residual invalid.
struct PnpResidual {
  Eigen::Vector2d g;
  Eigen::Vector4d a, b, c;
  bool valid = false;
};
PnpResidual geometric_residual(VecRef x, const Eigen::Vector2d& p, const Eigen::Vector3d& s);

// Histogram feature over the 10x10 residual grid on [-1,1]^2. Compact layout
// (1200 = 12 Jacobian values x 100 cells) by default; `literal` selects the
// full 24-block expansion (2400) that keeps the zero and duplicated blocks.
// Invalid residuals contribute nothing; the result is scaled to unit l2 norm
// (a zero vector stays zero).
void pnp_feature(VecRef x, const Mat& Q, const Mat& S, bool literal, SparseFeature& out);

struct PnpNormalization {
  Eigen::Matrix3d T2 = Eigen::Matrix3d::Identity();  // calibrated 2D -> [-0.5,0.5]
  Eigen::Matrix4d T3 = Eigen::Matrix4d::Identity();  // world 3D -> [-0.5,0.5]
  Eigen::Matrix3d K = Eigen::Matrix3d::Identity();
};

struct NormalizedPnp {
  Mat Q;  // 2 x J
  Mat S;  // 3 x J
  PnpNormalization record;
};

// Applies K^-1 to the pixels, then tight isotropic midrange fits of both
// point sets into [-0.5,0.5] boxes (idempotent: already-fitted data gets the
// identity record). The ground-truth pose maps as X -> T2 [R|t] T3^-1.
NormalizedPnp normalize_inputs(const CorrespondenceSet& corr);

// Unit Frobenius norm with the sign making the mean depth of `world` positive.
Mat normalize_pose(const Mat& X, const Mat& world);

// Nearest rotation to the left 3x3 block (SVD with determinant correction);
// t = fourth column / mean singular value.
std::pair<Eigen::Matrix3d, Eigen::Vector3d> project_to_pose(const Mat& X);

// Indices whose reprojection through K [R|t] lands within threshold_px of
// the recorded pixel (invalid depths count as infinitely far).
std::vector<int> select_inliers(const Eigen::Matrix3d& R, const Eigen::Vector3d& t,
                                const CorrespondenceSet& corr, double threshold_px);

// Minimal direct linear transform on calibrated correspondences; returns the
// 3x4 matrix of the smallest singular direction, sign-fixed to positive mean
// depth. Needs at least 6 points.
Mat dlt_pose(const Mat& Q_calibrated, const Mat& S);

// Angle of R_true^T R_est in degrees.
double rotation_error(const Eigen::Matrix3d& R_true, const Eigen::Matrix3d& R_est);

struct PnpGenConfig {
  int j_lo = 100, j_hi = 500;
  double outlier_lo = 0.0, outlier_hi = 0.8;  // fraction of points replaced
  double noise_sigma = 0.0;                   // pixel noise (inliers keep it too)
  double f_lo = 600.0, f_hi = 1000.0;
  int width = 640, height = 480;
  // Camera distance from the scene center. The upper end leaves room for a
  // long lens (f ~ 1000) to frame the whole [-1,1]^3 box.
  double dist_lo = 4.0, dist_hi = 12.0;
};

struct PnpInstance {
  CorrespondenceSet corr;
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
  std::vector<char> outlier_mask;  // 1 where the pixel was replaced
};

// 3D points in a box, on a sphere surface, or on 2-4 planes; rotated and
// scaled into [-1,1]^3; camera placed to see every point (up to 1000 pose
// attempts), then noise and uniform in-frame outlier replacement.
PnpInstance gen_pnp_instance(const PnpGenConfig& cfg, Rng& rng);

struct PnpTrainConfig {
  int n_train = 5000;  // 50000 reproduces the reference scale
  int K = 30;
  double lambda = 1e-4;
  bool literal_feature = false;
  std::uint64_t seed = 0;
  PnpGenConfig gen;  // training default: no pixel noise
};

struct PnpModel {
  UpdateMapSequence sum;
  bool literal_feature = false;
};

std::pair<PnpModel, TrainReport> train_pnp(const PnpTrainConfig& cfg);

struct PnpSolution {
  Eigen::Matrix3d R;
  Eigen::Vector3d t;
  Mat X_norm;  // 3x4 estimate in the normalized frame
  std::vector<int> inliers;
  int iterations = 0;
};

// Runs the update sequence from X0 = [I|0]/sqrt(3), maps the estimate back
// to calibrated coordinates, selects inliers, and re-fits them with the DLT
// when enough survive.
PnpSolution solve_pnp(const PnpModel& model, const CorrespondenceSet& corr,
                      int max_iter = 100, double epsilon = 1e-6,
                      double inlier_threshold_px = 10.0);

struct PnpSweepConfig {
  std::string axis = "outliers";  // outliers | noise | npoints
  std::vector<double> values;
  int trials = 100;
  std::uint64_t seed = 0;
  PnpTrainConfig train;
};

// Trains once, then reports rot_err_deg / trans_err / iterations / n_inliers
// per trial across the sweep axis.
ResultTable run_pnp_sweep(const PnpSweepConfig& cfg);

}  // namespace disco
