#pragma once

#include <cstdint>
#include <functional>
#include <utility>
#include <vector>

#include "disco/common.hpp"
#include "disco/feature_grid.hpp"

namespace disco {

// A trained Sequence of Update Maps: x <- x - D_t h(x) for t = 1..T, with the
// last map repeated to a stationary point at inference time.
struct UpdateMapSequence {
  int p = 0;
  int f = 0;
  std::vector<Mat> maps;              // T matrices, each p x f
  double lambda = 0.0;
  std::vector<double> training_rmse;  // T+1: before training, then after each map
  int T() const { return static_cast<int>(maps.size()); }
};

using FeatureFn = std::function<void(VecRef x, SparseFeature& h)>;

struct TrainingInstance {
  Vec x0;
  Vec x_star;
  FeatureFn feature;
};

struct InferenceSettings {
  int max_iter = 100;
  double epsilon = 1e-3;  // stop repeating the last map once ||D_T h|| < epsilon
};

// Column-stored training set. Feature evaluation may be called concurrently
// for different instances; implementations must be pure given the state
// snapshot published by the last after_map() call.
struct InstanceSet {
  virtual std::int64_t size() const = 0;
  virtual int p() const = 0;
  virtual void get_x0(std::int64_t i, Vec& out) const = 0;
  virtual void get_x_star(std::int64_t i, Vec& out) const = 0;
  virtual void feature(std::int64_t i, VecRef x, SparseFeature& out) const = 0;
  // Invoked after every map update with the full p x N estimate matrix; lets
  // tasks whose features read other instances' estimates (denoising
  // neighborhoods) refresh their shared snapshot between maps.
  virtual void after_map(int /*t*/, const Mat& /*states*/) const {}
  virtual ~InstanceSet() = default;
};

struct TrainOptions {
  int T = 1;
  double lambda = 0.0;
  // > 0: stop adding maps once a map improves training RMSE by less than
  // this; that final sub-threshold map is retained (it is the one trained on
  // near-converged states, which makes repeating the last map safe at
  // inference). At least one map is always kept.
  double early_stop_rmse_delta = 0.0;
  // Scale every feature element into [0,1] by its per-map maximum before the
  // ridge solve; the scale is folded into the stored map so inference uses
  // raw features.
  bool normalize_features = false;
  std::int64_t chunk = 512;  // lower bound on the deterministic chunk size
  bool verbose = false;
};

struct TrainReport {
  std::vector<double> rmse;  // same as UpdateMapSequence::training_rmse
  std::vector<double> map_seconds;
};

// Unique minimizer of (1/N) sum_i ||r_i - D h_i||^2 + lambda ||D||_F^2 via
// the normal equations D (H + lambda I) = C, H = (1/N) sum h h^T,
// C = (1/N) sum r h^T, solved with a symmetric factorization. lambda = 0 gets
// a 1e-12 jitter so the solve stays defined.
Mat ridge_solve(const std::vector<Vec>& residuals, const std::vector<Vec>& features,
                double lambda);

std::pair<UpdateMapSequence, TrainReport> train_sum(const InstanceSet& set,
                                                    const TrainOptions& opt);
std::pair<UpdateMapSequence, TrainReport> train_sum(
    const std::vector<TrainingInstance>& instances, const TrainOptions& opt);

struct InferResult {
  Vec x;
  int iterations_used = 0;
  double final_update_norm = 0.0;
};

// Apply maps 1..T once, then repeat map T while ||D_T h(x)|| >= eps and the
// iteration count stays below max_iter.
InferResult infer(const Vec& x0, const FeatureFn& feature, const UpdateMapSequence& sum,
                  const InferenceSettings& settings);

// (1/N) sum ||x_star - x||^2
double training_error(const std::vector<TrainingInstance>& instances,
                      const std::vector<Vec>& estimates);

// Fraction of samples x with (x - x_star)^T (map h(x)) >= 0; diagnostic only.
double monotonicity_probe(const Mat& map, const TrainingInstance& instance,
                          const std::vector<Vec>& samples);

}  // namespace disco
