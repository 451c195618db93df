#include "disco/sum.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <utility>
#include <vector>

#include <Eigen/Cholesky>

#include "disco/parallel.hpp"

namespace disco {
namespace {

constexpr double kZeroLambdaJitter = 1e-12;
// Feature vectors with at most this many nonzeros update H pairwise; denser
// ones are scattered and folded in with a rank-1 update.
constexpr std::int64_t kSparsePairwiseMax = 48;
// Cap on per-chunk accumulator memory across all chunks.
constexpr std::int64_t kAccumulatorBudgetBytes = 256ll << 20;

struct NormalEq {
  Mat H;  // f x f, lower triangle filled
  Mat C;  // p x f

  void init(int p, std::int64_t f) {
    H = Mat::Zero(f, f);
    C = Mat::Zero(p, f);
  }
};

void add_outer(NormalEq& acc, const Vec& r, const SparseFeature& h, Vec& scatter) {
  const std::int64_t nnz = static_cast<std::int64_t>(h.nz.size());
  if (nnz <= kSparsePairwiseMax) {
    for (std::size_t a = 0; a < h.nz.size(); ++a) {
      const auto [ia, va] = h.nz[a];
      for (std::size_t b = a; b < h.nz.size(); ++b) {
        const auto [ib, vb] = h.nz[b];
        acc.H(ib, ia) += va * vb;  // nz is index-sorted, so ib >= ia
      }
    }
  } else {
    scatter.setZero(h.dim);
    for (const auto& [i, v] : h.nz) scatter[i] = v;
    acc.H.selfadjointView<Eigen::Lower>().rankUpdate(scatter, 1.0);
  }
  for (const auto& [i, v] : h.nz) acc.C.col(i).noalias() += v * r;
}

// Chunk size that keeps num_chunks * sizeof(NormalEq payload) under budget
// while honoring the configured lower bound. Depends only on the problem
// shape, so results are identical for every DISCO_THREADS setting.
std::int64_t budgeted_chunk(std::int64_t n, std::int64_t min_chunk, int p, std::int64_t f) {
  const std::int64_t part_bytes = 8 * (f * f + p * f) + 64;
  std::int64_t k_max = kAccumulatorBudgetBytes / part_bytes;
  k_max = std::clamp<std::int64_t>(k_max, 1, 64);
  const std::int64_t by_budget = (n + k_max - 1) / k_max;
  return std::max<std::int64_t>(std::max<std::int64_t>(min_chunk, 1), by_budget);
}

double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

class VectorInstanceSet final : public InstanceSet {
 public:
  explicit VectorInstanceSet(const std::vector<TrainingInstance>& v) : v_(v) {
    if (v_.empty()) throw config_error("training set is empty");
    p_ = static_cast<int>(v_[0].x0.size());
    for (const auto& inst : v_) {
      if (inst.x0.size() != p_ || inst.x_star.size() != p_)
        throw config_error("training instances disagree on parameter dimension");
      if (!inst.feature) throw config_error("training instance lacks a feature function");
    }
  }
  std::int64_t size() const override { return static_cast<std::int64_t>(v_.size()); }
  int p() const override { return p_; }
  void get_x0(std::int64_t i, Vec& out) const override { out = v_[i].x0; }
  void get_x_star(std::int64_t i, Vec& out) const override { out = v_[i].x_star; }
  void feature(std::int64_t i, VecRef x, SparseFeature& out) const override {
    v_[i].feature(x, out);
  }

 private:
  const std::vector<TrainingInstance>& v_;
  int p_ = 0;
};

}  // namespace

Mat ridge_solve(const std::vector<Vec>& residuals, const std::vector<Vec>& features,
                double lambda) {
  if (residuals.size() != features.size())
    throw config_error("ridge_solve: residual/feature count mismatch");
  const std::int64_t n = static_cast<std::int64_t>(residuals.size());
  if (n == 0) throw config_error("ridge_solve: empty sample set");
  const int p = static_cast<int>(residuals[0].size());
  const std::int64_t f = features[0].size();
  Mat H = Mat::Zero(f, f);
  Mat C = Mat::Zero(p, f);
  for (std::int64_t i = 0; i < n; ++i) {
    if (residuals[i].size() != p || features[i].size() != f)
      throw config_error("ridge_solve: sample dimensions disagree");
    H.selfadjointView<Eigen::Lower>().rankUpdate(features[i], 1.0);
    C.noalias() += residuals[i] * features[i].transpose();
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  Mat A = H.selfadjointView<Eigen::Lower>();
  A *= inv_n;
  C *= inv_n;
  A.diagonal().array() += (lambda == 0.0) ? kZeroLambdaJitter : lambda;
  Eigen::LDLT<Mat> ldlt(A);
  if (ldlt.info() != Eigen::Success)
    throw numerical_error("ridge_solve: normal-equation factorization failed");
  Mat D = ldlt.solve(C.transpose()).transpose();
  if (!D.allFinite()) throw numerical_error("ridge_solve: non-finite map");
  return D;
}

std::pair<UpdateMapSequence, TrainReport> train_sum(const InstanceSet& set,
                                                    const TrainOptions& opt) {
  const std::int64_t n = set.size();
  if (n <= 0) throw config_error("training set is empty");
  if (opt.T <= 0) throw config_error("map count must be positive");
  if (opt.lambda < 0) throw config_error("ridge weight must be non-negative");
  const int p = set.p();
  if (p <= 0) throw config_error("parameter dimension must be positive");

  Mat states(p, n);
  Mat targets(p, n);
  {
    Vec tmp(p);
    for (std::int64_t i = 0; i < n; ++i) {
      set.get_x0(i, tmp);
      if (tmp.size() != p) throw config_error("x0 dimension mismatch");
      states.col(i) = tmp;
      set.get_x_star(i, tmp);
      if (tmp.size() != p) throw config_error("x_star dimension mismatch");
      targets.col(i) = tmp;
    }
  }

  std::int64_t f = 0;
  {
    SparseFeature probe;
    set.feature(0, states.col(0), probe);
    f = probe.dim;
  }
  if (f <= 0) throw config_error("feature dimension must be positive");

  const double inv_n = 1.0 / static_cast<double>(n);
  const std::int64_t chunk = budgeted_chunk(n, opt.chunk, p, f);

  UpdateMapSequence sum;
  sum.p = p;
  sum.f = static_cast<int>(f);
  sum.lambda = opt.lambda;
  TrainReport report;

  double rmse = std::sqrt((states - targets).squaredNorm() * inv_n);
  sum.training_rmse.push_back(rmse);
  if (!std::isfinite(rmse)) throw numerical_error("non-finite initial training error");

  for (int t = 0; t < opt.T; ++t) {
    const auto t0 = std::chrono::steady_clock::now();

    // Optional per-element feature scaling, folded into the stored map below.
    Vec scale;
    if (opt.normalize_features) {
      Vec maxima = parallel_reduce_ordered<Vec>(
          n, chunk, Vec::Zero(f),
          [&](std::int64_t b, std::int64_t e, Vec& acc) {
            thread_local SparseFeature h;
            for (std::int64_t i = b; i < e; ++i) {
              set.feature(i, states.col(i), h);
              if (h.dim != f) throw config_error("feature dimension drift");
              for (const auto& [idx, v] : h.nz) acc[idx] = std::max(acc[idx], std::abs(v));
            }
          },
          [](Vec& total, Vec&& part) { total = total.cwiseMax(part); });
      scale = Vec::Ones(f);
      for (std::int64_t e = 0; e < f; ++e)
        if (maxima[e] > 0.0) scale[e] = 1.0 / maxima[e];
    }

    NormalEq zero;
    zero.init(p, f);
    NormalEq eq = parallel_reduce_ordered<NormalEq>(
        n, chunk, zero,
        [&](std::int64_t b, std::int64_t e, NormalEq& acc) {
          thread_local SparseFeature h;
          thread_local Vec scatter;
          Vec r(p);
          for (std::int64_t i = b; i < e; ++i) {
            set.feature(i, states.col(i), h);
            if (h.dim != f) throw config_error("feature dimension drift");
            if (scale.size() > 0)
              for (auto& [idx, v] : h.nz) v *= scale[idx];
            r = states.col(i) - targets.col(i);
            add_outer(acc, r, h, scatter);
          }
        },
        [](NormalEq& total, NormalEq&& part) {
          total.H += part.H;
          total.C += part.C;
        });

    Mat A = eq.H.selfadjointView<Eigen::Lower>();
    A *= inv_n;
    eq.C *= inv_n;
    A.diagonal().array() += (opt.lambda == 0.0) ? kZeroLambdaJitter : opt.lambda;
    Eigen::LDLT<Mat> ldlt(A);
    if (ldlt.info() != Eigen::Success)
      throw numerical_error("normal-equation factorization failed");
    Mat D = ldlt.solve(eq.C.transpose()).transpose();
    if (scale.size() > 0) D *= scale.asDiagonal();
    if (!D.allFinite()) throw numerical_error("non-finite update map");

    const double sq_err = parallel_reduce_ordered<double>(
        n, chunk, 0.0,
        [&](std::int64_t b, std::int64_t e, double& acc) {
          thread_local SparseFeature h;
          thread_local Vec u;
          for (std::int64_t i = b; i < e; ++i) {
            set.feature(i, states.col(i), h);
            h.apply_map(D, u);
            states.col(i) -= u;
            acc += (states.col(i) - targets.col(i)).squaredNorm();
          }
        },
        [](double& total, double&& part) { total += part; });

    rmse = std::sqrt(sq_err * inv_n);
    if (!std::isfinite(rmse)) throw numerical_error("training diverged to non-finite states");

    sum.maps.push_back(std::move(D));
    sum.training_rmse.push_back(rmse);
    report.map_seconds.push_back(elapsed_s(t0));
    set.after_map(t + 1, states);

    if (opt.verbose)
      std::fprintf(stderr, "map %d/%d rmse %.6g (%.2fs)\n", t + 1, opt.T, rmse,
                   report.map_seconds.back());

    // The just-trained map is always kept; training only stops extending the
    // sequence once a map stops paying for itself. Keeping that final map
    // matters: it was fit on near-converged states, so repeating it at
    // inference time holds the estimate in place instead of drifting.
    const auto& hist = sum.training_rmse;
    if (opt.early_stop_rmse_delta > 0.0 && t + 1 < opt.T &&
        hist[hist.size() - 2] - hist.back() < opt.early_stop_rmse_delta)
      break;
  }

  report.rmse = sum.training_rmse;
  return {std::move(sum), std::move(report)};
}

std::pair<UpdateMapSequence, TrainReport> train_sum(
    const std::vector<TrainingInstance>& instances, const TrainOptions& opt) {
  VectorInstanceSet set(instances);
  return train_sum(set, opt);
}

InferResult infer(const Vec& x0, const FeatureFn& feature, const UpdateMapSequence& sum,
                  const InferenceSettings& settings) {
  if (sum.p > 0 && x0.size() != sum.p) throw config_error("infer: x0 dimension mismatch");
  InferResult res;
  res.x = x0;
  if (sum.T() == 0) return res;

  SparseFeature h;
  Vec u;
  for (const Mat& D : sum.maps) {
    feature(res.x, h);
    h.apply_map(D, u);
    res.x -= u;
    ++res.iterations_used;
    res.final_update_norm = u.norm();
  }
  const Mat& last = sum.maps.back();
  while (res.iterations_used < settings.max_iter) {
    feature(res.x, h);
    h.apply_map(last, u);
    res.final_update_norm = u.norm();
    // A NaN update also ends the loop rather than polluting the estimate.
    if (!(res.final_update_norm >= settings.epsilon)) break;
    res.x -= u;
    ++res.iterations_used;
  }
  return res;
}

double training_error(const std::vector<TrainingInstance>& instances,
                      const std::vector<Vec>& estimates) {
  if (instances.size() != estimates.size())
    throw config_error("training_error: estimate count mismatch");
  if (instances.empty()) throw config_error("training_error: empty set");
  double sq = 0.0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    if (estimates[i].size() != instances[i].x_star.size())
      throw config_error("training_error: estimate dimension mismatch");
    sq += (estimates[i] - instances[i].x_star).squaredNorm();
  }
  return sq / static_cast<double>(instances.size());
}

double monotonicity_probe(const Mat& map, const TrainingInstance& instance,
                          const std::vector<Vec>& samples) {
  if (samples.empty()) throw config_error("monotonicity_probe: no samples");
  SparseFeature h;
  Vec u;
  std::int64_t good = 0;
  for (const Vec& x : samples) {
    instance.feature(x, h);
    h.apply_map(map, u);
    if ((x - instance.x_star).dot(u) >= 0.0) ++good;
  }
  return static_cast<double>(good) / static_cast<double>(samples.size());
}

}  // namespace disco
