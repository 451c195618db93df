#include "disco/penalty1d.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "disco/parallel.hpp"
#include "disco/rng.hpp"

namespace disco {
namespace {

constexpr int kGridPoints = 20001;  // [-1, 1] at step 1e-4

double sgn(double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }

// sum_j phi_beta(c - X_j)
double penalty_sum(int beta, double c, const Vec& X) {
  double s = 0.0;
  for (Eigen::Index j = 0; j < X.size(); ++j) s += eval_penalty(beta, c - X[j]);
  return s;
}

// acc += phi_beta(y - shift) over the whole grid, vectorized.
void add_penalty_grid(int beta, double shift, const Eigen::ArrayXd& y, Eigen::ArrayXd& acc) {
  switch (beta) {
    case 4:
      acc += (0.7 * (y - shift).abs().log()).exp();  // |t|^0.7; exp(-inf) = 0 at t = 0
      break;
    case 5:
      acc += 1.0 - (-2.0 * (y - shift).square()).exp();
      break;
    case 6:
      acc += 1.0 - (-8.0 * (y - shift).square()).exp();
      break;
    default:
      for (int i = 0; i < kGridPoints; ++i) acc[i] += eval_penalty(beta, y[i] - shift);
  }
}

struct Penalty1DModel final : ResidualModel {
  const Vec* X = nullptr;
  explicit Penalty1DModel(const Vec& data) : X(&data) {
    J = static_cast<int>(data.size());
    d = 1;
    p = 1;
  }
  void eval(int j, VecRef x, Vec& g) const override { g[0] = x[0] - (*X)[j]; }
  void jacobian(int /*j*/, VecRef /*x*/, Mat& jac) const override { jac(0, 0) = 1.0; }
};

}  // namespace

double eval_penalty(int beta, double x) {
  switch (beta) {
    case 1:
      return std::abs(x);
    case 2:
      return 0.35 * std::pow(std::abs(x), 4.32) + 0.15 * std::pow(std::abs(x), 1.23);
    case 3:
      return (3.0 + sgn(x)) * x * x / 4.0;
    case 4:
      return std::pow(std::abs(x), 0.7);
    case 5:
      return 1.0 - std::exp(-2.0 * x * x);
    case 6:
      return 1.0 - std::exp(-8.0 * x * x);
    default:
      throw config_error("penalty index must be 1..6");
  }
}

double penalty_deriv(int beta, double x) {
  const double s = sgn(x);
  switch (beta) {
    case 1:
      return s;
    case 2:
      return s * (0.35 * 4.32 * std::pow(std::abs(x), 3.32) +
                  0.15 * 1.23 * std::pow(std::abs(x), 0.23));
    case 3:
      return (3.0 + s) * x / 2.0;
    case 4:
      return s * 0.7 * std::pow(std::abs(x), -0.3);
    case 5:
      return 4.0 * x * std::exp(-2.0 * x * x);
    case 6:
      return 16.0 * x * std::exp(-8.0 * x * x);
    default:
      throw config_error("penalty index must be 1..6");
  }
}

double oracle_minimize(int beta, const Vec& X) {
  if (X.size() == 0) throw config_error("oracle_minimize: empty data set");
  if (beta >= 1 && beta <= 3) {
    double lo = -1.0, hi = 1.0;
    while (hi - lo > 1e-7) {
      const double m1 = lo + (hi - lo) / 3.0;
      const double m2 = hi - (hi - lo) / 3.0;
      if (penalty_sum(beta, m1, X) < penalty_sum(beta, m2, X))
        hi = m2;
      else
        lo = m1;
    }
    return 0.5 * (lo + hi);
  }
  if (beta < 1 || beta > 6) throw config_error("penalty index must be 1..6");

  static const Eigen::ArrayXd grid = Eigen::ArrayXd::LinSpaced(kGridPoints, -1.0, 1.0);
  thread_local Eigen::ArrayXd acc;
  acc.setZero(kGridPoints);
  for (Eigen::Index j = 0; j < X.size(); ++j) add_penalty_grid(beta, X[j], grid, acc);
  Eigen::Index best = 0;
  acc.minCoeff(&best);  // first argmin on ties
  return grid[best];
}

void feature_1d(double x_hat, const Vec& X, const GridSpec& grid, SparseFeature& out) {
  Vec x(1);
  x[0] = x_hat;
  Penalty1DModel model(X);
  build_feature(x, model, grid, out);
}

GridSpec penalty_grid() { return GridSpec::uniform(1, 40, -2.0, 2.0); }

Instance1D gen_instance_1d(int beta, const Table1Config& cfg, std::uint64_t stream) {
  if (cfg.j_lo < 1 || cfg.j_hi < cfg.j_lo) throw config_error("bad J range");
  if (!(cfg.amp_lo > 0) || cfg.amp_hi < cfg.amp_lo || cfg.amp_hi > 1.0)
    throw config_error("amplitude range must satisfy 0 < lo <= hi <= 1");
  Rng rng = Rng::stream(cfg.seed, stream);
  const int J = rng.uniform_int(cfg.j_lo, cfg.j_hi);
  const double a = rng.uniform(cfg.amp_lo, cfg.amp_hi);
  Instance1D inst;
  inst.X.resize(J);
  for (int j = 0; j < J; ++j) inst.X[j] = rng.uniform(-a, a);
  inst.x_hat0 = 0.0;
  inst.x_hat_star = oracle_minimize(beta, inst.X);
  return inst;
}

Table1Result run_table1(const Table1Config& cfg) {
  if (cfg.n_train < 1 || cfg.n_test < 1) throw config_error("need at least one instance");
  const GridSpec grid = penalty_grid();

  for (int beta : cfg.betas)
    if (beta < 1 || beta > 6) throw config_error("penalty index must lie in 1..6");

  Table1Result result;
  result.mae = Mat::Constant(6, 7, std::numeric_limits<double>::quiet_NaN());
  result.sums.resize(6);
  result.curves.resize(6);

  for (int beta = 1; beta <= 6; ++beta) {
    if (std::find(cfg.betas.begin(), cfg.betas.end(), beta) == cfg.betas.end()) continue;
    // Stream ids: high bits tag (penalty, train/test), low bits the index.
    const std::uint64_t train_tag = (static_cast<std::uint64_t>(beta) << 33);
    const std::uint64_t test_tag = train_tag | (1ull << 32);

    std::vector<Instance1D> train(static_cast<std::size_t>(cfg.n_train));
    parallel_chunks(cfg.n_train, 64, [&](std::int64_t b, std::int64_t e, int) {
      for (std::int64_t i = b; i < e; ++i)
        train[static_cast<std::size_t>(i)] =
            gen_instance_1d(beta, cfg, train_tag + static_cast<std::uint64_t>(i));
    });

    std::vector<TrainingInstance> set;
    set.reserve(train.size());
    for (const Instance1D& inst : train) {
      TrainingInstance ti;
      ti.x0 = Vec::Constant(1, inst.x_hat0);
      ti.x_star = Vec::Constant(1, inst.x_hat_star);
      ti.feature = [Xp = &inst.X, grid](VecRef x, SparseFeature& out) {
        feature_1d(x[0], *Xp, grid, out);
      };
      set.push_back(std::move(ti));
    }

    TrainOptions opt;
    opt.T = cfg.T;
    opt.lambda = cfg.lambda;
    opt.early_stop_rmse_delta = cfg.early_stop;
    auto [sum, report] = train_sum(set, opt);

    std::vector<Instance1D> test(static_cast<std::size_t>(cfg.n_test));
    parallel_chunks(cfg.n_test, 64, [&](std::int64_t b, std::int64_t e, int) {
      for (std::int64_t i = b; i < e; ++i)
        test[static_cast<std::size_t>(i)] =
            gen_instance_1d(beta, cfg, test_tag + static_cast<std::uint64_t>(i));
    });

    InferenceSettings settings;
    settings.max_iter = cfg.max_iter;
    settings.epsilon = cfg.epsilon;

    Vec abs_err = parallel_reduce_ordered<Vec>(
        cfg.n_test, 64, Vec::Zero(7),
        [&](std::int64_t b, std::int64_t e, Vec& acc) {
          Vec x0 = Vec::Zero(1);
          for (std::int64_t i = b; i < e; ++i) {
            const Instance1D& inst = test[static_cast<std::size_t>(i)];
            for (int omega = 1; omega <= 6; ++omega)
              acc[omega - 1] += std::abs(oracle_minimize(omega, inst.X) - inst.x_hat_star);
            FeatureFn fn = [&inst, grid](VecRef x, SparseFeature& out) {
              feature_1d(x[0], inst.X, grid, out);
            };
            const InferResult res = infer(x0, fn, sum, settings);
            acc[6] += std::abs(res.x[0] - inst.x_hat_star);
          }
        },
        [](Vec& total, Vec&& part) { total += part; });

    result.mae.row(beta - 1) = (abs_err / static_cast<double>(cfg.n_test)).transpose();
    result.curves[static_cast<std::size_t>(beta - 1)] = sum.training_rmse;
    result.sums[static_cast<std::size_t>(beta - 1)] = std::move(sum);
  }
  return result;
}

}  // namespace disco
