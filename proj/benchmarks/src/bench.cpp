#include <benchmark/benchmark.h>

#include <disco/denoise.hpp>
#include <disco/penalty1d.hpp>
#include <disco/pnp.hpp>
#include <disco/registration.hpp>
#include <disco/rng.hpp>
#include <disco/sum.hpp>

namespace {

using namespace disco;

void BM_Feature1d(benchmark::State& state) {
  Table1Config cfg;
  const Instance1D inst = gen_instance_1d(1, cfg, 0);
  const GridSpec grid = penalty_grid();
  SparseFeature h;
  double x = 0.37;
  for (auto _ : state) {
    feature_1d(x, inst.X, grid, h);
    benchmark::DoNotOptimize(h.nz.data());
  }
  state.SetItemsProcessed(state.iterations() * inst.X.size());
}
BENCHMARK(BM_Feature1d);

void BM_RegFeature(benchmark::State& state) {
  const int dim = static_cast<int>(state.range(0));
  const Mat model = make_synthetic_model(dim);
  const RegistrationModel reg = make_registration_model(model, dim == 3 ? 0.03 : 0.5);
  PerturbConfig pc = dim == 3 ? PerturbConfig::train3d() : PerturbConfig::train2d();
  Rng rng = Rng::stream(11, 0);
  auto [scene, x_star] = gen_perturbed_scene(model, pc, rng);
  const Vec x = Vec::Zero(dim == 3 ? 6 : 3);
  SparseFeature h;
  for (auto _ : state) {
    reg_feature(x, scene, reg, h);
    benchmark::DoNotOptimize(h.nz.data());
  }
  state.SetItemsProcessed(state.iterations() * scene.cols() * model.cols());
}
BENCHMARK(BM_RegFeature)->Arg(2)->Arg(3);

void BM_PnpFeature(benchmark::State& state) {
  PnpGenConfig gc;
  gc.j_lo = gc.j_hi = static_cast<int>(state.range(0));
  gc.outlier_lo = gc.outlier_hi = 0.3;
  Rng rng = Rng::stream(12, 0);
  const PnpInstance inst = gen_pnp_instance(gc, rng);
  const NormalizedPnp norm = normalize_inputs(inst.corr);
  Vec x(12);
  x.setZero();
  x[0] = x[5] = x[10] = 1.0 / std::sqrt(3.0);
  SparseFeature h;
  for (auto _ : state) {
    pnp_feature(x, norm.Q, norm.S, false, h);
    benchmark::DoNotOptimize(h.nz.data());
  }
  state.SetItemsProcessed(state.iterations() * gc.j_lo);
}
BENCHMARK(BM_PnpFeature)->Arg(100)->Arg(400);

void BM_DenoiseSweepOnce(benchmark::State& state) {
  const int side = static_cast<int>(state.range(0));
  Rng rng = Rng::stream(13, 0);
  const Mat clean = make_texture(side, side, rng);
  const NoisyImage img = gen_noisy(clean, NoiseType::sp, 0.3, rng);
  SparseFeature h;
  for (auto _ : state) {
    for (Eigen::Index c = 0; c < img.cols(); ++c)
      for (Eigen::Index r = 0; r < img.rows(); ++r) {
        denoise_feature(img.u(r, c), r, c, img.u, img, h);
        benchmark::DoNotOptimize(h.nz.data());
      }
  }
  state.SetItemsProcessed(state.iterations() * side * side);
}
BENCHMARK(BM_DenoiseSweepOnce)->Arg(64)->Arg(128);

void BM_RidgeSolve(benchmark::State& state) {
  const int f = static_cast<int>(state.range(0));
  const int n = 4 * f;
  Rng rng = Rng::stream(14, 0);
  std::vector<Vec> residuals(n), features(n);
  for (int i = 0; i < n; ++i) {
    residuals[i] = Vec::NullaryExpr(1, [&](Eigen::Index) { return rng.uniform(-1, 1); });
    features[i] = Vec::NullaryExpr(f, [&](Eigen::Index) { return rng.uniform(0, 1); });
  }
  for (auto _ : state) {
    Mat D = ridge_solve(residuals, features, 1e-4);
    benchmark::DoNotOptimize(D.data());
  }
}
BENCHMARK(BM_RidgeSolve)->Arg(40)->Arg(400);

void BM_Infer1d(benchmark::State& state) {
  Table1Config cfg;
  cfg.n_train = 500;
  cfg.n_test = 1;
  cfg.betas = {1};
  const Table1Result res = run_table1(cfg);
  const Instance1D inst = gen_instance_1d(1, cfg, (9ull << 33));
  const GridSpec grid = penalty_grid();
  const FeatureFn fn = [&](VecRef x, SparseFeature& h) { feature_1d(x[0], inst.X, grid, h); };
  InferenceSettings is;
  const Vec x0 = Vec::Zero(1);
  for (auto _ : state) {
    InferResult r = infer(x0, fn, res.sums[0], is);
    benchmark::DoNotOptimize(r.x.data());
  }
}
BENCHMARK(BM_Infer1d);

}  // namespace

BENCHMARK_MAIN();
