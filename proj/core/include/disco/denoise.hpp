#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "disco/common.hpp"
#include "disco/io.hpp"
#include "disco/rng.hpp"
#include "disco/sum.hpp"

namespace disco {

// Impulse-noise image denoising with a single scalar-output update sequence
// shared by every pixel. The per-pixel feature is a 200-entry histogram:
// 100 bins of m_i * e(x_i - u_i) (data fidelity, gated by the mask) followed
// by 100 bins of sum_{j in N(i)} e(x_i - x_j) over the 4-connected
// neighborhood, both discretizing [-2,2].

enum class NoiseType { sp, rv };          // salt-pepper {0,1} / random-value [0,1]
enum class NoiseMix { sp, rv, sprv };     // training mixture

struct NoisyImage {
  Mat u;  // H x W intensities in [0,1]
  Mat m;  // H x W mask in {0,1}; 0 marks pixels ignored by the fidelity term
  NoiseType type = NoiseType::sp;
  double rate = 0.0;
  Eigen::Index rows() const { return u.rows(); }
  Eigen::Index cols() const { return u.cols(); }
};

// Feature of pixel (r, c) given the current estimates `state`; x_i is passed
// separately so callers can probe hypothetical values. Out-of-bounds
// neighbors are dropped. The fidelity block sums to m_i and the neighbor
// block to |N(i)| exactly.
void denoise_feature(double x_i, Eigen::Index r, Eigen::Index c, const Mat& state,
                     const NoisyImage& img, SparseFeature& out);

// Replaces floor(rate * H * W) pixels chosen without replacement: SP writes 0
// or 1 equiprobably, RV writes uniform [0,1]. The SP mask zeroes every pixel
// whose final intensity is exactly 0 or 1 (however it got there); the RV mask
// is all ones.
NoisyImage gen_noisy(const Mat& image, NoiseType type, double rate, Rng& rng);

struct DenoiseTrainConfig {
  int n_patches = 1000;
  int K = 30;
  double lambda = 1e-2;
  NoiseMix mode = NoiseMix::sp;  // sprv draws the type per patch, 50/50
  int patch_lo = 40, patch_hi = 80;
  double rate_lo = 0.0, rate_hi = 0.8;
  std::uint64_t seed = 0;
};

// Every pixel of every noisy patch becomes a training instance (p = 1,
// f = 200). Neighbor estimates are refreshed synchronously after each map.
std::pair<UpdateMapSequence, TrainReport> train_denoiser(const std::vector<Mat>& corpus,
                                                         const DenoiseTrainConfig& cfg);

// Synchronous sweeps: each iteration evaluates every pixel update from the
// previous sweep's state, then applies them all at once; maps run 1..T and
// the last repeats until max_iter. Output clamped to [0,1] at the end only.
Mat denoise(const NoisyImage& img, const UpdateMapSequence& sum, int max_iter = 200);

// 10 * log10(1 / MSE); identical images give +infinity.
double psnr(const Mat& reference, const Mat& estimate);

// Piecewise-constant cells with a soft intensity drift; values in [0,1].
Mat make_texture(int h, int w, Rng& rng);
std::vector<Mat> make_corpus(int n, int h, int w, std::uint64_t seed);

struct DenoiseSweepConfig {
  NoiseType noise = NoiseType::sp;
  std::vector<double> rates;
  int trials = 10;  // held-out images per rate
  int height = 128, width = 128;
  int max_iter = 200;
  std::uint64_t seed = 0;
  DenoiseTrainConfig train;
};

// Trains once, then reports psnr_noisy / psnr_do per (rate, image).
ResultTable run_denoise_sweep(const std::vector<Mat>& corpus, const DenoiseSweepConfig& cfg);

}  // namespace disco
