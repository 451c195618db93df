#include "disco/denoise.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <vector>

#include "disco/feature_grid.hpp"
#include "disco/parallel.hpp"

namespace disco {
namespace {

constexpr double kLo = -2.0, kHi = 2.0;
constexpr int kBins = 100;

struct Patch {
  NoisyImage img;
  Mat clean;
  Mat x;  // current estimates, refreshed after every map
};

// Flattens all patch pixels into one instance list; pixel k of a patch is
// the column-major linear index into its matrices.
class PatchSet final : public InstanceSet {
 public:
  explicit PatchSet(std::vector<Patch> patches) : patches_(std::move(patches)) {
    offsets_.push_back(0);
    for (const Patch& p : patches_) offsets_.push_back(offsets_.back() + p.img.u.size());
  }

  std::int64_t size() const override { return offsets_.back(); }
  int p() const override { return 1; }

  void get_x0(std::int64_t i, Vec& out) const override {
    const auto [pi, k] = locate(i);
    out.resize(1);
    out[0] = patches_[pi].img.u.data()[k];
  }
  void get_x_star(std::int64_t i, Vec& out) const override {
    const auto [pi, k] = locate(i);
    out.resize(1);
    out[0] = patches_[pi].clean.data()[k];
  }
  void feature(std::int64_t i, VecRef x, SparseFeature& out) const override {
    const auto [pi, k] = locate(i);
    const Patch& p = patches_[pi];
    const Eigen::Index r = k % p.img.rows();
    const Eigen::Index c = k / p.img.rows();
    denoise_feature(x[0], r, c, p.x, p.img, out);
  }
  void after_map(int, const Mat& states) const override {
    for (std::size_t pi = 0; pi < patches_.size(); ++pi)
      std::memcpy(patches_[pi].x.data(), states.data() + offsets_[pi],
                  sizeof(double) * static_cast<std::size_t>(patches_[pi].x.size()));
  }

 private:
  std::pair<std::size_t, std::int64_t> locate(std::int64_t i) const {
    const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), i);
    const std::size_t pi = static_cast<std::size_t>(it - offsets_.begin()) - 1;
    return {pi, i - offsets_[pi]};
  }

  mutable std::vector<Patch> patches_;
  std::vector<std::int64_t> offsets_;
};

}  // namespace

void denoise_feature(double x_i, Eigen::Index r, Eigen::Index c, const Mat& state,
                     const NoisyImage& img, SparseFeature& out) {
  if (r < 0 || r >= img.rows() || c < 0 || c >= img.cols())
    throw config_error("pixel index out of bounds");
  out.reset(2 * kBins);

  std::array<std::pair<std::int64_t, double>, 5> entries;
  int count = 0;
  const double m = img.m(r, c);
  if (m != 0.0)
    entries[count++] = {bin_index(x_i - img.u(r, c), kLo, kHi, kBins) - 1, m};

  const Eigen::Index nr[4] = {r - 1, r + 1, r, r};
  const Eigen::Index nc[4] = {c, c, c - 1, c + 1};
  for (int n = 0; n < 4; ++n) {
    if (nr[n] < 0 || nr[n] >= img.rows() || nc[n] < 0 || nc[n] >= img.cols()) continue;
    const int k = bin_index(x_i - state(nr[n], nc[n]), kLo, kHi, kBins);
    entries[count++] = {kBins + k - 1, 1.0};
  }

  std::sort(entries.begin(), entries.begin() + count);
  for (int n = 0; n < count; ++n) {
    if (!out.nz.empty() && out.nz.back().first == entries[n].first)
      out.nz.back().second += entries[n].second;
    else
      out.nz.push_back(entries[n]);
  }
}

NoisyImage gen_noisy(const Mat& image, NoiseType type, double rate, Rng& rng) {
  if (!(rate >= 0.0 && rate <= 1.0)) throw config_error("noise rate must lie in [0,1]");
  if (image.size() == 0) throw config_error("empty image");
  if ((image.array() < 0.0).any() || (image.array() > 1.0).any())
    throw config_error("image intensities must lie in [0,1]");

  NoisyImage out;
  out.u = image;
  out.type = type;
  out.rate = rate;

  const std::int64_t n = image.size();
  const std::int64_t n_replace = static_cast<std::int64_t>(std::floor(rate * n));
  if (n_replace > 0) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    for (std::int64_t i = 0; i < n_replace; ++i)
      std::swap(idx[static_cast<std::size_t>(i)],
                idx[static_cast<std::size_t>(rng.uniform_int(i, n - 1))]);
    for (std::int64_t i = 0; i < n_replace; ++i) {
      double* px = out.u.data() + idx[static_cast<std::size_t>(i)];
      *px = type == NoiseType::sp ? static_cast<double>(rng.uniform_int(0, 1))
                                  : rng.uniform(0.0, 1.0);
    }
  }

  if (type == NoiseType::sp)
    out.m = ((out.u.array() != 0.0) && (out.u.array() != 1.0)).cast<double>();
  else
    out.m = Mat::Ones(image.rows(), image.cols());
  return out;
}

std::pair<UpdateMapSequence, TrainReport> train_denoiser(const std::vector<Mat>& corpus,
                                                         const DenoiseTrainConfig& cfg) {
  if (corpus.empty()) throw config_error("empty training corpus");
  if (cfg.n_patches < 1) throw config_error("need at least one training patch");
  if (cfg.patch_lo < 1 || cfg.patch_hi < cfg.patch_lo) throw config_error("bad patch size range");
  if (!(cfg.rate_lo >= 0.0 && cfg.rate_hi <= 1.0 && cfg.rate_lo <= cfg.rate_hi))
    throw config_error("bad noise rate range");

  std::vector<Patch> patches(static_cast<std::size_t>(cfg.n_patches));
  parallel_chunks(cfg.n_patches, 4, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t pi = b; pi < e; ++pi) {
      Rng rng = Rng::stream(cfg.seed, static_cast<std::uint64_t>(pi));
      const Mat& src = corpus[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(corpus.size()) - 1))];
      std::int64_t s = rng.uniform_int(cfg.patch_lo, cfg.patch_hi);
      s = std::min({s, static_cast<std::int64_t>(src.rows()),
                    static_cast<std::int64_t>(src.cols())});
      const std::int64_t r0 = rng.uniform_int(0, src.rows() - s);
      const std::int64_t c0 = rng.uniform_int(0, src.cols() - s);
      const double rate = rng.uniform(cfg.rate_lo, cfg.rate_hi);
      NoiseType type = NoiseType::sp;
      if (cfg.mode == NoiseMix::rv)
        type = NoiseType::rv;
      else if (cfg.mode == NoiseMix::sprv)
        type = rng.uniform_int(0, 1) == 1 ? NoiseType::rv : NoiseType::sp;

      Patch& p = patches[static_cast<std::size_t>(pi)];
      p.clean = src.block(r0, c0, s, s);
      p.img = gen_noisy(p.clean, type, rate, rng);
      p.x = p.img.u;
    }
  });

  PatchSet set(std::move(patches));
  TrainOptions opt;
  opt.T = cfg.K;
  opt.lambda = cfg.lambda;
  opt.chunk = 8192;
  return train_sum(set, opt);
}

Mat denoise(const NoisyImage& img, const UpdateMapSequence& sum, int max_iter) {
  if (img.u.rows() != img.m.rows() || img.u.cols() != img.m.cols())
    throw config_error("image/mask dimensions disagree");
  if (sum.T() == 0) return img.u;
  if (sum.p != 1 || sum.f != 2 * kBins)
    throw config_error("update sequence does not match the denoising feature");

  const Eigen::Index rows = img.rows();
  const std::int64_t n = img.u.size();
  Mat x = img.u;
  Mat upd(rows, img.cols());
  for (int iter = 0; iter < max_iter; ++iter) {
    const Mat& D = sum.maps[static_cast<std::size_t>(
        std::min(iter, sum.T() - 1))];
    parallel_chunks(n, 4096, [&](std::int64_t b, std::int64_t e, int) {
      thread_local SparseFeature h;
      for (std::int64_t k = b; k < e; ++k) {
        const Eigen::Index r = k % rows;
        const Eigen::Index c = k / rows;
        denoise_feature(x(r, c), r, c, x, img, h);
        double u = 0.0;
        for (const auto& [idx, val] : h.nz) u += D(0, idx) * val;
        upd.data()[k] = u;
      }
    });
    x -= upd;
  }
  return x.cwiseMax(0.0).cwiseMin(1.0);
}

double psnr(const Mat& reference, const Mat& estimate) {
  if (reference.rows() != estimate.rows() || reference.cols() != estimate.cols())
    throw config_error("image dimensions disagree");
  const double mse = (reference - estimate).squaredNorm() / static_cast<double>(reference.size());
  if (mse == 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(1.0 / mse);
}

Mat make_texture(int h, int w, Rng& rng) {
  if (h < 1 || w < 1) throw config_error("texture dimensions must be positive");
  const int n_seeds = static_cast<int>(rng.uniform_int(6, 24));
  std::vector<double> sr(static_cast<std::size_t>(n_seeds)), sc(sr.size()), sv(sr.size());
  for (int s = 0; s < n_seeds; ++s) {
    sr[static_cast<std::size_t>(s)] = rng.uniform(0.0, static_cast<double>(h));
    sc[static_cast<std::size_t>(s)] = rng.uniform(0.0, static_cast<double>(w));
    sv[static_cast<std::size_t>(s)] = rng.uniform(0.0, 1.0);
  }
  const double fr = rng.uniform(0.5, 2.0);
  const double fc = rng.uniform(0.5, 2.0);
  const double phase = rng.uniform(0.0, 2.0 * M_PI);

  Mat img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int s = 0; s < n_seeds; ++s) {
        const double dr = r + 0.5 - sr[static_cast<std::size_t>(s)];
        const double dc = c + 0.5 - sc[static_cast<std::size_t>(s)];
        const double d = dr * dr + dc * dc;
        if (d < best_d) {
          best_d = d;
          best = s;
        }
      }
      const double drift =
          0.15 * std::cos(2.0 * M_PI * (fr * r / h + fc * c / w) + phase);
      img(r, c) = std::min(1.0, std::max(0.0, sv[static_cast<std::size_t>(best)] + drift));
    }
  return img;
}

std::vector<Mat> make_corpus(int n, int h, int w, std::uint64_t seed) {
  std::vector<Mat> out(static_cast<std::size_t>(n));
  parallel_chunks(n, 1, [&](std::int64_t b, std::int64_t e, int) {
    for (std::int64_t i = b; i < e; ++i) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(i));
      out[static_cast<std::size_t>(i)] = make_texture(h, w, rng);
    }
  });
  return out;
}

ResultTable run_denoise_sweep(const std::vector<Mat>& corpus, const DenoiseSweepConfig& cfg) {
  const UpdateMapSequence sum = train_denoiser(corpus, cfg.train).first;

  std::vector<Mat> held_out(static_cast<std::size_t>(cfg.trials));
  for (int ti = 0; ti < cfg.trials; ++ti) {
    Rng rng = Rng::stream(cfg.seed, (1ull << 62) | static_cast<std::uint64_t>(ti));
    held_out[static_cast<std::size_t>(ti)] = make_texture(cfg.height, cfg.width, rng);
  }

  ResultTable table;
  for (std::size_t vi = 0; vi < cfg.rates.size(); ++vi) {
    const double rate = cfg.rates[vi];
    struct Trial {
      double noisy, cleaned;
    };
    std::vector<Trial> trials(static_cast<std::size_t>(cfg.trials));
    parallel_chunks(cfg.trials, 1, [&](std::int64_t b, std::int64_t e, int) {
      for (std::int64_t ti = b; ti < e; ++ti) {
        Rng rng = Rng::stream(cfg.seed, (1ull << 63) | (static_cast<std::uint64_t>(vi) << 32) |
                                            static_cast<std::uint64_t>(ti));
        const Mat& ref = held_out[static_cast<std::size_t>(ti)];
        const NoisyImage noisy = gen_noisy(ref, cfg.noise, rate, rng);
        const Mat est = denoise(noisy, sum, cfg.max_iter);
        trials[static_cast<std::size_t>(ti)] = {psnr(ref, noisy.u), psnr(ref, est)};
      }
    });
    for (int ti = 0; ti < cfg.trials; ++ti) {
      table.add(rate, ti, "psnr_noisy", trials[static_cast<std::size_t>(ti)].noisy);
      table.add(rate, ti, "psnr_do", trials[static_cast<std::size_t>(ti)].cleaned);
    }
  }
  return table;
}

}  // namespace disco
