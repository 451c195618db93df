// disco: one binary driving every task pack. The do1d / doreg / dopnp /
// dodenoise names are symlinks; the basename picks the task subcommand.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <disco/common.hpp>
#include <disco/denoise.hpp>
#include <disco/io.hpp>
#include <disco/lie.hpp>
#include <disco/penalty1d.hpp>
#include <disco/pnp.hpp>
#include <disco/registration.hpp>
#include <disco/rng.hpp>

using nlohmann::json;
using namespace disco;

namespace {

// ---------------------------------------------------------------------------
// small utilities

std::string fmtg(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

double now_seconds() {
  using clock = std::chrono::steady_clock;
  return std::chrono::duration<double>(clock::now().time_since_epoch()).count();
}

std::string basename_of(const std::string& path) {
  const std::size_t slash = path.find_last_of("/\\");
  return slash == std::string::npos ? path : path.substr(slash + 1);
}

// "lo:step:hi" (inclusive), "a,b,c", or a single number.
std::vector<double> parse_values(const std::string& spec) {
  auto to_double = [&](const std::string& tok) {
    std::size_t used = 0;
    double v = 0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      throw config_error("bad number in value list: '" + tok + "'");
    }
    if (used != tok.size()) throw config_error("bad number in value list: '" + tok + "'");
    return v;
  };

  std::vector<double> out;
  if (spec.find(':') != std::string::npos) {
    std::vector<std::string> parts;
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ':')) parts.push_back(tok);
    if (parts.size() != 3) throw config_error("ranges take the form lo:step:hi");
    const double lo = to_double(parts[0]), step = to_double(parts[1]), hi = to_double(parts[2]);
    if (step <= 0) throw config_error("range step must be positive");
    for (double v = lo; v <= hi + 1e-9 * std::max(1.0, std::abs(hi)); v += step)
      out.push_back(v);
  } else {
    std::stringstream ss(spec);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(to_double(tok));
  }
  if (out.empty()) throw config_error("empty value list");
  return out;
}

std::vector<int> parse_betas(const std::string& spec) {
  if (spec == "all") return {1, 2, 3, 4, 5, 6};
  std::vector<int> out;
  for (double v : parse_values(spec)) {
    const int b = static_cast<int>(std::lround(v));
    if (b < 1 || b > 6 || b != v) throw config_error("--beta takes 'all' or indices 1..6");
    out.push_back(b);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw io_error("cannot open for writing: " + path);
  f << text;
  if (!f.good()) throw io_error("write failed: " + path);
}

// table1.csv -> table1.config.json (next to the output file).
std::string config_echo_path(const std::string& out) {
  const std::size_t slash = out.find_last_of("/\\");
  const std::size_t dot = out.find_last_of('.');
  std::string stem = dot == std::string::npos || (slash != std::string::npos && dot < slash)
                         ? out
                         : out.substr(0, dot);
  return stem + ".config.json";
}

void echo_config(const std::string& out_path, json j) {
  j["version"] = kVersion;
  write_text(config_echo_path(out_path), j.dump(2) + "\n");
}

json mat_to_json(const Mat& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

json vec_to_json(const Vec& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
  return a;
}

Mat load_points(const std::string& path) {
  const std::string base = basename_of(path);
  const std::size_t dot = base.find_last_of('.');
  const std::string ext = dot == std::string::npos ? "" : base.substr(dot + 1);
  return ext == "ply" ? load_ply(path) : load_csv_points(path);
}

// Model frame used by doreg: zero mean, largest side scaled to 2. Scenes and
// reported poses are mapped through the same frame.
struct CloudFrame {
  Vec center;
  double scale = 1.0;
};

CloudFrame frame_of(const Mat& points) {
  CloudFrame f;
  f.center = points.rowwise().mean();
  const Vec side = points.rowwise().maxCoeff() - points.rowwise().minCoeff();
  const double max_side = side.maxCoeff();
  if (!(max_side > 0)) throw config_error("degenerate point cloud");
  f.scale = 2.0 / max_side;
  return f;
}

Mat apply_frame(const CloudFrame& f, const Mat& points) {
  return (points.colwise() - f.center) * f.scale;
}

std::vector<Mat> load_corpus_dir(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".pgm")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw io_error("no .pgm images under " + dir);
  std::vector<Mat> corpus;
  corpus.reserve(files.size());
  for (const std::string& f : files) corpus.push_back(load_pgm(f));
  return corpus;
}

NoiseType parse_noise(const std::string& s) {
  if (s == "sp") return NoiseType::sp;
  if (s == "rv") return NoiseType::rv;
  throw config_error("noise type must be sp or rv");
}

NoiseMix parse_mix(const std::string& s) {
  if (s == "sp") return NoiseMix::sp;
  if (s == "rv") return NoiseMix::rv;
  if (s == "sprv") return NoiseMix::sprv;
  throw config_error("mode must be sp, rv, or sprv");
}

// ---------------------------------------------------------------------------
// config-file merge: JSON keys become --key tokens placed before the user's
// own flags, so explicitly passed flags win (every option takes the last
// occurrence).

std::string find_config_path(const std::vector<std::string>& args) {
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) return args[i + 1];
    if (args[i].rfind("--config=", 0) == 0) return args[i].substr(9);
  }
  return "";
}

std::vector<std::string> config_tokens(const CLI::App* leaf, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw io_error("cannot read config file: " + path);
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw config_error("config file is not valid JSON: " + std::string(e.what()));
  }
  if (!j.is_object()) throw config_error("config file must hold a JSON object");

  std::vector<std::string> tokens;
  for (const auto& [key, value] : j.items()) {
    if (key == "config") throw config_error("config files cannot nest --config");
    const CLI::Option* opt = leaf->get_option_no_throw("--" + key);
    if (opt == nullptr) throw config_error("unknown config key: " + key);
    std::string text;
    if (value.is_string())
      text = value.get<std::string>();
    else if (value.is_boolean())
      text = value.get<bool>() ? "true" : "false";
    else if (value.is_number())
      text = value.dump();
    else if (value.is_array()) {
      for (const auto& el : value) {
        if (!el.is_number()) throw config_error("config key '" + key + "' has a bad element");
        if (!text.empty()) text += ",";
        text += el.dump();
      }
    } else {
      throw config_error("config key '" + key + "' has an unsupported value");
    }
    tokens.push_back("--" + key + "=" + text);
  }
  return tokens;
}

// ---------------------------------------------------------------------------
// 1d

struct Opts1d {
  std::string beta = "all";
  int train = 10000, test = 1000, maps = 15, max_iter = 100;
  double lambda = 1e-6, epsilon = 1e-3, early_stop = 0.005;
  std::uint64_t seed = 0;
  std::string out = "table1.csv";
  std::string config;
};

void run_1d(const Opts1d& o) {
  Table1Config cfg;
  cfg.betas = parse_betas(o.beta);
  cfg.n_train = o.train;
  cfg.n_test = o.test;
  cfg.T = o.maps;
  cfg.lambda = o.lambda;
  cfg.epsilon = o.epsilon;
  cfg.max_iter = o.max_iter;
  cfg.early_stop = o.early_stop;
  cfg.seed = o.seed;

  const double t0 = now_seconds();
  const Table1Result res = run_table1(cfg);

  std::string csv = "beta,oracle_1,oracle_2,oracle_3,oracle_4,oracle_5,oracle_6,sum_beta\n";
  for (int beta : cfg.betas) {
    csv += std::to_string(beta);
    for (int c = 0; c < 7; ++c) csv += "," + fmtg(res.mae(beta - 1, c));
    csv += "\n";
  }
  write_text(o.out, csv);
  echo_config(o.out, json{{"task", "1d"},
                          {"action", "run"},
                          {"beta", o.beta},
                          {"train", o.train},
                          {"test", o.test},
                          {"maps", o.maps},
                          {"lambda", o.lambda},
                          {"epsilon", o.epsilon},
                          {"max_iter", o.max_iter},
                          {"early_stop", o.early_stop},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%zu rows) in %.1fs\n", o.out.c_str(), cfg.betas.size(),
               now_seconds() - t0);
}

// ---------------------------------------------------------------------------
// reg

struct OptsRegCommon {
  int dim = 3;
  std::string model;  // empty -> built-in synthetic shape
  double sigma2 = -1.0;
  int knn = 10;
};

Mat resolve_model(const OptsRegCommon& o, CloudFrame& frame) {
  if (o.dim != 2 && o.dim != 3) throw config_error("--dim must be 2 or 3");
  Mat pts;
  if (o.model.empty()) {
    pts = make_synthetic_model(o.dim);
  } else {
    pts = load_points(o.model);
    if (pts.rows() < o.dim) throw config_error("model file has too few coordinate rows");
    pts = pts.topRows(o.dim).eval();
  }
  frame = frame_of(pts);
  return apply_frame(frame, pts);
}

double resolve_sigma2(const OptsRegCommon& o) {
  return o.sigma2 > 0 ? o.sigma2 : (o.dim == 3 ? 0.03 : 0.5);
}

struct OptsRegTrain {
  OptsRegCommon common;
  int ntrain = -1, maps = 30;
  double lambda = -1.0;
  std::uint64_t seed = 0;
  std::string out = "reg.dosum";
  std::string config;
};

void run_reg_train(const OptsRegTrain& o) {
  RegTrainConfig cfg =
      o.common.dim == 3 ? RegTrainConfig::defaults3d() : RegTrainConfig::defaults2d();
  cfg.n_train = o.ntrain > 0 ? o.ntrain : (o.common.dim == 3 ? 3000 : 10000);
  cfg.K = o.maps;
  if (o.lambda >= 0) cfg.lambda = o.lambda;
  cfg.sigma2 = resolve_sigma2(o.common);
  cfg.knn = o.common.knn;
  cfg.seed = o.seed;

  CloudFrame frame;
  const Mat model = resolve_model(o.common, frame);
  const double t0 = now_seconds();
  auto [reg, report] = train_registration(model, cfg);
  save_sum(o.out, reg.sum);
  echo_config(o.out, json{{"task", "reg"},
                          {"action", "train"},
                          {"dim", o.common.dim},
                          {"model", o.common.model},
                          {"ntrain", cfg.n_train},
                          {"maps", cfg.K},
                          {"lambda", cfg.lambda},
                          {"sigma2", cfg.sigma2},
                          {"knn", cfg.knn},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "trained %d maps on %d scenes, rmse %.4f -> %.4f, %.1fs; wrote %s\n",
               reg.sum.T(), cfg.n_train, report.rmse.front(), report.rmse.back(),
               now_seconds() - t0, o.out.c_str());
}

struct OptsRegSolve {
  OptsRegCommon common;
  std::string scene;
  std::string sum = "reg.dosum";
  std::string out = "pose.json";
  std::string truth;  // optional file with one se(d) line, scene -> model
  int max_iter = 1000;
  double epsilon = 1e-3;
  std::string config;
};

void run_reg_solve(const OptsRegSolve& o) {
  CloudFrame frame;
  const Mat model = resolve_model(o.common, frame);
  Mat scene = load_points(o.scene);
  if (scene.rows() < o.common.dim) throw config_error("scene file has too few coordinate rows");
  scene = apply_frame(frame, scene.topRows(o.common.dim).eval());

  RegistrationModel reg = make_registration_model(model, resolve_sigma2(o.common), o.common.knn);
  reg.sum = load_sum(o.sum);
  const int p = o.common.dim == 3 ? 6 : 3;
  if (reg.sum.p != p || reg.sum.f != 2 * model.cols())
    throw config_error("update sequence does not match this model (train with the same "
                       "--model/--dim)");

  const Vec x0 = Vec::Zero(p);
  const InferResult res = register_cloud(reg, scene, x0, o.max_iter, o.epsilon);

  // Denormalize: model_n = s(m - c), scene_n = s(y - c) and m ~ g_n(y_n)
  // give R = R_n, t = c - R_n c + t_n / s.
  const RigidTransform g = lie_exp(res.x);
  const Vec t_orig = frame.center - g.R * frame.center + g.t / frame.scale;
  json out{{"dim", o.common.dim},
           {"iterations", res.iterations_used},
           {"final_update_norm", res.final_update_norm},
           {"se", vec_to_json(lie_log({g.R, t_orig}))},
           {"rotation", mat_to_json(g.R)},
           {"translation", vec_to_json(t_orig)},
           {"se_normalized", vec_to_json(res.x)}};

  if (!o.truth.empty()) {
    const Mat truth_vals = load_csv_points(o.truth);
    if (truth_vals.rows() * truth_vals.cols() != p)
      throw config_error("--truth must hold one se(d) vector");
    Vec xt(p);
    for (int i = 0; i < p; ++i) xt[i] = truth_vals.data()[i];
    const RigidTransform gt = lie_exp(xt);
    const Vec tn = frame.scale * (gt.t - frame.center + gt.R * frame.center);
    const SuccessMetric sm = success_metric(model, res.x, lie_log({gt.R, tn}));
    out["mean_error"] = sm.mean_error;
    out["success"] = sm.success;
  }

  write_text(o.out, out.dump(2) + "\n");
  echo_config(o.out, json{{"task", "reg"},
                          {"action", "solve"},
                          {"dim", o.common.dim},
                          {"model", o.common.model},
                          {"scene", o.scene},
                          {"sum", o.sum},
                          {"sigma2", resolve_sigma2(o.common)},
                          {"knn", o.common.knn},
                          {"max_iter", o.max_iter},
                          {"epsilon", o.epsilon},
                          {"truth", o.truth},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%d iterations)\n", o.out.c_str(), res.iterations_used);
}

struct OptsRegSweep {
  int dim = 3;
  std::string perturb = "outliers";
  std::string values;
  int trials = 50, ntrain = -1, maps = 30, max_iter = -1, icp_iters = 100;
  double lambda = -1.0, sigma2 = -1.0, epsilon = 1e-3;
  int knn = 10;
  std::uint64_t seed = 0;
  std::string out = "curve.csv";
  std::string config;
};

std::string default_values(int dim, const std::string& axis) {
  if (axis == "outliers") return dim == 3 ? "0:100:600" : "0:40:200";
  if (axis == "outlier_ratio") return "0:0.25:2";
  if (axis == "incomplete") return dim == 3 ? "0:0.1:0.7" : "0:0.1:0.6";
  if (axis == "angle") return "0:30:180";
  if (axis == "noise") return "0:0.02:0.1";
  if (axis == "npoints") return "100,200,400,700,1000,2000,4000";
  throw config_error("unknown sweep axis: " + axis);
}

void run_reg_sweep_cmd(const OptsRegSweep& o) {
  if (o.dim != 2 && o.dim != 3) throw config_error("--dim must be 2 or 3");
  RegSweepConfig cfg;
  cfg.dim = o.dim;
  cfg.axis = o.perturb;
  cfg.values = parse_values(o.values.empty() ? default_values(o.dim, o.perturb) : o.values);
  cfg.trials = o.trials;
  cfg.max_iter = o.max_iter > 0 ? o.max_iter : (o.dim == 3 ? 1000 : 100);
  cfg.epsilon = o.epsilon;
  cfg.icp_max_iter = o.icp_iters;
  cfg.seed = o.seed;
  cfg.train = o.dim == 3 ? RegTrainConfig::defaults3d() : RegTrainConfig::defaults2d();
  cfg.train.n_train = o.ntrain > 0 ? o.ntrain : (o.dim == 3 ? 3000 : 10000);
  cfg.train.K = o.maps;
  if (o.lambda >= 0) cfg.train.lambda = o.lambda;
  if (o.sigma2 > 0) cfg.train.sigma2 = o.sigma2;
  cfg.train.knn = o.knn;
  cfg.train.seed = o.seed;

  const double t0 = now_seconds();
  const ResultTable table = run_reg_sweep(cfg);
  write_result_csv(o.out, table);
  echo_config(o.out, json{{"task", "reg"},
                          {"action", "sweep"},
                          {"dim", o.dim},
                          {"perturb", o.perturb},
                          {"values", cfg.values},
                          {"trials", o.trials},
                          {"ntrain", cfg.train.n_train},
                          {"maps", cfg.train.K},
                          {"lambda", cfg.train.lambda},
                          {"sigma2", cfg.train.sigma2},
                          {"knn", cfg.train.knn},
                          {"max_iter", cfg.max_iter},
                          {"epsilon", o.epsilon},
                          {"icp_iters", o.icp_iters},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%zu rows) in %.1fs\n", o.out.c_str(), table.rows.size(),
               now_seconds() - t0);
}

// ---------------------------------------------------------------------------
// pnp

struct OptsPnpTrain {
  int ntrain = 5000, maps = 30;
  double lambda = 1e-4, noise = 0.0;
  bool literal = false;
  std::uint64_t seed = 0;
  std::string out = "pnp.dosum";
  std::string config;
};

void run_pnp_train(const OptsPnpTrain& o) {
  PnpTrainConfig cfg;
  cfg.n_train = o.ntrain;
  cfg.K = o.maps;
  cfg.lambda = o.lambda;
  cfg.literal_feature = o.literal;
  cfg.seed = o.seed;
  cfg.gen.noise_sigma = o.noise;

  const double t0 = now_seconds();
  auto [model, report] = train_pnp(cfg);
  save_sum(o.out, model.sum);
  echo_config(o.out, json{{"task", "pnp"},
                          {"action", "train"},
                          {"ntrain", o.ntrain},
                          {"maps", o.maps},
                          {"lambda", o.lambda},
                          {"noise", o.noise},
                          {"literal", o.literal},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "trained %d maps on %d instances, rmse %.4f -> %.4f, %.1fs; wrote %s\n",
               model.sum.T(), o.ntrain, report.rmse.front(), report.rmse.back(),
               now_seconds() - t0, o.out.c_str());
}

struct OptsPnpSolve {
  std::string in;             // matches.csv: u,v,X,Y,Z per line
  std::string k;              // intrinsics file
  std::string sum = "pnp.dosum";
  std::string out = "pose.json";
  int max_iter = 100;
  double epsilon = 1e-6, threshold = 10.0;
  bool literal = false;
  std::string config;
};

void run_pnp_solve(const OptsPnpSolve& o) {
  const Mat rows = load_csv_points(o.in);
  if (rows.rows() != 5) throw config_error("matches file needs u,v,X,Y,Z per line");
  CorrespondenceSet corr;
  corr.P = rows.topRows(2);
  corr.S = rows.bottomRows(3);
  corr.K = load_intrinsics(o.k);

  PnpModel model;
  model.sum = load_sum(o.sum);
  model.literal_feature = o.literal;
  const int f = o.literal ? 2400 : 1200;
  if (model.sum.p != 12 || model.sum.f != f)
    throw config_error("update sequence does not match the pose feature (check --literal)");

  const PnpSolution sol = solve_pnp(model, corr, o.max_iter, o.epsilon, o.threshold);
  json out{{"rotation", mat_to_json(sol.R)},
           {"translation", vec_to_json(sol.t)},
           {"iterations", sol.iterations},
           {"n_inliers", sol.inliers.size()},
           {"inliers", sol.inliers}};
  write_text(o.out, out.dump(2) + "\n");
  echo_config(o.out, json{{"task", "pnp"},
                          {"action", "solve"},
                          {"in", o.in},
                          {"k", o.k},
                          {"sum", o.sum},
                          {"max_iter", o.max_iter},
                          {"epsilon", o.epsilon},
                          {"threshold", o.threshold},
                          {"literal", o.literal},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%zu inliers of %lld)\n", o.out.c_str(), sol.inliers.size(),
               static_cast<long long>(corr.size()));
}

struct OptsPnpSweep {
  std::string vary = "outliers";
  std::string values;
  int trials = 100, ntrain = 5000, maps = 30;
  double lambda = 1e-4;
  bool literal = false;
  std::uint64_t seed = 0;
  std::string out = "curve.csv";
  std::string config;
};

void run_pnp_sweep_cmd(const OptsPnpSweep& o) {
  PnpSweepConfig cfg;
  cfg.axis = o.vary;
  if (o.values.empty()) {
    if (o.vary == "outliers")
      cfg.values = parse_values("0:0.1:0.8");
    else if (o.vary == "noise")
      cfg.values = parse_values("0:2:10");
    else if (o.vary == "npoints")
      cfg.values = parse_values("100,200,400,700,1000");
    else
      throw config_error("unknown sweep axis: " + o.vary);
  } else {
    cfg.values = parse_values(o.values);
  }
  cfg.trials = o.trials;
  cfg.seed = o.seed;
  cfg.train.n_train = o.ntrain;
  cfg.train.K = o.maps;
  cfg.train.lambda = o.lambda;
  cfg.train.literal_feature = o.literal;
  cfg.train.seed = o.seed;

  const double t0 = now_seconds();
  const ResultTable table = run_pnp_sweep(cfg);
  write_result_csv(o.out, table);
  echo_config(o.out, json{{"task", "pnp"},
                          {"action", "sweep"},
                          {"vary", o.vary},
                          {"values", cfg.values},
                          {"trials", o.trials},
                          {"ntrain", o.ntrain},
                          {"maps", o.maps},
                          {"lambda", o.lambda},
                          {"literal", o.literal},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%zu rows) in %.1fs\n", o.out.c_str(), table.rows.size(),
               now_seconds() - t0);
}

// ---------------------------------------------------------------------------
// denoise

std::vector<Mat> resolve_corpus(const std::string& dir, std::uint64_t seed) {
  if (!dir.empty()) return load_corpus_dir(dir);
  // Tagged stream keeps corpus textures off the patch/noise streams.
  return make_corpus(20, 256, 256, stream_seed(seed, 0x434f525055ull));
}

struct OptsDenTrain {
  std::string corpus;
  std::string mode = "sp";
  int patches = 1000, maps = 30;
  double lambda = 1e-2;
  std::uint64_t seed = 0;
  std::string out = "den.dosum";
  std::string config;
};

void run_den_train(const OptsDenTrain& o) {
  DenoiseTrainConfig cfg;
  cfg.n_patches = o.patches;
  cfg.K = o.maps;
  cfg.lambda = o.lambda;
  cfg.mode = parse_mix(o.mode);
  cfg.seed = o.seed;

  const double t0 = now_seconds();
  auto [sum, report] = train_denoiser(resolve_corpus(o.corpus, o.seed), cfg);
  save_sum(o.out, sum);
  echo_config(o.out, json{{"task", "denoise"},
                          {"action", "train"},
                          {"corpus", o.corpus},
                          {"mode", o.mode},
                          {"patches", o.patches},
                          {"maps", o.maps},
                          {"lambda", o.lambda},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "trained %d maps on %d patches, rmse %.4f -> %.4f, %.1fs; wrote %s\n",
               sum.T(), o.patches, report.rmse.front(), report.rmse.back(),
               now_seconds() - t0, o.out.c_str());
}

struct OptsDenRun {
  std::string in;
  std::string sum = "den.dosum";
  std::string out = "clean.pgm";
  std::string noise = "sp";  // mask rule applied to the input image
  int max_iter = 200;
  std::string config;
};

void run_den_run(const OptsDenRun& o) {
  const Mat u = load_pgm(o.in);
  NoisyImage img;
  img.u = u;
  img.type = parse_noise(o.noise);
  img.m = img.type == NoiseType::sp
              ? ((u.array() != 0.0) && (u.array() != 1.0)).cast<double>().matrix().eval()
              : Mat::Ones(u.rows(), u.cols());
  const Mat est = denoise(img, load_sum(o.sum), o.max_iter);
  save_pgm(o.out, est);
  echo_config(o.out, json{{"task", "denoise"},
                          {"action", "run"},
                          {"in", o.in},
                          {"sum", o.sum},
                          {"noise", o.noise},
                          {"max_iter", o.max_iter},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s\n", o.out.c_str());
}

struct OptsDenSweep {
  std::string rates = "0.1:0.1:0.9";
  std::string noise = "sp";
  std::string mode;  // training mixture; defaults to --noise
  std::string corpus;
  int trials = 10, patches = 1000, maps = 30, max_iter = 200, size = 128;
  double lambda = 1e-2;
  std::uint64_t seed = 0;
  std::string out = "psnr.csv";
  std::string config;
};

void run_den_sweep(const OptsDenSweep& o) {
  DenoiseSweepConfig cfg;
  cfg.noise = parse_noise(o.noise);
  cfg.rates = parse_values(o.rates);
  cfg.trials = o.trials;
  cfg.height = cfg.width = o.size;
  cfg.max_iter = o.max_iter;
  cfg.seed = o.seed;
  cfg.train.n_patches = o.patches;
  cfg.train.K = o.maps;
  cfg.train.lambda = o.lambda;
  cfg.train.mode = parse_mix(o.mode.empty() ? o.noise : o.mode);
  cfg.train.seed = o.seed;

  const double t0 = now_seconds();
  const ResultTable table = run_denoise_sweep(resolve_corpus(o.corpus, o.seed), cfg);
  write_result_csv(o.out, table);
  echo_config(o.out, json{{"task", "denoise"},
                          {"action", "sweep"},
                          {"rates", cfg.rates},
                          {"noise", o.noise},
                          {"mode", o.mode.empty() ? o.noise : o.mode},
                          {"corpus", o.corpus},
                          {"trials", o.trials},
                          {"patches", o.patches},
                          {"maps", o.maps},
                          {"lambda", o.lambda},
                          {"max_iter", o.max_iter},
                          {"size", o.size},
                          {"seed", o.seed},
                          {"out", o.out}});
  std::fprintf(stderr, "wrote %s (%zu rows) in %.1fs\n", o.out.c_str(), table.rows.size(),
               now_seconds() - t0);
}

// ---------------------------------------------------------------------------

constexpr const char* kSweepCsvHelp =
    "Output CSV columns: sweep_value,trial_id,metric,value,wall_ms (wall_ms is "
    "always 0 so reruns are byte-identical; timings go to stderr).";

CLI::App* make_cmd(CLI::App* parent, const std::string& name, const std::string& desc) {
  CLI::App* c = parent->add_subcommand(name, desc);
  c->option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  return c;
}

void add_config_opt(CLI::App* cmd, std::string& target) {
  cmd->add_option("--config", target,
                  "JSON file with option values (flags given on the command line win)");
}

}  // namespace

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);

  // Alias binaries select their task implicitly.
  const std::string prog = argc > 0 ? basename_of(argv[0]) : "disco";
  if (prog == "do1d") args.insert(args.begin(), "1d");
  else if (prog == "doreg") args.insert(args.begin(), "reg");
  else if (prog == "dopnp") args.insert(args.begin(), "pnp");
  else if (prog == "dodenoise") args.insert(args.begin(), "denoise");

  CLI::App app{"discriminative-optimization toolkit: learned update sequences for 1D "
               "penalty minimization, rigid point-cloud registration, camera pose, and "
               "impulse-noise denoising"};
  app.set_version_flag("--version", std::string("disco ") + kVersion);
  app.require_subcommand(1);

  Opts1d o1d;
  OptsRegTrain ort;
  OptsRegSolve ors;
  OptsRegSweep orw;
  OptsPnpTrain opt_;
  OptsPnpSolve ops;
  OptsPnpSweep opw;
  OptsDenTrain odt;
  OptsDenRun odr;
  OptsDenSweep ods;

  // ---- 1d ----
  CLI::App* c1d = app.add_subcommand("1d", "penalty minimization with unknown penalties");
  c1d->require_subcommand(1);
  {
    CLI::App* run = make_cmd(c1d, "run", "train one sequence per penalty and emit MAEs");
    run->footer("Output CSV columns: beta,oracle_1..oracle_6,sum_beta (mean absolute "
                "error of each oracle minimizer and of the learned sequence, per "
                "penalty).");
    run->add_option("--beta", o1d.beta, "'all' or penalty indices, e.g. 1,2,3");
    run->add_option("--train", o1d.train, "training instances per penalty");
    run->add_option("--test", o1d.test, "test instances per penalty");
    run->add_option("--maps", o1d.maps, "maximum maps per sequence");
    run->add_option("--lambda", o1d.lambda, "ridge regularizer");
    run->add_option("--epsilon", o1d.epsilon, "inference stopping threshold");
    run->add_option("--max-iter", o1d.max_iter, "inference iteration cap");
    run->add_option("--early-stop", o1d.early_stop, "stop adding maps below this RMSE gain");
    run->add_option("--seed", o1d.seed, "root seed");
    run->add_option("--out", o1d.out, "output CSV path");
    add_config_opt(run, o1d.config);
    run->callback([&] { run_1d(o1d); });
  }

  // ---- reg ----
  CLI::App* creg = app.add_subcommand("reg", "rigid point-cloud registration");
  creg->require_subcommand(1);
  {
    CLI::App* tr = make_cmd(creg, "train", "learn an update sequence for a model cloud");
    tr->add_option("--dim", ort.common.dim, "2 or 3");
    tr->add_option("--model", ort.common.model, "model cloud (.ply or .csv); default: built-in shape");
    tr->add_option("--sigma2", ort.common.sigma2, "feature kernel width (default 0.03 3D / 0.5 2D)");
    tr->add_option("--knn", ort.common.knn, "neighbors for normal estimation");
    tr->add_option("--ntrain", ort.ntrain, "training scenes (default 3000 3D / 10000 2D)");
    tr->add_option("--maps", ort.maps, "number of maps");
    tr->add_option("--lambda", ort.lambda, "ridge regularizer (default 3e-4 3D / 2e-2 2D)");
    tr->add_option("--seed", ort.seed, "root seed");
    tr->add_option("--out", ort.out, "output .dosum path");
    add_config_opt(tr, ort.config);
    tr->callback([&] { run_reg_train(ort); });

    CLI::App* so = make_cmd(creg, "solve", "register a scene against the model");
    so->footer("Pose JSON: se(d) vector, rotation, translation (model frame), "
               "iterations; mean_error/success when --truth is given.");
    so->add_option("--dim", ors.common.dim, "2 or 3");
    so->add_option("--model", ors.common.model, "model cloud used at training time");
    so->add_option("--sigma2", ors.common.sigma2, "feature kernel width (must match training)");
    so->add_option("--knn", ors.common.knn, "neighbors for normal estimation");
    so->add_option("--scene", ors.scene, "scene cloud (.ply or .csv)")->required();
    so->add_option("--sum", ors.sum, "trained .dosum file");
    so->add_option("--max-iter", ors.max_iter, "iteration cap");
    so->add_option("--epsilon", ors.epsilon, "stopping threshold");
    so->add_option("--truth", ors.truth, "file with the true se(d) vector (scene -> model)");
    so->add_option("--out", ors.out, "output JSON path");
    add_config_opt(so, ors.config);
    so->callback([&] { run_reg_solve(ors); });

    CLI::App* sw = make_cmd(creg, "sweep", "train once, sweep one perturbation axis vs ICP");
    sw->footer(std::string(kSweepCsvHelp) +
               " Metrics: do_success, icp_success, do_error, icp_error, do_iters.");
    sw->add_option("--dim", orw.dim, "2 or 3");
    sw->add_option("--perturb", orw.perturb,
                   "outliers | outlier_ratio | incomplete | angle | noise | npoints");
    sw->add_option("--values", orw.values, "sweep values (lo:step:hi or list)");
    sw->add_option("--trials", orw.trials, "trials per value");
    sw->add_option("--ntrain", orw.ntrain, "training scenes");
    sw->add_option("--maps", orw.maps, "number of maps");
    sw->add_option("--lambda", orw.lambda, "ridge regularizer");
    sw->add_option("--sigma2", orw.sigma2, "feature kernel width");
    sw->add_option("--knn", orw.knn, "neighbors for normal estimation");
    sw->add_option("--max-iter", orw.max_iter, "iteration cap (default 1000 3D / 100 2D)");
    sw->add_option("--epsilon", orw.epsilon, "stopping threshold");
    sw->add_option("--icp-iters", orw.icp_iters, "ICP baseline iteration cap");
    sw->add_option("--seed", orw.seed, "root seed");
    sw->add_option("--out", orw.out, "output CSV path");
    add_config_opt(sw, orw.config);
    sw->callback([&] { run_reg_sweep_cmd(orw); });
  }

  // ---- pnp ----
  CLI::App* cpnp = app.add_subcommand("pnp", "camera pose from 2D-3D matches");
  cpnp->require_subcommand(1);
  {
    CLI::App* tr = make_cmd(cpnp, "train", "learn the pose update sequence");
    tr->add_option("--ntrain", opt_.ntrain, "training instances");
    tr->add_option("--maps", opt_.maps, "number of maps");
    tr->add_option("--lambda", opt_.lambda, "ridge regularizer");
    tr->add_option("--noise", opt_.noise, "training pixel noise sigma");
    tr->add_flag("--literal", opt_.literal, "2400-entry feature layout");
    tr->add_option("--seed", opt_.seed, "root seed");
    tr->add_option("--out", opt_.out, "output .dosum path");
    add_config_opt(tr, opt_.config);
    tr->callback([&] { run_pnp_train(opt_); });

    CLI::App* so = make_cmd(cpnp, "solve", "estimate a pose from a match file");
    so->footer("Matches CSV: one 'u,v,X,Y,Z' line per correspondence. Pose JSON: "
               "rotation, translation, iterations, inlier indices.");
    so->add_option("--in", ops.in, "matches CSV")->required();
    so->add_option("--k", ops.k, "3x3 intrinsics file")->required();
    so->add_option("--sum", ops.sum, "trained .dosum file");
    so->add_option("--max-iter", ops.max_iter, "iteration cap");
    so->add_option("--epsilon", ops.epsilon, "stopping threshold");
    so->add_option("--threshold", ops.threshold, "inlier reprojection threshold (pixels)");
    so->add_flag("--literal", ops.literal, "the sequence was trained with --literal");
    so->add_option("--out", ops.out, "output JSON path");
    add_config_opt(so, ops.config);
    so->callback([&] { run_pnp_solve(ops); });

    CLI::App* sw = make_cmd(cpnp, "sweep", "train once, sweep a generator axis");
    sw->footer(std::string(kSweepCsvHelp) +
               " Metrics: rot_err_deg, trans_err, iterations, n_inliers.");
    sw->add_option("--vary", opw.vary, "outliers | noise | npoints");
    sw->add_option("--values", opw.values, "sweep values (lo:step:hi or list)");
    sw->add_option("--trials", opw.trials, "trials per value");
    sw->add_option("--ntrain", opw.ntrain, "training instances");
    sw->add_option("--maps", opw.maps, "number of maps");
    sw->add_option("--lambda", opw.lambda, "ridge regularizer");
    sw->add_flag("--literal", opw.literal, "2400-entry feature layout");
    sw->add_option("--seed", opw.seed, "root seed");
    sw->add_option("--out", opw.out, "output CSV path");
    add_config_opt(sw, opw.config);
    sw->callback([&] { run_pnp_sweep_cmd(opw); });
  }

  // ---- denoise ----
  CLI::App* cden = app.add_subcommand("denoise", "impulse-noise image denoising");
  cden->require_subcommand(1);
  {
    CLI::App* tr = make_cmd(cden, "train", "learn the per-pixel update sequence");
    tr->add_option("--corpus", odt.corpus, "directory of .pgm images; default: built-in textures");
    tr->add_option("--mode", odt.mode, "sp | rv | sprv");
    tr->add_option("--patches", odt.patches, "training patches");
    tr->add_option("--maps", odt.maps, "number of maps");
    tr->add_option("--lambda", odt.lambda, "ridge regularizer");
    tr->add_option("--seed", odt.seed, "root seed");
    tr->add_option("--out", odt.out, "output .dosum path");
    add_config_opt(tr, odt.config);
    tr->callback([&] { run_den_train(odt); });

    CLI::App* rn = make_cmd(cden, "run", "denoise one PGM image");
    rn->add_option("--in", odr.in, "noisy .pgm")->required();
    rn->add_option("--sum", odr.sum, "trained .dosum file");
    rn->add_option("--noise", odr.noise, "mask rule: sp (0/1 pixels masked) or rv");
    rn->add_option("--max-iter", odr.max_iter, "sweeps");
    rn->add_option("--out", odr.out, "output .pgm path");
    add_config_opt(rn, odr.config);
    rn->callback([&] { run_den_run(odr); });

    CLI::App* sw = make_cmd(cden, "sweep", "train once, sweep the noise rate");
    sw->footer(std::string(kSweepCsvHelp) + " Metrics: psnr_noisy, psnr_do.");
    sw->add_option("--rates", ods.rates, "noise rates (lo:step:hi or list)");
    sw->add_option("--noise", ods.noise, "test noise type: sp | rv");
    sw->add_option("--mode", ods.mode, "training mixture (default: same as --noise)");
    sw->add_option("--corpus", ods.corpus, "directory of .pgm images; default: built-in textures");
    sw->add_option("--trials", ods.trials, "held-out images per rate");
    sw->add_option("--patches", ods.patches, "training patches");
    sw->add_option("--maps", ods.maps, "number of maps");
    sw->add_option("--lambda", ods.lambda, "ridge regularizer");
    sw->add_option("--max-iter", ods.max_iter, "sweeps per image");
    sw->add_option("--size", ods.size, "held-out image side length");
    sw->add_option("--seed", ods.seed, "root seed");
    sw->add_option("--out", ods.out, "output CSV path");
    add_config_opt(sw, ods.config);
    sw->callback([&] { run_den_sweep(ods); });
  }

  try {
    // Merge --config file values (they sit before user flags, which win).
    const std::string config_path = find_config_path(args);
    if (!config_path.empty()) {
      if (args.size() < 2) throw config_error("--config needs a task and action first");
      CLI::App* task = app.get_subcommand_no_throw(args[0]);
      if (task == nullptr) throw config_error("unknown task: " + args[0]);
      CLI::App* leaf = task->get_subcommand_no_throw(args[1]);
      if (leaf == nullptr) throw config_error("unknown action: " + args[1]);
      const std::vector<std::string> extra = config_tokens(leaf, config_path);
      args.insert(args.begin() + 2, extra.begin(), extra.end());
    }

    std::reverse(args.begin(), args.end());
    try {
      app.parse(args);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e);
      return code == 0 ? 0 : 2;
    }
  } catch (const config_error& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const io_error& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return 3;
  } catch (const numerical_error& e) {
    std::fprintf(stderr, "numerical error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 4;
  }
  return 0;
}
