#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "disco/common.hpp"
#include "disco/sum.hpp"

namespace disco {

// Binary SUM container. Layout: magic "DOSUM1\0" (7 bytes), then little-endian
// u32 p, u32 f, u32 T, f64 lambda, T row-major p x f f64 matrices, and T+1
// f64 training RMSEs. Round-trips maps bitwise.
void save_sum(const std::string& path, const UpdateMapSequence& sum);
UpdateMapSequence load_sum(const std::string& path);

// ASCII PLY point clouds (vertex element with x y z properties). Points are
// columns; 2-row input is written with z = 0, loads always return 3 x N.
void save_ply(const std::string& path, const Mat& points);
Mat load_ply(const std::string& path);

// Comma-separated points, one per line; columns are points. Dimension is
// taken from the first data line.
void save_csv_points(const std::string& path, const Mat& points);
Mat load_csv_points(const std::string& path);

// 8-bit PGM images (P2 or P5 read, P5 written), scaled to [0,1] by /255.
// Images are H x W matrices; values are clamped to [0,1] on write.
void save_pgm(const std::string& path, const Mat& image);
Mat load_pgm(const std::string& path);

// 3x3 camera intrinsics as nine whitespace-separated numbers, row-major.
Eigen::Matrix3d load_intrinsics(const std::string& path);

// Experiment results: one metric per row.
struct ResultRow {
  double sweep_value = 0.0;
  std::int64_t trial_id = 0;
  std::string metric;
  double value = 0.0;
  double wall_ms = 0.0;
};

struct ResultTable {
  std::vector<ResultRow> rows;
  void add(double sweep_value, std::int64_t trial_id, const std::string& metric,
           double value) {
    rows.push_back({sweep_value, trial_id, metric, value, 0.0});
  }
};

// Header `sweep_value,trial_id,metric,value,wall_ms`; numbers printed with
// %.10g so identical runs produce byte-identical files.
void write_result_csv(const std::string& path, const ResultTable& table);

}  // namespace disco
