#include "disco/io.hpp"

#include <bit>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

namespace disco {
namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

constexpr char kMagic[7] = {'D', 'O', 'S', 'U', 'M', '1', '\0'};
constexpr std::uint32_t kMaxP = 1u << 20;
constexpr std::uint32_t kMaxF = 1u << 27;
constexpr std::uint32_t kMaxT = 1u << 20;

std::string fmt(const char* spec, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), spec, v);
  return buf;
}

std::ofstream open_out(const std::string& path, bool binary) {
  std::ofstream out(path, binary ? std::ios::binary : std::ios::out);
  if (!out) throw io_error("cannot open for writing: " + path);
  return out;
}

std::ifstream open_in(const std::string& path, bool binary) {
  std::ifstream in(path, binary ? std::ios::binary : std::ios::in);
  if (!in) throw io_error("cannot open for reading: " + path);
  return in;
}

void read_exact(std::ifstream& in, void* dst, std::size_t bytes, const std::string& path) {
  in.read(static_cast<char*>(dst), static_cast<std::streamsize>(bytes));
  if (static_cast<std::size_t>(in.gcount()) != bytes)
    throw io_error("truncated DOSUM1 file: " + path);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string tok;
  std::stringstream ss(line);
  while (std::getline(ss, tok, ',')) {
    std::size_t a = tok.find_first_not_of(" \t\r");
    std::size_t b = tok.find_last_not_of(" \t\r");
    out.push_back(a == std::string::npos ? std::string() : tok.substr(a, b - a + 1));
  }
  return out;
}

double parse_double(const std::string& tok, const std::string& path) {
  try {
    std::size_t used = 0;
    double v = std::stod(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw io_error("bad number '" + tok + "' in " + path);
  }
}

}  // namespace

void save_sum(const std::string& path, const UpdateMapSequence& sum) {
  const int T = sum.T();
  if (sum.p <= 0 || sum.f <= 0) throw config_error("save_sum: empty sequence");
  if (static_cast<int>(sum.training_rmse.size()) != T + 1)
    throw config_error("save_sum: training_rmse must have T+1 entries");
  for (const Mat& D : sum.maps)
    if (D.rows() != sum.p || D.cols() != sum.f)
      throw config_error("save_sum: map dimensions disagree with header");

  auto out = open_out(path, true);
  out.write(kMagic, sizeof(kMagic));
  const std::uint32_t hdr[3] = {static_cast<std::uint32_t>(sum.p),
                                static_cast<std::uint32_t>(sum.f),
                                static_cast<std::uint32_t>(T)};
  out.write(reinterpret_cast<const char*>(hdr), sizeof(hdr));
  out.write(reinterpret_cast<const char*>(&sum.lambda), sizeof(double));
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  for (const Mat& D : sum.maps) {
    RowMajor rm = D;
    out.write(reinterpret_cast<const char*>(rm.data()),
              static_cast<std::streamsize>(sizeof(double) * rm.size()));
  }
  out.write(reinterpret_cast<const char*>(sum.training_rmse.data()),
            static_cast<std::streamsize>(sizeof(double) * sum.training_rmse.size()));
  if (!out) throw io_error("write failed: " + path);
}

UpdateMapSequence load_sum(const std::string& path) {
  auto in = open_in(path, true);
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (static_cast<std::size_t>(in.gcount()) != sizeof(magic) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw io_error("not a DOSUM1 file (bad magic): " + path);

  std::uint32_t hdr[3];
  read_exact(in, hdr, sizeof(hdr), path);
  if (hdr[0] == 0 || hdr[0] > kMaxP || hdr[1] == 0 || hdr[1] > kMaxF || hdr[2] > kMaxT)
    throw io_error("implausible DOSUM1 header: " + path);
  UpdateMapSequence sum;
  sum.p = static_cast<int>(hdr[0]);
  sum.f = static_cast<int>(hdr[1]);
  const int T = static_cast<int>(hdr[2]);
  read_exact(in, &sum.lambda, sizeof(double), path);

  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMajor rm(sum.p, sum.f);
  sum.maps.reserve(T);
  for (int t = 0; t < T; ++t) {
    read_exact(in, rm.data(), sizeof(double) * static_cast<std::size_t>(rm.size()), path);
    sum.maps.emplace_back(rm);
  }
  sum.training_rmse.resize(static_cast<std::size_t>(T) + 1);
  read_exact(in, sum.training_rmse.data(), sizeof(double) * sum.training_rmse.size(), path);
  return sum;
}

void save_ply(const std::string& path, const Mat& points) {
  if (points.rows() != 2 && points.rows() != 3)
    throw config_error("save_ply: points must have 2 or 3 rows");
  auto out = open_out(path, false);
  out << "ply\nformat ascii 1.0\nelement vertex " << points.cols()
      << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    const double z = points.rows() == 3 ? points(2, i) : 0.0;
    out << fmt("%.17g", points(0, i)) << ' ' << fmt("%.17g", points(1, i)) << ' '
        << fmt("%.17g", z) << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

Mat load_ply(const std::string& path) {
  auto in = open_in(path, false);
  std::string line;
  if (!std::getline(in, line) || line.substr(0, 3) != "ply")
    throw io_error("not a PLY file: " + path);

  std::int64_t n = -1;
  int xi = -1, yi = -1, zi = -1, props = 0;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ss(line);
    std::string word;
    ss >> word;
    if (word == "end_header") break;
    if (word == "comment" || word == "format") continue;
    if (word == "element") {
      std::string name;
      ss >> name;
      in_vertex = (name == "vertex");
      if (in_vertex && !(ss >> n)) throw io_error("bad vertex count in " + path);
    } else if (word == "property" && in_vertex) {
      std::string type, name;
      ss >> type >> name;
      if (name == "x") xi = props;
      if (name == "y") yi = props;
      if (name == "z") zi = props;
      ++props;
    }
  }
  if (n < 0 || xi < 0 || yi < 0 || zi < 0)
    throw io_error("PLY lacks vertex x y z properties: " + path);

  Mat pts(3, n);
  std::vector<double> row(static_cast<std::size_t>(props));
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw io_error("truncated PLY file: " + path);
    std::istringstream ss(line);
    for (int c = 0; c < props; ++c)
      if (!(ss >> row[static_cast<std::size_t>(c)]))
        throw io_error("bad PLY vertex line in " + path);
    pts(0, i) = row[static_cast<std::size_t>(xi)];
    pts(1, i) = row[static_cast<std::size_t>(yi)];
    pts(2, i) = row[static_cast<std::size_t>(zi)];
  }
  return pts;
}

void save_csv_points(const std::string& path, const Mat& points) {
  auto out = open_out(path, false);
  for (Eigen::Index i = 0; i < points.cols(); ++i) {
    for (Eigen::Index k = 0; k < points.rows(); ++k)
      out << (k ? "," : "") << fmt("%.17g", points(k, i));
    out << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

Mat load_csv_points(const std::string& path) {
  auto in = open_in(path, false);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t d = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    auto toks = split_csv_line(line);
    if (d == 0) d = toks.size();
    if (toks.size() != d) throw io_error("ragged CSV row in " + path);
    std::vector<double> vals(d);
    for (std::size_t k = 0; k < d; ++k) vals[k] = parse_double(toks[k], path);
    rows.push_back(std::move(vals));
  }
  if (rows.empty()) throw io_error("no points in " + path);
  Mat pts(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t k = 0; k < d; ++k)
      pts(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = rows[i][k];
  return pts;
}

void save_pgm(const std::string& path, const Mat& image) {
  if (image.size() == 0) throw config_error("save_pgm: empty image");
  auto out = open_out(path, true);
  out << "P5\n" << image.cols() << ' ' << image.rows() << "\n255\n";
  std::vector<unsigned char> buf(static_cast<std::size_t>(image.size()));
  std::size_t k = 0;
  for (Eigen::Index r = 0; r < image.rows(); ++r)
    for (Eigen::Index c = 0; c < image.cols(); ++c) {
      const double v = std::min(1.0, std::max(0.0, image(r, c)));
      buf[k++] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
  out.write(reinterpret_cast<const char*>(buf.data()),
            static_cast<std::streamsize>(buf.size()));
  if (!out) throw io_error("write failed: " + path);
}

Mat load_pgm(const std::string& path) {
  auto in = open_in(path, true);
  auto next_token = [&]() -> std::string {
    std::string tok;
    int ch;
    while ((ch = in.get()) != EOF) {
      if (ch == '#') {
        while ((ch = in.get()) != EOF && ch != '\n') {
        }
        continue;
      }
      if (std::isspace(ch)) {
        if (!tok.empty()) break;
        continue;
      }
      tok.push_back(static_cast<char>(ch));
    }
    if (tok.empty()) throw io_error("truncated PGM header: " + path);
    return tok;
  };

  const std::string magic = next_token();
  if (magic != "P2" && magic != "P5") throw io_error("not an 8-bit PGM: " + path);
  const long w = std::stol(next_token());
  const long h = std::stol(next_token());
  const long maxval = std::stol(next_token());
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw io_error("unsupported PGM header in " + path);

  Mat img(h, w);
  if (magic == "P5") {
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * static_cast<std::size_t>(h));
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size())
      throw io_error("truncated PGM data: " + path);
    std::size_t k = 0;
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) img(r, c) = buf[k++] / 255.0;
  } else {
    for (long r = 0; r < h; ++r)
      for (long c = 0; c < w; ++c) {
        long v = 0;
        if (!(in >> v)) throw io_error("truncated PGM data: " + path);
        img(r, c) = static_cast<double>(v) / 255.0;
      }
  }
  return img;
}

Eigen::Matrix3d load_intrinsics(const std::string& path) {
  auto in = open_in(path, false);
  Eigen::Matrix3d k;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      if (!(in >> k(r, c))) throw io_error("intrinsics file needs 9 numbers: " + path);
  return k;
}

void write_result_csv(const std::string& path, const ResultTable& table) {
  auto out = open_out(path, false);
  out << "sweep_value,trial_id,metric,value,wall_ms\n";
  for (const ResultRow& r : table.rows) {
    out << fmt("%.10g", r.sweep_value) << ',' << r.trial_id << ',' << r.metric << ','
        << fmt("%.10g", r.value) << ',' << fmt("%.10g", r.wall_ms) << '\n';
  }
  if (!out) throw io_error("write failed: " + path);
}

}  // namespace disco
