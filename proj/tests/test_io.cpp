#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <disco/io.hpp>
#include <disco/rng.hpp>

using namespace disco;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path dir;
  TempDir() {
    dir = fs::temp_directory_path() / ("disco_io_test_" + std::to_string(::getpid()));
    fs::create_directories(dir);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(dir, ec);
  }
  std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void spit(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  f << bytes;
}

UpdateMapSequence random_sum(Rng& rng, int p, int f, int T) {
  UpdateMapSequence sum;
  sum.p = p;
  sum.f = f;
  sum.lambda = 0.125;
  for (int t = 0; t < T; ++t)
    sum.maps.push_back(
        Mat::NullaryExpr(p, f, [&](Eigen::Index, Eigen::Index) { return rng.uniform(-3, 3); }));
  for (int t = 0; t <= T; ++t) sum.training_rmse.push_back(rng.uniform(0, 1));
  return sum;
}

}  // namespace

TEST_CASE("update sequences round-trip bitwise") {
  TempDir tmp;
  Rng rng(31);
  const UpdateMapSequence sum = random_sum(rng, 3, 5, 4);
  const std::string path = tmp / "seq.dosum";
  save_sum(path, sum);
  const UpdateMapSequence back = load_sum(path);
  CHECK(back.p == 3);
  CHECK(back.f == 5);
  CHECK(back.lambda == 0.125);
  REQUIRE(back.T() == 4);
  for (int t = 0; t < 4; ++t) CHECK((back.maps[t].array() == sum.maps[t].array()).all());
  REQUIRE(back.training_rmse.size() == 5);
  for (int t = 0; t <= 4; ++t) CHECK(back.training_rmse[t] == sum.training_rmse[t]);
}

TEST_CASE("sequence loader distinguishes failure modes") {
  TempDir tmp;
  Rng rng(37);
  const UpdateMapSequence sum = random_sum(rng, 2, 3, 2);
  const std::string good = tmp / "good.dosum";
  save_sum(good, sum);
  const std::string bytes = slurp(good);

  SUBCASE("missing file") {
    CHECK_THROWS_WITH_AS(load_sum(tmp / "absent.dosum"),
                         doctest::Contains("cannot open"), io_error);
  }
  SUBCASE("bad magic") {
    std::string corrupt = bytes;
    corrupt[0] = 'X';
    const std::string path = tmp / "magic.dosum";
    spit(path, corrupt);
    CHECK_THROWS_WITH_AS(load_sum(path), doctest::Contains("magic"), io_error);
  }
  SUBCASE("truncated payload") {
    const std::string path = tmp / "short.dosum";
    spit(path, bytes.substr(0, bytes.size() - 9));
    CHECK_THROWS_WITH_AS(load_sum(path), doctest::Contains("truncated"), io_error);
  }
  SUBCASE("implausible header") {
    // p = 0 cannot describe a real sequence
    std::string corrupt = bytes;
    corrupt[7] = corrupt[8] = corrupt[9] = corrupt[10] = '\0';
    const std::string path = tmp / "header.dosum";
    spit(path, corrupt);
    CHECK_THROWS_AS(load_sum(path), io_error);
  }
}

TEST_CASE("PLY round-trip") {
  TempDir tmp;
  Rng rng(41);
  const Mat pts = Mat::NullaryExpr(3, 17, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-5, 5);
  });
  const std::string path = tmp / "cloud.ply";
  save_ply(path, pts);
  const Mat back = load_ply(path);
  REQUIRE(back.rows() == 3);
  REQUIRE(back.cols() == 17);
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("2-row clouds gain a zero z") {
    const Mat flat = pts.topRows(2);
    save_ply(path, flat);
    const Mat b2 = load_ply(path);
    REQUIRE(b2.rows() == 3);
    CHECK((b2.topRows(2) - flat).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(b2.row(2).cwiseAbs().maxCoeff() == 0.0);
  }
  SUBCASE("malformed header") {
    spit(path, "ply\nformat ascii 1.0\nelement vertex banana\nend_header\n");
    CHECK_THROWS_AS(load_ply(path), io_error);
  }
}

TEST_CASE("CSV points round-trip") {
  TempDir tmp;
  Rng rng(43);
  const Mat pts = Mat::NullaryExpr(5, 9, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(-2, 2);
  });
  const std::string path = tmp / "pts.csv";
  save_csv_points(path, pts);
  const Mat back = load_csv_points(path);
  REQUIRE(back.rows() == 5);
  REQUIRE(back.cols() == 9);
  CHECK((back - pts).cwiseAbs().maxCoeff() < 1e-12);

  SUBCASE("ragged rows are rejected") {
    spit(path, "1,2\n3\n");
    CHECK_THROWS_AS(load_csv_points(path), io_error);
  }
}

TEST_CASE("PGM round-trip quantizes to 8 bits") {
  TempDir tmp;
  Rng rng(47);
  const Mat img = Mat::NullaryExpr(6, 8, [&](Eigen::Index, Eigen::Index) {
    return rng.uniform(0, 1);
  });
  const std::string path = tmp / "img.pgm";
  save_pgm(path, img);
  const Mat back = load_pgm(path);
  REQUIRE(back.rows() == 6);
  REQUIRE(back.cols() == 8);
  CHECK((back - img).cwiseAbs().maxCoeff() <= 0.5 / 255 + 1e-12);

  SUBCASE("out-of-range values clamp on write") {
    Mat wild(1, 3);
    wild << -0.5, 0.5, 1.5;
    save_pgm(path, wild);
    const Mat b = load_pgm(path);
    CHECK(b(0, 0) == 0.0);
    CHECK(b(0, 2) == 1.0);
  }
  SUBCASE("P2 text images load") {
    spit(path, "P2\n# comment\n3 2\n255\n0 128 255\n255 128 0\n");
    const Mat b = load_pgm(path);
    REQUIRE(b.rows() == 2);
    REQUIRE(b.cols() == 3);
    CHECK(b(0, 0) == 0.0);
    CHECK(b(0, 2) == 1.0);
    CHECK(b(1, 0) == 1.0);
    CHECK(b(0, 1) == doctest::Approx(128.0 / 255).epsilon(1e-12));
  }
}

TEST_CASE("intrinsics parse row-major") {
  TempDir tmp;
  const std::string path = tmp / "K.txt";
  spit(path, "800 0 320\n0 790.5 240\n0 0 1\n");
  const Eigen::Matrix3d K = load_intrinsics(path);
  CHECK(K(0, 0) == 800.0);
  CHECK(K(1, 1) == 790.5);
  CHECK(K(0, 2) == 320.0);
  CHECK(K(2, 2) == 1.0);
  SUBCASE("eight numbers are not enough") {
    spit(path, "800 0 320 0 790.5 240 0 0");
    CHECK_THROWS_AS(load_intrinsics(path), io_error);
  }
}

TEST_CASE("result CSV is stable text") {
  TempDir tmp;
  ResultTable table;
  table.add(0.5, 0, "do_success", 1.0);
  table.add(0.5, 1, "do_error", 0.0123456789123);
  const std::string path = tmp / "res.csv";
  write_result_csv(path, table);
  CHECK(slurp(path) ==
        "sweep_value,trial_id,metric,value,wall_ms\n"
        "0.5,0,do_success,1,0\n"
        "0.5,1,do_error,0.01234567891,0\n");
}
