#include "trtc/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <random>

#include <gtest/gtest.h>

using namespace trtc;
namespace fs = std::filesystem;

namespace {

MomentDataset make_ds(std::size_t Nx, std::size_t Nt, double L = 4.0, double dt = 1e-12) {
  MomentDataset d;
  d.x = cell_centers(L, Nx);
  d.t = uniform_times(dt, Nt);
  d.allocate(Nx, Nt);
  std::mt19937 rng(3);
  std::uniform_real_distribution<double> U(0.1, 2.0);
  for (auto& f : d.fields)
    for (double& v : f) v = U(rng);
  d.provenance.generator = "test";
  d.provenance.created = utc_now_iso();
  return d;
}

fs::path tmpdir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("trtc_ds_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Dataset, RoundTripBitExact) {
  auto d = make_ds(33, 7);
  d.fields[1][5] = -0.0;
  d.fields[2][6] = 1e-300;
  d.params.gamma = 3.7e8;
  d.provenance.notes["k"] = 4;
  const auto dir = tmpdir("rt");
  write_dataset(d, dir);
  const auto r = read_dataset(dir);
  EXPECT_EQ(r.x, d.x);
  EXPECT_EQ(r.t, d.t);
  for (int v = 0; v < kNumVars; ++v)
    EXPECT_EQ(0, std::memcmp(r.fields[v].data(), d.fields[v].data(), d.fields[v].size() * 8));
  EXPECT_EQ(r.params.gamma, 3.7e8);
  EXPECT_EQ(r.params.M_omega, d.params.M_omega);
  EXPECT_EQ(r.provenance.notes["k"], 4);
  EXPECT_EQ(r.content_hash(), d.content_hash());
  fs::remove_all(dir);
}

TEST(Dataset, ReadErrorsNameTheProblem) {
  const auto d = make_ds(8, 3);
  const auto dir = tmpdir("err");
  write_dataset(d, dir);
  fs::resize_file(dir / "S.bin", 8 * 8 * 3 - 8);
  try {
    read_dataset(dir);
    FAIL() << "expected throw";
  } catch (const DatasetError& e) {
    EXPECT_NE(std::string(e.what()).find("S.bin"), std::string::npos);
  }
  fs::remove(dir / "S.bin");
  EXPECT_THROW(read_dataset(dir), DatasetError);
  fs::remove(dir / "meta.json");
  EXPECT_THROW(read_dataset(dir), DatasetError);
  fs::remove_all(dir);
}

TEST(Dataset, SliceHalvesSpatialDomain) {
  const auto d = make_ds(256, 11);
  const auto s = slice(d, slice_for(d, 0.0, 2.0, 0.0, d.t.back()));
  EXPECT_NEAR(double(s.nx()), 128.0, 1.0);
  EXPECT_EQ(s.nt(), d.nt());
  EXPECT_LE(s.x.back(), 2.0);
  EXPECT_EQ(s.x.front(), d.x.front());
  EXPECT_EQ(s.at(Var::T, 5, 3), d.at(Var::T, 5, 3));
  EXPECT_EQ(s.provenance.parent_hash, d.content_hash());
  EXPECT_THROW(slice(d, {0, 300, 0, 1}), DatasetError);
}

TEST(Dataset, StrideResampleIsEveryOtherSample) {
  const auto d = make_ds(1024, 9);
  const auto r = resample(d, 512, 9);
  ASSERT_EQ(r.nx(), 512u);
  for (std::size_t i = 0; i < 512; ++i) EXPECT_EQ(r.at(Var::e, i, 4), d.at(Var::e, 2 * i, 4));
  EXPECT_EQ(r.provenance.notes["resample"]["mode"], "stride");
  // Node-aligned time grid: 9 -> 5 keeps every other time level.
  const auto q = resample(d, 1024, 5);
  ASSERT_EQ(q.nt(), 5u);
  EXPECT_EQ(q.t[2], d.t[4]);
}

TEST(Dataset, LinearResampleReproducesLinearFields) {
  auto d = make_ds(40, 6);
  for (std::size_t j = 0; j < d.nt(); ++j)
    for (std::size_t i = 0; i < d.nx(); ++i) d.at(Var::e, i, j) = 2.0 * d.x[i] + 3e12 * d.t[j] + 1.0;
  const auto r = resample(d, 29, 4);
  EXPECT_EQ(r.provenance.notes["resample"]["mode"], "linear");
  for (std::size_t j = 0; j < r.nt(); ++j)
    for (std::size_t i = 0; i < r.nx(); ++i)
      EXPECT_NEAR(r.at(Var::e, i, j), 2.0 * r.x[i] + 3e12 * r.t[j] + 1.0, 1e-12);
  EXPECT_THROW(resample(d, 29, 4, false), DatasetError);
}

TEST(Dataset, ValidateAndCsv) {
  auto d = make_ds(10, 3);
  EXPECT_NO_THROW(validate(d));
  d.at(Var::T, 2, 1) = -1.0;
  EXPECT_THROW(validate(d), DatasetError);
  EXPECT_NO_THROW(validate(d, false));
  const auto p = tmpdir("csv");
  write_csv(d, p);
  std::ifstream is(p);
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) ++n;
  EXPECT_EQ(n, 1 + 30u);
  fs::remove(p);
}

TEST(Dataset, Sha256KnownVector) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}
