#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "lrw/datagen.hpp"

using namespace lrw;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) {
  auto dir = fs::temp_directory_path() / "lrw_test_datagen";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::size_t flips(const Dataset& a, const Dataset& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += a.labels[i] != b.labels[i];
  return n;
}

double standard_normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }

}  // namespace

TEST(GaussianMixture, ShapesAndBalance) {
  auto d = make_gaussian_mixture(30, 3, 5, 2.0, 1);
  EXPECT_EQ(d.size(), 90u);
  EXPECT_EQ(d.dim(), 5u);
  EXPECT_EQ(d.n_classes, 3u);
  EXPECT_EQ(d.class_counts(), (std::vector<std::size_t>{30, 30, 30}));
  EXPECT_NO_THROW(d.validate());
}

double mean_distance(const std::vector<std::vector<double>>& m, std::size_t a, std::size_t b) {
  double s = 0.0;
  for (std::size_t j = 0; j < m[a].size(); ++j) s += (m[a][j] - m[b][j]) * (m[a][j] - m[b][j]);
  return std::sqrt(s);
}

TEST(GaussianMixture, SimplexMeansArePairwiseAtSeparation) {
  for (std::size_t C : {2u, 3u, 5u}) {
    const auto m = mixture_means(C, 6, 3.0);
    for (std::size_t a = 0; a < C; ++a)
      for (std::size_t b = a + 1; b < C; ++b) EXPECT_NEAR(mean_distance(m, a, b), 3.0, 1e-12) << C;
  }
  EXPECT_NEAR(mean_distance(mixture_means(2, 1, 3.0), 0, 1), 3.0, 1e-12);
}

TEST(GaussianMixture, LowDimensionalMeansFormARegularPolygon) {
  const auto m = mixture_means(5, 2, 3.0);
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(mean_distance(m, c, (c + 1) % 5), 3.0, 1e-12);
}

TEST(GaussianMixture, DeterministicPerSeed) {
  EXPECT_EQ(make_gaussian_mixture(50, 2, 4, 1.5, 9), make_gaussian_mixture(50, 2, 4, 1.5, 9));
  EXPECT_FALSE(make_gaussian_mixture(50, 2, 4, 1.5, 9) == make_gaussian_mixture(50, 2, 4, 1.5, 10));
}

TEST(GaussianMixture, BayesAccuracyMatchesClosedForm) {
  // Two unit-variance classes with means at +-sep/2 on the first axis: the
  // optimal rule is the sign of that coordinate, with accuracy Phi(sep / 2).
  auto d = make_gaussian_mixture(100, 2, 2, 2.0, 7);
  std::size_t right = 0;
  for (std::size_t i = 0; i < d.size(); ++i) right += (d.features.at(i, 0) > 0.0) == (d.labels[i] == 1);
  const double empirical = static_cast<double>(right) / static_cast<double>(d.size());
  EXPECT_NEAR(empirical, standard_normal_cdf(1.0), 0.03);
  EXPECT_NEAR(empirical, 0.84, 0.03);
}

TEST(GaussianMixture, LargeSeparationIsLinearlySeparable) {
  auto d = make_gaussian_mixture(200, 2, 3, 40.0, 2);
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.features.at(i, 0) > 0.0, d.labels[i] == 1);
}

TEST(GaussianMixture, ZeroSeparationIsChance) {
  double total = 0.0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    auto d = make_gaussian_mixture(200, 2, 2, 0.0, s);
    std::size_t right = 0;
    for (std::size_t i = 0; i < d.size(); ++i) right += (d.features.at(i, 0) > 0.0) == (d.labels[i] == 1);
    total += static_cast<double>(right) / static_cast<double>(d.size());
  }
  EXPECT_NEAR(total / 20.0, 0.5, 0.02);
}

TEST(GaussianMixture, RejectsBadArguments) {
  EXPECT_THROW(make_gaussian_mixture(0, 2, 2, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(make_gaussian_mixture(5, 0, 2, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(make_gaussian_mixture(5, 2, 0, 1.0, 0), std::invalid_argument);
  EXPECT_THROW(make_gaussian_mixture(5, 2, 2, -1.0, 0), std::invalid_argument);
  EXPECT_THROW(make_gaussian_mixture(5, 2, 2, NAN, 0), std::invalid_argument);
}

TEST(TwoMoons, BalancedConstruction) {
  auto d = make_two_moons(100, 0.1, 3);
  EXPECT_EQ(d.class_counts(), (std::vector<std::size_t>{50, 50}));
  EXPECT_EQ(d.dim(), 2u);
}

TEST(TwoMoons, NoiselessArcsAreDisjoint) {
  auto d = make_two_moons(200, 0.0, 0);
  for (std::size_t i = 0; i < d.size(); ++i)
    for (std::size_t j = 0; j < d.size(); ++j) {
      if (d.labels[i] == d.labels[j]) continue;
      const bool same = d.features.at(i, 0) == d.features.at(j, 0) && d.features.at(i, 1) == d.features.at(j, 1);
      EXPECT_FALSE(same) << i << " " << j;
    }
  // Noiseless points lie on their unit circles.
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double cx = d.labels[i] == 0 ? 0.0 : 1.0, cy = d.labels[i] == 0 ? 0.0 : 0.5;
    EXPECT_NEAR(std::hypot(d.features.at(i, 0) - cx, d.features.at(i, 1) - cy), 1.0, 1e-12);
  }
}

TEST(TwoMoons, IdenticalBytesAcrossRuns) {
  const auto a = temp_file("moons_a.csv"), b = temp_file("moons_b.csv");
  save_csv(make_two_moons(300, 0.3, 42), a.string());
  save_csv(make_two_moons(300, 0.3, 42), b.string());
  EXPECT_EQ(slurp(a), slurp(b));
}

TEST(Noise, ZeroRateLeavesLabels) {
  auto d = make_gaussian_mixture(50, 2, 2, 1.0, 0);
  for (auto kind : {NoiseKind::UniformFlip, NoiseKind::InstanceDependent})
    EXPECT_EQ(inject_noise(d, {kind, 0.0, 5}).labels, d.labels);
}

TEST(Noise, UniformFlipCountIsExact) {
  auto d = make_gaussian_mixture(50, 2, 2, 1.0, 0);
  for (std::uint64_t s = 0; s < 20; ++s) EXPECT_EQ(flips(d, inject_noise(d, {NoiseKind::UniformFlip, 0.2, s})), 20u);
  auto d3 = make_gaussian_mixture(40, 3, 3, 1.0, 0);
  for (std::uint64_t s = 0; s < 10; ++s) EXPECT_EQ(flips(d3, inject_noise(d3, {NoiseKind::UniformFlip, 0.25, s})), 30u);
}

TEST(Noise, UniformFlipTargetsAreSpreadOverOtherClasses) {
  auto d = make_gaussian_mixture(1000, 3, 3, 1.0, 0);
  auto noisy = inject_noise(d, {NoiseKind::UniformFlip, 0.3, 1});
  std::size_t up = 0, down = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (noisy.labels[i] == d.labels[i]) continue;
    ((noisy.labels[i] + 3 - d.labels[i]) % 3 == 1 ? up : down)++;
  }
  EXPECT_NEAR(static_cast<double>(up) / static_cast<double>(up + down), 0.5, 0.05);
}

TEST(Noise, InstanceDependentMeanRateOverSeeds) {
  auto d = make_gaussian_mixture(100, 2, 2, 2.0, 3);
  double total = 0.0;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const double frac = static_cast<double>(flips(d, inject_noise(d, {NoiseKind::InstanceDependent, 0.3, s}))) /
                        static_cast<double>(d.size());
    total += frac;
  }
  const double mean = total / 100.0;
  EXPECT_GE(mean, 0.25);
  EXPECT_LE(mean, 0.35);
}

TEST(Noise, InstanceDependentFlipsConcentrateNearTheBoundary) {
  auto d = make_gaussian_mixture(500, 2, 2, 2.0, 4);
  auto noisy = inject_noise(d, {NoiseKind::InstanceDependent, 0.2, 8});
  double flipped = 0.0, kept = 0.0;
  std::size_t nf = 0, nk = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    const double dist = std::abs(d.features.at(i, 0));
    if (noisy.labels[i] != d.labels[i]) flipped += dist, ++nf;
    else kept += dist, ++nk;
  }
  ASSERT_GT(nf, 0u);
  EXPECT_LT(flipped / static_cast<double>(nf), kept / static_cast<double>(nk));
}

TEST(Noise, FeaturesAndClassCountUntouched) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const std::size_t C = 2 + rng() % 3;
    auto d = make_gaussian_mixture(10 + rng() % 40, C, 1 + rng() % 4, 1.5, rng());
    const double rate = static_cast<double>(rng() % 51) / 100.0;
    auto kind = rng() % 2 ? NoiseKind::UniformFlip : NoiseKind::InstanceDependent;
    auto noisy = inject_noise(d, {kind, rate, rng()});
    EXPECT_EQ(noisy.features, d.features);
    EXPECT_EQ(noisy.n_classes, d.n_classes);
    EXPECT_NO_THROW(noisy.validate());
    auto skewed = apply_skew(d, {1.0 + static_cast<double>(rng() % 5), rng()});
    EXPECT_EQ(skewed.n_classes, d.n_classes);
    for (std::size_t i = 0; i < skewed.size(); ++i) {
      bool found = false;
      for (std::size_t k = 0; k < d.size() && !found; ++k) {
        bool row = d.labels[k] == skewed.labels[i];
        for (std::size_t j = 0; j < d.dim() && row; ++j) row = d.features.at(k, j) == skewed.features.at(i, j);
        found = row;
      }
      EXPECT_TRUE(found);
    }
  }
}

TEST(Noise, RejectsRateAboveHalf) {
  auto d = make_gaussian_mixture(10, 2, 2, 1.0, 0);
  EXPECT_THROW(inject_noise(d, {NoiseKind::UniformFlip, 0.51, 0}), std::invalid_argument);
  EXPECT_THROW(inject_noise(d, {NoiseKind::UniformFlip, -0.1, 0}), std::invalid_argument);
}

TEST(Noise, KindNamesRoundTrip) {
  for (auto k : {NoiseKind::UniformFlip, NoiseKind::InstanceDependent}) EXPECT_EQ(noise_kind_from_string(to_string(k)), k);
  EXPECT_THROW(noise_kind_from_string("gaussian"), std::invalid_argument);
}

TEST(Skew, RatioOneIsIdentity) {
  auto d = make_gaussian_mixture(20, 3, 2, 1.0, 0);
  EXPECT_EQ(apply_skew(d, {1.0, 3}), d);
}

TEST(Skew, TwoClassesRatioTen) {
  auto d = make_gaussian_mixture(100, 2, 2, 1.0, 0);
  EXPECT_EQ(apply_skew(d, {10.0, 1}).class_counts(), (std::vector<std::size_t>{100, 10}));
}

TEST(Skew, FiveClassesRatioTwoHundred) {
  auto d = make_gaussian_mixture(400, 5, 5, 1.0, 0);
  const auto counts = apply_skew(d, {200.0, 1}).class_counts();
  std::vector<std::size_t> expected;
  for (int c = 0; c < 5; ++c) expected.push_back(static_cast<std::size_t>(std::llround(400.0 * std::pow(200.0, -c / 4.0))));
  EXPECT_EQ(counts, expected);
  EXPECT_EQ(*std::min_element(counts.begin(), counts.end()), 2u);
}

TEST(Skew, RejectsEmptiedClassAndBadRatio) {
  auto d = make_gaussian_mixture(10, 2, 2, 1.0, 0);
  EXPECT_THROW(apply_skew(d, {50.0, 0}), std::invalid_argument);
  EXPECT_THROW(apply_skew(d, {0.5, 0}), std::invalid_argument);
}

TEST(Csv, RoundTrip) {
  const auto p = temp_file("round.csv");
  auto d = inject_noise(make_gaussian_mixture(25, 3, 4, 1.3, 11), {NoiseKind::UniformFlip, 0.2, 1});
  save_csv(d, p.string());
  EXPECT_EQ(load_csv(p.string()), d);
}

TEST(Csv, EmptyFileHasNoRows) {
  const auto p = temp_file("empty.csv");
  std::ofstream(p).close();
  try {
    load_csv(p.string());
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find("no rows"), std::string::npos);
  }
}

TEST(Csv, HeaderOnlyHasNoRows) {
  const auto p = temp_file("header.csv");
  std::ofstream(p) << "f0,label\n";
  EXPECT_THROW(load_csv(p.string()), std::invalid_argument);
}

TEST(Csv, NonIntegerLabelNamesTheLine) {
  const auto p = temp_file("badlabel.csv");
  std::ofstream(p) << "f0,f1,label\n0.5,1.0,0\n0.2,0.1,1.5\n";
  try {
    load_csv(p.string());
    FAIL();
  } catch (const std::invalid_argument& e) {
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(Csv, MalformedRowsRejected) {
  const auto p = temp_file("bad.csv");
  std::ofstream(p) << "f0,f1,label\n0.5,0\n";
  EXPECT_THROW(load_csv(p.string()), std::invalid_argument);
  std::ofstream(p) << "f0,f1,label\n0.5,abc,0\n";
  EXPECT_THROW(load_csv(p.string()), std::invalid_argument);
  std::ofstream(p) << "x,label\n0.5,0\n";
  EXPECT_THROW(load_csv(p.string()), std::invalid_argument);
}

TEST(Csv, MissingFileIsIoError) {
  EXPECT_THROW(load_csv("/nonexistent/dir/data.csv"), IoError);
}

TEST(Csv, MinClassesWidensLabelSpace) {
  const auto p = temp_file("minc.csv");
  std::ofstream(p) << "f0,label\n0.5,0\n1.5,1\n";
  EXPECT_EQ(load_csv(p.string()).n_classes, 2u);
  EXPECT_EQ(load_csv(p.string(), 4).n_classes, 4u);
}
