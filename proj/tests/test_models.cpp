#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <random>
#include <sstream>

#include "lrw/models.hpp"

using namespace lrw;

namespace {

Tensor random_batch(std::size_t n, std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  Tensor t({n, d});
  for (auto& v : t.data()) v = nd(rng);
  return t;
}

Mlp seeded(std::vector<std::size_t> widths, Activation act, std::uint64_t seed) {
  Mlp m(std::move(widths), act);
  init_params(m, seed);
  return m;
}

}  // namespace

TEST(Mlp, RejectsDegenerateWidths) {
  EXPECT_THROW(Mlp({3}, Activation::Relu), std::invalid_argument);
  EXPECT_THROW(Mlp({3, 0, 2}, Activation::Relu), std::invalid_argument);
}

TEST(Mlp, ParameterLayout) {
  Mlp m({4, 8, 3}, Activation::Tanh);
  ASSERT_EQ(m.params().count(), 4u);
  EXPECT_EQ(m.params().spec(0).shape, (Shape{4, 8}));
  EXPECT_EQ(m.params().spec(1).shape, (Shape{1, 8}));
  EXPECT_EQ(m.params().spec(3).shape, (Shape{1, 3}));
  EXPECT_EQ(m.params().size(), 4u * 8 + 8 + 8 * 3 + 3);
}

TEST(ParamSet, ViewsAliasFlatStorage) {
  Mlp m({2, 3, 2}, Activation::Relu);
  auto& ps = m.params();
  ps.view(2)[1] = 7.5;
  EXPECT_EQ(ps.flat()[ps.spec(2).offset + 1], 7.5);
  ps.flat()[ps.spec(1).offset] = -2.0;
  EXPECT_EQ(ps.view(1)[0], -2.0);
  EXPECT_EQ(ps.tensor(1)[0], -2.0);
}

TEST(ClassifierForward, ZeroWeightsGiveZeroLogits) {
  Mlp m({5, 4, 3}, Activation::Relu);
  init_params(m, 0, InitScheme::Zeros);
  std::mt19937_64 rng(1);
  auto logits = classifier_forward(m, random_batch(6, 5, rng));
  EXPECT_EQ(logits.shape(), (Shape{6, 3}));
  for (double v : logits.data()) EXPECT_EQ(v, 0.0);
}

TEST(ClassifierForward, BatchOfOneEqualsRowOfBatch) {
  std::mt19937_64 rng(2);
  for (auto act : {Activation::Relu, Activation::Tanh}) {
    auto m = seeded({4, 16, 16, 3}, act, 5);
    auto x = random_batch(7, 4, rng);
    auto all = classifier_forward(m, x);
    for (std::size_t i = 0; i < 7; ++i) {
      Tensor row({1, 4}, std::vector<double>(x.data().begin() + static_cast<std::ptrdiff_t>(4 * i),
                                             x.data().begin() + static_cast<std::ptrdiff_t>(4 * i + 4)));
      auto one = classifier_forward(m, row);
      for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(one.at(0, c), all.at(i, c));
    }
  }
}

TEST(ClassifierForward, DeterministicForFixedSeed) {
  std::mt19937_64 rng(3);
  auto x = random_batch(5, 6, rng);
  EXPECT_EQ(classifier_forward(seeded({6, 8, 2}, Activation::Relu, 11), x),
            classifier_forward(seeded({6, 8, 2}, Activation::Relu, 11), x));
}

TEST(ClassifierForward, DimensionMismatchRejected) {
  auto m = seeded({3, 4, 2}, Activation::Relu, 0);
  EXPECT_THROW(classifier_forward(m, Tensor({2, 4})), std::invalid_argument);
}

TEST(MetaWeights, IdenticalInputsGiveUnitWeights) {
  MetaNet meta(3, {16, 16}, Activation::Relu);
  init_params(meta.net, 4);
  Tensor x({5, 3});
  for (std::size_t i = 0; i < 5; ++i) {
    x.at(i, 0) = 0.3;
    x.at(i, 1) = -1.2;
    x.at(i, 2) = 2.0;
  }
  for (double w : meta_weights(meta, x)) EXPECT_EQ(w, 1.0);
}

TEST(MetaWeights, RenormalisationExample) {
  const std::vector<double> raw{0.2, 0.6};
  auto w = renormalize(raw);
  EXPECT_NEAR(w[0], 0.5, 1e-15);
  EXPECT_NEAR(w[1], 1.5, 1e-15);
}

TEST(MetaWeights, PositiveWithUnitMeanForAnyParameters) {
  std::mt19937_64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const std::size_t d = 1 + rng() % 6, n = 1 + rng() % 40;
    MetaNet meta(d, {1 + rng() % 16}, t % 2 ? Activation::Relu : Activation::Tanh);
    std::normal_distribution<double> big(0.0, 1.0 + static_cast<double>(t));
    for (double& v : meta.net.params().flat()) v = big(rng);
    auto x = random_batch(n, d, rng, 3.0);
    auto raw = raw_meta_outputs(meta, x);
    auto w = meta_weights(meta, x);
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      EXPECT_GT(raw[i], 0.0);
      EXPECT_LT(raw[i], 1.0);
      EXPECT_GT(w[i], 0.0);
      s += w[i];
    }
    EXPECT_NEAR(s / static_cast<double>(n), 1.0, 1e-12);
  }
}

TEST(MetaWeights, EmptyBatchRejected) {
  MetaNet meta(2, {4}, Activation::Relu);
  EXPECT_THROW(renormalize(std::vector<double>{}), std::invalid_argument);
}

TEST(MetaWeights, TapeRenormalisationMatchesPlain) {
  ad::Tape t;
  auto raw = t.leaf(Tensor::vector({0.1, 0.4, 0.7}));
  auto w = renormalize(raw);
  auto plain = renormalize(std::vector<double>{0.1, 0.4, 0.7});
  for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(w.value()[i], plain[i]);
}

TEST(Splitter, ZeroWeightsGiveOneHalf) {
  SplitterNet s(4, 3, {16, 16}, Activation::Relu);
  init_params(s.net, 0, InitScheme::Zeros);
  std::mt19937_64 rng(5);
  auto p = split_probability(s, random_batch(6, 4, rng), std::vector<std::size_t>{0, 1, 2, 0, 1, 2});
  for (double v : p) EXPECT_EQ(v, 0.5);
}

TEST(Splitter, OutputsInsideOpenUnitInterval) {
  std::mt19937_64 rng(6);
  for (int t = 0; t < 30; ++t) {
    SplitterNet s(3, 2, {8}, Activation::Tanh);
    std::normal_distribution<double> nd(0.0, 2.0);
    for (double& v : s.net.params().flat()) v = nd(rng);
    std::vector<std::size_t> y(10);
    for (auto& v : y) v = rng() % 2;
    for (double p : split_probability(s, random_batch(10, 3, rng), y)) {
      EXPECT_GT(p, 0.0);
      EXPECT_LT(p, 1.0);
    }
  }
}

TEST(Splitter, LabelChangeMovesOutputUnlessLabelWeightsAreZero) {
  std::mt19937_64 rng(7);
  for (int t = 0; t < 20; ++t) {
    SplitterNet s(3, 2, {8, 8}, Activation::Tanh);
    init_params(s.net, rng());
    auto x = random_batch(4, 3, rng);
    const std::vector<std::size_t> y0{0, 0, 0, 0}, y1{1, 1, 1, 1};
    auto p0 = split_probability(s, x, y0), p1 = split_probability(s, x, y1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NE(p0[i], p1[i]);
    // Zero the first-layer rows that read the one-hot block.
    auto W0 = s.net.params().view(0);
    const std::size_t width = s.net.widths()[1];
    for (std::size_t r = 3; r < 5; ++r)
      for (std::size_t c = 0; c < width; ++c) W0[r * width + c] = 0.0;
    p0 = split_probability(s, x, y0);
    p1 = split_probability(s, x, y1);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(p0[i], p1[i]);
  }
}

TEST(Splitter, OneHotLayout) {
  auto x = Tensor::matrix({{1.0, 2.0}, {3.0, 4.0}});
  auto z = with_onehot(x, std::vector<std::size_t>{2, 0}, 3);
  EXPECT_EQ(z.raw(), (std::vector<double>{1, 2, 0, 0, 1, 3, 4, 1, 0, 0}));
  EXPECT_THROW(with_onehot(x, std::vector<std::size_t>{3, 0}, 3), std::invalid_argument);
}

TEST(Init, SameSeedSameParams) {
  EXPECT_EQ(seeded({5, 7, 2}, Activation::Relu, 3).params(), seeded({5, 7, 2}, Activation::Relu, 3).params());
  EXPECT_FALSE(seeded({5, 7, 2}, Activation::Relu, 3).params() == seeded({5, 7, 2}, Activation::Relu, 4).params());
}

TEST(Init, GlorotVariance) {
  // One 100x100 layer: 10^4 draws, target variance 2 / (fan_in + fan_out).
  auto m = seeded({100, 100}, Activation::Relu, 12);
  auto w = m.params().view(0);
  double s = 0.0, s2 = 0.0;
  for (double v : w) s += v, s2 += v * v;
  const double n = static_cast<double>(w.size());
  const double var = s2 / n - (s / n) * (s / n);
  EXPECT_NEAR(var, 2.0 / 200.0, 0.05 * 2.0 / 200.0);
  for (double b : m.params().view(1)) EXPECT_EQ(b, 0.0);
}

TEST(Sgd, ZeroLearningRateLeavesParams) {
  auto m = seeded({3, 4, 2}, Activation::Relu, 1);
  const std::vector<double> before(m.params().flat().begin(), m.params().flat().end());
  std::vector<double> g(m.params().size(), 0.7);
  sgd_step(m.params(), g, 0.0, 0.9);
  EXPECT_TRUE(std::equal(before.begin(), before.end(), m.params().flat().begin()));
}

TEST(Sgd, PlainStep) {
  auto m = seeded({3, 2}, Activation::Relu, 1);
  const std::vector<double> before(m.params().flat().begin(), m.params().flat().end());
  std::vector<double> g(m.params().size());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = 0.1 * static_cast<double>(i) - 0.3;
  sgd_step(m.params(), g, 0.5, 0.0);
  for (std::size_t i = 0; i < g.size(); ++i) EXPECT_DOUBLE_EQ(m.params().flat()[i], before[i] - 0.5 * g[i]);
}

TEST(Sgd, TwoMomentumStepsWithConstantGradient) {
  auto m = seeded({2, 2}, Activation::Relu, 1);
  const std::vector<double> before(m.params().flat().begin(), m.params().flat().end());
  const double lr = 0.1, mu = 0.9;
  std::vector<double> g(m.params().size(), 0.4);
  sgd_step(m.params(), g, lr, mu);
  sgd_step(m.params(), g, lr, mu);
  // v1 = g, v2 = mu g + g: displacement lr g (1 + (1 + mu)).
  for (std::size_t i = 0; i < g.size(); ++i)
    EXPECT_NEAR(before[i] - m.params().flat()[i], lr * 0.4 * (1.0 + 1.9), 1e-15);
}

TEST(Sgd, NonFiniteGradientNamesParameter) {
  auto m = seeded({2, 3, 2}, Activation::Relu, 1);
  std::vector<double> g(m.params().size(), 0.0);
  g[m.params().spec(2).offset + 1] = NAN;
  try {
    sgd_step(m.params(), g, 0.1, 0.0);
    FAIL();
  } catch (const TrainingAborted& e) {
    EXPECT_NE(std::string(e.what()).find("W1"), std::string::npos) << e.what();
  }
  EXPECT_THROW(sgd_step(m.params(), std::vector<double>(3, 0.0), 0.1, 0.0), std::invalid_argument);
}

TEST(Checkpoint, RoundTripIsExact) {
  auto m = seeded({4, 7, 3}, Activation::Tanh, 21);
  std::vector<double> g(m.params().size(), 1.0 / 3.0);
  sgd_step(m.params(), g, 0.123, 0.9);
  std::stringstream ss;
  write_mlp(ss, m);
  auto back = read_mlp(ss);
  EXPECT_EQ(back.widths(), m.widths());
  EXPECT_EQ(back.activation(), m.activation());
  EXPECT_EQ(back.params(), m.params());

  const auto path = (std::filesystem::temp_directory_path() / "lrw_test_models.params").string();
  save_mlp(m, path);
  EXPECT_EQ(load_mlp(path).params(), m.params());
}

TEST(Checkpoint, CorruptFilesRejected) {
  std::stringstream bad("lrw-mlp v2\n");
  EXPECT_THROW(read_mlp(bad), std::invalid_argument);
  auto m = seeded({2, 2}, Activation::Relu, 0);
  std::stringstream ss;
  write_mlp(ss, m);
  std::string text = ss.str();
  text = text.substr(0, text.size() / 2);
  std::stringstream cut(text);
  EXPECT_THROW(read_mlp(cut), std::invalid_argument);
  EXPECT_THROW(load_mlp("/nonexistent/x.params"), IoError);
}

TEST(HiddenFeatures, MatchesManualForward) {
  auto m = seeded({3, 5, 2}, Activation::Tanh, 9);
  std::mt19937_64 rng(1);
  auto x = random_batch(4, 3, rng);
  auto h = m.hidden_features(x);
  ASSERT_EQ(h.shape(), (Shape{4, 5}));
  const auto W = m.params().view(0), b = m.params().view(1);
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) {
      double z = b[j];
      for (std::size_t k = 0; k < 3; ++k) z += x.at(i, k) * W[k * 5 + j];
      EXPECT_NEAR(h.at(i, j), std::tanh(z), 1e-15);
    }
}
