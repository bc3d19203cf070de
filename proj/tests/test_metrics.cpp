#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "lrw/metrics.hpp"

using namespace lrw;

namespace {

std::vector<MarginRecord> records(const std::vector<double>& m) {
  std::vector<MarginRecord> r(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) r[i] = {i, m[i]};
  return r;
}

// Linear two-class classifier scoring class 1 by `scale` * x0.
Mlp axis_classifier(std::size_t dim, double scale) {
  Mlp m({dim, 2}, Activation::Relu);
  init_params(m, 0, InitScheme::Zeros);
  m.params().view(0)[0] = -scale;
  m.params().view(0)[1] = scale;
  return m;
}

Mlp constant_classifier(std::size_t dim, std::size_t cls) {
  Mlp m({dim, 2}, Activation::Relu);
  init_params(m, 0, InitScheme::Zeros);
  m.params().view(1)[cls] = 3.0;
  return m;
}

SeedScores scores(const std::string& role, const std::vector<double>& acc) {
  SeedScores s{role, {}};
  for (std::size_t i = 0; i < acc.size(); ++i) s.by_seed[100 + i] = acc[i];
  return s;
}

}  // namespace

TEST(Evaluate, PerfectClassifier) {
  auto d = make_gaussian_mixture(100, 2, 3, 40.0, 1);
  double class0_x0 = 0.0;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.labels[i] == 0) class0_x0 += d.features.at(i, 0);
  auto e = evaluate(axis_classifier(3, class0_x0 < 0 ? 1.0 : -1.0), d);
  EXPECT_EQ(e.accuracy, 1.0);
  ASSERT_EQ(e.margins.size(), d.size());
  for (const auto& r : e.margins) EXPECT_GT(r.margin, 0.0);
}

TEST(Evaluate, ConstantClassifierOnBalancedData) {
  auto d = make_gaussian_mixture(50, 2, 4, 2.0, 2);
  EXPECT_DOUBLE_EQ(evaluate(constant_classifier(4, 0), d).accuracy, 0.5);
  EXPECT_DOUBLE_EQ(evaluate(constant_classifier(4, 1), d).accuracy, 0.5);
}

TEST(Evaluate, AccuracyEqualsPositiveMarginFractionAndArgmax) {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 30; ++t) {
    auto d = make_gaussian_mixture(40, 3, 5, 1.5, 10 + t);
    Mlp m({5, 8, 3}, Activation::Tanh);
    init_params(m, 50 + t);
    auto e = evaluate(m, d);
    // Independent argmax accuracy from raw logits; strict ties count as errors.
    const Tensor logits = m.forward(d.features);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
      bool best = true;
      for (std::size_t c = 0; c < 3; ++c)
        if (c != d.labels[i] && logits.at(i, c) >= logits.at(i, d.labels[i])) best = false;
      ok += best;
      EXPECT_EQ(best, e.margins[i].margin > 0.0) << "instance " << i;
    }
    EXPECT_DOUBLE_EQ(e.accuracy, static_cast<double>(ok) / static_cast<double>(d.size()));
  }
}

TEST(Evaluate, ZeroMarginCountsAsError) {
  EXPECT_DOUBLE_EQ(accuracy_from_margins(records({0.0, 0.5, -0.1, 0.0})), 0.25);
  EXPECT_EQ(accuracy_from_margins({}), 0.0);
}

TEST(Evaluate, DimensionMismatchRejected) {
  auto d = make_gaussian_mixture(5, 2, 3, 1.0, 1);
  EXPECT_THROW(evaluate(constant_classifier(4, 0), d), std::invalid_argument);
}

TEST(PairedDelta, IdentityIsSpikeAtZero) {
  auto a = records({-0.7, 0.1, 0.9, 0.35});
  auto p = paired_margin_delta(a, a);
  EXPECT_EQ(p.mean, 0.0);
  EXPECT_EQ(p.median, 0.0);
  const auto zero_bin = p.histogram.bin_of(0.0);
  EXPECT_DOUBLE_EQ(p.histogram.edge(zero_bin), 0.0);
  EXPECT_EQ(p.histogram.counts[zero_bin], 4u);
  EXPECT_EQ(p.histogram.total(), 4u);
}

TEST(PairedDelta, ConstantShiftLandsInOneBin) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-0.6, 0.6);
  std::vector<double> b(200), a(200);
  for (std::size_t i = 0; i < b.size(); ++i) b[i] = u(rng), a[i] = b[i] + 0.3;
  auto p = paired_margin_delta(records(a), records(b));
  EXPECT_NEAR(p.mean, 0.3, 1e-12);
  const auto bin = p.histogram.bin_of(0.3);
  EXPECT_NEAR(p.histogram.edge(bin), 0.2, 1e-12);
  EXPECT_NEAR(p.histogram.edge(bin + 1), 0.4, 1e-12);
  EXPECT_EQ(p.histogram.counts[bin], 200u);
}

TEST(PairedDelta, MismatchRejected) {
  EXPECT_THROW(paired_margin_delta(records({0.1, 0.2}), records({0.1})), std::invalid_argument);
  auto a = records({0.1, 0.2});
  auto b = a;
  std::swap(b[0].instance_index, b[1].instance_index);
  EXPECT_THROW(paired_margin_delta(a, b), std::invalid_argument);
}

TEST(Histogram, HalfOpenEdges) {
  Histogram h(-2.0, 2.0, 0.2);
  EXPECT_EQ(h.bins(), 20u);
  for (std::size_t i = 0; i < h.bins(); ++i) {
    EXPECT_EQ(h.bin_of(h.edge(i)), i) << "edge " << h.edge(i);
    // just below the next edge stays in bin i
    EXPECT_EQ(h.bin_of(std::nextafter(h.edge(i + 1), -10.0)), i);
  }
  EXPECT_EQ(h.bin_of(0.2), 11u);
  EXPECT_EQ(h.bin_of(-5.0), 0u);
  EXPECT_EQ(h.bin_of(2.0), 19u);
  EXPECT_THROW(Histogram(1.0, 1.0, 0.2), std::invalid_argument);
  EXPECT_THROW(Histogram(0.0, 1.0, 0.0), std::invalid_argument);
}

TEST(Histogram, MassConservedForAnyWidth) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-3.0, 3.0), w(0.05, 1.5);
  for (int t = 0; t < 100; ++t) {
    const double width = w(rng);
    Histogram h(-2.0, 2.0, width);
    const std::size_t n = 1 + rng() % 300;
    for (std::size_t i = 0; i < n; ++i) h.add(u(rng));
    EXPECT_EQ(h.total(), n);
  }
}

TEST(Buckets, IdentityGivesZeroMeans) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<double> m(300);
  for (auto& v : m) v = u(rng);
  auto b = margin_gain_by_bucket(records(m), records(m));
  ASSERT_EQ(b.size(), 10u);
  std::size_t total = 0;
  for (const auto& s : b) {
    EXPECT_EQ(s.mean, 0.0);
    total += s.count;
  }
  EXPECT_EQ(total, 300u);
}

TEST(Buckets, BoundaryValueGoesUp) {
  auto b = margin_gain_by_bucket(records({0.3}), records({0.2}));
  for (const auto& s : b) {
    if (std::abs(s.lo - 0.2) < 1e-12) {
      EXPECT_EQ(s.count, 1u);
      EXPECT_NEAR(s.mean, 0.1, 1e-12);
      EXPECT_FALSE(s.sem.has_value());
    } else {
      EXPECT_EQ(s.count, 0u);
    }
  }
}

TEST(Buckets, FivePointStandardError) {
  // gains 0.1, 0.2, 0.3, 0.4, 0.5 within the [0, 0.2) ERM bucket: mean 0.3,
  // sample variance 0.025, SEM sqrt(0.025 / 5) = sqrt(0.005).
  std::vector<double> erm{0.0, 0.05, 0.1, 0.15, 0.19}, tgt(5);
  for (std::size_t i = 0; i < 5; ++i) tgt[i] = erm[i] + 0.1 * static_cast<double>(i + 1);
  auto b = margin_gain_by_bucket(records(tgt), records(erm));
  const auto& s = b[5];
  EXPECT_NEAR(s.lo, 0.0, 1e-12);
  EXPECT_EQ(s.count, 5u);
  EXPECT_NEAR(s.mean, 0.3, 1e-12);
  ASSERT_TRUE(s.sem.has_value());
  EXPECT_NEAR(*s.sem, std::sqrt(0.005), 1e-12);
  EXPECT_NEAR(*s.sem, 0.070711, 1e-6);
}

TEST(Buckets, EmptyBucketsReported) {
  auto b = margin_gain_by_bucket(records({0.9}), records({0.9}));
  EXPECT_EQ(b.size(), 10u);
  std::ostringstream os;
  write_buckets_csv(os, b);
  EXPECT_NE(os.str().find("-1,-0.8,0,0,\n"), std::string::npos) << os.str();
}

TEST(Ordering, HandBuiltListsHold) {
  auto v = ordering_check({scores("easy", {0.7}), scores("random", {0.8}), scores("hard", {0.9})});
  EXPECT_TRUE(v.holds);
  EXPECT_FALSE(v.tie);
  EXPECT_EQ(v.hard_beats_random, 1u);
  EXPECT_EQ(v.hard_beats_easy, 1u);
  EXPECT_FALSE(v.summaries[0].sem.has_value());
}

TEST(Ordering, IdenticalListsAreATie) {
  const std::vector<double> acc{0.8, 0.82, 0.79};
  auto v = ordering_check({scores("easy", acc), scores("random", acc), scores("hard", acc)});
  EXPECT_FALSE(v.holds);
  EXPECT_TRUE(v.tie);
  EXPECT_EQ(v.hard_beats_random, 0u);
}

TEST(Ordering, PresentationOrderIrrelevant) {
  std::vector<SeedScores> r{scores("hard", {0.9, 0.85}), scores("easy", {0.7, 0.75}), scores("random", {0.8, 0.9})};
  auto a = ordering_check(r);
  std::swap(r[0], r[2]);
  auto b = ordering_check(r);
  EXPECT_EQ(a.holds, b.holds);
  EXPECT_TRUE(a.holds);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_EQ(a.summaries[i].role, b.summaries[i].role);
    EXPECT_EQ(a.summaries[i].mean, b.summaries[i].mean);
  }
  EXPECT_EQ(a.summaries[0].role, "easy");
  EXPECT_EQ(a.hard_beats_random, 1u);
  EXPECT_EQ(a.hard_beats_easy, 2u);
  EXPECT_NEAR(*a.summaries[1].sem, 0.05, 1e-12);
}

TEST(Ordering, MismatchedSeedsRejected) {
  auto hard = scores("hard", {0.9, 0.8});
  hard.by_seed = {{100, 0.9}, {999, 0.8}};
  EXPECT_THROW(ordering_check({scores("easy", {0.7, 0.7}), scores("random", {0.8, 0.8}), hard}), std::invalid_argument);
  EXPECT_THROW(ordering_check({scores("easy", {0.7}), scores("random", {0.8})}), std::invalid_argument);
  EXPECT_THROW(ordering_check({scores("easy", {0.7}), scores("random", {0.8}), scores("hard", {0.9}),
                               scores("hard", {0.9})}),
               std::invalid_argument);
  EXPECT_THROW(ordering_check({scores("easy", {0.7}), scores("random", {0.8}), scores("other", {0.9})}),
               std::invalid_argument);
}

TEST(Report, AssembledFromEvaluations) {
  Evaluation ref{0.5, records({-0.2, 0.4})};
  Evaluation mod{1.0, records({0.3, 0.5})};
  auto r = make_report("lrwopt", mod, ref);
  EXPECT_EQ(r.model_tag, "lrwopt");
  EXPECT_EQ(r.test_accuracy, 1.0);
  EXPECT_NEAR(r.mean_margin, 0.4, 1e-12);
  EXPECT_NEAR(r.delta_mean, 0.3, 1e-12);
  EXPECT_NEAR(r.delta_median, 0.3, 1e-12);
  EXPECT_EQ(r.paired_margin_deltas.total(), 2u);
}

TEST(Report, CsvWriters) {
  std::ostringstream h, m;
  Histogram hist(-0.4, 0.4, 0.2);
  hist.add(0.2);
  hist.add(-0.4);
  write_histogram_csv(h, hist);
  EXPECT_EQ(h.str(), "lo,hi,count\n-0.4,-0.2,1\n-0.2,0,0\n0,0.2,0\n0.2,0.4,1\n");
  write_margins_csv(m, records({0.5, -0.25}));
  EXPECT_EQ(m.str(), "instance_index,margin\n0,0.5\n1,-0.25\n");
}

TEST(Report, PureFunctionOfInputs) {
  auto d = make_gaussian_mixture(30, 2, 3, 2.0, 7);
  Mlp m({3, 4, 2}, Activation::Relu);
  init_params(m, 9);
  auto a = evaluate(m, d), b = evaluate(m, d);
  EXPECT_EQ(a.accuracy, b.accuracy);
  EXPECT_EQ(a.margins, b.margins);
}
