#include <random>

#include <gtest/gtest.h>

#include "driftlab/ensemble.hpp"
#include "fixtures.hpp"

using namespace driftlab;
using namespace driftlab::ensemble;

namespace {

/// Learner that always predicts `label` with probability 1.
BaseLearner constant_learner(LearnerId id, int label) {
  BaseLearner l;
  l.id = id;
  l.training_ids = {0};
  l.model = LogisticModel::restore({label}, Eigen::MatrixXd::Zero(1, 2), Eigen::VectorXd::Zero(1),
                                   Eigen::VectorXd::Zero(2), Eigen::VectorXd::Ones(2));
  return l;
}

/// Learner predicting class 1 when x0 > 0 (sharp logistic boundary).
BaseLearner threshold_learner(LearnerId id, double sign) {
  BaseLearner l;
  l.id = id;
  l.training_ids = {0};
  Eigen::MatrixXd w(2, 2);
  w << -sign * 50, 0, sign * 50, 0;
  l.model = LogisticModel::restore({0, 1}, w, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                   Eigen::VectorXd::Ones(2));
  return l;
}

RowMatrix rows(std::initializer_list<std::pair<double, double>> pts) {
  RowMatrix m(static_cast<Eigen::Index>(pts.size()), 2);
  Eigen::Index i = 0;
  for (auto [a, b] : pts) m.row(i++) << a, b;
  return m;
}

std::span<const double> row(const RowMatrix& x, Eigen::Index i) {
  return {x.row(i).data(), static_cast<std::size_t>(x.cols())};
}

}  // namespace

TEST(Logistic, SeparableTrainingAccuracy) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  RowMatrix x(400, 2);
  std::vector<int> y(400);
  for (int i = 0; i < 400; ++i) {
    double a = u(rng), b = u(rng);
    // Keep a margin around the boundary a + 2b = 0.5.
    while (std::abs(a + 2 * b - 0.5) < 0.3) {
      a = u(rng);
      b = u(rng);
    }
    x.row(i) << a, b;
    y[static_cast<std::size_t>(i)] = a + 2 * b > 0.5 ? 1 : 0;
  }
  const LogisticModel m = LogisticModel::fit(x, y, {});
  int correct = 0;
  for (int i = 0; i < 400; ++i) correct += m.predict(row(x, i)).first == y[static_cast<std::size_t>(i)];
  EXPECT_GE(correct / 400.0, 0.99);
}

TEST(Logistic, MulticlassProbabilitiesSumToOne) {
  std::mt19937_64 rng(2);
  std::normal_distribution<double> g(0.0, 0.5);
  RowMatrix x(300, 2);
  std::vector<int> y(300);
  for (int i = 0; i < 300; ++i) {
    const int c = i % 3;
    x.row(i) << 4.0 * c + g(rng), g(rng);
    y[static_cast<std::size_t>(i)] = 7 + c;
  }
  const LogisticModel m = LogisticModel::fit(x, y, {});
  EXPECT_EQ(m.classes(), (std::vector<int>{7, 8, 9}));
  const auto p = m.probabilities(row(x, 5));
  EXPECT_NEAR(p.sum(), 1.0, 1e-12);
  EXPECT_EQ(m.predict(row(x, 5)).first, 9);
}

TEST(Logistic, SingleClassIsConstant) {
  const RowMatrix x = rows({{0, 0}, {1, 1}, {2, 5}});
  const std::vector<int> y{4, 4, 4};
  const LogisticModel m = LogisticModel::fit(x, y, {});
  EXPECT_TRUE(m.constant());
  const double probe[2] = {-100.0, 3.0};
  EXPECT_EQ(m.predict(probe), (std::pair<int, double>{4, 1.0}));
}

TEST(TrainLearner, HistogramAndWarning) {
  Dataset d({"a", "b"});
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    const double cx = i % 2 ? 20.0 : 0.0;
    d.append(std::vector<double>{cx + g(rng), g(rng)}, 0, i, i % 2);
  }
  const auto all = fixture::id_range(0, 200);
  const gmm::GmmState mixture = fixture::fit_mixture(d, all);
  ASSERT_EQ(mixture.components().size(), 2u);
  const auto learner = train_learner(d, mixture, fixture::id_range(0, 100), {}, 5, 9);
  EXPECT_EQ(learner.id, 5);
  EXPECT_EQ(learner.created_tick, 9);
  ASSERT_EQ(learner.component_histogram.size(), 2u);
  double total = 0.0;
  for (const auto& [c, f] : learner.component_histogram) {
    EXPECT_DOUBLE_EQ(f, 0.5);
    total += f;
  }
  EXPECT_NEAR(total, 1.0, 1e-9);
  EXPECT_FALSE(learner.warning);

  const std::vector<SampleId> evens{0, 2, 4, 6};
  const auto single = train_learner(d, mixture, evens, {}, 6, 9);
  EXPECT_TRUE(single.warning);
  EXPECT_TRUE(single.model.constant());

  EXPECT_THROW(train_learner(d, mixture, std::vector<SampleId>{}, {}, 7, 9), PreconditionError);
  EXPECT_THROW(train_learner(d, mixture, std::vector<SampleId>{9999}, {}, 7, 9), NotFoundError);
}

TEST(Predict, SingleMemberMatchesLearner) {
  LearnerSet set;
  set.add(threshold_learner(0, 1.0));
  EnsembleModel e;
  e.members = {{0, 1.0}};
  for (double v : {-0.3, -0.01, 0.02, 0.5}) {
    const double x[2] = {v, 0.0};
    const auto p = predict(e, set, x);
    const auto l = set.get(0).model.predict(x);
    EXPECT_EQ(p.predicted, l.first);
    EXPECT_DOUBLE_EQ(p.confidence, l.second);
  }
}

TEST(Predict, WeightedVoteHandArithmetic) {
  LearnerSet set;
  set.add(constant_learner(0, 1));
  set.add(constant_learner(1, 2));
  EnsembleModel e;
  e.members = {{0, 0.9}, {1, 0.1}};
  const double x[2] = {0.0, 0.0};
  const auto p = predict(e, set, x);
  EXPECT_EQ(p.predicted, 1);
  EXPECT_NEAR(p.confidence, 0.9, 1e-15);
  ASSERT_EQ(p.votes.size(), 2u);
  EXPECT_EQ(p.votes[1].predicted, 2);
}

TEST(Predict, EqualWeightsUnanimousGiveMeanProbability) {
  LearnerSet set;
  set.add(threshold_learner(0, 1.0));
  BaseLearner soft = threshold_learner(1, 1.0);
  Eigen::MatrixXd w(2, 2);
  w << -1, 0, 1, 0;
  soft.model = LogisticModel::restore({0, 1}, w, Eigen::VectorXd::Zero(2), Eigen::VectorXd::Zero(2),
                                      Eigen::VectorXd::Ones(2));
  set.add(soft);
  EnsembleModel e;
  e.members = {{0, 0.5}, {1, 0.5}};
  const double x[2] = {0.4, 0.0};
  const auto p = predict(e, set, x);
  EXPECT_EQ(p.predicted, 1);
  const double expected = 0.5 * (set.get(0).model.probabilities(x)[1] + set.get(1).model.probabilities(x)[1]);
  EXPECT_NEAR(p.confidence, expected, 1e-15);
}

TEST(Predict, TieGoesToSmallestClassAndEmptyThrows) {
  LearnerSet set;
  set.add(constant_learner(0, 3));
  set.add(constant_learner(1, 2));
  EnsembleModel e;
  e.members = {{0, 0.5}, {1, 0.5}};
  const double x[2] = {0.0, 0.0};
  EXPECT_EQ(predict(e, set, x).predicted, 2);
  EXPECT_THROW(predict(EnsembleModel{}, set, x), PreconditionError);
}

TEST(Dwm, WrongThreeTimesDecaysByOneEighth) {
  LearnerSet set;
  set.add(constant_learner(0, 1));
  set.add(constant_learner(1, 0));
  EnsembleModel e;
  e.members = {{0, 0.5}, {1, 0.5}};
  const RowMatrix x = rows({{0, 0}, {1, 1}, {2, 2}});
  const std::vector<int> y{0, 0, 0};
  const auto raw = decayed_weights(e, set, x, y);
  EXPECT_EQ(raw[0], 0.5 * 0.125);
  EXPECT_EQ(raw[0] / 0.5, 0.125);
  EXPECT_EQ(raw[1], 0.5);
}

TEST(Dwm, PerfectMembersKeepWeights) {
  LearnerSet set;
  set.add(threshold_learner(0, 1.0));
  set.add(threshold_learner(1, 1.0));
  EnsembleModel e;
  e.members = {{0, 0.3}, {1, 0.7}};
  const RowMatrix x = rows({{-1, 0}, {1, 0}});
  const std::vector<int> y{0, 1};
  const auto out = dwm_update(e, set, x, y, 1);
  EXPECT_NEAR(out.members[0].weight, 0.3, 1e-15);
  EXPECT_NEAR(out.members[1].weight, 0.7, 1e-15);
}

TEST(Dwm, PrunesLowWeightAndRenormalizes) {
  LearnerSet set;
  set.add(constant_learner(0, 0));
  set.add(constant_learner(1, 1));
  set.add(constant_learner(2, 0));
  EnsembleModel e;
  e.members = {{0, 0.4}, {1, 0.2}, {2, 0.4}};
  RowMatrix x(8, 2);
  x.setZero();
  const std::vector<int> y(8, 0);
  const auto out = dwm_update(e, set, x, y, 1);
  ASSERT_EQ(out.members.size(), 2u);
  EXPECT_FALSE(out.contains(1));
  EXPECT_NEAR(out.total_weight(), 1.0, 1e-15);
  EXPECT_NEAR(out.members[0].weight, 0.5, 1e-15);
}

TEST(Dwm, NeverEmptiesAndRespectsPeriod) {
  LearnerSet set;
  set.add(constant_learner(0, 1));
  EnsembleModel e;
  e.members = {{0, 1.0}};
  e.update_period = 5;
  RowMatrix x(20, 2);
  x.setZero();
  const std::vector<int> y(20, 0);
  const auto out = dwm_update(e, set, x, y, 10);
  ASSERT_EQ(out.members.size(), 1u);
  EXPECT_EQ(out.members[0].weight, 1.0);
  EXPECT_THROW(dwm_update(out, set, x, y, 12), ConflictError);
  EXPECT_NO_THROW(dwm_update(out, set, x, y, 15));
}

TEST(Dwm, WeightsStayNormalizedNonNegative) {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> lab(0, 1);
  LearnerSet set;
  for (int i = 0; i < 5; ++i) set.add(i % 2 ? constant_learner(i, 1) : threshold_learner(i, i % 4 ? 1.0 : -1.0));
  EnsembleModel e;
  for (int i = 0; i < 5; ++i) e.members.push_back({i, 0.2});
  std::normal_distribution<double> g(0.0, 1.0);
  for (Tick t = 1; t <= 30; ++t) {
    RowMatrix x(10, 2);
    std::vector<int> y(10);
    for (int i = 0; i < 10; ++i) {
      x.row(i) << g(rng), g(rng);
      y[static_cast<std::size_t>(i)] = lab(rng);
    }
    e = dwm_update(e, set, x, y, t);
    ASSERT_FALSE(e.members.empty());
    EXPECT_NEAR(e.total_weight(), 1.0, 1e-12);
    for (const auto& m : e.members) EXPECT_GE(m.weight, 0.0);
  }
}

TEST(Dwm, AdaptationBeatsFrozenModel) {
  const auto [frozen, adapted] = fixture::dwm_adaptation(7);
  EXPECT_GE(adapted - frozen, 0.10) << "frozen " << frozen << " adapted " << adapted;
}

TEST(ModelDistribution, Cases) {
  LearnerSet set;
  set.add(constant_learner(0, 1));
  set.add(constant_learner(1, 1));
  set.add(constant_learner(2, 0));
  const RowMatrix x = rows({{0, 0}, {1, 0}});

  EnsembleModel single;
  single.members = {{0, 1.0}};
  EXPECT_EQ(model_distribution(single, set, x).at(0), 1.0);

  EnsembleModel unanimous;
  unanimous.members = {{0, 0.7}, {1, 0.3}};
  const auto u = model_distribution(unanimous, set, x);
  EXPECT_NEAR(u.at(0), 0.7, 1e-15);
  EXPECT_NEAR(u.at(1), 0.3, 1e-15);

  // Equal weights: the tie goes to class 0, so learner 2 always agrees with
  // the ensemble and learner 0 never does.
  EnsembleModel split;
  split.members = {{0, 0.5}, {2, 0.5}};
  const auto s = model_distribution(split, set, x);
  EXPECT_EQ(s.at(0), 0.0);
  EXPECT_EQ(s.at(2), 1.0);
}

TEST(Performance, ConfidenceBins) {
  EXPECT_EQ(confidence_bin(1.0, 10), 9u);
  EXPECT_EQ(confidence_bin(0.0, 10), 0u);
  EXPECT_EQ(confidence_bin(0.1, 10), 1u);
  EXPECT_EQ(confidence_bin(0.55, 4), 2u);
}

TEST(Performance, PerfectPredictor) {
  LearnerSet set;
  set.add(threshold_learner(0, 1.0));
  EnsembleModel e;
  e.members = {{0, 1.0}};
  const RowMatrix x = rows({{-1, 0}, {-2, 0}, {1, 0}, {3, 0}, {2, 1}});
  const std::vector<int> y{0, 0, 1, 1, 1};
  const auto s = performance_summary(e, set, x, y, 10);
  EXPECT_EQ(s.accuracy, 1.0);
  std::size_t tp = 0;
  for (const auto& c : s.classes) {
    for (const auto& b : c.bins) {
      tp += b.true_positive;
      EXPECT_EQ(b.false_positive, 0u);
      EXPECT_EQ(b.false_negative, 0u);
    }
  }
  EXPECT_EQ(tp, 5u);
  // Constant learners have confidence exactly 1: the top bin.
  LearnerSet c;
  c.add(constant_learner(0, 1));
  const auto top = performance_summary(e, c, x, y, 10);
  for (const auto& cls : top.classes) {
    for (std::size_t b = 0; b + 1 < cls.bins.size(); ++b) {
      EXPECT_EQ(cls.bins[b].true_positive + cls.bins[b].false_positive + cls.bins[b].false_negative, 0u);
    }
  }
}

TEST(Performance, AlwaysWrongPredictor) {
  LearnerSet set;
  set.add(threshold_learner(0, -1.0));
  EnsembleModel e;
  e.members = {{0, 1.0}};
  const RowMatrix x = rows({{-1, 0}, {-2, 0}, {1, 0}, {3, 0}, {2, 1}});
  const std::vector<int> y{0, 0, 1, 1, 1};
  const auto s = performance_summary(e, set, x, y, 5);
  EXPECT_EQ(s.accuracy, 0.0);
  for (const auto& c : s.classes) {
    std::size_t tp = 0, fn = 0;
    for (const auto& b : c.bins) {
      tp += b.true_positive;
      fn += b.false_negative;
    }
    EXPECT_EQ(tp, 0u);
    EXPECT_EQ(fn, c.support);
  }
}

TEST(Performance, SupportIdentity) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  LearnerSet set;
  set.add(threshold_learner(0, 1.0));
  set.add(constant_learner(1, 2));
  EnsembleModel e;
  e.members = {{0, 0.6}, {1, 0.4}};
  RowMatrix x(100, 2);
  std::vector<int> y(100);
  std::uniform_int_distribution<int> lab(0, 2);
  for (int i = 0; i < 100; ++i) {
    x.row(i) << g(rng), g(rng);
    y[static_cast<std::size_t>(i)] = lab(rng);
  }
  const auto s = performance_summary(e, set, x, y, 10);
  for (const auto& c : s.classes) {
    std::size_t tp = 0, fn = 0;
    for (const auto& b : c.bins) {
      tp += b.true_positive;
      fn += b.false_negative;
    }
    EXPECT_EQ(tp + fn, c.support);
  }
  EXPECT_GE(s.accuracy, 0.0);
  EXPECT_LE(s.accuracy, 1.0);
}
