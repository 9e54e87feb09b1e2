#include <gtest/gtest.h>

#include "driftlab/codec.hpp"
#include "fixtures.hpp"

using namespace driftlab;

TEST(BatchRefTest, Parses) {
  EXPECT_EQ(BatchRef::parse("training").kind, BatchRef::Kind::Training);
  const auto w = BatchRef::parse("window:42");
  EXPECT_EQ(w.kind, BatchRef::Kind::Window);
  EXPECT_EQ(w.end_tick, 42);
  const auto n = BatchRef::parse("picked");
  EXPECT_EQ(n.kind, BatchRef::Kind::Named);
  EXPECT_EQ(n.name, "picked");
  EXPECT_THROW(BatchRef::parse("window:4x"), PreconditionError);
}

TEST(SessionPersistence, RoundTripIsIdentical) {
  StreamSession s = fixture::labeled_session(60, 30, 15, 5.0, 8);
  fixture::project(s);
  const auto& l = s.train_learner(s.training_ids(), std::nullopt);
  s.set_ensemble(std::vector<ensemble::LearnerId>{l.id}, std::nullopt);
  s.mark_samples("recent", s.window().member_ids);
  s.set_revision(17);

  const std::string text = s.to_json();
  const StreamSession back = StreamSession::from_json(text);
  EXPECT_EQ(back.to_json(), text);
  EXPECT_EQ(back.revision(), 17u);
  EXPECT_EQ(back.drift_series(), s.drift_series());
  EXPECT_FALSE(back.projection_stale());
  EXPECT_TRUE(back.dataset() == s.dataset());
}

TEST(SessionPersistence, LoadedSessionContinuesLikeOriginal) {
  StreamSession a = fixture::labeled_session(60, 20, 100, 0.0, 9);
  StreamSession b = StreamSession::from_json(a.to_json());
  const std::vector<StreamRow> more{{{0.3, 0.1}, 21, std::nullopt, 0}, {{30.0, 30.0}, 22, std::nullopt, 1}};
  a.advance(more);
  b.advance(more);
  EXPECT_EQ(a.to_json(), b.to_json());
}

TEST(SessionPersistence, RejectsWrongSchemaTag) {
  auto j = codec::json::parse(fixture::labeled_session(20, 2, 10, 0.0, 1).to_json());
  j["schema"] = "something/9";
  EXPECT_THROW(StreamSession::from_json(j.dump()), SchemaError);
  EXPECT_THROW(StreamSession::from_json("{not json"), Error);
}

TEST(SessionProjection, StaleAfterNewData) {
  StreamSession s = fixture::labeled_session(40, 10, 100, 0.0, 2);
  EXPECT_TRUE(s.projection_stale());
  fixture::project(s);
  EXPECT_FALSE(s.projection_stale());
  s.advance({{{0.0, 0.0}, 11, std::nullopt, 0}});
  EXPECT_TRUE(s.projection_stale());
}

TEST(SessionDensity, DiffBetweenWindowsConservesMass) {
  SessionConfig config;
  config.window_length = 10;
  config.density.smoothed = false;
  StreamSession s = fixture::labeled_session(40, 20, 10, 4.0, 6, config);
  fixture::project(s);
  const auto d = s.density_diff(std::nullopt, std::nullopt);
  EXPECT_NEAR(d.values.sum(), 0.0, 1e-12);
  EXPECT_GT(d.newer_count, 0u);
  EXPECT_GT(d.older_count, 0u);

  const auto named = s.density_diff(BatchRef::parse("training"), BatchRef::parse("window:10"));
  EXPECT_EQ(named.values, -s.density_diff(BatchRef::parse("window:10"), BatchRef::parse("training")).values);
  EXPECT_THROW(s.density_diff(BatchRef::parse("nope"), std::nullopt), NotFoundError);
}

TEST(SessionDensity, NeedsProjection) {
  const StreamSession s = fixture::labeled_session(20, 5, 100, 0.0, 7);
  EXPECT_THROW(s.density_diff(std::nullopt, std::nullopt), NotFoundError);
}

TEST(SessionEnsemble, TrainSetUpdateAndCompare) {
  StreamSession s = fixture::labeled_session(80, 40, 0, 0.0, 12);
  const auto first = s.train_learner(s.training_ids(), std::nullopt).id;
  const auto second = s.train_learner(s.window().member_ids, std::nullopt).id;
  EXPECT_NE(first, second);
  s.set_ensemble(std::vector<ensemble::LearnerId>{first, second}, std::vector<double>{3.0, 1.0});
  EXPECT_DOUBLE_EQ(s.ensemble().members[0].weight, 0.75);
  EXPECT_FALSE(s.previous_ensemble().has_value());

  s.update_ensemble(s.window().member_ids);
  ASSERT_TRUE(s.previous_ensemble().has_value());
  const auto report = s.performance(s.window().member_ids, true);
  ASSERT_TRUE(report.previous.has_value());
  EXPECT_GE(report.current.accuracy, 0.9);

  const auto dist = s.model_distribution(s.window().member_ids);
  double total = 0.0;
  for (const auto& [id, v] : dist) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(SessionEnsemble, Preconditions) {
  StreamSession s = fixture::labeled_session(20, 5, 100, 0.0, 13);
  EXPECT_THROW(s.update_ensemble(s.window().member_ids), PreconditionError);
  EXPECT_THROW(s.set_ensemble(std::vector<ensemble::LearnerId>{99}, std::nullopt), PreconditionError);
  EXPECT_THROW(s.train_learner(std::vector<SampleId>{}, std::nullopt), PreconditionError);
  const auto id = s.train_learner(s.training_ids(), std::nullopt).id;
  EXPECT_THROW(s.set_ensemble(std::vector<ensemble::LearnerId>{id, id}, std::nullopt), PreconditionError);
  EXPECT_THROW(s.set_ensemble(std::vector<ensemble::LearnerId>{id}, std::vector<double>{0.0}), PreconditionError);
  EXPECT_THROW(s.mark_samples("training", s.training_ids()), PreconditionError);
}

TEST(SessionMixture, MergeThroughSession) {
  StreamSession s = fixture::labeled_session(80, 10, 100, 0.0, 14);
  ASSERT_EQ(s.gmm().components().size(), 2u);
  std::vector<ComponentId> ids;
  for (const auto& c : s.gmm().components()) ids.push_back(c.id());
  const auto outcome = s.merge_components(ids);
  EXPECT_EQ(s.gmm().components().size(), 1u);
  EXPECT_EQ(s.gmm().components()[0].id(), outcome.merged_id);
  EXPECT_FALSE(outcome.changed.empty());
}
