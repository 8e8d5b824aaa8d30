#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "debias/autodiff/ops.hpp"
#include "debias/corpus/synthetic.hpp"
#include "debias/judge/classifier.hpp"
#include "debias/judge/debias_head.hpp"
#include "debias/lm/train.hpp"
#include "../support/planted.hpp"

using namespace debias;
using namespace debias::judge;

namespace {

const debias::testing::PlantedFixture& fixture() { return debias::testing::planted_fixture(); }

ClassifierConfig judge_config() {
  ClassifierConfig c;
  c.vocab_size = fixture().vocab.size();
  c.epochs = 6;
  return c;
}

const JudgeTrainResult& trained_judge() {
  static const JudgeTrainResult r =
      train_judge(fixture().splits.train, fixture().splits.valid, fixture().splits.test, judge_config());
  return r;
}

std::vector<corpus::TokenId> repeat_markers(const std::vector<std::string>& markers, std::size_t n) {
  std::vector<corpus::TokenId> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(fixture().vocab.id(markers[i % markers.size()]));
  return ids;
}

}  // namespace

TEST(MacroF1, HandCounts) {
  const std::vector<int> pred{1, 1, 0, 0};
  const std::vector<int> actual{1, 0, 0, 0};
  // class 1: tp 1 fp 1 fn 0 -> 2/3; class 0: tp 2 fp 0 fn 1 -> 4/5
  EXPECT_NEAR(macro_f1(pred, actual), (2.0 / 3.0 + 0.8) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(macro_f1(actual, actual), 1.0);
}

TEST(Judge, PlantedCorpusReachesHighF1) {
  EXPECT_GE(trained_judge().report.test_macro_f1, 0.95);
}

TEST(Judge, PureMarkerTextsAreConfident) {
  const auto& clf = trained_judge().classifier;
  const auto& f = fixture();
  std::vector<std::string> top_c(f.corpus_config.conservative_markers.begin(),
                                 f.corpus_config.conservative_markers.begin() + 10);
  std::vector<std::string> top_l(f.corpus_config.liberal_markers.begin(), f.corpus_config.liberal_markers.begin() + 10);
  EXPECT_GT(clf.score(repeat_markers(top_c, 20)), 0.9);
  EXPECT_LT(clf.score(repeat_markers(top_l, 20)), 0.1);
}

TEST(Judge, ScoreIsPermutationInvariantAndRejectsEmpty) {
  const auto& clf = trained_judge().classifier;
  auto ids = fixture().splits.test.front().tokens;
  const double s = clf.score(ids);
  std::reverse(ids.begin(), ids.end());
  EXPECT_NEAR(clf.score(ids), s, 1e-12);
  EXPECT_THROW(clf.score(std::vector<corpus::TokenId>{}), std::invalid_argument);
}

TEST(Judge, BaseRateKeepsOrderAndRange) {
  const auto& clf = trained_judge().classifier;
  std::vector<std::vector<corpus::TokenId>> texts;
  for (std::size_t i = 0; i < 5; ++i) texts.push_back(fixture().splits.test[i].tokens);
  texts.push_back(texts[2]);
  const auto br = base_rate(clf, texts);
  ASSERT_EQ(br.size(), texts.size());
  EXPECT_EQ(br[2], br[5]);
  for (double v : br) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
  EXPECT_EQ(base_rate(clf, {texts[0]}).size(), 1u);
  EXPECT_EQ(base_rate(clf, texts), br);
}

TEST(Judge, RandomLabelsGiveChanceF1) {
  auto shuffled = fixture().splits;
  std::mt19937_64 rng(11);
  std::bernoulli_distribution coin(0.5);
  for (auto* part : {&shuffled.train, &shuffled.valid, &shuffled.test}) {
    for (auto& d : *part) d.label = coin(rng) ? corpus::Ideology::Conservative : corpus::Ideology::Liberal;
  }
  auto c = judge_config();
  c.epochs = 3;
  const auto r = train_judge(shuffled.train, shuffled.valid, shuffled.test, c);
  EXPECT_NEAR(r.report.test_macro_f1, 0.5, 0.1);
}

TEST(Judge, SingleClassTrainingIsRejected) {
  std::vector<corpus::Document> docs{{{3, 4}, corpus::Ideology::Liberal}};
  EXPECT_THROW(train_judge(docs, docs, docs, judge_config()), std::invalid_argument);
}

TEST(Judge, CheckpointRoundTrip) {
  const auto& clf = trained_judge().classifier;
  const auto path = std::filesystem::temp_directory_path() / "debias_judge_test.ckpt";
  clf.save(path);
  const auto back = BiasClassifier::load(path);
  const auto& ids = fixture().splits.test.front().tokens;
  EXPECT_EQ(back.score(ids), clf.score(ids));
  std::filesystem::remove(path);
}

class DebiasHeadTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    lm::LmConfig mc;
    mc.vocab_size = fixture().vocab.size();
    mc.context_length = 48;
    mc.width = 32;
    mc.layers = 1;
    lm::TrainConfig tc;
    tc.epochs = 8;
    tc.warmup_steps = 5;
    lm_ = new lm::TrainResult(lm::train_lm(fixture().splits.train, fixture().splits.valid, mc, tc));
  }
  static void TearDownTestSuite() { delete lm_; }
  static lm::TrainResult* lm_;
};
lm::TrainResult* DebiasHeadTest::lm_ = nullptr;

TEST_F(DebiasHeadTest, LearnsPlantedClassesWithoutTouchingTheLM) {
  std::vector<std::vector<double>> before;
  for (const auto* p : lm_->model.parameters()) before.emplace_back(p->data().begin(), p->data().end());
  HeadConfig hc;
  hc.width = 32;
  hc.epochs = 40;
  hc.learning_rate = 1e-2;
  hc.state = "mean";
  const auto r = train_debias_head(lm_->model, fixture().splits.train, fixture().splits.test, hc);
  EXPECT_GE(r.test_accuracy, 0.9);
  const auto after = lm_->model.parameters();
  for (std::size_t i = 0; i < after.size(); ++i) {
    EXPECT_TRUE(std::equal(before[i].begin(), before[i].end(), after[i]->data().begin()));
  }

  const auto& ids = fixture().splits.test.front().tokens;
  const auto fs = lm::forward_states(lm_->model, ids);
  const double p = r.head.probability(fs.accumulated);
  EXPECT_GE(p, 0.0);
  EXPECT_LE(p, 1.0);

  ad::Graph g;
  ad::Var state = g.leaf(ad::Tensor::row(fs.accumulated));
  ad::Var logits = r.head.logits_graph(g, state);
  ad::Var prob = ad::softmax(logits);
  EXPECT_NEAR(prob.value()[0] + prob.value()[1], 1.0, 1e-15);
  EXPECT_NEAR(prob.value()[1], p, 1e-12);
  g.backward(ad::sum(ad::slice_cols(ad::log_softmax(logits), 1, 1)));
  double norm = 0.0;
  for (double v : state.grad()) norm += v * v;
  EXPECT_GT(norm, 0.0);
}

TEST_F(DebiasHeadTest, NextTokenStateIsTheExpectedEmbedding) {
  const auto& ids = fixture().splits.test.front().tokens;
  const auto fs = lm::forward_states(lm_->model, ids);
  const auto& m = lm_->model;
  const std::size_t t = fs.hidden.shape()[0];
  const std::vector<double> last(fs.hidden.data().end() - static_cast<std::ptrdiff_t>(m.width()), fs.hidden.data().end());
  ASSERT_EQ(t, ids.size());
  const auto x = head_input(m, "next", last, fs.accumulated);
  ASSERT_EQ(x.size(), m.width());
  // Oracle: explicit softmax over the projection, then a weighted row sum.
  const auto& logits = fs.logits;
  double z = 0.0;
  for (double v : logits) z += std::exp(v);
  for (std::size_t i = 0; i < m.width(); ++i) {
    double e = 0.0;
    for (std::size_t w = 0; w < m.vocab_size(); ++w) e += std::exp(logits[w]) / z * m.output_projection().at(w, i);
    EXPECT_NEAR(x[i], e, 1e-12);
  }
  EXPECT_EQ(head_input(m, "mean", last, fs.accumulated), fs.accumulated);
  EXPECT_EQ(head_input(m, "last", last, fs.accumulated), last);
  EXPECT_THROW(head_input(m, "sum", last, fs.accumulated), std::invalid_argument);
}

TEST_F(DebiasHeadTest, NextTokenHeadSeparatesPrefixes) {
  HeadConfig hc;
  hc.width = 32;
  hc.epochs = 40;
  hc.learning_rate = 1e-2;
  const auto r = train_debias_head(lm_->model, fixture().splits.train, fixture().splits.test, hc);
  EXPECT_EQ(r.head.config().state, "next");
  EXPECT_GE(r.test_prefix_accuracy, 0.7);
}

TEST_F(DebiasHeadTest, UnknownStateIsRejected) {
  HeadConfig hc;
  hc.width = 32;
  hc.state = "sum";
  EXPECT_THROW(DebiasHead{hc}, std::invalid_argument);
}

TEST_F(DebiasHeadTest, WidthMustMatchLM) {
  HeadConfig hc;
  hc.width = 8;
  EXPECT_THROW(train_debias_head(lm_->model, fixture().splits.train, fixture().splits.test, hc),
               std::invalid_argument);
}
