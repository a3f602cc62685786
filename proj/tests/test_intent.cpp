#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "s2kg/error.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/intent_model.hpp"

using namespace s2kg;
namespace fs = std::filesystem;

namespace {

nn::TransformerConfig tiny_model() {
  nn::TransformerConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.d_ff = 32;
  c.encoder_layers = 1;
  c.decoder_layers = 1;
  c.max_len = 24;
  return c;
}

// Label 0 iff the text mentions 流量, label 1 iff it mentions 费用.
std::vector<ClsExample> separable_examples() {
  const std::vector<std::pair<std::string, std::vector<int>>> rows = {
      {"流量还有多少", {1, 0}}, {"查一下流量", {1, 0}},     {"流量够用吗", {1, 0}},   {"剩余流量", {1, 0}},
      {"流量包好用", {1, 0}},   {"费用是多少", {0, 1}},     {"查询费用", {0, 1}},     {"月费用多少", {0, 1}},
      {"费用贵吗", {0, 1}},     {"这个费用", {0, 1}},       {"流量和费用", {1, 1}},   {"费用流量都查", {1, 1}},
      {"流量费用多少", {1, 1}}, {"查流量查费用", {1, 1}},   {"你好", {0, 0}},         {"谢谢", {0, 0}},
      {"再见", {0, 0}},         {"好的", {0, 0}},           {"在吗", {0, 0}},         {"明白了", {0, 0}},
  };
  std::vector<ClsExample> out;
  for (const auto& [text, labels] : rows) {
    ClsExample e;
    e.input_text = text;
    e.labels = labels;
    out.push_back(e);
  }
  return out;
}

IntentClassifier tiny_classifier(const std::vector<ClsExample>& ex, std::uint64_t seed = 3) {
  std::vector<std::string> texts;
  for (const auto& e : ex) texts.push_back(e.input_text);
  return IntentClassifier::create(nn::build_vocab(texts, 1), {"询问流量", "询问费用"}, IntentTask::user, tiny_model(),
                                  seed);
}

std::vector<double> grid_step(double step) {
  std::vector<double> g;
  for (int k = 1; k * step < 1.0 - 1e-9; ++k) g.push_back(k * step);
  return g;
}

}  // namespace

TEST(Fgm, HandNormalization) {
  const std::vector<double> g = {3.0, 4.0};
  const auto r = fgm_perturb<double>(g, 1.0);
  EXPECT_NEAR(r[0], 0.6, 1e-12);
  EXPECT_NEAR(r[1], 0.8, 1e-12);
}

TEST(Fgm, ZeroCases) {
  const std::vector<double> g = {3.0, 4.0};
  EXPECT_EQ(fgm_perturb<double>(g, 0.0), (std::vector<double>{0.0, 0.0}));
  const std::vector<double> z = {0.0, 0.0, 0.0};
  EXPECT_EQ(fgm_perturb<double>(z, 1.0), z);
  EXPECT_THROW(fgm_perturb<double>(g, -1.0), ValidationError);
  const std::vector<double> bad = {1.0, NAN};
  EXPECT_THROW(fgm_perturb<double>(bad, 1.0), ValidationError);
}

TEST(Fgm, NormIsEpsilonAndDirectionIsGradient) {
  Rng rng(8);
  for (int t = 0; t < 200; ++t) {
    std::vector<double> g(1 + rng.below(40));
    for (auto& v : g) v = rng.normal(0.0, std::pow(10.0, rng.uniform() * 6 - 3));
    const double eps = 0.01 + 3.0 * rng.uniform();
    const auto r = fgm_perturb<double>(g, eps);
    double n = 0, gn = 0, dot = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      n += r[i] * r[i];
      gn += g[i] * g[i];
      dot += r[i] * g[i];
    }
    EXPECT_NEAR(std::sqrt(n), eps, 1e-9);
    EXPECT_NEAR(dot / (std::sqrt(n) * std::sqrt(gn)), 1.0, 1e-9);
  }
}

TEST(Thresholds, TwoExampleLowestPerfect) {
  const auto t = search_thresholds({{0.9}, {0.2}}, {{1}, {0}}, grid_step(0.05));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_NEAR(t[0], 0.25, 1e-12);
}

TEST(Thresholds, AllPositiveGoldPicksLowest) {
  const auto grid = default_threshold_grid();
  const auto t = search_thresholds({{0.3}, {0.7}, {0.01}}, {{1}, {1}, {1}}, grid);
  EXPECT_DOUBLE_EQ(t[0], grid.front());
}

TEST(Thresholds, DefaultGrid) {
  const auto g = default_threshold_grid();
  ASSERT_EQ(g.size(), 19u);
  EXPECT_NEAR(g.front(), 0.05, 1e-12);
  EXPECT_NEAR(g.back(), 0.95, 1e-12);
  EXPECT_NE(std::find_if(g.begin(), g.end(), [](double v) { return std::abs(v - 0.5) < 1e-12; }), g.end());
}

TEST(Thresholds, MatchesBruteForce) {
  Rng rng(21);
  const auto grid = default_threshold_grid();
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = oracle::random_threshold_instance(rng);
    EXPECT_EQ(search_thresholds(inst.scores, inst.gold, grid), oracle::brute_thresholds(inst, grid)) << trial;
  }
}

TEST(Thresholds, NoLabelF1DropsBelowItsHalfValue) {
  Rng rng(22);
  const auto grid = default_threshold_grid();
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = oracle::random_threshold_instance(rng);
    const auto t = search_thresholds(inst.scores, inst.gold, grid);
    for (std::size_t l = 0; l < t.size(); ++l) {
      EXPECT_GE(label_f1(inst.scores, inst.gold, l, t[l]), label_f1(inst.scores, inst.gold, l, 0.5));
    }
  }
}

TEST(Thresholds, BadInputs) {
  EXPECT_THROW(search_thresholds({{0.5}}, {{1}}, {}), ValidationError);
  EXPECT_THROW(search_thresholds({{0.5}}, {{1}}, {0.0, 0.5}), ValidationError);
  EXPECT_THROW(search_thresholds({{0.5}, {0.1}}, {{1}}, {0.5}), ShapeError);
}

TEST(Predict, DecisionRuleAndMonotonicity) {
  auto clf = tiny_classifier(separable_examples());
  clf.set_thresholds({0.5, 0.5});
  EXPECT_EQ(clf.decide({0.6, 0.4}), (std::vector<std::string>{"询问流量"}));
  EXPECT_TRUE(clf.decide({0.1, 0.4}).empty());
  clf.set_thresholds({0.7, 0.3});
  EXPECT_EQ(clf.decide({0.6, 0.4}), (std::vector<std::string>{"询问费用"}));

  Rng rng(5);
  for (int t = 0; t < 200; ++t) {
    const std::vector<double> s = {rng.uniform(), rng.uniform()};
    std::vector<double> th = {0.05 + 0.9 * rng.uniform(), 0.05 + 0.9 * rng.uniform()};
    clf.set_thresholds(th);
    const auto before = clf.decide(s);
    const std::size_t k = rng.below(2);
    th[k] = 0.05 + (th[k] - 0.05) * rng.uniform();
    clf.set_thresholds(th);
    const auto after = clf.decide(s);
    for (const auto& l : before) EXPECT_NE(std::find(after.begin(), after.end(), l), after.end());
  }
  EXPECT_THROW(clf.set_thresholds({0.5}), ValidationError);
  EXPECT_THROW(clf.set_thresholds({0.0, 0.5}), ValidationError);
}

TEST(TrainClassifier, SeparableSetReachesPerfectF1) {
  const auto ex = separable_examples();
  auto clf = tiny_classifier(ex);
  ClsTrainConfig cfg;
  cfg.epochs = 50;
  cfg.lr = 1e-2;
  cfg.batch = 4;
  train_classifier(clf, ex, cfg);
  clf.set_thresholds({0.5, 0.5});
  std::vector<std::vector<std::string>> pred, gold;
  for (const auto& e : ex) {
    pred.push_back(clf.predict(e.input_text));
    std::vector<std::string> g;
    for (std::size_t l = 0; l < 2; ++l) {
      if (e.labels[l]) g.push_back(clf.labels()[l]);
    }
    gold.push_back(g);
  }
  EXPECT_DOUBLE_EQ(intent_prf(pred, gold).f1, 1.0);
}

TEST(TrainClassifier, DeterministicUnderSeedAndFgmChangesTraining) {
  const auto ex = separable_examples();
  ClsTrainConfig cfg;
  cfg.epochs = 4;
  cfg.lr = 1e-2;
  cfg.batch = 4;
  auto a = tiny_classifier(ex);
  auto b = tiny_classifier(ex);
  train_classifier(a, ex, cfg);
  train_classifier(b, ex, cfg);
  EXPECT_EQ(a.scores(ex), b.scores(ex));

  auto adv = tiny_classifier(ex);
  cfg.fgm.enabled = true;
  train_classifier(adv, ex, cfg);
  EXPECT_NE(a.loss(ex[0]), adv.loss(ex[0]));

  EXPECT_THROW(train_classifier(a, {}, cfg), ValidationError);
  auto wrong = ex;
  wrong[0].labels = {1};
  EXPECT_THROW(train_classifier(a, wrong, cfg), ValidationError);
}

TEST(MlmPretrain, SingleSentenceOverfits) {
  std::vector<ClsExample> ex(1);
  ex[0].input_text = "您的套餐剩余流量还有很多";
  ex[0].labels = {0, 0};
  auto clf = tiny_classifier(ex);
  Rng rng(2);
  const auto ids = clf.encode_input(ex[0].input_text);
  MlmExample m = mask_tokens(ids, 0.3, clf.vocab(), rng);
  ASSERT_FALSE(m.masked_positions.empty());
  const double before = mlm_loss(clf, m);
  MlmConfig cfg;
  cfg.epochs = 200;
  cfg.batch = 1;
  cfg.lr = 1e-2;
  mlm_pretrain(clf, {m}, cfg);
  const double after = mlm_loss(clf, m);
  EXPECT_LT(after, 0.1) << "from " << before;
}

TEST(MlmPretrain, OnlyMaskedPositionsCount) {
  std::vector<ClsExample> ex(1);
  ex[0].input_text = "流量费用";
  ex[0].labels = {0, 0};
  const auto clf = tiny_classifier(ex);
  const auto ids = clf.encode_input(ex[0].input_text);
  auto tokens = ids;
  tokens[2] = clf.vocab().mask_id();
  auto other_ref = ids;
  other_ref[1] = clf.vocab().unk_id();
  other_ref[3] = clf.vocab().unk_id();
  EXPECT_DOUBLE_EQ(mlm_loss(clf, tokens, ids, {2}), mlm_loss(clf, tokens, other_ref, {2}));
}

TEST(IntentCheckpoint, RoundTrip) {
  const auto ex = separable_examples();
  auto clf = tiny_classifier(ex);
  ClsTrainConfig cfg;
  cfg.epochs = 2;
  train_classifier(clf, ex, cfg);
  clf.set_thresholds({0.35, 0.65});
  const auto path = fs::temp_directory_path() / "s2kg_test_intent.ckpt";
  clf.save(path, Json{{"note", "x"}});
  const auto back = IntentClassifier::load(path);
  EXPECT_EQ(back.thresholds(), clf.thresholds());
  EXPECT_EQ(back.labels(), clf.labels());
  EXPECT_EQ(back.scores(ex), clf.scores(ex));
  EXPECT_EQ(back.thresholds_json(), clf.thresholds_json());
  fs::remove(path);
}
