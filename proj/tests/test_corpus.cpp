#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "s2kg/corpus.hpp"
#include "s2kg/error.hpp"
#include "s2kg/kb.hpp"
#include "s2kg/local_kb.hpp"
#include "s2kg/text.hpp"

using namespace s2kg;
namespace fs = std::filesystem;

namespace {

fs::path temp_file(const std::string& name) { return fs::temp_directory_path() / ("s2kg_test_" + name); }

Entity entity(const std::string& name, std::vector<std::pair<std::string, std::string>> pairs) {
  Entity e;
  e.name = name;
  e.entity_type = "业务";
  for (const auto& [k, v] : pairs) e.add_value(k, v);
  return e;
}

Corpus small_corpus() {
  SynthConfig c = default_synth_config();
  c.n_dialogs = 12;
  c.seed = 5;
  return synthesize_corpus(c);
}

}  // namespace

TEST(Text, SegmentsCjkPerCharacterAndAsciiRuns) {
  EXPECT_EQ(text::segment("套餐 abc"), (std::vector<std::string>{"套", "餐", "abc"}));
  EXPECT_EQ(text::count_tokens("剩余295M流量，好的"), 8u);
  EXPECT_EQ(text::join_tokens(text::segment("流量 ok 10元 abc")), "流量ok 10元abc");
  EXPECT_EQ(text::normalize_for_match("２９５ Ｍ"), "295M");
  EXPECT_EQ(text::trim("　 你好 "), "你好");
}

TEST(Text, MalformedUtf8DecodesToReplacement) {
  const std::string bad = "\xE6\xB5";
  EXPECT_EQ(text::code_points(bad), (std::vector<char32_t>{0xFFFD, 0xFFFD}));
}

TEST(Corpus, SynthesisIsDeterministic) {
  const auto a = small_corpus();
  const auto b = small_corpus();
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  SynthConfig c = default_synth_config();
  c.n_dialogs = 12;
  c.seed = 6;
  EXPECT_NE(to_json(synthesize_corpus(c)).dump(), to_json(a).dump());
}

TEST(Corpus, SynthesizedDialogsAreLabeledWithKbs) {
  SynthConfig c = default_synth_config();
  c.n_dialogs = 500;
  const auto corpus = synthesize_corpus(c);
  ASSERT_EQ(corpus.dialogs.size(), 500u);
  bool saw_balance = false;
  for (const auto& d : corpus.dialogs) {
    EXPECT_TRUE(d.labeled);
    ASSERT_TRUE(d.local_kb.has_value());
    for (const auto& e : d.local_kb->entities) {
      const auto* v = e.find_slot("套餐余量");
      if (!v) continue;
      for (const auto& t : d.turns) {
        for (const auto& value : *v) saw_balance |= t.system_response.find(value) != std::string::npos;
      }
    }
  }
  EXPECT_TRUE(saw_balance);
  EXPECT_NO_THROW(validate_corpus(corpus, SchemaMode::labeled));
}

TEST(Corpus, SaveLoadRoundTrip) {
  const auto corpus = small_corpus();
  const auto path = temp_file("corpus.json");
  save_corpus(corpus, path, Json{{"seed", 5}});
  EXPECT_EQ(load_corpus(path, SchemaMode::labeled), corpus);
  fs::remove(path);
  EXPECT_THROW(load_corpus(path, SchemaMode::labeled), NotFoundError);
}

TEST(Corpus, UnlabeledDialogWithIntentsIsRejected) {
  auto corpus = small_corpus();
  Json j = to_json(corpus);
  j["dialogs"][0]["labeled"] = false;
  j["dialogs"][0]["local_kb"] = nullptr;
  EXPECT_THROW(corpus_from_json(j, SchemaMode::unlabeled), ValidationError);
  EXPECT_THROW(corpus_from_json(j, SchemaMode::mixed), ValidationError);

  const Dialog stripped = strip_annotations(corpus.dialogs[0]);
  corpus.dialogs = {stripped};
  EXPECT_NO_THROW(validate_corpus(corpus, SchemaMode::unlabeled));
  EXPECT_THROW(validate_corpus(corpus, SchemaMode::labeled), ValidationError);
}

TEST(Corpus, MalformedJsonNamesTheLine) {
  const auto path = temp_file("bad.json");
  {
    std::ofstream out(path);
    out << "{\n  \"dialogs\": [\n  oops\n]}\n";
  }
  try {
    load_corpus(path, SchemaMode::labeled);
    FAIL() << "expected a parse error";
  } catch (const ParseError& e) {
    EXPECT_EQ(e.line(), 3u);
  }
  fs::remove(path);
}

TEST(Corpus, StatsHandCount) {
  Corpus c;
  Dialog d;
  d.dialog_id = "x";
  d.labeled = true;
  d.local_kb = LocalKB{};
  Turn t;
  t.user_utterance = "套餐多少钱";      // 5 tokens
  t.system_response = "58元 ok";
  d.turns = {t};
  c.dialogs = {d};
  const auto s = corpus_stats(c);
  EXPECT_EQ(s.n_dialogs, 1u);
  EXPECT_EQ(s.n_turns, 1u);
  // 58 | 元 | ok
  EXPECT_EQ(s.n_tokens, 8u);
  EXPECT_DOUBLE_EQ(s.avg_tokens_per_turn, 8.0);
}

TEST(Corpus, StatsDefiningEquations) {
  const auto c = small_corpus();
  const auto s = corpus_stats(c);
  EXPECT_EQ(s.n_turns, c.turn_count());
  EXPECT_DOUBLE_EQ(s.avg_turns_per_dialog, static_cast<double>(s.n_turns) / static_cast<double>(s.n_dialogs));
  EXPECT_DOUBLE_EQ(s.avg_tokens_per_turn, static_cast<double>(s.n_tokens) / static_cast<double>(s.n_turns));
}

TEST(Corpus, SplitKeepsUnlabeledGoldAligned) {
  SynthConfig c = default_synth_config();
  c.n_dialogs = 50;
  const auto split = split_synthetic(synthesize_corpus(c), 10, 15);
  EXPECT_EQ(split.eval.dialogs.size(), 10u);
  EXPECT_EQ(split.labeled.dialogs.size(), 15u);
  ASSERT_EQ(split.unlabeled.dialogs.size(), 25u);
  for (std::size_t i = 0; i < 25; ++i) {
    EXPECT_EQ(split.unlabeled.dialogs[i], strip_annotations(split.unlabeled_gold.dialogs[i]));
    EXPECT_FALSE(split.unlabeled.dialogs[i].labeled);
  }
  EXPECT_THROW(split_synthetic(synthesize_corpus(c), 40, 15), ValidationError);
}

TEST(LocalKb, SerializeFormat) {
  EXPECT_EQ(serialize_kb(LocalKB{}), "");
  LocalKB one;
  one.entities = {entity("十元流量包", {{"业务费用", "10元"}})};
  EXPECT_EQ(serialize_kb(one), "名称: 十元流量包，业务费用: 10元");
  LocalKB two = one;
  two.entities.push_back(entity("本机账户", {{"话费余额", "50元"}, {"套餐余量", "295M"}}));
  const auto s = serialize_kb(two);
  std::size_t seps = 0;
  for (std::size_t at = s.find("；"); at != std::string::npos; at = s.find("；", at + 1)) ++seps;
  EXPECT_EQ(seps, 1u);
  EXPECT_EQ(s, "名称: 十元流量包，业务费用: 10元；名称: 本机账户，话费余额: 50元，套餐余量: 295M");
}

TEST(LocalKb, SerializedLengthIsPairsPlusSeparators) {
  LocalKB kb;
  kb.entities = {entity("A包", {{"业务费用", "10元"}, {"有效期", "1个月"}}), entity("B包", {{"流量总量", "3G"}})};
  const auto pairs = kb_pairs(kb);
  std::size_t expect = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    expect += pairs[i].text.size();
    if (i > 0) expect += pairs[i].entity_index == pairs[i - 1].entity_index ? std::string("，").size() : std::string("；").size();
  }
  EXPECT_EQ(serialize_kb(kb).size(), expect);
}

TEST(LocalKb, JsonRoundTripAndValidation) {
  LocalKB kb;
  kb.entities = {entity("A包", {{"业务费用", "10元"}})};
  EXPECT_EQ(kb_from_json(to_json(kb), "kb", true), kb);
  LocalKB dup = kb;
  dup.entities.push_back(kb.entities[0]);
  EXPECT_THROW(validate_kb(dup, nullptr, "d1"), ValidationError);
  const std::vector<std::string> slots = {"有效期"};
  EXPECT_THROW(validate_kb(kb, &slots, "d1"), ValidationError);
}

TEST(PseudoKb, ExtractsCurrencyAfterTrigger) {
  Dialog d;
  d.dialog_id = "x";
  Turn t;
  t.user_utterance = "多少钱";
  t.system_response = "该套餐业务费用为10元";
  d.turns = {t};
  const auto kb = extract_pseudo_kb(d, default_slot_lexicon());
  ASSERT_EQ(kb.entities.size(), 1u);
  const auto* v = kb.entities[0].find_slot("业务费用");
  ASSERT_NE(v, nullptr);
  EXPECT_EQ(*v, (std::vector<std::string>{"10元"}));
}

TEST(PseudoKb, NoTriggerGivesEmptyKb) {
  Dialog d;
  d.dialog_id = "x";
  Turn t;
  t.user_utterance = "你好";
  t.system_response = "您好，请问有什么可以帮您";
  d.turns = {t};
  EXPECT_TRUE(extract_pseudo_kb(d, default_slot_lexicon()).empty());
}

TEST(PseudoKb, OutputValidatesAndRecallIsReasonable) {
  SynthConfig c = default_synth_config();
  c.n_dialogs = 200;
  const auto corpus = synthesize_corpus(c);
  Corpus stripped = corpus;
  for (auto& d : stripped.dialogs) d = strip_annotations(d);
  const auto lex = default_slot_lexicon();
  const auto kbs = extract_pseudo_kbs(stripped, lex);
  const auto slots = lex.slots();
  for (const auto& [id, kb] : kbs) EXPECT_NO_THROW(validate_kb(kb, &slots, id));
  const auto full = score_extraction(corpus, kbs);
  EXPECT_GE(full.recall(), 0.6);
  EXPECT_GE(full.precision(), 0.9);
  const auto weak = score_extraction(corpus, extract_pseudo_kbs(stripped, subset_lexicon(lex, 1)));
  EXPECT_LT(weak.recall(), full.recall());
}

TEST(PseudoKb, SaveLoadRoundTrip) {
  std::map<std::string, LocalKB> kbs;
  kbs["a"].entities = {entity("A包", {{"业务费用", "10元"}})};
  kbs["b"] = LocalKB{};
  const auto path = temp_file("pseudo.json");
  save_pseudo_kbs(kbs, path, Json{{"seed", 1}});
  EXPECT_EQ(load_pseudo_kbs(path), kbs);
  fs::remove(path);
}

TEST(Lexicon, JsonRoundTripAndSubset) {
  const auto lex = default_slot_lexicon();
  EXPECT_EQ(to_json(slot_lexicon_from_json(to_json(lex))), to_json(lex));
  const auto sub = subset_lexicon(lex, 1);
  for (const auto& r : sub.rules) EXPECT_EQ(r.triggers.size(), 1u);
  SlotLexicon bad = lex;
  bad.rules[0].pattern = "nope";
  EXPECT_THROW(bad.validate(), ValidationError);
}

TEST(IntentArguments, DirectMatchAndEmptyKb) {
  LocalKB kb;
  kb.entities = {entity("十元流量包", {{"业务费用", "10元"}}), entity("畅享套餐", {{"业务费用", "58元"}})};
  Turn t;
  t.user_utterance = "十元流量包多少钱";
  EXPECT_EQ(match_intent_arguments(t, {}, kb), (std::vector<std::string>{"十元流量包"}));
  EXPECT_TRUE(match_intent_arguments(t, {}, LocalKB{}).empty());
}

TEST(IntentArguments, LongerMatchRanksFirst) {
  LocalKB kb;
  kb.entities = {entity("夜间包", {}), entity("夜间流量包", {})};
  Turn t;
  t.user_utterance = "夜间流量包和夜间包哪个好";
  EXPECT_EQ(match_intent_arguments(t, {}, kb), (std::vector<std::string>{"夜间流量包", "夜间包"}));
}

TEST(IntentArguments, FallsBackToRecentHistory) {
  LocalKB kb;
  kb.entities = {entity("十元流量包", {}), entity("畅享套餐", {})};
  Turn old, recent, now;
  old.user_utterance = "十元流量包";
  recent.user_utterance = "畅享套餐怎么样";
  now.user_utterance = "它多少钱";
  EXPECT_EQ(match_intent_arguments(now, {old, recent}, kb), (std::vector<std::string>{"畅享套餐"}));
}
