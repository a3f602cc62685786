// SPDX-License-Identifier: Apache-2.0
#include "s2kg/kb.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <regex>

#include "s2kg/error.hpp"
#include "s2kg/text.hpp"

namespace s2kg {

namespace {

std::optional<std::string> pattern_regex(const std::string& pattern) {
  if (pattern == "currency") return R"(\d+(\.\d+)?元)";
  if (pattern == "data_quantity") return R"(\d+(\.\d+)?(MB|GB|KB|M|G|K))";
  if (pattern == "minutes") return R"(\d+分钟)";
  if (pattern == "months") return R"(\d+个月)";
  if (pattern == "number") return R"(\d+(\.\d+)?)";
  if (pattern.rfind("re:", 0) == 0) return pattern.substr(3);
  return std::nullopt;
}

}  // namespace

void SlotLexicon::validate() const {
  for (const auto& r : rules) {
    if (r.slot.empty()) throw ValidationError("lexicon", "rule with empty slot name");
    if (r.triggers.empty()) throw ValidationError(r.slot, "slot rule needs at least one trigger phrase");
    if (std::any_of(r.triggers.begin(), r.triggers.end(), [](const std::string& t) { return t.empty(); })) {
      throw ValidationError(r.slot, "empty trigger phrase");
    }
    const auto re = pattern_regex(r.pattern);
    if (!re) throw ValidationError(r.slot, "unknown value pattern '" + r.pattern + "'");
    try {
      std::regex check(*re);
    } catch (const std::regex_error& e) {
      throw ValidationError(r.slot, std::string("bad value regex: ") + e.what());
    }
  }
  for (const auto& p : entity_patterns) {
    try {
      std::regex check(p);
    } catch (const std::regex_error& e) {
      throw ValidationError("entity_patterns", std::string("bad regex '") + p + "': " + e.what());
    }
  }
  if (anonymous_entity.empty()) throw ValidationError("lexicon", "anonymous entity name must be non-empty");
}

std::vector<std::string> SlotLexicon::slots() const {
  std::vector<std::string> out;
  for (const auto& r : rules) out.push_back(r.slot);
  return out;
}

SlotLexicon default_slot_lexicon() {
  SlotLexicon lex;
  lex.rules = {
      {"业务费用", {"业务费用", "月费", "资费"}, "currency"},
      {"流量总量", {"流量总量", "通用流量", "提供流量"}, "data_quantity"},
      {"有效期", {"有效期", "可使用"}, "months"},
      {"套餐余量", {"套餐余量", "剩余流量", "还剩"}, "data_quantity"},
      {"话费余额", {"话费余额", "账户余额", "还有话费"}, "currency"},
      {"剩余通话", {"剩余通话", "可通话", "通话时间"}, "minutes"},
  };
  lex.entity_patterns = {
      "(十|二十|三十|五十)元流量包",
      "(畅享|飞享|全球通|动感地带)套餐",
      "(夜间|校园|假日|定向)流量包",
      "(视频会员|家庭共享)包",
      "随心看会员",
  };
  return lex;
}

Json to_json(const SlotLexicon& lexicon) {
  Json rules = Json::array();
  for (const auto& r : lexicon.rules) {
    rules.push_back(Json{{"slot", r.slot}, {"triggers", r.triggers}, {"pattern", r.pattern}});
  }
  return Json{{"rules", std::move(rules)},
              {"entity_patterns", lexicon.entity_patterns},
              {"anonymous_entity", lexicon.anonymous_entity}};
}

SlotLexicon slot_lexicon_from_json(const Json& j) {
  SlotLexicon lex;
  try {
    for (const auto& r : j.at("rules")) {
      lex.rules.push_back({r.at("slot").get<std::string>(), r.at("triggers").get<std::vector<std::string>>(),
                           r.at("pattern").get<std::string>()});
    }
    lex.entity_patterns = j.value("entity_patterns", std::vector<std::string>{});
    lex.anonymous_entity = j.value("anonymous_entity", lex.anonymous_entity);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(e.what(), 0, "slot lexicon");
  }
  lex.validate();
  return lex;
}

SlotLexicon load_slot_lexicon(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open slot lexicon " + path.string());
  try {
    return slot_lexicon_from_json(Json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(e.what(), 0, path.string());
  }
}

SlotLexicon subset_lexicon(const SlotLexicon& lexicon, std::size_t keep) {
  SlotLexicon out = lexicon;
  for (auto& r : out.rules) {
    if (r.triggers.size() > keep) r.triggers.resize(std::max<std::size_t>(keep, 1));
  }
  return out;
}

namespace {

std::vector<std::string> split_sentences(const std::string& s) {
  std::vector<std::string> out;
  std::string cur;
  for (std::size_t pos = 0; pos < s.size();) {
    const char32_t cp = text::next_code_point(s, pos);
    const bool stop = cp == U'。' || cp == U'！' || cp == U'？' || cp == U'；' || cp == '!' || cp == '?' ||
                      cp == ';' || cp == '\n';
    if (stop) {
      if (!cur.empty()) out.push_back(std::move(cur));
      cur.clear();
    } else {
      text::append_utf8(cur, cp);
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

struct CompiledRule {
  const SlotRule* rule;
  std::regex value;
};

}  // namespace

LocalKB extract_pseudo_kb(const Dialog& dialog, const SlotLexicon& lexicon) {
  std::vector<CompiledRule> rules;
  for (const auto& r : lexicon.rules) {
    const auto re = pattern_regex(r.pattern);
    if (!re) throw ValidationError(r.slot, "unknown value pattern '" + r.pattern + "'");
    rules.push_back({&r, std::regex(*re)});
  }
  std::vector<std::regex> entity_res;
  for (const auto& p : lexicon.entity_patterns) entity_res.emplace_back(p);

  LocalKB kb;
  auto entity_named = [&](const std::string& name) -> Entity& {
    for (auto& e : kb.entities) {
      if (e.name == name) return e;
    }
    kb.entities.push_back(Entity{name, name == lexicon.anonymous_entity ? "" : "业务", {}});
    return kb.entities.back();
  };

  for (const auto& turn : dialog.turns) {
    for (const auto& sentence : split_sentences(turn.system_response)) {
      std::string name;
      for (const auto& re : entity_res) {
        for (auto it = std::sregex_iterator(sentence.begin(), sentence.end(), re); it != std::sregex_iterator(); ++it) {
          if (it->str().size() > name.size()) name = it->str();
        }
      }
      if (name.empty()) name = lexicon.anonymous_entity;

      for (const auto& cr : rules) {
        for (const auto& trigger : cr.rule->triggers) {
          for (std::size_t at = sentence.find(trigger); at != std::string::npos; at = sentence.find(trigger, at + 1)) {
            std::smatch m;
            const auto begin = sentence.begin() + static_cast<std::ptrdiff_t>(at + trigger.size());
            if (std::regex_search(begin, sentence.end(), m, cr.value)) {
              entity_named(name).add_value(cr.rule->slot, m.str());
            }
          }
        }
      }
    }
  }
  // anonymous entity last so named entities keep mention order
  std::stable_partition(kb.entities.begin(), kb.entities.end(),
                        [&](const Entity& e) { return e.name != lexicon.anonymous_entity; });
  return kb;
}

std::map<std::string, LocalKB> extract_pseudo_kbs(const Corpus& corpus, const SlotLexicon& lexicon) {
  std::map<std::string, LocalKB> out;
  for (const auto& d : corpus.dialogs) out.emplace(d.dialog_id, extract_pseudo_kb(d, lexicon));
  return out;
}

namespace {

// Length (in code points) of the longest name/value of `e` found in `s`.
std::size_t longest_mention(const Entity& e, const std::string& s) {
  std::size_t best = 0;
  auto consider = [&](const std::string& needle) {
    if (!needle.empty() && s.find(needle) != std::string::npos) {
      best = std::max(best, text::length_in_code_points(needle));
    }
  };
  consider(e.name);
  for (const auto& [slot, values] : e.slots) {
    for (const auto& v : values) consider(v);
  }
  return best;
}

std::vector<std::string> rank_matches(const LocalKB& kb, const std::string& s) {
  std::vector<std::pair<std::size_t, std::size_t>> hits;  // (length, kb index)
  for (std::size_t i = 0; i < kb.entities.size(); ++i) {
    if (const std::size_t len = longest_mention(kb.entities[i], s); len > 0) hits.emplace_back(len, i);
  }
  std::stable_sort(hits.begin(), hits.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (const auto& [len, i] : hits) out.push_back(kb.entities[i].name);
  return out;
}

}  // namespace

std::vector<std::string> match_intent_arguments(const Turn& turn, const std::vector<Turn>& history,
                                                const LocalKB& kb) {
  if (kb.empty()) return {};
  if (auto current = rank_matches(kb, turn.user_utterance); !current.empty()) return current;
  for (auto it = history.rbegin(); it != history.rend(); ++it) {
    if (auto prior = rank_matches(kb, it->user_utterance + "\n" + it->system_response); !prior.empty()) return prior;
  }
  return {};
}

namespace {

// Substring match that does not start inside a longer number ("5元" is not
// mentioned by "25元").
bool mentions_value(const std::string& s, const std::string& v) {
  for (std::size_t at = s.find(v); at != std::string::npos; at = s.find(v, at + 1)) {
    if (at == 0) return true;
    const char prev = s[at - 1];
    if (!(prev >= '0' && prev <= '9') && prev != '.') return true;
  }
  return false;
}

}  // namespace

ExtractionScore score_extraction(const Corpus& gold, const std::map<std::string, LocalKB>& pseudo) {
  ExtractionScore score;
  auto has_pair = [](const LocalKB& kb, const std::string& slot, const std::string& value) {
    return std::any_of(kb.entities.begin(), kb.entities.end(), [&](const Entity& e) {
      const auto* vs = e.find_slot(slot);
      return vs && std::find(vs->begin(), vs->end(), value) != vs->end();
    });
  };
  for (const auto& d : gold.dialogs) {
    if (!d.local_kb) continue;
    const auto it = pseudo.find(d.dialog_id);
    const LocalKB empty;
    const LocalKB& predicted = it == pseudo.end() ? empty : it->second;
    std::string responses;
    for (const auto& t : d.turns) responses += t.system_response + "\n";
    for (const auto& e : d.local_kb->entities) {
      for (const auto& [slot, values] : e.slots) {
        for (const auto& v : values) {
          if (!mentions_value(responses, v)) continue;
          ++score.gold_pairs;
          if (has_pair(predicted, slot, v)) ++score.recovered;
        }
      }
    }
    for (const auto& e : predicted.entities) {
      for (const auto& [slot, values] : e.slots) {
        for (const auto& v : values) {
          ++score.predicted_pairs;
          if (has_pair(*d.local_kb, slot, v)) ++score.correct_pairs;
        }
      }
    }
  }
  return score;
}

void save_pseudo_kbs(const std::map<std::string, LocalKB>& kbs, const std::filesystem::path& path,
                     const Json& provenance) {
  Json j = Json::object();
  if (!provenance.is_null()) j["provenance"] = provenance;
  Json m = Json::object();
  for (const auto& [id, kb] : kbs) m[id] = to_json(kb);
  j["kbs"] = std::move(m);
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(1) << "\n";
}

std::map<std::string, LocalKB> load_pseudo_kbs(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open pseudo KB file " + path.string());
  Json j;
  try {
    j = Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.what(), 0, path.string());
  }
  if (!j.is_object() || !j.contains("kbs") || !j["kbs"].is_object()) {
    throw ParseError("expected an object with a 'kbs' map", 0, path.string());
  }
  std::map<std::string, LocalKB> out;
  for (auto it = j["kbs"].begin(); it != j["kbs"].end(); ++it) {
    out[it.key()] = kb_from_json(it.value(), "kbs." + it.key(), true);
  }
  return out;
}

}  // namespace s2kg
