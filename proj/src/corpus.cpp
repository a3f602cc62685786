// SPDX-License-Identifier: Apache-2.0
#include "s2kg/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <spdlog/spdlog.h>

#include "s2kg/error.hpp"
#include "s2kg/random.hpp"
#include "s2kg/text.hpp"

namespace s2kg {

std::size_t Corpus::turn_count() const {
  std::size_t n = 0;
  for (const auto& d : dialogs) n += d.turns.size();
  return n;
}

const Dialog* Corpus::find(const std::string& dialog_id) const {
  for (const auto& d : dialogs) {
    if (d.dialog_id == dialog_id) return &d;
  }
  return nullptr;
}

SchemaMode parse_schema_mode(std::string_view s) {
  if (s == "labeled") return SchemaMode::labeled;
  if (s == "unlabeled") return SchemaMode::unlabeled;
  if (s == "mixed") return SchemaMode::mixed;
  throw Error("unknown schema mode '" + std::string(s) + "' (expected labeled|unlabeled|mixed)");
}

namespace {

bool in_vocab(const std::vector<std::string>& vocab, const std::string& label) {
  return std::find(vocab.begin(), vocab.end(), label) != vocab.end();
}

}  // namespace

void validate_corpus(const Corpus& corpus, SchemaMode mode) {
  std::set<std::string> ids;
  for (const auto& d : corpus.dialogs) {
    const std::string& id = d.dialog_id;
    if (id.empty()) throw ValidationError("<empty id>", "dialog_id must be non-empty");
    if (!ids.insert(id).second) throw ValidationError(id, "duplicate dialog_id");
    if (mode == SchemaMode::labeled && !d.labeled) throw ValidationError(id, "unlabeled dialog in a labeled corpus");
    if (mode == SchemaMode::unlabeled && d.labeled) throw ValidationError(id, "labeled dialog in an unlabeled corpus");
    if (d.turns.empty()) throw ValidationError(id, "dialog has no turns");

    bool any_annotation = false;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      const Turn& t = d.turns[i];
      const std::string at = "turn " + std::to_string(i);
      if (t.turn_index != i) throw ValidationError(id, at + ": turn_index values must be consecutive from 0");
      if (text::trim(t.user_utterance).empty()) throw ValidationError(id, at + ": empty user utterance");
      if (text::trim(t.system_response).empty()) throw ValidationError(id, at + ": empty system response");
      if (!t.user_intents.empty() || !t.system_intents.empty()) any_annotation = true;
      if (!d.labeled && (!t.user_intents.empty() || !t.system_intents.empty())) {
        throw ValidationError(id, at + ": unlabeled dialog carries intent annotations");
      }
      for (const auto& label : t.user_intents) {
        if (!in_vocab(corpus.user_intent_vocab, label)) {
          throw ValidationError(id, at + ": user intent '" + label + "' not in user_intent_vocab");
        }
      }
      for (const auto& label : t.system_intents) {
        if (!in_vocab(corpus.system_intent_vocab, label)) {
          throw ValidationError(id, at + ": system intent '" + label + "' not in system_intent_vocab");
        }
      }
    }
    if (d.labeled) {
      if (!d.local_kb) throw ValidationError(id, "labeled dialog without local_kb");
      if (!any_annotation) throw ValidationError(id, "labeled dialog without any intent annotation");
    }
    if (d.local_kb) validate_kb(*d.local_kb, &corpus.slot_vocab, id);
  }
}

// ---- JSON ------------------------------------------------------------------

namespace {

void check_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& where, bool strict) {
  for (const auto& [key, value] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      if (strict) throw ParseError("unknown field '" + key + "'", 0, where);
      spdlog::warn("{}: ignoring unknown field '{}'", where, key);
    }
  }
}

const Json& require(const Json& obj, const char* key, const std::string& where) {
  if (!obj.contains(key)) throw ParseError(std::string("missing field '") + key + "'", 0, where);
  return obj[key];
}

std::string get_string(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_string()) throw ParseError(std::string("field '") + key + "' must be a string", 0, where);
  return v.get<std::string>();
}

std::vector<std::string> get_strings(const Json& obj, const char* key, const std::string& where) {
  const Json& v = require(obj, key, where);
  if (!v.is_array()) throw ParseError(std::string("field '") + key + "' must be an array of strings", 0, where);
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ParseError(std::string("field '") + key + "' must be an array of strings", 0, where);
    out.push_back(e.get<std::string>());
  }
  return out;
}

Dialog dialog_from_json(const Json& j, const std::string& where, bool strict) {
  if (!j.is_object()) throw ParseError("dialog must be an object", 0, where);
  check_keys(j, {"dialog_id", "labeled", "local_kb", "turns"}, where, strict);
  Dialog d;
  d.dialog_id = get_string(j, "dialog_id", where);
  const Json& labeled = require(j, "labeled", where);
  if (!labeled.is_boolean()) throw ParseError("'labeled' must be a boolean", 0, where);
  d.labeled = labeled.get<bool>();
  if (j.contains("local_kb") && !j["local_kb"].is_null()) {
    d.local_kb = kb_from_json(j["local_kb"], where + ".local_kb", strict);
  }
  const Json& turns = require(j, "turns", where);
  if (!turns.is_array()) throw ParseError("'turns' must be an array", 0, where);
  for (std::size_t i = 0; i < turns.size(); ++i) {
    d.turns.push_back(turn_from_json(turns[i], where + ".turns[" + std::to_string(i) + "]", strict));
  }
  return d;
}

}  // namespace

Turn turn_from_json(const Json& j, const std::string& where, bool strict) {
  if (!j.is_object()) throw ParseError("turn must be an object", 0, where);
  check_keys(j, {"turn_index", "user", "system", "user_intents", "system_intents", "intent_arguments"}, where, strict);
  Turn t;
  const Json& idx = require(j, "turn_index", where);
  if (!idx.is_number_unsigned() && !(idx.is_number_integer() && idx.get<long long>() >= 0)) {
    throw ParseError("turn_index must be a non-negative integer", 0, where);
  }
  t.turn_index = idx.get<std::size_t>();
  t.user_utterance = get_string(j, "user", where);
  t.system_response = get_string(j, "system", where);
  t.user_intents = j.contains("user_intents") ? get_strings(j, "user_intents", where) : std::vector<std::string>{};
  t.system_intents = j.contains("system_intents") ? get_strings(j, "system_intents", where) : std::vector<std::string>{};
  t.intent_arguments =
      j.contains("intent_arguments") ? get_strings(j, "intent_arguments", where) : std::vector<std::string>{};
  return t;
}

Json to_json(const Turn& t) {
  return Json{{"turn_index", t.turn_index},         {"user", t.user_utterance},
              {"system", t.system_response},        {"user_intents", t.user_intents},
              {"system_intents", t.system_intents}, {"intent_arguments", t.intent_arguments}};
}


Corpus corpus_from_json(const Json& j, SchemaMode mode, bool strict) {
  if (!j.is_object()) throw ParseError("corpus must be a JSON object", 0, "");
  check_keys(j, {"dialogs", "user_intent_vocab", "system_intent_vocab", "slot_vocab", "provenance"}, "", strict);
  Corpus c;
  c.user_intent_vocab = get_strings(j, "user_intent_vocab", "");
  c.system_intent_vocab = get_strings(j, "system_intent_vocab", "");
  c.slot_vocab = get_strings(j, "slot_vocab", "");
  const Json& dialogs = require(j, "dialogs", "");
  if (!dialogs.is_array()) throw ParseError("'dialogs' must be an array", 0, "");
  for (std::size_t i = 0; i < dialogs.size(); ++i) {
    c.dialogs.push_back(dialog_from_json(dialogs[i], "dialogs[" + std::to_string(i) + "]", strict));
  }
  validate_corpus(c, mode);
  return c;
}

Json to_json(const Corpus& corpus) {
  Json dialogs = Json::array();
  for (const auto& d : corpus.dialogs) {
    Json turns = Json::array();
    for (const auto& t : d.turns) turns.push_back(to_json(t));
    dialogs.push_back(Json{{"dialog_id", d.dialog_id},
                           {"labeled", d.labeled},
                           {"local_kb", d.local_kb ? to_json(*d.local_kb) : Json(nullptr)},
                           {"turns", std::move(turns)}});
  }
  return Json{{"dialogs", std::move(dialogs)},
              {"user_intent_vocab", corpus.user_intent_vocab},
              {"system_intent_vocab", corpus.system_intent_vocab},
              {"slot_vocab", corpus.slot_vocab}};
}

Corpus load_corpus(const std::filesystem::path& path, SchemaMode mode, bool strict) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw NotFoundError("cannot open corpus file " + path.string());
  std::stringstream buffer;
  buffer << in.rdbuf();
  const std::string content = buffer.str();
  Json j;
  try {
    j = Json::parse(content);
  } catch (const nlohmann::json::parse_error& e) {
    const std::size_t byte = std::min<std::size_t>(e.byte, content.size());
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(content.begin(), content.begin() + byte, '\n'));
    throw ParseError(e.what(), line, path.string());
  }
  return corpus_from_json(j, mode, strict);
}

void save_corpus(const Corpus& corpus, const std::filesystem::path& path, const Json& provenance) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write corpus file " + path.string());
  Json j = to_json(corpus);
  if (!provenance.is_null()) j["provenance"] = provenance;
  out << j.dump(1) << '\n';
}

// ---- statistics ------------------------------------------------------------

CorpusStats corpus_stats(const Corpus& corpus, const TokenCounter& count_tokens) {
  if (corpus.dialogs.empty()) throw Error("corpus_stats: empty corpus");
  CorpusStats s;
  s.n_dialogs = corpus.dialogs.size();
  for (const auto& d : corpus.dialogs) {
    s.n_turns += d.turns.size();
    for (const auto& t : d.turns) s.n_tokens += count_tokens(t.user_utterance) + count_tokens(t.system_response);
  }
  s.avg_turns_per_dialog = static_cast<double>(s.n_turns) / static_cast<double>(s.n_dialogs);
  s.avg_tokens_per_turn = s.n_turns == 0 ? 0.0 : static_cast<double>(s.n_tokens) / static_cast<double>(s.n_turns);
  return s;
}

CorpusStats corpus_stats(const Corpus& corpus) {
  return corpus_stats(corpus, [](std::string_view s) { return text::count_tokens(s); });
}

Dialog strip_annotations(const Dialog& dialog) {
  Dialog d = dialog;
  d.labeled = false;
  d.local_kb.reset();
  for (auto& t : d.turns) {
    t.user_intents.clear();
    t.system_intents.clear();
    t.intent_arguments.clear();
  }
  return d;
}

// ---- native challenge layout ----------------------------------------------

namespace {

std::vector<std::string> split_labels(const Json& v) {
  std::vector<std::string> out;
  auto add = [&](const std::string& s) {
    std::string cur;
    auto flush = [&] {
      const std::string t = text::trim(cur);
      if (!t.empty() && std::find(out.begin(), out.end(), t) == out.end()) out.push_back(t);
      cur.clear();
    };
    for (std::size_t pos = 0; pos < s.size();) {
      const char32_t cp = text::next_code_point(s, pos);
      if (cp == ',' || cp == 0xFF0C) {
        flush();
      } else {
        text::append_utf8(cur, cp);
      }
    }
    flush();
  };
  if (v.is_string()) add(v.get<std::string>());
  if (v.is_array()) {
    for (const auto& e : v) {
      if (e.is_string()) add(e.get<std::string>());
    }
  }
  return out;
}

void add_unique(std::vector<std::string>& vocab, const std::string& label) {
  if (!in_vocab(vocab, label)) vocab.push_back(label);
}

}  // namespace

Corpus corpus_from_mobilecs(const Json& j, bool labeled) {
  if (!j.is_object()) throw ParseError("native corpus must be an object keyed by dialog id", 0, "");
  Corpus c;
  for (const auto& [id, dj] : j.items()) {
    Dialog d;
    d.dialog_id = id;
    d.labeled = labeled;
    if (!dj.contains("content") || !dj["content"].is_array()) throw ParseError("missing 'content' array", 0, id);
    for (const auto& tj : dj["content"]) {
      Turn t;
      t.turn_index = d.turns.size();
      t.user_utterance = tj.value("用户", std::string());
      t.system_response = tj.value("客服", std::string());
      if (labeled) {
        if (tj.contains("用户意图")) t.user_intents = split_labels(tj["用户意图"]);
        if (tj.contains("客服意图")) t.system_intents = split_labels(tj["客服意图"]);
      }
      for (const auto& l : t.user_intents) add_unique(c.user_intent_vocab, l);
      for (const auto& l : t.system_intents) add_unique(c.system_intent_vocab, l);
      // empty sides occur in raw transcripts; they would fail validation
      if (text::trim(t.user_utterance).empty() || text::trim(t.system_response).empty()) continue;
      d.turns.push_back(std::move(t));
    }
    if (labeled && dj.contains("KB") && dj["KB"].is_object()) {
      LocalKB kb;
      for (const auto& [key, ej] : dj["KB"].items()) {
        if (!ej.is_object()) continue;
        Entity e;
        e.name = ej.value("name", key);
        e.entity_type = ej.value("type", std::string());
        for (const auto& [slot, v] : ej.items()) {
          if (slot == "name" || slot == "type") continue;
          for (const auto& value : split_labels(v)) e.add_value(slot, value);
          add_unique(c.slot_vocab, slot);
        }
        if (kb.find_entity(e.name) == nullptr) kb.entities.push_back(std::move(e));
      }
      d.local_kb = std::move(kb);
    }
    if (!d.turns.empty()) c.dialogs.push_back(std::move(d));
  }
  validate_corpus(c, labeled ? SchemaMode::labeled : SchemaMode::unlabeled);
  return c;
}

// ---- synthetic corpus ------------------------------------------------------

SynthConfig default_synth_config() {
  SynthConfig c;
  c.slots = {
      {"业务费用", "业务",
       {"5元", "8元", "10元", "15元", "18元", "20元", "25元", "30元", "38元", "40元", "48元", "58元", "68元",
        "88元", "98元", "128元"}},
      {"流量总量", "业务",
       {"500M", "1G", "2G", "3G", "5G", "6G", "8G", "10G", "15G", "20G", "30G", "40G", "60G", "100G"}},
      {"有效期", "业务", {"1个月", "2个月", "3个月", "6个月", "12个月", "24个月"}},
      {"套餐余量", "账户",
       {"60M", "95M", "120M", "150M", "200M", "256M", "295M", "320M", "380M", "415M", "500M", "640M", "720M",
        "850M", "1.2G", "1.8G", "2.5G", "3.6G"}},
      {"话费余额", "账户",
       {"2.5元", "3.6元", "7元", "12元", "16.8元", "23元", "35元", "42.5元", "50元", "66元", "80元", "100元"}},
      {"剩余通话", "账户",
       {"15分钟", "30分钟", "45分钟", "60分钟", "88分钟", "100分钟", "120分钟", "150分钟", "200分钟", "300分钟"}},
  };
  c.entities = {
      {"业务",
       {"畅享套餐", "飞享套餐", "全球通套餐", "夜间流量包", "视频会员包", "校园流量包", "假日流量包", "定向流量包",
        "十元流量包", "二十元流量包", "随心看会员", "家庭共享包"}},
      {"账户", {"本机账户"}},
  };
  auto request = [](std::vector<std::string> user, std::vector<std::string> system, std::string ui,
                    std::string si, std::string slot, double weight) {
    return TurnTemplate{"request", std::move(user), std::move(system), {std::move(ui)}, {std::move(si)},
                        {std::move(slot)}, weight};
  };
  c.templates = {
      {"greet",
       {"你好", "喂，你好", "您好", "你好，我想咨询一下"},
       {"您好，请问有什么可以帮您？", "您好，很高兴为您服务，请问有什么可以帮您？"},
       {"问候"},
       {"问候"},
       {},
       1.0},
      // The last system variant of each single-slot request carries no
      // extractor trigger phrase.
      request({"{entity}每个月多少钱", "{entity}的费用是多少", "我想问一下{entity}的资费", "{entity}怎么收费的"},
              {"{entity}的业务费用为{v0}", "{entity}的业务费用是每月{v0}", "{entity}的月费是{v0}",
               "{entity}的资费是每月{v0}", "{entity}的业务费用为{v0}", "{entity}的月费是{v0}",
               "{entity}的业务费用为{v0}", "{entity}的资费是每月{v0}", "{entity}的业务费用是每月{v0}",
               "这个业务每个月收取{v0}"},
              "询问费用", "告知费用", "业务费用", 1.0),
      request({"{entity}包含多少流量", "{entity}有多少流量", "{entity}的流量是多少"},
              {"{entity}的流量总量为{v0}", "{entity}的流量总量是{v0}", "{entity}包含国内通用流量{v0}",
               "{entity}每月提供流量{v0}", "{entity}的流量总量为{v0}", "{entity}包含国内通用流量{v0}",
               "{entity}的流量总量是{v0}", "{entity}每月提供流量{v0}", "{entity}的流量总量为{v0}",
               "{entity}一共有{v0}"},
              "询问流量", "告知流量", "流量总量", 1.0),
      request({"{entity}有效期多久", "{entity}能用多长时间", "{entity}的有效期是多久"},
              {"{entity}的有效期为{v0}", "{entity}的有效期是{v0}", "{entity}办理后可使用{v0}",
               "{entity}的有效期为{v0}", "{entity}办理后可使用{v0}", "{entity}的有效期是{v0}",
               "{entity}的有效期为{v0}", "{entity}办理后可使用{v0}", "{entity}的有效期为{v0}",
               "{entity}可以用{v0}"},
              "询问有效期", "告知有效期", "有效期", 0.8),
      request({"帮我查一下流量还剩多少", "我的套餐余量还有多少", "查一下我还剩多少流量", "我这个月流量还有多少"},
              {"您的套餐余量为{v0}", "您的套餐余量还有{v0}", "您当前剩余流量{v0}", "查询到您的流量还剩{v0}",
               "您的套餐余量为{v0}", "您当前剩余流量{v0}", "您的套餐余量还有{v0}", "查询到您的流量还剩{v0}",
               "您的套餐余量为{v0}", "您这边显示还有{v0}可以使用"},
              "询问余量", "告知余量", "套餐余量", 1.2),
      request({"帮我查一下话费", "我还有多少话费", "我的话费余额是多少"},
              {"您的话费余额为{v0}", "您的话费余额还有{v0}", "您当前账户余额{v0}", "您的账户还有话费{v0}",
               "您的话费余额为{v0}", "您当前账户余额{v0}", "您的话费余额还有{v0}", "您的账户还有话费{v0}",
               "您的话费余额为{v0}", "您现在还有{v0}"},
              "询问话费", "告知话费", "话费余额", 1.0),
      request({"我的通话时长还剩多少", "还能打多少分钟电话", "帮我查一下剩余通话时长"},
              {"您的剩余通话时长为{v0}", "您的剩余通话还有{v0}", "您本月还可通话{v0}", "您的通话时间还有{v0}",
               "您的剩余通话时长为{v0}", "您本月还可通话{v0}", "您的剩余通话还有{v0}", "您的通话时间还有{v0}",
               "您的剩余通话时长为{v0}", "还能再打{v0}"},
              "询问通话", "告知通话", "剩余通话", 0.8),
      {"request",
       {"{entity}的费用和流量分别是多少", "{entity}多少钱，有多少流量"},
       {"{entity}的业务费用为{v0}，流量总量为{v1}", "{entity}月费{v0}，包含国内通用流量{v1}"},
       {"询问费用", "询问流量"},
       {"告知费用", "告知流量"},
       {"业务费用", "流量总量"},
       0.6},
      {"request",
       {"帮我查一下话费和流量余额", "我的话费和流量还剩多少"},
       {"您的话费余额为{v0}，套餐余量为{v1}", "您当前账户余额{v0}，剩余流量{v1}"},
       {"询问话费", "询问余量"},
       {"告知话费", "告知余量"},
       {"话费余额", "套餐余量"},
       0.6},
      {"handle",
       {"我想办理{entity}", "帮我开通{entity}", "{entity}怎么办理"},
       {"好的，已为您办理{entity}，次月生效", "已经为您开通{entity}，请留意短信通知"},
       {"办理业务"},
       {"确认办理"},
       {},
       0.8},
      {"other",
       {"怎么流量用得这么快", "我的流量是不是被乱扣了", "为什么扣了我这么多钱"},
       {"非常抱歉给您带来不便，这边帮您登记反馈", "很抱歉，已为您登记反馈，稍后会有专人联系您"},
       {"投诉"},
       {"安抚", "登记反馈"},
       {},
       0.6},
      {"other",
       {"嗯，好的", "明白了", "那行吧"},
       {"请问还有其他可以帮您的吗？", "好的，还有什么问题吗？"},
       {"确认"},
       {"询问需求"},
       {},
       0.6},
      {"close",
       {"好的，谢谢", "没有了，谢谢你", "行，谢谢，再见"},
       {"不客气，祝您生活愉快，再见", "感谢您的来电，再见"},
       {"感谢"},
       {"结束"},
       {},
       1.0},
  };
  return c;
}

Json to_json(const SynthConfig& config) {
  Json slots = Json::array();
  for (const auto& s : config.slots) {
    slots.push_back(Json{{"slot", s.slot}, {"entity_type", s.entity_type}, {"values", s.values}});
  }
  Json entities = Json::array();
  for (const auto& e : config.entities) entities.push_back(Json{{"entity_type", e.entity_type}, {"names", e.names}});
  Json templates = Json::array();
  for (const auto& t : config.templates) {
    templates.push_back(Json{{"kind", t.kind},
                             {"user", t.user},
                             {"system", t.system},
                             {"user_intents", t.user_intents},
                             {"system_intents", t.system_intents},
                             {"slots", t.slots},
                             {"weight", t.weight}});
  }
  return Json{{"n_dialogs", config.n_dialogs},
              {"min_turns", config.min_turns},
              {"max_turns", config.max_turns},
              {"greet_probability", config.greet_probability},
              {"seed", config.seed},
              {"id_prefix", config.id_prefix},
              {"slots", std::move(slots)},
              {"entities", std::move(entities)},
              {"templates", std::move(templates)}};
}

SynthConfig synth_config_from_json(const Json& j) {
  SynthConfig c = default_synth_config();
  c.n_dialogs = j.value("n_dialogs", c.n_dialogs);
  c.min_turns = j.value("min_turns", c.min_turns);
  c.max_turns = j.value("max_turns", c.max_turns);
  c.greet_probability = j.value("greet_probability", c.greet_probability);
  c.seed = j.value("seed", c.seed);
  c.id_prefix = j.value("id_prefix", c.id_prefix);
  if (j.contains("slots")) {
    c.slots.clear();
    for (const auto& s : j["slots"]) {
      c.slots.push_back({s.at("slot").get<std::string>(), s.at("entity_type").get<std::string>(),
                         s.at("values").get<std::vector<std::string>>()});
    }
  }
  if (j.contains("entities")) {
    c.entities.clear();
    for (const auto& e : j["entities"]) {
      c.entities.push_back({e.at("entity_type").get<std::string>(), e.at("names").get<std::vector<std::string>>()});
    }
  }
  if (j.contains("templates")) {
    c.templates.clear();
    for (const auto& t : j["templates"]) {
      c.templates.push_back({t.at("kind").get<std::string>(), t.at("user").get<std::vector<std::string>>(),
                             t.at("system").get<std::vector<std::string>>(),
                             t.value("user_intents", std::vector<std::string>{}),
                             t.value("system_intents", std::vector<std::string>{}),
                             t.value("slots", std::vector<std::string>{}), t.value("weight", 1.0)});
    }
  }
  return c;
}

namespace {

std::string fill(std::string pattern, const std::string& key, const std::string& value) {
  const std::string needle = "{" + key + "}";
  for (std::size_t pos = pattern.find(needle); pos != std::string::npos; pos = pattern.find(needle, pos + value.size())) {
    pattern.replace(pos, needle.size(), value);
  }
  return pattern;
}

const TurnTemplate& pick_weighted(Rng& rng, const std::vector<const TurnTemplate*>& pool) {
  double total = 0.0;
  for (const auto* t : pool) total += t->weight;
  double r = rng.uniform() * total;
  for (const auto* t : pool) {
    r -= t->weight;
    if (r < 0.0) return *t;
  }
  return *pool.back();
}

void check_synth_config(const SynthConfig& c) {
  if (c.templates.empty()) throw Error("synthesize_corpus: empty template set");
  if (c.min_turns < 2 || c.max_turns < c.min_turns) throw Error("synthesize_corpus: need 2 <= min_turns <= max_turns");
  const bool copies = std::any_of(c.templates.begin(), c.templates.end(), [](const TurnTemplate& t) {
    return !t.slots.empty() && std::any_of(t.system.begin(), t.system.end(),
                                           [](const std::string& s) { return s.find("{v0}") != std::string::npos; });
  });
  if (!copies) throw Error("synthesize_corpus: no template copies a KB value into its response");
  for (const auto& t : c.templates) {
    if (t.user.empty() || t.system.empty()) throw Error("synthesize_corpus: template without user/system variants");
    if (t.user_intents.empty() || t.system_intents.empty()) {
      throw Error("synthesize_corpus: every template needs user and system intents");
    }
    for (const auto& slot : t.slots) {
      if (std::none_of(c.slots.begin(), c.slots.end(), [&](const SlotSpec& s) { return s.slot == slot; })) {
        throw Error("synthesize_corpus: template references unknown slot '" + slot + "'");
      }
    }
  }
  for (const auto& s : c.slots) {
    if (s.values.empty()) throw Error("synthesize_corpus: slot '" + s.slot + "' has no values");
    if (std::none_of(c.entities.begin(), c.entities.end(),
                     [&](const EntityPool& e) { return e.entity_type == s.entity_type && !e.names.empty(); })) {
      throw Error("synthesize_corpus: no entity pool for slot '" + s.slot + "'");
    }
  }
}

}  // namespace

Corpus synthesize_corpus(const SynthConfig& config) {
  check_synth_config(config);
  Rng rng(config.seed);
  Corpus corpus;
  for (const auto& s : config.slots) corpus.slot_vocab.push_back(s.slot);
  for (const auto& t : config.templates) {
    for (const auto& l : t.user_intents) add_unique(corpus.user_intent_vocab, l);
    for (const auto& l : t.system_intents) add_unique(corpus.system_intent_vocab, l);
  }

  std::vector<const TurnTemplate*> greet;
  std::vector<const TurnTemplate*> close;
  std::vector<const TurnTemplate*> middle;
  for (const auto& t : config.templates) {
    if (t.kind == "greet") {
      greet.push_back(&t);
    } else if (t.kind == "close") {
      close.push_back(&t);
    } else {
      middle.push_back(&t);
    }
  }
  if (middle.empty()) throw Error("synthesize_corpus: no request/handle/other templates");

  const int width = static_cast<int>(std::to_string(config.n_dialogs).size());
  for (std::size_t n = 0; n < config.n_dialogs; ++n) {
    Dialog d;
    std::string num = std::to_string(n);
    d.dialog_id = config.id_prefix + "-" + std::to_string(config.seed) + "-" +
                  std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(num.size()))), '0') + num;
    d.labeled = true;

    LocalKB kb;
    for (const auto& pool : config.entities) {
      if (pool.names.empty()) continue;
      Entity e;
      e.name = rng.pick(pool.names);
      e.entity_type = pool.entity_type;
      for (const auto& s : config.slots) {
        if (s.entity_type == pool.entity_type) e.slots.emplace_back(s.slot, std::vector<std::string>{rng.pick(s.values)});
      }
      kb.entities.push_back(std::move(e));
    }

    const std::size_t span = config.max_turns - config.min_turns + 1;
    const std::size_t n_turns = config.min_turns + rng.below(span);
    for (std::size_t i = 0; i < n_turns; ++i) {
      const TurnTemplate* tpl = nullptr;
      if (i == 0 && !greet.empty() && rng.bernoulli(config.greet_probability)) {
        tpl = greet[rng.below(greet.size())];
      } else if (i + 1 == n_turns && !close.empty()) {
        tpl = close[rng.below(close.size())];
      } else {
        tpl = &pick_weighted(rng, middle);
      }

      // The entity owning the requested slots, else the first entity.
      const Entity* owner = kb.entities.empty() ? nullptr : &kb.entities.front();
      for (const auto& e : kb.entities) {
        if (!tpl->slots.empty() && e.find_slot(tpl->slots.front())) {
          owner = &e;
          break;
        }
      }
      std::string user = rng.pick(tpl->user);
      std::string system = rng.pick(tpl->system);
      Turn t;
      t.turn_index = i;
      if (owner) {
        const bool mentions_entity = user.find("{entity}") != std::string::npos ||
                                     system.find("{entity}") != std::string::npos;
        user = fill(user, "entity", owner->name);
        system = fill(system, "entity", owner->name);
        if (mentions_entity || !tpl->slots.empty()) t.intent_arguments.push_back(owner->name);
      }
      for (std::size_t k = 0; k < tpl->slots.size(); ++k) {
        const std::vector<std::string>* values = nullptr;
        for (const auto& e : kb.entities) {
          if ((values = e.find_slot(tpl->slots[k]))) break;
        }
        const std::string key = "v" + std::to_string(k);
        system = fill(system, key, values ? values->front() : std::string());
        user = fill(user, key, values ? values->front() : std::string());
      }
      t.user_utterance = std::move(user);
      t.system_response = std::move(system);
      t.user_intents = tpl->user_intents;
      t.system_intents = tpl->system_intents;
      d.turns.push_back(std::move(t));
    }
    d.local_kb = std::move(kb);
    corpus.dialogs.push_back(std::move(d));
  }
  validate_corpus(corpus, SchemaMode::labeled);
  return corpus;
}

SyntheticSplit split_synthetic(const Corpus& corpus, std::size_t n_eval, std::size_t n_labeled) {
  if (n_eval + n_labeled > corpus.dialogs.size()) throw ValidationError("split", "eval + labeled sizes exceed corpus size");
  SyntheticSplit s;
  for (Corpus* c : {&s.labeled, &s.unlabeled, &s.unlabeled_gold, &s.eval}) {
    c->user_intent_vocab = corpus.user_intent_vocab;
    c->system_intent_vocab = corpus.system_intent_vocab;
    c->slot_vocab = corpus.slot_vocab;
  }
  for (std::size_t i = 0; i < corpus.dialogs.size(); ++i) {
    const Dialog& d = corpus.dialogs[i];
    if (i < n_eval) {
      s.eval.dialogs.push_back(d);
    } else if (i < n_eval + n_labeled) {
      s.labeled.dialogs.push_back(d);
    } else {
      s.unlabeled_gold.dialogs.push_back(d);
      s.unlabeled.dialogs.push_back(strip_annotations(d));
    }
  }
  return s;
}

}  // namespace s2kg
