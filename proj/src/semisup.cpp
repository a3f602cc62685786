// SPDX-License-Identifier: Apache-2.0
#include "s2kg/semisup.hpp"

#include <algorithm>
#include <fstream>

#include "s2kg/error.hpp"
#include "s2kg/text.hpp"

namespace s2kg {

std::string_view to_string(IntentTask task) { return task == IntentTask::user ? "user" : "system"; }

IntentTask parse_intent_task(std::string_view s) {
  if (s == "user") return IntentTask::user;
  if (s == "system") return IntentTask::system;
  throw ValidationError("task", "expected user|system, got '" + std::string(s) + "'");
}

std::string_view to_string(KbSource source) {
  switch (source) {
    case KbSource::gold:
      return "gold";
    case KbSource::pseudo:
      return "pseudo";
    case KbSource::none:
      return "none";
  }
  return "none";
}

KbSource parse_kb_source(std::string_view s) {
  if (s == "gold") return KbSource::gold;
  if (s == "pseudo") return KbSource::pseudo;
  if (s == "none") return KbSource::none;
  throw ValidationError("kb_source", "expected gold|pseudo|none, got '" + std::string(s) + "'");
}

std::size_t default_intent_window(IntentTask task) {
  return task == IntentTask::user ? kUserIntentWindow : kSystemIntentWindow;
}

std::string intent_input(const std::vector<std::string>& user_utterances, std::size_t window) {
  if (window == 0) throw ValidationError("window", "must be positive");
  const std::size_t n = user_utterances.size();
  const std::size_t first = n > window ? n - window : 0;
  std::string out;
  for (std::size_t i = first; i < n; ++i) {
    if (i > first) out += kUtteranceSeparator;
    out += user_utterances[i];
  }
  return out;
}

std::vector<ClsExample> build_intent_examples(const Corpus& corpus, IntentTask task) {
  return build_intent_examples(corpus, task, default_intent_window(task));
}

std::vector<ClsExample> build_intent_examples(const Corpus& corpus, IntentTask task, std::size_t window) {
  const auto& vocab = task == IntentTask::user ? corpus.user_intent_vocab : corpus.system_intent_vocab;
  std::vector<ClsExample> out;
  for (const auto& d : corpus.dialogs) {
    if (!d.labeled) continue;
    std::vector<std::string> users;
    for (const auto& t : d.turns) {
      users.push_back(t.user_utterance);
      ClsExample e;
      e.input_text = intent_input(users, window);
      e.labels.assign(vocab.size(), 0);
      e.task = task;
      e.dialog_id = d.dialog_id;
      e.turn_index = t.turn_index;
      for (const auto& label : task == IntentTask::user ? t.user_intents : t.system_intents) {
        const auto it = std::find(vocab.begin(), vocab.end(), label);
        if (it == vocab.end()) {
          throw ValidationError(d.dialog_id, "turn " + std::to_string(t.turn_index) + " label '" + label +
                                                 "' not in the " + std::string(to_string(task)) + " intent vocab");
        }
        e.labels[static_cast<std::size_t>(it - vocab.begin())] = 1;
      }
      out.push_back(std::move(e));
    }
  }
  if (out.empty()) throw ValidationError("corpus", "no labeled dialogs to build intent examples from");
  return out;
}

Json to_json(const GenerationOptions& o) {
  return Json{{"kb_source", to_string(o.kb_source)},
              {"history_window", o.history_window},
              {"max_input_len", o.max_input_len}};
}

GenerationOptions generation_options_from_json(const Json& j, GenerationOptions base) {
  if (j.contains("kb_source")) base.kb_source = parse_kb_source(j.at("kb_source").get<std::string>());
  base.history_window = j.value("history_window", base.history_window);
  base.max_input_len = j.value("max_input_len", base.max_input_len);
  return base;
}

std::string render_generation_input(const std::vector<Turn>& history, std::string_view current_user,
                                    const LocalKB* kb, const GenerationOptions& options) {
  if (options.history_window == 0) throw ValidationError("history_window", "must be positive");
  // Blocks oldest first; the last one is the current user line.
  std::vector<std::string> blocks;
  const std::size_t prior = std::min(history.size(), options.history_window - 1);
  for (std::size_t i = history.size() - prior; i < history.size(); ++i) {
    blocks.push_back(std::string(kUserSpeaker) + ": " + history[i].user_utterance + "\n" + kSystemSpeaker + ": " +
                     history[i].system_response);
  }
  blocks.push_back(std::string(kUserSpeaker) + ": " + std::string(current_user));

  std::vector<KbPair> pairs;
  if (kb) pairs = kb_pairs(*kb);

  auto render = [&](std::size_t first_block, std::size_t n_pairs) {
    std::string out;
    for (std::size_t i = first_block; i < blocks.size(); ++i) {
      if (!out.empty()) out += "\n";
      out += blocks[i];
    }
    if (kb) {
      if (!out.empty()) out += "\n";
      out += nn::kKbToken;
      const std::vector<KbPair> kept(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_pairs));
      const std::string serialized = join_kb_pairs(kept);
      if (!serialized.empty()) out += " " + serialized;
    }
    return out;
  };

  std::size_t first = 0;
  std::size_t n_pairs = pairs.size();
  std::string out = render(first, n_pairs);
  if (options.max_input_len == 0) return out;
  while (text::count_tokens(out) > options.max_input_len) {
    if (first + 1 < blocks.size()) {
      ++first;
    } else if (n_pairs > 0) {
      --n_pairs;
    } else if (first < blocks.size()) {
      ++first;
    } else {
      break;
    }
    out = render(first, n_pairs);
  }
  return out;
}

std::vector<GenExample> build_generation_examples(const Corpus& corpus, const GenerationOptions& options,
                                                  const std::map<std::string, LocalKB>* pseudo_kbs) {
  if (options.kb_source == KbSource::pseudo && pseudo_kbs == nullptr) {
    throw ValidationError("pseudo_kbs", "kb_source=pseudo needs pseudo KBs");
  }
  std::vector<GenExample> out;
  for (const auto& d : corpus.dialogs) {
    const LocalKB* kb = nullptr;
    switch (options.kb_source) {
      case KbSource::gold:
        if (!d.labeled || !d.local_kb) throw ValidationError(d.dialog_id, "kb_source=gold needs a labeled dialog with a local KB");
        kb = &*d.local_kb;
        break;
      case KbSource::pseudo: {
        const auto it = pseudo_kbs->find(d.dialog_id);
        if (it == pseudo_kbs->end()) throw ValidationError(d.dialog_id, "missing pseudo KB");
        kb = &it->second;
        break;
      }
      case KbSource::none:
        break;
    }
    std::vector<Turn> history;
    for (const auto& t : d.turns) {
      GenExample e;
      e.input_text = render_generation_input(history, t.user_utterance, kb, options);
      e.target_text = t.system_response;
      e.kb_source = options.kb_source;
      e.dialog_id = d.dialog_id;
      e.turn_index = t.turn_index;
      out.push_back(std::move(e));
      history.push_back(t);
    }
  }
  return out;
}

MlmExample mask_tokens(std::vector<int> tokens, double mask_rate, const nn::Vocabulary& vocab, Rng& rng) {
  const int mask = vocab.mask_id();
  MlmExample e;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (vocab.is_special(tokens[i])) continue;
    if (rng.bernoulli(mask_rate)) {
      e.masked_positions.push_back(i);
      e.original_ids.push_back(tokens[i]);
      tokens[i] = mask;
    }
  }
  e.tokens = std::move(tokens);
  return e;
}

std::vector<MlmExample> build_mlm_examples(const Corpus& corpus, double mask_rate, const nn::Vocabulary& vocab,
                                           std::uint64_t seed) {
  if (!(mask_rate > 0.0 && mask_rate < 1.0)) {
    throw ValidationError("mask_rate", "must lie in (0, 1), got " + std::to_string(mask_rate));
  }
  const int cls = vocab.cls_id();
  vocab.mask_id();
  Rng rng(seed);
  std::vector<MlmExample> out;
  auto add = [&](const std::string& text) {
    std::vector<int> ids{cls};
    const auto body = vocab.encode(text);
    ids.insert(ids.end(), body.begin(), body.end());
    out.push_back(mask_tokens(std::move(ids), mask_rate, vocab, rng));
  };
  for (const auto& d : corpus.dialogs) {
    for (const auto& t : d.turns) {
      add(t.user_utterance);
      add(t.system_response);
    }
  }
  return out;
}

std::vector<GenExample> mix_corpora(std::vector<GenExample> labeled, std::vector<GenExample> pseudo,
                                    std::uint64_t shuffle_seed) {
  labeled.insert(labeled.end(), std::make_move_iterator(pseudo.begin()), std::make_move_iterator(pseudo.end()));
  Rng rng(shuffle_seed);
  rng.shuffle(std::span<GenExample>(labeled));
  return labeled;
}

Json to_json(const ClsExample& e) {
  return Json{{"input_text", e.input_text},
              {"labels", e.labels},
              {"task", to_string(e.task)},
              {"dialog_id", e.dialog_id},
              {"turn_index", e.turn_index}};
}

Json to_json(const GenExample& e) {
  return Json{{"input_text", e.input_text},
              {"target_text", e.target_text},
              {"kb_source", to_string(e.kb_source)},
              {"dialog_id", e.dialog_id},
              {"turn_index", e.turn_index}};
}

Json to_json(const MlmExample& e) {
  return Json{{"tokens", e.tokens}, {"masked_positions", e.masked_positions}, {"original_ids", e.original_ids}};
}

void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& r : records) out << r.dump() << '\n';
  if (!out) throw Error("short write to " + path.string());
}

}  // namespace s2kg
