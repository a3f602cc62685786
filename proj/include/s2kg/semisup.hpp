// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/json.hpp"
#include "s2kg/local_kb.hpp"
#include "s2kg/nn/vocab.hpp"
#include "s2kg/random.hpp"

namespace s2kg {

enum class IntentTask { user, system };
std::string_view to_string(IntentTask task);
IntentTask parse_intent_task(std::string_view s);

enum class KbSource { gold, pseudo, none };
std::string_view to_string(KbSource source);
KbSource parse_kb_source(std::string_view s);

struct ClsExample {
  std::string input_text;
  std::vector<int> labels;  // 0/1 per vocab entry
  IntentTask task = IntentTask::user;
  std::string dialog_id;
  std::size_t turn_index = 0;
};

struct GenExample {
  std::string input_text;
  std::string target_text;
  KbSource kb_source = KbSource::none;
  std::string dialog_id;
  std::size_t turn_index = 0;
};

struct MlmExample {
  std::vector<int> tokens;  // after masking; position 0 is [CLS]
  std::vector<std::size_t> masked_positions;
  std::vector<int> original_ids;
};

inline constexpr const char* kUtteranceSeparator = " [SEP] ";
inline constexpr std::size_t kUserIntentWindow = 2;
inline constexpr std::size_t kSystemIntentWindow = 3;

std::size_t default_intent_window(IntentTask task);

// Joins the last `window` utterances with " [SEP] ".
std::string intent_input(const std::vector<std::string>& user_utterances, std::size_t window);

// One example per turn of every labeled dialog. Inputs hold user utterances
// only: the current one and up to window-1 before it.
std::vector<ClsExample> build_intent_examples(const Corpus& corpus, IntentTask task);
std::vector<ClsExample> build_intent_examples(const Corpus& corpus, IntentTask task, std::size_t window);

struct GenerationOptions {
  KbSource kb_source = KbSource::gold;
  // Turns rendered, counting the current one.
  std::size_t history_window = 5;
  // Token budget of the whole input; 0 means unlimited.
  std::size_t max_input_len = 512;
};

Json to_json(const GenerationOptions& o);
GenerationOptions generation_options_from_json(const Json& j, GenerationOptions base = {});

// Renders "用户: …"/"客服: …" lines for the window ending at `current_user`,
// then "[KB] " and the serialized KB when `kb` is given. Over budget, whole
// history turns are dropped oldest first, then KB pairs from the end, and
// the current user line only when nothing else is left.
std::string render_generation_input(const std::vector<Turn>& history, std::string_view current_user,
                                    const LocalKB* kb, const GenerationOptions& options);

// One example per turn. kb_source=gold needs labeled dialogs; pseudo needs
// `pseudo_kbs` to cover every dialog.
std::vector<GenExample> build_generation_examples(const Corpus& corpus, const GenerationOptions& options,
                                                  const std::map<std::string, LocalKB>* pseudo_kbs = nullptr);

// Masks each non-special token of every utterance and response with
// probability `mask_rate`, replacing it by [MASK].
std::vector<MlmExample> build_mlm_examples(const Corpus& corpus, double mask_rate, const nn::Vocabulary& vocab,
                                           std::uint64_t seed);
MlmExample mask_tokens(std::vector<int> tokens, double mask_rate, const nn::Vocabulary& vocab, Rng& rng);

std::vector<GenExample> mix_corpora(std::vector<GenExample> labeled, std::vector<GenExample> pseudo,
                                    std::uint64_t shuffle_seed);

Json to_json(const ClsExample& e);
Json to_json(const GenExample& e);
Json to_json(const MlmExample& e);

// One JSON document per line.
void write_jsonl(const std::filesystem::path& path, const std::vector<Json>& records);

template <class Example>
std::vector<Json> to_json_records(const std::vector<Example>& examples) {
  std::vector<Json> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(to_json(e));
  return out;
}

}  // namespace s2kg
