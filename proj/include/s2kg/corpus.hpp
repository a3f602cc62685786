// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "s2kg/json.hpp"
#include "s2kg/local_kb.hpp"

namespace s2kg {

// Speaker prefixes of rendered dialog history.
inline constexpr const char* kUserSpeaker = "用户";
inline constexpr const char* kSystemSpeaker = "客服";

struct Turn {
  std::size_t turn_index = 0;
  std::string user_utterance;
  std::string system_response;
  std::vector<std::string> user_intents;
  std::vector<std::string> system_intents;
  std::vector<std::string> intent_arguments;

  bool operator==(const Turn&) const = default;
};

struct Dialog {
  std::string dialog_id;
  std::vector<Turn> turns;
  std::optional<LocalKB> local_kb;
  bool labeled = false;

  bool operator==(const Dialog&) const = default;
};

struct Corpus {
  std::vector<Dialog> dialogs;
  std::vector<std::string> user_intent_vocab;
  std::vector<std::string> system_intent_vocab;
  std::vector<std::string> slot_vocab;

  std::size_t turn_count() const;
  const Dialog* find(const std::string& dialog_id) const;

  bool operator==(const Corpus&) const = default;
};

struct CorpusStats {
  std::size_t n_dialogs = 0;
  std::size_t n_turns = 0;
  std::size_t n_tokens = 0;
  double avg_turns_per_dialog = 0.0;
  double avg_tokens_per_turn = 0.0;
};

enum class SchemaMode { labeled, unlabeled, mixed };

SchemaMode parse_schema_mode(std::string_view s);

// Checks every Turn/Dialog/Corpus invariant; throws ValidationError naming
// the dialog and the failed rule.
void validate_corpus(const Corpus& corpus, SchemaMode mode);

Turn turn_from_json(const Json& j, const std::string& where, bool strict = true);
Json to_json(const Turn& t);

// Unknown fields are rejected when `strict`, otherwise ignored with a warning.
Corpus corpus_from_json(const Json& j, SchemaMode mode, bool strict = true);
Json to_json(const Corpus& corpus);

Corpus load_corpus(const std::filesystem::path& path, SchemaMode mode, bool strict = true);
// `provenance`, when given, is stored under a top-level key that loading
// ignores.
void save_corpus(const Corpus& corpus, const std::filesystem::path& path, const Json& provenance = nullptr);

using TokenCounter = std::function<std::size_t(std::string_view)>;

// Tokens of a turn = tokens(user) + tokens(system).
CorpusStats corpus_stats(const Corpus& corpus, const TokenCounter& count_tokens);
CorpusStats corpus_stats(const Corpus& corpus);

// Unlabeled variant of a dialog: intents, intent arguments and local KB removed.
Dialog strip_annotations(const Dialog& dialog);

// Converts the challenge's native transcript layout
//   {"<id>": {"KB": {...}, "content": [{"用户": ..., "客服": ..., "用户意图": ..., "客服意图": ...}]}}
// into a Corpus. Intents in the native layout are comma-joined strings.
Corpus corpus_from_mobilecs(const Json& j, bool labeled);

// ---- synthetic corpus ------------------------------------------------------

struct SlotSpec {
  std::string slot;
  std::string entity_type;
  std::vector<std::string> values;
};

struct EntityPool {
  std::string entity_type;
  std::vector<std::string> names;
};

// One turn shape. Placeholders: {entity} is the name of the entity owning
// the requested slots (or the first entity when none), {v0}, {v1}, ... the
// KB values of `slots` in order.
struct TurnTemplate {
  std::string kind;  // greet | request | handle | other | close
  std::vector<std::string> user;
  std::vector<std::string> system;
  std::vector<std::string> user_intents;
  std::vector<std::string> system_intents;
  std::vector<std::string> slots;
  double weight = 1.0;
};

struct SynthConfig {
  std::size_t n_dialogs = 500;
  std::size_t min_turns = 3;
  std::size_t max_turns = 6;
  double greet_probability = 0.5;
  std::uint64_t seed = 7;
  std::string id_prefix = "syn";
  std::vector<SlotSpec> slots;
  std::vector<EntityPool> entities;
  std::vector<TurnTemplate> templates;
};

// The shipped customer-service domain.
SynthConfig default_synth_config();
Json to_json(const SynthConfig& config);
SynthConfig synth_config_from_json(const Json& j);

// Every dialog is labeled with a gold local KB; use strip_annotations or
// split_synthetic for the unlabeled portion. Deterministic in config.seed.
Corpus synthesize_corpus(const SynthConfig& config);

struct SyntheticSplit {
  Corpus labeled;          // labeled training dialogs
  Corpus unlabeled;        // training dialogs with annotations stripped
  Corpus unlabeled_gold;   // the same dialogs before stripping
  Corpus eval;             // held-out labeled dialogs
};

// First `n_eval` dialogs are held out, the next `n_labeled` stay labeled and
// the rest are stripped.
SyntheticSplit split_synthetic(const Corpus& corpus, std::size_t n_eval, std::size_t n_labeled);

}  // namespace s2kg
