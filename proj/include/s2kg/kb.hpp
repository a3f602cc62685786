// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/json.hpp"
#include "s2kg/local_kb.hpp"

namespace s2kg {

// Value pattern classes understood by the extractor. A rule may also give a
// raw ECMAScript regex with the prefix "re:".
//   currency       12元, 16.8元
//   data_quantity  295M, 1.5G, 20GB
//   minutes        120分钟
//   months         6个月
//   number         any decimal number
struct SlotRule {
  std::string slot;
  std::vector<std::string> triggers;
  std::string pattern;
};

struct SlotLexicon {
  std::vector<SlotRule> rules;
  // Regexes for entity (plan) names; the longest match in a sentence names
  // the entity its triples attach to.
  std::vector<std::string> entity_patterns;
  std::string anonymous_entity = "未知实体";

  // Throws ValidationError when a rule has no trigger or an unknown pattern.
  void validate() const;
  std::vector<std::string> slots() const;
};

SlotLexicon default_slot_lexicon();
Json to_json(const SlotLexicon& lexicon);
SlotLexicon slot_lexicon_from_json(const Json& j);
SlotLexicon load_slot_lexicon(const std::filesystem::path& path);

// Keeps only the first `keep` trigger phrases of every rule; used to degrade
// extractor recall in robustness experiments.
SlotLexicon subset_lexicon(const SlotLexicon& lexicon, std::size_t keep);

// Rule-based pseudo-KB extraction over the system side of a dialog. Within
// a sentence, each trigger occurrence binds to the nearest following value
// matching its slot's pattern.
LocalKB extract_pseudo_kb(const Dialog& dialog, const SlotLexicon& lexicon);

std::map<std::string, LocalKB> extract_pseudo_kbs(const Corpus& corpus, const SlotLexicon& lexicon);

// {"kbs": {dialog_id: LocalKB}} plus an optional "provenance" object.
void save_pseudo_kbs(const std::map<std::string, LocalKB>& kbs, const std::filesystem::path& path,
                     const Json& provenance = nullptr);
std::map<std::string, LocalKB> load_pseudo_kbs(const std::filesystem::path& path);

// Entities referenced by the current user utterance (by name or any slot
// value). Falls back to the most recent prior turn (user or system side)
// with a match. Longer matched strings rank first, then KB order.
std::vector<std::string> match_intent_arguments(const Turn& turn, const std::vector<Turn>& history,
                                                const LocalKB& kb);

struct ExtractionScore {
  std::size_t gold_pairs = 0;       // gold (slot, value) pairs mentioned in a system response
  std::size_t recovered = 0;        // of those, present in the pseudo KB
  std::size_t predicted_pairs = 0;
  std::size_t correct_pairs = 0;    // predicted pairs present in the gold KB
  double recall() const { return gold_pairs == 0 ? 1.0 : static_cast<double>(recovered) / gold_pairs; }
  double precision() const { return predicted_pairs == 0 ? 1.0 : static_cast<double>(correct_pairs) / predicted_pairs; }
};

// Scores pseudo KBs against gold KBs of the same dialogs. Only gold pairs
// whose value surfaces in the dialog's system responses count toward recall.
ExtractionScore score_extraction(const Corpus& gold, const std::map<std::string, LocalKB>& pseudo);

}  // namespace s2kg
