// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/gen_model.hpp"
#include "s2kg/json.hpp"
#include "s2kg/kb.hpp"

namespace s2kg {

// Responses for every turn of every dialog, conditioned on the gold history
// and the dialog's gold local KB.
std::vector<std::vector<std::string>> generate_responses(const KnowledgeGroundedGenerator& gen, const Corpus& corpus);

struct GenerationScore {
  double bleu = 0.0;
  SuccessResult success;
};

GenerationScore score_generation(const Corpus& corpus, const std::vector<std::vector<std::string>>& responses,
                                 const SuccessConfig& config);

struct AblationConfig {
  std::size_t n_dialogs = 500;
  std::size_t n_eval = 100;
  std::size_t n_labeled = 100;
  std::size_t min_freq = 1;
  nn::TransformerConfig model;
  GenerationOptions generation;
  DecodeConfig decode;
  RegimeSchedule schedule;
  GenTrainConfig train;
  std::vector<Regime> regimes = {Regime::FT, Regime::KGFT, Regime::UNSUP_KGFT, Regime::SEMI, Regime::SEMI_KGFT};
  // Trigger phrases kept per slot rule; 0 keeps the full lexicon.
  std::size_t lexicon_keep = 0;
};

// Defaults sized for a single CPU core.
AblationConfig default_ablation_config();
Json to_json(const AblationConfig& c);
AblationConfig ablation_config_from_json(const Json& j, AblationConfig base = default_ablation_config());

struct RegimeOutcome {
  Regime regime = Regime::FT;
  double bleu = 0.0;
  double success = 0.0;
  std::size_t successes = 0;
  std::size_t evaluated = 0;
  std::vector<double> final_losses;  // per stage
  double seconds = 0.0;
};

struct AblationResult {
  std::uint64_t seed = 0;
  ExtractionScore extraction;
  std::vector<RegimeOutcome> outcomes;

  const RegimeOutcome& at(Regime r) const;
};

// Synthesizes the corpus with `seed`, splits it into eval/labeled/unlabeled,
// extracts pseudo KBs for the unlabeled part, trains every configured regime
// from the same initialization and scores it on the eval dialogs.
AblationResult run_ablation(const AblationConfig& config, const SlotLexicon& lexicon, std::uint64_t seed,
                            const SynthConfig& synth = default_synth_config());

Json to_json(const AblationResult& r);
// Regime rows with BLEU and Success, one column pair per seed.
std::string format_ablation_table(const std::vector<AblationResult>& results);

// SEMI trained on pseudo KBs from the full lexicon and from a subset keeping
// `keep` triggers per rule, averaged over seeds.
struct RobustnessProbe {
  std::size_t keep = 1;
  std::vector<AblationResult> full;
  std::vector<AblationResult> degraded;
  double full_recall = 0.0;
  double degraded_recall = 0.0;
  double full_success = 0.0;
  double degraded_success = 0.0;
  double success_change() const { return degraded_success - full_success; }
};

RobustnessProbe run_robustness_probe(AblationConfig config, const SlotLexicon& lexicon,
                                     const std::vector<std::uint64_t>& seeds, std::size_t keep,
                                     const SynthConfig& synth = default_synth_config());
Json to_json(const RobustnessProbe& p);

}  // namespace s2kg
