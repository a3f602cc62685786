// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/gen_model.hpp"
#include "s2kg/intent_model.hpp"
#include "s2kg/json.hpp"
#include "s2kg/local_kb.hpp"

namespace s2kg {

// What a dialog system provides per turn. Implementations must be safe for
// concurrent calls.
class DialogModels {
 public:
  virtual ~DialogModels() = default;
  // `user_utterances` ends with the current one.
  virtual std::vector<std::string> user_intents(const std::vector<std::string>& user_utterances) const = 0;
  virtual std::vector<std::string> system_intents(const std::vector<std::string>& user_utterances) const = 0;
  virtual std::string respond(const std::vector<Turn>& history, const std::string& user_utterance,
                              const LocalKB& kb) const = 0;
};

class TrainedModels final : public DialogModels {
 public:
  TrainedModels(IntentClassifier user, IntentClassifier system, KnowledgeGroundedGenerator generator);

  std::vector<std::string> user_intents(const std::vector<std::string>& user_utterances) const override;
  std::vector<std::string> system_intents(const std::vector<std::string>& user_utterances) const override;
  std::string respond(const std::vector<Turn>& history, const std::string& user_utterance,
                      const LocalKB& kb) const override;

 private:
  IntentClassifier user_;
  IntentClassifier system_;
  KnowledgeGroundedGenerator generator_;
};

struct TurnPrediction {
  std::string response;
  std::vector<std::string> user_intents;
  std::vector<std::string> system_intents;

  bool operator==(const TurnPrediction&) const = default;
};

// dialog_id -> one prediction per turn, in turn order.
using Predictions = std::map<std::string, std::vector<TurnPrediction>>;

// JSONL, one record per turn: {dialog_id, turn_index, response,
// user_intents, system_intents}. Lines holding only "provenance" are skipped.
Predictions load_predictions(const std::filesystem::path& path);
void save_predictions(const Predictions& p, const std::filesystem::path& path, const Json& provenance = nullptr);

Predictions predictions_from_gold(const Corpus& corpus);
// Runs the models turn by turn on the gold history and the dialog's local
// KB (an empty KB when the dialog has none).
Predictions predict_corpus(const DialogModels& models, const Corpus& corpus);

// Scores predictions against a labeled corpus. Every turn needs a prediction.
EvalReport evaluate_predictions(const Corpus& gold, const Predictions& predictions,
                                const SuccessConfig& success = default_success_config(),
                                std::optional<HumanRatingSummary> human = std::nullopt);

}  // namespace s2kg
