// SPDX-License-Identifier: Apache-2.0
#include "s2kg/pipeline.hpp"

#include <fstream>

#include "s2kg/error.hpp"
#include "s2kg/semisup.hpp"

namespace s2kg {

TrainedModels::TrainedModels(IntentClassifier user, IntentClassifier system, KnowledgeGroundedGenerator generator)
    : user_(std::move(user)), system_(std::move(system)), generator_(std::move(generator)) {
  if (user_.task() != IntentTask::user) throw ValidationError("user model", "classifier is not a user-intent model");
  if (system_.task() != IntentTask::system) {
    throw ValidationError("system model", "classifier is not a system-intent model");
  }
}

std::vector<std::string> TrainedModels::user_intents(const std::vector<std::string>& user_utterances) const {
  return user_.predict(intent_input(user_utterances, default_intent_window(IntentTask::user)));
}

std::vector<std::string> TrainedModels::system_intents(const std::vector<std::string>& user_utterances) const {
  return system_.predict(intent_input(user_utterances, default_intent_window(IntentTask::system)));
}

std::string TrainedModels::respond(const std::vector<Turn>& history, const std::string& user_utterance,
                                   const LocalKB& kb) const {
  return generator_.generate(history, user_utterance, &kb);
}

Predictions load_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open predictions " + path.string());
  Predictions out;
  std::map<std::string, std::map<std::size_t, TurnPrediction>> staged;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const Json::parse_error& e) {
      throw ParseError(e.what(), n, path.string());
    }
    if (j.is_object() && j.size() == 1 && j.contains("provenance")) continue;
    try {
      TurnPrediction p;
      const auto id = j.at("dialog_id").get<std::string>();
      const auto idx = j.at("turn_index").get<std::size_t>();
      p.response = j.at("response").get<std::string>();
      p.user_intents = j.value("user_intents", std::vector<std::string>{});
      p.system_intents = j.value("system_intents", std::vector<std::string>{});
      if (!staged[id].emplace(idx, std::move(p)).second) {
        throw ParseError("duplicate prediction for " + id + " turn " + std::to_string(idx), n, path.string());
      }
    } catch (const Json::exception& e) {
      throw ParseError(e.what(), n, path.string());
    }
  }
  for (auto& [id, turns] : staged) {
    std::size_t expect = 0;
    for (auto& [idx, p] : turns) {
      if (idx != expect) throw ParseError(id + ": predictions skip turn " + std::to_string(expect), 0, path.string());
      out[id].push_back(std::move(p));
      ++expect;
    }
  }
  return out;
}

void save_predictions(const Predictions& p, const std::filesystem::path& path, const Json& provenance) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  if (!provenance.is_null()) out << Json{{"provenance", provenance}}.dump() << "\n";
  for (const auto& [id, turns] : p) {
    for (std::size_t i = 0; i < turns.size(); ++i) {
      out << Json{{"dialog_id", id},
                  {"turn_index", i},
                  {"response", turns[i].response},
                  {"user_intents", turns[i].user_intents},
                  {"system_intents", turns[i].system_intents}}
                 .dump()
          << "\n";
    }
  }
}

Predictions predictions_from_gold(const Corpus& corpus) {
  Predictions out;
  for (const auto& d : corpus.dialogs) {
    auto& turns = out[d.dialog_id];
    for (const auto& t : d.turns) turns.push_back({t.system_response, t.user_intents, t.system_intents});
  }
  return out;
}

Predictions predict_corpus(const DialogModels& models, const Corpus& corpus) {
  Predictions out;
  const LocalKB empty;
  for (const auto& d : corpus.dialogs) {
    const LocalKB& kb = d.local_kb ? *d.local_kb : empty;
    std::vector<Turn> history;
    std::vector<std::string> users;
    auto& turns = out[d.dialog_id];
    for (const auto& t : d.turns) {
      users.push_back(t.user_utterance);
      TurnPrediction p;
      p.user_intents = models.user_intents(users);
      p.response = models.respond(history, t.user_utterance, kb);
      p.system_intents = models.system_intents(users);
      turns.push_back(std::move(p));
      history.push_back(t);
    }
  }
  return out;
}

EvalReport evaluate_predictions(const Corpus& gold, const Predictions& predictions, const SuccessConfig& success,
                                std::optional<HumanRatingSummary> human) {
  std::vector<std::vector<std::string>> pu, gu, ps, gs;
  std::vector<std::string> cands, refs;
  std::vector<std::vector<std::string>> responses(gold.dialogs.size());
  std::vector<DialogRun> runs;
  for (std::size_t k = 0; k < gold.dialogs.size(); ++k) {
    const auto& d = gold.dialogs[k];
    const auto it = predictions.find(d.dialog_id);
    if (it == predictions.end()) throw ValidationError(d.dialog_id, "no predictions for dialog");
    if (it->second.size() != d.turns.size()) {
      throw ValidationError(d.dialog_id, "expected " + std::to_string(d.turns.size()) + " turn predictions, got " +
                                             std::to_string(it->second.size()));
    }
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      const auto& p = it->second[i];
      pu.push_back(p.user_intents);
      gu.push_back(d.turns[i].user_intents);
      ps.push_back(p.system_intents);
      gs.push_back(d.turns[i].system_intents);
      cands.push_back(p.response);
      refs.push_back(d.turns[i].system_response);
      responses[k].push_back(p.response);
    }
  }
  for (std::size_t k = 0; k < gold.dialogs.size(); ++k) runs.push_back(DialogRun{&gold.dialogs[k], responses[k]});
  const double user_f1 = intent_prf(pu, gu).f1;
  const double system_f1 = intent_prf(ps, gs).f1;
  const double bleu = bleu4(cands, refs);
  const double succ = success_rate(runs, success).rate;
  return EvalReport::make(user_f1, system_f1, bleu, succ, human);
}

}  // namespace s2kg
