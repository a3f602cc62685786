// SPDX-License-Identifier: Apache-2.0
#include "s2kg/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "s2kg/error.hpp"
#include "s2kg/text.hpp"

namespace s2kg {

BleuStats& BleuStats::operator+=(const BleuStats& o) {
  for (std::size_t n = 0; n < 4; ++n) {
    matches[n] += o.matches[n];
    totals[n] += o.totals[n];
  }
  candidate_length += o.candidate_length;
  reference_length += o.reference_length;
  return *this;
}

namespace {

using Gram = std::vector<std::string>;

std::map<Gram, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<Gram, std::size_t> out;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++out[Gram(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                                                toks.begin() + static_cast<std::ptrdiff_t>(i + n))];
  return out;
}

}  // namespace

BleuStats bleu_stats(const std::string& candidate, const std::string& reference) {
  const auto c = text::segment(candidate);
  const auto r = text::segment(reference);
  BleuStats s;
  s.candidate_length = c.size();
  s.reference_length = r.size();
  for (std::size_t n = 1; n <= 4; ++n) {
    const auto cc = ngram_counts(c, n);
    const auto rc = ngram_counts(r, n);
    for (const auto& [gram, count] : cc) {
      const auto it = rc.find(gram);
      if (it != rc.end()) s.matches[n - 1] += std::min(count, it->second);
      s.totals[n - 1] += count;
    }
  }
  return s;
}

double bleu_from_stats(const BleuStats& s) {
  if (s.candidate_length == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = s.matches[n] == 0 ? kBleuEpsilon
                                       : static_cast<double>(s.matches[n]) / static_cast<double>(s.totals[n]);
    log_sum += std::log(p);
  }
  const double c = static_cast<double>(s.candidate_length);
  const double r = static_cast<double>(s.reference_length);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return 100.0 * bp * std::exp(log_sum / 4.0);
}

double bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references) {
  if (candidates.size() != references.size()) {
    throw ValidationError("bleu4", std::to_string(candidates.size()) + " candidates vs " +
                                       std::to_string(references.size()) + " references");
  }
  if (candidates.empty()) throw ValidationError("bleu4", "needs at least one pair");
  BleuStats total;
  for (std::size_t i = 0; i < candidates.size(); ++i) total += bleu_stats(candidates[i], references[i]);
  return bleu_from_stats(total);
}

namespace {

double ratio(std::size_t num, std::size_t den, bool both_empty) {
  if (den == 0) return both_empty ? 1.0 : 0.0;
  return static_cast<double>(num) / static_cast<double>(den);
}

Prf prf_from_counts(std::size_t tp, std::size_t n_pred, std::size_t n_gold) {
  const bool empty = n_pred == 0 && n_gold == 0;
  Prf out;
  out.precision = ratio(tp, n_pred, empty);
  out.recall = ratio(tp, n_gold, empty);
  const double s = out.precision + out.recall;
  out.f1 = s == 0.0 ? 0.0 : 2.0 * out.precision * out.recall / s;
  return out;
}

void check_lengths(const std::vector<std::vector<std::string>>& pred,
                   const std::vector<std::vector<std::string>>& gold) {
  if (pred.size() != gold.size()) {
    throw ValidationError("intent_prf", std::to_string(pred.size()) + " predicted turns vs " +
                                            std::to_string(gold.size()) + " gold turns");
  }
}

}  // namespace

Prf intent_prf(const std::vector<std::vector<std::string>>& pred, const std::vector<std::vector<std::string>>& gold) {
  check_lengths(pred, gold);
  std::size_t tp = 0, np = 0, ng = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::set<std::string> p(pred[i].begin(), pred[i].end());
    const std::set<std::string> g(gold[i].begin(), gold[i].end());
    np += p.size();
    ng += g.size();
    for (const auto& l : p) tp += g.count(l);
  }
  return prf_from_counts(tp, np, ng);
}

Prf intent_prf_macro(const std::vector<std::vector<std::string>>& pred,
                     const std::vector<std::vector<std::string>>& gold) {
  check_lengths(pred, gold);
  std::map<std::string, std::array<std::size_t, 3>> counts;  // tp, pred, gold
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const std::set<std::string> p(pred[i].begin(), pred[i].end());
    const std::set<std::string> g(gold[i].begin(), gold[i].end());
    for (const auto& l : p) {
      ++counts[l][1];
      if (g.count(l)) ++counts[l][0];
    }
    for (const auto& l : g) ++counts[l][2];
  }
  if (counts.empty()) return Prf{1.0, 1.0, 1.0};
  Prf out;
  for (const auto& [label, c] : counts) {
    const Prf p = prf_from_counts(c[0], c[1], c[2]);
    out.precision += p.precision;
    out.recall += p.recall;
    out.f1 += p.f1;
  }
  const double n = static_cast<double>(counts.size());
  out.precision /= n;
  out.recall /= n;
  out.f1 /= n;
  return out;
}

SuccessConfig default_success_config() {
  SuccessConfig c;
  c.intent_slots = {{"询问费用", {"业务费用"}}, {"询问流量", {"流量总量"}}, {"询问有效期", {"有效期"}},
                    {"询问余量", {"套餐余量"}}, {"询问话费", {"话费余额"}}, {"询问通话", {"剩余通话"}}};
  return c;
}

Json to_json(const SuccessConfig& c) {
  Json j = Json::object();
  for (const auto& [intent, slots] : c.intent_slots) j[intent] = slots;
  return Json{{"intent_slots", j}};
}

SuccessConfig success_config_from_json(const Json& j) {
  SuccessConfig c;
  for (auto it = j.at("intent_slots").begin(); it != j.at("intent_slots").end(); ++it) {
    c.intent_slots[it.key()] = it.value().get<std::vector<std::string>>();
  }
  return c;
}

std::vector<std::string> required_values(const Turn& turn, const LocalKB& kb, const SuccessConfig& config) {
  std::vector<const Entity*> entities;
  for (const auto& name : turn.intent_arguments) {
    if (const Entity* e = kb.find_entity(name)) entities.push_back(e);
  }
  if (entities.empty()) {
    for (const auto& e : kb.entities) entities.push_back(&e);
  }
  std::vector<std::string> out;
  for (const auto& intent : turn.user_intents) {
    const auto it = config.intent_slots.find(intent);
    if (it == config.intent_slots.end()) continue;
    for (const auto& slot : it->second) {
      for (const Entity* e : entities) {
        const auto* values = e->find_slot(slot);
        if (!values) continue;
        for (const auto& v : *values) {
          if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
        }
        break;
      }
    }
  }
  return out;
}

SuccessResult success_rate(const std::vector<DialogRun>& runs, const SuccessConfig& config) {
  SuccessResult r;
  for (const auto& run : runs) {
    if (!run.dialog) throw ValidationError("success_rate", "run without a dialog");
    const Dialog& d = *run.dialog;
    if (run.responses.size() != d.turns.size()) {
      throw ValidationError(d.dialog_id, "run has " + std::to_string(run.responses.size()) + " responses for " +
                                             std::to_string(d.turns.size()) + " turns");
    }
    if (!d.local_kb) continue;
    bool any = false, ok = true;
    for (std::size_t i = 0; i < d.turns.size(); ++i) {
      const auto values = required_values(d.turns[i], *d.local_kb, config);
      if (values.empty()) continue;
      any = true;
      const std::string response = text::normalize_for_match(run.responses[i]);
      for (const auto& v : values) {
        if (response.find(text::normalize_for_match(v)) == std::string::npos) ok = false;
      }
    }
    if (!any) continue;
    ++r.evaluated;
    r.successes += ok;
  }
  r.rate = r.evaluated == 0 ? 0.0 : static_cast<double>(r.successes) / static_cast<double>(r.evaluated);
  return r;
}

double combined(double user_f1, double system_f1, double success, double bleu) {
  return user_f1 + system_f1 + success + bleu / 50.0;
}

HumanRatingSummary HumanRatingSummary::from_means(double fluency, double coherency, double success,
                                                  std::size_t sessions) {
  auto check = [](double v, const char* name) {
    if (!(v >= 1.0 && v <= 5.0)) throw ValidationError(name, "mean rating " + std::to_string(v) + " outside [1,5]");
  };
  check(fluency, "fluency");
  check(coherency, "coherency");
  check(success, "success");
  return HumanRatingSummary{fluency, coherency, success, (fluency + coherency + success) / 3.0, sessions};
}

Json to_json(const HumanRatingSummary& h) {
  return Json{{"fluency", h.fluency},
              {"coherency", h.coherency},
              {"success", h.success},
              {"average", h.average},
              {"sessions", h.sessions}};
}

HumanRatingSummary human_summary_from_json(const Json& j) {
  auto h = HumanRatingSummary::from_means(j.at("fluency").get<double>(), j.at("coherency").get<double>(),
                                          j.at("success").get<double>(), j.value("sessions", std::size_t{0}));
  if (j.contains("average") && std::abs(j.at("average").get<double>() - h.average) > 1e-12) {
    throw ValidationError("human.average", "does not equal the mean of fluency, coherency and success");
  }
  return h;
}

double final_score(double combined_score, double human_average) { return (combined_score + human_average) / 2.0; }

double final_score(double combined_score, const HumanRatingSummary& human) {
  return final_score(combined_score, human.average);
}

EvalReport EvalReport::make(double user_f1, double system_f1, double bleu, double success,
                            std::optional<HumanRatingSummary> human) {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0)) throw ValidationError(name, "value " + std::to_string(v) + " outside [0,1]");
  };
  unit(user_f1, "user_intent_f1");
  unit(system_f1, "system_intent_f1");
  unit(success, "success");
  if (!(bleu >= 0.0 && bleu <= 100.0)) throw ValidationError("bleu", "value " + std::to_string(bleu) + " outside [0,100]");
  EvalReport r;
  r.user_f1_ = user_f1;
  r.system_f1_ = system_f1;
  r.bleu_ = bleu;
  r.success_ = success;
  r.combined_ = s2kg::combined(user_f1, system_f1, success, bleu);
  r.human_ = human;
  if (human) r.final_ = final_score(r.combined_, *human);
  return r;
}

EvalReport EvalReport::from_json(const Json& j) {
  std::optional<HumanRatingSummary> human;
  if (j.contains("human") && !j.at("human").is_null()) human = human_summary_from_json(j.at("human"));
  auto r = make(j.at("user_intent_f1").get<double>(), j.at("system_intent_f1").get<double>(),
                j.at("bleu").get<double>(), j.at("success").get<double>(), human);
  if (std::abs(j.at("combined").get<double>() - r.combined_) > 1e-12) {
    throw ValidationError("combined", "does not equal user_f1 + system_f1 + success + bleu/50");
  }
  const bool has_final = j.contains("final") && !j.at("final").is_null();
  if (has_final != r.final_.has_value() ||
      (has_final && std::abs(j.at("final").get<double>() - *r.final_) > 1e-12)) {
    throw ValidationError("final", "does not equal (combined + human average) / 2");
  }
  return r;
}

std::optional<double> EvalReport::human_avg() const {
  if (!human_) return std::nullopt;
  return human_->average;
}

Json EvalReport::to_json() const {
  return Json{{"user_intent_f1", user_f1_},
              {"system_intent_f1", system_f1_},
              {"bleu", bleu_},
              {"success", success_},
              {"combined", combined_},
              {"human", human_ ? s2kg::to_json(*human_) : Json(nullptr)},
              {"final", final_ ? Json(*final_) : Json(nullptr)}};
}

std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  std::size_t w = 6;
  for (const auto& [name, r] : rows) w = std::max(w, text::length_in_code_points(name));
  auto pad = [&](const std::string& s) { return s + std::string(w - text::length_in_code_points(s), ' '); };
  std::string out = fmt::format("{}  {:>8}  {:>8}  {:>8}  {:>8}  {:>8}\n", pad("system"), "UserF1", "SysF1", "BLEU",
                                "Success", "Combined");
  for (const auto& [name, r] : rows) {
    out += fmt::format("{}  {:>8.3f}  {:>8.3f}  {:>8.3f}  {:>8.3f}  {:>8.3f}\n", pad(name), r.user_intent_f1(),
                       r.system_intent_f1(), r.bleu(), r.success(), r.combined());
  }
  return out;
}

}  // namespace s2kg
