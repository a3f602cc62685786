// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/json.hpp"

namespace s2kg {

// ---- BLEU ------------------------------------------------------------------

inline constexpr double kBleuEpsilon = 1e-9;

// Additive corpus statistics; merge shards before computing the score.
struct BleuStats {
  std::array<std::size_t, 4> matches{};
  std::array<std::size_t, 4> totals{};
  std::size_t candidate_length = 0;
  std::size_t reference_length = 0;

  BleuStats& operator+=(const BleuStats& o);
};

BleuStats bleu_stats(const std::string& candidate, const std::string& reference);
// 0-100. Orders with no clipped match (or no candidate n-gram) use p_n = eps.
double bleu_from_stats(const BleuStats& stats);
double bleu4(const std::vector<std::string>& candidates, const std::vector<std::string>& references);

// ---- intents ---------------------------------------------------------------

struct Prf {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Micro-averaged over label instances of all turns.
Prf intent_prf(const std::vector<std::vector<std::string>>& pred, const std::vector<std::vector<std::string>>& gold);
// Mean of per-label scores over the labels seen in pred or gold.
Prf intent_prf_macro(const std::vector<std::vector<std::string>>& pred,
                     const std::vector<std::vector<std::string>>& gold);

// ---- success ---------------------------------------------------------------

// Query-type user intent -> requested slots.
struct SuccessConfig {
  std::map<std::string, std::vector<std::string>> intent_slots;
};

SuccessConfig default_success_config();
Json to_json(const SuccessConfig& c);
SuccessConfig success_config_from_json(const Json& j);

struct DialogRun {
  const Dialog* dialog = nullptr;
  std::vector<std::string> responses;  // one per turn
};

struct SuccessResult {
  std::size_t successes = 0;
  std::size_t evaluated = 0;  // dialogs with at least one request turn
  double rate = 0.0;
};

// Gold values a turn must mention, or empty when it is not a request turn.
// When the turn's intent arguments name KB entities, only those entities
// are consulted.
std::vector<std::string> required_values(const Turn& turn, const LocalKB& kb, const SuccessConfig& config);

SuccessResult success_rate(const std::vector<DialogRun>& runs, const SuccessConfig& config);

// ---- scores and report -----------------------------------------------------

double combined(double user_f1, double system_f1, double success, double bleu);

struct HumanRatingSummary {
  double fluency = 0.0;
  double coherency = 0.0;
  double success = 0.0;
  double average = 0.0;
  std::size_t sessions = 0;

  // Validates each mean in [1,5] and sets average = (f + c + s) / 3.
  static HumanRatingSummary from_means(double fluency, double coherency, double success, std::size_t sessions = 0);
};

Json to_json(const HumanRatingSummary& h);
HumanRatingSummary human_summary_from_json(const Json& j);

double final_score(double combined_score, const HumanRatingSummary& human);
double final_score(double combined_score, double human_average);

class EvalReport {
 public:
  // combined (and final, with human ratings) are derived here, so a report
  // cannot disagree with its formulas.
  static EvalReport make(double user_f1, double system_f1, double bleu, double success,
                         std::optional<HumanRatingSummary> human = std::nullopt);
  // Throws ValidationError when stored combined/final disagree with the
  // components.
  static EvalReport from_json(const Json& j);

  double user_intent_f1() const { return user_f1_; }
  double system_intent_f1() const { return system_f1_; }
  double bleu() const { return bleu_; }
  double success() const { return success_; }
  double combined() const { return combined_; }
  const std::optional<HumanRatingSummary>& human() const { return human_; }
  std::optional<double> human_avg() const;
  std::optional<double> final() const { return final_; }

  Json to_json() const;

 private:
  EvalReport() = default;
  double user_f1_ = 0.0, system_f1_ = 0.0, bleu_ = 0.0, success_ = 0.0, combined_ = 0.0;
  std::optional<HumanRatingSummary> human_;
  std::optional<double> final_;
};

// Fixed-width rows: name, user F1, system F1, BLEU, Success, Combined.
std::string format_report_table(const std::vector<std::pair<std::string, EvalReport>>& rows);

}  // namespace s2kg
