// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "s2kg/error.hpp"
#include "s2kg/json.hpp"
#include "s2kg/nn/graph.hpp"
#include "s2kg/nn/transformer.hpp"
#include "s2kg/nn/vocab.hpp"
#include "s2kg/semisup.hpp"

namespace s2kg {

struct FgmConfig {
  bool enabled = false;
  double epsilon = 1.0;
};

// epsilon * g / ||g||_2, or zeros when g is zero.
template <class T>
std::vector<T> fgm_perturb(std::span<const T> gradient, double epsilon) {
  if (epsilon < 0.0) throw ValidationError("epsilon", "must be non-negative");
  double sq = 0.0;
  for (const T v : gradient) {
    if (!std::isfinite(static_cast<double>(v))) throw ValidationError("embedding gradient", "non-finite value");
    sq += static_cast<double>(v) * static_cast<double>(v);
  }
  std::vector<T> r(gradient.size(), T{0});
  if (sq == 0.0 || epsilon == 0.0) return r;
  const double s = epsilon / std::sqrt(sq);
  for (std::size_t i = 0; i < r.size(); ++i) r[i] = static_cast<T>(s * static_cast<double>(gradient[i]));
  return r;
}

struct ClsTrainConfig {
  std::size_t epochs = 30;
  double lr = 5e-4;
  std::size_t batch = 16;
  FgmConfig fgm;
  std::uint64_t seed = 1;
  double clip_norm = 0.0;
};

struct MlmConfig {
  std::size_t epochs = 20;
  double lr = 5e-4;
  double mask_rate = 0.15;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
};

Json to_json(const FgmConfig& c);
Json to_json(const ClsTrainConfig& c);
Json to_json(const MlmConfig& c);
ClsTrainConfig cls_train_config_from_json(const Json& j, ClsTrainConfig base = {});
MlmConfig mlm_config_from_json(const Json& j, MlmConfig base = {});

struct TrainTrace {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
  std::size_t skipped = 0;
};

// Multi-label classifier: [CLS] + tokens -> encoder -> final [CLS] state ->
// linear head -> per-label sigmoid.
class IntentClassifier {
 public:
  static IntentClassifier create(nn::Vocabulary vocab, std::vector<std::string> labels, IntentTask task,
                                 nn::TransformerConfig model, std::uint64_t seed);

  const nn::Vocabulary& vocab() const { return vocab_; }
  const std::vector<std::string>& labels() const { return labels_; }
  IntentTask task() const { return task_; }
  const nn::TransformerConfig& model_config() const { return model_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  const std::vector<double>& thresholds() const { return thresholds_; }
  void set_thresholds(std::vector<double> thresholds);
  std::uint64_t seed() const { return seed_; }

  // [CLS] followed by the encoded text, cut to max_len.
  std::vector<int> encode_input(std::string_view text) const;

  std::vector<double> scores(std::string_view text) const;
  std::vector<std::vector<double>> scores(const std::vector<ClsExample>& examples) const;
  std::vector<std::string> predict(std::string_view text) const;
  std::vector<std::string> decide(const std::vector<double>& scores) const;

  // Sum of per-label BCE for one example at the current parameters.
  double loss(const ClsExample& example) const;

  Json thresholds_json() const;
  Json metadata() const;
  void save(const std::filesystem::path& path, const Json& extra = Json::object()) const;
  static IntentClassifier load(const std::filesystem::path& path);

 private:
  nn::Vocabulary vocab_;
  std::vector<std::string> labels_;
  IntentTask task_ = IntentTask::user;
  nn::TransformerConfig model_;
  nn::ParameterSet<float> params_;
  std::vector<double> thresholds_;
  std::uint64_t seed_ = 0;
};

// Logits [1, L] of one input. Works on trainable or frozen parameters.
template <class T>
typename nn::Graph<T>::Var classifier_logits(nn::Binder<T>& b, const nn::TransformerConfig& c,
                                            const std::vector<int>& ids) {
  auto& g = b.graph();
  const auto h = nn::encode(b, c, ids);
  const auto cls = nn::select_rows(g, h, {0});
  return nn::linear(g, cls, b("head.w"), b("head.b"));
}

TrainTrace train_classifier(IntentClassifier& clf, const std::vector<ClsExample>& examples,
                            const ClsTrainConfig& config);

// MLM on the classifier's encoder with a tied output layer; the encoder
// and embedding are updated in place. Only masked positions carry loss.
TrainTrace mlm_pretrain(IntentClassifier& clf, const std::vector<MlmExample>& examples, const MlmConfig& config);

// Masked-position cross-entropy under the encoder in `clf` (zero MLM bias).
// `reference` holds a target for every position but only masked positions
// are read.
double mlm_loss(const IntentClassifier& clf, const std::vector<int>& tokens, const std::vector<int>& reference,
                const std::vector<std::size_t>& masked_positions);
double mlm_loss(const IntentClassifier& clf, const MlmExample& example);

std::vector<double> default_threshold_grid();

// Per label, the grid value maximizing that label's F1 (score >= t counts
// as positive); ties go to the smallest threshold. A label with no gold
// and no predicted positives has F1 = 1.
std::vector<double> search_thresholds(const std::vector<std::vector<double>>& scores,
                                      const std::vector<std::vector<int>>& gold, const std::vector<double>& grid);

double label_f1(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& gold,
                std::size_t label, double threshold);

}  // namespace s2kg
