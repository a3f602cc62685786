// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "s2kg/corpus.hpp"
#include "s2kg/intent_model.hpp"
#include "s2kg/json.hpp"
#include "s2kg/nn/transformer.hpp"
#include "s2kg/nn/vocab.hpp"
#include "s2kg/semisup.hpp"

namespace s2kg {

enum class Regime { FT, KGFT, UNSUP_KGFT, SEMI, SEMI_KGFT };
std::string_view to_string(Regime regime);
Regime parse_regime(std::string_view s);
const std::vector<Regime>& all_regimes();

// labeled: the labeled training dialogs; all: labeled plus unlabeled.
enum class StageSubset { labeled, all };
std::string_view to_string(StageSubset subset);
StageSubset parse_stage_subset(std::string_view s);

// With subset=all and kb_source=pseudo, labeled dialogs keep their gold KB
// and unlabeled ones use pseudo KBs, mixed and shuffled.
struct StageSpec {
  StageSubset subset = StageSubset::labeled;
  KbSource kb_source = KbSource::gold;
  std::size_t epochs = 10;
  double lr = 5e-4;
};

struct TrainingRegime {
  Regime tag = Regime::KGFT;
  std::vector<StageSpec> stages;
};

struct RegimeSchedule {
  std::size_t finetune_epochs = 20;  // labeled stages
  std::size_t pretrain_epochs = 5;   // no-KB pre-training over all dialogs
  std::size_t semi_epochs = 10;      // mixed gold + pseudo stage
  double lr = 5e-4;
};

Json to_json(const RegimeSchedule& s);
RegimeSchedule regime_schedule_from_json(const Json& j, RegimeSchedule base = {});

TrainingRegime standard_regime(Regime tag, const RegimeSchedule& schedule = {});
Json to_json(const TrainingRegime& r);
TrainingRegime training_regime_from_json(const Json& j);

enum class DecodeMode { greedy, beam };

struct DecodeConfig {
  DecodeMode mode = DecodeMode::greedy;
  std::size_t beam_width = 4;
  std::size_t max_len = 64;  // generated tokens, [EOS] included
  void validate() const;
};

Json to_json(const DecodeConfig& c);
DecodeConfig decode_config_from_json(const Json& j, DecodeConfig base = {});

struct GenTrainConfig {
  std::size_t epochs = 10;
  double lr = 5e-4;
  std::size_t batch = 16;
  std::uint64_t seed = 1;
  double clip_norm = 1.0;
};

Json to_json(const GenTrainConfig& c);
GenTrainConfig gen_train_config_from_json(const Json& j, GenTrainConfig base = {});

struct TokenAccuracy {
  std::size_t correct = 0;
  std::size_t total = 0;
  double value() const { return total == 0 ? 1.0 : static_cast<double>(correct) / static_cast<double>(total); }
};

class KnowledgeGroundedGenerator {
 public:
  static KnowledgeGroundedGenerator create(nn::Vocabulary vocab, nn::TransformerConfig model,
                                           GenerationOptions options, DecodeConfig decode, std::uint64_t seed);

  const nn::Vocabulary& vocab() const { return vocab_; }
  const nn::TransformerConfig& model_config() const { return model_; }
  nn::ParameterSet<float>& params() { return params_; }
  const nn::ParameterSet<float>& params() const { return params_; }
  const GenerationOptions& options() const { return options_; }
  void set_options(const GenerationOptions& o) { options_ = o; }
  const DecodeConfig& decode_config() const { return decode_; }
  void set_decode_config(const DecodeConfig& d);
  const std::string& regime_tag() const { return regime_tag_; }
  void set_regime_tag(std::string tag) { regime_tag_ = std::move(tag); }
  std::uint64_t seed() const { return seed_; }

  // Keeps the last max_len tokens, so a KB segment at the end survives.
  std::vector<int> encode_input(std::string_view text) const;
  // Response ids followed by [EOS], cut to fit the decoder.
  std::vector<int> encode_target(std::string_view text, bool* truncated = nullptr) const;

  double teacher_forced_loss(const std::vector<int>& input_ids, const std::vector<int>& target_ids) const;
  double teacher_forced_loss(const GenExample& e) const;
  TokenAccuracy teacher_forced_accuracy(const std::vector<GenExample>& examples) const;

  // Generated ids without [EOS].
  std::vector<int> decode_ids(const std::vector<int>& input_ids) const;
  std::string generate_text(std::string_view input_text) const;
  // Renders the input like build_generation_examples. The KB is used only
  // when the generator's options ask for one.
  std::string generate(const std::vector<Turn>& history, std::string_view current_user, const LocalKB* kb) const;

  Json metadata() const;
  void save(const std::filesystem::path& path, const Json& extra = Json::object()) const;
  static KnowledgeGroundedGenerator load(const std::filesystem::path& path);

 private:
  std::vector<int> greedy(const std::vector<int>& input_ids) const;
  std::vector<int> beam(const std::vector<int>& input_ids) const;
  std::vector<double> next_log_probs(const nn::Tensor<float>& memory, const std::vector<int>& input_ids,
                                     const std::vector<int>& prefix) const;
  nn::Tensor<float> memory_of(const std::vector<int>& input_ids) const;

  nn::Vocabulary vocab_;
  nn::TransformerConfig model_;
  nn::ParameterSet<float> params_;
  GenerationOptions options_;
  DecodeConfig decode_;
  std::string regime_tag_ = "none";
  std::uint64_t seed_ = 0;
};

// Teacher-forced training: decoder input [BOS]+response, targets
// response+[EOS]; loss on target tokens only.
TrainTrace train_stage(KnowledgeGroundedGenerator& gen, const std::vector<GenExample>& examples,
                       const GenTrainConfig& config);

struct RegimeCorpora {
  const Corpus* labeled = nullptr;
  const Corpus* unlabeled = nullptr;
  const std::map<std::string, LocalKB>* pseudo_kbs = nullptr;
};

std::vector<GenExample> stage_examples(const StageSpec& stage, const RegimeCorpora& corpora,
                                       const GenerationOptions& base, std::uint64_t shuffle_seed);

// Runs the stages in order on the same parameters with fresh optimizer
// state per stage. `base` supplies batch, seed and clipping; epochs and lr
// come from each stage.
std::vector<TrainTrace> run_regime(KnowledgeGroundedGenerator& gen, const TrainingRegime& regime,
                                   const RegimeCorpora& corpora, const GenTrainConfig& base);

// {context, kb, prediction, gold}
Json transcript_record(const GenExample& example, const std::string& kb_text, const std::string& prediction);

}  // namespace s2kg
