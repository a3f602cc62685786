// SPDX-License-Identifier: Apache-2.0
#include "s2kg/gen_model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <spdlog/spdlog.h>

#include "s2kg/nn/adam.hpp"
#include "s2kg/nn/checkpoint.hpp"
#include "s2kg/random.hpp"

namespace s2kg {

using nn::Binder;
using nn::Graph;
using nn::Tensor;

std::string_view to_string(Regime regime) {
  switch (regime) {
    case Regime::FT:
      return "FT";
    case Regime::KGFT:
      return "KGFT";
    case Regime::UNSUP_KGFT:
      return "UNSUP_KGFT";
    case Regime::SEMI:
      return "SEMI";
    case Regime::SEMI_KGFT:
      return "SEMI_KGFT";
  }
  return "FT";
}

Regime parse_regime(std::string_view s) {
  for (const Regime r : all_regimes()) {
    if (to_string(r) == s) return r;
  }
  throw ValidationError("regime", "unknown regime '" + std::string(s) + "'");
}

const std::vector<Regime>& all_regimes() {
  static const std::vector<Regime> kAll = {Regime::FT, Regime::KGFT, Regime::UNSUP_KGFT, Regime::SEMI,
                                           Regime::SEMI_KGFT};
  return kAll;
}

std::string_view to_string(StageSubset subset) { return subset == StageSubset::labeled ? "labeled" : "all"; }

StageSubset parse_stage_subset(std::string_view s) {
  if (s == "labeled") return StageSubset::labeled;
  if (s == "all") return StageSubset::all;
  throw ValidationError("subset", "expected labeled|all, got '" + std::string(s) + "'");
}

Json to_json(const RegimeSchedule& s) {
  return Json{{"finetune_epochs", s.finetune_epochs},
              {"pretrain_epochs", s.pretrain_epochs},
              {"semi_epochs", s.semi_epochs},
              {"lr", s.lr}};
}

RegimeSchedule regime_schedule_from_json(const Json& j, RegimeSchedule s) {
  s.finetune_epochs = j.value("finetune_epochs", s.finetune_epochs);
  s.pretrain_epochs = j.value("pretrain_epochs", s.pretrain_epochs);
  s.semi_epochs = j.value("semi_epochs", s.semi_epochs);
  s.lr = j.value("lr", s.lr);
  return s;
}

TrainingRegime standard_regime(Regime tag, const RegimeSchedule& s) {
  const StageSpec labeled_none{StageSubset::labeled, KbSource::none, s.finetune_epochs, s.lr};
  const StageSpec labeled_gold{StageSubset::labeled, KbSource::gold, s.finetune_epochs, s.lr};
  const StageSpec all_none{StageSubset::all, KbSource::none, s.pretrain_epochs, s.lr};
  const StageSpec all_pseudo{StageSubset::all, KbSource::pseudo, s.semi_epochs, s.lr};
  switch (tag) {
    case Regime::FT:
      return {tag, {labeled_none}};
    case Regime::KGFT:
      return {tag, {labeled_gold}};
    case Regime::UNSUP_KGFT:
      return {tag, {all_none, labeled_gold}};
    case Regime::SEMI:
      return {tag, {all_pseudo}};
    case Regime::SEMI_KGFT:
      return {tag, {all_pseudo, labeled_gold}};
  }
  return {tag, {}};
}

Json to_json(const TrainingRegime& r) {
  Json stages = Json::array();
  for (const auto& s : r.stages) {
    stages.push_back(Json{{"subset", to_string(s.subset)},
                          {"kb_source", to_string(s.kb_source)},
                          {"epochs", s.epochs},
                          {"lr", s.lr}});
  }
  return Json{{"regime", to_string(r.tag)}, {"stages", std::move(stages)}};
}

TrainingRegime training_regime_from_json(const Json& j) {
  TrainingRegime r;
  r.tag = parse_regime(j.at("regime").get<std::string>());
  if (!j.contains("stages")) return standard_regime(r.tag);
  for (const auto& s : j.at("stages")) {
    StageSpec st;
    st.subset = parse_stage_subset(s.value("subset", "labeled"));
    st.kb_source = parse_kb_source(s.value("kb_source", "gold"));
    st.epochs = s.value("epochs", st.epochs);
    st.lr = s.value("lr", st.lr);
    r.stages.push_back(st);
  }
  if (r.stages.empty()) throw ValidationError("regime", "needs at least one stage");
  return r;
}

void DecodeConfig::validate() const {
  if (beam_width < 1) throw ValidationError("beam_width", "must be at least 1");
  if (max_len < 1) throw ValidationError("max_len", "must be at least 1");
}

Json to_json(const DecodeConfig& c) {
  return Json{{"mode", c.mode == DecodeMode::greedy ? "greedy" : "beam"},
              {"beam_width", c.beam_width},
              {"max_len", c.max_len}};
}

DecodeConfig decode_config_from_json(const Json& j, DecodeConfig c) {
  if (j.contains("mode")) {
    const auto m = j.at("mode").get<std::string>();
    if (m == "greedy") {
      c.mode = DecodeMode::greedy;
    } else if (m == "beam") {
      c.mode = DecodeMode::beam;
    } else {
      throw ValidationError("mode", "expected greedy|beam, got '" + m + "'");
    }
  }
  c.beam_width = j.value("beam_width", c.beam_width);
  c.max_len = j.value("max_len", c.max_len);
  c.validate();
  return c;
}

Json to_json(const GenTrainConfig& c) {
  return Json{{"epochs", c.epochs}, {"lr", c.lr}, {"batch", c.batch}, {"seed", c.seed}, {"clip_norm", c.clip_norm}};
}

GenTrainConfig gen_train_config_from_json(const Json& j, GenTrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  return c;
}

KnowledgeGroundedGenerator KnowledgeGroundedGenerator::create(nn::Vocabulary vocab, nn::TransformerConfig model,
                                                              GenerationOptions options, DecodeConfig decode,
                                                              std::uint64_t seed) {
  model.vocab_size = vocab.size();
  model.validate();
  KnowledgeGroundedGenerator g;
  g.vocab_ = std::move(vocab);
  g.vocab_.bos_id();
  g.vocab_.eos_id();
  g.model_ = model;
  g.options_ = options;
  g.set_decode_config(decode);
  g.seed_ = seed;
  Rng rng(seed);
  nn::init_encoder(g.params_, model, rng);
  nn::init_decoder(g.params_, model, rng);
  return g;
}

void KnowledgeGroundedGenerator::set_decode_config(const DecodeConfig& d) {
  d.validate();
  if (d.max_len + 1 > model_.max_len) {
    throw ValidationError("max_len", "decode length " + std::to_string(d.max_len) + " does not fit model max_len " +
                                         std::to_string(model_.max_len));
  }
  decode_ = d;
}

std::vector<int> KnowledgeGroundedGenerator::encode_input(std::string_view text) const {
  auto ids = vocab_.encode(text);
  if (ids.size() > model_.max_len) ids.erase(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(model_.max_len));
  if (ids.empty()) ids.push_back(vocab_.eos_id());
  return ids;
}

std::vector<int> KnowledgeGroundedGenerator::encode_target(std::string_view text, bool* truncated) const {
  auto ids = vocab_.encode(text);
  const std::size_t cap = model_.max_len - 1;
  const bool cut = ids.size() + 1 > cap;
  if (cut) ids.resize(cap - 1);
  if (truncated) *truncated = cut;
  ids.push_back(vocab_.eos_id());
  return ids;
}

namespace {

Graph<float>::Var seq2seq_logits(Binder<float>& b, const nn::TransformerConfig& c, const std::vector<int>& input,
                                 const std::vector<int>& decoder_input) {
  const auto mem = nn::encode(b, c, input);
  const auto h = nn::decode(b, c, decoder_input, mem);
  return nn::output_scores(b, c, h, mem, input);
}

std::vector<int> shift_right(const std::vector<int>& target, int bos) {
  std::vector<int> in{bos};
  in.insert(in.end(), target.begin(), target.end() - 1);
  return in;
}

}  // namespace

double KnowledgeGroundedGenerator::teacher_forced_loss(const std::vector<int>& input_ids,
                                                       const std::vector<int>& target_ids) const {
  Graph<float> g;
  Binder<float> b(g, params_);
  const auto logits =
      seq2seq_logits(b, model_, input_ids, shift_right(target_ids, vocab_.bos_id()));
  return g.value(nn::cross_entropy(g, logits, target_ids))[0];
}

double KnowledgeGroundedGenerator::teacher_forced_loss(const GenExample& e) const {
  return teacher_forced_loss(encode_input(e.input_text), encode_target(e.target_text));
}

TokenAccuracy KnowledgeGroundedGenerator::teacher_forced_accuracy(const std::vector<GenExample>& examples) const {
  TokenAccuracy acc;
  for (const auto& e : examples) {
    const auto target = encode_target(e.target_text);
    Graph<float> g;
    Binder<float> b(g, params_);
    const auto logits = seq2seq_logits(b, model_, encode_input(e.input_text),
                                                                      shift_right(target, vocab_.bos_id()));
    const float* z = g.value(logits);
    const std::size_t v = g.cols(logits);
    for (std::size_t i = 0; i < target.size(); ++i) {
      const auto best = std::max_element(z + i * v, z + (i + 1) * v) - (z + i * v);
      acc.correct += best == target[i];
      ++acc.total;
    }
  }
  return acc;
}

Tensor<float> KnowledgeGroundedGenerator::memory_of(const std::vector<int>& input_ids) const {
  Graph<float> g;
  Binder<float> b(g, params_);
  return g.to_tensor(nn::encode(b, model_, input_ids));
}

std::vector<double> KnowledgeGroundedGenerator::next_log_probs(const Tensor<float>& memory,
                                                               const std::vector<int>& input_ids,
                                                               const std::vector<int>& prefix) const {
  Graph<float> g;
  Binder<float> b(g, params_);
  const auto mem = g.constant(memory);
  const auto h = nn::decode(b, model_, prefix, mem);
  const auto last = nn::select_rows(g, h, {prefix.size() - 1});
  const auto logits = g.values(nn::output_scores(b, model_, last, mem, input_ids));
  double mx = -std::numeric_limits<double>::infinity();
  for (const float z : logits) mx = std::max(mx, static_cast<double>(z));
  double sum = 0.0;
  for (const float z : logits) sum += std::exp(static_cast<double>(z) - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(logits.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<double>(logits[i]) - lse;
  return out;
}

std::vector<int> KnowledgeGroundedGenerator::greedy(const std::vector<int>& input_ids) const {
  const auto memory = memory_of(input_ids);
  const int eos = vocab_.eos_id();
  std::vector<int> prefix{vocab_.bos_id()};
  for (std::size_t step = 0; step < decode_.max_len; ++step) {
    const auto lp = next_log_probs(memory, input_ids, prefix);
    const int next = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
    if (next == eos) break;
    prefix.push_back(next);
  }
  return {prefix.begin() + 1, prefix.end()};
}

std::vector<int> KnowledgeGroundedGenerator::beam(const std::vector<int>& input_ids) const {
  struct Hyp {
    std::vector<int> tokens;  // without [BOS]; finished ones end in [EOS]
    double score = 0.0;
  };
  auto better = [](const Hyp& a, const Hyp& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.tokens < b.tokens;
  };
  const auto memory = memory_of(input_ids);
  const int eos = vocab_.eos_id();
  const int bos = vocab_.bos_id();
  const std::size_t width = decode_.beam_width;
  std::vector<Hyp> alive{Hyp{}};
  std::vector<Hyp> finished;
  for (std::size_t step = 0; step < decode_.max_len && !alive.empty(); ++step) {
    std::vector<Hyp> candidates;
    for (const auto& h : alive) {
      std::vector<int> prefix{bos};
      prefix.insert(prefix.end(), h.tokens.begin(), h.tokens.end());
      const auto lp = next_log_probs(memory, input_ids, prefix);
      std::vector<int> ids(lp.size());
      std::iota(ids.begin(), ids.end(), 0);
      const std::size_t k = std::min(width, ids.size());
      std::partial_sort(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(k), ids.end(),
                        [&](int a, int b) { return lp[a] != lp[b] ? lp[a] > lp[b] : a < b; });
      for (std::size_t i = 0; i < k; ++i) {
        Hyp c{h.tokens, h.score + lp[ids[i]]};
        c.tokens.push_back(ids[i]);
        candidates.push_back(std::move(c));
      }
    }
    std::sort(candidates.begin(), candidates.end(), better);
    alive.clear();
    for (std::size_t i = 0; i < std::min(width, candidates.size()); ++i) {
      if (candidates[i].tokens.back() == eos) {
        finished.push_back(std::move(candidates[i]));
      } else {
        alive.push_back(std::move(candidates[i]));
      }
    }
    // Scores only fall as hypotheses grow.
    if (!finished.empty() && !alive.empty()) {
      const auto best_done = std::min_element(finished.begin(), finished.end(), better);
      if (best_done->score >= alive.front().score) break;
    }
  }
  if (finished.empty()) finished = alive;
  auto best = *std::min_element(finished.begin(), finished.end(), better);
  if (!best.tokens.empty() && best.tokens.back() == eos) best.tokens.pop_back();
  return best.tokens;
}

std::vector<int> KnowledgeGroundedGenerator::decode_ids(const std::vector<int>& input_ids) const {
  return decode_.mode == DecodeMode::greedy ? greedy(input_ids) : beam(input_ids);
}

std::string KnowledgeGroundedGenerator::generate_text(std::string_view input_text) const {
  const auto ids = decode_ids(encode_input(input_text));
  return vocab_.decode(ids, true);
}

std::string KnowledgeGroundedGenerator::generate(const std::vector<Turn>& history, std::string_view current_user,
                                                 const LocalKB* kb) const {
  static const LocalKB kEmpty;
  const LocalKB* use = options_.kb_source == KbSource::none ? nullptr : (kb ? kb : &kEmpty);
  return generate_text(render_generation_input(history, current_user, use, options_));
}

Json KnowledgeGroundedGenerator::metadata() const {
  return Json{{"kind", "generator"},
              {"regime", regime_tag_},
              {"model", nn::to_json(model_)},
              {"generation", to_json(options_)},
              {"decode", to_json(decode_)},
              {"vocab", vocab_.tokens()},
              {"seed", seed_}};
}

void KnowledgeGroundedGenerator::save(const std::filesystem::path& path, const Json& extra) const {
  Json meta = metadata();
  if (!extra.empty()) meta["extra"] = extra;
  nn::save_checkpoint(path, params_, meta);
}

KnowledgeGroundedGenerator KnowledgeGroundedGenerator::load(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path);
  const Json& m = ck.metadata;
  if (m.value("kind", "") != "generator") {
    throw VersionError("checkpoint " + path.string() + " does not hold a generator");
  }
  auto g = create(nn::Vocabulary::from_tokens(m.at("vocab").get<std::vector<std::string>>()),
                  nn::transformer_config_from_json(m.at("model")), generation_options_from_json(m.at("generation")),
                  decode_config_from_json(m.at("decode")), m.value("seed", std::uint64_t{0}));
  if (ck.params.size() != g.params_.size() || g.params_.copy_values_from(ck.params, "") != g.params_.size()) {
    throw VersionError("checkpoint " + path.string() + " parameters do not match its model config");
  }
  g.regime_tag_ = m.value("regime", "none");
  return g;
}

TrainTrace train_stage(KnowledgeGroundedGenerator& gen, const std::vector<GenExample>& examples,
                       const GenTrainConfig& config) {
  if (examples.empty()) throw ValidationError("examples", "empty training set");
  if (config.batch == 0) throw ValidationError("batch", "must be positive");
  auto& params = gen.params();
  const auto& model = gen.model_config();
  const int bos = gen.vocab().bos_id();
  std::vector<std::vector<int>> inputs, targets, dec_inputs;
  std::size_t truncated = 0;
  for (const auto& e : examples) {
    bool cut = false;
    inputs.push_back(gen.encode_input(e.input_text));
    targets.push_back(gen.encode_target(e.target_text, &cut));
    dec_inputs.push_back(shift_right(targets.back(), bos));
    truncated += cut;
  }
  if (truncated > 0) spdlog::warn("train_stage: truncated {} targets to max_len {}", truncated, model.max_len);

  auto state = nn::make_adam_state(params, nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.clip_norm});
  Rng rng(config.seed);
  Rng drop_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  TrainTrace trace;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t i = order[k];
        Graph<float> g;
        Binder<float> b(g, params);
        b.enable_dropout(drop_rng);
        const auto logits = seq2seq_logits(b, model, inputs[i], dec_inputs[i]);
        const auto loss = nn::cross_entropy(g, logits, targets[i]);
        total += g.value(loss)[0];
        g.backward(nn::scale(g, loss, 1.0f / static_cast<float>(end - start)));
      }
      nn::adam_step(params, state);
      ++trace.steps;
    }
    trace.epoch_loss.push_back(total / static_cast<double>(order.size()));
    spdlog::debug("gen epoch {} loss {:.5f}", epoch + 1, trace.epoch_loss.back());
  }
  params.zero_grad();
  if (!trace.epoch_loss.empty()) {
    spdlog::info("gen stage: {} examples, {} epochs, final loss {:.5f}", examples.size(), config.epochs,
                 trace.epoch_loss.back());
  }
  return trace;
}

std::vector<GenExample> stage_examples(const StageSpec& stage, const RegimeCorpora& corpora,
                                       const GenerationOptions& base, std::uint64_t shuffle_seed) {
  if (!corpora.labeled) throw ValidationError("corpora", "no labeled corpus");
  GenerationOptions o = base;
  o.kb_source = stage.kb_source;
  if (stage.subset == StageSubset::labeled) {
    if (stage.kb_source == KbSource::pseudo) {
      if (!corpora.pseudo_kbs) throw ValidationError("regime", "pseudo-KB stage without pseudo KBs");
      return build_generation_examples(*corpora.labeled, o, corpora.pseudo_kbs);
    }
    return build_generation_examples(*corpora.labeled, o);
  }
  if (!corpora.unlabeled) throw ValidationError("corpora", "stage over all dialogs needs an unlabeled corpus");
  switch (stage.kb_source) {
    case KbSource::none: {
      auto a = build_generation_examples(*corpora.labeled, o);
      auto b = build_generation_examples(*corpora.unlabeled, o);
      a.insert(a.end(), b.begin(), b.end());
      return a;
    }
    case KbSource::pseudo: {
      if (!corpora.pseudo_kbs) throw ValidationError("regime", "SEMI stage without pseudo KBs");
      GenerationOptions gold = o;
      gold.kb_source = KbSource::gold;
      return mix_corpora(build_generation_examples(*corpora.labeled, gold),
                         build_generation_examples(*corpora.unlabeled, o, corpora.pseudo_kbs), shuffle_seed);
    }
    case KbSource::gold:
      break;
  }
  throw ValidationError("regime", "gold KBs are not available for unlabeled dialogs");
}

std::vector<TrainTrace> run_regime(KnowledgeGroundedGenerator& gen, const TrainingRegime& regime,
                                   const RegimeCorpora& corpora, const GenTrainConfig& base) {
  if (regime.stages.empty()) throw ValidationError("regime", "needs at least one stage");
  std::vector<TrainTrace> traces;
  for (std::size_t i = 0; i < regime.stages.size(); ++i) {
    const auto& stage = regime.stages[i];
    const auto examples = stage_examples(stage, corpora, gen.options(), base.seed + i);
    GenTrainConfig cfg = base;
    cfg.epochs = stage.epochs;
    cfg.lr = stage.lr;
    cfg.seed = base.seed + 1000 * (i + 1);
    spdlog::info("{} stage {}: {} {} examples", to_string(regime.tag), i + 1, examples.size(),
                 to_string(stage.kb_source));
    traces.push_back(train_stage(gen, examples, cfg));
  }
  GenerationOptions o = gen.options();
  o.kb_source = regime.stages.back().kb_source == KbSource::none ? KbSource::none : KbSource::gold;
  gen.set_options(o);
  gen.set_regime_tag(std::string(to_string(regime.tag)));
  return traces;
}

Json transcript_record(const GenExample& example, const std::string& kb_text, const std::string& prediction) {
  return Json{{"dialog_id", example.dialog_id},
              {"turn_index", example.turn_index},
              {"context", example.input_text},
              {"kb", kb_text},
              {"prediction", prediction},
              {"gold", example.target_text}};
}

}  // namespace s2kg
