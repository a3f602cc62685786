// SPDX-License-Identifier: Apache-2.0
#include "s2kg/ablation.hpp"

#include <chrono>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "s2kg/error.hpp"

namespace s2kg {

std::vector<std::vector<std::string>> generate_responses(const KnowledgeGroundedGenerator& gen, const Corpus& corpus) {
  std::vector<std::vector<std::string>> out;
  out.reserve(corpus.dialogs.size());
  for (const auto& d : corpus.dialogs) {
    const LocalKB* kb = d.local_kb ? &*d.local_kb : nullptr;
    std::vector<Turn> history;
    std::vector<std::string> responses;
    for (const auto& t : d.turns) {
      responses.push_back(gen.generate(history, t.user_utterance, kb));
      history.push_back(t);
    }
    out.push_back(std::move(responses));
  }
  return out;
}

GenerationScore score_generation(const Corpus& corpus, const std::vector<std::vector<std::string>>& responses,
                                 const SuccessConfig& config) {
  if (responses.size() != corpus.dialogs.size()) throw ValidationError("responses", "one list per dialog expected");
  std::vector<std::string> cands, refs;
  std::vector<DialogRun> runs;
  for (std::size_t i = 0; i < corpus.dialogs.size(); ++i) {
    const auto& d = corpus.dialogs[i];
    runs.push_back(DialogRun{&d, responses[i]});
    for (std::size_t k = 0; k < d.turns.size() && k < responses[i].size(); ++k) {
      cands.push_back(responses[i][k]);
      refs.push_back(d.turns[k].system_response);
    }
  }
  GenerationScore s;
  s.success = success_rate(runs, config);
  s.bleu = bleu4(cands, refs);
  return s;
}

AblationConfig default_ablation_config() {
  AblationConfig c;
  c.model.d_model = 64;
  c.model.n_heads = 4;
  c.model.d_ff = 128;
  c.model.encoder_layers = 2;
  c.model.decoder_layers = 2;
  c.model.max_len = 160;
  c.model.relative_buckets = 32;
  c.model.copy_head = true;
  c.model.dropout = 0.1;
  c.generation.history_window = 1;
  c.generation.max_input_len = 150;
  c.decode.max_len = 40;
  c.schedule.finetune_epochs = 15;
  c.schedule.pretrain_epochs = 3;
  c.schedule.semi_epochs = 8;
  c.schedule.lr = 1e-3;
  c.train.batch = 8;
  c.train.clip_norm = 1.0;
  c.train.seed = 1;
  return c;
}

Json to_json(const AblationConfig& c) {
  Json regimes = Json::array();
  for (const Regime r : c.regimes) regimes.push_back(to_string(r));
  return Json{{"n_dialogs", c.n_dialogs},
              {"n_eval", c.n_eval},
              {"n_labeled", c.n_labeled},
              {"min_freq", c.min_freq},
              {"model", nn::to_json(c.model)},
              {"generation", to_json(c.generation)},
              {"decode", to_json(c.decode)},
              {"schedule", to_json(c.schedule)},
              {"train", to_json(c.train)},
              {"regimes", regimes},
              {"lexicon_keep", c.lexicon_keep}};
}

AblationConfig ablation_config_from_json(const Json& j, AblationConfig c) {
  c.n_dialogs = j.value("n_dialogs", c.n_dialogs);
  c.n_eval = j.value("n_eval", c.n_eval);
  c.n_labeled = j.value("n_labeled", c.n_labeled);
  c.min_freq = j.value("min_freq", c.min_freq);
  if (j.contains("model")) c.model = nn::transformer_config_from_json(j.at("model"), c.model);
  if (j.contains("generation")) c.generation = generation_options_from_json(j.at("generation"), c.generation);
  if (j.contains("decode")) c.decode = decode_config_from_json(j.at("decode"), c.decode);
  if (j.contains("schedule")) c.schedule = regime_schedule_from_json(j.at("schedule"), c.schedule);
  if (j.contains("train")) c.train = gen_train_config_from_json(j.at("train"), c.train);
  if (j.contains("regimes")) {
    c.regimes.clear();
    for (const auto& r : j.at("regimes")) c.regimes.push_back(parse_regime(r.get<std::string>()));
  }
  c.lexicon_keep = j.value("lexicon_keep", c.lexicon_keep);
  return c;
}

const RegimeOutcome& AblationResult::at(Regime r) const {
  for (const auto& o : outcomes) {
    if (o.regime == r) return o;
  }
  throw NotFoundError("ablation has no " + std::string(to_string(r)) + " run");
}

AblationResult run_ablation(const AblationConfig& config, const SlotLexicon& lexicon, std::uint64_t seed,
                            const SynthConfig& synth) {
  SynthConfig sc = synth;
  sc.n_dialogs = config.n_dialogs;
  sc.seed = seed;
  const Corpus corpus = synthesize_corpus(sc);
  const auto split = split_synthetic(corpus, config.n_eval, config.n_labeled);
  const SlotLexicon lex = config.lexicon_keep == 0 ? lexicon : subset_lexicon(lexicon, config.lexicon_keep);
  const auto pseudo = extract_pseudo_kbs(split.unlabeled, lex);

  AblationResult result;
  result.seed = seed;
  result.extraction = score_extraction(split.unlabeled_gold, pseudo);
  spdlog::info("ablation seed {}: extraction recall {:.3f} precision {:.3f}", seed, result.extraction.recall(),
               result.extraction.precision());

  Corpus vocab_source = split.labeled;
  vocab_source.dialogs.insert(vocab_source.dialogs.end(), split.unlabeled.dialogs.begin(),
                              split.unlabeled.dialogs.end());
  const auto vocab = nn::build_vocab(vocab_source, config.min_freq);

  const RegimeCorpora corpora{&split.labeled, &split.unlabeled, &pseudo};
  const auto success_cfg = default_success_config();
  for (const Regime r : config.regimes) {
    const auto t0 = std::chrono::steady_clock::now();
    auto gen = KnowledgeGroundedGenerator::create(vocab, config.model, config.generation, config.decode,
                                                  seed * 1000003ULL + 17);
    GenTrainConfig train = config.train;
    train.seed = config.train.seed + seed;
    const auto traces = run_regime(gen, standard_regime(r, config.schedule), corpora, train);
    const auto responses = generate_responses(gen, split.eval);
    const auto score = score_generation(split.eval, responses, success_cfg);
    RegimeOutcome o;
    o.regime = r;
    o.bleu = score.bleu;
    o.success = score.success.rate;
    o.successes = score.success.successes;
    o.evaluated = score.success.evaluated;
    for (const auto& t : traces) o.final_losses.push_back(t.epoch_loss.empty() ? 0.0 : t.epoch_loss.back());
    o.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    spdlog::info("ablation seed {} {}: BLEU {:.2f} success {:.3f} ({}/{}) in {:.1f}s", seed, to_string(r), o.bleu,
                 o.success, o.successes, o.evaluated, o.seconds);
    result.outcomes.push_back(o);
  }
  return result;
}

Json to_json(const AblationResult& r) {
  Json rows = Json::array();
  for (const auto& o : r.outcomes) {
    rows.push_back(Json{{"regime", to_string(o.regime)},
                        {"bleu", o.bleu},
                        {"success", o.success},
                        {"successes", o.successes},
                        {"evaluated", o.evaluated},
                        {"final_losses", o.final_losses}});
  }
  return Json{{"seed", r.seed},
              {"extraction", Json{{"recall", r.extraction.recall()}, {"precision", r.extraction.precision()}}},
              {"regimes", rows}};
}

std::string format_ablation_table(const std::vector<AblationResult>& results) {
  std::string out = fmt::format("{:<12}", "regime");
  for (const auto& r : results) out += fmt::format("  {:>8}  {:>8}", fmt::format("BLEU/{}", r.seed), fmt::format("Succ/{}", r.seed));
  out += "\n";
  if (results.empty()) return out;
  for (const auto& o : results.front().outcomes) {
    out += fmt::format("{:<12}", to_string(o.regime));
    for (const auto& r : results) {
      const auto& x = r.at(o.regime);
      out += fmt::format("  {:>8.2f}  {:>8.3f}", x.bleu, x.success);
    }
    out += "\n";
  }
  return out;
}

RobustnessProbe run_robustness_probe(AblationConfig config, const SlotLexicon& lexicon,
                                     const std::vector<std::uint64_t>& seeds, std::size_t keep,
                                     const SynthConfig& synth) {
  if (seeds.empty()) throw ValidationError("seeds", "probe needs at least one seed");
  if (keep == 0) throw ValidationError("keep", "must be positive");
  RobustnessProbe p;
  p.keep = keep;
  config.regimes = {Regime::SEMI};
  for (const auto seed : seeds) {
    config.lexicon_keep = 0;
    p.full.push_back(run_ablation(config, lexicon, seed, synth));
    config.lexicon_keep = keep;
    p.degraded.push_back(run_ablation(config, lexicon, seed, synth));
  }
  const double n = static_cast<double>(seeds.size());
  for (std::size_t i = 0; i < seeds.size(); ++i) {
    p.full_recall += p.full[i].extraction.recall() / n;
    p.degraded_recall += p.degraded[i].extraction.recall() / n;
    p.full_success += p.full[i].at(Regime::SEMI).success / n;
    p.degraded_success += p.degraded[i].at(Regime::SEMI).success / n;
  }
  return p;
}

Json to_json(const RobustnessProbe& p) {
  Json full = Json::array(), degraded = Json::array();
  for (const auto& r : p.full) full.push_back(to_json(r));
  for (const auto& r : p.degraded) degraded.push_back(to_json(r));
  return Json{{"keep", p.keep},
              {"full_recall", p.full_recall},
              {"degraded_recall", p.degraded_recall},
              {"full_success", p.full_success},
              {"degraded_success", p.degraded_success},
              {"success_change", p.success_change()},
              {"full", full},
              {"degraded", degraded}};
}

}  // namespace s2kg
