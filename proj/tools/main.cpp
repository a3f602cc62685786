// SPDX-License-Identifier: Apache-2.0
#include <CLI11.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>

#include "s2kg/ablation.hpp"
#include "s2kg/corpus.hpp"
#include "s2kg/error.hpp"
#include "s2kg/eval.hpp"
#include "s2kg/gen_model.hpp"
#include "s2kg/intent_model.hpp"
#include "s2kg/json.hpp"
#include "s2kg/kb.hpp"
#include "s2kg/pipeline.hpp"
#include "s2kg/semisup.hpp"
#include "s2kg/service.hpp"

namespace fs = std::filesystem;
using namespace s2kg;

namespace {

class ConfigError : public Error {
 public:
  using Error::Error;
};

// One command's settings: its section of the config file with flag
// overrides on top.
class Settings {
 public:
  Settings(std::string command, const Json& file) : command_(std::move(command)) {
    if (file.contains(command_)) {
      if (!file.at(command_).is_object()) throw ConfigError("config section '" + command_ + "' must be an object");
      values_ = file.at(command_);
    }
  }

  void set(const std::string& key, Json value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.contains(key) && !values_.at(key).is_null(); }

  template <class T>
  T get(const std::string& key) const {
    if (!has(key)) throw ConfigError("missing config key '" + command_ + "." + key + "'");
    return convert<T>(key);
  }

  template <class T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) {
      values_[key] = fallback;
      return fallback;
    }
    return convert<T>(key);
  }

  std::optional<std::string> path(const std::string& key) const {
    if (!has(key)) return std::nullopt;
    return convert<std::string>(key);
  }

  // Nested object (model, generation, ...); empty when absent.
  Json object(const std::string& key) const {
    if (!has(key)) return Json::object();
    if (!values_.at(key).is_object()) throw ConfigError("config key '" + command_ + "." + key + "' must be an object");
    return values_.at(key);
  }

  void record(const std::string& key, Json value) { values_[key] = std::move(value); }

  const std::string& command() const { return command_; }
  const Json& values() const { return values_; }
  std::string hash() const { return config_hash(Json{{command_, values_}}); }

  Json provenance(std::uint64_t seed) const {
    return Json{{"command", command_}, {"config_hash", hash()}, {"seed", seed}};
  }

 private:
  template <class T>
  T convert(const std::string& key) const {
    try {
      return values_.at(key).get<T>();
    } catch (const Json::exception&) {
      throw ConfigError("config key '" + command_ + "." + key + "' has the wrong type");
    }
  }

  std::string command_;
  Json values_ = Json::object();
};

struct Outcome {
  std::string line;
  Json summary;
};

using Sink = std::function<void(Settings&)>;

struct Command {
  CLI::App* app = nullptr;
  std::vector<Sink> sinks;
  std::function<Outcome(Settings&)> run;
};

template <class T>
void option(Command& cmd, const std::string& name, const std::string& key, const std::string& help) {
  auto value = std::make_shared<T>();
  CLI::Option* opt = cmd.app->add_option(name, *value, help);
  cmd.sinks.push_back([opt, value, key](Settings& s) {
    if (opt->count() > 0) s.set(key, Json(*value));
  });
}

void flag(Command& cmd, const std::string& name, const std::string& key, const std::string& help) {
  auto value = std::make_shared<bool>(false);
  CLI::Option* opt = cmd.app->add_flag(name, *value, help);
  cmd.sinks.push_back([opt, value, key](Settings& s) {
    if (opt->count() > 0) s.set(key, *value);
  });
}

void model_flags(Command& cmd) {
  option<std::size_t>(cmd, "--d-model", "d_model", "Model width");
  option<std::size_t>(cmd, "--heads", "heads", "Attention heads");
  option<std::size_t>(cmd, "--layers", "layers", "Layers per stack");
  option<std::size_t>(cmd, "--d-ff", "d_ff", "Feed-forward width");
}

nn::TransformerConfig model_config(Settings& s, nn::TransformerConfig base) {
  base = nn::transformer_config_from_json(s.object("model"), base);
  if (s.has("d_model")) base.d_model = s.get<std::size_t>("d_model");
  if (s.has("heads")) base.n_heads = s.get<std::size_t>("heads");
  if (s.has("d_ff")) base.d_ff = s.get<std::size_t>("d_ff");
  if (s.has("layers")) base.encoder_layers = base.decoder_layers = s.get<std::size_t>("layers");
  return base;
}

nn::TransformerConfig classifier_defaults() {
  nn::TransformerConfig c;
  c.d_model = 64;
  c.n_heads = 4;
  c.d_ff = 128;
  c.encoder_layers = 2;
  c.decoder_layers = 0;
  c.max_len = 128;
  return c;
}

SlotLexicon lexicon_of(Settings& s) {
  SlotLexicon lex = s.has("lexicon") ? load_slot_lexicon(s.get<std::string>("lexicon")) : default_slot_lexicon();
  const auto keep = s.get<std::size_t>("lexicon_keep", 0);
  return keep == 0 ? lex : subset_lexicon(lex, keep);
}

Corpus merged(const Corpus& a, const Corpus* b) {
  Corpus out = a;
  if (b) out.dialogs.insert(out.dialogs.end(), b->dialogs.begin(), b->dialogs.end());
  return out;
}

void with_provenance(std::vector<Json>& records, const Json& provenance) {
  records.insert(records.begin(), Json{{"provenance", provenance}});
}

std::vector<std::uint64_t> parse_seeds(const Json& j) {
  std::vector<std::uint64_t> seeds;
  if (j.is_array()) {
    for (const auto& v : j) seeds.push_back(v.get<std::uint64_t>());
  } else if (j.is_number_unsigned()) {
    seeds.push_back(j.get<std::uint64_t>());
  } else if (j.is_string()) {
    std::string s = j.get<std::string>();
    std::size_t pos = 0;
    while (pos <= s.size()) {
      const auto comma = s.find(',', pos);
      const auto part = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
      try {
        std::size_t used = 0;
        seeds.push_back(std::stoull(part, &used));
        if (used != part.size()) throw std::invalid_argument(part);
      } catch (const std::exception&) {
        throw ConfigError("bad seed '" + part + "'");
      }
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  } else {
    throw ConfigError("seeds must be a list, a number or a comma-separated string");
  }
  if (seeds.empty()) throw ConfigError("no seeds given");
  return seeds;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << j.dump(2) << "\n";
  if (!out) throw Error("write failed: " + path.string());
}

Json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw NotFoundError("cannot open " + path.string());
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ParseError(e.what(), 0, path.string());
  }
}

// ---- commands

Outcome cmd_synth_corpus(Settings& s) {
  SynthConfig sc = s.has("synth_config") ? synth_config_from_json(read_json(s.get<std::string>("synth_config")))
                                         : default_synth_config();
  sc.n_dialogs = s.get<std::size_t>("n_dialogs", sc.n_dialogs);
  sc.seed = s.get<std::uint64_t>("seed", sc.seed);
  const auto out = s.get<std::string>("out");
  const auto split_dir = s.path("split_dir");
  const auto goals_out = s.path("goal_pool");
  const auto n_eval = s.get<std::size_t>("n_eval", 100);
  const auto n_labeled = s.get<std::size_t>("n_labeled", 100);
  const Json prov = s.provenance(sc.seed);

  const Corpus corpus = synthesize_corpus(sc);
  save_corpus(corpus, out, prov);
  Json summary{{"dialogs", corpus.dialogs.size()}, {"turns", corpus.turn_count()}, {"out", out}};
  if (split_dir) {
    fs::create_directories(*split_dir);
    const auto split = split_synthetic(corpus, n_eval, n_labeled);
    const fs::path dir = *split_dir;
    save_corpus(split.eval, dir / "eval.json", prov);
    save_corpus(split.labeled, dir / "labeled.json", prov);
    save_corpus(split.unlabeled, dir / "unlabeled.json", prov);
    save_corpus(split.unlabeled_gold, dir / "unlabeled_gold.json", prov);
    summary["split"] = {{"eval", split.eval.dialogs.size()},
                        {"labeled", split.labeled.dialogs.size()},
                        {"unlabeled", split.unlabeled.dialogs.size()}};
    if (goals_out) save_goal_pool(goals_from_corpus(split.eval), *goals_out);
  } else if (goals_out) {
    save_goal_pool(goals_from_corpus(corpus), *goals_out);
  }
  summary["provenance"] = prov;
  return {fmt::format("synth-corpus: {} dialogs, {} turns -> {}", corpus.dialogs.size(), corpus.turn_count(), out),
          summary};
}

Outcome cmd_extract_pseudo_kb(Settings& s) {
  const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::mixed);
  const auto out = s.get<std::string>("out");
  const SlotLexicon lex = lexicon_of(s);
  const auto kbs = extract_pseudo_kbs(corpus, lex);
  const Json prov = s.provenance(0);
  save_pseudo_kbs(kbs, out, prov);
  std::size_t pairs = 0;
  for (const auto& [id, kb] : kbs) {
    for (const auto& e : kb.entities) {
      for (const auto& [slot, values] : e.slots) pairs += values.size();
    }
  }
  Json summary{{"dialogs", kbs.size()}, {"pairs", pairs}, {"out", out}};
  std::string line = fmt::format("extract-pseudo-kb: {} dialogs, {} pairs -> {}", kbs.size(), pairs, out);
  if (const auto gold = s.path("gold")) {
    const auto score = score_extraction(load_corpus(*gold, SchemaMode::labeled), kbs);
    summary["recall"] = score.recall();
    summary["precision"] = score.precision();
    line += fmt::format(" (recall {:.3f}, precision {:.3f})", score.recall(), score.precision());
  }
  summary["provenance"] = prov;
  return {line, summary};
}

Outcome cmd_build_examples(Settings& s) {
  const auto kind = s.get<std::string>("kind");
  const auto out = s.get<std::string>("out");
  const auto seed = s.get<std::uint64_t>("seed", 1);
  std::vector<Json> records;
  if (kind == "user-intent" || kind == "system-intent") {
    const auto task = kind == "user-intent" ? IntentTask::user : IntentTask::system;
    const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::labeled);
    const auto window = s.get<std::size_t>("window", default_intent_window(task));
    records = to_json_records(build_intent_examples(corpus, task, window));
  } else if (kind == "generation") {
    const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::mixed);
    GenerationOptions o = generation_options_from_json(s.object("generation"));
    o.kb_source = parse_kb_source(s.get<std::string>("kb_source", std::string(to_string(o.kb_source))));
    std::map<std::string, LocalKB> pseudo;
    if (o.kb_source == KbSource::pseudo) pseudo = load_pseudo_kbs(s.get<std::string>("pseudo_kbs"));
    records = to_json_records(
        build_generation_examples(corpus, o, o.kb_source == KbSource::pseudo ? &pseudo : nullptr));
  } else if (kind == "mlm") {
    const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::mixed);
    const auto vocab = nn::build_vocab(corpus, s.get<std::size_t>("min_freq", 1));
    records = to_json_records(build_mlm_examples(corpus, s.get<double>("mask_rate", 0.15), vocab, seed));
  } else {
    throw ValidationError("kind", "must be user-intent, system-intent, generation or mlm, got '" + kind + "'");
  }
  const Json prov = s.provenance(seed);
  const std::size_t n = records.size();
  with_provenance(records, prov);
  write_jsonl(out, records);
  return {fmt::format("build-examples: {} {} examples -> {}", n, kind, out),
          Json{{"kind", kind}, {"examples", n}, {"out", out}, {"provenance", prov}}};
}

Outcome cmd_pretrain_mlm(Settings& s) {
  const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::mixed);
  const auto task = parse_intent_task(s.get<std::string>("task", "user"));
  const auto out = s.get<std::string>("out");
  const auto seed = s.get<std::uint64_t>("seed", 1);
  MlmConfig mc = mlm_config_from_json(s.object("train"));
  mc.epochs = s.get<std::size_t>("epochs", mc.epochs);
  mc.lr = s.get<double>("lr", mc.lr);
  mc.mask_rate = s.get<double>("mask_rate", mc.mask_rate);
  mc.seed = seed;
  const auto vocab = nn::build_vocab(corpus, s.get<std::size_t>("min_freq", 1));
  auto labels = task == IntentTask::user ? corpus.user_intent_vocab : corpus.system_intent_vocab;
  auto clf = IntentClassifier::create(vocab, labels, task, model_config(s, classifier_defaults()), seed);
  const auto examples = build_mlm_examples(corpus, mc.mask_rate, clf.vocab(), seed);
  const auto trace = mlm_pretrain(clf, examples, mc);
  const double loss = trace.epoch_loss.empty() ? 0.0 : trace.epoch_loss.back();
  const Json prov = s.provenance(seed);
  clf.save(out, Json{{"provenance", prov}, {"stage", "mlm"}, {"mlm_loss", loss}});
  return {fmt::format("pretrain-mlm: {} examples, {} epochs, loss {:.4f} -> {}", examples.size(), mc.epochs, loss,
                      out),
          Json{{"examples", examples.size()}, {"loss", loss}, {"out", out}, {"provenance", prov}}};
}

Outcome cmd_train_intent(Settings& s) {
  const auto corpus = load_corpus(s.get<std::string>("corpus"), SchemaMode::labeled);
  const auto task = parse_intent_task(s.get<std::string>("task", "user"));
  const auto out = s.get<std::string>("out");
  const auto seed = s.get<std::uint64_t>("seed", 1);
  ClsTrainConfig tc = cls_train_config_from_json(s.object("train"));
  tc.epochs = s.get<std::size_t>("epochs", tc.epochs);
  tc.lr = s.get<double>("lr", tc.lr);
  tc.batch = s.get<std::size_t>("batch", tc.batch);
  tc.fgm.enabled = s.get<bool>("fgm", tc.fgm.enabled);
  tc.fgm.epsilon = s.get<double>("fgm_epsilon", tc.fgm.epsilon);
  tc.seed = seed;
  const auto labels = task == IntentTask::user ? corpus.user_intent_vocab : corpus.system_intent_vocab;

  std::optional<IntentClassifier> clf;
  if (const auto init = s.path("init")) {
    clf = IntentClassifier::load(*init);
    if (clf->task() != task) throw ValidationError("init", "checkpoint task differs from '" + std::string(to_string(task)) + "'");
    if (clf->labels() != labels) throw ValidationError("init", "checkpoint label set differs from the corpus");
  } else {
    clf = IntentClassifier::create(nn::build_vocab(corpus, s.get<std::size_t>("min_freq", 1)), labels, task,
                                   model_config(s, classifier_defaults()), seed);
  }
  const auto examples = build_intent_examples(corpus, task, s.get<std::size_t>("window", default_intent_window(task)));
  const auto trace = train_classifier(*clf, examples, tc);
  const double loss = trace.epoch_loss.empty() ? 0.0 : trace.epoch_loss.back();
  const Json prov = s.provenance(seed);
  clf->save(out, Json{{"provenance", prov}, {"stage", "intent"}, {"loss", loss}});
  return {fmt::format("train-intent: {} {} examples, {} epochs, loss {:.4f} -> {}", examples.size(), to_string(task),
                      tc.epochs, loss, out),
          Json{{"task", to_string(task)}, {"examples", examples.size()}, {"loss", loss}, {"out", out},
               {"provenance", prov}}};
}

double micro_f1_at(const IntentClassifier& clf, const std::vector<std::vector<double>>& scores,
                   const std::vector<ClsExample>& examples) {
  std::vector<std::vector<std::string>> pred, gold;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    pred.push_back(clf.decide(scores[i]));
    std::vector<std::string> g;
    for (std::size_t l = 0; l < clf.labels().size(); ++l) {
      if (examples[i].labels[l]) g.push_back(clf.labels()[l]);
    }
    gold.push_back(std::move(g));
  }
  return intent_prf(pred, gold).f1;
}

Outcome cmd_tune_thresholds(Settings& s) {
  const auto model = s.get<std::string>("model");
  const auto out = s.get<std::string>("out", model);
  auto clf = IntentClassifier::load(model);
  const auto dev = load_corpus(s.get<std::string>("dev"), SchemaMode::labeled);
  const auto examples = build_intent_examples(dev, clf.task());
  const auto scores = clf.scores(examples);
  std::vector<std::vector<int>> gold;
  for (const auto& e : examples) gold.push_back(e.labels);

  std::vector<double> grid = default_threshold_grid();
  if (s.has("grid_step")) {
    const double step = s.get<double>("grid_step");
    if (!(step > 0.0 && step < 1.0)) throw ValidationError("grid_step", "must be in (0, 1)");
    grid.clear();
    for (int k = 1; k * step < 1.0 - 1e-12; ++k) grid.push_back(k * step);
  }
  clf.set_thresholds(std::vector<double>(clf.labels().size(), 0.5));
  const double before = micro_f1_at(clf, scores, examples);
  clf.set_thresholds(search_thresholds(scores, gold, grid));
  const double after = micro_f1_at(clf, scores, examples);
  const Json prov = s.provenance(clf.seed());
  clf.save(out, Json{{"provenance", prov}, {"stage", "thresholds"}, {"dev_micro_f1", after}});
  return {fmt::format("tune-thresholds: dev micro-F1 {:.4f} at 0.5, {:.4f} tuned -> {}", before, after, out),
          Json{{"f1_uniform", before}, {"f1_tuned", after}, {"thresholds", clf.thresholds_json()}, {"out", out},
               {"provenance", prov}}};
}

struct GenSetup {
  GenerationOptions generation;
  DecodeConfig decode;
  GenTrainConfig train;
};

GenSetup gen_setup(Settings& s) {
  const auto defaults = default_ablation_config();
  GenSetup g;
  g.generation = generation_options_from_json(s.object("generation"), defaults.generation);
  g.decode = decode_config_from_json(s.object("decode"), defaults.decode);
  g.train = gen_train_config_from_json(s.object("train"), defaults.train);
  g.train.batch = s.get<std::size_t>("batch", g.train.batch);
  g.train.seed = s.get<std::uint64_t>("seed", g.train.seed);
  return g;
}

KnowledgeGroundedGenerator new_generator(Settings& s, const Corpus& labeled, const Corpus* unlabeled,
                                         const GenSetup& g) {
  const auto vocab = nn::build_vocab(merged(labeled, unlabeled), s.get<std::size_t>("min_freq", 1));
  return KnowledgeGroundedGenerator::create(vocab, model_config(s, default_ablation_config().model), g.generation,
                                            g.decode, g.train.seed);
}

Outcome cmd_pretrain_gen(Settings& s) {
  const auto labeled = load_corpus(s.get<std::string>("labeled"), SchemaMode::labeled);
  std::optional<Corpus> unlabeled;
  if (const auto p = s.path("unlabeled")) unlabeled = load_corpus(*p, SchemaMode::mixed);
  const auto out = s.get<std::string>("out");
  const auto g = gen_setup(s);
  auto gen = new_generator(s, labeled, unlabeled ? &*unlabeled : nullptr, g);

  const auto defaults = default_ablation_config();
  StageSpec stage;
  stage.subset = unlabeled ? StageSubset::all : StageSubset::labeled;
  stage.kb_source = KbSource::none;
  stage.epochs = s.get<std::size_t>("epochs", defaults.schedule.pretrain_epochs);
  stage.lr = s.get<double>("lr", defaults.schedule.lr);
  const RegimeCorpora corpora{&labeled, unlabeled ? &*unlabeled : nullptr, nullptr};
  GenTrainConfig tc = g.train;
  tc.epochs = stage.epochs;
  tc.lr = stage.lr;
  const auto examples = stage_examples(stage, corpora, gen.options(), tc.seed);
  const auto trace = train_stage(gen, examples, tc);
  const double loss = trace.epoch_loss.empty() ? 0.0 : trace.epoch_loss.back();
  gen.set_regime_tag("pretrain");
  const Json prov = s.provenance(tc.seed);
  gen.save(out, Json{{"provenance", prov}, {"stage", "pretrain"}, {"loss", loss}});
  return {fmt::format("pretrain-gen: {} examples, {} epochs, loss {:.4f} -> {}", examples.size(), stage.epochs, loss,
                      out),
          Json{{"examples", examples.size()}, {"loss", loss}, {"out", out}, {"provenance", prov}}};
}

Outcome cmd_train_gen(Settings& s) {
  const auto labeled = load_corpus(s.get<std::string>("labeled"), SchemaMode::labeled);
  std::optional<Corpus> unlabeled;
  if (const auto p = s.path("unlabeled")) unlabeled = load_corpus(*p, SchemaMode::mixed);
  std::optional<std::map<std::string, LocalKB>> pseudo;
  if (const auto p = s.path("pseudo_kbs")) pseudo = load_pseudo_kbs(*p);
  const auto out = s.get<std::string>("out");
  const auto g = gen_setup(s);

  const auto defaults = default_ablation_config();
  RegimeSchedule schedule = regime_schedule_from_json(s.object("schedule"), defaults.schedule);
  schedule.lr = s.get<double>("lr", schedule.lr);
  TrainingRegime regime;
  if (s.has("regime_file")) {
    regime = training_regime_from_json(read_json(s.get<std::string>("regime_file")));
  } else {
    regime = standard_regime(parse_regime(s.get<std::string>("regime", "KGFT")), schedule);
  }

  std::optional<KnowledgeGroundedGenerator> gen;
  if (const auto init = s.path("init")) {
    gen = KnowledgeGroundedGenerator::load(*init);
    GenerationOptions o = g.generation;
    gen->set_options(o);
    gen->set_decode_config(g.decode);
  } else {
    gen = new_generator(s, labeled, unlabeled ? &*unlabeled : nullptr, g);
  }
  const RegimeCorpora corpora{&labeled, unlabeled ? &*unlabeled : nullptr, pseudo ? &*pseudo : nullptr};
  const auto traces = run_regime(*gen, regime, corpora, g.train);
  Json losses = Json::array();
  for (const auto& t : traces) losses.push_back(t.epoch_loss.empty() ? 0.0 : t.epoch_loss.back());
  const Json prov = s.provenance(g.train.seed);
  gen->save(out, Json{{"provenance", prov}, {"stage", "regime"}, {"regime", to_json(regime)}, {"losses", losses}});
  return {fmt::format("train-gen: {} in {} stages, final loss {:.4f} -> {}", to_string(regime.tag), traces.size(),
                      losses.empty() ? 0.0 : losses.back().get<double>(), out),
          Json{{"regime", to_string(regime.tag)}, {"losses", losses}, {"out", out}, {"provenance", prov}}};
}

Outcome cmd_evaluate(Settings& s) {
  const auto gold = load_corpus(s.get<std::string>("corpus"), SchemaMode::labeled);
  Predictions preds;
  std::string source;
  if (s.get<bool>("gold", false)) {
    preds = predictions_from_gold(gold);
    source = "gold";
  } else if (s.has("predictions")) {
    source = s.get<std::string>("predictions");
    preds = load_predictions(source);
  } else if (s.has("user_model") || s.has("system_model") || s.has("gen_model")) {
    const TrainedModels models(IntentClassifier::load(s.get<std::string>("user_model")),
                               IntentClassifier::load(s.get<std::string>("system_model")),
                               KnowledgeGroundedGenerator::load(s.get<std::string>("gen_model")));
    preds = predict_corpus(models, gold);
    source = "models";
  } else {
    throw ConfigError("missing config key '" + s.command() + ".predictions'");
  }
  const SuccessConfig success =
      s.has("success_config") ? success_config_from_json(read_json(s.get<std::string>("success_config")))
                              : default_success_config();
  std::optional<HumanRatingSummary> human;
  if (const auto p = s.path("human")) {
    const Json j = read_json(*p);
    // Either a bare summary or a service export.
    const Json& h = j.contains("summary") ? j.at("summary") : j;
    if (!h.is_null()) human = human_summary_from_json(h);
  }
  const Json prov = s.provenance(0);
  if (const auto p = s.path("write_predictions")) save_predictions(preds, *p, prov);
  const auto report = evaluate_predictions(gold, preds, success, human);
  Json summary = report.to_json();
  summary["source"] = source;
  summary["provenance"] = prov;
  if (const auto p = s.path("out")) write_json(*p, summary);
  return {format_report_table({{s.get<std::string>("name", "system"), report}}), summary};
}

Outcome cmd_ablate(Settings& s) {
  AblationConfig config = ablation_config_from_json(s.object("ablation"));
  if (s.has("regimes")) {
    config.regimes.clear();
    const auto text = s.get<std::string>("regimes");
    std::size_t pos = 0;
    while (pos <= text.size()) {
      const auto comma = text.find(',', pos);
      config.regimes.push_back(parse_regime(text.substr(pos, comma == std::string::npos ? comma : comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
  }
  config.lexicon_keep = s.get<std::size_t>("lexicon_keep", config.lexicon_keep);
  const SlotLexicon lex = s.has("lexicon") ? load_slot_lexicon(s.get<std::string>("lexicon")) : default_slot_lexicon();
  const SynthConfig synth = s.has("synth_config")
                                ? synth_config_from_json(read_json(s.get<std::string>("synth_config")))
                                : default_synth_config();
  const Json seeds_json = s.has("seed") ? s.values().at("seed") : Json("7,13,42");
  const auto seeds = parse_seeds(seeds_json);
  s.record("seed", seeds_json);
  s.record("resolved", to_json(config));

  if (s.has("probe_keep")) {
    const auto probe = run_robustness_probe(config, lex, seeds, s.get<std::size_t>("probe_keep"), synth);
    Json summary = to_json(probe);
    summary["provenance"] = s.provenance(seeds.front());
    summary["provenance"]["seeds"] = seeds;
    if (const auto p = s.path("out")) write_json(*p, summary);
    return {fmt::format("probe: recall {:.3f} -> {:.3f}, SEMI success {:.3f} -> {:.3f} (change {:+.3f})",
                        probe.full_recall, probe.degraded_recall, probe.full_success, probe.degraded_success,
                        probe.success_change()),
            summary};
  }

  std::vector<AblationResult> results;
  Json runs = Json::array();
  for (const auto seed : seeds) {
    results.push_back(run_ablation(config, lex, seed, synth));
    runs.push_back(to_json(results.back()));
  }
  const std::string table = format_ablation_table(results);
  Json summary{{"results", runs}, {"table", table}, {"provenance", s.provenance(seeds.front())}};
  summary["provenance"]["seeds"] = seeds;
  if (const auto p = s.path("out")) write_json(*p, summary);
  return {table, summary};
}

Outcome cmd_serve(Settings& s) {
  auto models = std::make_shared<TrainedModels>(IntentClassifier::load(s.get<std::string>("user_model")),
                                                IntentClassifier::load(s.get<std::string>("system_model")),
                                                KnowledgeGroundedGenerator::load(s.get<std::string>("gen_model")));
  ServiceConfig sc;
  sc.host = s.get<std::string>("host", sc.host);
  sc.port = s.get<int>("port", sc.port);
  sc.session_log = s.get<std::string>("session_log", sc.session_log.string());
  sc.goal_pool_seed = s.get<std::uint64_t>("seed", sc.goal_pool_seed);
  sc.debug = s.get<bool>("debug", sc.debug);
  SessionStore store(models, load_goal_pool(s.get<std::string>("goal_pool")), sc);
  spdlog::info("serving on {}:{} (config {})", sc.host, sc.port, s.hash());
  serve(store);
  return {"serve: stopped", Json{{"stopped", true}}};
}

// ---- error reporting

struct ErrorInfo {
  std::string kind;
  int code;
  std::string field;
};

ErrorInfo classify(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e)) return {"config", 2, ""};
  if (const auto* v = dynamic_cast<const ValidationError*>(&e)) return {"validation", 3, v->subject()};
  if (dynamic_cast<const ParseError*>(&e)) return {"parse", 3, ""};
  if (dynamic_cast<const VersionError*>(&e)) return {"version", 4, ""};
  if (dynamic_cast<const NotFoundError*>(&e)) return {"not_found", 5, ""};
  if (dynamic_cast<const ShapeError*>(&e)) return {"shape", 6, ""};
  if (dynamic_cast<const Error*>(&e)) return {"error", 1, ""};
  return {"internal", 1, ""};
}

int report_error(const std::string& command, const std::exception& e) {
  const auto info = classify(e);
  Json err{{"kind", info.kind}, {"message", e.what()}, {"command", command}};
  if (!info.field.empty()) err["field"] = info.field;
  std::cerr << Json{{"error", err}}.dump() << std::endl;
  return info.code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Knowledge-grounded dialogue pipeline"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  bool json_out = false;
  std::string log_level = "warn";
  app.add_option("-c,--config", config_path, "JSON config file with one section per command");
  app.add_flag("--json", json_out, "Print the summary as JSON");
  app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off");

  std::vector<std::pair<std::string, Command>> commands;
  auto add = [&](const std::string& name, const std::string& help, std::function<Outcome(Settings&)> run) -> Command& {
    commands.emplace_back(name, Command{});
    Command& c = commands.back().second;
    c.app = app.add_subcommand(name, help);
    c.run = std::move(run);
    return c;
  };
  commands.reserve(16);

  {
    auto& c = add("synth-corpus", "Generate the synthetic corpus", cmd_synth_corpus);
    option<std::string>(c, "-o,--out", "out", "Corpus JSON to write");
    option<std::uint64_t>(c, "--seed", "seed", "Generator seed");
    option<std::size_t>(c, "--n-dialogs", "n_dialogs", "Number of dialogs");
    option<std::string>(c, "--synth-config", "synth_config", "Template/slot config JSON");
    option<std::string>(c, "--split-dir", "split_dir", "Also write eval/labeled/unlabeled splits here");
    option<std::size_t>(c, "--n-eval", "n_eval", "Held-out dialogs in the split");
    option<std::size_t>(c, "--n-labeled", "n_labeled", "Labeled training dialogs in the split");
    option<std::string>(c, "--goal-pool", "goal_pool", "Also write a service goal pool");
  }
  {
    auto& c = add("extract-pseudo-kb", "Build pseudo local KBs for a corpus", cmd_extract_pseudo_kb);
    option<std::string>(c, "--corpus", "corpus", "Corpus JSON");
    option<std::string>(c, "-o,--out", "out", "Pseudo-KB JSON to write");
    option<std::string>(c, "--lexicon", "lexicon", "Slot lexicon JSON");
    option<std::size_t>(c, "--lexicon-keep", "lexicon_keep", "Triggers kept per rule (0 = all)");
    option<std::string>(c, "--gold", "gold", "Annotated copy of the corpus, for scoring");
  }
  {
    auto& c = add("build-examples", "Write training examples as JSONL", cmd_build_examples);
    option<std::string>(c, "--corpus", "corpus", "Corpus JSON");
    option<std::string>(c, "--kind", "kind", "user-intent, system-intent, generation or mlm");
    option<std::string>(c, "-o,--out", "out", "JSONL to write");
    option<std::size_t>(c, "--window", "window", "Intent input window");
    option<std::string>(c, "--kb-source", "kb_source", "gold, pseudo or none");
    option<std::string>(c, "--pseudo-kbs", "pseudo_kbs", "Pseudo-KB JSON");
    option<double>(c, "--mask-rate", "mask_rate", "MLM mask rate");
    option<std::uint64_t>(c, "--seed", "seed", "Masking seed");
  }
  {
    auto& c = add("pretrain-mlm", "Masked-LM pre-training of an intent encoder", cmd_pretrain_mlm);
    option<std::string>(c, "--corpus", "corpus", "Corpus JSON (annotations not needed)");
    option<std::string>(c, "--task", "task", "user or system");
    option<std::string>(c, "-o,--out", "out", "Checkpoint to write");
    option<std::uint64_t>(c, "--seed", "seed", "Seed");
    option<std::size_t>(c, "--epochs", "epochs", "Epochs");
    option<double>(c, "--lr", "lr", "Learning rate");
    option<double>(c, "--mask-rate", "mask_rate", "Mask rate");
    model_flags(c);
  }
  {
    auto& c = add("train-intent", "Train a multi-label intent classifier", cmd_train_intent);
    option<std::string>(c, "--corpus", "corpus", "Labeled corpus JSON");
    option<std::string>(c, "--task", "task", "user or system");
    option<std::string>(c, "--init", "init", "Start from this checkpoint (e.g. pretrain-mlm output)");
    option<std::string>(c, "-o,--out", "out", "Checkpoint to write");
    option<std::uint64_t>(c, "--seed", "seed", "Seed");
    option<std::size_t>(c, "--epochs", "epochs", "Epochs");
    option<double>(c, "--lr", "lr", "Learning rate");
    option<std::size_t>(c, "--batch", "batch", "Batch size");
    flag(c, "--fgm", "fgm", "Adversarial training on embeddings");
    option<double>(c, "--fgm-epsilon", "fgm_epsilon", "FGM perturbation norm");
    model_flags(c);
  }
  {
    auto& c = add("tune-thresholds", "Per-label decision thresholds on a dev corpus", cmd_tune_thresholds);
    option<std::string>(c, "--model", "model", "Classifier checkpoint");
    option<std::string>(c, "--dev", "dev", "Labeled dev corpus");
    option<std::string>(c, "-o,--out", "out", "Checkpoint to write (default: overwrite --model)");
    option<double>(c, "--grid-step", "grid_step", "Threshold grid spacing");
  }
  {
    auto& c = add("pretrain-gen", "No-KB pre-training of the generator", cmd_pretrain_gen);
    option<std::string>(c, "--labeled", "labeled", "Labeled corpus JSON");
    option<std::string>(c, "--unlabeled", "unlabeled", "Unlabeled corpus JSON");
    option<std::string>(c, "-o,--out", "out", "Checkpoint to write");
    option<std::uint64_t>(c, "--seed", "seed", "Seed");
    option<std::size_t>(c, "--epochs", "epochs", "Epochs");
    option<double>(c, "--lr", "lr", "Learning rate");
    option<std::size_t>(c, "--batch", "batch", "Batch size");
    model_flags(c);
  }
  {
    auto& c = add("train-gen", "Train the generator under a regime", cmd_train_gen);
    option<std::string>(c, "--labeled", "labeled", "Labeled corpus JSON");
    option<std::string>(c, "--unlabeled", "unlabeled", "Unlabeled corpus JSON");
    option<std::string>(c, "--pseudo-kbs", "pseudo_kbs", "Pseudo-KB JSON");
    option<std::string>(c, "--regime", "regime", "FT, KGFT, UNSUP_KGFT, SEMI or SEMI_KGFT");
    option<std::string>(c, "--regime-file", "regime_file", "Custom stage list JSON");
    option<std::string>(c, "--init", "init", "Start from this checkpoint (e.g. pretrain-gen output)");
    option<std::string>(c, "-o,--out", "out", "Checkpoint to write");
    option<std::uint64_t>(c, "--seed", "seed", "Seed");
    option<double>(c, "--lr", "lr", "Learning rate");
    option<std::size_t>(c, "--batch", "batch", "Batch size");
    model_flags(c);
  }
  {
    auto& c = add("evaluate", "Score predictions against a labeled corpus", cmd_evaluate);
    option<std::string>(c, "--corpus", "corpus", "Gold corpus JSON");
    option<std::string>(c, "--predictions", "predictions", "Predictions JSONL");
    flag(c, "--gold", "gold", "Use the gold annotations as predictions");
    option<std::string>(c, "--user-model", "user_model", "User-intent checkpoint");
    option<std::string>(c, "--system-model", "system_model", "System-intent checkpoint");
    option<std::string>(c, "--gen-model", "gen_model", "Generator checkpoint");
    option<std::string>(c, "--human", "human", "Human rating summary or service export JSON");
    option<std::string>(c, "--write-predictions", "write_predictions", "Save the predictions as JSONL");
    option<std::string>(c, "-o,--out", "out", "Report JSON to write");
    option<std::string>(c, "--name", "name", "Row label in the table");
  }
  {
    auto& c = add("ablate", "Compare generator regimes on synthetic corpora", cmd_ablate);
    option<std::string>(c, "--seed", "seed", "Seed or comma-separated seeds (default 7,13,42)");
    option<std::string>(c, "--regimes", "regimes", "Comma-separated regimes");
    option<std::size_t>(c, "--lexicon-keep", "lexicon_keep", "Triggers kept per rule (0 = all)");
    option<std::string>(c, "--lexicon", "lexicon", "Slot lexicon JSON");
    option<std::size_t>(c, "--probe-keep", "probe_keep", "Run the pseudo-KB robustness probe at this subset size");
    option<std::string>(c, "-o,--out", "out", "Results JSON to write");
  }
  {
    auto& c = add("serve", "Run the human-evaluation HTTP service", cmd_serve);
    option<std::string>(c, "--user-model", "user_model", "User-intent checkpoint");
    option<std::string>(c, "--system-model", "system_model", "System-intent checkpoint");
    option<std::string>(c, "--gen-model", "gen_model", "Generator checkpoint");
    option<std::string>(c, "--goal-pool", "goal_pool", "Goal pool JSON");
    option<std::string>(c, "--host", "host", "Listen address");
    option<int>(c, "--port", "port", "Listen port");
    option<std::string>(c, "--session-log", "session_log", "Append-only session log");
    option<std::uint64_t>(c, "--seed", "seed", "Goal sampling seed");
    flag(c, "--debug", "debug", "Expose KBs to clients");
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    std::cerr << Json{{"error", {{"kind", "usage"}, {"message", e.what()}}}}.dump() << std::endl;
    return 2;
  }

  spdlog::set_default_logger(spdlog::stderr_color_mt("s2kg"));
  spdlog::set_level(spdlog::level::from_str(log_level));

  for (auto& [name, cmd] : commands) {
    if (!cmd.app->parsed()) continue;
    try {
      const Json file = config_path.empty() ? Json::object() : read_json(config_path);
      if (!file.is_object()) throw ConfigError("config file must hold a JSON object");
      Settings settings(name, file);
      for (const auto& sink : cmd.sinks) sink(settings);
      const Outcome outcome = cmd.run(settings);
      if (json_out) {
        std::cout << outcome.summary.dump() << std::endl;
      } else {
        std::cout << outcome.line << std::endl;
      }
      return 0;
    } catch (const std::exception& e) {
      return report_error(name, e);
    }
  }
  return 2;
}
