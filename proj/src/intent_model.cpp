// SPDX-License-Identifier: Apache-2.0
#include "s2kg/intent_model.hpp"

#include <algorithm>
#include <numeric>

#include <spdlog/spdlog.h>

#include "s2kg/nn/adam.hpp"
#include "s2kg/nn/checkpoint.hpp"
#include "s2kg/random.hpp"

namespace s2kg {

using nn::Binder;
using nn::Graph;
using nn::ParameterSet;
using nn::Tensor;

Json to_json(const FgmConfig& c) { return Json{{"enabled", c.enabled}, {"epsilon", c.epsilon}}; }

Json to_json(const ClsTrainConfig& c) {
  return Json{{"epochs", c.epochs}, {"lr", c.lr},     {"batch", c.batch},
              {"fgm", to_json(c.fgm)}, {"seed", c.seed}, {"clip_norm", c.clip_norm}};
}

Json to_json(const MlmConfig& c) {
  return Json{{"epochs", c.epochs}, {"lr", c.lr}, {"mask_rate", c.mask_rate}, {"batch", c.batch}, {"seed", c.seed}};
}

ClsTrainConfig cls_train_config_from_json(const Json& j, ClsTrainConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  if (j.contains("fgm")) {
    c.fgm.enabled = j["fgm"].value("enabled", c.fgm.enabled);
    c.fgm.epsilon = j["fgm"].value("epsilon", c.fgm.epsilon);
  }
  return c;
}

MlmConfig mlm_config_from_json(const Json& j, MlmConfig c) {
  c.epochs = j.value("epochs", c.epochs);
  c.lr = j.value("lr", c.lr);
  c.mask_rate = j.value("mask_rate", c.mask_rate);
  c.batch = j.value("batch", c.batch);
  c.seed = j.value("seed", c.seed);
  return c;
}

IntentClassifier IntentClassifier::create(nn::Vocabulary vocab, std::vector<std::string> labels, IntentTask task,
                                          nn::TransformerConfig model, std::uint64_t seed) {
  if (labels.empty()) throw ValidationError("labels", "classifier needs at least one label");
  model.vocab_size = vocab.size();
  model.validate();
  IntentClassifier c;
  c.vocab_ = std::move(vocab);
  c.labels_ = std::move(labels);
  c.task_ = task;
  c.model_ = model;
  c.seed_ = seed;
  Rng rng(seed);
  nn::init_encoder(c.params_, model, rng);
  Tensor<float> w(model.d_model, c.labels_.size());
  for (auto& v : w.span()) v = static_cast<float>(rng.normal(0.0, model.init_std));
  c.params_.add("head.w", std::move(w));
  c.params_.add("head.b", Tensor<float>(1, c.labels_.size()));
  c.thresholds_.assign(c.labels_.size(), 0.5);
  return c;
}

void IntentClassifier::set_thresholds(std::vector<double> thresholds) {
  if (thresholds.size() != labels_.size()) {
    throw ValidationError("thresholds", std::to_string(thresholds.size()) + " values for " +
                                            std::to_string(labels_.size()) + " labels");
  }
  for (const double t : thresholds) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("thresholds", "value " + std::to_string(t) + " outside (0,1)");
  }
  thresholds_ = std::move(thresholds);
}

std::vector<int> IntentClassifier::encode_input(std::string_view text) const {
  std::vector<int> ids{vocab_.cls_id()};
  for (const int id : vocab_.encode(text)) {
    if (ids.size() >= model_.max_len) break;
    ids.push_back(id);
  }
  return ids;
}

std::vector<double> IntentClassifier::scores(std::string_view text) const {
  Graph<float> g;
  Binder<float> b(g, params_);
  const auto logits = classifier_logits(b, model_, encode_input(text));
  std::vector<double> out;
  for (const float z : g.values(logits)) out.push_back(nn::sigmoid(static_cast<double>(z)));
  return out;
}

std::vector<std::vector<double>> IntentClassifier::scores(const std::vector<ClsExample>& examples) const {
  std::vector<std::vector<double>> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(scores(e.input_text));
  return out;
}

std::vector<std::string> IntentClassifier::decide(const std::vector<double>& s) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < labels_.size(); ++i) {
    if (s.at(i) >= thresholds_[i]) out.push_back(labels_[i]);
  }
  return out;
}

std::vector<std::string> IntentClassifier::predict(std::string_view text) const { return decide(scores(text)); }

double IntentClassifier::loss(const ClsExample& example) const {
  Graph<float> g;
  Binder<float> b(g, params_);
  const auto logits = classifier_logits(b, model_, encode_input(example.input_text));
  std::vector<float> labels(example.labels.begin(), example.labels.end());
  return g.value(nn::bce_with_logits(g, logits, std::move(labels)))[0];
}

Json IntentClassifier::thresholds_json() const {
  Json j = Json::object();
  for (std::size_t i = 0; i < labels_.size(); ++i) j[labels_[i]] = thresholds_[i];
  return j;
}

Json IntentClassifier::metadata() const {
  return Json{{"kind", "intent_classifier"},
              {"task", to_string(task_)},
              {"labels", labels_},
              {"thresholds", thresholds_json()},
              {"model", nn::to_json(model_)},
              {"vocab", vocab_.tokens()},
              {"seed", seed_}};
}

void IntentClassifier::save(const std::filesystem::path& path, const Json& extra) const {
  Json meta = metadata();
  if (!extra.empty()) meta["extra"] = extra;
  nn::save_checkpoint(path, params_, meta);
}

IntentClassifier IntentClassifier::load(const std::filesystem::path& path) {
  auto ck = nn::load_checkpoint(path);
  const Json& m = ck.metadata;
  if (m.value("kind", "") != "intent_classifier") {
    throw VersionError("checkpoint " + path.string() + " does not hold an intent classifier");
  }
  auto c = create(nn::Vocabulary::from_tokens(m.at("vocab").get<std::vector<std::string>>()),
                  m.at("labels").get<std::vector<std::string>>(), parse_intent_task(m.at("task").get<std::string>()),
                  nn::transformer_config_from_json(m.at("model")), m.value("seed", std::uint64_t{0}));
  if (ck.params.size() != c.params_.size() || c.params_.copy_values_from(ck.params, "") != c.params_.size()) {
    throw VersionError("checkpoint " + path.string() + " parameters do not match its model config");
  }
  std::vector<double> t;
  for (const auto& label : c.labels_) t.push_back(m.at("thresholds").at(label).get<double>());
  c.set_thresholds(std::move(t));
  return c;
}

namespace {

void check_examples(const IntentClassifier& clf, const std::vector<ClsExample>& examples) {
  if (examples.empty()) throw ValidationError("examples", "empty training set");
  for (const auto& e : examples) {
    if (e.labels.size() != clf.labels().size()) {
      throw ValidationError(e.dialog_id, "label vector of " + std::to_string(e.labels.size()) + " for " +
                                             std::to_string(clf.labels().size()) + " labels");
    }
  }
}

}  // namespace

TrainTrace train_classifier(IntentClassifier& clf, const std::vector<ClsExample>& examples,
                            const ClsTrainConfig& config) {
  check_examples(clf, examples);
  if (config.batch == 0) throw ValidationError("batch", "must be positive");
  auto& params = clf.params();
  const auto& model = clf.model_config();
  std::vector<std::vector<int>> inputs;
  std::vector<std::vector<float>> labels;
  for (const auto& e : examples) {
    inputs.push_back(clf.encode_input(e.input_text));
    labels.emplace_back(e.labels.begin(), e.labels.end());
  }
  auto state = nn::make_adam_state(params, nn::AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.clip_norm});
  Rng rng(config.seed);
  Rng drop_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(examples.size());
  std::iota(order.begin(), order.end(), 0);
  TrainTrace trace;

  auto accumulate = [&](std::size_t i, float weight) {
    Graph<float> g;
    Binder<float> b(g, params);
    b.enable_dropout(drop_rng);
    const auto loss = nn::bce_with_logits(g, classifier_logits(b, model, inputs[i]), labels[i]);
    const double value = g.value(loss)[0];
    g.backward(nn::scale(g, loss, weight));
    return value;
  };

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      const float w = 1.0f / static_cast<float>(end - start);
      params.zero_grad();
      for (std::size_t k = start; k < end; ++k) total += accumulate(order[k], w);
      if (config.fgm.enabled) {
        auto& emb = params.at("emb.tok");
        const auto r = fgm_perturb<float>(emb.grad.span(), config.fgm.epsilon);
        const Tensor<float> clean = emb.value;
        for (std::size_t j = 0; j < r.size(); ++j) emb.value[j] += r[j];
        for (std::size_t k = start; k < end; ++k) accumulate(order[k], w);
        emb.value = clean;
      }
      nn::adam_step(params, state);
      ++trace.steps;
    }
    trace.epoch_loss.push_back(total / static_cast<double>(order.size()));
    spdlog::debug("intent[{}] epoch {} loss {:.5f}", to_string(clf.task()), epoch + 1, trace.epoch_loss.back());
  }
  params.zero_grad();
  if (!trace.epoch_loss.empty()) {
    spdlog::info("intent[{}] trained {} epochs, final loss {:.5f}", to_string(clf.task()), config.epochs,
                 trace.epoch_loss.back());
  }
  return trace;
}

namespace {

// Masked-position CE; the bias term is skipped when absent.
template <class P>
typename Graph<float>::Var mlm_graph_loss(Graph<float>& g, Binder<float>& b, P& params,
                                          const nn::TransformerConfig& model, const std::vector<int>& tokens,
                                          const std::vector<int>& reference,
                                          const std::vector<std::size_t>& masked_positions) {
  const auto h = nn::encode(b, model, tokens);
  auto logits = nn::matmul_nt(g, h, b("emb.tok"));
  if (params.contains("mlm.bias")) logits = nn::add_row(g, logits, b("mlm.bias"));
  std::vector<int> targets(tokens.size(), -1);
  for (const std::size_t p : masked_positions) targets.at(p) = reference.at(p);
  return nn::cross_entropy(g, logits, std::move(targets));
}

std::vector<int> reference_of(const MlmExample& e) {
  std::vector<int> ref = e.tokens;
  for (std::size_t k = 0; k < e.masked_positions.size(); ++k) ref[e.masked_positions[k]] = e.original_ids[k];
  return ref;
}

}  // namespace

double mlm_loss(const IntentClassifier& clf, const std::vector<int>& tokens, const std::vector<int>& reference,
                const std::vector<std::size_t>& masked_positions) {
  Graph<float> g;
  Binder<float> b(g, clf.params());
  return g.value(mlm_graph_loss(g, b, clf.params(), clf.model_config(), tokens, reference, masked_positions))[0];
}

double mlm_loss(const IntentClassifier& clf, const MlmExample& example) {
  return mlm_loss(clf, example.tokens, reference_of(example), example.masked_positions);
}

TrainTrace mlm_pretrain(IntentClassifier& clf, const std::vector<MlmExample>& examples, const MlmConfig& config) {
  clf.vocab().mask_id();
  if (config.batch == 0) throw ValidationError("batch", "must be positive");
  const auto& model = clf.model_config();
  ParameterSet<float> work;
  for (const auto& p : clf.params().all()) {
    if (p.name.rfind("emb.", 0) == 0 || p.name.rfind("enc.", 0) == 0) work.add(p.name, p.value);
  }
  work.add("mlm.bias", Tensor<float>(1, model.vocab_size));

  struct Item {
    std::vector<int> tokens, reference;
    std::vector<std::size_t> masked;
  };
  std::vector<Item> items;
  TrainTrace trace;
  for (const auto& e : examples) {
    Item it;
    const auto ref = reference_of(e);
    const std::size_t n = std::min(e.tokens.size(), model.max_len);
    it.tokens.assign(e.tokens.begin(), e.tokens.begin() + static_cast<std::ptrdiff_t>(n));
    it.reference.assign(ref.begin(), ref.begin() + static_cast<std::ptrdiff_t>(n));
    for (const std::size_t p : e.masked_positions) {
      if (p < n) it.masked.push_back(p);
    }
    if (it.masked.empty()) {
      ++trace.skipped;
      continue;
    }
    items.push_back(std::move(it));
  }
  if (trace.skipped > 0) spdlog::info("mlm: skipped {} examples with no masked position", trace.skipped);
  if (items.empty()) throw ValidationError("examples", "no MLM example has a masked position");

  auto state = nn::make_adam_state(work, nn::AdamConfig{config.lr});
  Rng rng(config.seed);
  Rng drop_rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double total = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch) {
      const std::size_t end = std::min(order.size(), start + config.batch);
      work.zero_grad();
      for (std::size_t k = start; k < end; ++k) {
        const auto& it = items[order[k]];
        Graph<float> g;
        Binder<float> b(g, work);
        b.enable_dropout(drop_rng);
        const auto loss = mlm_graph_loss(g, b, work, model, it.tokens, it.reference, it.masked);
        total += g.value(loss)[0];
        g.backward(nn::scale(g, loss, 1.0f / static_cast<float>(end - start)));
      }
      nn::adam_step(work, state);
      ++trace.steps;
    }
    trace.epoch_loss.push_back(total / static_cast<double>(items.size()));
    spdlog::info("mlm epoch {} loss {:.5f}", epoch + 1, trace.epoch_loss.back());
  }
  clf.params().copy_values_from(work, "emb.");
  clf.params().copy_values_from(work, "enc.");
  return trace;
}

std::vector<double> default_threshold_grid() {
  std::vector<double> grid;
  for (int k = 1; k <= 19; ++k) grid.push_back(k / 20.0);
  return grid;
}

double label_f1(const std::vector<std::vector<double>>& scores, const std::vector<std::vector<int>>& gold,
                std::size_t label, double threshold) {
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const bool pred = scores[i][label] >= threshold;
    const bool pos = gold[i][label] != 0;
    tp += pred && pos;
    fp += pred && !pos;
    fn += !pred && pos;
  }
  if (tp + fp + fn == 0) return 1.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

std::vector<double> search_thresholds(const std::vector<std::vector<double>>& scores,
                                      const std::vector<std::vector<int>>& gold, const std::vector<double>& grid) {
  if (grid.empty()) throw ValidationError("grid", "empty threshold grid");
  for (const double t : grid) {
    if (!(t > 0.0 && t < 1.0)) throw ValidationError("grid", "threshold " + std::to_string(t) + " outside (0,1)");
  }
  if (scores.size() != gold.size()) {
    throw ShapeError("search_thresholds: " + std::to_string(scores.size()) + " score rows vs " +
                     std::to_string(gold.size()) + " gold rows");
  }
  const std::size_t n_labels = scores.empty() ? 0 : scores[0].size();
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (scores[i].size() != n_labels || gold[i].size() != n_labels) {
      throw ShapeError("search_thresholds: row " + std::to_string(i) + " width differs from " + std::to_string(n_labels));
    }
  }
  std::vector<double> sorted = grid;
  std::sort(sorted.begin(), sorted.end());
  std::vector<double> out(n_labels);
  for (std::size_t l = 0; l < n_labels; ++l) {
    double best = -1.0;
    for (const double t : sorted) {
      const double f = label_f1(scores, gold, l, t);
      if (f > best) {
        best = f;
        out[l] = t;
      }
    }
  }
  return out;
}

}  // namespace s2kg
