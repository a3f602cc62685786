// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>
#include <vector>

#include "s2kg/error.hpp"
#include "s2kg/json.hpp"
#include "s2kg/nn/graph.hpp"
#include "s2kg/nn/ops.hpp"
#include "s2kg/random.hpp"

// Pre-LN transformer encoder/decoder assembled from graph ops. Parameters
// live in a ParameterSet under fixed names:
//   emb.tok            shared token embedding [V, d]
//   enc.pos, dec.pos   learned positions [max_len, d]
//   enc.rel, dec.rel   relative position bias [heads, buckets], optional
//   enc.l<i>.*         encoder layer i (ln1, attn, ln2, ff)
//   dec.l<i>.*         decoder layer i (ln1, self, ln2, cross, ln3, ff)
//   enc.lnf, dec.lnf   final layer norms
//   out.bias (+ out.weight when untied)
//   copy.wq, copy.wk, copy.wg, copy.bg   pointer-generator head, optional
namespace s2kg::nn {

struct TransformerConfig {
  std::size_t vocab_size = 0;
  std::size_t d_model = 128;
  std::size_t n_heads = 4;
  std::size_t d_ff = 256;
  std::size_t encoder_layers = 2;
  std::size_t decoder_layers = 2;
  std::size_t max_len = 512;
  bool tie_output = true;
  double init_std = 0.02;
  // "normal" draws positions like every other weight; "sinusoidal" starts
  // them at sin/cos waves of amplitude position_scale (still trained);
  // "none" drops absolute positions and needs relative_buckets > 0.
  std::string position_init = "normal";
  double position_scale = 1.0;
  // Learned per-head relative position bias on self-attention, shared by
  // all layers of a stack. 0 disables it.
  std::size_t relative_buckets = 0;
  std::size_t relative_max_distance = 128;
  // Applied to embeddings and sublayer outputs while training only.
  double dropout = 0.0;
  // Pointer-generator output mixing the vocabulary softmax with a copy
  // distribution over source tokens.
  bool copy_head = false;

  void validate() const {
    if (position_init != "normal" && position_init != "sinusoidal" && position_init != "none") {
      throw ValidationError("model", "position_init must be normal, sinusoidal or none, got '" + position_init + "'");
    }
    if (position_init == "none" && relative_buckets == 0) {
      throw ValidationError("model", "position_init none needs relative_buckets > 0");
    }
    if (relative_buckets != 0 && (relative_buckets < 4 || relative_max_distance < relative_buckets)) {
      throw ValidationError("model", "relative_buckets must be >= 4 and <= relative_max_distance");
    }
    if (vocab_size == 0) throw ValidationError("model", "vocab_size must be positive");
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
      throw ValidationError("model", "d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                                         std::to_string(n_heads));
    }
    if (dropout < 0.0 || dropout >= 1.0) throw ValidationError("model", "dropout must be in [0, 1)");
    if (d_ff == 0) throw ValidationError("model", "d_ff must be positive");
    if (max_len == 0) throw ValidationError("model", "max_len must be positive");
  }
};

inline Json to_json(const TransformerConfig& c) {
  return Json{{"vocab_size", c.vocab_size}, {"d_model", c.d_model},   {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},             {"encoder_layers", c.encoder_layers},
              {"decoder_layers", c.decoder_layers}, {"max_len", c.max_len}, {"tie_output", c.tie_output},
              {"init_std", c.init_std}, {"position_init", c.position_init},
              {"position_scale", c.position_scale}, {"relative_buckets", c.relative_buckets},
              {"relative_max_distance", c.relative_max_distance}, {"dropout", c.dropout},
              {"copy_head", c.copy_head}};
}

inline TransformerConfig transformer_config_from_json(const Json& j, TransformerConfig base = {}) {
  auto take = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::decay_t<decltype(field)>>();
  };
  for (auto it = j.begin(); it != j.end(); ++it) {
    static const std::vector<std::string> kKeys = {"vocab_size",     "d_model", "n_heads",    "d_ff",    "encoder_layers",
                                                   "decoder_layers", "max_len", "tie_output", "init_std",
                                                   "position_init", "position_scale", "relative_buckets",
                                                   "relative_max_distance", "dropout", "copy_head"};
    if (std::find(kKeys.begin(), kKeys.end(), it.key()) == kKeys.end()) {
      throw ValidationError("model", "unknown key '" + it.key() + "'");
    }
  }
  take("vocab_size", base.vocab_size);
  take("d_model", base.d_model);
  take("n_heads", base.n_heads);
  take("d_ff", base.d_ff);
  take("encoder_layers", base.encoder_layers);
  take("decoder_layers", base.decoder_layers);
  take("max_len", base.max_len);
  take("tie_output", base.tie_output);
  take("init_std", base.init_std);
  take("position_init", base.position_init);
  take("position_scale", base.position_scale);
  take("relative_buckets", base.relative_buckets);
  take("relative_max_distance", base.relative_max_distance);
  take("dropout", base.dropout);
  take("copy_head", base.copy_head);
  return base;
}

namespace detail {

template <class T>
Tensor<T> normal_tensor(std::size_t r, std::size_t c, double sd, Rng& rng) {
  Tensor<T> t(r, c);
  for (auto& v : t.span()) v = static_cast<T>(rng.normal(0.0, sd));
  return t;
}

template <class T>
Tensor<T> position_table(const TransformerConfig& c, Rng& rng) {
  if (c.position_init == "normal") return normal_tensor<T>(c.max_len, c.d_model, c.init_std, rng);
  Tensor<T> t(c.max_len, c.d_model);
  const std::size_t d = c.d_model;
  for (std::size_t p = 0; p < c.max_len; ++p) {
    for (std::size_t i = 0; i < d; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / static_cast<double>(d));
      const double a = static_cast<double>(p) * freq;
      t.span()[p * d + i] = static_cast<T>(c.position_scale * (i % 2 == 0 ? std::sin(a) : std::cos(a)));
    }
  }
  return t;
}

template <class T>
void add_layer_norm(ParameterSet<T>& p, const std::string& name, std::size_t d) {
  p.add(name + ".g", Tensor<T>(1, d, T{1}));
  p.add(name + ".b", Tensor<T>(1, d));
}

template <class T>
void add_attention(ParameterSet<T>& p, const std::string& name, std::size_t d, double sd, Rng& rng) {
  for (const char* m : {"q", "k", "v", "o"}) {
    p.add(name + ".w" + m, normal_tensor<T>(d, d, sd, rng));
    p.add(name + ".b" + m, Tensor<T>(1, d));
  }
}

template <class T>
void add_ffn(ParameterSet<T>& p, const std::string& name, std::size_t d, std::size_t ff, double sd, Rng& rng) {
  p.add(name + ".w1", normal_tensor<T>(d, ff, sd, rng));
  p.add(name + ".b1", Tensor<T>(1, ff));
  p.add(name + ".w2", normal_tensor<T>(ff, d, sd, rng));
  p.add(name + ".b2", Tensor<T>(1, d));
}

}  // namespace detail

// Token embedding, encoder positions and encoder layers.
template <class T>
void init_encoder(ParameterSet<T>& p, const TransformerConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.d_model;
  p.add("emb.tok", detail::normal_tensor<T>(c.vocab_size, d, c.init_std, rng));
  if (c.position_init != "none") p.add("enc.pos", detail::position_table<T>(c, rng));
  if (c.relative_buckets > 0) p.add("enc.rel", Tensor<T>(c.n_heads, c.relative_buckets));
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    detail::add_layer_norm(p, pre + ".ln1", d);
    detail::add_attention(p, pre + ".attn", d, c.init_std, rng);
    detail::add_layer_norm(p, pre + ".ln2", d);
    detail::add_ffn(p, pre + ".ff", d, c.d_ff, c.init_std, rng);
  }
  detail::add_layer_norm(p, "enc.lnf", d);
}

// Decoder positions, layers and the output projection. Expects emb.tok.
template <class T>
void init_decoder(ParameterSet<T>& p, const TransformerConfig& c, Rng& rng) {
  c.validate();
  const std::size_t d = c.d_model;
  if (c.position_init != "none") p.add("dec.pos", detail::position_table<T>(c, rng));
  if (c.relative_buckets > 0) p.add("dec.rel", Tensor<T>(c.n_heads, c.relative_buckets));
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string pre = "dec.l" + std::to_string(l);
    detail::add_layer_norm(p, pre + ".ln1", d);
    detail::add_attention(p, pre + ".self", d, c.init_std, rng);
    detail::add_layer_norm(p, pre + ".ln2", d);
    detail::add_attention(p, pre + ".cross", d, c.init_std, rng);
    detail::add_layer_norm(p, pre + ".ln3", d);
    detail::add_ffn(p, pre + ".ff", d, c.d_ff, c.init_std, rng);
  }
  detail::add_layer_norm(p, "dec.lnf", d);
  if (!c.tie_output) p.add("out.weight", detail::normal_tensor<T>(d, c.vocab_size, c.init_std, rng));
  if (c.copy_head) {
    p.add("copy.wq", detail::normal_tensor<T>(d, d, c.init_std, rng));
    p.add("copy.wk", detail::normal_tensor<T>(d, d, c.init_std, rng));
    p.add("copy.wg", detail::normal_tensor<T>(d, 1, c.init_std, rng));
    p.add("copy.bg", Tensor<T>(1, 1));
  }
  p.add("out.bias", Tensor<T>(1, c.vocab_size));
}

// Binds named parameters into one graph, each at most once. Trainable
// binding routes gradients into the parameter's buffer.
template <class T>
class Binder {
 public:
  using Var = typename Graph<T>::Var;

  Binder(Graph<T>& g, ParameterSet<T>& params) : g_(g), mut_(&params), const_(&params) {}
  Binder(Graph<T>& g, const ParameterSet<T>& params) : g_(g), const_(&params) {}

  Graph<T>& graph() { return g_; }
  bool trainable() const { return mut_ != nullptr; }
  // Dropout is active only once a generator is attached.
  void enable_dropout(Rng& rng) { dropout_rng_ = &rng; }
  Rng* dropout_rng() const { return dropout_rng_; }

  Var operator()(const std::string& name) {
    const auto it = bound_.find(name);
    if (it != bound_.end()) return it->second;
    const Var v = mut_ ? g_.parameter(mut_->at(name)) : g_.parameter(const_->at(name));
    bound_.emplace(name, v);
    return v;
  }

 private:
  Graph<T>& g_;
  ParameterSet<T>* mut_ = nullptr;
  const ParameterSet<T>* const_ = nullptr;
  std::unordered_map<std::string, Var> bound_;
  Rng* dropout_rng_ = nullptr;
};

template <class T>
typename Graph<T>::Var maybe_dropout(Binder<T>& b, const TransformerConfig& c, typename Graph<T>::Var x) {
  if (c.dropout == 0.0 || b.dropout_rng() == nullptr) return x;
  return dropout(b.graph(), x, c.dropout, *b.dropout_rng());
}

// Relative bias for one attention call; empty `bias` name means none.
struct RelativeBias {
  std::string bias;
  std::vector<int> buckets;
};

template <class T>
typename Graph<T>::Var multi_head_attention(Binder<T>& b, const std::string& pre, typename Graph<T>::Var xq,
                                            typename Graph<T>::Var xkv, std::size_t heads, bool causal,
                                            const RelativeBias* rel = nullptr) {
  auto& g = b.graph();
  const auto q = linear(g, xq, b(pre + ".wq"), b(pre + ".bq"));
  const auto k = linear(g, xkv, b(pre + ".wk"), b(pre + ".bk"));
  const auto v = linear(g, xkv, b(pre + ".wv"), b(pre + ".bv"));
  const auto a = rel && !rel->bias.empty() ? attention(g, q, k, v, b(rel->bias), rel->buckets, heads, causal)
                                           : attention(g, q, k, v, heads, causal);
  return linear(g, a, b(pre + ".wo"), b(pre + ".bo"));
}

inline RelativeBias self_relative_bias(const TransformerConfig& c, const std::string& name, std::size_t n,
                                       bool bidirectional) {
  if (c.relative_buckets == 0) return {};
  return {name, relative_buckets(n, n, bidirectional, c.relative_buckets, c.relative_max_distance)};
}

template <class T>
typename Graph<T>::Var feed_forward(Binder<T>& b, const std::string& pre, typename Graph<T>::Var x) {
  auto& g = b.graph();
  const auto h = gelu(g, linear(g, x, b(pre + ".w1"), b(pre + ".b1")));
  return linear(g, h, b(pre + ".w2"), b(pre + ".b2"));
}

template <class T>
typename Graph<T>::Var norm(Binder<T>& b, const std::string& pre, typename Graph<T>::Var x) {
  return layer_norm(b.graph(), x, b(pre + ".g"), b(pre + ".b"));
}

inline std::vector<int> position_ids(std::size_t n, std::size_t max_len) {
  if (n > max_len) {
    throw ShapeError("sequence of " + std::to_string(n) + " tokens exceeds max_len " + std::to_string(max_len));
  }
  std::vector<int> pos(n);
  for (std::size_t i = 0; i < n; ++i) pos[i] = static_cast<int>(i);
  return pos;
}

// Token plus position embedding. Split out so FGM can perturb emb.tok.
template <class T>
typename Graph<T>::Var embed(Binder<T>& b, const std::string& pos_name, const TransformerConfig& c,
                             const std::vector<int>& ids) {
  auto& g = b.graph();
  const auto tok = embedding(g, b("emb.tok"), ids);
  const auto pos_ids = position_ids(ids.size(), c.max_len);
  if (c.position_init == "none") return maybe_dropout(b, c, tok);
  const auto pos = embedding(g, b(pos_name), pos_ids);
  return maybe_dropout(b, c, add(g, tok, pos));
}

// Encoder hidden states [n, d] after the final layer norm.
template <class T>
typename Graph<T>::Var encode(Binder<T>& b, const TransformerConfig& c, const std::vector<int>& ids) {
  if (ids.empty()) throw ShapeError("encode: empty input");
  auto& g = b.graph();
  auto x = embed(b, "enc.pos", c, ids);
  const auto rel = self_relative_bias(c, "enc.rel", ids.size(), true);
  for (std::size_t l = 0; l < c.encoder_layers; ++l) {
    const std::string pre = "enc.l" + std::to_string(l);
    const auto h = norm(b, pre + ".ln1", x);
    x = add(g, x, maybe_dropout(b, c, multi_head_attention(b, pre + ".attn", h, h, c.n_heads, false, &rel)));
    x = add(g, x, maybe_dropout(b, c, feed_forward(b, pre + ".ff", norm(b, pre + ".ln2", x))));
  }
  return norm(b, "enc.lnf", x);
}

// Decoder hidden states [n, d] for inputs `ids` attending to `memory`.
template <class T>
typename Graph<T>::Var decode(Binder<T>& b, const TransformerConfig& c, const std::vector<int>& ids,
                              typename Graph<T>::Var memory) {
  if (ids.empty()) throw ShapeError("decode: empty input");
  auto& g = b.graph();
  auto x = embed(b, "dec.pos", c, ids);
  const auto rel = self_relative_bias(c, "dec.rel", ids.size(), false);
  for (std::size_t l = 0; l < c.decoder_layers; ++l) {
    const std::string pre = "dec.l" + std::to_string(l);
    const auto h = norm(b, pre + ".ln1", x);
    x = add(g, x, maybe_dropout(b, c, multi_head_attention(b, pre + ".self", h, h, c.n_heads, true, &rel)));
    x = add(g, x, maybe_dropout(b, c, multi_head_attention(b, pre + ".cross", norm(b, pre + ".ln2", x), memory,
                                                           c.n_heads, false)));
    x = add(g, x, maybe_dropout(b, c, feed_forward(b, pre + ".ff", norm(b, pre + ".ln3", x))));
  }
  return norm(b, "dec.lnf", x);
}

// Vocabulary logits [n, V].
template <class T>
typename Graph<T>::Var output_logits(Binder<T>& b, const TransformerConfig& c, typename Graph<T>::Var hidden) {
  auto& g = b.graph();
  if (c.tie_output) {
    const auto logits = matmul_nt(g, hidden, b("emb.tok"));
    return add_row(g, logits, b("out.bias"));
  }
  return linear(g, hidden, b("out.weight"), b("out.bias"));
}

// Unnormalized next-token scores [n, V]: logits, or with the copy head the
// mixture's log-probabilities. Either way softmax of a row is the model's
// distribution. `src_ids` are the encoder input ids behind `memory`.
template <class T>
typename Graph<T>::Var output_scores(Binder<T>& b, const TransformerConfig& c, typename Graph<T>::Var hidden,
                                     typename Graph<T>::Var memory, const std::vector<int>& src_ids) {
  const auto logits = output_logits(b, c, hidden);
  if (!c.copy_head) return logits;
  auto& g = b.graph();
  const auto q = matmul(g, hidden, b("copy.wq"));
  const auto k = matmul(g, memory, b("copy.wk"));
  const auto scores = scale(g, matmul_nt(g, q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(c.d_model))));
  const auto gate = add_row(g, matmul(g, hidden, b("copy.wg")), b("copy.bg"));
  return pointer_mixture(g, logits, scores, gate, src_ids);
}

}  // namespace s2kg::nn
