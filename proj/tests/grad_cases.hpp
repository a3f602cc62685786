// Finite-difference checks for every differentiable block, shared by the
// unit tests and the acceptance gate.
#pragma once

#include <string>
#include <vector>

#include "grad_check.hpp"
#include "s2kg/intent_model.hpp"

namespace s2kg::testing {

struct GradCase {
  std::string name;
  std::function<std::vector<GradReport>()> run;
};

namespace detail {

inline nn::ParameterSet<double> inputs(
    std::initializer_list<std::pair<const char*, std::pair<std::size_t, std::size_t>>> shapes, std::uint64_t seed = 3) {
  Rng rng(seed);
  nn::ParameterSet<double> p;
  for (const auto& [name, s] : shapes) p.add(name, random_tensor(s.first, s.second, rng));
  return p;
}

}  // namespace detail

inline std::vector<GradCase> gradient_cases() {
  using namespace s2kg::nn;
  using detail::inputs;
  std::vector<GradCase> cases;
  cases.push_back({"Matmul", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"a", {3, 4}}, {"b", {4, 5}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), matmul(b.graph(), b("a"), b("b")));
    }));
    return out;
  }});
  cases.push_back({"MatmulNt", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"a", {3, 4}}, {"b", {5, 4}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), matmul_nt(b.graph(), b("a"), b("b")));
    }));
    return out;
  }});
  cases.push_back({"Linear", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {3, 4}}, {"w", {4, 2}}, {"b", {1, 2}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), linear(b.graph(), b("x"), b("w"), b("b")));
    }));
    return out;
  }});
  cases.push_back({"AddAndAddRowAndScale", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {3, 4}}, {"y", {3, 4}}, {"r", {1, 4}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      auto& g = b.graph();
      return probe_loss(g, scale(g, add_row(g, add(g, b("x"), b("y")), b("r")), 0.7));
    }));
    return out;
  }});
  cases.push_back({"Gelu", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {4, 5}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) { return probe_loss(b.graph(), gelu(b.graph(), b("x"))); }));
    return out;
  }});
  cases.push_back({"LayerNorm", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {3, 6}}, {"g", {1, 6}}, {"b", {1, 6}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), layer_norm(b.graph(), b("x"), b("g"), b("b")));
    }));
    return out;
  }});
  cases.push_back({"EmbeddingWithRepeatedIds", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"t", {5, 3}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), embedding(b.graph(), b("t"), {1, 4, 1, 0}));
    }));
    return out;
  }});
  cases.push_back({"SelectRows", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {4, 3}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), select_rows(b.graph(), b("x"), {3, 0, 3}));
    }));
    return out;
  }});
  cases.push_back({"Softmax", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {3, 5}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) { return probe_loss(b.graph(), softmax(b.graph(), b("x"))); }));
    return out;
  }});
  cases.push_back({"Attention", [] {
    std::vector<GradReport> out;
    for (const bool causal : {false, true}) {
      auto p = inputs({{"q", {4, 6}}, {"k", {4, 6}}, {"v", {4, 6}}});
      out.push_back(check_gradients(p, [causal](Binder<double>& b) {
        return probe_loss(b.graph(), attention(b.graph(), b("q"), b("k"), b("v"), 2, causal));
      }));
    }
    return out;
  }});
  cases.push_back({"CrossAttentionShapes", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"q", {2, 4}}, {"k", {5, 4}}, {"v", {5, 4}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), attention(b.graph(), b("q"), b("k"), b("v"), 2, false));
    }));
    return out;
  }});
  cases.push_back({"AttentionWithRelativeBias", [] {
    std::vector<GradReport> out;
    for (const bool causal : {false, true}) {
      auto p = inputs({{"q", {5, 4}}, {"k", {5, 4}}, {"v", {5, 4}}, {"rel", {2, 8}}});
      const auto buckets = relative_buckets(5, 5, !causal, 8, 16);
      out.push_back(check_gradients(p, [&](Binder<double>& b) {
        return probe_loss(b.graph(), attention(b.graph(), b("q"), b("k"), b("v"), b("rel"), buckets, 2, causal));
      }));
    }
    return out;
  }});
  cases.push_back({"CrossEntropy", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"z", {4, 5}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) { return cross_entropy(b.graph(), b("z"), {2, -1, 0, 4}); }));
    return out;
  }});
  cases.push_back({"BceWithLogits", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"z", {2, 3}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return bce_with_logits(b.graph(), b("z"), {1.0, 0.0, 1.0, 0.0, 0.0, 1.0});
    }));
    return out;
  }});
  cases.push_back({"FullEncoderDecoder", [] {
    std::vector<GradReport> out;
    for (const std::size_t rel : {std::size_t{0}, std::size_t{8}}) {
      TransformerConfig c;
      c.vocab_size = 7;
      c.d_model = 4;
      c.n_heads = 2;
      c.d_ff = 6;
      c.encoder_layers = 1;
      c.decoder_layers = 1;
      c.max_len = 8;
      c.init_std = 0.5;
      c.relative_buckets = rel;
      c.relative_max_distance = 16;
      ParameterSet<double> p;
      Rng rng(5);
      init_encoder(p, c, rng);
      init_decoder(p, c, rng);
      // Nonzero biases and norms so every parameter has a generic gradient.
      for (auto& param : p.all()) {
        for (auto& v : param.value.span()) v += 0.3 * (2.0 * rng.uniform() - 1.0);
      }
      out.push_back(check_gradients(p, [&](Binder<double>& b) {
        const auto mem = encode(b, c, {1, 2, 3, 2});
        const auto h = decode(b, c, {0, 4, 5}, mem);
        return cross_entropy(b.graph(), output_logits(b, c, h), {4, 5, 6});
      }));
    }
    return out;
  }});
  cases.push_back({"PointerMixture", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"z", {3, 6}}, {"s", {3, 4}}, {"u", {3, 1}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return probe_loss(b.graph(), pointer_mixture(b.graph(), b("z"), b("s"), b("u"), {2, 5, 2, 0}));
    }));
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      return cross_entropy(b.graph(), pointer_mixture(b.graph(), b("z"), b("s"), b("u"), {2, 5, 2, 0}), {2, 1, -1});
    }));
    return out;
  }});
  cases.push_back({"CopyHeadEncoderDecoder", [] {
    std::vector<GradReport> out;
    TransformerConfig c;
    c.vocab_size = 7;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 6;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.max_len = 8;
    c.init_std = 0.5;
    c.copy_head = true;
    c.relative_buckets = 8;
    c.relative_max_distance = 16;
    ParameterSet<double> p;
    Rng rng(6);
    init_encoder(p, c, rng);
    init_decoder(p, c, rng);
    const std::vector<int> src{1, 2, 3, 2};
    out.push_back(check_gradients(p, [&](Binder<double>& b) {
      const auto mem = encode(b, c, src);
      const auto h = decode(b, c, {0, 4, 2}, mem);
      return cross_entropy(b.graph(), output_scores(b, c, h, mem, src), {4, 2, 6});
    }));
    return out;
  }});
  cases.push_back({"UntiedOutput", [] {
    std::vector<GradReport> out;
    TransformerConfig c;
    c.vocab_size = 5;
    c.d_model = 4;
    c.n_heads = 1;
    c.d_ff = 4;
    c.encoder_layers = 1;
    c.decoder_layers = 1;
    c.max_len = 4;
    c.tie_output = false;
    c.init_std = 0.5;
    ParameterSet<double> p;
    Rng rng(8);
    init_encoder(p, c, rng);
    init_decoder(p, c, rng);
    out.push_back(check_gradients(p, [&](Binder<double>& b) {
      const auto h = decode(b, c, {0, 1}, encode(b, c, {2, 3}));
      return cross_entropy(b.graph(), output_logits(b, c, h), {1, 2});
    }));
    return out;
  }});
  cases.push_back({"DropoutWithFixedMask", [] {
    std::vector<GradReport> out;
    auto p = inputs({{"x", {3, 5}}});
    out.push_back(check_gradients(p, [](Binder<double>& b) {
      Rng rng(4);
      return probe_loss(b.graph(), dropout(b.graph(), b("x"), 0.3, rng));
    }));
    return out;
  }});
  cases.push_back({"ClassifierHead", [] {
    std::vector<GradReport> out;
    TransformerConfig c;
    c.vocab_size = 6;
    c.d_model = 4;
    c.n_heads = 2;
    c.d_ff = 6;
    c.encoder_layers = 1;
    c.max_len = 6;
    c.init_std = 0.5;
    ParameterSet<double> p;
    Rng rng(9);
    init_encoder(p, c, rng);
    p.add("head.w", random_tensor(4, 3, rng));
    p.add("head.b", random_tensor(1, 3, rng));
    out.push_back(check_gradients(p, [&](Binder<double>& b) {
      return bce_with_logits(b.graph(), classifier_logits(b, c, {2, 3, 1, 5}), {1.0, 0.0, 1.0});
    }));
    return out;
  }});
  return cases;
}

}  // namespace s2kg::testing
