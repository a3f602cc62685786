// Training fixtures shared by the unit tests and the acceptance gate.
#pragma once

#include <string>
#include <utility>
#include <vector>

#include "s2kg/gen_model.hpp"
#include "s2kg/text.hpp"

namespace s2kg::fixture {

inline std::vector<GenExample> memorize_set() {
  const std::vector<std::pair<std::string, std::string>> rows = {
      {"查话费", "您的话费余额是50元"},    {"查流量", "您的剩余流量是295M"},   {"套餐多少钱", "套餐费用是58元"},
      {"有效期多久", "有效期是一个月"},    {"还剩多少分钟", "剩余通话100分钟"}, {"你好", "您好请问有什么可以帮您"},
      {"办理夜间包", "已为您办理夜间包"},  {"取消业务", "业务已取消"},         {"谢谢", "不客气"},
      {"再见", "再见祝您生活愉快"},
  };
  std::vector<GenExample> out;
  for (const auto& [in, target] : rows) {
    GenExample e;
    e.input_text = "用户: " + in;
    e.target_text = target;
    out.push_back(e);
  }
  return out;
}

struct MemorizationResult {
  double first_loss = 0.0;
  double last_loss = 0.0;
  double accuracy = 0.0;
  std::size_t reproduced = 0;
};

inline MemorizationResult run_memorization() {
  const auto ex = memorize_set();
  std::vector<std::string> texts;
  for (const auto& e : ex) {
    texts.push_back(e.input_text);
    texts.push_back(e.target_text);
  }
  nn::TransformerConfig m;
  m.d_model = 32;
  m.n_heads = 2;
  m.d_ff = 64;
  m.encoder_layers = 1;
  m.decoder_layers = 1;
  m.max_len = 32;
  GenerationOptions o;
  o.kb_source = KbSource::none;
  DecodeConfig d;
  d.max_len = 24;
  auto gen = KnowledgeGroundedGenerator::create(nn::build_vocab(texts, 1), m, o, d, 5);
  GenTrainConfig cfg;
  cfg.epochs = 120;
  cfg.lr = 3e-3;
  cfg.batch = 2;
  const auto trace = train_stage(gen, ex, cfg);
  MemorizationResult r;
  r.first_loss = trace.epoch_loss.front();
  r.last_loss = trace.epoch_loss.back();
  r.accuracy = gen.teacher_forced_accuracy(ex).value();
  for (const auto& e : ex) r.reproduced += text::normalize_for_match(gen.generate_text(e.input_text)) == e.target_text;
  return r;
}

}  // namespace s2kg::fixture
