// SPDX-License-Identifier: Apache-2.0
#include "s2kg/nn/vocab.hpp"

#include <algorithm>
#include <map>

#include "s2kg/corpus.hpp"
#include "s2kg/error.hpp"
#include "s2kg/local_kb.hpp"
#include "s2kg/text.hpp"

namespace s2kg::nn {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> kSpecials = {kPadToken, kUnkToken, kClsToken, kSepToken,
                                                     kMaskToken, kBosToken, kEosToken, kKbToken};
  return kSpecials;
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  for (std::size_t i = 0; i < v.tokens_.size(); ++i) {
    if (v.tokens_[i].empty()) throw ValidationError("vocabulary", "empty token at id " + std::to_string(i));
    if (!v.index_.emplace(v.tokens_[i], static_cast<int>(i)).second) {
      throw ValidationError("vocabulary", "duplicate token '" + v.tokens_[i] + "'");
    }
  }
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw Error("token id " + std::to_string(id) + " outside vocabulary of " + std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const {
  const auto id = find(token);
  return id ? *id : unk_id();
}

int Vocabulary::special(std::string_view token) const {
  const auto id = find(token);
  if (!id) throw ValidationError("vocabulary", "lacks special token " + std::string(token));
  return *id;
}

bool Vocabulary::is_special(int id) const {
  const auto& specials = special_tokens();
  return std::find(specials.begin(), specials.end(), token(id)) != specials.end();
}

std::vector<int> Vocabulary::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& t : text::segment(text)) ids.push_back(id(t));
  return ids;
}

std::string Vocabulary::decode(std::span<const int> ids, bool skip_special) const {
  std::vector<std::string> parts;
  parts.reserve(ids.size());
  for (const int id : ids) {
    if (skip_special && is_special(id)) continue;
    parts.push_back(token(id));
  }
  return text::join_tokens(parts);
}

Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t min_freq) {
  std::map<std::string, std::size_t> counts;
  for (const auto& t : texts) {
    for (auto& tok : text::segment(t)) ++counts[tok];
  }
  const auto& specials = special_tokens();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n >= std::max<std::size_t>(min_freq, 1) && std::find(specials.begin(), specials.end(), tok) == specials.end()) {
      ranked.emplace_back(tok, n);
    }
  }
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens = specials;
  for (auto& [tok, n] : ranked) tokens.push_back(tok);
  return Vocabulary::from_tokens(std::move(tokens));
}

Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq) {
  std::vector<std::string> texts;
  for (const auto& d : corpus.dialogs) {
    for (const auto& t : d.turns) {
      texts.push_back(t.user_utterance);
      texts.push_back(t.system_response);
    }
    if (d.local_kb) texts.push_back(serialize_kb(*d.local_kb));
  }
  std::string fixed = std::string(kUserSpeaker) + ": " + kSystemSpeaker + ": " + kNameKey + ": " + kPairSeparator +
                      kEntitySeparator;
  // rendering strings always survive min_freq
  for (std::size_t i = 0; i < std::max<std::size_t>(min_freq, 1); ++i) texts.push_back(fixed);
  return build_vocab(texts, min_freq);
}

}  // namespace s2kg::nn
