// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace s2kg {
struct Corpus;
}

namespace s2kg::nn {

inline constexpr const char* kPadToken = "[PAD]";
inline constexpr const char* kUnkToken = "[UNK]";
inline constexpr const char* kClsToken = "[CLS]";
inline constexpr const char* kSepToken = "[SEP]";
inline constexpr const char* kMaskToken = "[MASK]";
inline constexpr const char* kBosToken = "[BOS]";
inline constexpr const char* kEosToken = "[EOS]";
inline constexpr const char* kKbToken = "[KB]";

// Token <-> id bijection with dense ids. build_vocab places the eight
// special tokens first; hand-built vocabularies may lack some of them, in
// which case lookups of the missing special throw.
class Vocabulary {
 public:
  Vocabulary() = default;

  // Tokens must be distinct and non-empty.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(int id) const;

  std::optional<int> find(std::string_view token) const;
  bool contains(std::string_view token) const { return find(token).has_value(); }
  // Unknown tokens map to [UNK]; throws when the vocabulary has none.
  int id(std::string_view token) const;
  // Throws when `token` is absent.
  int special(std::string_view token) const;

  int pad_id() const { return special(kPadToken); }
  int unk_id() const { return special(kUnkToken); }
  int cls_id() const { return special(kClsToken); }
  int sep_id() const { return special(kSepToken); }
  int mask_id() const { return special(kMaskToken); }
  int bos_id() const { return special(kBosToken); }
  int eos_id() const { return special(kEosToken); }
  int kb_id() const { return special(kKbToken); }
  bool is_special(int id) const;

  std::vector<int> encode(std::string_view text) const;
  std::string decode(std::span<const int> ids, bool skip_special = false) const;

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

const std::vector<std::string>& special_tokens();

// Counts segment() tokens in the given texts; tokens with count < min_freq
// are left out (and so map to [UNK]). Order: specials, then by descending
// count, ties by byte order.
Vocabulary build_vocab(const std::vector<std::string>& texts, std::size_t min_freq);

// Utterances, responses, serialized local KBs and the fixed rendering
// strings used for model inputs.
Vocabulary build_vocab(const Corpus& corpus, std::size_t min_freq);

}  // namespace s2kg::nn
