#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace decoder {

/// Whitespace word-level tokenizer over a closed vocabulary. Six reserved
/// markers occupy ids 0..5: <inst> <resp> <eos> <img> <unk> <pad>.
struct Tokenizer {
  std::vector<std::string> id_to_token;
  std::unordered_map<std::string, int> token_to_id;

  static constexpr int kInst = 0;
  static constexpr int kResp = 1;
  static constexpr int kEos = 2;
  static constexpr int kImg = 3;
  static constexpr int kUnk = 4;
  static constexpr int kPad = 5;

  /// Builds a vocabulary from the given words (markers prepended; duplicates
  /// and marker collisions rejected).
  static Tokenizer from_words(const std::vector<std::string>& words);

  /// JSON object {token: id}; ids must be a permutation of 0..V-1 with the
  /// reserved markers at their fixed slots.
  static Tokenizer load(const std::string& path);
  void save(const std::string& path) const;

  int vocab() const { return static_cast<int>(id_to_token.size()); }

  /// Splits on runs of whitespace; words outside the vocabulary map to <unk>.
  std::vector<int> encode(const std::string& text) const;

  /// Space-joined tokens; out-of-range ids are rejected.
  std::string decode(const std::vector<int>& ids) const;

  int id(const std::string& token) const;  // exact lookup, throws if absent
};

}  // namespace decoder
