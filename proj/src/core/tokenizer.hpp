#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "core/model.hpp"
#include "core/obfuscate.hpp"

namespace covobf {

// Whitespace word tokenizer. No merges, so detokenize followed by
// re-tokenization is lossless for in-vocab text.
class Tokenizer {
 public:
  static constexpr int32_t kUnk = 0;
  static constexpr int32_t kBos = 1;
  static constexpr int32_t kEos = 2;

  explicit Tokenizer(std::vector<std::string> vocab);

  TokenSequence tokenize(const std::string& text) const;
  std::string detokenize(const TokenSequence& ids) const;

  const std::vector<std::string>& vocab() const { return vocab_; }
  int size() const { return static_cast<int>(vocab_.size()); }

 private:
  std::vector<std::string> vocab_;
  std::unordered_map<std::string, int32_t> index_;
};

// "<unk>", "<bos>", "<eos>" then fixed-width word tokens, so no token is a
// substring of another.
std::vector<std::string> make_default_vocab(int n);

// Bijective token-string map induced by the secret permutation.
// forward(V[i]) = V[tau^-1(i)] encodes client tokens; inverse decodes.
struct TokenMap {
  std::unordered_map<std::string, std::string> forward;
  std::unordered_map<std::string, std::string> inverse;
};

TokenMap token_map_from_secret(const ClientSecret& secret,
                               const std::vector<std::string>& vocab);

std::string client_obfuscate_prompt(const std::string& text, const Tokenizer& tok,
                                    const TokenMap& map);

// Inverse mapping; output truncated at the first decoded eos token.
std::string client_deobfuscate_response(const std::string& text, const Tokenizer& tok,
                                        const TokenMap& map);

}  // namespace covobf
