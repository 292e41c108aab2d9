#include "core/tokenizer.hpp"

#include <sstream>

#include "core/errors.hpp"

namespace covobf {

Tokenizer::Tokenizer(std::vector<std::string> vocab) : vocab_(std::move(vocab)) {
  if (vocab_.size() < 3) throw DataError("tokenizer: vocab needs the 3 special tokens");
  for (size_t i = 0; i < vocab_.size(); ++i) {
    const std::string& t = vocab_[i];
    if (t.empty() || t.find_first_of(" \t\r\n") != std::string::npos)
      throw DataError("tokenizer: token contains whitespace or is empty: '" + t + "'");
    if (!index_.emplace(t, static_cast<int32_t>(i)).second)
      throw DataError("tokenizer: duplicate token '" + t + "'");
  }
}

TokenSequence Tokenizer::tokenize(const std::string& text) const {
  TokenSequence ids;
  std::istringstream in(text);
  std::string word;
  while (in >> word) {
    auto it = index_.find(word);
    ids.push_back(it == index_.end() ? kUnk : it->second);
  }
  return ids;
}

std::string Tokenizer::detokenize(const TokenSequence& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= size())
      throw DataError("detokenize: token id out of range");
    if (i) out += ' ';
    out += vocab_[ids[i]];
  }
  return out;
}

std::vector<std::string> make_default_vocab(int n) {
  if (n < 4) throw DataError("make_default_vocab: need at least 4 tokens");
  std::vector<std::string> v;
  v.reserve(n);
  v.push_back("<unk>");
  v.push_back("<bos>");
  v.push_back("<eos>");
  int width = static_cast<int>(std::to_string(n - 1).size());
  for (int i = 3; i < n; ++i) {
    std::string num = std::to_string(i);
    v.push_back("w" + std::string(width - num.size(), '0') + num);
  }
  return v;
}

TokenMap token_map_from_secret(const ClientSecret& secret,
                               const std::vector<std::string>& vocab) {
  if (secret.tau.size() != vocab.size())
    throw DataError("token map: tau size does not match vocab");
  TokenMap map;
  // tau[r] = i means obfuscated id r embeds plaintext token i, so the client
  // sends V[r] in place of V[i].
  for (size_t r = 0; r < secret.tau.size(); ++r) {
    int32_t i = secret.tau[r];
    map.forward[vocab[i]] = vocab[r];
    map.inverse[vocab[r]] = vocab[i];
  }
  return map;
}

namespace {

std::string map_words(const std::string& text, const Tokenizer& tok,
                      const std::unordered_map<std::string, std::string>& map,
                      bool stop_at_eos) {
  TokenSequence ids = tok.tokenize(text);
  std::string out;
  bool first = true;
  for (int32_t id : ids) {
    auto it = map.find(tok.vocab()[id]);
    if (it == map.end()) throw DataError("token map: token not covered");
    if (stop_at_eos && it->second == tok.vocab()[Tokenizer::kEos]) break;
    if (!first) out += ' ';
    out += it->second;
    first = false;
  }
  return out;
}

}  // namespace

std::string client_obfuscate_prompt(const std::string& text, const Tokenizer& tok,
                                    const TokenMap& map) {
  return map_words(text, tok, map.forward, false);
}

std::string client_deobfuscate_response(const std::string& text, const Tokenizer& tok,
                                        const TokenMap& map) {
  return map_words(text, tok, map.inverse, true);
}

}  // namespace covobf
