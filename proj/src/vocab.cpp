#include "lingopt/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <unordered_set>

namespace lingopt {

Vocabulary Vocabulary::build(const std::vector<std::string>& extra_tokens) {
  std::vector<std::string> tokens = {kBos, kEos, kUnk, kImg};
  std::unordered_set<std::string> seen(tokens.begin(), tokens.end());
  for (const auto& t : extra_tokens) {
    if (seen.insert(t).second) {
      tokens.push_back(t);
    }
  }
  return from_tokens(std::move(tokens));
}

Vocabulary Vocabulary::from_tokens(std::vector<std::string> tokens) {
  Vocabulary v;
  v.tokens_ = std::move(tokens);
  std::unordered_set<std::string> seen;
  for (const auto& t : v.tokens_) {
    if (!seen.insert(t).second) {
      throw VocabError("vocabulary: duplicate token '" + t + "'");
    }
  }
  v.index();
  if (v.bos_ < 0 || v.eos_ < 0 || v.unk_ < 0 || v.img_ < 0) {
    throw VocabError("vocabulary: special tokens <bos>/<eos>/<unk>/<img> must be present");
  }
  // The four specials are the hard floor; real corpora carry content tokens
  // on top of them.
  if (v.size() < 4) {
    throw VocabError("vocabulary: too small (" + std::to_string(v.size()) + " tokens)");
  }
  return v;
}

void Vocabulary::index() {
  ids_.clear();
  for (int i = 0; i < size(); ++i) {
    ids_.emplace(tokens_[i], i);
    if (tokens_[i] == kBos) bos_ = i;
    if (tokens_[i] == kEos) eos_ = i;
    if (tokens_[i] == kUnk) unk_ = i;
    if (tokens_[i] == kImg) img_ = i;
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) {
    throw VocabError("vocabulary: token id " + std::to_string(id) + " out of range [0," +
                     std::to_string(size()) + ")");
  }
  return tokens_[id];
}

int Vocabulary::id_of(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? unk_ : it->second;
}

std::vector<std::string> Vocabulary::split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isspace(c)) {
      if (!cur.empty()) {
        words.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  if (!cur.empty()) words.push_back(cur);
  return words;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& w : split_words(text)) {
    ids.push_back(id_of(w));
  }
  return ids;
}

std::string Vocabulary::decode(const std::vector<int>& ids) const {
  std::string out;
  for (size_t i = 0; i < ids.size(); ++i) {
    if (i > 0) out += ' ';
    out += token(ids[i]);
  }
  return out;
}

}  // namespace lingopt
