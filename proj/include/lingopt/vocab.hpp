#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lingopt/errors.hpp"

namespace lingopt {

/// Fixed whitespace vocabulary. Tokenization is lowercase + whitespace
/// split; out-of-vocabulary words map to <unk>.
class Vocabulary {
public:
  static constexpr const char* kBos = "<bos>";
  static constexpr const char* kEos = "<eos>";
  static constexpr const char* kUnk = "<unk>";
  static constexpr const char* kImg = "<img>";

  /// Empty placeholder; usable instances come from build()/from_tokens().
  Vocabulary() = default;

  /// Builds a vocabulary from the special tokens plus the given extra
  /// tokens (deduplicated, order preserved).
  static Vocabulary build(const std::vector<std::string>& extra_tokens);

  /// Restores a vocabulary from an explicit ordered token list, as stored
  /// in checkpoints. Validates uniqueness and presence of specials.
  static Vocabulary from_tokens(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;

  int bos_id() const { return bos_; }
  int eos_id() const { return eos_; }
  int unk_id() const { return unk_; }
  int img_id() const { return img_; }

  /// Id lookup for a single (already lowercased) token; OOV yields unk.
  int id_of(const std::string& token) const;

  /// Lowercase + whitespace-split tokenization; OOV words become <unk>.
  std::vector<int> encode(const std::string& text) const;

  /// Splits text into lowercase words without id mapping.
  static std::vector<std::string> split_words(const std::string& text);

  /// Joins token strings for the given ids with single spaces.
  std::string decode(const std::vector<int>& ids) const;

private:
  void index();

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
  int bos_ = -1, eos_ = -1, unk_ = -1, img_ = -1;
};

}  // namespace lingopt
