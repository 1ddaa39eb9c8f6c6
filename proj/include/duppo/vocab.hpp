#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace duppo {

using TokenId = std::uint32_t;

/// Ordered list of token ids. Validity is relative to a Vocabulary.
using TokenSequence = std::vector<TokenId>;

/**
 * Immutable token universe. Ids are dense and assigned by list position.
 *
 * The default vocabulary (see build_default_vocabulary) is laid out as
 *
 *   id  0..9   digits "0".."9"
 *   id 10      "+"
 *   id 11      "="      query terminator
 *   id 12      "<a>"    answer-open
 *   id 13      "</a>"   answer-close
 *   id 14      "<eos>"
 *   id 15..17  "W" "H" "B"  thinking tokens (wait / however / but)
 *   id 18      "<pad>"  left padding for short contexts
 */
class Vocabulary {
 public:
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::string& token(TokenId id) const;
  TokenId id(std::string_view token) const;
  bool contains(std::string_view token) const;
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, TokenId> index_;
};

/// Ids of the structural tokens in the default vocabulary.
namespace tok {
inline constexpr TokenId kDigit0 = 0;
inline constexpr TokenId kPlus = 10;
inline constexpr TokenId kEquals = 11;
inline constexpr TokenId kAnswerOpen = 12;
inline constexpr TokenId kAnswerClose = 13;
inline constexpr TokenId kEos = 14;
inline constexpr TokenId kWait = 15;
inline constexpr TokenId kHowever = 16;
inline constexpr TokenId kBut = 17;
inline constexpr TokenId kPad = 18;
inline constexpr std::size_t kDefaultVocabSize = 19;

constexpr bool is_digit(TokenId id) noexcept { return id <= 9; }
}  // namespace tok

/// Set of thinking-token ids with O(1) membership.
class ThinkingTokenSet {
 public:
  ThinkingTokenSet(const Vocabulary& vocab, const std::vector<TokenId>& ids);

  bool contains(TokenId id) const noexcept {
    return id < mask_.size() && mask_[id] != 0;
  }
  const std::vector<TokenId>& ids() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t vocab_size() const noexcept { return mask_.size(); }

 private:
  std::vector<TokenId> ids_;
  std::vector<char> mask_;
};

Vocabulary build_default_vocabulary();
ThinkingTokenSet default_thinking_set(const Vocabulary& vocab);

/// Splits on whitespace and maps each token string to its id.
/// Throws UnknownTokenError naming the first offending string.
TokenSequence encode(std::string_view text, const Vocabulary& vocab);

/// Joins token strings with single spaces.
std::string decode(const TokenSequence& ids, const Vocabulary& vocab);

/// One token per line; line number (from 0) is the id.
void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path);
Vocabulary load_vocabulary(const std::filesystem::path& path);

/// One token string per line.
void save_thinking_set(const ThinkingTokenSet& set, const Vocabulary& vocab,
                       const std::filesystem::path& path);
ThinkingTokenSet load_thinking_set(const Vocabulary& vocab,
                                   const std::filesystem::path& path);

}  // namespace duppo
