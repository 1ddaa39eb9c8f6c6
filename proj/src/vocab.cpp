#include "duppo/vocab.hpp"

#include <fstream>
#include <sstream>

#include "duppo/error.hpp"

namespace duppo {

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 16) {
    throw PreconditionError("vocabulary needs at least 16 tokens, got " +
                            std::to_string(tokens_.size()));
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    const auto& t = tokens_[i];
    if (t.empty()) throw PreconditionError("empty token string at id " + std::to_string(i));
    for (char c : t) {
      if (c == ' ' || c == '\t' || c == '\n' || c == '\r') {
        throw PreconditionError("token at id " + std::to_string(i) + " contains whitespace");
      }
    }
    if (!index_.emplace(t, static_cast<TokenId>(i)).second) {
      throw PreconditionError("duplicate token string \"" + t + "\"");
    }
  }
}

const std::string& Vocabulary::token(TokenId id) const {
  if (id >= tokens_.size()) {
    throw PreconditionError("token id " + std::to_string(id) + " out of range");
  }
  return tokens_[id];
}

TokenId Vocabulary::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) throw UnknownTokenError(std::string(token));
  return it->second;
}

bool Vocabulary::contains(std::string_view token) const {
  return index_.count(std::string(token)) != 0;
}

ThinkingTokenSet::ThinkingTokenSet(const Vocabulary& vocab, const std::vector<TokenId>& ids)
    : mask_(vocab.size(), 0) {
  if (ids.empty()) throw PreconditionError("thinking-token set must be non-empty");
  for (TokenId id : ids) {
    if (id >= vocab.size()) {
      throw PreconditionError("thinking token id " + std::to_string(id) + " out of range");
    }
    const auto& s = vocab.token(id);
    if (s == "<eos>" || s == "<a>" || s == "</a>") {
      throw PreconditionError("structural token \"" + s + "\" cannot be a thinking token");
    }
    if (!mask_[id]) {
      mask_[id] = 1;
      ids_.push_back(id);
    }
  }
}

Vocabulary build_default_vocabulary() {
  std::vector<std::string> tokens;
  for (int d = 0; d <= 9; ++d) tokens.push_back(std::to_string(d));
  for (const char* s : {"+", "=", "<a>", "</a>", "<eos>", "W", "H", "B", "<pad>"}) {
    tokens.emplace_back(s);
  }
  return Vocabulary(std::move(tokens));
}

ThinkingTokenSet default_thinking_set(const Vocabulary& vocab) {
  return ThinkingTokenSet(vocab, {vocab.id("W"), vocab.id("H"), vocab.id("B")});
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab) {
  TokenSequence out;
  std::istringstream in{std::string(text)};
  std::string word;
  while (in >> word) out.push_back(vocab.id(word));
  return out;
}

std::string decode(const TokenSequence& ids, const Vocabulary& vocab) {
  std::string out;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out.push_back(' ');
    out += vocab.token(ids[i]);
  }
  return out;
}

namespace {

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(line);
  }
  return lines;
}

void write_lines(const std::vector<std::string>& lines, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace

void save_vocabulary(const Vocabulary& vocab, const std::filesystem::path& path) {
  write_lines(vocab.tokens(), path);
}

Vocabulary load_vocabulary(const std::filesystem::path& path) {
  return Vocabulary(read_lines(path));
}

void save_thinking_set(const ThinkingTokenSet& set, const Vocabulary& vocab,
                       const std::filesystem::path& path) {
  std::vector<std::string> lines;
  for (TokenId id : set.ids()) lines.push_back(vocab.token(id));
  write_lines(lines, path);
}

ThinkingTokenSet load_thinking_set(const Vocabulary& vocab, const std::filesystem::path& path) {
  std::vector<TokenId> ids;
  for (const auto& l : read_lines(path)) ids.push_back(vocab.id(l));
  return ThinkingTokenSet(vocab, ids);
}

}  // namespace duppo
