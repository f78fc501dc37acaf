#include "empathia/text.hpp"

#include "empathia/error.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <map>
#include <set>

namespace empathia {

namespace {

bool is_ascii_punct(unsigned char c) { return c < 0x80 && std::ispunct(c) != 0; }
bool is_space(unsigned char c) { return c < 0x80 && std::isspace(c) != 0; }

}  // namespace

std::vector<std::string> tokenize_words(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_ascii_punct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return out;
}

std::string detokenize(std::span<const std::string> tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i > 0) out.push_back(' ');
    out += tokens[i];
  }
  return out;
}

WordPieceTokenizer::WordPieceTokenizer(std::vector<std::string> pieces) : pieces_(std::move(pieces)) {
  for (std::size_t i = 0; i < pieces_.size(); ++i) {
    if (!index_.emplace(pieces_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate word piece in vocabulary: " + pieces_[i]);
    }
  }
  auto find = [&](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw FormatError("word piece vocabulary lacks " + std::string(name));
    return it->second;
  };
  pad_id_ = find(kPad);
  unk_id_ = find(kUnk);
  cls_id_ = find(kCls);
}

WordPieceTokenizer WordPieceTokenizer::build(std::span<const std::string> texts, int min_freq) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1");
  std::map<std::string, int> freq;
  std::set<std::string> chars;
  for (const auto& text : texts) {
    for (auto& w : tokenize_words(text)) {
      for (char c : w) chars.insert(std::string(1, c));
      ++freq[w];
    }
  }
  std::vector<std::string> pieces{std::string(kPad), std::string(kUnk), std::string(kCls),
                                  std::string(kSep)};
  std::set<std::string> seen(pieces.begin(), pieces.end());
  auto push = [&](const std::string& p) {
    if (seen.insert(p).second) pieces.push_back(p);
  };
  for (const auto& c : chars) push(c);
  for (const auto& c : chars) push("##" + c);
  for (const auto& [w, n] : freq) {
    if (n >= min_freq) push(w);
  }
  return WordPieceTokenizer(std::move(pieces));
}

WordPieceTokenizer WordPieceTokenizer::load(const std::filesystem::path& vocab_file) {
  std::ifstream in(vocab_file);
  if (!in) throw IoError("cannot open word piece vocabulary " + vocab_file.string());
  std::vector<std::string> pieces;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pieces.push_back(line);
  }
  return WordPieceTokenizer(std::move(pieces));
}

void WordPieceTokenizer::save(const std::filesystem::path& vocab_file) const {
  std::ofstream out(vocab_file);
  if (!out) throw IoError("cannot write " + vocab_file.string());
  for (const auto& p : pieces_) out << p << '\n';
  if (!out) throw IoError("write failed for " + vocab_file.string());
}

std::vector<int> WordPieceTokenizer::encode(std::string_view text) const {
  std::vector<int> ids;
  for (const auto& word : tokenize_words(text)) {
    if (word.size() > kMaxCharsPerWord) {
      ids.push_back(unk_id_);
      continue;
    }
    std::vector<int> word_ids;
    std::size_t start = 0;
    bool bad = false;
    while (start < word.size()) {
      std::size_t end = word.size();
      int found = -1;
      while (start < end) {
        std::string sub = word.substr(start, end - start);
        if (start > 0) sub = "##" + sub;
        auto it = index_.find(sub);
        if (it != index_.end()) {
          found = it->second;
          break;
        }
        --end;
      }
      if (found < 0) {
        bad = true;
        break;
      }
      word_ids.push_back(found);
      start = end;
    }
    if (bad) {
      ids.push_back(unk_id_);
    } else {
      ids.insert(ids.end(), word_ids.begin(), word_ids.end());
    }
  }
  return ids;
}

std::vector<std::string> WordPieceTokenizer::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int id : ids) out.push_back(piece(id));
  return out;
}

}  // namespace empathia
