#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace empathia {

// Lowercased word-level tokenisation: whitespace separates words and every
// ASCII punctuation character becomes its own token. Bytes >= 0x80 are kept
// inside words so UTF-8 text passes through untouched.
std::vector<std::string> tokenize_words(std::string_view text);

// Joins tokens with single spaces. tokenize_words(detokenize(t)) == t for any
// token list produced by tokenize_words.
std::string detokenize(std::span<const std::string> tokens);

// Greedy longest-match-first subword tokenizer in the format used by
// BERT-style encoders: one piece per line in vocab.txt, continuation pieces
// prefixed with "##". Ids 0..3 are [PAD], [UNK], [CLS], [SEP] in vocabularies
// built here; loaded vocabularies keep whatever ids their file assigns.
class WordPieceTokenizer {
 public:
  static constexpr std::string_view kPad = "[PAD]";
  static constexpr std::string_view kUnk = "[UNK]";
  static constexpr std::string_view kCls = "[CLS]";
  static constexpr std::string_view kSep = "[SEP]";
  static constexpr std::size_t kMaxCharsPerWord = 100;

  WordPieceTokenizer() = default;
  explicit WordPieceTokenizer(std::vector<std::string> pieces);

  // Builds a small vocabulary for randomly initialised encoders: whole words
  // seen at least min_freq times plus every single character as a leading and
  // a "##" continuation piece, so any word in the training texts is covered.
  static WordPieceTokenizer build(std::span<const std::string> texts, int min_freq);
  static WordPieceTokenizer load(const std::filesystem::path& vocab_file);
  void save(const std::filesystem::path& vocab_file) const;

  std::vector<int> encode(std::string_view text) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  int pad_id() const { return pad_id_; }
  int unk_id() const { return unk_id_; }
  int cls_id() const { return cls_id_; }
  int size() const { return static_cast<int>(pieces_.size()); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> index_;
  int pad_id_ = 0;
  int unk_id_ = 1;
  int cls_id_ = 2;
};

}  // namespace empathia
