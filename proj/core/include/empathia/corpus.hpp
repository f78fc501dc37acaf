#pragma once

// Corpus ingestion, example construction, vocabularies and padded batches.

#include "empathia/text.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace empathia {

inline constexpr int kMaxSequenceLength = 80;

enum class Split { kTrain, kValid, kTest };

Split parse_split(std::string_view name);
std::string_view split_name(Split split);

enum class SpeakerRole { kSpeaker, kListener };

struct Utterance {
  SpeakerRole role = SpeakerRole::kSpeaker;
  std::string text;
};

struct Conversation {
  std::string conv_id;
  int emotion = 0;
  std::string prompt;
  std::vector<Utterance> utterances;
};

// Fixed id <-> name map over the 32 emotion classes. Ids are assigned in
// lexicographic name order.
class EmotionLabels {
 public:
  static constexpr int kCount = 32;

  // The EmpatheticDialogues label inventory, sorted.
  static const std::array<std::string_view, kCount>& canonical_names();
  static EmotionLabels canonical();
  // Labels observed in a training split. A subset of the canonical inventory
  // maps onto the canonical ids; any other set must have exactly 32 names.
  static EmotionLabels derive(const std::set<std::string>& observed);
  static EmotionLabels from_names(std::vector<std::string> names);

  static EmotionLabels load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  std::optional<int> find(std::string_view name) const;
  // Throws LabelError naming the value.
  int id(std::string_view name) const;
  const std::string& name(int id) const { return names_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(names_.size()); }
  const std::vector<std::string>& names() const { return names_; }

  bool operator==(const EmotionLabels&) const = default;

 private:
  std::vector<std::string> names_;
};

struct Corpus {
  std::vector<Conversation> conversations;
  EmotionLabels labels;
};

// Reads an EmpatheticDialogues-style CSV (conv_id, utterance_idx, context,
// prompt, utterance; "_comma_" escapes). `path` may be a directory holding
// train.csv / valid.csv / test.csv (a missing file is an empty split), or a
// single file. A single file with a `split` column is filtered on it; without
// one, the whole file belongs to the split named by its stem (train, valid,
// validation, dev, test) or to train for any other name.
// Labels for non-train splits come from `known` or, when absent, from the
// train split of the same source.
Corpus load_corpus(const std::filesystem::path& path, Split split, const EmotionLabels* known = nullptr);

std::string unescape_commas(std::string_view text);

// Text-level training pair: one per listener turn.
struct DialogueExample {
  std::string conv_id;
  std::string context_text;                // every preceding utterance, space-joined
  std::vector<std::string> context_words;  // last max_len words of context_text
  std::vector<std::string> target_words;
  // The turn the target answers; with target_words it counts every
  // utterance of a conversation exactly once for vocabulary statistics.
  std::string previous_turn;
  int emotion = 0;
};

struct ExampleSet {
  std::vector<DialogueExample> examples;
  std::size_t skipped = 0;
  std::vector<std::string> skipped_conversations;
};

struct DialogueContext {
  std::string text;
  std::vector<std::string> words;
};

// Context construction shared by training and serving: all utterances in
// `history` concatenated, word tokens left-truncated to the most recent
// max_len.
DialogueContext build_context(std::span<const Utterance> history, int max_len = kMaxSequenceLength);

ExampleSet build_examples(std::span<const Conversation> conversations, int max_len = kMaxSequenceLength);

class GenerationVocab {
 public:
  static constexpr int kPad = 0;
  static constexpr int kUnk = 1;
  static constexpr int kBos = 2;
  static constexpr int kEos = 3;
  static constexpr int kReserved = 4;

  GenerationVocab();

  // Words with frequency >= min_freq, by descending frequency then
  // lexicographically, after the reserved ids.
  static GenerationVocab build(std::span<const DialogueExample> train_examples, int min_freq);
  // vocab file: one non-reserved token per line, line n (0-based) is id n + kReserved.
  static GenerationVocab load(const std::filesystem::path& file);
  void save(const std::filesystem::path& file) const;

  int id(std::string_view token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  int size() const { return static_cast<int>(tokens_.size()); }

  std::vector<int> encode(std::span<const std::string> words) const;
  // Surface tokens for ids, dropping PAD/BOS/EOS.
  std::vector<std::string> decode(std::span<const int> ids) const;

  bool operator==(const GenerationVocab& o) const { return tokens_ == o.tokens_; }

 private:
  explicit GenerationVocab(std::vector<std::string> corpus_tokens);
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

struct TrainingExample {
  std::vector<int> context_tokens;     // generation vocab
  std::vector<int> classifier_tokens;  // word pieces, [CLS] first
  std::vector<int> target_tokens;      // BOS ... EOS
  int emotion = 0;
};

// [CLS] followed by the most recent max_len - 1 word pieces of the text.
std::vector<int> classifier_input(const WordPieceTokenizer& tokenizer, std::string_view context_text,
                                  int max_len = kMaxSequenceLength);

TrainingExample index_example(const DialogueExample& example, const GenerationVocab& vocab,
                              const WordPieceTokenizer& tokenizer, int max_len = kMaxSequenceLength);
std::vector<TrainingExample> index_examples(std::span<const DialogueExample> examples,
                                            const GenerationVocab& vocab,
                                            const WordPieceTokenizer& tokenizer,
                                            int max_len = kMaxSequenceLength);

// Right-padded integer matrices; one row per example.
struct Batch {
  Eigen::MatrixXi context;
  std::vector<int> context_lengths;
  Eigen::MatrixXi classifier;
  Eigen::MatrixXi classifier_mask;
  Eigen::MatrixXi target;
  std::vector<int> target_lengths;
  std::vector<int> emotions;

  int size() const { return static_cast<int>(emotions.size()); }
  std::vector<int> context_row(int b) const;
  std::vector<int> classifier_row(int b) const;
  std::vector<int> target_row(int b) const;
};

Batch make_batch(std::span<const TrainingExample* const> examples);

// Single-consumer stream of batches over a borrowed example list. With a
// seed the order is a deterministic shuffle; the last batch may be partial.
class BatchStream {
 public:
  BatchStream(std::span<const TrainingExample> examples, int batch_size,
              std::optional<std::uint64_t> shuffle_seed);

  std::optional<Batch> next();
  std::size_t batch_count() const;
  void reset() { cursor_ = 0; }

 private:
  std::span<const TrainingExample> examples_;
  std::vector<std::size_t> order_;
  std::size_t batch_size_;
  std::size_t cursor_ = 0;
};

BatchStream batchify(std::span<const TrainingExample> examples, int batch_size,
                     std::optional<std::uint64_t> shuffle_seed);

}  // namespace empathia
