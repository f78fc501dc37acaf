#pragma once

#include "empathia/checkpoint.hpp"
#include "empathia/config.hpp"
#include "empathia/corpus.hpp"
#include "empathia/metrics.hpp"
#include "empathia/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace empathia {

struct PreparedData {
  GenerationVocab vocab;
  WordPieceTokenizer tokenizer;
  EmotionLabels labels;
  ExampleSet train_text;
  ExampleSet valid_text;
  std::vector<TrainingExample> train;
  std::vector<TrainingExample> valid;
};

// Builds vocabularies from the train split (the classifier word pieces come
// from pretrained_dir/vocab.txt when set) and indexes both splits.
PreparedData prepare_data(const TrainConfig& config, const Corpus& train, const Corpus* valid);

// Indexes examples against an existing checkpoint's vocabularies.
std::vector<TrainingExample> index_for(const Checkpoint& checkpoint, std::span<const DialogueExample> examples);

// One optimizer update on the joint objective: zero grads, forward and
// backward over the batch, clip, AdamW step. A non-finite loss throws
// NumericError naming the batch index and both losses before any update.
Losses joint_step(JointModel& model, AdamW& optimizer, const Batch& batch, const TrainConfig& config,
                  std::mt19937_64& dropout_rng, std::size_t batch_index);

// Seed for an (epoch, stream) pair; every epoch's data order and dropout
// masks depend only on the run seed, so a resumed run replays the same
// stream as an uninterrupted one.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream);

struct EpochRecord {
  int epoch = 0;
  std::optional<Losses> train;
  std::optional<Losses> valid;
  std::optional<EvalReport> valid_report;
  double selection_loss = 0.0;  // valid total, or train total without a valid split
  bool has_selection_loss = false;
};

struct TrainOptions {
  std::filesystem::path resume_from;  // a checkpoint directory, empty to start fresh
  std::ostream* log = nullptr;
  bool validation_metrics = true;  // greedy-decode the valid split every epoch
};

struct TrainResult {
  Checkpoint final;
  std::filesystem::path final_dir;
  std::filesystem::path best_dir;
  int best_epoch = 0;
  std::vector<EpochRecord> epochs;
  std::vector<Losses> steps;
  std::size_t skipped_conversations = 0;
};

// Writes out_dir/epoch-000 (initialisation) and out_dir/epoch-NNN after each
// epoch, then out_dir/final and out_dir/best (lowest validation loss_total,
// or training loss without a valid split).
TrainResult train(const TrainConfig& config, const Corpus& train_corpus, const Corpus* valid_corpus,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});
// Loads the train and valid splits of `corpus_path`; an absent valid split
// disables validation.
TrainResult train(const TrainConfig& config, const std::filesystem::path& corpus_path,
                  const std::filesystem::path& out_dir, const TrainOptions& options = {});

struct PredictedTurn {
  int emotion = 0;
  std::vector<std::string> words;
};

using Predictor = std::function<PredictedTurn(const DialogueExample&, const TrainingExample&)>;

// Scores `predict` on every example: corpus BLEU of predicted words against
// the gold response words, emotion F1 and accuracy against the gold label.
EvalReport evaluate_with(std::span<const DialogueExample> examples, std::span<const TrainingExample> indexed,
                         const Predictor& predict, const EmotionLabels& labels,
                         F1Average average = F1Average::kMacro);

Predictor model_predictor(const JointModel& model, const GenerationVocab& vocab, int max_len);

// Greedy-decodes every example of the corpus. Throws InputError when the
// corpus yields no examples.
EvalReport evaluate(const Checkpoint& checkpoint, const Corpus& corpus, F1Average average = F1Average::kMacro);
EvalReport evaluate(const Checkpoint& checkpoint, const std::filesystem::path& corpus_path, Split split,
                    F1Average average = F1Average::kMacro);

}  // namespace empathia
