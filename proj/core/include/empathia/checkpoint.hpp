#pragma once

// On-disk training state. A checkpoint directory holds:
//
//   params.bin            model parameters (named tensors)
//   optimizer.bin         AdamW moments
//   vocab.txt             generation vocabulary, reserved ids omitted
//   classifier_vocab.txt  word pieces for the emotion encoder
//   labels.txt            32 emotion names, line n = id n
//   config.cfg            TrainConfig as key=value lines
//   metrics.jsonl         one JSON object per finished epoch
//   state.json            {"epoch": n, "optimizer_step": k}

#include "empathia/config.hpp"
#include "empathia/corpus.hpp"
#include "empathia/model.hpp"
#include "empathia/optimizer.hpp"
#include "empathia/text.hpp"

#include <filesystem>
#include <memory>
#include <string>
#include <vector>

namespace empathia {

struct Checkpoint {
  TrainConfig config;
  GenerationVocab vocab;
  WordPieceTokenizer tokenizer;
  EmotionLabels labels;
  std::unique_ptr<JointModel> model;
  AdamW optimizer;
  int epoch = 0;
  std::vector<std::string> history;  // metrics.jsonl lines

  // Writes every file listed above into `dir`, creating it if needed.
  void save(const std::filesystem::path& dir) const;
  // Accepts a checkpoint directory or a training run root, in which case its
  // final/ checkpoint is used.
  static Checkpoint load(const std::filesystem::path& path);
};

std::filesystem::path resolve_checkpoint_dir(const std::filesystem::path& path);

// Builds a freshly initialised model for the vocabularies, seeded from
// config.seed. With a transformer backbone and a pretrained_dir, encoder
// weights are then read from pretrained_dir/encoder.bin.
std::unique_ptr<JointModel> build_model(const TrainConfig& config, const GenerationVocab& vocab,
                                        const WordPieceTokenizer& tokenizer);

// encoder.bin holds tensors named like the encoder parameters with or
// without the "emotion.encoder." prefix. Every encoder parameter must be
// present with a matching shape.
void load_pretrained_encoder(JointModel& model, const std::filesystem::path& pretrained_dir);

AdamW make_optimizer(const TrainConfig& config);

}  // namespace empathia
