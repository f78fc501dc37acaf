#pragma once

#include "empathia/checkpoint.hpp"
#include "empathia/corpus.hpp"

#include <Eigen/Core>

#include <span>
#include <string>
#include <vector>

namespace empathia {

struct Reply {
  std::vector<std::string> words;
  std::string text;
  int emotion = 0;
  std::string emotion_name;
  double emotion_probability = 0.0;
  Eigen::RowVectorXd distribution;
};

// Builds the context from `history` exactly as training does, predicts the
// emotion and greedily decodes a response of at most max_len - 2 words.
// Read-only over the model; safe to call concurrently.
Reply respond(const JointModel& model, const GenerationVocab& vocab, const WordPieceTokenizer& tokenizer,
              const EmotionLabels& labels, std::span<const Utterance> history, int max_len);
Reply respond(const Checkpoint& checkpoint, std::span<const Utterance> history);

}  // namespace empathia
