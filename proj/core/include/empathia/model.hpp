#pragma once

#include "empathia/autodiff.hpp"
#include "empathia/corpus.hpp"
#include "empathia/emotion_encoder.hpp"
#include "empathia/generator.hpp"

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

namespace empathia {

struct ModelConfig {
  EmotionEncoderConfig encoder;
  GeneratorConfig generator;
  double dropout_encdec = 0.3;
  double dropout_emotion = 0.1;
};

// Per-batch loss values. total = emotion_weight * emotion + generation.
struct Losses {
  double total = 0.0;
  double emotion = 0.0;
  double generation = 0.0;
};

// Everything one example contributes to the tape.
struct ExampleGraph {
  RepresentationVar emotion_rep;
  ad::Var emotion_probs;  // [1 x num_classes]
  ad::Var emotion_nll;    // [1 x 1]
  EncoderOutputVar encoder;
  ad::Var fused;          // decoder initial state
  std::vector<ad::Var> step_distributions;
  ad::Var generation_nll_sum;  // summed over predicted target positions
  int generation_tokens = 0;
};

struct Prediction {
  EmotionDistribution emotion;
  Eigen::RowVectorXd emotion_rep;
  std::vector<int> tokens;
};

class JointModel {
 public:
  JointModel(const ModelConfig& config, std::uint64_t init_seed);
  JointModel(const JointModel&) = delete;
  JointModel& operator=(const JointModel&) = delete;

  const ModelConfig& config() const { return config_; }
  ad::ParameterSet& parameters() { return params_; }
  const ad::ParameterSet& parameters() const { return params_; }
  const EmotionBackbone& backbone() const { return *backbone_; }
  const EmotionClassifier& classifier() const { return classifier_; }
  const Seq2SeqGenerator& generator() const { return generator_; }

  // Teacher-forced forward pass of one example. The decoder reads
  // target[0..n-2] and predicts target[1..n-1].
  ExampleGraph forward_example(ad::Tape& tape, std::span<const int> classifier_tokens,
                               std::span<const int> context_tokens, std::span<const int> target_tokens,
                               int emotion, const ForwardMode& mode) const;

  // Batch losses: emotion = mean NLL over examples, generation = NLL summed
  // over all predicted target tokens / their count. When `backward` is set
  // the gradient of emotion_weight * emotion + generation is added to the
  // parameters' grad fields (callers zero them first).
  Losses compute(const Batch& batch, const ForwardMode& mode, double emotion_weight, bool backward);
  Losses evaluate_loss(const Batch& batch, double emotion_weight) const;

  EmotionDistribution classify(std::span<const int> classifier_tokens) const;
  Prediction predict(std::span<const int> classifier_tokens, std::span<const int> context_tokens,
                     int max_len) const;

 private:
  Losses run(const Batch& batch, const ForwardMode& mode, double emotion_weight, bool backward) const;

  ModelConfig config_;
  ad::ParameterSet params_;
  std::mt19937_64 init_rng_;
  std::unique_ptr<EmotionBackbone> backbone_;
  EmotionClassifier classifier_;
  Seq2SeqGenerator generator_;
};

}  // namespace empathia
