#include "empathia/model.hpp"

#include "empathia/error.hpp"

namespace empathia {

using ad::Var;

JointModel::JointModel(const ModelConfig& config, std::uint64_t init_seed)
    : config_(config),
      init_rng_(init_seed),
      backbone_(make_backbone(config.encoder, params_, init_rng_)),
      classifier_(params_, config.encoder.dim, config.encoder.num_classes, init_rng_),
      generator_(params_, config.generator, init_rng_) {
  if (config.encoder.dim != config.generator.hidden) {
    throw ConfigError("emotion representation (" + std::to_string(config.encoder.dim) +
                      ") and generator hidden size (" + std::to_string(config.generator.hidden) +
                      ") must match for fusion");
  }
}

ExampleGraph JointModel::forward_example(ad::Tape& tape, std::span<const int> classifier_tokens,
                                         std::span<const int> context_tokens, std::span<const int> target_tokens,
                                         int emotion, const ForwardMode& mode) const {
  if (target_tokens.size() < 2) throw InputError("target must hold at least BOS and EOS");
  ExampleGraph g;
  g.emotion_rep = backbone_->represent(tape, classifier_tokens, mode);
  g.emotion_probs = classifier_.classify(tape, g.emotion_rep.vector, mode, config_.dropout_emotion);
  g.emotion_nll = ad::neg_log_prob(g.emotion_probs, emotion, kLogFloor, &emotion_log_floor_counter());

  auto w = generator_.bind(tape);
  g.encoder = generator_.encode_context(w, context_tokens, static_cast<int>(context_tokens.size()), mode,
                                        config_.dropout_encdec);
  g.fused = fuse_emotion(g.emotion_rep.vector, g.encoder.final);
  DecoderStateVar state = generator_.initial_state(tape, g.fused);
  state.previous_token = target_tokens[0];
  std::vector<Var> nll;
  for (std::size_t t = 1; t < target_tokens.size(); ++t) {
    auto [out, next] = generator_.decode_step(w, state, g.encoder, mode, config_.dropout_encdec);
    g.step_distributions.push_back(out.distribution);
    nll.push_back(ad::neg_log_prob(out.distribution, target_tokens[t], kLogFloor, &generation_log_floor_counter()));
    state = next;
    state.previous_token = target_tokens[t];
  }
  g.generation_nll_sum = ad::sum(ad::concat_cols(nll));
  g.generation_tokens = static_cast<int>(nll.size());
  return g;
}

Losses JointModel::run(const Batch& batch, const ForwardMode& mode, double emotion_weight, bool backward) const {
  if (batch.size() == 0) throw InputError("empty batch");
  int total_tokens = 0;
  for (int len : batch.target_lengths) total_tokens += len - 1;
  const double emo_scale = 1.0 / batch.size();
  const double gen_scale = 1.0 / std::max(total_tokens, 1);

  double emo_sum = 0.0;
  double gen_sum = 0.0;
  for (int b = 0; b < batch.size(); ++b) {
    ad::Tape tape(backward);
    const auto cls = batch.classifier_row(b);
    const auto ctx = batch.context_row(b);
    const auto tgt = batch.target_row(b);
    ExampleGraph g = forward_example(tape, cls, ctx, tgt, batch.emotions[static_cast<std::size_t>(b)], mode);
    emo_sum += g.emotion_nll.scalar();
    gen_sum += g.generation_nll_sum.scalar();
    if (backward) {
      Var objective = ad::add(ad::scale(g.emotion_nll, emotion_weight * emo_scale),
                              ad::scale(g.generation_nll_sum, gen_scale));
      tape.backward(objective);
    }
  }
  Losses losses;
  losses.emotion = emo_sum * emo_scale;
  losses.generation = gen_sum * gen_scale;
  losses.total = emotion_weight * losses.emotion + losses.generation;
  return losses;
}

Losses JointModel::compute(const Batch& batch, const ForwardMode& mode, double emotion_weight, bool backward) {
  return run(batch, mode, emotion_weight, backward);
}

Losses JointModel::evaluate_loss(const Batch& batch, double emotion_weight) const {
  return run(batch, ForwardMode{}, emotion_weight, false);
}

EmotionDistribution JointModel::classify(std::span<const int> classifier_tokens) const {
  return classifier_.classify(backbone_->represent(classifier_tokens).vector);
}

Prediction JointModel::predict(std::span<const int> classifier_tokens, std::span<const int> context_tokens,
                               int max_len) const {
  Prediction p;
  p.emotion_rep = backbone_->represent(classifier_tokens).vector;
  p.emotion = classifier_.classify(p.emotion_rep);
  p.tokens = generator_.greedy_decode(context_tokens, p.emotion_rep, max_len);
  return p;
}

}  // namespace empathia
