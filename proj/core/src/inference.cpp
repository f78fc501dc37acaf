#include "empathia/inference.hpp"

#include "empathia/error.hpp"

namespace empathia {

Reply respond(const JointModel& model, const GenerationVocab& vocab, const WordPieceTokenizer& tokenizer,
              const EmotionLabels& labels, std::span<const Utterance> history, int max_len) {
  const DialogueContext ctx = build_context(history, max_len);
  if (ctx.words.empty()) throw InputError("empty dialogue context");
  const auto context_tokens = vocab.encode(ctx.words);
  const auto classifier_tokens = classifier_input(tokenizer, ctx.text, max_len);
  const Prediction p = model.predict(classifier_tokens, context_tokens, max_len - 2);

  Reply r;
  r.words = vocab.decode(p.tokens);
  r.text = detokenize(r.words);
  r.emotion = p.emotion.argmax();
  r.emotion_name = labels.name(r.emotion);
  r.emotion_probability = p.emotion.probs(r.emotion);
  r.distribution = p.emotion.probs;
  return r;
}

Reply respond(const Checkpoint& checkpoint, std::span<const Utterance> history) {
  if (!checkpoint.model) throw Error("checkpoint has no model");
  return respond(*checkpoint.model, checkpoint.vocab, checkpoint.tokenizer, checkpoint.labels, history,
                 checkpoint.config.max_len);
}

}  // namespace empathia
