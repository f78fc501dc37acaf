#include "empathia/generator.hpp"

#include "empathia/corpus.hpp"
#include "empathia/error.hpp"

#include <cmath>

namespace empathia {

using ad::Var;

Var fuse_emotion(Var emotion, Var encoder_final) {
  if (emotion.cols() != encoder_final.cols() || emotion.rows() != encoder_final.rows()) {
    throw InputError("fuse_emotion: emotion representation has " + std::to_string(emotion.cols()) +
                     " dims, encoder state has " + std::to_string(encoder_final.cols()));
  }
  return ad::scale(ad::add(emotion, encoder_final), 0.5);
}

Eigen::RowVectorXd fuse_emotion(const Eigen::RowVectorXd& emotion, const Eigen::RowVectorXd& encoder_final) {
  ad::Tape tape(false);
  return fuse_emotion(tape.constant(emotion), tape.constant(encoder_final)).value().row(0);
}

Seq2SeqGenerator::Seq2SeqGenerator(ad::ParameterSet& params, const GeneratorConfig& config,
                                   std::mt19937_64& init_rng)
    : config_(config) {
  if (config.hidden < 2 || config.hidden % 2 != 0) {
    throw ConfigError("generator hidden size must be even, got " + std::to_string(config.hidden));
  }
  const int d = config.hidden;
  const int e = config.embedding_dim;
  embedding_ = &params.add("generator.embedding", normal_init(config.vocab_size, e, 1.0, init_rng));
  encoder_forward_ = GruCell(params, "generator.encoder.forward", e, d / 2, init_rng);
  encoder_backward_ = GruCell(params, "generator.encoder.backward", e, d / 2, init_rng);
  decoder_ = GruCell(params, "generator.decoder", e + d, d, init_rng);
  const double bd = 1.0 / std::sqrt(static_cast<double>(d));
  attention_ = &params.add("generator.attention.bilinear", uniform_init(d, d, bd, init_rng));
  combine_ = &params.add("generator.combine", uniform_init(2 * d, d, 1.0 / std::sqrt(2.0 * d), init_rng));
  output_ = &params.add("generator.output", uniform_init(d, config.vocab_size, bd, init_rng));
}

Seq2SeqGenerator::Bound Seq2SeqGenerator::bind(ad::Tape& tape) const {
  return {tape.parameter(*embedding_), encoder_forward_.bind(tape), encoder_backward_.bind(tape),
          decoder_.bind(tape),         tape.parameter(*attention_),  tape.parameter(*combine_),
          tape.parameter(*output_)};
}

EncoderOutputVar Seq2SeqGenerator::encode_context(const Bound& w, std::span<const int> tokens, int length,
                                                  const ForwardMode& mode, double dropout) const {
  if (length < 1) throw InputError("context length must be >= 1");
  if (static_cast<std::size_t>(length) > tokens.size()) {
    throw InputError("context length " + std::to_string(length) + " exceeds the " +
                     std::to_string(tokens.size()) + " tokens supplied");
  }
  if (length > config_.max_len) {
    throw LengthError("context of " + std::to_string(length) + " tokens exceeds the maximum of " +
                      std::to_string(config_.max_len));
  }
  ad::Tape& t = *w.embedding.tape();
  const auto real = tokens.first(static_cast<std::size_t>(length));
  const int half = config_.hidden / 2;
  Var emb = ad::gather_rows(w.embedding, real);

  auto run = [&](const GruWeights& gw, bool reverse) {
    Var proj = GruCell::project_inputs(gw, emb);
    Var h = t.constant(ad::Matrix::Zero(1, half));
    std::vector<Var> states(static_cast<std::size_t>(length));
    for (int i = 0; i < length; ++i) {
      const int pos = reverse ? length - 1 - i : i;
      h = GruCell::step(gw, ad::slice_rows(proj, pos, 1), h);
      states[static_cast<std::size_t>(pos)] = h;
    }
    return ad::concat_rows(states);
  };
  Var fwd = run(w.encoder_forward, false);
  Var bwd = run(w.encoder_backward, true);

  EncoderOutputVar out;
  out.length = length;
  out.final = ad::concat_cols({ad::slice_rows(fwd, length - 1, 1), ad::slice_rows(bwd, 0, 1)});
  Var states = ad::concat_cols({fwd, bwd});
  out.states = mode.dropout_active() ? ad::dropout(states, dropout, mode.rng) : states;
  out.keys = ad::matmul(out.states, w.attention);
  return out;
}

EncoderOutput Seq2SeqGenerator::encode_context(std::span<const int> tokens, int length) const {
  ad::Tape tape(false);
  auto w = bind(tape);
  auto enc = encode_context(w, tokens, length, ForwardMode{}, 0.0);
  return {enc.states.value(), enc.final.value().row(0)};
}

DecoderStateVar Seq2SeqGenerator::initial_state(ad::Tape& tape, Var fused) const {
  return {fused, tape.constant(ad::Matrix::Zero(1, config_.hidden)), GenerationVocab::kBos};
}

AttentionVar Seq2SeqGenerator::attend(Var hidden, const EncoderOutputVar& enc) const {
  if (enc.length < 1) throw InputError("attention over an encoder output with no unmasked steps");
  Var weights = ad::softmax_rows(ad::matmul_nt(hidden, enc.keys));
  return {ad::matmul(weights, enc.states), weights};
}

std::pair<StepVar, DecoderStateVar> Seq2SeqGenerator::decode_step(const Bound& w, const DecoderStateVar& state,
                                                                  const EncoderOutputVar& enc,
                                                                  const ForwardMode& mode, double dropout) const {
  const int prev = state.previous_token;
  Var emb = ad::gather_rows(w.embedding, std::span<const int>(&prev, 1));
  Var input = ad::concat_cols({emb, state.attentional});
  Var hidden = GruCell::step(w.decoder, GruCell::project_inputs(w.decoder, input), state.hidden);
  AttentionVar att = attend(hidden, enc);
  Var attentional = ad::tanh(ad::matmul(ad::concat_cols({hidden, att.context}), w.combine));
  Var fed = mode.dropout_active() ? ad::dropout(attentional, dropout, mode.rng) : attentional;
  Var distribution = ad::softmax_rows(ad::matmul(fed, w.output));
  return {StepVar{attentional, distribution}, DecoderStateVar{hidden, attentional, prev}};
}

int argmax_lowest(const Eigen::RowVectorXd& row) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < row.size(); ++i) {
    if (row(i) > row(best)) best = i;
  }
  return static_cast<int>(best);
}

std::vector<int> Seq2SeqGenerator::greedy_decode(std::span<const int> context_tokens,
                                                 const Eigen::RowVectorXd& emotion, int max_len) const {
  ad::Tape tape(false);
  auto w = bind(tape);
  const ForwardMode eval{};
  auto enc = encode_context(w, context_tokens, static_cast<int>(context_tokens.size()), eval, 0.0);
  auto state = initial_state(tape, fuse_emotion(tape.constant(emotion), enc.final));
  std::vector<int> out;
  for (int step = 0; step < max_len; ++step) {
    auto [output, next] = decode_step(w, state, enc, eval, 0.0);
    const int token = argmax_lowest(output.distribution.value().row(0));
    if (token == GenerationVocab::kEos) break;
    out.push_back(token);
    state = next;
    state.previous_token = token;
  }
  return out;
}

std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> attend(const Eigen::RowVectorXd& hidden, const ad::Matrix& states,
                                                         const ad::Matrix& bilinear) {
  if (states.rows() < 1) throw InputError("attention over an encoder output with no unmasked steps");
  ad::Tape tape(false);
  EncoderOutputVar enc;
  enc.states = tape.constant(states);
  enc.keys = ad::matmul(enc.states, tape.constant(bilinear));
  enc.length = static_cast<int>(states.rows());
  Var weights = ad::softmax_rows(ad::matmul_nt(tape.constant(hidden), enc.keys));
  Var context = ad::matmul(weights, enc.states);
  return {context.value().row(0), weights.value().row(0)};
}

ad::LogFloorCounter& generation_log_floor_counter() {
  static ad::LogFloorCounter counter;
  return counter;
}

double generation_loss(const ad::Matrix& distributions, std::span<const int> targets, ad::LogFloorCounter* counter) {
  if (static_cast<std::size_t>(distributions.rows()) != targets.size()) {
    throw InputError("generation_loss: " + std::to_string(distributions.rows()) + " distributions for " +
                     std::to_string(targets.size()) + " targets");
  }
  ad::LogFloorCounter& c = counter != nullptr ? *counter : generation_log_floor_counter();
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < targets.size(); ++t) {
    if (targets[t] == GenerationVocab::kPad) continue;
    if (targets[t] < 0 || targets[t] >= distributions.cols()) {
      throw InputError("target id " + std::to_string(targets[t]) + " out of range");
    }
    double p = distributions(static_cast<Eigen::Index>(t), targets[t]);
    if (p <= kLogFloor) {
      c.hits.fetch_add(1, std::memory_order_relaxed);
      p = kLogFloor;
    }
    total -= std::log(p);
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace empathia
