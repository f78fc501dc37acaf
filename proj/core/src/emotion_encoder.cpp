#include "empathia/emotion_encoder.hpp"

#include "empathia/error.hpp"

#include <cmath>
#include <vector>

namespace empathia {

using ad::Var;

BackboneKind parse_backbone(std::string_view name) {
  if (name == "transformer" || name == "pretrained-transformer" || name == "bert") {
    return BackboneKind::kTransformer;
  }
  if (name == "bi-lstm") return BackboneKind::kBiLstm;
  if (name == "bi-lstm-attn") return BackboneKind::kBiLstmAttn;
  throw ConfigError("unknown backbone kind: '" + std::string(name) +
                    "' (expected transformer, bi-lstm or bi-lstm-attn)");
}

std::string_view backbone_name(BackboneKind kind) {
  switch (kind) {
    case BackboneKind::kTransformer: return "transformer";
    case BackboneKind::kBiLstm: return "bi-lstm";
    case BackboneKind::kBiLstmAttn: return "bi-lstm-attn";
  }
  return "transformer";
}

int EmotionDistribution::argmax() const {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < probs.size(); ++i) {
    if (probs(i) > probs(best)) best = i;
  }
  return static_cast<int>(best);
}

// ---- transformer -----------------------------------------------------------

TransformerEncoder::TransformerEncoder(ad::ParameterSet& params, const std::string& prefix,
                                       const EmotionEncoderConfig& config, std::mt19937_64& init_rng)
    : dim_(config.dim), heads_(config.heads), cls_id_(config.cls_id), max_positions_(config.max_positions) {
  if (config.dim % config.heads != 0) {
    throw ConfigError("encoder_dim (" + std::to_string(config.dim) + ") must be divisible by encoder_heads (" +
                      std::to_string(config.heads) + ")");
  }
  constexpr double kStd = 0.02;
  const int d = config.dim;
  auto ones = [](int n) { return ad::Matrix::Ones(1, n).eval(); };
  auto zeros = [](int rows, int cols) { return ad::Matrix::Zero(rows, cols).eval(); };
  token_embedding_ = &params.add(prefix + ".token_embedding", normal_init(config.vocab_size, d, kStd, init_rng));
  position_embedding_ =
      &params.add(prefix + ".position_embedding", normal_init(config.max_positions, d, kStd, init_rng));
  embed_ln_gain_ = &params.add(prefix + ".embed_ln.gain", ones(d));
  embed_ln_bias_ = &params.add(prefix + ".embed_ln.bias", zeros(1, d));
  for (int l = 0; l < config.layers; ++l) {
    const std::string p = prefix + ".layer" + (l < 10 ? "0" : "") + std::to_string(l);
    Layer layer{};
    layer.wq = &params.add(p + ".attn.wq", normal_init(d, d, kStd, init_rng));
    layer.bq = &params.add(p + ".attn.bq", zeros(1, d));
    layer.wk = &params.add(p + ".attn.wk", normal_init(d, d, kStd, init_rng));
    layer.bk = &params.add(p + ".attn.bk", zeros(1, d));
    layer.wv = &params.add(p + ".attn.wv", normal_init(d, d, kStd, init_rng));
    layer.bv = &params.add(p + ".attn.bv", zeros(1, d));
    layer.wo = &params.add(p + ".attn.wo", normal_init(d, d, kStd, init_rng));
    layer.bo = &params.add(p + ".attn.bo", zeros(1, d));
    layer.ln1_gain = &params.add(p + ".ln1.gain", ones(d));
    layer.ln1_bias = &params.add(p + ".ln1.bias", zeros(1, d));
    layer.w1 = &params.add(p + ".ffn.w1", normal_init(d, config.ffn, kStd, init_rng));
    layer.b1 = &params.add(p + ".ffn.b1", zeros(1, config.ffn));
    layer.w2 = &params.add(p + ".ffn.w2", normal_init(config.ffn, d, kStd, init_rng));
    layer.b2 = &params.add(p + ".ffn.b2", zeros(1, d));
    layer.ln2_gain = &params.add(p + ".ln2.gain", ones(d));
    layer.ln2_bias = &params.add(p + ".ln2.bias", zeros(1, d));
    layers_.push_back(layer);
  }
}

Var TransformerEncoder::encode_layers(ad::Tape& t, std::span<const int> tokens) const {
  if (tokens.empty()) throw InputError("encoder input is empty");
  if (tokens.size() > static_cast<std::size_t>(max_positions_)) {
    throw LengthError("encoder input of " + std::to_string(tokens.size()) + " tokens exceeds the maximum of " +
                      std::to_string(max_positions_));
  }
  if (tokens.front() != cls_id_) throw InputError("encoder input must begin with [CLS]");
  const auto len = static_cast<Eigen::Index>(tokens.size());
  const Eigen::Index head_dim = dim_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(head_dim));

  Var x = ad::add(ad::gather_rows(t.parameter(*token_embedding_), tokens),
                  ad::slice_rows(t.parameter(*position_embedding_), 0, len));
  x = ad::layer_norm(x, t.parameter(*embed_ln_gain_), t.parameter(*embed_ln_bias_));

  std::vector<Var> cls_rows;
  cls_rows.reserve(layers_.size());
  std::vector<Var> head_out(static_cast<std::size_t>(heads_));
  for (const Layer& layer : layers_) {
    Var q = ad::add_bias(ad::matmul(x, t.parameter(*layer.wq)), t.parameter(*layer.bq));
    Var k = ad::add_bias(ad::matmul(x, t.parameter(*layer.wk)), t.parameter(*layer.bk));
    Var v = ad::add_bias(ad::matmul(x, t.parameter(*layer.wv)), t.parameter(*layer.bv));
    for (int h = 0; h < heads_; ++h) {
      const Eigen::Index off = h * head_dim;
      Var scores = ad::scale(ad::matmul_nt(ad::slice_cols(q, off, head_dim), ad::slice_cols(k, off, head_dim)),
                             inv_sqrt);
      head_out[static_cast<std::size_t>(h)] =
          ad::matmul(ad::softmax_rows(scores), ad::slice_cols(v, off, head_dim));
    }
    Var attn = ad::add_bias(ad::matmul(ad::concat_cols(head_out), t.parameter(*layer.wo)), t.parameter(*layer.bo));
    x = ad::layer_norm(ad::add(x, attn), t.parameter(*layer.ln1_gain), t.parameter(*layer.ln1_bias));
    Var hidden = ad::gelu(ad::add_bias(ad::matmul(x, t.parameter(*layer.w1)), t.parameter(*layer.b1)));
    Var ffn = ad::add_bias(ad::matmul(hidden, t.parameter(*layer.w2)), t.parameter(*layer.b2));
    x = ad::layer_norm(ad::add(x, ffn), t.parameter(*layer.ln2_gain), t.parameter(*layer.ln2_bias));
    cls_rows.push_back(ad::slice_rows(x, 0, 1));
  }
  return ad::concat_rows(cls_rows);
}

LayerClsStack TransformerEncoder::encode_layers(std::span<const int> tokens) const {
  ad::Tape tape(false);
  return {encode_layers(tape, tokens).value()};
}

// ---- pooling ---------------------------------------------------------------

RepresentationVar pool_cls(Var stack, Var bilinear, Var query) {
  // score_l = h_l^T W_g q  ->  row vector q W_g^T H^T
  Var scores = ad::matmul_nt(ad::matmul_nt(query, bilinear), stack);
  Var weights = ad::softmax_rows(scores);
  return {ad::matmul(weights, stack), weights};
}

EmotionRepresentation pool_cls(const ad::Matrix& stack, const ad::Matrix& bilinear, const Eigen::RowVectorXd& query) {
  if (!stack.allFinite()) throw NumericError("non-finite value in layer [CLS] stack");
  if (bilinear.rows() != stack.cols() || bilinear.cols() != query.size()) {
    throw InputError("pool_cls dimension mismatch");
  }
  ad::Tape tape(false);
  auto rep = pool_cls(tape.constant(stack), tape.constant(bilinear), tape.constant(query));
  return {rep.vector.value().row(0), rep.weights.value().row(0)};
}

EmotionRepresentation EmotionBackbone::represent(std::span<const int> tokens) const {
  ad::Tape tape(false);
  auto rep = represent(tape, tokens, ForwardMode{});
  return {rep.vector.value().row(0), rep.weights.value().row(0)};
}

TransformerBackbone::TransformerBackbone(ad::ParameterSet& params, const EmotionEncoderConfig& config,
                                         std::mt19937_64& init_rng)
    : EmotionBackbone(config.dim), encoder_(params, "emotion.encoder", config, init_rng) {
  const int d = config.dim;
  bilinear_ = &params.add("emotion.pool.bilinear", normal_init(d, d, 0.02, init_rng));
  query_ = &params.add("emotion.pool.query", normal_init(1, d, 1.0 / std::sqrt(static_cast<double>(d)), init_rng));
}

RepresentationVar TransformerBackbone::represent(ad::Tape& tape, std::span<const int> tokens,
                                                 const ForwardMode&) const {
  Var stack = encoder_.encode_layers(tape, tokens);
  if (!stack.value().allFinite()) throw NumericError("non-finite value in layer [CLS] stack");
  return pool_cls(stack, tape.parameter(*bilinear_), tape.parameter(*query_));
}

// ---- recurrent backbones ---------------------------------------------------

BiLstmBackbone::BiLstmBackbone(ad::ParameterSet& params, const EmotionEncoderConfig& config, bool attention,
                               std::mt19937_64& init_rng)
    : EmotionBackbone(config.dim), attention_(attention), max_positions_(config.max_positions) {
  const std::string prefix = attention ? "emotion.bilstm_attn" : "emotion.bilstm";
  const int hidden = std::max(1, config.dim / 2);
  embedding_ = &params.add(prefix + ".embedding", normal_init(config.vocab_size, config.embedding_dim, 1.0, init_rng));
  forward_ = LstmCell(params, prefix + ".forward", config.embedding_dim, hidden, init_rng);
  backward_ = LstmCell(params, prefix + ".backward", config.embedding_dim, hidden, init_rng);
  const double bound = 1.0 / std::sqrt(static_cast<double>(2 * hidden));
  if (attention) {
    attn_w_ = &params.add(prefix + ".attn.w", uniform_init(2 * hidden, hidden, bound, init_rng));
    attn_b_ = &params.add(prefix + ".attn.b", ad::Matrix::Zero(1, hidden));
    attn_v_ = &params.add(prefix + ".attn.v", uniform_init(1, hidden, bound, init_rng));
  }
  proj_w_ = &params.add(prefix + ".proj.w", uniform_init(2 * hidden, config.dim, bound, init_rng));
  proj_b_ = &params.add(prefix + ".proj.b", ad::Matrix::Zero(1, config.dim));
}

RepresentationVar BiLstmBackbone::represent(ad::Tape& t, std::span<const int> tokens, const ForwardMode&) const {
  if (tokens.empty()) throw InputError("encoder input is empty");
  if (tokens.size() > static_cast<std::size_t>(max_positions_)) {
    throw LengthError("encoder input of " + std::to_string(tokens.size()) + " tokens exceeds the maximum of " +
                      std::to_string(max_positions_));
  }
  const auto len = static_cast<Eigen::Index>(tokens.size());
  const int hidden = forward_.hidden_size();
  Var emb = ad::gather_rows(t.parameter(*embedding_), tokens);

  auto run = [&](const LstmCell& cell, bool reverse) {
    LstmWeights w = cell.bind(t);
    Var proj = LstmCell::project_inputs(w, emb);
    LstmState s{t.constant(ad::Matrix::Zero(1, hidden)), t.constant(ad::Matrix::Zero(1, hidden))};
    std::vector<Var> states(static_cast<std::size_t>(len));
    for (Eigen::Index i = 0; i < len; ++i) {
      const Eigen::Index pos = reverse ? len - 1 - i : i;
      s = LstmCell::step(w, ad::slice_rows(proj, pos, 1), s);
      states[static_cast<std::size_t>(pos)] = s.h;
    }
    return std::pair{ad::concat_rows(states), s.h};
  };
  auto [fwd_states, fwd_final] = run(forward_, false);
  auto [bwd_states, bwd_final] = run(backward_, true);

  Var pooled;
  Var weights;
  if (attention_) {
    Var states = ad::concat_cols({fwd_states, bwd_states});  // [T x 2H]
    Var u = ad::tanh(ad::add_bias(ad::matmul(states, t.parameter(*attn_w_)), t.parameter(*attn_b_)));
    weights = ad::softmax_rows(ad::matmul_nt(t.parameter(*attn_v_), u));
    pooled = ad::matmul(weights, states);
  } else {
    pooled = ad::concat_cols({fwd_final, bwd_final});
    weights = t.constant(ad::Matrix::Ones(1, 1));
  }
  Var rep = ad::add_bias(ad::matmul(pooled, t.parameter(*proj_w_)), t.parameter(*proj_b_));
  return {rep, weights};
}

std::unique_ptr<EmotionBackbone> make_backbone(const EmotionEncoderConfig& config, ad::ParameterSet& params,
                                               std::mt19937_64& init_rng) {
  switch (config.kind) {
    case BackboneKind::kTransformer: return std::make_unique<TransformerBackbone>(params, config, init_rng);
    case BackboneKind::kBiLstm: return std::make_unique<BiLstmBackbone>(params, config, false, init_rng);
    case BackboneKind::kBiLstmAttn: return std::make_unique<BiLstmBackbone>(params, config, true, init_rng);
  }
  throw ConfigError("unknown backbone kind");
}

// ---- classifier head -------------------------------------------------------

EmotionClassifier::EmotionClassifier(ad::ParameterSet& params, int dim, int num_classes, std::mt19937_64& init_rng) {
  weight_ = &params.add("emotion.classifier.weight", normal_init(dim, num_classes, 0.02, init_rng));
}

Var EmotionClassifier::classify(ad::Tape& tape, Var representation, const ForwardMode& mode, double dropout) const {
  Var x = mode.dropout_active() ? ad::dropout(representation, dropout, mode.rng) : representation;
  return ad::softmax_rows(ad::matmul(x, tape.parameter(*weight_)));
}

EmotionDistribution EmotionClassifier::classify(const Eigen::RowVectorXd& representation) const {
  return classify_emotion(representation, weight_->value);
}

EmotionDistribution classify_emotion(const Eigen::RowVectorXd& representation, const ad::Matrix& weight) {
  ad::Tape tape(false);
  Var probs = ad::softmax_rows(ad::matmul(tape.constant(representation), tape.constant(weight)));
  if (!probs.value().allFinite()) throw NumericError("non-finite emotion distribution");
  return {probs.value().row(0)};
}

ad::LogFloorCounter& emotion_log_floor_counter() {
  static ad::LogFloorCounter counter;
  return counter;
}

double emotion_loss(const ad::Matrix& distributions, std::span<const int> gold, ad::LogFloorCounter* counter) {
  if (static_cast<std::size_t>(distributions.rows()) != gold.size()) {
    throw InputError("emotion_loss: " + std::to_string(distributions.rows()) + " distributions for " +
                     std::to_string(gold.size()) + " labels");
  }
  if (gold.empty()) throw InputError("emotion_loss on an empty batch");
  ad::LogFloorCounter& c = counter != nullptr ? *counter : emotion_log_floor_counter();
  double total = 0.0;
  for (std::size_t b = 0; b < gold.size(); ++b) {
    if (gold[b] < 0 || gold[b] >= distributions.cols()) {
      throw InputError("emotion id " + std::to_string(gold[b]) + " out of range");
    }
    double p = distributions(static_cast<Eigen::Index>(b), gold[b]);
    if (p <= kLogFloor) {
      c.hits.fetch_add(1, std::memory_order_relaxed);
      p = kLogFloor;
    }
    total -= std::log(p);
  }
  return total / static_cast<double>(gold.size());
}

}  // namespace empathia
