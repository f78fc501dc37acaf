#pragma once

// Emotion side of the joint model: an encoder backbone produces the emotion
// representation C_E, a linear softmax head turns it into a distribution over
// the 32 emotion classes.
//
// The default backbone is a bidirectional transformer whose per-layer [CLS]
// states are pooled with learned softmax weights:
//
//   score_l = h_l^T W_g q,   alpha = softmax(score),   C_E = sum_l alpha_l h_l
//
// Two recurrent backbones (final-state and attention pooling over a Bi-LSTM)
// plug into the same interface for ablations.

#include "empathia/autodiff.hpp"
#include "empathia/recurrent.hpp"

#include <memory>
#include <random>
#include <span>
#include <string_view>

namespace empathia {

enum class BackboneKind { kTransformer, kBiLstm, kBiLstmAttn };

BackboneKind parse_backbone(std::string_view name);
std::string_view backbone_name(BackboneKind kind);

// Dropout is only applied when training is set and an rng is supplied.
struct ForwardMode {
  bool training = false;
  std::mt19937_64* rng = nullptr;

  bool dropout_active() const { return training && rng != nullptr; }
};

struct EmotionEncoderConfig {
  BackboneKind kind = BackboneKind::kTransformer;
  int vocab_size = 0;  // classifier word pieces
  int cls_id = 2;
  int layers = 12;
  int dim = 768;
  int heads = 12;
  int ffn = 3072;
  int max_positions = 80;
  int embedding_dim = 300;  // recurrent backbones only
  int num_classes = 32;
};

// [L x d] stack of per-layer [CLS] states.
struct LayerClsStack {
  ad::Matrix rows;
};

struct EmotionRepresentation {
  Eigen::RowVectorXd vector;   // C_E
  Eigen::RowVectorXd weights;  // pooling weights (layers, tokens, or {1})
};

struct EmotionDistribution {
  Eigen::RowVectorXd probs;

  int argmax() const;
};

// Tape-level representation.
struct RepresentationVar {
  ad::Var vector;
  ad::Var weights;
};

class TransformerEncoder {
 public:
  TransformerEncoder(ad::ParameterSet& params, const std::string& prefix, const EmotionEncoderConfig& config,
                     std::mt19937_64& init_rng);

  // Position-0 hidden state of every layer. Throws LengthError above
  // max_positions and InputError on empty input or a missing leading [CLS].
  ad::Var encode_layers(ad::Tape& tape, std::span<const int> tokens) const;
  LayerClsStack encode_layers(std::span<const int> tokens) const;

  int layers() const { return static_cast<int>(layers_.size()); }
  int dim() const { return dim_; }

 private:
  struct Layer {
    ad::Parameter *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo;
    ad::Parameter *ln1_gain, *ln1_bias;
    ad::Parameter *w1, *b1, *w2, *b2;
    ad::Parameter *ln2_gain, *ln2_bias;
  };

  ad::Parameter* token_embedding_ = nullptr;
  ad::Parameter* position_embedding_ = nullptr;
  ad::Parameter* embed_ln_gain_ = nullptr;
  ad::Parameter* embed_ln_bias_ = nullptr;
  std::vector<Layer> layers_;
  int dim_ = 0;
  int heads_ = 0;
  int cls_id_ = 0;
  int max_positions_ = 0;
};

// Layer-weighted pooling on the tape: stack [L x d], bilinear [d x d],
// query [1 x d]. Returns C_E [1 x d] and the weights [1 x L].
RepresentationVar pool_cls(ad::Var stack, ad::Var bilinear, ad::Var query);
// Value-level pooling; throws NumericError on non-finite input.
EmotionRepresentation pool_cls(const ad::Matrix& stack, const ad::Matrix& bilinear,
                               const Eigen::RowVectorXd& query);

class EmotionBackbone {
 public:
  virtual ~EmotionBackbone() = default;
  virtual BackboneKind kind() const = 0;
  virtual RepresentationVar represent(ad::Tape& tape, std::span<const int> tokens,
                                      const ForwardMode& mode) const = 0;
  EmotionRepresentation represent(std::span<const int> tokens) const;
  int dim() const { return dim_; }

 protected:
  explicit EmotionBackbone(int dim) : dim_(dim) {}
  int dim_;
};

class TransformerBackbone final : public EmotionBackbone {
 public:
  TransformerBackbone(ad::ParameterSet& params, const EmotionEncoderConfig& config, std::mt19937_64& init_rng);

  BackboneKind kind() const override { return BackboneKind::kTransformer; }
  RepresentationVar represent(ad::Tape& tape, std::span<const int> tokens,
                              const ForwardMode& mode) const override;
  using EmotionBackbone::represent;

  const TransformerEncoder& encoder() const { return encoder_; }

 private:
  TransformerEncoder encoder_;
  ad::Parameter* bilinear_ = nullptr;  // W_g
  ad::Parameter* query_ = nullptr;     // q
};

// Bi-LSTM over classifier word pieces; pools by final-state concatenation or
// by additive attention over token states, then projects to `dim`.
class BiLstmBackbone final : public EmotionBackbone {
 public:
  BiLstmBackbone(ad::ParameterSet& params, const EmotionEncoderConfig& config, bool attention,
                 std::mt19937_64& init_rng);

  BackboneKind kind() const override {
    return attention_ ? BackboneKind::kBiLstmAttn : BackboneKind::kBiLstm;
  }
  RepresentationVar represent(ad::Tape& tape, std::span<const int> tokens,
                              const ForwardMode& mode) const override;
  using EmotionBackbone::represent;

 private:
  bool attention_;
  int max_positions_;
  ad::Parameter* embedding_ = nullptr;
  LstmCell forward_;
  LstmCell backward_;
  ad::Parameter* attn_w_ = nullptr;
  ad::Parameter* attn_b_ = nullptr;
  ad::Parameter* attn_v_ = nullptr;
  ad::Parameter* proj_w_ = nullptr;
  ad::Parameter* proj_b_ = nullptr;
};

// Constructs the configured backbone. Only valid while the model is being
// built; the returned backbone registers its parameters in `params`.
std::unique_ptr<EmotionBackbone> make_backbone(const EmotionEncoderConfig& config, ad::ParameterSet& params,
                                               std::mt19937_64& init_rng);

// softmax(dropout(C_E) W_E) with W_E [d x num_classes].
class EmotionClassifier {
 public:
  EmotionClassifier(ad::ParameterSet& params, int dim, int num_classes, std::mt19937_64& init_rng);

  ad::Var classify(ad::Tape& tape, ad::Var representation, const ForwardMode& mode, double dropout) const;
  EmotionDistribution classify(const Eigen::RowVectorXd& representation) const;

 private:
  ad::Parameter* weight_ = nullptr;
};

EmotionDistribution classify_emotion(const Eigen::RowVectorXd& representation, const ad::Matrix& weight);

inline constexpr double kLogFloor = 1e-12;

// Mean over rows of -log p(gold). Probabilities at or below 1e-12 are clamped
// and counted in `counter` (or the process-wide counter when null).
double emotion_loss(const ad::Matrix& distributions, std::span<const int> gold,
                    ad::LogFloorCounter* counter = nullptr);

ad::LogFloorCounter& emotion_log_floor_counter();

}  // namespace empathia
