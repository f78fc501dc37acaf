#pragma once

// Response generator: Bi-GRU context encoder, emotion-fused decoder
// initialisation, bilinear attention with input feeding.
//
//   h_0      = (C_E + h_final) / 2
//   h_t      = GRU([emb(y_{t-1}) ; h~_{t-1}], h_{t-1})
//   alpha_t  = softmax_i(H_i^T W_f h_t)        over real encoder steps
//   c_t      = sum_i alpha_t,i H_i
//   h~_t     = tanh(W_h [h_t ; c_t])
//   p(y_t)   = softmax(W_V h~_t)

#include "empathia/autodiff.hpp"
#include "empathia/emotion_encoder.hpp"
#include "empathia/recurrent.hpp"

#include <span>
#include <utility>
#include <vector>

namespace empathia {

struct GeneratorConfig {
  int vocab_size = 0;
  int embedding_dim = 300;
  int hidden = 768;  // concatenated encoder size and decoder size; even
  int max_len = 80;
};

struct EncoderOutputVar {
  ad::Var states;  // [T x d], T = real length
  ad::Var final;   // [1 x d] = [forward last ; backward first]
  ad::Var keys;    // states W_f, cached for attention
  int length = 0;
};

struct EncoderOutput {
  ad::Matrix states;
  Eigen::RowVectorXd final;
};

struct DecoderStateVar {
  ad::Var hidden;       // h_dec
  ad::Var attentional;  // h~ of the previous step (input feeding)
  int previous_token = 0;
};

struct AttentionVar {
  ad::Var context;  // [1 x d]
  ad::Var weights;  // [1 x T]
};

struct StepVar {
  ad::Var attentional;   // [1 x d]
  ad::Var distribution;  // [1 x V]
};

// Element-wise mean of the emotion representation and the encoder final
// state; both [1 x d].
ad::Var fuse_emotion(ad::Var emotion, ad::Var encoder_final);
Eigen::RowVectorXd fuse_emotion(const Eigen::RowVectorXd& emotion, const Eigen::RowVectorXd& encoder_final);

class Seq2SeqGenerator {
 public:
  struct Bound {
    ad::Var embedding;
    GruWeights encoder_forward;
    GruWeights encoder_backward;
    GruWeights decoder;
    ad::Var attention;   // W_f [d x d]
    ad::Var combine;     // W_h [2d x d]
    ad::Var output;      // W_V [d x V]
  };

  Seq2SeqGenerator(ad::ParameterSet& params, const GeneratorConfig& config, std::mt19937_64& init_rng);

  const GeneratorConfig& config() const { return config_; }
  Bound bind(ad::Tape& tape) const;

  // Encodes the first `length` tokens; anything after is padding and never
  // read. Dropout (training only) applies to the per-step states.
  EncoderOutputVar encode_context(const Bound& w, std::span<const int> tokens, int length,
                                  const ForwardMode& mode, double dropout) const;
  EncoderOutput encode_context(std::span<const int> tokens, int length) const;

  DecoderStateVar initial_state(ad::Tape& tape, ad::Var fused) const;

  AttentionVar attend(ad::Var hidden, const EncoderOutputVar& enc) const;

  std::pair<StepVar, DecoderStateVar> decode_step(const Bound& w, const DecoderStateVar& state,
                                                  const EncoderOutputVar& enc, const ForwardMode& mode,
                                                  double dropout) const;

  // Argmax decoding from the fused initial state; ties go to the lowest id.
  // Stops at EOS or after max_len tokens; BOS/EOS are not returned.
  std::vector<int> greedy_decode(std::span<const int> context_tokens, const Eigen::RowVectorXd& emotion,
                                 int max_len) const;

 private:
  GeneratorConfig config_;
  ad::Parameter* embedding_ = nullptr;
  GruCell encoder_forward_;
  GruCell encoder_backward_;
  GruCell decoder_;
  ad::Parameter* attention_ = nullptr;
  ad::Parameter* combine_ = nullptr;
  ad::Parameter* output_ = nullptr;
};

// Value-level attention: scores H_i^T W_f h over every row of `states`.
std::pair<Eigen::RowVectorXd, Eigen::RowVectorXd> attend(const Eigen::RowVectorXd& hidden, const ad::Matrix& states,
                                                         const ad::Matrix& bilinear);

// Mean over non-PAD target positions of -log p(target). Row t of
// `distributions` predicts targets[t]; PAD (0) positions contribute nothing.
double generation_loss(const ad::Matrix& distributions, std::span<const int> targets,
                       ad::LogFloorCounter* counter = nullptr);

ad::LogFloorCounter& generation_log_floor_counter();

int argmax_lowest(const Eigen::RowVectorXd& row);

}  // namespace empathia
