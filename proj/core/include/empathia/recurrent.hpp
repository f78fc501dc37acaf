#pragma once

// GRU and LSTM cells on the autodiff tape. Gate layout follows the common
// convention: GRU columns are [reset | update | candidate], LSTM columns are
// [input | forget | cell | output].

#include "empathia/autodiff.hpp"

#include <random>
#include <string>

namespace empathia {

// Bound copies of a module's parameters on one tape.
struct GruWeights {
  ad::Var input;   // [in x 3H]
  ad::Var hidden;  // [H x 3H]
  ad::Var input_bias;
  ad::Var hidden_bias;
};

class GruCell {
 public:
  GruCell() = default;
  GruCell(ad::ParameterSet& params, const std::string& prefix, int input_size, int hidden_size,
          std::mt19937_64& init_rng);

  GruWeights bind(ad::Tape& tape) const;
  int hidden_size() const { return hidden_; }

  // Input projections for a whole sequence [T x in] -> [T x 3H].
  static ad::Var project_inputs(const GruWeights& w, ad::Var inputs);
  // One step given the projected input row [1 x 3H] and state [1 x H].
  static ad::Var step(const GruWeights& w, ad::Var projected_input, ad::Var state);

 private:
  ad::Parameter* input_ = nullptr;
  ad::Parameter* hidden_w_ = nullptr;
  ad::Parameter* input_bias_ = nullptr;
  ad::Parameter* hidden_bias_ = nullptr;
  int hidden_ = 0;
};

struct LstmWeights {
  ad::Var input;   // [in x 4H]
  ad::Var hidden;  // [H x 4H]
  ad::Var bias;    // [1 x 4H]
};

struct LstmState {
  ad::Var h;
  ad::Var c;
};

class LstmCell {
 public:
  LstmCell() = default;
  LstmCell(ad::ParameterSet& params, const std::string& prefix, int input_size, int hidden_size,
           std::mt19937_64& init_rng);

  LstmWeights bind(ad::Tape& tape) const;
  int hidden_size() const { return hidden_; }

  static ad::Var project_inputs(const LstmWeights& w, ad::Var inputs);
  static LstmState step(const LstmWeights& w, ad::Var projected_input, const LstmState& state);

 private:
  ad::Parameter* input_ = nullptr;
  ad::Parameter* hidden_w_ = nullptr;
  ad::Parameter* bias_ = nullptr;
  int hidden_ = 0;
};

// Initialisers shared by the model modules.
ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng);
ad::Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng);

}  // namespace empathia
