#include "empathia/recurrent.hpp"

#include <cmath>

namespace empathia {

using ad::Var;

ad::Matrix uniform_init(Eigen::Index rows, Eigen::Index cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

ad::Matrix normal_init(Eigen::Index rows, Eigen::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ad::Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

GruCell::GruCell(ad::ParameterSet& params, const std::string& prefix, int input_size, int hidden_size,
                 std::mt19937_64& init_rng)
    : hidden_(hidden_size) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  input_ = &params.add(prefix + ".w_input", uniform_init(input_size, 3 * hidden_size, bound, init_rng));
  hidden_w_ = &params.add(prefix + ".w_hidden", uniform_init(hidden_size, 3 * hidden_size, bound, init_rng));
  input_bias_ = &params.add(prefix + ".b_input", uniform_init(1, 3 * hidden_size, bound, init_rng));
  hidden_bias_ = &params.add(prefix + ".b_hidden", uniform_init(1, 3 * hidden_size, bound, init_rng));
}

GruWeights GruCell::bind(ad::Tape& tape) const {
  return {tape.parameter(*input_), tape.parameter(*hidden_w_), tape.parameter(*input_bias_),
          tape.parameter(*hidden_bias_)};
}

Var GruCell::project_inputs(const GruWeights& w, Var inputs) {
  return ad::add_bias(ad::matmul(inputs, w.input), w.input_bias);
}

Var GruCell::step(const GruWeights& w, Var projected_input, Var state) {
  const Eigen::Index h = state.cols();
  Var gh = ad::add_bias(ad::matmul(state, w.hidden), w.hidden_bias);
  Var reset = ad::sigmoid(ad::add(ad::slice_cols(projected_input, 0, h), ad::slice_cols(gh, 0, h)));
  Var update = ad::sigmoid(ad::add(ad::slice_cols(projected_input, h, h), ad::slice_cols(gh, h, h)));
  Var candidate = ad::tanh(
      ad::add(ad::slice_cols(projected_input, 2 * h, h), ad::hadamard(reset, ad::slice_cols(gh, 2 * h, h))));
  // (1 - z) * n + z * h
  return ad::add(ad::hadamard(ad::one_minus(update), candidate), ad::hadamard(update, state));
}

LstmCell::LstmCell(ad::ParameterSet& params, const std::string& prefix, int input_size, int hidden_size,
                   std::mt19937_64& init_rng)
    : hidden_(hidden_size) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_size));
  input_ = &params.add(prefix + ".w_input", uniform_init(input_size, 4 * hidden_size, bound, init_rng));
  hidden_w_ = &params.add(prefix + ".w_hidden", uniform_init(hidden_size, 4 * hidden_size, bound, init_rng));
  ad::Matrix bias = uniform_init(1, 4 * hidden_size, bound, init_rng);
  bias.middleCols(hidden_size, hidden_size).setOnes();  // forget gate
  bias_ = &params.add(prefix + ".bias", std::move(bias));
}

LstmWeights LstmCell::bind(ad::Tape& tape) const {
  return {tape.parameter(*input_), tape.parameter(*hidden_w_), tape.parameter(*bias_)};
}

Var LstmCell::project_inputs(const LstmWeights& w, Var inputs) {
  return ad::add_bias(ad::matmul(inputs, w.input), w.bias);
}

LstmState LstmCell::step(const LstmWeights& w, Var projected_input, const LstmState& state) {
  const Eigen::Index h = state.h.cols();
  Var gates = ad::add(projected_input, ad::matmul(state.h, w.hidden));
  Var in = ad::sigmoid(ad::slice_cols(gates, 0, h));
  Var forget = ad::sigmoid(ad::slice_cols(gates, h, h));
  Var cell = ad::tanh(ad::slice_cols(gates, 2 * h, h));
  Var out = ad::sigmoid(ad::slice_cols(gates, 3 * h, h));
  Var c = ad::add(ad::hadamard(forget, state.c), ad::hadamard(in, cell));
  return {ad::hadamard(out, ad::tanh(c)), c};
}

}  // namespace empathia
