#pragma once

// Minimal reverse-mode automatic differentiation over dense Eigen matrices.
//
// A Tape records every operation of one forward pass. Values are row-major
// in meaning: a vector is a 1 x n matrix and a sequence of states is a
// T x n matrix with one row per step. Calling backward() on a 1 x 1 result
// propagates gradients to every node and accumulates them into the
// Parameters that were read through Tape::parameter().
//
// A tape constructed with record_gradients = false only computes values,
// which is what inference uses; it never writes to any Parameter and is
// therefore safe to run concurrently over shared parameters.

#include <Eigen/Dense>

#include <atomic>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <map>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace empathia::ad {

using Matrix = Eigen::MatrixXd;

struct Parameter {
  Matrix value;
  Matrix grad;

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

// Named parameters, ordered by name. Element addresses are stable for the
// lifetime of the set, so modules keep raw pointers into it.
class ParameterSet {
 public:
  ParameterSet() = default;
  ParameterSet(const ParameterSet&) = delete;
  ParameterSet& operator=(const ParameterSet&) = delete;

  Parameter& add(const std::string& name, Matrix init);
  Parameter& at(const std::string& name);
  const Parameter& at(const std::string& name) const;
  bool contains(const std::string& name) const;

  std::map<std::string, Parameter>& items() { return params_; }
  const std::map<std::string, Parameter>& items() const { return params_; }

  void zero_grad();
  double grad_norm() const;
  void scale_grad(double factor);
  std::size_t scalar_count() const;

 private:
  std::map<std::string, Parameter> params_;
};

class Tape;

// Handle to a node on a tape. Cheap to copy.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, int id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  double scalar() const { return value()(0, 0); }
  bool requires_grad() const;

  Tape* tape() const { return tape_; }
  int id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  int id_ = -1;
};

class Tape {
 public:
  explicit Tape(bool record_gradients = true) : record_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Matrix value);
  Var parameter(Parameter& param);

  // Seeds d(root)/d(root) = 1 and runs the recorded backward closures in
  // reverse order. The root must be 1 x 1.
  void backward(Var root);

  const Matrix& value(int id) const {
    const Node& n = nodes_[id];
    return n.external != nullptr ? *n.external : n.value;
  }
  bool requires_grad(int id) const { return nodes_[id].requires_grad; }
  // Gradient accumulator for a node, allocated (zero) on first use.
  Matrix& grad(int id);

  // Used by operations: pushes a result node. requires_grad is the OR of the
  // inputs' flags and is forced false on non-recording tapes.
  Var push(Matrix value, std::span<const Var> inputs);
  Var push(Matrix value, std::initializer_list<Var> inputs) {
    return push(std::move(value), std::span<const Var>(inputs.begin(), inputs.size()));
  }
  void on_backward(Var out, std::function<void(Tape&)> fn);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    // Parameter nodes read the parameter's storage directly.
    const Matrix* external = nullptr;
    Matrix grad;
    bool requires_grad = false;
    bool has_grad = false;
    Parameter* param = nullptr;
    std::function<void(Tape&)> backward;
  };

  bool record_;
  std::vector<Node> nodes_;
};

// ---- operations ------------------------------------------------------------

Var matmul(Var a, Var b);
// a * b^T
Var matmul_nt(Var a, Var b);
Var transpose(Var a);
Var add(Var a, Var b);
// a [n x m] + bias [1 x m] broadcast over rows.
Var add_bias(Var a, Var bias);
Var sub(Var a, Var b);
Var hadamard(Var a, Var b);
Var scale(Var a, double factor);
// 1 - a
Var one_minus(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
// tanh approximation of GELU.
Var gelu(Var a);
// Row-wise softmax with max subtraction.
Var softmax_rows(Var a);
Var concat_cols(std::span<const Var> parts);
Var concat_cols(std::initializer_list<Var> parts);
Var concat_rows(std::span<const Var> parts);
Var slice_rows(Var a, Eigen::Index start, Eigen::Index count);
Var slice_cols(Var a, Eigen::Index start, Eigen::Index count);
// Rows of an embedding table selected by id.
Var gather_rows(Var table, std::span<const int> ids);
// Per-row layer normalisation followed by gain [1 x m] and bias [1 x m].
Var layer_norm(Var a, Var gain, Var bias, double eps = 1e-12);
Var sum(Var a);
// Multiplies by a fixed mask; used for inverted dropout.
Var mask_multiply(Var a, const Matrix& mask);

// Counts how often a probability was clamped to the log floor.
struct LogFloorCounter {
  std::atomic<std::uint64_t> hits{0};
};

// -log(max(p[0, index], floor)) as a 1 x 1 node. Below the floor the value is
// clamped, the counter is incremented, and no gradient flows.
Var neg_log_prob(Var probs, Eigen::Index index, double floor, LogFloorCounter* counter);

// Inverted dropout: zeroes entries with probability `rate` and rescales the
// survivors. Identity when rate == 0 or rng == nullptr.
Var dropout(Var a, double rate, std::mt19937_64* rng);

}  // namespace empathia::ad
