#pragma once

#include "empathia/autodiff.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

namespace empathia {

// Adam with decoupled weight decay. Moments are keyed by parameter name so
// the state can be saved and restored next to the parameters.
class AdamW {
 public:
  struct Options {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    double weight_decay = 0.01;
    // Linear ramp of the learning rate over the first steps; 0 disables it.
    int warmup_steps = 0;
  };

  AdamW() = default;
  explicit AdamW(Options options) : options_(options) {}

  void step(ad::ParameterSet& params);

  std::uint64_t step_count() const { return steps_; }
  // Learning rate applied by the next step.
  double current_learning_rate() const;
  const Options& options() const { return options_; }

  // optimizer.bin holds "m/<name>" and "v/<name>" tensors; the step count is
  // stored by the caller.
  void save(const std::filesystem::path& file) const;
  void load(const std::filesystem::path& file, std::uint64_t step_count);

 private:
  Options options_;
  std::uint64_t steps_ = 0;
  std::map<std::string, ad::Matrix> first_;
  std::map<std::string, ad::Matrix> second_;
};

// Clips the global gradient norm to max_norm; returns the norm before
// clipping. max_norm <= 0 disables clipping.
double clip_grad_norm(ad::ParameterSet& params, double max_norm);

// Named-tensor binary file: "EMPT" magic, version, count, then per tensor
// name length, name, rows, cols and little-endian doubles in column-major
// order.
using TensorMap = std::map<std::string, ad::Matrix>;
void save_tensors(const TensorMap& tensors, const std::filesystem::path& file);
TensorMap load_tensors(const std::filesystem::path& file);

void save_parameters(const ad::ParameterSet& params, const std::filesystem::path& file);
// Requires every parameter to be present with a matching shape.
void load_parameters(ad::ParameterSet& params, const std::filesystem::path& file);

}  // namespace empathia
