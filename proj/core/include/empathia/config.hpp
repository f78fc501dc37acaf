#pragma once

#include "empathia/emotion_encoder.hpp"
#include "empathia/model.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace empathia {

struct TrainConfig {
  int batch_size = 32;
  int epochs = 10;
  double learning_rate = 1e-4;
  int warmup_steps = 0;
  double weight_decay = 0.01;
  double dropout_encdec = 0.3;
  double dropout_emotion = 0.1;
  int max_len = 80;
  std::uint64_t seed = 13;
  BackboneKind backbone = BackboneKind::kTransformer;
  int encoder_layers = 12;
  int encoder_dim = 768;
  int encoder_heads = 12;
  int encoder_ffn = 3072;
  int embedding_dim = 300;
  int min_freq = 2;
  double emotion_loss_weight = 1.0;
  double grad_clip = 1.0;
  std::string pretrained_dir;

  // 2-layer, 32-dim encoder with small batches, a larger warmed-up learning
  // rate and lighter dropout so tens of epochs fit a few hundred examples.
  static TrainConfig toy();

  // Throws ConfigError naming the offending key.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

struct ConfigField {
  std::string_view key;
  std::string_view help;
  std::function<std::string(const TrainConfig&)> get;
  std::function<void(TrainConfig&, std::string_view)> set;
};

// Every TrainConfig field, in declaration order.
const std::vector<ConfigField>& config_fields();

// key=value lines; blank lines and lines starting with '#' are skipped.
// Unknown keys and malformed values are ConfigErrors.
TrainConfig parse_config(std::string_view text, TrainConfig base = {});
TrainConfig load_config(const std::filesystem::path& file, TrainConfig base = {});
std::string serialize_config(const TrainConfig& config);
void save_config(const TrainConfig& config, const std::filesystem::path& file);

ModelConfig make_model_config(const TrainConfig& config, int generation_vocab_size, int classifier_vocab_size,
                              int cls_id);

}  // namespace empathia
