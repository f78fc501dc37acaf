#include "empathia/config.hpp"

#include "empathia/corpus.hpp"
#include "empathia/error.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace empathia {

namespace {

std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T value{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError("invalid value '" + std::string(text) + "' for " + std::string(key));
  }
  return value;
}

std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest form that round-trips
  return std::string(buf, res.ptr);
}

template <typename T>
ConfigField int_field(std::string_view key, std::string_view help, T TrainConfig::*member) {
  return {key, help, [member](const TrainConfig& c) { return std::to_string(c.*member); },
          [key, member](TrainConfig& c, std::string_view v) { c.*member = parse_number<T>(key, v); }};
}

ConfigField double_field(std::string_view key, std::string_view help, double TrainConfig::*member) {
  return {key, help, [member](const TrainConfig& c) { return format_double(c.*member); },
          [key, member](TrainConfig& c, std::string_view v) { c.*member = parse_number<double>(key, v); }};
}

}  // namespace

TrainConfig TrainConfig::toy() {
  TrainConfig c;
  c.encoder_layers = 2;
  c.encoder_dim = 32;
  c.encoder_heads = 2;
  c.encoder_ffn = 64;
  c.embedding_dim = 32;
  c.batch_size = 2;
  c.learning_rate = 5e-3;
  c.warmup_steps = 100;
  c.dropout_encdec = 0.1;
  c.min_freq = 1;
  return c;
}

const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields = {
      int_field("batch_size", "examples per optimizer step", &TrainConfig::batch_size),
      int_field("epochs", "passes over the training split", &TrainConfig::epochs),
      double_field("learning_rate", "AdamW learning rate", &TrainConfig::learning_rate),
      int_field("warmup_steps", "optimizer steps of linear learning-rate warmup (0 disables)",
                &TrainConfig::warmup_steps),
      double_field("weight_decay", "AdamW decoupled weight decay", &TrainConfig::weight_decay),
      double_field("dropout_encdec", "dropout on utterance encoder/decoder outputs", &TrainConfig::dropout_encdec),
      double_field("dropout_emotion", "dropout on the emotion representation", &TrainConfig::dropout_emotion),
      int_field("max_len", "maximum sequence length in tokens", &TrainConfig::max_len),
      int_field("seed", "seed for initialisation, data order and dropout", &TrainConfig::seed),
      ConfigField{"backbone", "emotion encoder: transformer, bi-lstm or bi-lstm-attn",
                  [](const TrainConfig& c) { return std::string(backbone_name(c.backbone)); },
                  [](TrainConfig& c, std::string_view v) { c.backbone = parse_backbone(v); }},
      int_field("encoder_layers", "transformer layers", &TrainConfig::encoder_layers),
      int_field("encoder_dim", "model width d (emotion representation and generator hidden)",
                &TrainConfig::encoder_dim),
      int_field("encoder_heads", "transformer attention heads", &TrainConfig::encoder_heads),
      int_field("encoder_ffn", "transformer feed-forward width", &TrainConfig::encoder_ffn),
      int_field("embedding_dim", "word embedding size (generator and recurrent backbones)",
                &TrainConfig::embedding_dim),
      int_field("min_freq", "minimum corpus frequency for vocabulary entries", &TrainConfig::min_freq),
      double_field("emotion_loss_weight", "weight on the emotion loss in the joint objective",
                   &TrainConfig::emotion_loss_weight),
      double_field("grad_clip", "global gradient-norm clip (0 disables)", &TrainConfig::grad_clip),
      ConfigField{"pretrained_dir", "directory with encoder.bin and vocab.txt for the transformer",
                  [](const TrainConfig& c) { return c.pretrained_dir; },
                  [](TrainConfig& c, std::string_view v) { c.pretrained_dir = std::string(v); }},
  };
  return fields;
}

void TrainConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) { throw ConfigError(key + ": " + why); };
  if (batch_size < 1) fail("batch_size", "must be >= 1");
  if (epochs < 0) fail("epochs", "must be >= 0");
  if (!(learning_rate > 0.0 && learning_rate < 1.0)) fail("learning_rate", "must be in (0, 1)");
  if (!(weight_decay >= 0.0 && weight_decay < 1.0)) fail("weight_decay", "must be in [0, 1)");
  if (!(dropout_encdec >= 0.0 && dropout_encdec < 1.0)) fail("dropout_encdec", "must be in [0, 1)");
  if (!(dropout_emotion >= 0.0 && dropout_emotion < 1.0)) fail("dropout_emotion", "must be in [0, 1)");
  if (max_len < 2 || max_len > 512) fail("max_len", "must be in [2, 512]");
  if (encoder_layers < 1) fail("encoder_layers", "must be >= 1");
  if (encoder_dim < 2 || encoder_dim % 2 != 0) fail("encoder_dim", "must be even and >= 2");
  if (encoder_heads < 1 || encoder_dim % encoder_heads != 0) fail("encoder_heads", "must divide encoder_dim");
  if (encoder_ffn < 1) fail("encoder_ffn", "must be >= 1");
  if (embedding_dim < 1) fail("embedding_dim", "must be >= 1");
  if (min_freq < 1) fail("min_freq", "must be >= 1");
  if (warmup_steps < 0) fail("warmup_steps", "must be >= 0");
  if (!(emotion_loss_weight >= 0.0)) fail("emotion_loss_weight", "must be >= 0");
  if (!(grad_clip >= 0.0)) fail("grad_clip", "must be >= 0");
}

TrainConfig parse_config(std::string_view text, TrainConfig base) {
  std::size_t line_no = 0;
  while (!text.empty()) {
    const auto nl = text.find('\n');
    std::string_view line = text.substr(0, nl);
    text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
    ++line_no;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) {
      throw ConfigError("config line " + std::to_string(line_no) + ": expected key=value");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    bool found = false;
    for (const auto& f : config_fields()) {
      if (f.key == key) {
        f.set(base, value);
        found = true;
        break;
      }
    }
    if (!found) throw ConfigError("unknown config key '" + std::string(key) + "'");
  }
  base.validate();
  return base;
}

TrainConfig load_config(const std::filesystem::path& file, TrainConfig base) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), std::move(base));
}

std::string serialize_config(const TrainConfig& config) {
  std::string out;
  for (const auto& f : config_fields()) {
    out += f.key;
    out += '=';
    out += f.get(config);
    out += '\n';
  }
  return out;
}

void save_config(const TrainConfig& config, const std::filesystem::path& file) {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  out << serialize_config(config);
  if (!out) throw IoError("write failed for " + file.string());
}

ModelConfig make_model_config(const TrainConfig& config, int generation_vocab_size, int classifier_vocab_size,
                              int cls_id) {
  ModelConfig m;
  m.encoder.kind = config.backbone;
  m.encoder.vocab_size = classifier_vocab_size;
  m.encoder.cls_id = cls_id;
  m.encoder.layers = config.encoder_layers;
  m.encoder.dim = config.encoder_dim;
  m.encoder.heads = config.encoder_heads;
  m.encoder.ffn = config.encoder_ffn;
  m.encoder.max_positions = config.max_len;
  m.encoder.embedding_dim = config.embedding_dim;
  m.encoder.num_classes = EmotionLabels::kCount;
  m.generator.vocab_size = generation_vocab_size;
  m.generator.embedding_dim = config.embedding_dim;
  m.generator.hidden = config.encoder_dim;
  m.generator.max_len = config.max_len;
  m.dropout_encdec = config.dropout_encdec;
  m.dropout_emotion = config.dropout_emotion;
  return m;
}

}  // namespace empathia
