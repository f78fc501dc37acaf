#include "empathia/checkpoint.hpp"

#include "empathia/error.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>

namespace empathia {

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kEncoderPrefix = "emotion.encoder.";

std::string read_text(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::trunc);
  if (!out) throw IoError("cannot write " + file.string());
  out << text;
  out.flush();
  if (!out) throw IoError("write failed for " + file.string());
}

}  // namespace

fs::path resolve_checkpoint_dir(const fs::path& path) {
  if (fs::exists(path / "state.json")) return path;
  if (fs::exists(path / "final" / "state.json")) return path / "final";
  throw IoError("no checkpoint found at " + path.string());
}

AdamW make_optimizer(const TrainConfig& config) {
  AdamW::Options o;
  o.learning_rate = config.learning_rate;
  o.weight_decay = config.weight_decay;
  o.warmup_steps = config.warmup_steps;
  return AdamW(o);
}

std::unique_ptr<JointModel> build_model(const TrainConfig& config, const GenerationVocab& vocab,
                                        const WordPieceTokenizer& tokenizer) {
  auto model = std::make_unique<JointModel>(
      make_model_config(config, vocab.size(), tokenizer.size(), tokenizer.cls_id()), config.seed);
  if (config.backbone == BackboneKind::kTransformer && !config.pretrained_dir.empty()) {
    load_pretrained_encoder(*model, config.pretrained_dir);
  }
  return model;
}

void load_pretrained_encoder(JointModel& model, const fs::path& pretrained_dir) {
  const auto file = pretrained_dir / "encoder.bin";
  auto tensors = load_tensors(file);
  TensorMap prefixed;
  for (auto& [name, value] : tensors) {
    std::string key = name.starts_with(kEncoderPrefix) ? name : std::string(kEncoderPrefix) + name;
    prefixed.emplace(std::move(key), std::move(value));
  }
  for (auto& [name, p] : model.parameters().items()) {
    if (!name.starts_with(kEncoderPrefix)) continue;
    auto it = prefixed.find(name);
    if (it == prefixed.end()) throw FormatError("pretrained encoder " + file.string() + " lacks '" + name + "'");
    if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols()) {
      throw FormatError("pretrained tensor '" + name + "' is " + std::to_string(it->second.rows()) + "x" +
                        std::to_string(it->second.cols()) + ", model expects " + std::to_string(p.value.rows()) +
                        "x" + std::to_string(p.value.cols()));
    }
    p.value = it->second;
  }
}

void Checkpoint::save(const fs::path& dir) const {
  if (!model) throw Error("checkpoint without a model");
  fs::create_directories(dir);
  save_parameters(model->parameters(), dir / "params.bin");
  optimizer.save(dir / "optimizer.bin");
  vocab.save(dir / "vocab.txt");
  tokenizer.save(dir / "classifier_vocab.txt");
  labels.save(dir / "labels.txt");
  save_config(config, dir / "config.cfg");
  std::string lines;
  for (const auto& h : history) lines += h + "\n";
  write_text(dir / "metrics.jsonl", lines);
  nlohmann::ordered_json state;
  state["epoch"] = epoch;
  state["optimizer_step"] = optimizer.step_count();
  write_text(dir / "state.json", state.dump() + "\n");
}

Checkpoint Checkpoint::load(const fs::path& path) {
  const fs::path dir = resolve_checkpoint_dir(path);
  Checkpoint c;
  c.config = load_config(dir / "config.cfg");
  c.vocab = GenerationVocab::load(dir / "vocab.txt");
  c.tokenizer = WordPieceTokenizer::load(dir / "classifier_vocab.txt");
  c.labels = EmotionLabels::load(dir / "labels.txt");

  nlohmann::json state;
  try {
    state = nlohmann::json::parse(read_text(dir / "state.json"));
    c.epoch = state.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("bad state.json in " + dir.string() + ": " + e.what());
  }

  // Parameters come from params.bin, so skip the pretrained load.
  TrainConfig shape = c.config;
  shape.pretrained_dir.clear();
  c.model = build_model(shape, c.vocab, c.tokenizer);
  load_parameters(c.model->parameters(), dir / "params.bin");

  c.optimizer = make_optimizer(c.config);
  c.optimizer.load(dir / "optimizer.bin", state.value("optimizer_step", std::uint64_t{0}));

  std::istringstream lines(read_text(dir / "metrics.jsonl"));
  std::string line;
  while (std::getline(lines, line)) {
    if (!line.empty()) c.history.push_back(line);
  }
  return c;
}

}  // namespace empathia
