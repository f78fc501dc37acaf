#include "empathia/training.hpp"

#include "empathia/error.hpp"

#include <json.hpp>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>

namespace empathia {

namespace fs = std::filesystem;

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t stream) {
  // splitmix64 over a combined key
  std::uint64_t z = seed ^ (epoch * 0x9E3779B97F4A7C15ULL) ^ (stream * 0xD1B54A32D192ED03ULL);
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

PreparedData prepare_data(const TrainConfig& config, const Corpus& train, const Corpus* valid) {
  PreparedData d;
  d.labels = train.labels;
  d.train_text = build_examples(train.conversations, config.max_len);
  if (valid != nullptr) d.valid_text = build_examples(valid->conversations, config.max_len);
  d.vocab = GenerationVocab::build(d.train_text.examples, config.min_freq);
  if (!config.pretrained_dir.empty() && config.backbone == BackboneKind::kTransformer) {
    d.tokenizer = WordPieceTokenizer::load(fs::path(config.pretrained_dir) / "vocab.txt");
  } else {
    std::vector<std::string> texts;
    texts.reserve(d.train_text.examples.size());
    for (const auto& ex : d.train_text.examples) texts.push_back(ex.context_text);
    d.tokenizer = WordPieceTokenizer::build(texts, config.min_freq);
  }
  d.train = index_examples(d.train_text.examples, d.vocab, d.tokenizer, config.max_len);
  d.valid = index_examples(d.valid_text.examples, d.vocab, d.tokenizer, config.max_len);
  return d;
}

std::vector<TrainingExample> index_for(const Checkpoint& checkpoint, std::span<const DialogueExample> examples) {
  return index_examples(examples, checkpoint.vocab, checkpoint.tokenizer, checkpoint.config.max_len);
}

Losses joint_step(JointModel& model, AdamW& optimizer, const Batch& batch, const TrainConfig& config,
                  std::mt19937_64& dropout_rng, std::size_t batch_index) {
  auto& params = model.parameters();
  params.zero_grad();
  const ForwardMode mode{true, &dropout_rng};
  const Losses losses = model.compute(batch, mode, config.emotion_loss_weight, true);
  if (!std::isfinite(losses.total) || !std::isfinite(losses.emotion) || !std::isfinite(losses.generation)) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "non-finite loss at batch %zu: emotion=%g generation=%g", batch_index,
                  losses.emotion, losses.generation);
    throw NumericError(buf);
  }
  clip_grad_norm(params, config.grad_clip);
  optimizer.step(params);
  return losses;
}

namespace {

Losses mean_losses(JointModel& model, std::span<const TrainingExample> examples, const TrainConfig& config) {
  Losses sum;
  std::size_t n = 0;
  BatchStream stream(examples, config.batch_size, std::nullopt);
  while (auto batch = stream.next()) {
    const Losses l = model.evaluate_loss(*batch, config.emotion_loss_weight);
    const double w = batch->size();
    sum.total += w * l.total;
    sum.emotion += w * l.emotion;
    sum.generation += w * l.generation;
    n += static_cast<std::size_t>(batch->size());
  }
  if (n > 0) {
    sum.total /= static_cast<double>(n);
    sum.emotion /= static_cast<double>(n);
    sum.generation /= static_cast<double>(n);
  }
  return sum;
}

std::string history_line(const EpochRecord& r) {
  nlohmann::ordered_json j;
  j["epoch"] = r.epoch;
  if (r.train) {
    j["train_total"] = r.train->total;
    j["train_emotion"] = r.train->emotion;
    j["train_generation"] = r.train->generation;
  }
  if (r.valid) {
    j["valid_total"] = r.valid->total;
    j["valid_emotion"] = r.valid->emotion;
    j["valid_generation"] = r.valid->generation;
  }
  if (r.valid_report) {
    j["valid_avg_bleu"] = r.valid_report->bleu.avg_bleu;
    j["valid_macro_f1"] = r.valid_report->f1.macro_f1;
    j["valid_accuracy"] = r.valid_report->accuracy;
  }
  if (r.has_selection_loss) j["selection_loss"] = r.selection_loss;
  return j.dump();
}

void save_with_retry(const Checkpoint& checkpoint, const fs::path& dir, std::ostream* log) {
  try {
    checkpoint.save(dir);
    return;
  } catch (const std::exception& e) {
    if (log) *log << "checkpoint write to " << dir.string() << " failed (" << e.what() << "), retrying\n";
  }
  try {
    checkpoint.save(dir);
  } catch (const std::exception& e) {
    throw IoError("checkpoint write to " + dir.string() + " failed twice: " + e.what());
  }
}

std::string epoch_dir_name(int epoch) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "epoch-%03d", epoch);
  return buf;
}

void log_epoch(std::ostream* log, const EpochRecord& r, double seconds) {
  if (!log) return;
  char buf[256];
  int n = std::snprintf(buf, sizeof(buf), "epoch %d", r.epoch);
  if (r.train) {
    n += std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), "  train %.4f (emo %.4f gen %.4f)",
                       r.train->total, r.train->emotion, r.train->generation);
  }
  if (r.valid) {
    n += std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), "  valid %.4f", r.valid->total);
  }
  if (r.valid_report) {
    n += std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), "  bleu %.2f f1 %.2f",
                       100.0 * r.valid_report->bleu.avg_bleu, 100.0 * r.valid_report->f1.macro_f1);
  }
  std::snprintf(buf + n, sizeof(buf) - static_cast<std::size_t>(n), "  %.1fs", seconds);
  *log << buf << '\n';
}

}  // namespace

TrainResult train(const TrainConfig& config_in, const Corpus& train_corpus, const Corpus* valid_corpus,
                  const fs::path& out_dir, const TrainOptions& options) {
  config_in.validate();
  TrainResult result;
  Checkpoint ck;
  PreparedData data;
  int start_epoch = 1;

  if (!options.resume_from.empty()) {
    ck = Checkpoint::load(options.resume_from);
    ck.config.epochs = config_in.epochs;
    data.vocab = ck.vocab;
    data.tokenizer = ck.tokenizer;
    data.labels = ck.labels;
    data.train_text = build_examples(train_corpus.conversations, ck.config.max_len);
    if (valid_corpus) data.valid_text = build_examples(valid_corpus->conversations, ck.config.max_len);
    data.train = index_for(ck, data.train_text.examples);
    data.valid = index_for(ck, data.valid_text.examples);
    start_epoch = ck.epoch + 1;
  } else {
    data = prepare_data(config_in, train_corpus, valid_corpus);
    ck.config = config_in;
    ck.vocab = data.vocab;
    ck.tokenizer = data.tokenizer;
    ck.labels = data.labels;
    ck.model = build_model(config_in, data.vocab, data.tokenizer);
    ck.optimizer = make_optimizer(config_in);
  }
  const TrainConfig& config = ck.config;
  result.skipped_conversations = data.train_text.skipped;
  if (data.train.empty()) throw EmptyCorpusError("training split yields no examples");

  auto evaluate_epoch = [&](EpochRecord& rec) {
    if (!data.valid.empty()) {
      rec.valid = mean_losses(*ck.model, data.valid, config);
      if (options.validation_metrics) {
        rec.valid_report = evaluate_with(data.valid_text.examples, data.valid,
                                         model_predictor(*ck.model, ck.vocab, config.max_len), ck.labels);
      }
      rec.selection_loss = rec.valid->total;
      rec.has_selection_loss = true;
    } else if (rec.train) {
      rec.selection_loss = rec.train->total;
      rec.has_selection_loss = true;
    }
  };

  int best_epoch = -1;
  double best_loss = std::numeric_limits<double>::infinity();
  for (const auto& line : ck.history) {
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("selection_loss")) continue;
    const double loss = j["selection_loss"].get<double>();
    if (loss < best_loss) {
      best_loss = loss;
      best_epoch = j["epoch"].get<int>();
    }
  }

  if (start_epoch == 1) {
    EpochRecord rec;
    rec.epoch = 0;
    const auto t0 = std::chrono::steady_clock::now();
    evaluate_epoch(rec);
    ck.epoch = 0;
    ck.history.push_back(history_line(rec));
    save_with_retry(ck, out_dir / epoch_dir_name(0), options.log);
    if (rec.has_selection_loss && rec.selection_loss < best_loss) {
      best_loss = rec.selection_loss;
      best_epoch = 0;
      save_with_retry(ck, out_dir / "best", options.log);
    }
    log_epoch(options.log, rec,
              std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    result.epochs.push_back(std::move(rec));
  }

  std::size_t batch_index = 0;
  for (int epoch = start_epoch; epoch <= config.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto e = static_cast<std::uint64_t>(epoch);
    std::mt19937_64 dropout_rng(derive_seed(config.seed, e, 2));
    BatchStream stream(data.train, config.batch_size, derive_seed(config.seed, e, 1));
    Losses sum;
    std::size_t seen = 0;
    while (auto batch = stream.next()) {
      const Losses l = joint_step(*ck.model, ck.optimizer, *batch, config, dropout_rng, batch_index++);
      const double w = batch->size();
      sum.total += w * l.total;
      sum.emotion += w * l.emotion;
      sum.generation += w * l.generation;
      seen += static_cast<std::size_t>(batch->size());
      result.steps.push_back(l);
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train = Losses{sum.total / static_cast<double>(seen), sum.emotion / static_cast<double>(seen),
                       sum.generation / static_cast<double>(seen)};
    evaluate_epoch(rec);
    ck.epoch = epoch;
    ck.history.push_back(history_line(rec));
    save_with_retry(ck, out_dir / epoch_dir_name(epoch), options.log);
    if (rec.has_selection_loss && rec.selection_loss < best_loss) {
      best_loss = rec.selection_loss;
      best_epoch = epoch;
      save_with_retry(ck, out_dir / "best", options.log);
    }
    log_epoch(options.log, rec, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    result.epochs.push_back(std::move(rec));
  }

  if (best_epoch < 0) {
    best_epoch = ck.epoch;
    save_with_retry(ck, out_dir / "best", options.log);
  }
  save_with_retry(ck, out_dir / "final", options.log);
  result.final_dir = out_dir / "final";
  result.best_dir = out_dir / "best";
  result.best_epoch = best_epoch;
  result.final = std::move(ck);
  return result;
}

TrainResult train(const TrainConfig& config, const fs::path& corpus_path, const fs::path& out_dir,
                  const TrainOptions& options) {
  const Corpus train_corpus = load_corpus(corpus_path, Split::kTrain);
  const Corpus valid_corpus = load_corpus(corpus_path, Split::kValid, &train_corpus.labels);
  const Corpus* valid = valid_corpus.conversations.empty() ? nullptr : &valid_corpus;
  return train(config, train_corpus, valid, out_dir, options);
}

EvalReport evaluate_with(std::span<const DialogueExample> examples, std::span<const TrainingExample> indexed,
                         const Predictor& predict, const EmotionLabels& labels, F1Average average) {
  if (examples.empty()) throw InputError("nothing to evaluate: the split has no examples");
  if (examples.size() != indexed.size()) throw InputError("example and index lists differ in length");
  std::vector<TokenList> candidates;
  std::vector<TokenList> references;
  std::vector<int> predicted;
  std::vector<int> gold;
  candidates.reserve(examples.size());
  references.reserve(examples.size());
  for (std::size_t i = 0; i < examples.size(); ++i) {
    PredictedTurn turn = predict(examples[i], indexed[i]);
    candidates.push_back(std::move(turn.words));
    references.push_back(examples[i].target_words);
    predicted.push_back(turn.emotion);
    gold.push_back(examples[i].emotion);
  }
  return make_report(candidates, references, predicted, gold, labels.names(), average);
}

Predictor model_predictor(const JointModel& model, const GenerationVocab& vocab, int max_len) {
  return [&model, &vocab, max_len](const DialogueExample&, const TrainingExample& ex) {
    const Prediction p = model.predict(ex.classifier_tokens, ex.context_tokens, max_len - 2);
    return PredictedTurn{p.emotion.argmax(), vocab.decode(p.tokens)};
  };
}

EvalReport evaluate(const Checkpoint& checkpoint, const Corpus& corpus, F1Average average) {
  const ExampleSet set = build_examples(corpus.conversations, checkpoint.config.max_len);
  const auto indexed = index_for(checkpoint, set.examples);
  return evaluate_with(set.examples, indexed,
                       model_predictor(*checkpoint.model, checkpoint.vocab, checkpoint.config.max_len),
                       checkpoint.labels, average);
}

EvalReport evaluate(const Checkpoint& checkpoint, const fs::path& corpus_path, Split split, F1Average average) {
  const Corpus corpus = load_corpus(corpus_path, split, &checkpoint.labels);
  if (corpus.conversations.empty()) {
    throw InputError("split '" + std::string(split_name(split)) + "' of " + corpus_path.string() + " is empty");
  }
  return evaluate(checkpoint, corpus, average);
}

}  // namespace empathia
