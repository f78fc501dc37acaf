#include "empathia/corpus.hpp"

#include "empathia/error.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <numeric>
#include <random>
#include <unordered_map>

namespace empathia {

Split parse_split(std::string_view name) {
  if (name == "train") return Split::kTrain;
  if (name == "valid" || name == "validation" || name == "dev") return Split::kValid;
  if (name == "test") return Split::kTest;
  throw InputError("unknown split: " + std::string(name));
}

std::string_view split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kValid: return "valid";
    case Split::kTest: return "test";
  }
  return "train";
}

// ---- labels ----------------------------------------------------------------

const std::array<std::string_view, EmotionLabels::kCount>& EmotionLabels::canonical_names() {
  static constexpr std::array<std::string_view, kCount> names{
      "afraid",       "angry",     "annoyed",   "anticipating", "anxious",   "apprehensive",
      "ashamed",      "caring",    "confident", "content",      "devastated", "disappointed",
      "disgusted",    "embarrassed", "excited", "faithful",     "furious",   "grateful",
      "guilty",       "hopeful",   "impressed", "jealous",      "joyful",    "lonely",
      "nostalgic",    "prepared",  "proud",     "sad",          "sentimental", "surprised",
      "terrified",    "trusting"};
  return names;
}

EmotionLabels EmotionLabels::canonical() {
  std::vector<std::string> names;
  for (auto n : canonical_names()) names.emplace_back(n);
  return from_names(std::move(names));
}

EmotionLabels EmotionLabels::from_names(std::vector<std::string> names) {
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw LabelError("duplicate emotion label");
  }
  if (names.size() != static_cast<std::size_t>(kCount)) {
    throw LabelError("expected " + std::to_string(kCount) + " emotion labels, found " +
                     std::to_string(names.size()));
  }
  EmotionLabels labels;
  labels.names_ = std::move(names);
  return labels;
}

EmotionLabels EmotionLabels::derive(const std::set<std::string>& observed) {
  const auto& canon = canonical_names();
  const bool subset = std::all_of(observed.begin(), observed.end(), [&](const std::string& n) {
    return std::find(canon.begin(), canon.end(), n) != canon.end();
  });
  if (subset) return canonical();
  return from_names(std::vector<std::string>(observed.begin(), observed.end()));
}

EmotionLabels EmotionLabels::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open label file " + file.string());
  std::vector<std::string> names;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) names.push_back(line);
  }
  auto labels = from_names(names);
  if (labels.names_ != names) throw LabelError("label file " + file.string() + " is not sorted");
  return labels;
}

void EmotionLabels::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  for (const auto& n : names_) out << n << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

std::optional<int> EmotionLabels::find(std::string_view name) const {
  auto it = std::lower_bound(names_.begin(), names_.end(), name);
  if (it == names_.end() || *it != name) return std::nullopt;
  return static_cast<int>(it - names_.begin());
}

int EmotionLabels::id(std::string_view name) const {
  if (auto id = find(name)) return *id;
  throw LabelError("unknown emotion label: " + std::string(name));
}

// ---- CSV -------------------------------------------------------------------

std::string unescape_commas(std::string_view text) {
  static constexpr std::string_view kEscape = "_comma_";
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text.compare(i, kEscape.size(), kEscape) == 0) {
      out.push_back(',');
      i += kEscape.size();
    } else {
      out.push_back(text[i++]);
    }
  }
  return out;
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      fields.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  fields.push_back(std::move(cur));
  return fields;
}

struct Row {
  std::string conv_id;
  int utterance_idx = 0;
  std::string context;
  std::string prompt;
  std::string utterance;
  std::string split;
};

struct CsvFile {
  std::vector<Row> rows;
  bool has_split_column = false;
};

CsvFile read_csv(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open corpus file " + file.string());
  std::string line;
  if (!std::getline(in, line)) throw EmptyCorpusError("empty corpus file: " + file.string());
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line.starts_with("\xEF\xBB\xBF")) line.erase(0, 3);
  const auto header = split_csv_line(line);
  std::unordered_map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < header.size(); ++i) col.emplace(header[i], i);
  auto require = [&](const char* name) {
    auto it = col.find(name);
    if (it == col.end()) {
      throw FormatError("corpus file " + file.string() + " is missing column '" + name + "'");
    }
    return it->second;
  };
  const std::size_t c_conv = require("conv_id");
  const std::size_t c_idx = require("utterance_idx");
  const std::size_t c_ctx = require("context");
  const std::size_t c_prompt = require("prompt");
  const std::size_t c_utt = require("utterance");
  const auto split_it = col.find("split");

  CsvFile out;
  out.has_split_column = split_it != col.end();
  std::size_t needed = std::max({c_conv, c_idx, c_ctx, c_prompt, c_utt});
  if (out.has_split_column) needed = std::max(needed, split_it->second);

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto fields = split_csv_line(line);
    if (fields.size() <= needed) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": expected at least " +
                        std::to_string(needed + 1) + " fields, found " + std::to_string(fields.size()));
    }
    Row row;
    row.conv_id = fields[c_conv];
    const auto& idx = fields[c_idx];
    auto [ptr, ec] = std::from_chars(idx.data(), idx.data() + idx.size(), row.utterance_idx);
    if (ec != std::errc() || ptr != idx.data() + idx.size()) {
      throw FormatError(file.string() + ":" + std::to_string(line_no) + ": bad utterance_idx '" + idx + "'");
    }
    row.context = fields[c_ctx];
    row.prompt = unescape_commas(fields[c_prompt]);
    row.utterance = unescape_commas(fields[c_utt]);
    if (out.has_split_column) row.split = fields[split_it->second];
    out.rows.push_back(std::move(row));
  }
  if (out.rows.empty()) throw EmptyCorpusError("corpus file has no rows: " + file.string());
  return out;
}

std::optional<Split> split_from_stem(const std::filesystem::path& file) {
  const std::string stem = file.stem().string();
  if (stem == "train" || stem == "valid" || stem == "validation" || stem == "dev" || stem == "test") {
    return parse_split(stem);
  }
  return std::nullopt;
}

// A directory missing <split>.csv, or a single untagged file belonging to a
// different split, yields no rows.
std::vector<Row> rows_for_split(const std::filesystem::path& path, Split split) {
  if (std::filesystem::is_directory(path)) {
    const auto file = path / (std::string(split_name(split)) + ".csv");
    if (!std::filesystem::exists(file)) return {};
    return read_csv(file).rows;
  }
  auto csv = read_csv(path);
  if (!csv.has_split_column) {
    if (split_from_stem(path).value_or(Split::kTrain) != split) return {};
    return std::move(csv.rows);
  }
  std::vector<Row> rows;
  for (auto& r : csv.rows) {
    if (parse_split(r.split) == split) rows.push_back(std::move(r));
  }
  return rows;
}

std::set<std::string> emotions_of(const std::vector<Row>& rows) {
  std::set<std::string> names;
  for (const auto& r : rows) names.insert(r.context);
  return names;
}

}  // namespace

Corpus load_corpus(const std::filesystem::path& path, Split split, const EmotionLabels* known) {
  std::vector<Row> rows = rows_for_split(path, split);

  Corpus corpus;
  if (known != nullptr) {
    corpus.labels = *known;
  } else if (split == Split::kTrain) {
    corpus.labels = EmotionLabels::derive(emotions_of(rows));
  } else {
    corpus.labels = EmotionLabels::derive(emotions_of(rows_for_split(path, Split::kTrain)));
  }

  std::map<std::string, std::size_t> slot;
  std::vector<std::vector<const Row*>> grouped;
  for (const auto& r : rows) {
    auto [it, inserted] = slot.try_emplace(r.conv_id, grouped.size());
    if (inserted) grouped.emplace_back();
    grouped[it->second].push_back(&r);
  }
  for (auto& group : grouped) {
    std::stable_sort(group.begin(), group.end(),
                     [](const Row* a, const Row* b) { return a->utterance_idx < b->utterance_idx; });
    Conversation conv;
    conv.conv_id = group.front()->conv_id;
    conv.prompt = group.front()->prompt;
    const auto emo = corpus.labels.find(group.front()->context);
    if (!emo) {
      throw LabelError("unknown emotion label '" + group.front()->context + "' in " +
                       std::string(split_name(split)) + " split (conversation " + conv.conv_id + ")");
    }
    conv.emotion = *emo;
    for (std::size_t i = 0; i < group.size(); ++i) {
      if (group[i]->context != group.front()->context) {
        throw FormatError("conversation " + conv.conv_id + " changes emotion from '" +
                          group.front()->context + "' to '" + group[i]->context + "'");
      }
      conv.utterances.push_back(
          {i % 2 == 0 ? SpeakerRole::kSpeaker : SpeakerRole::kListener, group[i]->utterance});
    }
    corpus.conversations.push_back(std::move(conv));
  }
  return corpus;
}

// ---- examples --------------------------------------------------------------

DialogueContext build_context(std::span<const Utterance> history, int max_len) {
  DialogueContext ctx;
  std::vector<std::string> words;
  for (std::size_t i = 0; i < history.size(); ++i) {
    if (i > 0) ctx.text.push_back(' ');
    ctx.text += history[i].text;
    auto w = tokenize_words(history[i].text);
    words.insert(words.end(), std::make_move_iterator(w.begin()), std::make_move_iterator(w.end()));
  }
  const std::size_t keep = std::min(words.size(), static_cast<std::size_t>(max_len));
  ctx.words.assign(std::make_move_iterator(words.end() - static_cast<std::ptrdiff_t>(keep)),
                   std::make_move_iterator(words.end()));
  return ctx;
}

ExampleSet build_examples(std::span<const Conversation> conversations, int max_len) {
  ExampleSet set;
  for (const auto& conv : conversations) {
    std::size_t produced = 0;
    for (std::size_t i = 1; i < conv.utterances.size(); ++i) {
      if (conv.utterances[i].role != SpeakerRole::kListener) continue;
      auto ctx = build_context(std::span(conv.utterances).first(i), max_len);
      DialogueExample ex;
      ex.conv_id = conv.conv_id;
      ex.context_text = std::move(ctx.text);
      ex.context_words = std::move(ctx.words);
      ex.target_words = tokenize_words(conv.utterances[i].text);
      ex.previous_turn = conv.utterances[i - 1].text;
      ex.emotion = conv.emotion;
      set.examples.push_back(std::move(ex));
      ++produced;
    }
    if (produced == 0) {
      ++set.skipped;
      set.skipped_conversations.push_back(conv.conv_id);
    }
  }
  return set;
}

// ---- generation vocabulary ------------------------------------------------

namespace {
const std::array<std::string, GenerationVocab::kReserved> kReservedTokens{"<pad>", "<unk>", "<s>", "</s>"};
}

GenerationVocab::GenerationVocab() : GenerationVocab(std::vector<std::string>{}) {}

GenerationVocab::GenerationVocab(std::vector<std::string> corpus_tokens) {
  tokens_.assign(kReservedTokens.begin(), kReservedTokens.end());
  for (auto& t : corpus_tokens) tokens_.push_back(std::move(t));
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary token: " + tokens_[i]);
    }
  }
}

GenerationVocab GenerationVocab::build(std::span<const DialogueExample> train_examples, int min_freq) {
  if (min_freq < 1) throw ConfigError("min_freq must be >= 1, got " + std::to_string(min_freq));
  std::unordered_map<std::string, long> freq;
  for (const auto& ex : train_examples) {
    for (const auto& w : tokenize_words(ex.previous_turn)) ++freq[w];
    for (const auto& w : ex.target_words) ++freq[w];
  }
  std::vector<std::pair<std::string, long>> kept;
  for (auto& [w, n] : freq) {
    if (n >= min_freq && std::find(kReservedTokens.begin(), kReservedTokens.end(), w) == kReservedTokens.end()) {
      kept.emplace_back(w, n);
    }
  }
  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    return a.second != b.second ? a.second > b.second : a.first < b.first;
  });
  std::vector<std::string> tokens;
  tokens.reserve(kept.size());
  for (auto& [w, _] : kept) tokens.push_back(w);
  return GenerationVocab(std::move(tokens));
}

GenerationVocab GenerationVocab::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw IoError("cannot open vocabulary file " + file.string());
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  return GenerationVocab(std::move(tokens));
}

void GenerationVocab::save(const std::filesystem::path& file) const {
  std::ofstream out(file);
  if (!out) throw IoError("cannot write " + file.string());
  for (std::size_t i = kReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw IoError("write failed for " + file.string());
}

int GenerationVocab::id(std::string_view token) const {
  auto it = index_.find(std::string(token));
  return it == index_.end() ? kUnk : it->second;
}

std::vector<int> GenerationVocab::encode(std::span<const std::string> words) const {
  std::vector<int> ids;
  ids.reserve(words.size());
  for (const auto& w : words) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> GenerationVocab::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kPad || id == kBos || id == kEos) continue;
    out.push_back(token(id));
  }
  return out;
}

// ---- indexing --------------------------------------------------------------

std::vector<int> classifier_input(const WordPieceTokenizer& tokenizer, std::string_view context_text,
                                  int max_len) {
  auto pieces = tokenizer.encode(context_text);
  const std::size_t keep = std::min(pieces.size(), static_cast<std::size_t>(std::max(max_len - 1, 0)));
  std::vector<int> ids;
  ids.reserve(keep + 1);
  ids.push_back(tokenizer.cls_id());
  ids.insert(ids.end(), pieces.end() - static_cast<std::ptrdiff_t>(keep), pieces.end());
  return ids;
}

TrainingExample index_example(const DialogueExample& example, const GenerationVocab& vocab,
                              const WordPieceTokenizer& tokenizer, int max_len) {
  TrainingExample out;
  std::span<const std::string> ctx(example.context_words);
  if (ctx.size() > static_cast<std::size_t>(max_len)) ctx = ctx.last(static_cast<std::size_t>(max_len));
  out.context_tokens = vocab.encode(ctx);
  out.classifier_tokens = classifier_input(tokenizer, example.context_text, max_len);
  std::span<const std::string> tgt(example.target_words);
  const std::size_t body = static_cast<std::size_t>(std::max(max_len - 2, 0));
  if (tgt.size() > body) tgt = tgt.first(body);
  out.target_tokens.push_back(GenerationVocab::kBos);
  for (int id : vocab.encode(tgt)) out.target_tokens.push_back(id);
  out.target_tokens.push_back(GenerationVocab::kEos);
  out.emotion = example.emotion;
  return out;
}

std::vector<TrainingExample> index_examples(std::span<const DialogueExample> examples,
                                            const GenerationVocab& vocab,
                                            const WordPieceTokenizer& tokenizer, int max_len) {
  std::vector<TrainingExample> out;
  out.reserve(examples.size());
  for (const auto& ex : examples) out.push_back(index_example(ex, vocab, tokenizer, max_len));
  return out;
}

// ---- batches ---------------------------------------------------------------

std::vector<int> Batch::context_row(int b) const {
  std::vector<int> ids(static_cast<std::size_t>(context_lengths[static_cast<std::size_t>(b)]));
  for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = context(b, static_cast<Eigen::Index>(j));
  return ids;
}

std::vector<int> Batch::classifier_row(int b) const {
  std::vector<int> ids;
  for (Eigen::Index j = 0; j < classifier.cols(); ++j) {
    if (classifier_mask(b, j) == 0) break;
    ids.push_back(classifier(b, j));
  }
  return ids;
}

std::vector<int> Batch::target_row(int b) const {
  std::vector<int> ids(static_cast<std::size_t>(target_lengths[static_cast<std::size_t>(b)]));
  for (std::size_t j = 0; j < ids.size(); ++j) ids[j] = target(b, static_cast<Eigen::Index>(j));
  return ids;
}

Batch make_batch(std::span<const TrainingExample* const> examples) {
  Batch batch;
  const auto n = static_cast<Eigen::Index>(examples.size());
  std::size_t max_ctx = 0, max_cls = 0, max_tgt = 0;
  for (const auto* ex : examples) {
    max_ctx = std::max(max_ctx, ex->context_tokens.size());
    max_cls = std::max(max_cls, ex->classifier_tokens.size());
    max_tgt = std::max(max_tgt, ex->target_tokens.size());
  }
  batch.context.setZero(n, static_cast<Eigen::Index>(max_ctx));
  batch.classifier.setZero(n, static_cast<Eigen::Index>(max_cls));
  batch.classifier_mask.setZero(n, static_cast<Eigen::Index>(max_cls));
  batch.target.setZero(n, static_cast<Eigen::Index>(max_tgt));
  for (Eigen::Index b = 0; b < n; ++b) {
    const auto& ex = *examples[static_cast<std::size_t>(b)];
    for (std::size_t j = 0; j < ex.context_tokens.size(); ++j) {
      batch.context(b, static_cast<Eigen::Index>(j)) = ex.context_tokens[j];
    }
    for (std::size_t j = 0; j < ex.classifier_tokens.size(); ++j) {
      batch.classifier(b, static_cast<Eigen::Index>(j)) = ex.classifier_tokens[j];
      batch.classifier_mask(b, static_cast<Eigen::Index>(j)) = 1;
    }
    for (std::size_t j = 0; j < ex.target_tokens.size(); ++j) {
      batch.target(b, static_cast<Eigen::Index>(j)) = ex.target_tokens[j];
    }
    batch.context_lengths.push_back(static_cast<int>(ex.context_tokens.size()));
    batch.target_lengths.push_back(static_cast<int>(ex.target_tokens.size()));
    batch.emotions.push_back(ex.emotion);
  }
  return batch;
}

BatchStream::BatchStream(std::span<const TrainingExample> examples, int batch_size,
                         std::optional<std::uint64_t> shuffle_seed)
    : examples_(examples) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1, got " + std::to_string(batch_size));
  batch_size_ = static_cast<std::size_t>(batch_size);
  order_.resize(examples.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  if (shuffle_seed) {
    std::mt19937_64 rng(*shuffle_seed);
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

std::optional<Batch> BatchStream::next() {
  if (cursor_ >= order_.size()) return std::nullopt;
  const std::size_t end = std::min(order_.size(), cursor_ + batch_size_);
  std::vector<const TrainingExample*> picked;
  picked.reserve(end - cursor_);
  for (std::size_t i = cursor_; i < end; ++i) picked.push_back(&examples_[order_[i]]);
  cursor_ = end;
  return make_batch(picked);
}

std::size_t BatchStream::batch_count() const { return (order_.size() + batch_size_ - 1) / batch_size_; }

BatchStream batchify(std::span<const TrainingExample> examples, int batch_size,
                     std::optional<std::uint64_t> shuffle_seed) {
  return BatchStream(examples, batch_size, shuffle_seed);
}

}  // namespace empathia
