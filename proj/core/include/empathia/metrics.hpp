#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace empathia {

using TokenList = std::vector<std::string>;

enum class BleuSmoothing {
  kNone,
  // A zero n-gram precision m/d is replaced by (m+1)/(d+1).
  kAddOneOnZero,
};

struct BleuScore {
  std::array<double, 4> bleu{};  // bleu[n-1] = BLEU-n
  double avg_bleu = 0.0;
  double brevity_penalty = 0.0;
  std::array<long, 4> matches{};
  std::array<long, 4> totals{};
  long candidate_length = 0;
  long reference_length = 0;
  BleuSmoothing smoothing = BleuSmoothing::kAddOneOnZero;
};

// Corpus-level BLEU-1..4 with one reference per candidate: clipped n-gram
// precisions summed over the corpus, geometric mean over orders 1..n, and
// brevity penalty exp(1 - r/c) when c < r. Throws InputError on an empty or
// mismatched corpus.
BleuScore corpus_bleu(std::span<const TokenList> candidates, std::span<const TokenList> references,
                      BleuSmoothing smoothing = BleuSmoothing::kAddOneOnZero);

std::string_view smoothing_name(BleuSmoothing smoothing);

struct ClassScore {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  long support = 0;    // gold count
  long predicted = 0;  // predicted count
};

enum class F1Average { kMacro, kWeighted };

struct F1Result {
  // Unweighted mean of per-class F1 over classes that occur in gold or
  // predictions; classes absent from both are excluded.
  double macro_f1 = 0.0;
  // Support-weighted mean of per-class F1.
  double weighted_f1 = 0.0;
  std::vector<ClassScore> per_class;

  double value(F1Average average) const { return average == F1Average::kMacro ? macro_f1 : weighted_f1; }
};

F1Result emotion_f1(std::span<const int> predicted, std::span<const int> gold, int num_classes = 32);

double emotion_accuracy(std::span<const int> predicted, std::span<const int> gold);

struct EvalReport {
  BleuScore bleu;
  F1Result f1;
  double accuracy = 0.0;
  std::size_t examples = 0;
  F1Average headline_average = F1Average::kMacro;
  std::vector<std::string> label_names;  // for the per-class table

  // Single JSON object; doubles are written with round-trip precision.
  std::string to_json() const;
  // Aligned table with BLEU and F1 on the x100 scale.
  std::string to_table(const std::string& model_name) const;
};

EvalReport make_report(std::span<const TokenList> candidates, std::span<const TokenList> references,
                       std::span<const int> predicted, std::span<const int> gold,
                       std::vector<std::string> label_names, F1Average average = F1Average::kMacro);

}  // namespace empathia
