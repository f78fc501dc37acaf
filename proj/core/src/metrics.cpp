#include "empathia/metrics.hpp"

#include "empathia/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>

namespace empathia {

namespace {

using NgramCounts = std::map<std::span<const std::string>, long,
                             decltype([](std::span<const std::string> a, std::span<const std::string> b) {
                               return std::lexicographical_compare(a.begin(), a.end(), b.begin(), b.end());
                             })>;

NgramCounts count_ngrams(const TokenList& tokens, std::size_t n) {
  NgramCounts counts;
  if (tokens.size() < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) ++counts[std::span<const std::string>(tokens).subspan(i, n)];
  return counts;
}

}  // namespace

std::string_view smoothing_name(BleuSmoothing smoothing) {
  return smoothing == BleuSmoothing::kNone ? "none" : "add-one-on-zero-precision";
}

BleuScore corpus_bleu(std::span<const TokenList> candidates, std::span<const TokenList> references,
                      BleuSmoothing smoothing) {
  if (candidates.empty()) throw InputError("BLEU over an empty candidate list");
  if (candidates.size() != references.size()) {
    throw InputError("BLEU: " + std::to_string(candidates.size()) + " candidates for " +
                     std::to_string(references.size()) + " references");
  }
  BleuScore score;
  score.smoothing = smoothing;
  for (std::size_t s = 0; s < candidates.size(); ++s) {
    const auto& cand = candidates[s];
    const auto& ref = references[s];
    score.candidate_length += static_cast<long>(cand.size());
    score.reference_length += static_cast<long>(ref.size());
    for (std::size_t n = 1; n <= 4; ++n) {
      const auto cand_counts = count_ngrams(cand, n);
      const auto ref_counts = count_ngrams(ref, n);
      for (const auto& [gram, count] : cand_counts) {
        auto it = ref_counts.find(gram);
        if (it != ref_counts.end()) score.matches[n - 1] += std::min(count, it->second);
      }
      if (cand.size() >= n) score.totals[n - 1] += static_cast<long>(cand.size() - n + 1);
    }
  }

  const double c = static_cast<double>(score.candidate_length);
  const double r = static_cast<double>(score.reference_length);
  if (score.candidate_length == 0) {
    score.brevity_penalty = 0.0;
  } else {
    score.brevity_penalty = c < r ? std::exp(1.0 - r / c) : 1.0;
  }

  std::array<double, 4> log_p{};
  std::array<bool, 4> zero{};
  for (std::size_t n = 0; n < 4; ++n) {
    double m = static_cast<double>(score.matches[n]);
    double d = static_cast<double>(score.totals[n]);
    if (m == 0.0 && smoothing == BleuSmoothing::kAddOneOnZero) {
      m += 1.0;
      d += 1.0;
    }
    zero[n] = m == 0.0 || d == 0.0;
    log_p[n] = zero[n] ? 0.0 : std::log(m / d);
  }
  double running = 0.0;
  bool any_zero = false;
  for (std::size_t n = 0; n < 4; ++n) {
    running += log_p[n];
    any_zero = any_zero || zero[n];
    score.bleu[n] = (any_zero || score.brevity_penalty == 0.0)
                        ? 0.0
                        : score.brevity_penalty * std::exp(running / static_cast<double>(n + 1));
  }
  score.avg_bleu = (score.bleu[0] + score.bleu[1] + score.bleu[2] + score.bleu[3]) / 4.0;
  return score;
}

F1Result emotion_f1(std::span<const int> predicted, std::span<const int> gold, int num_classes) {
  if (predicted.size() != gold.size()) {
    throw InputError("emotion_f1: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  }
  std::vector<long> tp(static_cast<std::size_t>(num_classes), 0);
  std::vector<long> pred_count(tp.size(), 0);
  std::vector<long> gold_count(tp.size(), 0);
  for (std::size_t i = 0; i < gold.size(); ++i) {
    if (gold[i] < 0 || gold[i] >= num_classes || predicted[i] < 0 || predicted[i] >= num_classes) {
      throw InputError("emotion id out of range at position " + std::to_string(i));
    }
    ++gold_count[static_cast<std::size_t>(gold[i])];
    ++pred_count[static_cast<std::size_t>(predicted[i])];
    if (gold[i] == predicted[i]) ++tp[static_cast<std::size_t>(gold[i])];
  }
  F1Result result;
  result.per_class.resize(tp.size());
  double macro_sum = 0.0;
  long present = 0;
  double weighted_sum = 0.0;
  long support_total = 0;
  for (std::size_t k = 0; k < tp.size(); ++k) {
    ClassScore& cs = result.per_class[k];
    cs.support = gold_count[k];
    cs.predicted = pred_count[k];
    cs.precision = pred_count[k] > 0 ? static_cast<double>(tp[k]) / static_cast<double>(pred_count[k]) : 0.0;
    cs.recall = gold_count[k] > 0 ? static_cast<double>(tp[k]) / static_cast<double>(gold_count[k]) : 0.0;
    // 2TP / (gold + predicted) equals the harmonic mean of precision and recall without the extra rounding.
    const long denom = gold_count[k] + pred_count[k];
    cs.f1 = tp[k] > 0 ? 2.0 * static_cast<double>(tp[k]) / static_cast<double>(denom) : 0.0;
    if (gold_count[k] > 0 || pred_count[k] > 0) {
      macro_sum += cs.f1;
      ++present;
    }
    weighted_sum += cs.f1 * static_cast<double>(cs.support);
    support_total += cs.support;
  }
  result.macro_f1 = present > 0 ? macro_sum / static_cast<double>(present) : 0.0;
  result.weighted_f1 = support_total > 0 ? weighted_sum / static_cast<double>(support_total) : 0.0;
  return result;
}

double emotion_accuracy(std::span<const int> predicted, std::span<const int> gold) {
  if (gold.empty()) throw InputError("emotion_accuracy on empty input");
  if (predicted.size() != gold.size()) {
    throw InputError("emotion_accuracy: " + std::to_string(predicted.size()) + " predictions for " +
                     std::to_string(gold.size()) + " gold labels");
  }
  long correct = 0;
  for (std::size_t i = 0; i < gold.size(); ++i) correct += predicted[i] == gold[i] ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(gold.size());
}

EvalReport make_report(std::span<const TokenList> candidates, std::span<const TokenList> references,
                       std::span<const int> predicted, std::span<const int> gold,
                       std::vector<std::string> label_names, F1Average average) {
  EvalReport report;
  report.bleu = corpus_bleu(candidates, references);
  report.f1 = emotion_f1(predicted, gold, static_cast<int>(label_names.size()));
  report.accuracy = emotion_accuracy(predicted, gold);
  report.examples = gold.size();
  report.headline_average = average;
  report.label_names = std::move(label_names);
  return report;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["examples"] = examples;
  j["bleu"] = {
      {"bleu_1", bleu.bleu[0]},
      {"bleu_2", bleu.bleu[1]},
      {"bleu_3", bleu.bleu[2]},
      {"bleu_4", bleu.bleu[3]},
      {"avg_bleu", bleu.avg_bleu},
      {"brevity_penalty", bleu.brevity_penalty},
      {"candidate_length", bleu.candidate_length},
      {"reference_length", bleu.reference_length},
  };
  j["emotion_f1"] = f1.value(headline_average);
  j["macro_f1"] = f1.macro_f1;
  j["weighted_f1"] = f1.weighted_f1;
  j["accuracy"] = accuracy;
  auto rows = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < f1.per_class.size(); ++k) {
    const auto& cs = f1.per_class[k];
    rows.push_back({{"label", k < label_names.size() ? label_names[k] : std::to_string(k)},
                    {"precision", cs.precision},
                    {"recall", cs.recall},
                    {"f1", cs.f1},
                    {"support", cs.support},
                    {"predicted", cs.predicted}});
  }
  j["per_class"] = std::move(rows);
  j["metadata"] = {
      {"bleu_level", "corpus"},
      {"bleu_tokenization", "lowercased word tokens, punctuation split"},
      {"bleu_smoothing", smoothing_name(bleu.smoothing)},
      {"f1_average", headline_average == F1Average::kMacro ? "macro" : "weighted"},
      {"f1_absent_classes", "excluded when absent from gold and predictions"},
  };
  return j.dump();
}

std::string EvalReport::to_table(const std::string& model_name) const {
  char buf[256];
  std::ostringstream os;
  const std::string name = model_name.empty() ? "model" : model_name;
  const int width = std::max<int>(24, static_cast<int>(name.size()) + 2);
  std::snprintf(buf, sizeof(buf), "%-*s %10s %10s\n", width, "Model", "AVG BLEU", "EMO F1");
  os << buf;
  os << std::string(static_cast<std::size_t>(width) + 22, '-') << '\n';
  std::snprintf(buf, sizeof(buf), "%-*s %10.2f %10.2f\n", width, name.c_str(), 100.0 * bleu.avg_bleu,
                100.0 * f1.value(headline_average));
  os << buf;
  os << '\n';
  std::snprintf(buf, sizeof(buf), "BLEU-1 %.2f  BLEU-2 %.2f  BLEU-3 %.2f  BLEU-4 %.2f  BP %.4f\n",
                100.0 * bleu.bleu[0], 100.0 * bleu.bleu[1], 100.0 * bleu.bleu[2], 100.0 * bleu.bleu[3],
                bleu.brevity_penalty);
  os << buf;
  std::snprintf(buf, sizeof(buf), "emotion accuracy %.2f  macro-F1 %.2f  weighted-F1 %.2f  examples %zu\n",
                100.0 * accuracy, 100.0 * f1.macro_f1, 100.0 * f1.weighted_f1, examples);
  os << buf;
  return os.str();
}

}  // namespace empathia
