#include "empathia/checkpoint.hpp"
#include "empathia/metrics.hpp"
#include "empathia/training.hpp"

#include <benchmark/benchmark.h>

#include <random>
#include <string>
#include <vector>

using namespace empathia;

namespace {

const std::vector<std::string>& words() {
  static const std::vector<std::string> w = [] {
    std::vector<std::string> out;
    for (int i = 0; i < 400; ++i) out.push_back("w" + std::to_string(i));
    return out;
  }();
  return w;
}

std::string sentence(std::mt19937_64& rng, int length) {
  std::uniform_int_distribution<std::size_t> pick(0, words().size() - 1);
  std::string s;
  for (int i = 0; i < length; ++i) s += (i ? " " : "") + words()[pick(rng)];
  return s;
}

struct Fixture {
  PreparedData data;
  std::unique_ptr<JointModel> model;
  TrainConfig config;
};

// Untrained model over a random corpus, sized by the preset.
Fixture& fixture(bool toy) {
  static Fixture fixtures[2];
  Fixture& f = fixtures[toy ? 1 : 0];
  if (!f.model) {
    f.config = toy ? TrainConfig::toy() : TrainConfig{};
    f.config.min_freq = 1;
    Corpus corpus;
    corpus.labels = EmotionLabels::canonical();
    std::mt19937_64 rng(1);
    for (int i = 0; i < 200; ++i) {
      Conversation c;
      c.conv_id = "b" + std::to_string(i);
      c.emotion = i % EmotionLabels::kCount;
      c.utterances = {{SpeakerRole::kSpeaker, sentence(rng, 12)}, {SpeakerRole::kListener, sentence(rng, 10)}};
      corpus.conversations.push_back(std::move(c));
    }
    f.data = prepare_data(f.config, corpus, nullptr);
    f.model = build_model(f.config, f.data.vocab, f.data.tokenizer);
  }
  return f;
}

std::vector<int> classifier_input(const Fixture& f, int length) {
  std::vector<int> tokens = {f.data.tokenizer.cls_id()};
  const auto& source = f.data.train[0].classifier_tokens;
  for (int i = 0; i + 1 < length; ++i) tokens.push_back(source[1 + static_cast<std::size_t>(i) % (source.size() - 1)]);
  return tokens;
}

void BM_TransformerForward(benchmark::State& state) {
  const Fixture& f = fixture(state.range(1) != 0);
  const auto tokens = classifier_input(f, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.model->backbone().represent(tokens).vector.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_TransformerForward)->ArgsProduct({{16, 64}, {1, 0}})->Unit(benchmark::kMicrosecond);

void BM_GreedyDecode(benchmark::State& state) {
  const Fixture& f = fixture(state.range(1) != 0);
  std::vector<int> context;
  for (int i = 0; i < state.range(0); ++i) {
    context.push_back(GenerationVocab::kReserved + i % (f.data.vocab.size() - GenerationVocab::kReserved));
  }
  const Eigen::RowVectorXd emotion = Eigen::RowVectorXd::Constant(f.config.encoder_dim, 0.1);
  for (auto _ : state) {
    benchmark::DoNotOptimize(f.model->generator().greedy_decode(context, emotion, 30));
  }
}
BENCHMARK(BM_GreedyDecode)->ArgsProduct({{16, 64}, {1, 0}})->Unit(benchmark::kMicrosecond);

void BM_CorpusBleu(benchmark::State& state) {
  std::mt19937_64 rng(2);
  std::vector<TokenList> candidates, references;
  for (int i = 0; i < state.range(0); ++i) {
    auto split = [](const std::string& s) {
      TokenList out;
      std::size_t start = 0;
      while (start < s.size()) {
        const auto end = s.find(' ', start);
        out.push_back(s.substr(start, end - start));
        if (end == std::string::npos) break;
        start = end + 1;
      }
      return out;
    };
    candidates.push_back(split(sentence(rng, 15)));
    references.push_back(split(sentence(rng, 15)));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(corpus_bleu(candidates, references).avg_bleu);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_CorpusBleu)->Arg(100)->Arg(2500)->Unit(benchmark::kMicrosecond);

}  // namespace
BENCHMARK_MAIN();
