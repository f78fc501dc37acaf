#include "empathia/error.hpp"
#include "empathia/metrics.hpp"
#include "oracles.hpp"

#include <doctest.h>

#include <algorithm>
#include <numeric>
#include <random>

using namespace empathia;
using testing::split_words;

namespace {

BleuScore bleu_of(const std::vector<TokenList>& c, const std::vector<TokenList>& r,
                  BleuSmoothing s = BleuSmoothing::kAddOneOnZero) {
  return corpus_bleu(c, r, s);
}

std::vector<TokenList> random_corpus(std::mt19937_64& rng, std::size_t sentences, const std::vector<TokenList>* base) {
  static const TokenList words = {"a", "b", "c", "d", "e", "f"};
  std::uniform_int_distribution<std::size_t> pick(0, words.size() - 1);
  std::uniform_int_distribution<int> len(3, 9);
  std::bernoulli_distribution keep(0.7);
  std::vector<TokenList> out;
  for (std::size_t s = 0; s < sentences; ++s) {
    TokenList t;
    if (base != nullptr) {
      for (const auto& w : (*base)[s]) t.push_back(keep(rng) ? w : words[pick(rng)]);
    } else {
      const int n = len(rng);
      for (int i = 0; i < n; ++i) t.push_back(words[pick(rng)]);
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("identical candidate and reference score 1 at every order") {
  const std::vector<TokenList> c = {split_words("the cat sat down")};
  auto s = bleu_of(c, c);
  for (double b : s.bleu) CHECK(b == doctest::Approx(1.0));
  CHECK(s.avg_bleu == doctest::Approx(1.0));
  CHECK(s.brevity_penalty == 1.0);
}

TEST_CASE("repeated words are clipped to the reference count") {
  auto s = bleu_of({split_words("the the the the")}, {split_words("the cat")});
  CHECK(s.matches[0] == 1);
  CHECK(s.totals[0] == 4);
  CHECK(s.brevity_penalty == 1.0);
  CHECK(s.bleu[0] == 0.25);
}

TEST_CASE("20-pair fixture agrees with the oracle, smoothed and unsmoothed") {
  std::vector<TokenList> c, r;
  testing::bleu_fixture(c, r);
  REQUIRE(c.size() == 20);
  for (bool smooth : {true, false}) {
    auto s = bleu_of(c, r, smooth ? BleuSmoothing::kAddOneOnZero : BleuSmoothing::kNone);
    auto o = testing::oracle_bleu(c, r, smooth);
    for (std::size_t n = 0; n < 4; ++n) CHECK(s.bleu[n] == doctest::Approx(o.bleu[n]).epsilon(1e-9));
    CHECK(s.avg_bleu == doctest::Approx(o.avg).epsilon(1e-9));
    CHECK(s.brevity_penalty == doctest::Approx(o.bp).epsilon(1e-12));
  }
}

TEST_CASE("brevity penalty applies when candidates are short") {
  auto s = bleu_of({split_words("the cat")}, {split_words("the cat sat down")});
  CHECK(s.brevity_penalty == doctest::Approx(std::exp(1.0 - 4.0 / 2.0)));
  CHECK(s.bleu[0] == doctest::Approx(std::exp(-1.0)));
}

TEST_CASE("an empty candidate sentence contributes zero counts") {
  auto s = bleu_of({{}, split_words("a b")}, {split_words("x y"), split_words("a b")});
  CHECK(s.candidate_length == 2);
  CHECK(s.reference_length == 4);
  CHECK(s.totals[0] == 2);
}

TEST_CASE("unsmoothed BLEU-n does not increase with n") {
  std::mt19937_64 rng(21);
  int checked = 0;
  for (int trial = 0; trial < 200; ++trial) {
    auto refs = random_corpus(rng, 5, nullptr);
    auto cands = random_corpus(rng, 5, &refs);
    auto s = bleu_of(cands, refs, BleuSmoothing::kNone);
    for (int n = 0; n < 3; ++n) {
      // A rising precision is a genuine inversion; only the rest is asserted.
      const double p_next = s.totals[n + 1] == 0 ? 0.0 : double(s.matches[n + 1]) / double(s.totals[n + 1]);
      const double p_here = s.totals[n] == 0 ? 0.0 : double(s.matches[n]) / double(s.totals[n]);
      if (p_next <= p_here) {
        CHECK(s.bleu[n] >= s.bleu[n + 1]);
        ++checked;
      }
    }
  }
  CHECK(checked > 500);
}

TEST_CASE("pair order does not change corpus BLEU") {
  std::vector<TokenList> c, r;
  testing::bleu_fixture(c, r);
  auto base = bleu_of(c, r);
  std::vector<std::size_t> order(c.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<TokenList> c2, r2;
    for (auto i : order) {
      c2.push_back(c[i]);
      r2.push_back(r[i]);
    }
    auto s = bleu_of(c2, r2);
    for (std::size_t n = 0; n < 4; ++n) CHECK(s.bleu[n] == doctest::Approx(base.bleu[n]).epsilon(1e-12));
  }
}

TEST_CASE("BLEU rejects empty and mismatched corpora") {
  CHECK_THROWS_AS(bleu_of({}, {}), InputError);
  CHECK_THROWS_AS(bleu_of({split_words("a")}, {}), InputError);
}

TEST_CASE("two-class F1 by hand") {
  const std::vector<int> gold = {0, 0, 1, 1};
  const std::vector<int> pred = {0, 1, 1, 1};
  auto f = emotion_f1(pred, gold);
  CHECK(f.per_class[0].f1 == doctest::Approx(2.0 / 3.0));
  CHECK(f.per_class[1].f1 == doctest::Approx(4.0 / 5.0));
  CHECK(f.macro_f1 == doctest::Approx(11.0 / 15.0));
}

TEST_CASE("one predicted class against four uniform gold classes") {
  const std::vector<int> gold = {0, 1, 2, 3, 0, 1, 2, 3};
  const std::vector<int> pred(8, 2);
  auto f = emotion_f1(pred, gold);
  CHECK(f.per_class[2].f1 == doctest::Approx(0.4));
  CHECK(f.per_class[0].f1 == 0.0);
  CHECK(f.per_class[1].f1 == 0.0);
  CHECK(f.per_class[3].f1 == 0.0);
  CHECK(f.macro_f1 == doctest::Approx(0.1));
}

TEST_CASE("perfect predictions give macro F1 of 1 over present classes") {
  const std::vector<int> gold = {3, 7, 7, 30};
  auto f = emotion_f1(gold, gold);
  CHECK(f.macro_f1 == doctest::Approx(1.0));
  CHECK(f.weighted_f1 == doctest::Approx(1.0));
}

TEST_CASE("macro F1 matches a brute-force confusion matrix") {
  std::mt19937_64 rng(8);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const int k = 2 + trial % 31;
    std::uniform_int_distribution<int> label(0, k - 1);
    const int n = len(rng);
    std::vector<int> gold(static_cast<std::size_t>(n)), pred(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      gold[static_cast<std::size_t>(i)] = label(rng);
      pred[static_cast<std::size_t>(i)] = label(rng);
    }
    auto f = emotion_f1(pred, gold);
    REQUIRE(f.macro_f1 == doctest::Approx(testing::oracle_macro_f1(pred, gold, 32)).epsilon(1e-12));
  }
}

TEST_CASE("F1 rejects mismatched lengths and out-of-range ids") {
  const std::vector<int> a = {1, 2};
  const std::vector<int> b = {1};
  const std::vector<int> bad = {1, 32};
  CHECK_THROWS_AS(emotion_f1(a, b), InputError);
  CHECK_THROWS_AS(emotion_f1(bad, a), InputError);
}

TEST_CASE("accuracy") {
  const std::vector<int> gold = {1, 2, 3, 4, 5};
  CHECK(emotion_accuracy(gold, gold) == 1.0);
  const std::vector<int> none = {0, 0, 0, 0, 0};
  CHECK(emotion_accuracy(none, gold) == 0.0);
  const std::vector<int> three = {1, 2, 3, 0, 0};
  CHECK(emotion_accuracy(three, gold) == doctest::Approx(0.6));
  const std::vector<int> empty;
  CHECK_THROWS_AS(emotion_accuracy(empty, empty), InputError);
  CHECK_THROWS_AS(emotion_accuracy(three, empty), InputError);
}

TEST_CASE("accuracy is invariant to a joint relabeling") {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<int> label(0, 31);
  std::vector<int> perm(32);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<int> gold(30), pred(30);
    for (int i = 0; i < 30; ++i) {
      gold[static_cast<std::size_t>(i)] = label(rng);
      pred[static_cast<std::size_t>(i)] = i % 3 == 0 ? gold[static_cast<std::size_t>(i)] : label(rng);
    }
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<int> g2, p2;
    for (int i = 0; i < 30; ++i) {
      g2.push_back(perm[static_cast<std::size_t>(gold[static_cast<std::size_t>(i)])]);
      p2.push_back(perm[static_cast<std::size_t>(pred[static_cast<std::size_t>(i)])]);
    }
    CHECK(emotion_accuracy(p2, g2) == emotion_accuracy(pred, gold));
  }
}

TEST_CASE("report JSON and table") {
  const std::vector<TokenList> c = {split_words("the cat sat down")};
  const std::vector<int> ids = {4};
  auto report = make_report(c, c, ids, ids, std::vector<std::string>(32, "x"));
  CHECK(report.examples == 1);
  CHECK(report.accuracy == 1.0);
  const std::string json = report.to_json();
  CHECK(json.find("\"avg_bleu\"") != std::string::npos);
  const std::string table = report.to_table("toy");
  CHECK(table.find("AVG BLEU") != std::string::npos);
  CHECK(table.find("100.00") != std::string::npos);
}
