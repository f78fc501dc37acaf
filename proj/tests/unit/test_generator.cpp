#include "empathia/checkpoint.hpp"
#include "empathia/error.hpp"
#include "empathia/generator.hpp"
#include "empathia/training.hpp"
#include "gradcheck.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace empathia;
using ad::Matrix;
using ad::Var;
using Vec = std::vector<double>;

namespace {

GeneratorConfig gen_config(int vocab, int embedding, int hidden) {
  GeneratorConfig c;
  c.vocab_size = vocab;
  c.embedding_dim = embedding;
  c.hidden = hidden;
  c.max_len = 20;
  return c;
}

Eigen::RowVectorXd random_row(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Eigen::RowVectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = d(rng);
  return v;
}

// Scalar-loop reference implementation of the recurrences.
double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Vec row_of(const Matrix& m, Eigen::Index r) {
  Vec v(static_cast<std::size_t>(m.cols()));
  for (Eigen::Index j = 0; j < m.cols(); ++j) v[static_cast<std::size_t>(j)] = m(r, j);
  return v;
}

// x [in] times W [in x out]
Vec times(const Vec& x, const Matrix& w) {
  Vec out(static_cast<std::size_t>(w.cols()), 0.0);
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    for (Eigen::Index i = 0; i < w.rows(); ++i) out[static_cast<std::size_t>(j)] += x[static_cast<std::size_t>(i)] * w(i, j);
  }
  return out;
}

Vec gru(const ad::ParameterSet& p, const std::string& prefix, const Vec& x, const Vec& h) {
  const std::size_t n = h.size();
  Vec gi = times(x, p.at(prefix + ".w_input").value);
  Vec gh = times(h, p.at(prefix + ".w_hidden").value);
  const Matrix& bi = p.at(prefix + ".b_input").value;
  const Matrix& bh = p.at(prefix + ".b_hidden").value;
  Vec out(n);
  for (std::size_t k = 0; k < n; ++k) {
    const auto r_col = static_cast<Eigen::Index>(k);
    const auto z_col = static_cast<Eigen::Index>(n + k);
    const auto n_col = static_cast<Eigen::Index>(2 * n + k);
    const double r = sigmoid(gi[k] + bi(0, r_col) + gh[k] + bh(0, r_col));
    const double z = sigmoid(gi[n + k] + bi(0, z_col) + gh[n + k] + bh(0, z_col));
    const double cand = std::tanh(gi[2 * n + k] + bi(0, n_col) + r * (gh[2 * n + k] + bh(0, n_col)));
    out[k] = (1.0 - z) * cand + z * h[k];
  }
  return out;
}

struct RefEncoder {
  std::vector<Vec> states;
  Vec final;
};

RefEncoder ref_encode(const ad::ParameterSet& p, const std::vector<int>& tokens, int half) {
  const Matrix& emb = p.at("generator.embedding").value;
  const std::size_t n = tokens.size();
  std::vector<Vec> fwd(n), bwd(n);
  Vec h(static_cast<std::size_t>(half), 0.0);
  for (std::size_t i = 0; i < n; ++i) fwd[i] = h = gru(p, "generator.encoder.forward", row_of(emb, tokens[i]), h);
  h.assign(static_cast<std::size_t>(half), 0.0);
  for (std::size_t i = n; i-- > 0;) bwd[i] = h = gru(p, "generator.encoder.backward", row_of(emb, tokens[i]), h);
  RefEncoder out;
  for (std::size_t i = 0; i < n; ++i) {
    Vec s = fwd[i];
    s.insert(s.end(), bwd[i].begin(), bwd[i].end());
    out.states.push_back(s);
  }
  out.final = fwd[n - 1];
  out.final.insert(out.final.end(), bwd[0].begin(), bwd[0].end());
  return out;
}

void softmax_in_place(Vec& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  double z = 0.0;
  for (double& x : v) z += (x = std::exp(x - mx));
  for (double& x : v) x /= z;
}

struct RefStep {
  Vec hidden, context, attentional, distribution;
};

RefStep ref_step(const ad::ParameterSet& p, const RefEncoder& enc, const Vec& hidden, const Vec& attentional_prev,
                 int prev) {
  RefStep s;
  Vec input = row_of(p.at("generator.embedding").value, prev);
  input.insert(input.end(), attentional_prev.begin(), attentional_prev.end());
  s.hidden = gru(p, "generator.decoder", input, hidden);
  const Matrix& wf = p.at("generator.attention.bilinear").value;
  Vec scores;
  for (const Vec& row : enc.states) {
    Vec key = times(row, wf);
    double dot = 0.0;
    for (std::size_t k = 0; k < key.size(); ++k) dot += key[k] * s.hidden[k];
    scores.push_back(dot);
  }
  softmax_in_place(scores);
  s.context.assign(hidden.size(), 0.0);
  for (std::size_t i = 0; i < enc.states.size(); ++i) {
    for (std::size_t k = 0; k < hidden.size(); ++k) s.context[k] += scores[i] * enc.states[i][k];
  }
  Vec joined = s.hidden;
  joined.insert(joined.end(), s.context.begin(), s.context.end());
  s.attentional = times(joined, p.at("generator.combine").value);
  for (double& x : s.attentional) x = std::tanh(x);
  s.distribution = times(s.attentional, p.at("generator.output").value);
  softmax_in_place(s.distribution);
  return s;
}

void check_close(const Eigen::RowVectorXd& got, const Vec& want, double tol = 1e-12) {
  REQUIRE(static_cast<std::size_t>(got.size()) == want.size());
  for (std::size_t k = 0; k < want.size(); ++k) CHECK(got(static_cast<Eigen::Index>(k)) == doctest::Approx(want[k]).epsilon(tol));
}

}  // namespace

TEST_CASE("a length-1 context has one state equal to the final state") {
  std::mt19937_64 rng(1);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(10, 4, 6), rng);
  auto enc = gen.encode_context(std::vector<int>{7}, 1);
  CHECK(enc.states.rows() == 1);
  CHECK(enc.final.size() == 6);
  CHECK(enc.final == Eigen::RowVectorXd(enc.states.row(0)));
}

TEST_CASE("with tied directions the forward final of x is the backward first of reverse(x)") {
  std::mt19937_64 rng(2);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(10, 3, 4), rng);
  for (const char* part : {".w_input", ".w_hidden", ".b_input", ".b_hidden"}) {
    params.at(std::string("generator.encoder.backward") + part).value =
        params.at(std::string("generator.encoder.forward") + part).value;
  }
  const std::vector<int> x = {4, 5, 6, 7, 8};
  const std::vector<int> rev = {8, 7, 6, 5, 4};
  auto a = gen.encode_context(x, 5);
  auto b = gen.encode_context(rev, 5);
  CHECK(a.final.head(2) == b.final.tail(2));
  CHECK(a.final.tail(2) == b.final.head(2));
}

TEST_CASE("encoder input errors") {
  std::mt19937_64 rng(3);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(10, 3, 4), rng);
  CHECK_THROWS_AS(gen.encode_context(std::vector<int>{4}, 0), InputError);
  CHECK_THROWS_AS(gen.encode_context(std::vector<int>(21, 4), 21), LengthError);
  ad::ParameterSet other;
  CHECK_THROWS_AS(Seq2SeqGenerator(other, gen_config(10, 3, 5), rng), ConfigError);
}

TEST_CASE("fusion is the element-wise mean") {
  Eigen::RowVectorXd a(2), b(2);
  a << 1.0, 2.0;
  b << 3.0, 4.0;
  CHECK(fuse_emotion(a, b) == Eigen::RowVectorXd((Eigen::RowVectorXd(2) << 2.0, 3.0).finished()));
  CHECK(fuse_emotion(a, a) == a);
  CHECK(fuse_emotion(a, Eigen::RowVectorXd(-a)).isZero());
  CHECK_THROWS_AS(fuse_emotion(a, Eigen::RowVectorXd::Zero(3)), InputError);
}

TEST_CASE("attention") {
  std::mt19937_64 rng(4);
  SUBCASE("a single step takes all the weight") {
    Matrix states = Matrix::Random(1, 3);
    auto [context, weights] = attend(random_row(3, rng), states, Matrix::Random(3, 3));
    CHECK(weights(0) == 1.0);
    CHECK(context == Eigen::RowVectorXd(states.row(0)));
  }
  SUBCASE("a zero bilinear matrix averages the rows") {
    Matrix states = Matrix::Random(4, 3);
    auto [context, weights] = attend(random_row(3, rng), states, Matrix::Zero(3, 3));
    for (Eigen::Index i = 0; i < 4; ++i) CHECK(weights(i) == 0.25);
    CHECK((context - states.colwise().mean()).cwiseAbs().maxCoeff() < 1e-15);
  }
  SUBCASE("T=3, d=2 by hand") {
    Matrix states(3, 2);
    states << 1.0, 0.0, 0.0, 1.0, 0.5, -0.5;
    Matrix wf(2, 2);
    wf << 0.3, -0.2, 0.1, 0.4;
    Eigen::RowVectorXd h(2);
    h << 2.0, -1.0;
    // score_i = H_i W_f h
    double s[3];
    for (int i = 0; i < 3; ++i) {
      s[i] = 0.0;
      for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) s[i] += states(i, a) * wf(a, b) * h(b);
      }
    }
    CHECK(s[0] == doctest::Approx(0.8));
    const double z = std::exp(s[0]) + std::exp(s[1]) + std::exp(s[2]);
    auto [context, weights] = attend(h, states, wf);
    for (int i = 0; i < 3; ++i) CHECK(weights(i) == doctest::Approx(std::exp(s[i]) / z));
    for (int k = 0; k < 2; ++k) {
      double c = 0.0;
      for (int i = 0; i < 3; ++i) c += std::exp(s[i]) / z * states(i, k);
      CHECK(context(k) == doctest::Approx(c));
    }
  }
  SUBCASE("no rows is an error") {
    CHECK_THROWS_AS(attend(random_row(3, rng), Matrix(0, 3), Matrix::Zero(3, 3)), InputError);
  }
}

TEST_CASE("two decoder steps at d=2, vocab 5 match a scalar reference") {
  std::mt19937_64 rng(5);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(5, 2, 2), rng);
  const std::vector<int> context = {4, 1, 4};
  Eigen::RowVectorXd emotion = random_row(2, rng);

  ad::Tape tape(false);
  auto w = gen.bind(tape);
  auto enc = gen.encode_context(w, context, 3, ForwardMode{}, 0.0);
  auto state = gen.initial_state(tape, fuse_emotion(tape.constant(emotion), enc.final));
  CHECK(state.previous_token == GenerationVocab::kBos);
  CHECK(state.attentional.value().isZero());

  RefEncoder ref = ref_encode(params, context, 1);
  check_close(enc.final.value().row(0), ref.final);
  Vec hidden = {(emotion(0) + ref.final[0]) / 2.0, (emotion(1) + ref.final[1]) / 2.0};
  Vec attentional = {0.0, 0.0};
  int prev = GenerationVocab::kBos;
  for (int step = 0; step < 2; ++step) {
    auto [out, next] = gen.decode_step(w, state, enc, ForwardMode{}, 0.0);
    RefStep r = ref_step(params, ref, hidden, attentional, prev);
    check_close(next.hidden.value().row(0), r.hidden);
    check_close(gen.attend(next.hidden, enc).context.value().row(0), r.context);
    check_close(out.attentional.value().row(0), r.attentional);
    check_close(out.distribution.value().row(0), r.distribution);
    hidden = r.hidden;
    attentional = r.attentional;
    prev = 4;
    state = next;
    state.previous_token = prev;
  }
}

TEST_CASE("step outputs are normalised and bounded") {
  std::mt19937_64 rng(6);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(12, 4, 8), rng);
  std::uniform_int_distribution<int> token(4, 11);
  for (int trial = 0; trial < 50; ++trial) {
    ad::Tape tape(false);
    auto w = gen.bind(tape);
    std::vector<int> context(static_cast<std::size_t>(1 + trial % 7));
    for (int& t : context) t = token(rng);
    auto enc = gen.encode_context(w, context, static_cast<int>(context.size()), ForwardMode{}, 0.0);
    auto state = gen.initial_state(tape, tape.constant(random_row(8, rng) * 3.0));
    for (int step = 0; step < 4; ++step) {
      auto [out, next] = gen.decode_step(w, state, enc, ForwardMode{}, 0.0);
      CHECK(std::abs(out.distribution.value().sum() - 1.0) < 1e-5);
      CHECK(out.attentional.value().cwiseAbs().maxCoeff() < 1.0);
      CHECK(std::abs(gen.attend(next.hidden, enc).weights.value().sum() - 1.0) < 1e-5);
      state = next;
      state.previous_token = token(rng);
    }
  }
}

TEST_CASE("generation loss") {
  const std::vector<int> targets = {4, 1, 3};
  CHECK(generation_loss(Matrix::Constant(3, 5, 0.2), targets) == doctest::Approx(std::log(5.0)));
  CHECK_THROWS_AS(generation_loss(Matrix::Constant(3, 5, 0.2), std::vector<int>{4, 5, 1}), InputError);

  Matrix certain = Matrix::Zero(3, 5);
  certain(0, 4) = certain(1, 1) = certain(2, 3) = 1.0;
  CHECK(generation_loss(certain, targets) == 0.0);

  Matrix two = Matrix::Zero(2, 5);
  two(0, 1) = 0.5;
  two(1, 2) = 0.2;
  CHECK(generation_loss(two, std::vector<int>{1, 2}) == doctest::Approx((std::log(2.0) + std::log(5.0)) / 2.0));

  // PAD targets contribute nothing, even with zero probability.
  Matrix padded = Matrix::Zero(3, 5);
  padded(0, 1) = 0.5;
  padded(1, 2) = 0.2;
  CHECK(generation_loss(padded, std::vector<int>{1, 2, 0}) == doctest::Approx((std::log(2.0) + std::log(5.0)) / 2.0));

  ad::LogFloorCounter counter;
  CHECK(generation_loss(two, std::vector<int>{3, 2}, &counter) ==
        doctest::Approx((-std::log(1e-12) + std::log(5.0)) / 2.0));
  CHECK(counter.hits.load() == 1);
  CHECK_THROWS_AS(generation_loss(two, targets), InputError);
}

TEST_CASE("generation loss equals the mean cross-entropy of random distributions") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::uniform_int_distribution<int> id(0, 8);
  for (int trial = 0; trial < 100; ++trial) {
    Matrix d(6, 9);
    for (Eigen::Index i = 0; i < d.size(); ++i) d.data()[i] = u(rng);
    for (Eigen::Index r = 0; r < 6; ++r) d.row(r) /= d.row(r).sum();
    std::vector<int> t(6);
    for (int& x : t) x = id(rng);
    double sum = 0.0;
    int n = 0;
    for (std::size_t k = 0; k < 6; ++k) {
      if (t[k] == 0) continue;
      sum += -std::log(d(static_cast<Eigen::Index>(k), t[k]));
      ++n;
    }
    CHECK(generation_loss(d, t) == doctest::Approx(n == 0 ? 0.0 : sum / n).epsilon(1e-9));
  }
}

TEST_CASE("a decoder rigged to emit EOS returns an empty response") {
  std::mt19937_64 rng(8);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(8, 3, 4), rng);
  auto& wi = params.at("generator.decoder.w_input").value;
  auto& wh = params.at("generator.decoder.w_hidden").value;
  auto& bi = params.at("generator.decoder.b_input").value;
  auto& bh = params.at("generator.decoder.b_hidden").value;
  wi.setZero();
  wh.setZero();
  bh.setZero();
  bi.setZero();
  bi.middleCols(4, 4).setConstant(-1e3);  // update gate shut
  bi.rightCols(4).setConstant(1e3);       // candidate saturated at 1
  auto& combine = params.at("generator.combine").value;
  combine.setZero();
  combine.topRows(4) = 5.0 * Matrix::Identity(4, 4);
  auto& output = params.at("generator.output").value;
  output.setZero();
  output.col(GenerationVocab::kEos).setConstant(100.0);
  auto tokens = gen.greedy_decode(std::vector<int>{4, 5, 6}, random_row(4, rng), 10);
  CHECK(tokens.empty());
}

TEST_CASE("greedy decoding is deterministic and bounded by max_len") {
  std::mt19937_64 rng(9);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(12, 4, 8), rng);
  Eigen::RowVectorXd e = random_row(8, rng);
  const std::vector<int> context = {5, 6, 7};
  auto a = gen.greedy_decode(context, e, 6);
  CHECK(a == gen.greedy_decode(context, e, 6));
  CHECK(a.size() <= 6);
  CHECK(gen.greedy_decode(context, e, 0).empty());
}

TEST_CASE("ties in greedy decoding go to the lowest id") {
  Eigen::RowVectorXd row(4);
  row << 0.1, 0.4, 0.4, 0.1;
  CHECK(argmax_lowest(row) == 1);
}

TEST_CASE("changing the emotion representation changes the step-0 decoder state") {
  std::mt19937_64 rng(10);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(12, 4, 8), rng);
  const std::vector<int> context = {5, 6, 7};
  auto first_hidden = [&](const Eigen::RowVectorXd& emotion) {
    ad::Tape tape(false);
    auto w = gen.bind(tape);
    auto enc = gen.encode_context(w, context, 3, ForwardMode{}, 0.0);
    auto state = gen.initial_state(tape, fuse_emotion(tape.constant(emotion), enc.final));
    auto [out, next] = gen.decode_step(w, state, enc, ForwardMode{}, 0.0);
    return std::pair{Eigen::RowVectorXd(state.hidden.value().row(0)), Eigen::RowVectorXd(out.distribution.value().row(0))};
  };
  auto [h_a, p_a] = first_hidden(random_row(8, rng));
  auto [h_b, p_b] = first_hidden(random_row(8, rng));
  CHECK(h_a != h_b);
  CHECK(p_a != p_b);
}

TEST_CASE("generation loss gradients at d=8, vocab 12, T=3") {
  std::mt19937_64 rng(11);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(12, 6, 8), rng);
  const std::vector<int> context = {5, 9, 7};
  const std::vector<int> target = {GenerationVocab::kBos, 6, 10, GenerationVocab::kEos};
  const Eigen::RowVectorXd emotion = random_row(8, rng);
  auto run = [&](bool backward) {
    ad::Tape tape(backward);
    auto w = gen.bind(tape);
    auto enc = gen.encode_context(w, context, 3, ForwardMode{}, 0.0);
    auto state = gen.initial_state(tape, fuse_emotion(tape.constant(emotion), enc.final));
    Var total;
    for (std::size_t t = 1; t < target.size(); ++t) {
      auto [out, next] = gen.decode_step(w, state, enc, ForwardMode{}, 0.0);
      Var nll = ad::neg_log_prob(out.distribution, target[t], kLogFloor, nullptr);
      total = t == 1 ? nll : ad::add(total, nll);
      state = next;
      state.previous_token = target[t];
    }
    Var loss = ad::scale(total, 1.0 / 3.0);
    if (backward) tape.backward(loss);
    return loss.scalar();
  };
  params.zero_grad();
  run(true);
  std::vector<std::string> names;
  for (const auto& [name, p] : params.items()) names.push_back(name);
  auto result = testing::check_gradients(params, names, [&] { return run(false); }, 40, rng);
  MESSAGE(result.checked << " coordinates, worst " << result.worst << " at " << result.worst_name);
  CHECK(result.failed == 0);
}

TEST_CASE("trailing PAD tokens never change the decoder's distributions") {
  std::mt19937_64 rng(12);
  ad::ParameterSet params;
  Seq2SeqGenerator gen(params, gen_config(12, 4, 8), rng);
  const Eigen::RowVectorXd emotion = random_row(8, rng);
  auto distributions = [&](const std::vector<int>& tokens) {
    ad::Tape tape(false);
    auto w = gen.bind(tape);
    auto enc = gen.encode_context(w, tokens, 3, ForwardMode{}, 0.0);
    auto state = gen.initial_state(tape, fuse_emotion(tape.constant(emotion), enc.final));
    std::vector<Matrix> out;
    for (int t : {6, 7, 8}) {
      auto [step, next] = gen.decode_step(w, state, enc, ForwardMode{}, 0.0);
      out.push_back(step.distribution.value());
      state = next;
      state.previous_token = t;
    }
    return out;
  };
  auto bare = distributions({5, 9, 7});
  for (int pads : {1, 4, 10}) {
    std::vector<int> padded = {5, 9, 7};
    padded.resize(3 + static_cast<std::size_t>(pads), GenerationVocab::kPad);
    CHECK(distributions(padded) == bare);
  }
}

TEST_CASE("the memorized five-pair model reproduces every reply") {
  auto checkpoint = Checkpoint::load(testing::memorized_run());
  Corpus corpus;
  corpus.labels = EmotionLabels::canonical();
  corpus.conversations = testing::five_pair_conversations();
  auto examples = build_examples(corpus.conversations, checkpoint.config.max_len);
  auto indexed = index_for(checkpoint, examples.examples);
  auto predict = model_predictor(*checkpoint.model, checkpoint.vocab, checkpoint.config.max_len);
  REQUIRE(indexed.size() == 5);
  for (std::size_t i = 0; i < indexed.size(); ++i) {
    auto p = predict(examples.examples[i], indexed[i]);
    CHECK(p.words == examples.examples[i].target_words);
  }
}
