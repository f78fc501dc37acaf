#include "empathia/emotion_encoder.hpp"
#include "empathia/error.hpp"
#include "empathia/optimizer.hpp"
#include "empathia/training.hpp"
#include "gradcheck.hpp"
#include "synthetic.hpp"

#include <doctest.h>

#include <cmath>
#include <random>
#include <set>

using namespace empathia;
using ad::Matrix;
using ad::Var;

namespace {

EmotionEncoderConfig small_config(int layers, int dim, int heads, int classes = 32) {
  EmotionEncoderConfig c;
  c.vocab_size = 40;
  c.layers = layers;
  c.dim = dim;
  c.heads = heads;
  c.ffn = 2 * dim;
  c.max_positions = 16;
  c.embedding_dim = dim;
  c.num_classes = classes;
  return c;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = d(rng);
  return m;
}

}  // namespace

TEST_CASE("encoder returns one [CLS] row per layer, deterministically") {
  std::mt19937_64 rng(1);
  ad::ParameterSet params;
  TransformerEncoder enc(params, "enc", small_config(3, 8, 2), rng);
  const std::vector<int> tokens = {2, 7, 9, 11};
  auto a = enc.encode_layers(tokens);
  auto b = enc.encode_layers(tokens);
  CHECK(a.rows.rows() == 3);
  CHECK(a.rows.cols() == 8);
  CHECK(a.rows == b.rows);
}

TEST_CASE("encoder stacks differ when tokens after the first differ") {
  std::mt19937_64 rng(2);
  ad::ParameterSet params;
  TransformerEncoder enc(params, "enc", small_config(2, 8, 2), rng);
  const std::vector<int> a = {2, 7, 9, 11};
  const std::vector<int> b = {2, 7, 9, 12};
  CHECK(enc.encode_layers(a).rows != enc.encode_layers(b).rows);
}

TEST_CASE("encoder input errors") {
  std::mt19937_64 rng(3);
  ad::ParameterSet params;
  TransformerEncoder enc(params, "enc", small_config(1, 4, 1), rng);
  CHECK_THROWS_AS(enc.encode_layers(std::vector<int>{}), InputError);
  CHECK_THROWS_AS(enc.encode_layers(std::vector<int>{5, 6}), InputError);
  CHECK_THROWS_AS(enc.encode_layers(std::vector<int>(17, 2)), LengthError);
  CHECK_NOTHROW(enc.encode_layers(std::vector<int>(16, 2)));
}

TEST_CASE("a zero bilinear matrix gives uniform weights and the row mean") {
  std::mt19937_64 rng(4);
  Matrix stack = random_matrix(12, 6, rng);
  auto rep = pool_cls(stack, Matrix::Zero(6, 6), random_matrix(1, 6, rng).row(0));
  for (Eigen::Index l = 0; l < 12; ++l) CHECK(rep.weights(l) == doctest::Approx(1.0 / 12.0));
  Eigen::RowVectorXd mean = stack.colwise().mean();
  CHECK((rep.vector - mean).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("scores of (ln 2, 0, ..., 0) give weights 2/13 and 1/13") {
  Matrix stack = Matrix::Identity(12, 12);
  Eigen::RowVectorXd q = Eigen::RowVectorXd::Zero(12);
  q(0) = std::log(2.0);
  auto rep = pool_cls(stack, Matrix::Identity(12, 12), q);
  CHECK(rep.weights(0) == doctest::Approx(2.0 / 13.0));
  for (Eigen::Index l = 1; l < 12; ++l) CHECK(rep.weights(l) == doctest::Approx(1.0 / 13.0));
}

TEST_CASE("3-layer pooling at d=4 matches a hand-computed weighted sum") {
  Matrix stack(3, 4);
  stack << 0.5, -1.0, 2.0, 0.0,  //
      1.5, 0.25, -0.5, 1.0,      //
      -0.75, 0.5, 0.0, -2.0;
  Matrix wg(4, 4);
  wg << 0.1, 0.2, 0.0, -0.3,  //
      0.0, 0.4, 0.1, 0.0,     //
      -0.2, 0.0, 0.3, 0.1,    //
      0.5, -0.1, 0.0, 0.2;
  Eigen::RowVectorXd q(4);
  q << 1.0, -0.5, 0.25, 2.0;
  double scores[3];
  for (int l = 0; l < 3; ++l) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = 0; j < 4; ++j) s += stack(l, i) * wg(i, j) * q(j);
    }
    scores[l] = s;
  }
  const double z = std::exp(scores[0]) + std::exp(scores[1]) + std::exp(scores[2]);
  double expected[4] = {0, 0, 0, 0};
  for (int l = 0; l < 3; ++l) {
    for (int i = 0; i < 4; ++i) expected[i] += std::exp(scores[l]) / z * stack(l, i);
  }
  auto rep = pool_cls(stack, wg, q);
  for (int i = 0; i < 4; ++i) CHECK(rep.vector(i) == doctest::Approx(expected[i]).epsilon(1e-12));
}

TEST_CASE("a dominant score selects exactly that layer") {
  std::mt19937_64 rng(5);
  Matrix stack = random_matrix(4, 4, rng);
  Matrix selector = Matrix::Zero(4, 4);
  selector(0, 0) = 1.0;
  stack(2, 0) = 1.0;
  for (Eigen::Index l = 0; l < 4; ++l) {
    if (l != 2) stack(l, 0) = 0.0;
  }
  Eigen::RowVectorXd q = Eigen::RowVectorXd::Zero(4);
  q(0) = 5000.0;
  auto rep = pool_cls(stack, selector, q);
  CHECK(rep.vector == Eigen::RowVectorXd(stack.row(2)));
}

TEST_CASE("pooling rejects non-finite stacks") {
  Matrix stack = Matrix::Zero(2, 2);
  stack(1, 1) = std::nan("");
  CHECK_THROWS_AS(pool_cls(stack, Matrix::Zero(2, 2), Eigen::RowVectorXd::Zero(2)), NumericError);
}

TEST_CASE("pooling weights stay on the simplex over random forward passes") {
  std::mt19937_64 rng(6);
  ad::ParameterSet params;
  auto cfg = small_config(3, 8, 2);
  TransformerBackbone backbone(params, cfg, rng);
  std::uniform_int_distribution<int> token(3, cfg.vocab_size - 1);
  std::uniform_int_distribution<int> len(1, 15);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> tokens = {cfg.cls_id};
    const int n = len(rng);
    for (int i = 0; i < n; ++i) tokens.push_back(token(rng));
    auto rep = backbone.represent(tokens);
    CHECK(rep.weights.minCoeff() >= 0.0);
    CHECK(std::abs(rep.weights.sum() - 1.0) < 1e-5);
  }
}

TEST_CASE("classifier head") {
  SUBCASE("zero weights are uniform") {
    auto d = classify_emotion(Eigen::RowVectorXd::Ones(4), Matrix::Zero(4, 32));
    for (Eigen::Index k = 0; k < 32; ++k) CHECK(d.probs(k) == doctest::Approx(1.0 / 32.0));
  }
  SUBCASE("logits [1, 0, ..., 0]") {
    Matrix w = Matrix::Zero(1, 32);
    w(0, 0) = 1.0;
    auto d = classify_emotion(Eigen::RowVectorXd::Ones(1), w);
    CHECK(d.probs(0) == doctest::Approx(std::exp(1.0) / (std::exp(1.0) + 31.0)));
    CHECK(d.probs.sum() == doctest::Approx(1.0));
  }
  SUBCASE("a large logit wins") {
    Matrix w = Matrix::Zero(1, 32);
    w(0, 17) = 1e6;
    auto d = classify_emotion(Eigen::RowVectorXd::Ones(1), w);
    CHECK(d.argmax() == 17);
    CHECK(d.probs.allFinite());
  }
}

TEST_CASE("emotion loss") {
  Matrix certain = Matrix::Zero(2, 4);
  certain(0, 1) = 1.0;
  certain(1, 3) = 1.0;
  const std::vector<int> gold = {1, 3};
  CHECK(emotion_loss(certain, gold) == 0.0);

  Matrix uniform = Matrix::Constant(1, 32, 1.0 / 32.0);
  CHECK(emotion_loss(uniform, std::vector<int>{5}) == doctest::Approx(std::log(32.0)));

  Matrix halves = Matrix::Zero(2, 4);
  halves(0, 0) = 0.5;
  halves(1, 2) = 0.25;
  CHECK(emotion_loss(halves, std::vector<int>{0, 2}) == doctest::Approx((std::log(2.0) + std::log(4.0)) / 2.0));

  ad::LogFloorCounter counter;
  CHECK(emotion_loss(halves, std::vector<int>{1, 2}, &counter) ==
        doctest::Approx((-std::log(1e-12) + std::log(4.0)) / 2.0));
  CHECK(counter.hits.load() == 1);

  CHECK_THROWS_AS(emotion_loss(halves, std::vector<int>{0}), InputError);
  CHECK_THROWS_AS(emotion_loss(halves, std::vector<int>{0, 4}), InputError);
}

TEST_CASE("backbone kinds") {
  CHECK(parse_backbone("bi-lstm") == BackboneKind::kBiLstm);
  CHECK(parse_backbone("bi-lstm-attn") == BackboneKind::kBiLstmAttn);
  CHECK(parse_backbone("pretrained-transformer") == BackboneKind::kTransformer);
  CHECK_THROWS_AS(parse_backbone("gru"), ConfigError);

  std::mt19937_64 rng(7);
  for (auto kind : {BackboneKind::kTransformer, BackboneKind::kBiLstm, BackboneKind::kBiLstmAttn}) {
    ad::ParameterSet params;
    auto cfg = small_config(2, 12, 2);
    cfg.kind = kind;
    auto backbone = make_backbone(cfg, params, rng);
    CHECK(backbone->kind() == kind);
    auto rep = backbone->represent(std::vector<int>{2, 5, 6});
    CHECK(rep.vector.size() == 12);
  }
}

TEST_CASE("attention pooling over a single token puts all weight on it") {
  std::mt19937_64 rng(8);
  ad::ParameterSet params;
  BiLstmBackbone backbone(params, small_config(1, 8, 1), true, rng);
  auto rep = backbone.represent(std::vector<int>{9});
  REQUIRE(rep.weights.size() == 1);
  CHECK(rep.weights(0) == 1.0);
}

TEST_CASE("emotion loss gradients for W_g, q and W_E at d=4, L=3, 4 classes") {
  std::mt19937_64 rng(9);
  ad::ParameterSet params;
  auto cfg = small_config(3, 4, 2, 4);
  TransformerBackbone backbone(params, cfg, rng);
  EmotionClassifier head(params, 4, 4, rng);
  // Spread the pooling parameters so the weights are not near-uniform.
  params.at("emotion.pool.bilinear").value = random_matrix(4, 4, rng);
  params.at("emotion.classifier.weight").value = random_matrix(4, 4, rng);
  const std::vector<std::vector<int>> inputs = {{2, 5, 9}, {2, 11, 3, 7}, {2, 8}};
  const std::vector<int> gold = {1, 3, 0};
  auto run = [&](bool backward) {
    ad::Tape tape(backward);
    Var total;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      auto rep = backbone.represent(tape, inputs[i], ForwardMode{});
      Var probs = head.classify(tape, rep.vector, ForwardMode{}, 0.1);
      Var nll = ad::neg_log_prob(probs, gold[i], kLogFloor, nullptr);
      total = i == 0 ? nll : ad::add(total, nll);
    }
    Var loss = ad::scale(total, 1.0 / static_cast<double>(inputs.size()));
    if (backward) tape.backward(loss);
    return loss.scalar();
  };
  params.zero_grad();
  run(true);
  auto result = testing::check_gradients(
      params, {"emotion.pool.bilinear", "emotion.pool.query", "emotion.classifier.weight"}, [&] { return run(false); },
      1000, rng);
  CHECK(result.checked == 16 + 4 + 16);
  CHECK_MESSAGE(result.failed == 0, "worst " << result.worst << " at " << result.worst_name);
}

TEST_CASE("the toy encoder overfits 32 one-per-class examples") {
  std::mt19937_64 rng(10);
  ad::ParameterSet params;
  EmotionEncoderConfig cfg = small_config(2, 32, 2);
  cfg.ffn = 64;
  cfg.vocab_size = 60;
  TransformerBackbone backbone(params, cfg, rng);
  EmotionClassifier head(params, 32, 32, rng);
  std::vector<std::vector<int>> inputs;
  std::uniform_int_distribution<int> token(3, 59);
  for (int k = 0; k < 32; ++k) inputs.push_back({2, token(rng), token(rng), token(rng)});
  AdamW::Options options;
  options.learning_rate = 5e-3;
  AdamW optimizer(options);
  double loss = 0.0;
  int steps = 0;
  for (; steps < 200; ++steps) {
    params.zero_grad();
    ad::Tape tape;
    Var total;
    for (int k = 0; k < 32; ++k) {
      auto rep = backbone.represent(tape, inputs[static_cast<std::size_t>(k)], ForwardMode{});
      Var nll = ad::neg_log_prob(head.classify(tape, rep.vector, ForwardMode{}, 0.0), k, kLogFloor, nullptr);
      total = k == 0 ? nll : ad::add(total, nll);
    }
    Var mean = ad::scale(total, 1.0 / 32.0);
    loss = mean.scalar();
    if (loss < 0.05) break;
    tape.backward(mean);
    clip_grad_norm(params, 1.0);
    optimizer.step(params);
  }
  MESSAGE("loss " << loss << " after " << steps << " steps");
  CHECK(loss < 0.05);
}

TEST_CASE("the three backbones reach distinct F1 after 5 toy epochs") {
  Corpus corpus;
  corpus.labels = EmotionLabels::canonical();
  corpus.conversations = testing::keyword_conversations(96, 6, 31, "k:");
  std::set<double> scores;
  for (auto kind : {BackboneKind::kTransformer, BackboneKind::kBiLstm, BackboneKind::kBiLstmAttn}) {
    auto cfg = testing::toy_train_config(5, 3);
    cfg.backbone = kind;
    TrainOptions options;
    options.validation_metrics = false;
    auto result = train(cfg, corpus, nullptr, testing::scratch_dir("backbones"), options);
    const double f1 = evaluate(result.final, corpus).f1.macro_f1;
    MESSAGE(backbone_name(kind) << " macro-F1 " << f1);
    scores.insert(f1);
  }
  CHECK(scores.size() == 3);
}
