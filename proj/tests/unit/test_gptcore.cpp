#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"

using namespace trackgpt;
using namespace trackgpt::gptcore;

namespace {

ModelConfig tiny(int vocab = 64, int block = 8, int layers = 2, int heads = 2, int d = 16) {
  ModelConfig c;
  c.vocab_size = vocab;
  c.block_size = block;
  c.n_layer = layers;
  c.n_head = heads;
  c.d_model = d;
  c.seed = 11;
  return c;
}

TokenMatrix random_tokens(int rows, int cols, int vocab, Rng& rng) {
  TokenMatrix m(rows, cols);
  for (auto& v : m.data) v = static_cast<std::int32_t>(rng.below(static_cast<std::uint64_t>(vocab)));
  return m;
}

Batch shifted_batch(const TokenMatrix& seq) {
  Batch b{TokenMatrix(seq.rows, seq.cols - 1), TokenMatrix(seq.rows, seq.cols - 1)};
  for (int r = 0; r < seq.rows; ++r) {
    for (int c = 0; c + 1 < seq.cols; ++c) {
      b.inputs.at(r, c) = seq.at(r, c);
      b.targets.at(r, c) = seq.at(r, c + 1);
    }
  }
  return b;
}

}  // namespace

TEST_CASE("parameter count matches the closed form") {
  for (const auto& c : {ModelConfig{}, tiny(), tiny(100, 32, 3, 4, 24)}) {
    const std::size_t V = c.vocab_size, B = c.block_size, L = c.n_layer, d = c.d_model;
    const std::size_t expected = V * d + B * d + L * (12 * d * d + 13 * d) + 2 * d;
    CHECK(parameter_count(c) == expected);
    CHECK(ParamLayout(c).total() == expected);
    CHECK(init_model(c).weights.size() == expected);
  }
  CHECK(parameter_count(ModelConfig{}) == 9198336);
}

TEST_CASE("model config validation and record round-trip") {
  ModelConfig c = tiny();
  c.dropout = 0.125;
  CHECK(ModelConfig::parse_record(c.to_record()) == c);
  ModelConfig bad = tiny();
  bad.d_model = 15;
  CHECK_THROWS_AS(bad.validate(), Error);
  bad = tiny();
  bad.vocab_size = 70000;
  CHECK_THROWS_AS(bad.validate(), Error);
}

TEST_CASE("uniform logits give a loss of ln(vocab)") {
  Matrix<float> logits = Matrix<float>::Zero(6, 65536);
  TokenMatrix targets(2, 3);
  targets.data = {1, 500, 65535, 7, kIgnoreIndex, 0};
  CHECK(cross_entropy(logits, targets) == doctest::Approx(std::log(65536.0)).epsilon(1e-12));

  // A model with zero token embeddings emits zero logits through the tied head.
  ModelConfig c = tiny(65536, 4, 1, 1, 8);
  Checkpoint ck = init_model(c);
  const ParamLayout lay(c);
  std::fill(ck.weights.begin() + lay.wte, ck.weights.begin() + lay.wte + 65536 * 8, 0.0f);
  Rng rng(1);
  const Batch b = shifted_batch(random_tokens(2, 5, 65536, rng));
  std::vector<float> grad(ck.weights.size());
  const double loss = loss_and_grad<float>(c, ck.weights, b, grad);
  CHECK(std::abs(loss - 11.0904) < 1e-3);
}

TEST_CASE("logits are causal") {
  const ModelConfig c = tiny(64, 16, 2, 4, 32);
  const Checkpoint ck = init_model(c);
  Rng rng(2);
  const TokenMatrix base = random_tokens(1, 16, 64, rng);
  const Matrix<float> ref = forward(ck, base);
  for (int j = 0; j < 16; ++j) {
    TokenMatrix pert = base;
    pert.at(0, j) = (pert.at(0, j) + 17) % 64;
    const Matrix<float> out = forward(ck, pert);
    const std::size_t prefix = static_cast<std::size_t>(j) * 64;
    CHECK(std::memcmp(ref.data(), out.data(), prefix * sizeof(float)) == 0);
    if (j < 15) CHECK(std::memcmp(ref.data() + prefix, out.data() + prefix, 64 * sizeof(float)) != 0);
  }
}

TEST_CASE("forward_last equals the last row of forward") {
  const ModelConfig c = tiny();
  const Checkpoint ck = init_model(c);
  Rng rng(3);
  const TokenMatrix t = random_tokens(3, 8, 64, rng);
  const Matrix<float> all = forward(ck, t);
  const Matrix<float> last = forward_last<float>(c, ck.weights, t);
  for (int r = 0; r < 3; ++r) {
    for (int v = 0; v < 64; ++v) CHECK(last(r, v) == doctest::Approx(all(r * 8 + 7, v)).epsilon(1e-5));
  }
}

TEST_CASE("analytic gradients match central differences") {
  const ModelConfig c = tiny(64, 8, 2, 2, 16);
  Weights<double> w{c, {}};
  const Checkpoint ck = init_model(c);
  w.data.assign(ck.weights.begin(), ck.weights.end());
  Rng rng(4);
  Batch b = shifted_batch(random_tokens(2, 7, 64, rng));
  b.targets.at(1, 5) = kIgnoreIndex;
  const auto r = gradient_check(w, b);
  CHECK(r.checked == parameter_count(c));
  CHECK(r.max_rel_error < 1e-5);
}

TEST_CASE("dropout is off without a generator") {
  ModelConfig c = tiny();
  c.dropout = 0.5;
  const Checkpoint ck = init_model(c);
  Rng rng(5);
  const Batch b = shifted_batch(random_tokens(2, 8, 64, rng));
  std::vector<float> g1(ck.weights.size()), g2(ck.weights.size());
  const double l1 = loss_and_grad<float>(c, ck.weights, b, g1);
  const double l2 = loss_and_grad<float>(c, ck.weights, b, g2);
  CHECK(l1 == l2);
  Rng drop(6);
  std::vector<float> g3(ck.weights.size());
  CHECK(loss_and_grad<float>(c, ck.weights, b, g3, &drop) != l1);
}

TEST_CASE("eligible offsets") {
  CHECK(eligible_offsets(0, 8) == 0);
  CHECK(eligible_offsets(1, 8) == 0);
  CHECK(eligible_offsets(2, 8) == 1);
  CHECK(eligible_offsets(9, 8) == 1);
  CHECK(eligible_offsets(10, 8) == 2);
  CHECK(eligible_offsets(100, 8) == 92);
}

TEST_CASE("batches never mix tracks") {
  // Track i uses tokens [100 i, 100 i + 99].
  std::vector<trackprep::TokenTrack> corpus;
  Rng gen(7);
  for (int i = 0; i < 12; ++i) {
    trackprep::TokenTrack t;
    const int n = 1 + static_cast<int>(gen.below(40));
    for (int k = 0; k < n; ++k) t.tokens.push_back(TokenId{static_cast<std::uint16_t>(100 * i + gen.below(100))});
    corpus.push_back(t);
  }
  const ModelConfig c = tiny(2000, 16);
  Rng rng(8);
  for (int it = 0; it < 50; ++it) {
    const Batch b = sample_batch(corpus, c, 32, rng);
    CHECK(b.inputs.cols <= 16);
    for (int r = 0; r < b.inputs.rows; ++r) {
      std::set<int> owners;
      for (int col = 0; col < b.inputs.cols; ++col) {
        if (b.targets.at(r, col) == kIgnoreIndex) continue;
        owners.insert(b.inputs.at(r, col) / 100);
        owners.insert(b.targets.at(r, col) / 100);
      }
      CHECK(owners.size() == 1);
    }
  }
  std::vector<trackprep::TokenTrack> empty(3);
  CHECK_THROWS_AS(sample_batch(empty, c, 4, rng), Error);
}

TEST_CASE("learning rate schedule") {
  TrainParams p;
  p.lr = 1e-3;
  p.min_lr = 1e-4;
  p.warmup = 10;
  CHECK(learning_rate(p, 0, 110) == doctest::Approx(1e-4));
  CHECK(learning_rate(p, 9, 110) == doctest::Approx(1e-3));
  CHECK(learning_rate(p, 10, 110) == doctest::Approx(1e-3));
  CHECK(learning_rate(p, 60, 110) == doctest::Approx(5.5e-4));
  CHECK(learning_rate(p, 110, 110) == doctest::Approx(1e-4));
}

TEST_CASE("a tiny model memorizes a sequence") {
  ModelConfig c = tiny(32, 16, 2, 2, 32);
  std::vector<trackprep::TokenTrack> corpus(1);
  for (int k = 0; k < 17; ++k) corpus[0].tokens.push_back(TokenId{static_cast<std::uint16_t>((k * 7) % 32)});
  TrainParams p;
  p.steps = 300;
  p.batch_size = 4;
  p.lr = 3e-3;
  p.min_lr = 3e-4;
  p.warmup = 20;
  double last_loss = 0.0;
  const Checkpoint ck = train(init_model(c), corpus, p, [&](const TrainRecord& r) { last_loss = r.loss; });
  CHECK(ck.step == 300);
  CHECK(last_loss < 0.05);

  SamplerConfig s{0.05, 1, 12, 0};
  Rng rng(9);
  const std::vector<TokenId> prompt(corpus[0].tokens.begin(), corpus[0].tokens.begin() + 4);
  const auto out = generate(ck, prompt, s, rng);
  REQUIRE(out.size() == 12);
  for (int k = 0; k < 12; ++k) CHECK(out[k] == corpus[0].tokens[4 + k]);
}

TEST_CASE("training is reproducible and resumable") {
  const ModelConfig c = tiny();
  std::vector<trackprep::TokenTrack> corpus(3);
  Rng gen(10);
  for (auto& t : corpus) {
    for (int k = 0; k < 20; ++k) t.tokens.push_back(TokenId{static_cast<std::uint16_t>(gen.below(64))});
  }
  TrainParams p;
  p.steps = 12;
  p.batch_size = 3;
  p.warmup = 2;
  const Checkpoint a = train(init_model(c), corpus, p);
  const Checkpoint b = train(init_model(c), corpus, p);
  CHECK(a.weights == b.weights);

  TrainParams half = p;
  half.steps = 5;
  half.total_steps = 12;
  Checkpoint r = train(init_model(c), corpus, half);
  half.steps = 7;
  r = train(r, corpus, half);
  CHECK(r.step == 12);
  CHECK(r.weights == a.weights);
  REQUIRE(r.optimizer);
  CHECK(r.optimizer->m == a.optimizer->m);
}

TEST_CASE("sampling distribution") {
  const std::vector<float> logits{1.0f, 2.0f, 3.0f};
  const auto p = sampling_distribution(logits, 1.0);
  double sum = 0.0;
  for (double v : p) sum += v;
  CHECK(sum == doctest::Approx(1.0));
  CHECK(p[2] / p[1] == doctest::Approx(std::exp(1.0)));
  const auto cold = sampling_distribution(logits, 0.5);
  CHECK(cold[2] / cold[1] == doctest::Approx(std::exp(2.0)));
  CHECK_THROWS_AS(sampling_distribution(logits, 0.0), Error);

  Rng rng(12);
  std::vector<int> hist(3);
  for (int i = 0; i < 20000; ++i) ++hist[static_cast<std::size_t>(sample_token(logits, 1.0, rng))];
  CHECK(hist[2] / 20000.0 == doctest::Approx(p[2]).epsilon(0.03));
}

TEST_CASE("cached decoding agrees with full recomputation") {
  const ModelConfig c = tiny(64, 8, 2, 2, 16);
  const Checkpoint ck = init_model(c);
  const std::vector<TokenId> prompt{{3}, {9}, {27}, {17}, {51}};
  const SamplerConfig s{1.0, 1, 10, 0};  // slides past the 8-token block
  Rng a(13), b(13);
  const auto fast = generate(ck, prompt, s, a);

  std::vector<std::int32_t> ctx;
  for (const auto& t : prompt) ctx.push_back(t.value);
  std::vector<TokenId> slow;
  for (int step = 0; step < s.max_steps; ++step) {
    const int n = std::min<int>(static_cast<int>(ctx.size()), c.block_size);
    TokenMatrix window(1, n);
    std::copy(ctx.end() - n, ctx.end(), window.data.begin());
    const Matrix<float> logits = forward_last<float>(c, ck.weights, window);
    const auto tok = sample_token(std::span<const float>(logits.data(), 64), s.temperature, b);
    ctx.push_back(tok);
    slow.push_back(TokenId{static_cast<std::uint16_t>(tok)});
  }
  CHECK(fast == slow);

  std::vector<Rng> rngs{Rng(13), Rng(14)};
  const auto batch = generate_batch(ck, prompt, s, rngs);
  CHECK(batch[0] == fast);
  CHECK_THROWS_AS(generate(ck, std::vector<TokenId>(9, TokenId{1}), s, a), Error);
}

TEST_CASE("checkpoint file round-trip") {
  ModelConfig c = tiny();
  Checkpoint ck = init_model(c);
  ck.codec.prefix = geocodec::CellId::parse("u0", 9);
  ck.dt = 600;
  ck.step = 42;
  ck.optimizer = AdamState{ParamVector(ck.weights.size(), 0.5f), ParamVector(ck.weights.size(), 0.25f)};
  std::stringstream s1;
  write_checkpoint(s1, ck);
  const Checkpoint back = read_checkpoint(s1);
  CHECK(back.config == c);
  CHECK(back.weights == ck.weights);
  CHECK(back.codec == ck.codec);
  CHECK(back.dt == 600);
  CHECK(back.step == 42);
  REQUIRE(back.optimizer);
  CHECK(back.optimizer->v == ck.optimizer->v);
  std::stringstream s2;
  write_checkpoint(s2, back);
  std::stringstream s3;
  write_checkpoint(s3, ck);
  CHECK(s2.str() == s3.str());

  std::string bytes = s3.str();
  bytes.resize(bytes.size() / 2);
  std::stringstream truncated(bytes);
  CHECK_THROWS_AS(read_checkpoint(truncated), Error);
}
