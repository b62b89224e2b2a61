#include <algorithm>
#include <cmath>
#include <limits>

#include "kernels.hpp"
#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"

namespace trackgpt::gptcore {

void SamplerConfig::validate() const {
  if (!(temperature > 0.0) || !std::isfinite(temperature)) throw Error(ErrorCode::Config, "temperature must be positive");
  if (k_samples < 1) throw Error(ErrorCode::Config, "k_samples must be positive");
  if (max_steps < 0) throw Error(ErrorCode::Config, "max_steps must be non-negative");
}

std::vector<double> sampling_distribution(std::span<const float> logits, double temperature) {
  if (!(temperature > 0.0)) throw Error(ErrorCode::Config, "temperature must be positive");
  if (logits.empty()) throw Error(ErrorCode::Input, "empty logit vector");
  Eigen::ArrayXd p = Eigen::Map<const Eigen::ArrayXf>(logits.data(), static_cast<Eigen::Index>(logits.size()))
                        .cast<double>();
  p = ((p - p.maxCoeff()) / temperature).exp();
  p /= p.sum();
  return std::vector<double>(p.data(), p.data() + p.size());
}

std::int32_t sample_token(std::span<const float> logits, double temperature, Rng& rng) {
  const std::vector<double> p = sampling_distribution(logits, temperature);
  const double u = rng.uniform();
  double acc = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0.0) continue;
    acc += p[i];
    last_nonzero = i;
    if (u < acc) return static_cast<std::int32_t>(i);
  }
  return static_cast<std::int32_t>(last_nonzero);
}

namespace {

using namespace detail;

/// Incremental decoder with per-layer key/value caches. Every row advances
/// one position per step; positions must stay below block_size.
class CachedDecoder {
 public:
  CachedDecoder(const Checkpoint& ckpt, int rows)
      : cfg_(ckpt.config), lay_(ckpt.config), P_(ckpt.weights.data()), rows_(rows) {
    const std::size_t per = static_cast<std::size_t>(rows) * cfg_.block_size * cfg_.d_model;
    keys_.assign(lay_.blocks.size(), std::vector<float>(per));
    values_.assign(lay_.blocks.size(), std::vector<float>(per));
  }

  int position() const { return pos_; }

  /// Feeds one token per row and returns the next-token logits [rows, vocab].
  Matrix<float> step(std::span<const std::int32_t> tokens) {
    if (pos_ >= cfg_.block_size) throw Error(ErrorCode::Input, "decoder context is full");
    const int d = cfg_.d_model, hd = d / cfg_.n_head, blk = cfg_.block_size;
    Matrix<float> x(rows_, d);
    for (int r = 0; r < rows_; ++r) {
      const float* te = P_ + lay_.wte + static_cast<std::size_t>(tokens[static_cast<std::size_t>(r)]) * d;
      const float* pe = P_ + lay_.wpe + static_cast<std::size_t>(pos_) * d;
      for (int k = 0; k < d; ++k) x(r, k) = te[k] + pe[k];
    }
    const float scale = 1.0f / std::sqrt(static_cast<float>(hd));
    Matrix<float> a, qkv, att, z, pre;
    std::vector<float> p(static_cast<std::size_t>(pos_ + 1));
    for (std::size_t l = 0; l < lay_.blocks.size(); ++l) {
      const auto& B = lay_.blocks[l];
      layer_norm<float>(x, P_ + B.ln1_g, P_ + B.ln1_b, a, nullptr);
      qkv.noalias() = a * Eigen::Map<const Matrix<float>>(P_ + B.qkv_w, d, 3 * d);
      qkv.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_ + B.qkv_b, 3 * d);
      float* kc = keys_[l].data();
      float* vc = values_[l].data();
      att.setZero(rows_, d);
      for (int r = 0; r < rows_; ++r) {
        float* krow = kc + (static_cast<std::size_t>(r) * blk + pos_) * d;
        float* vrow = vc + (static_cast<std::size_t>(r) * blk + pos_) * d;
        std::copy_n(&qkv(r, d), d, krow);
        std::copy_n(&qkv(r, 2 * d), d, vrow);
        for (int h = 0; h < cfg_.n_head; ++h) {
          const float* q = &qkv(r, h * hd);
          float mx = -std::numeric_limits<float>::infinity();
          for (int j = 0; j <= pos_; ++j) {
            const float* k = kc + (static_cast<std::size_t>(r) * blk + j) * d + h * hd;
            float s = 0;
            for (int e = 0; e < hd; ++e) s += q[e] * k[e];
            p[j] = s * scale;
            mx = std::max(mx, p[j]);
          }
          float sum = 0;
          for (int j = 0; j <= pos_; ++j) {
            p[j] = std::exp(p[j] - mx);
            sum += p[j];
          }
          float* o = &att(r, h * hd);
          for (int j = 0; j <= pos_; ++j) {
            const float w = p[j] / sum;
            const float* v = vc + (static_cast<std::size_t>(r) * blk + j) * d + h * hd;
            for (int e = 0; e < hd; ++e) o[e] += w * v[e];
          }
        }
      }
      z.noalias() = att * Eigen::Map<const Matrix<float>>(P_ + B.proj_w, d, d);
      z.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_ + B.proj_b, d);
      x += z;
      layer_norm<float>(x, P_ + B.ln2_g, P_ + B.ln2_b, a, nullptr);
      pre.noalias() = a * Eigen::Map<const Matrix<float>>(P_ + B.fc_w, d, 4 * d);
      pre.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_ + B.fc_b, 4 * d);
      pre = pre.unaryExpr([](float v) { return gelu(v); });
      z.noalias() = pre * Eigen::Map<const Matrix<float>>(P_ + B.fc2_w, 4 * d, d);
      z.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(P_ + B.fc2_b, d);
      x += z;
    }
    layer_norm<float>(x, P_ + lay_.lnf_g, P_ + lay_.lnf_b, a, nullptr);
    Matrix<float> logits;
    logits.noalias() = a * Eigen::Map<const Matrix<float>>(P_ + lay_.wte, cfg_.vocab_size, d).transpose();
    ++pos_;
    return logits;
  }

 private:
  const ModelConfig& cfg_;
  ParamLayout lay_;
  const float* P_;
  int rows_;
  int pos_ = 0;
  std::vector<std::vector<float>> keys_;
  std::vector<std::vector<float>> values_;
};

}  // namespace

std::vector<std::vector<TokenId>> generate_batch(const Checkpoint& ckpt, std::span<const TokenId> prompt,
                                                 const SamplerConfig& sampler, std::span<Rng> rngs) {
  sampler.validate();
  const ModelConfig& cfg = ckpt.config;
  if (ckpt.weights.size() != parameter_count(cfg)) throw Error(ErrorCode::Input, "checkpoint weights do not match config");
  if (prompt.empty()) throw Error(ErrorCode::Input, "empty prompt");
  if (static_cast<int>(prompt.size()) > cfg.block_size) {
    throw Error(ErrorCode::Input, "prompt of " + std::to_string(prompt.size()) + " tokens exceeds block size " +
                                      std::to_string(cfg.block_size));
  }
  for (const auto& t : prompt) {
    if (t.value >= cfg.vocab_size) throw Error(ErrorCode::Input, "prompt token outside the model vocabulary");
  }
  const int rows = static_cast<int>(rngs.size());
  std::vector<std::vector<TokenId>> out(rngs.size());
  if (rows == 0 || sampler.max_steps == 0) return out;

  // Prompt tokens go to every row; once the context is full, the newest
  // block_size tokens are recomputed from position 0.
  std::vector<std::vector<std::int32_t>> context(rngs.size());
  for (auto& c : context) {
    c.reserve(prompt.size() + static_cast<std::size_t>(sampler.max_steps));
    for (const auto& t : prompt) c.push_back(t.value);
  }
  CachedDecoder decoder(ckpt, rows);
  Matrix<float> logits;
  std::vector<std::int32_t> feed(rngs.size());
  for (std::size_t i = 0; i < prompt.size(); ++i) {
    std::fill(feed.begin(), feed.end(), prompt[i].value);
    logits = decoder.step(feed);
  }

  for (int s = 0; s < sampler.max_steps; ++s) {
    for (int r = 0; r < rows; ++r) {
      const std::span<const float> row(logits.data() + static_cast<std::size_t>(r) * logits.cols(),
                                       static_cast<std::size_t>(logits.cols()));
      const std::int32_t tok = sample_token(row, sampler.temperature, rngs[static_cast<std::size_t>(r)]);
      context[static_cast<std::size_t>(r)].push_back(tok);
      out[static_cast<std::size_t>(r)].push_back(TokenId{static_cast<std::uint16_t>(tok)});
      feed[static_cast<std::size_t>(r)] = tok;
    }
    if (s + 1 == sampler.max_steps) break;
    if (decoder.position() < cfg.block_size) {
      logits = decoder.step(feed);
    } else {
      // Slide: the newest block_size tokens restart at position 0.
      TokenMatrix window(rows, cfg.block_size);
      for (int r = 0; r < rows; ++r) {
        const auto& c = context[static_cast<std::size_t>(r)];
        std::copy(c.end() - cfg.block_size, c.end(), window.data.begin() + static_cast<std::ptrdiff_t>(r) * cfg.block_size);
      }
      logits = forward_last<float>(cfg, std::span<const float>(ckpt.weights), window);
    }
  }
  return out;
}

std::vector<TokenId> generate(const Checkpoint& ckpt, std::span<const TokenId> prompt, const SamplerConfig& sampler,
                              Rng& rng) {
  std::span<Rng> one(&rng, 1);
  return generate_batch(ckpt, prompt, sampler, one).front();
}

}  // namespace trackgpt::gptcore
