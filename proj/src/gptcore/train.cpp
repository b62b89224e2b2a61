#include <algorithm>
#include <cmath>
#include <numbers>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"

namespace trackgpt::gptcore {

std::size_t eligible_offsets(std::size_t track_len, int block_size) {
  if (track_len < 2) return 0;
  const auto block = static_cast<std::size_t>(block_size);
  return track_len > block ? std::max<std::size_t>(1, track_len - block) : 1;
}

Batch sample_batch(std::span<const trackprep::TokenTrack> corpus, const ModelConfig& config, int batch_size,
                   Rng& rng) {
  if (batch_size < 1) throw Error(ErrorCode::Config, "batch_size must be positive");
  std::vector<std::uint64_t> cumulative;
  cumulative.reserve(corpus.size());
  std::uint64_t total = 0;
  for (const auto& t : corpus) {
    total += eligible_offsets(t.tokens.size(), config.block_size);
    cumulative.push_back(total);
  }
  if (total == 0) throw Error(ErrorCode::Data, "corpus has no track with at least two tokens");

  struct Row {
    std::size_t track;
    std::size_t offset;
    int len;
  };
  std::vector<Row> rows;
  rows.reserve(static_cast<std::size_t>(batch_size));
  int width = 0;
  for (int b = 0; b < batch_size; ++b) {
    const std::uint64_t u = rng.below(total);
    const auto it = std::upper_bound(cumulative.begin(), cumulative.end(), u);
    const auto track = static_cast<std::size_t>(it - cumulative.begin());
    const std::uint64_t start = track == 0 ? 0 : cumulative[track - 1];
    const auto offset = static_cast<std::size_t>(u - start);
    const std::size_t n = corpus[track].tokens.size();
    const int len = static_cast<int>(std::min<std::size_t>(static_cast<std::size_t>(config.block_size), n - 1 - offset));
    rows.push_back({track, offset, len});
    width = std::max(width, len);
  }

  Batch batch{TokenMatrix(batch_size, width, 0), TokenMatrix(batch_size, width, kIgnoreIndex)};
  for (int b = 0; b < batch_size; ++b) {
    const auto& r = rows[static_cast<std::size_t>(b)];
    const auto& tokens = corpus[r.track].tokens;
    for (int i = 0; i < r.len; ++i) {
      batch.inputs.at(b, i) = tokens[r.offset + static_cast<std::size_t>(i)].value;
      batch.targets.at(b, i) = tokens[r.offset + static_cast<std::size_t>(i) + 1].value;
    }
  }
  return batch;
}

double learning_rate(const TrainParams& p, std::int64_t step, std::int64_t total_steps) {
  if (step < p.warmup) return p.lr * static_cast<double>(step + 1) / static_cast<double>(p.warmup);
  const double span = static_cast<double>(std::max<std::int64_t>(1, total_steps - p.warmup));
  const double progress = std::clamp(static_cast<double>(step - p.warmup) / span, 0.0, 1.0);
  return p.min_lr + 0.5 * (1.0 + std::cos(std::numbers::pi * progress)) * (p.lr - p.min_lr);
}

namespace {

void validate(const TrainParams& p) {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
  if (p.steps < 0) fail("steps must be non-negative");
  if (p.batch_size < 1) fail("batch_size must be positive");
  if (!(p.lr > 0.0) || p.min_lr < 0.0 || p.min_lr > p.lr) fail("need 0 <= min_lr <= lr and lr > 0");
  if (p.warmup < 0) fail("warmup must be non-negative");
  if (!(p.beta1 >= 0.0 && p.beta1 < 1.0 && p.beta2 >= 0.0 && p.beta2 < 1.0)) fail("betas must be in [0, 1)");
  if (!(p.eps > 0.0) || p.weight_decay < 0.0 || !(p.grad_clip > 0.0)) fail("eps and grad_clip must be positive");
}

}  // namespace

Checkpoint train(Checkpoint ckpt, std::span<const trackprep::TokenTrack> corpus, const TrainParams& params,
                 const std::function<void(const TrainRecord&)>& on_log) {
  validate(params);
  const ParamLayout layout(ckpt.config);
  const std::size_t n = layout.total();
  if (ckpt.weights.size() != n) throw Error(ErrorCode::Input, "checkpoint weights do not match its config");
  if (params.steps == 0) return ckpt;
  const std::int64_t total = params.total_steps > 0 ? params.total_steps : ckpt.step + params.steps;

  if (!ckpt.optimizer) ckpt.optimizer = AdamState{ParamVector(n, 0.0f), ParamVector(n, 0.0f)};
  auto& m = ckpt.optimizer->m;
  auto& v = ckpt.optimizer->v;
  if (m.size() != n || v.size() != n) throw Error(ErrorCode::Input, "optimizer state does not match weights");

  // Weight decay applies to matrices only (embeddings and projections).
  std::vector<char> decay(n, 0);
  for (const auto& slot : layout.slots()) {
    if (slot.shape.size() == 2) std::fill(decay.begin() + slot.offset, decay.begin() + slot.offset + slot.size, 1);
  }

  ParamVector grad(n);
  for (int s = 0; s < params.steps; ++s) {
    const std::int64_t step = ckpt.step;
    Rng rng(derive_seed(params.seed, static_cast<std::uint64_t>(step)));
    const Batch batch = sample_batch(corpus, ckpt.config, params.batch_size, rng);
    std::fill(grad.begin(), grad.end(), 0.0f);
    const double loss = loss_and_grad<float>(ckpt.config, ckpt.weights, batch, grad,
                                             ckpt.config.dropout > 0.0 ? &rng : nullptr);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::Numeric, "non-finite loss at step " + std::to_string(step));
    }

    double norm2 = 0.0;
    for (float g : grad) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (!std::isfinite(norm)) throw Error(ErrorCode::Numeric, "non-finite gradient at step " + std::to_string(step));
    const float clip = norm > params.grad_clip ? static_cast<float>(params.grad_clip / norm) : 1.0f;

    const double lr = learning_rate(params, step, total);
    const double t = static_cast<double>(step + 1);
    const float b1 = static_cast<float>(params.beta1), b2 = static_cast<float>(params.beta2);
    const float c1 = static_cast<float>(1.0 / (1.0 - std::pow(params.beta1, t)));
    const float c2 = static_cast<float>(1.0 / (1.0 - std::pow(params.beta2, t)));
    const float flr = static_cast<float>(lr), eps = static_cast<float>(params.eps);
    const float wd = static_cast<float>(lr * params.weight_decay);
    float* w = ckpt.weights.data();
    for (std::size_t i = 0; i < n; ++i) {
      const float g = grad[i] * clip;
      m[i] = b1 * m[i] + (1.0f - b1) * g;
      v[i] = b2 * v[i] + (1.0f - b2) * g * g;
      if (decay[i]) w[i] -= wd * w[i];
      w[i] -= flr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
    }
    ++ckpt.step;

    const bool last = s + 1 == params.steps;
    if (on_log && params.log_interval > 0 && (ckpt.step % params.log_interval == 0 || last)) {
      on_log(TrainRecord{ckpt.step, loss, lr});
    }
  }
  return ckpt;
}

}  // namespace trackgpt::gptcore
