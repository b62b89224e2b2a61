#include <algorithm>
#include <cmath>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"

namespace trackgpt::gptcore {
namespace {

double eval_loss(const ModelConfig& cfg, std::span<const double> w, const Batch& batch) {
  return cross_entropy<double>(forward<double>(cfg, w, batch.inputs), batch.targets);
}

}  // namespace

GradCheckResult gradient_check(const Weights<double>& weights, const Batch& batch, const GradCheckOptions& options) {
  const ModelConfig& cfg = weights.config;
  const ParamLayout layout(cfg);
  if (weights.data.size() != layout.total()) throw Error(ErrorCode::Input, "weights do not match config");
  if (!(options.step > 0.0)) throw Error(ErrorCode::Config, "finite-difference step must be positive");

  std::vector<double> grad(layout.total(), 0.0);
  loss_and_grad<double>(cfg, weights.data, batch, grad, nullptr);

  // Either every parameter, or an equal random share from each tensor.
  std::vector<std::size_t> indices;
  if (options.samples == 0 || options.samples >= layout.total()) {
    indices.resize(layout.total());
    for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  } else {
    Rng rng(options.seed);
    const std::size_t per = (options.samples + layout.slots().size() - 1) / layout.slots().size();
    for (const auto& slot : layout.slots()) {
      for (std::size_t k = 0; k < std::min(per, slot.size); ++k) indices.push_back(slot.offset + rng.below(slot.size));
    }
    std::sort(indices.begin(), indices.end());
    indices.erase(std::unique(indices.begin(), indices.end()), indices.end());
  }

  auto w = weights.data;
  GradCheckResult result;
  for (std::size_t i : indices) {
    const double orig = w[i];
    w[i] = orig + options.step;
    const double plus = eval_loss(cfg, w, batch);
    w[i] = orig - options.step;
    const double minus = eval_loss(cfg, w, batch);
    w[i] = orig;
    const double numeric = (plus - minus) / (2.0 * options.step);
    const double analytic = grad[i];
    const double denom = std::max(std::abs(analytic) + std::abs(numeric), options.abs_floor);
    const double rel = std::abs(analytic - numeric) / denom;
    if (result.checked == 0 || rel > result.max_rel_error) {
      result.max_rel_error = rel;
      result.worst_index = i;
    }
    ++result.checked;
  }
  return result;
}

GradCheckResult gradient_check(const Checkpoint& ckpt, const Batch& batch, const GradCheckOptions& options) {
  Weights<double> w{ckpt.config, {ckpt.weights.begin(), ckpt.weights.end()}};
  return gradient_check(w, batch, options);
}

}  // namespace trackgpt::gptcore
