#include <algorithm>
#include <cmath>
#include <numbers>

#include "trackgpt/error.hpp"
#include "trackgpt/gptcore.hpp"
#include "trackgpt/kv_text.hpp"
#include "kernels.hpp"

namespace trackgpt::gptcore {

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw Error(ErrorCode::Config, m); };
  if (vocab_size < 1 || vocab_size > static_cast<int>(geocodec::kVocabSize)) fail("vocab_size must be in [1, 65536]");
  if (block_size < 2) fail("block_size must be at least 2");
  if (n_layer < 1 || n_head < 1 || d_model < 1) fail("n_layer, n_head and d_model must be positive");
  if (d_model % n_head != 0) fail("d_model must be divisible by n_head");
  if (!(dropout >= 0.0 && dropout < 1.0)) fail("dropout must be in [0, 1)");
}

std::string ModelConfig::to_record() const {
  std::string out;
  out += "vocab_size = " + std::to_string(vocab_size) + "\n";
  out += "block_size = " + std::to_string(block_size) + "\n";
  out += "n_layer = " + std::to_string(n_layer) + "\n";
  out += "n_head = " + std::to_string(n_head) + "\n";
  out += "d_model = " + std::to_string(d_model) + "\n";
  out += "dropout = " + format_double(dropout) + "\n";
  out += "seed = " + std::to_string(seed) + "\n";
  return out;
}

ModelConfig ModelConfig::parse_record(std::string_view text) {
  const KvRecord rec = KvRecord::parse(text);
  ModelConfig c;
  c.vocab_size = static_cast<int>(rec.get_int_or("vocab_size", c.vocab_size));
  c.block_size = static_cast<int>(rec.get_int_or("block_size", c.block_size));
  c.n_layer = static_cast<int>(rec.get_int_or("n_layer", c.n_layer));
  c.n_head = static_cast<int>(rec.get_int_or("n_head", c.n_head));
  c.d_model = static_cast<int>(rec.get_int_or("d_model", c.d_model));
  c.dropout = rec.get_double_or("dropout", c.dropout);
  if (rec.has("seed")) c.seed = std::stoull(rec.get("seed"));
  c.validate();
  return c;
}

ParamLayout::ParamLayout(const ModelConfig& config) {
  config.validate();
  const auto v = static_cast<std::size_t>(config.vocab_size);
  const auto d = static_cast<std::size_t>(config.d_model);
  const auto t = static_cast<std::size_t>(config.block_size);
  wte = add("wte", {v, d});
  wpe = add("wpe", {t, d});
  for (int l = 0; l < config.n_layer; ++l) {
    const std::string p = "h." + std::to_string(l) + ".";
    Block b{};
    b.ln1_g = add(p + "ln1.g", {d});
    b.ln1_b = add(p + "ln1.b", {d});
    b.qkv_w = add(p + "attn.qkv.w", {d, 3 * d});
    b.qkv_b = add(p + "attn.qkv.b", {3 * d});
    b.proj_w = add(p + "attn.proj.w", {d, d});
    b.proj_b = add(p + "attn.proj.b", {d});
    b.ln2_g = add(p + "ln2.g", {d});
    b.ln2_b = add(p + "ln2.b", {d});
    b.fc_w = add(p + "mlp.fc.w", {d, 4 * d});
    b.fc_b = add(p + "mlp.fc.b", {4 * d});
    b.fc2_w = add(p + "mlp.fc2.w", {4 * d, d});
    b.fc2_b = add(p + "mlp.fc2.b", {d});
    blocks.push_back(b);
  }
  lnf_g = add("lnf.g", {d});
  lnf_b = add("lnf.b", {d});
}

std::size_t ParamLayout::add(std::string name, std::vector<std::size_t> shape) {
  std::size_t size = 1;
  for (auto s : shape) size *= s;
  const std::size_t offset = total_;
  slots_.push_back(TensorSlot{std::move(name), std::move(shape), offset, size});
  total_ += size;
  return offset;
}

std::size_t parameter_count(const ModelConfig& config) { return ParamLayout(config).total(); }

Checkpoint init_model(const ModelConfig& config) {
  const ParamLayout layout(config);
  Checkpoint ckpt;
  ckpt.config = config;
  ckpt.weights.assign(layout.total(), 0.0f);
  Rng rng(config.seed);
  const double base_std = 0.02;
  const double resid_std = base_std / std::sqrt(2.0 * config.n_layer);
  auto ends_with = [](const std::string& s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
  };
  for (const auto& slot : layout.slots()) {
    float* p = ckpt.weights.data() + slot.offset;
    if (ends_with(slot.name, ".g")) {
      std::fill(p, p + slot.size, 1.0f);
    } else if (slot.shape.size() == 1) {
      std::fill(p, p + slot.size, 0.0f);
    } else {
      const double std = ends_with(slot.name, "proj.w") || ends_with(slot.name, "fc2.w") ? resid_std : base_std;
      for (std::size_t i = 0; i < slot.size; ++i) p[i] = static_cast<float>(rng.normal(0.0, std));
    }
  }
  return ckpt;
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

using namespace detail;

template <typename T>
struct Cache {
  struct Layer {
    LnCache<T> ln1;
    Matrix<T> ln1_out, qkv, att_out, attn_drop;
    std::vector<T> probs;  // [row][head][i][j], causal entries only used
    LnCache<T> ln2;
    Matrix<T> ln2_out, fc_pre, fc_act, mlp_drop;
  };
  std::vector<Layer> layers;
  Matrix<T> emb_drop;
  LnCache<T> lnf;
};

template <typename T>
void check_tokens(const ModelConfig& config, const TokenMatrix& tokens) {
  if (tokens.rows < 1 || tokens.cols < 1) throw Error(ErrorCode::Input, "empty token matrix");
  if (tokens.cols > config.block_size) {
    throw Error(ErrorCode::Input, "sequence length " + std::to_string(tokens.cols) + " exceeds block size " +
                                      std::to_string(config.block_size));
  }
  for (auto t : tokens.data) {
    if (t < 0 || t >= config.vocab_size) throw Error(ErrorCode::Input, "token " + std::to_string(t) + " out of vocabulary");
  }
}

/// Causal multi-head attention for every row/head; writes `out` (N x d).
template <typename T>
void attention(const ModelConfig& cfg, int rows, int cols, const Matrix<T>& qkv, Matrix<T>& out, std::vector<T>* probs) {
  const int d = cfg.d_model, h_count = cfg.n_head, hd = d / h_count;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  out.setZero(static_cast<Eigen::Index>(rows) * cols, d);
  if (probs) probs->assign(static_cast<std::size_t>(rows) * h_count * cols * cols, T(0));
  std::vector<T> p(static_cast<std::size_t>(cols));
  const std::size_t stride = static_cast<std::size_t>(3 * d);
  for (int b = 0; b < rows; ++b) {
    const T* base = qkv.data() + static_cast<std::size_t>(b) * cols * stride;
    for (int h = 0; h < h_count; ++h) {
      for (int i = 0; i < cols; ++i) {
        const T* q = base + i * stride + h * hd;
        T mx = -std::numeric_limits<T>::infinity();
        for (int j = 0; j <= i; ++j) {
          const T* k = base + j * stride + d + h * hd;
          T s = 0;
          for (int e = 0; e < hd; ++e) s += q[e] * k[e];
          p[j] = s * scale;
          mx = std::max(mx, p[j]);
        }
        T sum = 0;
        for (int j = 0; j <= i; ++j) {
          p[j] = std::exp(p[j] - mx);
          sum += p[j];
        }
        T* o = out.data() + (static_cast<std::size_t>(b) * cols + i) * d + h * hd;
        for (int j = 0; j <= i; ++j) {
          p[j] /= sum;
          const T* v = base + j * stride + 2 * d + h * hd;
          for (int e = 0; e < hd; ++e) o[e] += p[j] * v[e];
        }
        if (probs) {
          T* dst = probs->data() + ((static_cast<std::size_t>(b) * h_count + h) * cols + i) * cols;
          std::copy(p.begin(), p.begin() + i + 1, dst);
        }
      }
    }
  }
}

/// Embeddings through the final layer norm; returns lnf output (N x d).
template <typename T>
Matrix<T> run_body(const ModelConfig& cfg, const ParamLayout& lay, const T* P, const TokenMatrix& tok,
                   Cache<T>* cache, Rng* rng) {
  const int rows = tok.rows, cols = tok.cols, d = cfg.d_model;
  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;
  const bool drop = rng != nullptr && cfg.dropout > 0.0;

  Matrix<T> x(n, d);
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const T* te = P + lay.wte + static_cast<std::size_t>(tok.at(r, c)) * d;
      const T* pe = P + lay.wpe + static_cast<std::size_t>(c) * d;
      T* xr = x.data() + (static_cast<std::size_t>(r) * cols + c) * d;
      for (int k = 0; k < d; ++k) xr[k] = te[k] + pe[k];
    }
  }
  if (drop) {
    Matrix<T> mask;
    dropout_mask(mask, n, d, cfg.dropout, *rng);
    x.array() *= mask.array();
    if (cache) cache->emb_drop = std::move(mask);
  }
  if (cache) cache->layers.resize(lay.blocks.size());

  Matrix<T> a, qkv, att, z, bn, pre, act;
  for (std::size_t l = 0; l < lay.blocks.size(); ++l) {
    const auto& B = lay.blocks[l];
    typename Cache<T>::Layer* lc = cache ? &cache->layers[l] : nullptr;

    layer_norm(x, P + B.ln1_g, P + B.ln1_b, a, lc ? &lc->ln1 : nullptr);
    qkv.noalias() = a * ConstMap<T>(P + B.qkv_w, d, 3 * d);
    qkv.rowwise() += ConstRow<T>(P + B.qkv_b, 3 * d);
    attention(cfg, rows, cols, qkv, att, lc ? &lc->probs : nullptr);
    z.noalias() = att * ConstMap<T>(P + B.proj_w, d, d);
    z.rowwise() += ConstRow<T>(P + B.proj_b, d);
    if (drop) {
      Matrix<T> mask;
      dropout_mask(mask, n, d, cfg.dropout, *rng);
      z.array() *= mask.array();
      if (lc) lc->attn_drop = std::move(mask);
    }
    x += z;

    layer_norm(x, P + B.ln2_g, P + B.ln2_b, bn, lc ? &lc->ln2 : nullptr);
    pre.noalias() = bn * ConstMap<T>(P + B.fc_w, d, 4 * d);
    pre.rowwise() += ConstRow<T>(P + B.fc_b, 4 * d);
    act = pre.unaryExpr([](T v) { return gelu(v); });
    z.noalias() = act * ConstMap<T>(P + B.fc2_w, 4 * d, d);
    z.rowwise() += ConstRow<T>(P + B.fc2_b, d);
    if (drop) {
      Matrix<T> mask;
      dropout_mask(mask, n, d, cfg.dropout, *rng);
      z.array() *= mask.array();
      if (lc) lc->mlp_drop = std::move(mask);
    }
    x += z;

    if (lc) {
      lc->ln1_out = std::move(a);
      lc->qkv = std::move(qkv);
      lc->att_out = std::move(att);
      lc->ln2_out = std::move(bn);
      lc->fc_pre = std::move(pre);
      lc->fc_act = std::move(act);
    }
  }
  Matrix<T> out;
  layer_norm(x, P + lay.lnf_g, P + lay.lnf_b, out, cache ? &cache->lnf : nullptr);
  return out;
}

}  // namespace

template <typename T>
Matrix<T> forward(const ModelConfig& config, std::span<const T> params, const TokenMatrix& tokens) {
  const ParamLayout lay(config);
  if (params.size() != lay.total()) throw Error(ErrorCode::Input, "parameter vector does not match config");
  check_tokens<T>(config, tokens);
  const Matrix<T> h = run_body<T>(config, lay, params.data(), tokens, nullptr, nullptr);
  Matrix<T> logits;
  logits.noalias() = h * ConstMap<T>(params.data() + lay.wte, config.vocab_size, config.d_model).transpose();
  return logits;
}

template <typename T>
Matrix<T> forward_last(const ModelConfig& config, std::span<const T> params, const TokenMatrix& tokens) {
  const ParamLayout lay(config);
  if (params.size() != lay.total()) throw Error(ErrorCode::Input, "parameter vector does not match config");
  check_tokens<T>(config, tokens);
  const Matrix<T> h = run_body<T>(config, lay, params.data(), tokens, nullptr, nullptr);
  Matrix<T> last(tokens.rows, config.d_model);
  for (int r = 0; r < tokens.rows; ++r) {
    last.row(r) = h.row(static_cast<Eigen::Index>(r) * tokens.cols + tokens.cols - 1);
  }
  Matrix<T> logits;
  logits.noalias() = last * ConstMap<T>(params.data() + lay.wte, config.vocab_size, config.d_model).transpose();
  return logits;
}

Matrix<float> forward(const Checkpoint& ckpt, const TokenMatrix& tokens) {
  return forward<float>(ckpt.config, std::span<const float>(ckpt.weights), tokens);
}

template <typename T>
double cross_entropy(const Matrix<T>& logits, const TokenMatrix& targets) {
  if (logits.rows() != static_cast<Eigen::Index>(targets.data.size())) {
    throw Error(ErrorCode::Input, "logits and targets disagree in shape");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (Eigen::Index r = 0; r < logits.rows(); ++r) {
    const std::int32_t t = targets.data[static_cast<std::size_t>(r)];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || t >= logits.cols()) throw Error(ErrorCode::Input, "target out of vocabulary");
    const auto row = logits.row(r);
    const double mx = static_cast<double>(row.maxCoeff());
    double sum = 0.0;
    for (Eigen::Index k = 0; k < row.size(); ++k) sum += std::exp(static_cast<double>(row(k)) - mx);
    total += mx + std::log(sum) - static_cast<double>(row(t));
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

template <typename T>
double loss_and_grad(const ModelConfig& cfg, std::span<const T> params, const Batch& batch, std::span<T> grad,
                     Rng* dropout_rng) {
  const ParamLayout lay(cfg);
  if (params.size() != lay.total() || grad.size() != lay.total()) {
    throw Error(ErrorCode::Input, "parameter/gradient vector does not match config");
  }
  const TokenMatrix& tok = batch.inputs;
  check_tokens<T>(cfg, tok);
  if (batch.targets.rows != tok.rows || batch.targets.cols != tok.cols) {
    throw Error(ErrorCode::Input, "targets shape differs from inputs");
  }
  const T* P = params.data();
  T* G = grad.data();
  const int d = cfg.d_model, hd = d / cfg.n_head, rows = tok.rows, cols = tok.cols;
  const Eigen::Index n = static_cast<Eigen::Index>(rows) * cols;

  Cache<T> cache;
  const Matrix<T> h = run_body<T>(cfg, lay, P, tok, &cache, dropout_rng);
  const ConstMap<T> wte(P + lay.wte, cfg.vocab_size, d);
  std::vector<Eigen::Index> live;
  for (Eigen::Index r = 0; r < n; ++r) {
    const std::int32_t t = batch.targets.data[static_cast<std::size_t>(r)];
    if (t == kIgnoreIndex) continue;
    if (t < 0 || t >= cfg.vocab_size) throw Error(ErrorCode::Input, "target out of vocabulary");
    live.push_back(r);
  }
  if (live.empty()) return 0.0;
  const T inv_count = T(1) / static_cast<T>(live.size());

  // Output layer over row chunks so the [rows, vocab] logits stay small.
  // Softmax and its gradient are formed in place.
  constexpr std::size_t kChunk = 64;
  double loss = 0.0;
  Matrix<T> dh = Matrix<T>::Zero(n, d);
  MutMap<T> gwte(G + lay.wte, cfg.vocab_size, d);
  Matrix<T> hc, lg, dhc;
  for (std::size_t c0 = 0; c0 < live.size(); c0 += kChunk) {
    const auto m = static_cast<Eigen::Index>(std::min(kChunk, live.size() - c0));
    hc.resize(m, d);
    for (Eigen::Index i = 0; i < m; ++i) hc.row(i) = h.row(live[c0 + static_cast<std::size_t>(i)]);
    lg.noalias() = hc * wte.transpose();
    for (Eigen::Index i = 0; i < m; ++i) {
      const std::int32_t t = batch.targets.data[static_cast<std::size_t>(live[c0 + static_cast<std::size_t>(i)])];
      auto row = lg.row(i).array();
      const T mx = row.maxCoeff();
      const double target_logit = static_cast<double>(row(t));
      row = (row - mx).exp();
      const T sum = row.sum();
      loss += static_cast<double>(mx) + std::log(static_cast<double>(sum)) - target_logit;
      row *= inv_count / sum;
      row(t) -= inv_count;
    }
    gwte.noalias() += lg.transpose() * hc;
    dhc.noalias() = lg * wte;
    for (Eigen::Index i = 0; i < m; ++i) dh.row(live[c0 + static_cast<std::size_t>(i)]) = dhc.row(i);
  }
  const std::size_t count = live.size();

  Matrix<T> dx = Matrix<T>::Zero(n, d);
  layer_norm_backward(dh, cache.lnf, P + lay.lnf_g, G + lay.lnf_g, G + lay.lnf_b, dx);

  Matrix<T> dz, dact, dln, datt, dqkv;
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const std::size_t stride = static_cast<std::size_t>(3 * d);
  for (std::size_t li = lay.blocks.size(); li-- > 0;) {
    const auto& B = lay.blocks[li];
    auto& lc = cache.layers[li];

    // Feed-forward branch.
    dz = dx;
    if (lc.mlp_drop.size() != 0) dz.array() *= lc.mlp_drop.array();
    MutMap<T>(G + B.fc2_w, 4 * d, d).noalias() += lc.fc_act.transpose() * dz;
    MutRow<T>(G + B.fc2_b, d) += dz.colwise().sum();
    dact.noalias() = dz * ConstMap<T>(P + B.fc2_w, 4 * d, d).transpose();
    for (Eigen::Index i = 0; i < dact.size(); ++i) dact.data()[i] *= gelu_grad(lc.fc_pre.data()[i]);
    MutMap<T>(G + B.fc_w, d, 4 * d).noalias() += lc.ln2_out.transpose() * dact;
    MutRow<T>(G + B.fc_b, 4 * d) += dact.colwise().sum();
    dln.noalias() = dact * ConstMap<T>(P + B.fc_w, d, 4 * d).transpose();
    layer_norm_backward(dln, lc.ln2, P + B.ln2_g, G + B.ln2_g, G + B.ln2_b, dx);

    // Attention branch.
    dz = dx;
    if (lc.attn_drop.size() != 0) dz.array() *= lc.attn_drop.array();
    MutMap<T>(G + B.proj_w, d, d).noalias() += lc.att_out.transpose() * dz;
    MutRow<T>(G + B.proj_b, d) += dz.colwise().sum();
    datt.noalias() = dz * ConstMap<T>(P + B.proj_w, d, d).transpose();

    dqkv = Matrix<T>::Zero(n, 3 * d);
    std::vector<T> dp(static_cast<std::size_t>(cols));
    for (int b = 0; b < rows; ++b) {
      const T* base = lc.qkv.data() + static_cast<std::size_t>(b) * cols * stride;
      T* dbase = dqkv.data() + static_cast<std::size_t>(b) * cols * stride;
      for (int hh = 0; hh < cfg.n_head; ++hh) {
        for (int i = 0; i < cols; ++i) {
          const T* p = lc.probs.data() + ((static_cast<std::size_t>(b) * cfg.n_head + hh) * cols + i) * cols;
          const T* dout = datt.data() + (static_cast<std::size_t>(b) * cols + i) * d + hh * hd;
          T dot_pp = 0;
          for (int j = 0; j <= i; ++j) {
            const T* v = base + j * stride + 2 * d + hh * hd;
            T* dv = dbase + j * stride + 2 * d + hh * hd;
            T s = 0;
            for (int e = 0; e < hd; ++e) {
              s += dout[e] * v[e];
              dv[e] += p[j] * dout[e];
            }
            dp[j] = s;
            dot_pp += p[j] * s;
          }
          const T* q = base + i * stride + hh * hd;
          T* dq = dbase + i * stride + hh * hd;
          for (int j = 0; j <= i; ++j) {
            const T ds = p[j] * (dp[j] - dot_pp) * scale;
            const T* k = base + j * stride + d + hh * hd;
            T* dk = dbase + j * stride + d + hh * hd;
            for (int e = 0; e < hd; ++e) {
              dq[e] += ds * k[e];
              dk[e] += ds * q[e];
            }
          }
        }
      }
    }
    MutMap<T>(G + B.qkv_w, d, 3 * d).noalias() += lc.ln1_out.transpose() * dqkv;
    MutRow<T>(G + B.qkv_b, 3 * d) += dqkv.colwise().sum();
    dln.noalias() = dqkv * ConstMap<T>(P + B.qkv_w, d, 3 * d).transpose();
    layer_norm_backward(dln, lc.ln1, P + B.ln1_g, G + B.ln1_g, G + B.ln1_b, dx);
  }

  if (cache.emb_drop.size() != 0) dx.array() *= cache.emb_drop.array();
  for (int r = 0; r < rows; ++r) {
    for (int c = 0; c < cols; ++c) {
      const T* src = dx.data() + (static_cast<std::size_t>(r) * cols + c) * d;
      T* te = G + lay.wte + static_cast<std::size_t>(tok.at(r, c)) * d;
      T* pe = G + lay.wpe + static_cast<std::size_t>(c) * d;
      for (int k = 0; k < d; ++k) {
        te[k] += src[k];
        pe[k] += src[k];
      }
    }
  }
  return loss / static_cast<double>(count);
}

template Matrix<float> forward<float>(const ModelConfig&, std::span<const float>, const TokenMatrix&);
template Matrix<double> forward<double>(const ModelConfig&, std::span<const double>, const TokenMatrix&);
template Matrix<float> forward_last<float>(const ModelConfig&, std::span<const float>, const TokenMatrix&);
template Matrix<double> forward_last<double>(const ModelConfig&, std::span<const double>, const TokenMatrix&);
template double cross_entropy<float>(const Matrix<float>&, const TokenMatrix&);
template double cross_entropy<double>(const Matrix<double>&, const TokenMatrix&);
template double loss_and_grad<float>(const ModelConfig&, std::span<const float>, const Batch&, std::span<float>, Rng*);
template double loss_and_grad<double>(const ModelConfig&, std::span<const double>, const Batch&, std::span<double>,
                                      Rng*);

}  // namespace trackgpt::gptcore
