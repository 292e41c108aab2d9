#include "core/model.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"
#include "core/rng.hpp"

namespace covobf {

void ModelConfig::validate() const {
  if (n_vocab < 1 || hidden < 1 || n_layers < 1 || n_heads < 1 ||
      n_kv_heads < 1 || head_dim < 1 || ffn_dim < 1 || max_seq < 1)
    throw DataError("config: all counts must be >= 1");
  if (n_heads % n_kv_heads != 0)
    throw DataError("config: n_heads must be a multiple of n_kv_heads");
  if (head_dim % 2 != 0) throw DataError("config: head_dim must be even");
  if (rope_base <= 0.0) throw DataError("config: rope_base must be positive");
  if (eps_norm <= 0.0) throw DataError("config: eps_norm must be positive");
  if (n_experts < 0 || top_k_experts < 0)
    throw DataError("config: expert counts must be >= 0");
  if (n_experts == 0 && top_k_experts != 0)
    throw DataError("config: top_k_experts requires n_experts > 0");
  if (n_experts > 0 && (top_k_experts < 1 || top_k_experts > n_experts))
    throw DataError("config: top_k_experts must be in [1, n_experts]");
}

namespace {

template <typename S>
VecT<S> rmsnorm_impl(const VecT<S>& x, const VecT<S>& w, double eps) {
  if (x.size() != w.size()) throw DataError("rmsnorm: length mismatch");
  if (eps <= 0.0) throw DataError("rmsnorm: eps must be positive");
  S ms = x.squaredNorm() / static_cast<S>(x.size());
  S denom = std::sqrt(ms + static_cast<S>(eps));
  return x.cwiseProduct(w) / denom;
}

template <typename S>
void rope_rows_inplace(MatT<S>& block, double base) {
  const int dh = static_cast<int>(block.cols());
  if (dh % 2 != 0) throw DataError("rope: head dimension must be even");
  for (int j = 0; j < dh / 2; ++j) {
    double theta = std::pow(base, -2.0 * j / static_cast<double>(dh));
    for (int r = 0; r < block.rows(); ++r) {
      double phi = static_cast<double>(r) * theta;
      S c = static_cast<S>(std::cos(phi));
      S s = static_cast<S>(std::sin(phi));
      S a = block(r, 2 * j);
      S b = block(r, 2 * j + 1);
      block(r, 2 * j) = a * c - b * s;
      block(r, 2 * j + 1) = a * s + b * c;
    }
  }
}

template <typename S>
VecT<S> softmax_row(const VecT<S>& logits) {
  S mx = logits.maxCoeff();
  VecT<S> e = (logits.array() - mx).exp();
  return e / e.sum();
}

template <typename S>
VecT<S> ffn_impl(const VecT<S>& x, const FfnWeightsT<S>& w) {
  if (x.size() != w.gate.rows() || w.gate.cols() != w.up.cols() ||
      w.up.rows() != w.gate.rows() || w.down.rows() != w.gate.cols() ||
      w.down.cols() != x.size())
    throw DataError("ffn_forward: shape mismatch");
  VecT<S> g = x * w.gate;
  VecT<S> u = x * w.up;
  // SiLU(t) = t / (1 + e^-t)
  VecT<S> act = g.array() / (S(1) + (-g.array()).exp());
  return (act.cwiseProduct(u)) * w.down;
}

template <typename S>
std::vector<int> select_experts_impl(const VecT<S>& logits, int top_k) {
  std::vector<int> idx(logits.size());
  for (size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<int>(i);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](int a, int b) { return logits(a) > logits(b); });
  idx.resize(top_k);
  return idx;
}

template <typename S>
VecT<S> moe_impl(const VecT<S>& x, const LayerWeightsT<S>& layer,
                 const ModelConfig& cfg) {
  VecT<S> logits = x * layer.router;
  std::vector<int> chosen = select_experts_impl<S>(logits, cfg.top_k_experts);
  VecT<S> sel(chosen.size());
  for (size_t i = 0; i < chosen.size(); ++i) sel(i) = logits(chosen[i]);
  VecT<S> gates = softmax_row<S>(sel);
  VecT<S> out = VecT<S>::Zero(x.size());
  for (size_t i = 0; i < chosen.size(); ++i)
    out += gates(i) * ffn_impl<S>(x, layer.experts[chosen[i]]);
  return out;
}

template <typename S>
MatT<S> attention_impl(const MatT<S>& xs, const AttentionWeightsT<S>& attn,
                       const ModelConfig& cfg) {
  const int seq = static_cast<int>(xs.rows());
  const int dh = cfg.head_dim;
  if (xs.cols() != attn.wq.rows() || attn.wq.cols() != cfg.n_heads * dh ||
      attn.wk.cols() != cfg.n_kv_heads * dh || attn.wv.cols() != cfg.n_kv_heads * dh ||
      attn.wo.rows() != cfg.n_heads * dh || attn.wo.cols() != xs.cols())
    throw DataError("attention_forward: shape mismatch");

  const S scale = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
  MatT<S> out = MatT<S>::Zero(seq, xs.cols());

  for (int kvh = 0; kvh < cfg.n_kv_heads; ++kvh) {
    MatT<S> k = xs * attn.wk.middleCols(kvh * dh, dh);
    MatT<S> v = xs * attn.wv.middleCols(kvh * dh, dh);
    rope_rows_inplace<S>(k, cfg.rope_base);
    for (int g = 0; g < cfg.group_size(); ++g) {
      const int head = kvh * cfg.group_size() + g;
      MatT<S> q = xs * attn.wq.middleCols(head * dh, dh);
      rope_rows_inplace<S>(q, cfg.rope_base);
      MatT<S> scores = q * k.transpose() * scale;
      MatT<S> ctx(seq, dh);
      for (int r = 0; r < seq; ++r) {
        VecT<S> row = softmax_row<S>(VecT<S>(scores.row(r).head(r + 1)));
        ctx.row(r) = row * v.topRows(r + 1);
      }
      out += ctx * attn.wo.middleRows(head * dh, dh);
    }
  }
  return out;
}

template <typename S>
VecT<S> norm_rows_oracle(const MatT<S>& xs, const NormOracle& oracle, double eps,
                         int row) {
  // De-obfuscate, take the plaintext-width RMS, keep the obfuscated state.
  VecT<S> plain = xs.row(row) * oracle.q_inv.template cast<S>();
  S ms = plain.squaredNorm() / static_cast<S>(oracle.plain_dim);
  return xs.row(row) / std::sqrt(ms + static_cast<S>(eps));
}

template <typename S>
MatT<S> norm_all_rows(const MatT<S>& xs, const VecT<S>& w, double eps,
                      const NormOracle* oracle) {
  MatT<S> out(xs.rows(), xs.cols());
  for (int r = 0; r < xs.rows(); ++r) {
    if (oracle)
      out.row(r) = norm_rows_oracle<S>(xs, *oracle, eps, r);
    else
      out.row(r) = rmsnorm_impl<S>(VecT<S>(xs.row(r)), w, eps);
  }
  return out;
}

template <typename S>
VecT<S> forward_impl(const TokenSequence& tokens, const ModelWeightsT<S>& w,
                     const NormOracle* oracle, ForwardTrace* trace) {
  const ModelConfig& cfg = w.config;
  if (tokens.empty()) throw DataError("model_forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > cfg.max_seq)
    throw DataError("model_forward: sequence exceeds max_seq");
  for (int32_t t : tokens)
    if (t < 0 || t >= cfg.n_vocab)
      throw DataError("model_forward: token id out of range");

  const int seq = static_cast<int>(tokens.size());
  MatT<S> xs(seq, cfg.hidden);
  for (int i = 0; i < seq; ++i) xs.row(i) = w.embed.row(tokens[i]);
  if (trace) trace->embedded = xs.template cast<double>();

  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerWeightsT<S>& layer = w.layers[l];
    MatT<S> normed = norm_all_rows<S>(xs, layer.input_norm, cfg.eps_norm, oracle);
    xs += attention_impl<S>(normed, layer.attn, cfg);
    if (trace) trace->after_attn.push_back(xs.template cast<double>());

    MatT<S> normed2 = norm_all_rows<S>(xs, layer.post_attn_norm, cfg.eps_norm, oracle);
    for (int r = 0; r < seq; ++r) {
      VecT<S> row = normed2.row(r);
      xs.row(r) += cfg.n_experts > 0 ? moe_impl<S>(row, layer, cfg)
                                     : ffn_impl<S>(row, layer.ffn);
    }
    if (trace) trace->after_ffn.push_back(xs.template cast<double>());
  }

  VecT<S> last;
  if (oracle)
    last = norm_rows_oracle<S>(xs, *oracle, cfg.eps_norm, seq - 1);
  else
    last = rmsnorm_impl<S>(VecT<S>(xs.row(seq - 1)), w.final_norm, cfg.eps_norm);
  if (trace) trace->final_hidden = last.template cast<double>();
  return last * w.head;
}

template <typename S>
int argmax_lowest(const VecT<S>& v) {
  int best = 0;
  for (int i = 1; i < v.size(); ++i)
    if (v(i) > v(best)) best = i;
  return best;
}

template <typename S>
TokenSequence generate_impl(const TokenSequence& prompt, const ModelWeightsT<S>& w,
                            int max_new, const NormOracle* oracle) {
  if (prompt.empty()) throw DataError("generate: empty prompt");
  if (max_new < 0) throw DataError("generate: max_new must be >= 0");
  if (static_cast<int>(prompt.size()) + max_new > w.config.max_seq)
    throw DataError("generate: prompt plus max_new exceeds max_seq");
  TokenSequence out = prompt;
  for (int step = 0; step < max_new; ++step) {
    VecT<S> logits = forward_impl<S>(out, w, oracle, nullptr);
    out.push_back(static_cast<int32_t>(argmax_lowest<S>(logits)));
  }
  return out;
}

}  // namespace

Vector rmsnorm(const Vector& x, const Vector& w, double eps) {
  return rmsnorm_impl<double>(x, w, eps);
}

Vector rope_apply(const Vector& v, int position, double base) {
  if (position < 0) throw DataError("rope_apply: position must be >= 0");
  const int dh = static_cast<int>(v.size());
  if (dh % 2 != 0) throw DataError("rope_apply: head dimension must be even");
  Vector out = v;
  for (int j = 0; j < dh / 2; ++j) {
    double theta = std::pow(base, -2.0 * j / static_cast<double>(dh));
    double phi = static_cast<double>(position) * theta;
    double c = std::cos(phi), s = std::sin(phi);
    double a = v(2 * j), b = v(2 * j + 1);
    out(2 * j) = a * c - b * s;
    out(2 * j + 1) = a * s + b * c;
  }
  return out;
}

Vector ffn_forward(const Vector& x, const FfnWeights& w) {
  return ffn_impl<double>(x, w);
}

Vector moe_forward(const Vector& x, const LayerWeights& layer, const ModelConfig& cfg) {
  if (cfg.n_experts < 1 || cfg.top_k_experts < 1)
    throw DataError("moe_forward: not a MoE configuration");
  return moe_impl<double>(x, layer, cfg);
}

std::vector<int> select_experts(const Vector& router_logits, int top_k) {
  return select_experts_impl<double>(router_logits, top_k);
}

Matrix attention_forward(const Matrix& xs, const AttentionWeights& attn,
                         const ModelConfig& cfg) {
  return attention_impl<double>(xs, attn, cfg);
}

Vector model_forward(const TokenSequence& tokens, const ModelWeights& w,
                     const NormOracle* oracle, ForwardTrace* trace) {
  return forward_impl<double>(tokens, w, oracle, trace);
}

TokenSequence generate(const TokenSequence& prompt, const ModelWeights& w,
                       int max_new, const NormOracle* oracle) {
  return generate_impl<double>(prompt, w, max_new, oracle);
}

TokenSequence generate_sampled(const TokenSequence& prompt, const ModelWeights& w,
                               int max_new, double temperature, uint64_t seed) {
  if (temperature <= 0.0) return generate(prompt, w, max_new);
  if (prompt.empty()) throw DataError("generate_sampled: empty prompt");
  Rng rng(seed);
  TokenSequence out = prompt;
  for (int step = 0; step < max_new; ++step) {
    Vector logits = model_forward(out, w);
    Vector probs = softmax(Vector(logits / temperature));
    double u = rng.uniform(), acc = 0.0;
    int pick = static_cast<int>(probs.size()) - 1;
    for (int i = 0; i < probs.size(); ++i) {
      acc += probs(i);
      if (u < acc) {
        pick = i;
        break;
      }
    }
    out.push_back(pick);
  }
  return out;
}

namespace {

template <typename A, typename B>
void cast_ffn(const FfnWeightsT<A>& in, FfnWeightsT<B>& out) {
  out.gate = in.gate.template cast<B>();
  out.up = in.up.template cast<B>();
  out.down = in.down.template cast<B>();
}

}  // namespace

ModelWeightsF32 to_f32(const ModelWeights& w) {
  ModelWeightsF32 out;
  out.config = w.config;
  out.embed = w.embed.cast<float>();
  out.final_norm = w.final_norm.cast<float>();
  out.head = w.head.cast<float>();
  out.layers.resize(w.layers.size());
  for (size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights& in = w.layers[l];
    LayerWeightsT<float>& o = out.layers[l];
    o.input_norm = in.input_norm.cast<float>();
    o.post_attn_norm = in.post_attn_norm.cast<float>();
    o.attn.wq = in.attn.wq.cast<float>();
    o.attn.wk = in.attn.wk.cast<float>();
    o.attn.wv = in.attn.wv.cast<float>();
    o.attn.wo = in.attn.wo.cast<float>();
    cast_ffn(in.ffn, o.ffn);
    o.router = in.router.cast<float>();
    o.experts.resize(in.experts.size());
    for (size_t e = 0; e < in.experts.size(); ++e) cast_ffn(in.experts[e], o.experts[e]);
  }
  return out;
}

VecT<float> model_forward_f32(const TokenSequence& tokens, const ModelWeightsF32& w) {
  return forward_impl<float>(tokens, w, nullptr, nullptr);
}

TokenSequence generate_f32(const TokenSequence& prompt, const ModelWeightsF32& w,
                           int max_new) {
  return generate_impl<float>(prompt, w, max_new, nullptr);
}

namespace {

Matrix random_f32_matrix(int rows, int cols, double stddev, Rng& rng) {
  Matrix m(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j)
      m(i, j) = static_cast<double>(static_cast<float>(stddev * rng.normal()));
  return m;
}

FfnWeights random_ffn(const ModelConfig& cfg, Rng& rng) {
  FfnWeights f;
  double sd_in = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  double sd_down = 1.0 / std::sqrt(static_cast<double>(cfg.ffn_dim));
  f.gate = random_f32_matrix(cfg.hidden, cfg.ffn_dim, sd_in, rng);
  f.up = random_f32_matrix(cfg.hidden, cfg.ffn_dim, sd_in, rng);
  f.down = random_f32_matrix(cfg.ffn_dim, cfg.hidden, sd_down, rng);
  return f;
}

}  // namespace

ModelWeights random_model(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelWeights w;
  w.config = cfg;
  double sd_d = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  double sd_o = 1.0 / std::sqrt(static_cast<double>(cfg.n_heads * cfg.head_dim));
  w.embed = random_f32_matrix(cfg.n_vocab, cfg.hidden, sd_d, rng);
  w.layers.resize(cfg.n_layers);
  for (int l = 0; l < cfg.n_layers; ++l) {
    LayerWeights& layer = w.layers[l];
    layer.input_norm = Vector::Ones(cfg.hidden);
    layer.post_attn_norm = Vector::Ones(cfg.hidden);
    layer.attn.wq = random_f32_matrix(cfg.hidden, cfg.n_heads * cfg.head_dim, sd_d, rng);
    layer.attn.wk = random_f32_matrix(cfg.hidden, cfg.n_kv_heads * cfg.head_dim, sd_d, rng);
    layer.attn.wv = random_f32_matrix(cfg.hidden, cfg.n_kv_heads * cfg.head_dim, sd_d, rng);
    layer.attn.wo = random_f32_matrix(cfg.n_heads * cfg.head_dim, cfg.hidden, sd_o, rng);
    if (cfg.n_experts > 0) {
      layer.router = random_f32_matrix(cfg.hidden, cfg.n_experts, sd_d, rng);
      for (int e = 0; e < cfg.n_experts; ++e) layer.experts.push_back(random_ffn(cfg, rng));
    } else {
      layer.ffn = random_ffn(cfg, rng);
    }
  }
  w.final_norm = Vector::Ones(cfg.hidden);
  w.head = random_f32_matrix(cfg.hidden, cfg.n_vocab, sd_d, rng);
  return w;
}

void validate_weights(const ModelWeights& w) {
  const ModelConfig& cfg = w.config;
  cfg.validate();
  auto check = [](bool ok, const char* what) {
    if (!ok) throw DataError(std::string("model weights: bad shape for ") + what);
  };
  check(w.embed.rows() == cfg.n_vocab && w.embed.cols() == cfg.hidden, "embed");
  check(static_cast<int>(w.layers.size()) == cfg.n_layers, "layer count");
  check(w.final_norm.size() == cfg.hidden, "final_norm");
  check(w.head.rows() == cfg.hidden && w.head.cols() == cfg.n_vocab, "head");
  for (const LayerWeights& layer : w.layers) {
    check(layer.input_norm.size() == cfg.hidden, "input_norm");
    check(layer.post_attn_norm.size() == cfg.hidden, "post_attn_norm");
    check(layer.attn.wq.rows() == cfg.hidden &&
              layer.attn.wq.cols() == cfg.n_heads * cfg.head_dim, "attn.q");
    check(layer.attn.wk.rows() == cfg.hidden &&
              layer.attn.wk.cols() == cfg.n_kv_heads * cfg.head_dim, "attn.k");
    check(layer.attn.wv.rows() == cfg.hidden &&
              layer.attn.wv.cols() == cfg.n_kv_heads * cfg.head_dim, "attn.v");
    check(layer.attn.wo.rows() == cfg.n_heads * cfg.head_dim &&
              layer.attn.wo.cols() == cfg.hidden, "attn.o");
    if (cfg.n_experts > 0) {
      check(layer.ffn.gate.size() == 0, "dense ffn present in MoE layer");
      check(layer.router.rows() == cfg.hidden && layer.router.cols() == cfg.n_experts,
            "router");
      check(static_cast<int>(layer.experts.size()) == cfg.n_experts, "expert count");
      for (const FfnWeights& e : layer.experts) {
        check(e.gate.rows() == cfg.hidden && e.gate.cols() == cfg.ffn_dim, "expert.gate");
        check(e.up.rows() == cfg.hidden && e.up.cols() == cfg.ffn_dim, "expert.up");
        check(e.down.rows() == cfg.ffn_dim && e.down.cols() == cfg.hidden, "expert.down");
      }
    } else {
      check(layer.router.size() == 0 && layer.experts.empty(),
            "MoE weights present in dense layer");
      check(layer.ffn.gate.rows() == cfg.hidden && layer.ffn.gate.cols() == cfg.ffn_dim,
            "ffn.gate");
      check(layer.ffn.up.rows() == cfg.hidden && layer.ffn.up.cols() == cfg.ffn_dim,
            "ffn.up");
      check(layer.ffn.down.rows() == cfg.ffn_dim && layer.ffn.down.cols() == cfg.hidden,
            "ffn.down");
    }
  }
}

}  // namespace covobf
