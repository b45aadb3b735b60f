#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SVD>

#include "rege/errors.hpp"
#include "rege/manifest.hpp"
#include "rege/toy/config.hpp"

namespace rege::toy {

// Synthetic "face descriptor" fed to the frozen encoder stubs. The first
// half drives the visual features, the second half the prior feature.
constexpr int kDescriptorDim = 16;
constexpr int kDescriptorHalf = kDescriptorDim / 2;

template <typename Real> using Mat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Real> using Vec = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

template <typename Real> inline Real gelu(Real x) {
  return Real(0.5) * x * (Real(1) + std::erf(x / std::sqrt(Real(2))));
}

template <typename Real> inline Real gelu_grad(Real x) {
  const Real phi = std::exp(-x * x / Real(2)) / std::sqrt(Real(2) * Real(M_PI));
  return Real(0.5) * (Real(1) + std::erf(x / std::sqrt(Real(2)))) + x * phi;
}

template <typename Real> struct Mlp2 {
  Mat<Real> W1, b1, W2, b2; // biases stored as 1×n rows
};

template <typename Real> struct LoraPair {
  Mat<Real> A; // rank×dim
  Mat<Real> B; // dim×rank
  bool enabled() const { return A.size() > 0; }
};

template <typename Real> struct LayerLora {
  LoraPair<Real> q, v;
};

template <typename Real> struct LayerWeights {
  Mat<Real> ln1_g, ln1_b;
  Mat<Real> Wq, Wk, Wv, Wo;
  Mat<Real> ln2_g, ln2_b;
  Mat<Real> Wf1, bf1, Wf2, bf2;
};

template <typename Real> struct Frozen {
  Mat<Real> embed; // vocab×dim
  std::vector<LayerWeights<Real>> layers;
  Mat<Real> lnf_g, lnf_b;
  Mat<Real> w_out; // dim×vocab
  Mat<Real> b_out; // 1×vocab
  Mat<Real> vis_stub;   // (n_visual_tokens*prior_dim)×kDescriptorHalf
  Mat<Real> prior_stub; // prior_dim×kDescriptorHalf
};

// Θ: prior projector, visual projector, low-rank residuals.
template <typename Real> struct Trainable {
  Mlp2<Real> theta;
  Mlp2<Real> gamma;
  std::vector<LayerLora<Real>> lora;
};

template <typename Real, typename F>
void for_each_trainable(Trainable<Real>& t, F&& f) {
  f("theta.W1", t.theta.W1);
  f("theta.b1", t.theta.b1);
  f("theta.W2", t.theta.W2);
  f("theta.b2", t.theta.b2);
  f("gamma.W1", t.gamma.W1);
  f("gamma.b1", t.gamma.b1);
  f("gamma.W2", t.gamma.W2);
  f("gamma.b2", t.gamma.b2);
  for (std::size_t i = 0; i < t.lora.size(); ++i) {
    const std::string prefix = "layer" + std::to_string(i);
    if (t.lora[i].q.enabled()) {
      f(prefix + ".attn_q.A", t.lora[i].q.A);
      f(prefix + ".attn_q.B", t.lora[i].q.B);
    }
    if (t.lora[i].v.enabled()) {
      f(prefix + ".attn_v.A", t.lora[i].v.A);
      f(prefix + ".attn_v.B", t.lora[i].v.B);
    }
  }
}

template <typename Real>
Trainable<Real> zeros_like(const Trainable<Real>& t) {
  Trainable<Real> z;
  auto zero = [](const Mat<Real>& m) { return Mat<Real>::Zero(m.rows(), m.cols()).eval(); };
  z.theta = {zero(t.theta.W1), zero(t.theta.b1), zero(t.theta.W2), zero(t.theta.b2)};
  z.gamma = {zero(t.gamma.W1), zero(t.gamma.b1), zero(t.gamma.W2), zero(t.gamma.b2)};
  z.lora.resize(t.lora.size());
  for (std::size_t i = 0; i < t.lora.size(); ++i) {
    if (t.lora[i].q.enabled())
      z.lora[i].q = {zero(t.lora[i].q.A), zero(t.lora[i].q.B)};
    if (t.lora[i].v.enabled())
      z.lora[i].v = {zero(t.lora[i].v.A), zero(t.lora[i].v.B)};
  }
  return z;
}

template <typename Real> struct Sample {
  Vec<Real> descriptor; // kDescriptorDim
  std::vector<int> instruction_ids;
  std::vector<int> answer_ids; // length L >= 1 for training items
};

struct ForwardOptions {
  bool use_visual = true;
  bool use_prior = true;
  bool adapters = true; // false runs the frozen base weights only
};

namespace detail {

template <typename Real>
void layer_norm_forward(const Mat<Real>& x, const Mat<Real>& g, const Mat<Real>& b,
                        Mat<Real>& y, Mat<Real>& xhat, Vec<Real>& inv_std) {
  const Real eps = Real(1e-5);
  const auto d = x.cols();
  y.resize(x.rows(), d);
  xhat.resize(x.rows(), d);
  inv_std.resize(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    Real mu = x.row(r).mean();
    Real var = (x.row(r).array() - mu).square().mean();
    Real inv = Real(1) / std::sqrt(var + eps);
    inv_std(r) = inv;
    xhat.row(r) = (x.row(r).array() - mu) * inv;
    y.row(r) = xhat.row(r).cwiseProduct(g.row(0)) + b.row(0);
  }
}

template <typename Real>
Mat<Real> layer_norm_backward(const Mat<Real>& dy, const Mat<Real>& g, const Mat<Real>& xhat,
                              const Vec<Real>& inv_std) {
  Mat<Real> dx(dy.rows(), dy.cols());
  const Real d = Real(dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    Eigen::Matrix<Real, 1, Eigen::Dynamic> dxhat = dy.row(r).cwiseProduct(g.row(0));
    Real m1 = dxhat.sum() / d;
    Real m2 = dxhat.cwiseProduct(xhat.row(r)).sum() / d;
    dx.row(r) = inv_std(r) * (dxhat.array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

template <typename Real> Mat<Real> gelu_mat(const Mat<Real>& x) {
  return x.unaryExpr([](Real v) { return gelu(v); });
}

template <typename Real> Mat<Real> gelu_grad_mat(const Mat<Real>& x) {
  return x.unaryExpr([](Real v) { return gelu_grad(v); });
}

template <typename Real> struct LayerCache {
  Mat<Real> x_in, xn1, xhat1;
  Vec<Real> inv1;
  Mat<Real> Q, K, V, Uq, Uv;
  std::vector<Mat<Real>> P; // per-head attention probabilities
  Mat<Real> attn_concat, x_mid, xn2, xhat2;
  Vec<Real> inv2;
  Mat<Real> h_ff, a_ff, x_out;
};

template <typename Real> struct ForwardCache {
  Mat<Real> vis_raw, h1_gamma, a1_gamma; // visual projector path
  Mat<Real> zp, h1_theta, a1_theta;      // prior projector path
  int n_visual_rows = 0;
  int prior_row = -1; // row index of H_p within the sequence, -1 if absent
  int prefix_len = 0;
  Mat<Real> x0;
  std::vector<LayerCache<Real>> layers;
  Mat<Real> xf, xhatf;
  Vec<Real> invf;
  Mat<Real> logits;
};

} // namespace detail

template <typename Real> class Model {
public:
  Config cfg;
  Frozen<Real> frozen;
  Trainable<Real> trainable;

  static Model init(const Config& config) {
    config.validate();
    Model m;
    m.cfg = config;
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto randn = [&](Eigen::Index r, Eigen::Index c, double scale) {
      Mat<Real> w(r, c);
      for (Eigen::Index i = 0; i < r; ++i)
        for (Eigen::Index j = 0; j < c; ++j)
          w(i, j) = static_cast<Real>(gauss(rng) * scale);
      return w;
    };
    auto zeros = [](Eigen::Index r, Eigen::Index c) { return Mat<Real>::Zero(r, c).eval(); };
    auto ones = [](Eigen::Index r, Eigen::Index c) { return Mat<Real>::Ones(r, c).eval(); };

    const int d = config.model_dim;
    const int f = config.ff_dim();
    const double wd = 1.0 / std::sqrt(static_cast<double>(d));
    const double wf = 1.0 / std::sqrt(static_cast<double>(f));

    m.frozen.embed = randn(config.vocab_size, d, 1.0);
    m.frozen.layers.resize(config.n_layers);
    for (auto& lw : m.frozen.layers) {
      lw.ln1_g = ones(1, d);
      lw.ln1_b = zeros(1, d);
      lw.Wq = randn(d, d, wd);
      lw.Wk = randn(d, d, wd);
      lw.Wv = randn(d, d, wd);
      lw.Wo = randn(d, d, wd);
      lw.ln2_g = ones(1, d);
      lw.ln2_b = zeros(1, d);
      lw.Wf1 = randn(d, f, wd);
      lw.bf1 = zeros(1, f);
      lw.Wf2 = randn(f, d, wf);
      lw.bf2 = zeros(1, d);
    }
    m.frozen.lnf_g = ones(1, d);
    m.frozen.lnf_b = zeros(1, d);
    // The head stays frozen and the final norm caps the hidden scale, so
    // the unembedding sets the reachable logit range; 2/sqrt(d) keeps the
    // attainable per-token loss floor well below 0.1 nats.
    m.frozen.w_out = randn(d, config.vocab_size, 2.0 * wd);
    m.frozen.b_out = zeros(1, config.vocab_size);
    const double ws = 1.0 / std::sqrt(static_cast<double>(kDescriptorHalf));
    m.frozen.vis_stub = randn(config.n_visual_tokens * config.prior_dim, kDescriptorHalf, ws);
    m.frozen.prior_stub = randn(config.prior_dim, kDescriptorHalf, ws);

    const double wp = 1.0 / std::sqrt(static_cast<double>(config.prior_dim));
    m.trainable.theta = {randn(config.prior_dim, d, wp), zeros(1, d), randn(d, d, wd),
                         zeros(1, d)};
    m.trainable.gamma = {randn(config.prior_dim, d, wp), zeros(1, d), randn(d, d, wd),
                         zeros(1, d)};
    m.trainable.lora.resize(config.n_layers);
    for (auto& ll : m.trainable.lora) {
      if (config.lora_on_q())
        ll.q = {randn(config.lora_rank, d, 0.02), zeros(d, config.lora_rank)};
      if (config.lora_on_v())
        ll.v = {randn(config.lora_rank, d, 0.02), zeros(d, config.lora_rank)};
    }
    return m;
  }

  Real lora_scale() const {
    return static_cast<Real>(cfg.lora_alpha / static_cast<double>(cfg.lora_rank));
  }

  // H_p = g_theta(Z_P); zp is 1×prior_dim.
  Mat<Real> prior_project(const Mat<Real>& zp) const {
    if (zp.rows() != 1 || zp.cols() != cfg.prior_dim)
      throw data_error("prior_project: expected 1x" + std::to_string(cfg.prior_dim) +
                       " feature, got " + std::to_string(zp.rows()) + "x" +
                       std::to_string(zp.cols()));
    Mat<Real> h1 = zp * trainable.theta.W1;
    h1.row(0) += trainable.theta.b1.row(0);
    Mat<Real> out = detail::gelu_mat(h1) * trainable.theta.W2;
    out.row(0) += trainable.theta.b2.row(0);
    return out;
  }

  // Ordered token list: [H_v, H_p, H_q] or [H_p, H_v, H_q]. Empty blocks
  // (zero rows) are allowed.
  static Mat<Real> assemble_sequence(const Mat<Real>& h_v, const Mat<Real>& h_p,
                                     const Mat<Real>& h_q, PriorTokenPosition position) {
    const Eigen::Index cols = std::max({h_v.cols(), h_p.cols(), h_q.cols()});
    Mat<Real> seq(h_v.rows() + h_p.rows() + h_q.rows(), cols);
    Eigen::Index r = 0;
    auto put = [&](const Mat<Real>& block) {
      if (block.rows() > 0)
        seq.middleRows(r, block.rows()) = block;
      r += block.rows();
    };
    if (position == PriorTokenPosition::after_visual) {
      put(h_v);
      put(h_p);
    } else {
      put(h_p);
      put(h_v);
    }
    put(h_q);
    return seq;
  }

  Mat<Real> forward_logits(const Sample<Real>& sample, const ForwardOptions& opt = {}) const {
    detail::ForwardCache<Real> cache;
    run(sample, opt, cache);
    return cache.logits;
  }

  // -sum_i log p(x_i | prefix, x_<i) under causal masking.
  Real nll(const Sample<Real>& sample, const ForwardOptions& opt = {}) const {
    auto losses = per_token_nll(sample, opt);
    Real total = 0;
    for (Real l : losses)
      total += l;
    return total;
  }

  std::vector<Real> per_token_nll(const Sample<Real>& sample,
                                  const ForwardOptions& opt = {}) const {
    detail::ForwardCache<Real> cache;
    run(sample, opt, cache);
    return answer_losses(sample, cache);
  }

  // Accumulates dNLL/dΘ into `grads` (same shapes as `trainable`) and
  // returns the sample's NLL. Frozen tensors receive no gradient.
  Real nll_with_grads(const Sample<Real>& sample, Trainable<Real>& grads,
                      const ForwardOptions& opt = {}) const {
    detail::ForwardCache<Real> cache;
    run(sample, opt, cache);
    auto losses = answer_losses(sample, cache);
    Real total = 0;
    for (Real l : losses)
      total += l;
    backward(sample, opt, cache, grads);
    return total;
  }

  // Greedy continuation of the prefix; `sample.answer_ids` is ignored.
  std::vector<int> greedy_decode(const Sample<Real>& sample, int n_tokens,
                                 const ForwardOptions& opt = {}) const {
    Sample<Real> work = sample;
    work.answer_ids.clear();
    std::vector<int> out;
    for (int step = 0; step < n_tokens; ++step) {
      detail::ForwardCache<Real> cache;
      // Decoded tokens enter the sequence as pseudo-answer context.
      Sample<Real> ctx = work;
      ctx.answer_ids = out;
      ctx.answer_ids.push_back(0); // placeholder target; only embeddings of x_<L are used
      run(ctx, opt, cache);
      Eigen::Index best = 0;
      cache.logits.row(cache.logits.rows() - 1).maxCoeff(&best);
      out.push_back(static_cast<int>(best));
    }
    return out;
  }

private:
  void check_ids(const std::vector<int>& ids) const {
    for (int id : ids)
      if (id < 0 || id >= cfg.vocab_size)
        throw data_error("token id " + std::to_string(id) + " out of range [0, " +
                         std::to_string(cfg.vocab_size) + ")");
  }

  Mat<Real> positional_row(int t) const {
    Mat<Real> p(1, cfg.model_dim);
    for (int i = 0; i < cfg.model_dim; i += 2) {
      double freq = std::pow(10000.0, -static_cast<double>(i) / cfg.model_dim);
      p(0, i) = static_cast<Real>(std::sin(t * freq));
      if (i + 1 < cfg.model_dim)
        p(0, i + 1) = static_cast<Real>(std::cos(t * freq));
    }
    return p;
  }

  void effective_qv(const Mat<Real>& xn1, const LayerWeights<Real>& lw,
                    const LayerLora<Real>& ll, const ForwardOptions& opt,
                    detail::LayerCache<Real>& out) const {
    const Real s = lora_scale();
    out.Q = xn1 * lw.Wq;
    if (opt.adapters && ll.q.enabled()) {
      out.Uq = xn1 * ll.q.B;
      out.Q += s * (out.Uq * ll.q.A);
    }
    out.K = xn1 * lw.Wk;
    out.V = xn1 * lw.Wv;
    if (opt.adapters && ll.v.enabled()) {
      out.Uv = xn1 * ll.v.B;
      out.V += s * (out.Uv * ll.v.A);
    }
  }

  void run(const Sample<Real>& sample, const ForwardOptions& opt,
           detail::ForwardCache<Real>& cache) const {
    check_ids(sample.instruction_ids);
    check_ids(sample.answer_ids);
    if (sample.descriptor.size() != kDescriptorDim)
      throw data_error("descriptor must have " + std::to_string(kDescriptorDim) + " entries");
    if (!sample.descriptor.allFinite())
      throw data_error("descriptor has non-finite entries");

    const int d = cfg.model_dim;
    Mat<Real> h_v(0, d), h_p(0, d);

    if (opt.use_visual) {
      Vec<Real> d_vis = sample.descriptor.head(kDescriptorHalf);
      Vec<Real> flat = frozen.vis_stub * d_vis;
      cache.vis_raw = Eigen::Map<Mat<Real>>(flat.data(), cfg.prior_dim, cfg.n_visual_tokens)
                          .transpose();
      cache.h1_gamma = cache.vis_raw * trainable.gamma.W1;
      cache.h1_gamma.rowwise() += trainable.gamma.b1.row(0);
      cache.a1_gamma = detail::gelu_mat(cache.h1_gamma);
      h_v = cache.a1_gamma * trainable.gamma.W2;
      h_v.rowwise() += trainable.gamma.b2.row(0);
      cache.n_visual_rows = cfg.n_visual_tokens;
    }
    if (opt.use_prior) {
      Vec<Real> d_pri = sample.descriptor.tail(kDescriptorHalf);
      cache.zp = (frozen.prior_stub * d_pri).transpose();
      cache.h1_theta = cache.zp * trainable.theta.W1;
      cache.h1_theta.row(0) += trainable.theta.b1.row(0);
      cache.a1_theta = detail::gelu_mat(cache.h1_theta);
      h_p = cache.a1_theta * trainable.theta.W2;
      h_p.row(0) += trainable.theta.b2.row(0);
    }

    Mat<Real> h_q(static_cast<Eigen::Index>(sample.instruction_ids.size()), d);
    for (std::size_t i = 0; i < sample.instruction_ids.size(); ++i)
      h_q.row(static_cast<Eigen::Index>(i)) = frozen.embed.row(sample.instruction_ids[i]);

    Mat<Real> prefix = assemble_sequence(h_v, h_p, h_q, cfg.prior_token_position);
    cache.prefix_len = static_cast<int>(prefix.rows());
    if (opt.use_prior) {
      bool after = cfg.prior_token_position == PriorTokenPosition::after_visual;
      cache.prior_row = after ? cache.n_visual_rows : 0;
    }

    const int L = static_cast<int>(sample.answer_ids.size());
    const int T = cache.prefix_len + std::max(0, L - 1);
    if (T == 0)
      throw data_error("empty sequence: need at least one prefix token or answer context");

    cache.x0.resize(T, d);
    cache.x0.topRows(prefix.rows()) = prefix;
    for (int i = 0; i + 1 < L; ++i)
      cache.x0.row(cache.prefix_len + i) = frozen.embed.row(sample.answer_ids[i]);
    for (int t = 0; t < T; ++t)
      cache.x0.row(t) += positional_row(t).row(0);

    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    const Real neg_inf = -std::numeric_limits<Real>::infinity();

    Mat<Real> x = cache.x0;
    cache.layers.resize(cfg.n_layers);
    for (int l = 0; l < cfg.n_layers; ++l) {
      auto& lc = cache.layers[l];
      const auto& lw = frozen.layers[l];
      lc.x_in = x;
      detail::layer_norm_forward(lc.x_in, lw.ln1_g, lw.ln1_b, lc.xn1, lc.xhat1, lc.inv1);
      effective_qv(lc.xn1, lw, trainable.lora[l], opt, lc);

      lc.P.resize(H);
      lc.attn_concat.resize(T, d);
      for (int h = 0; h < H; ++h) {
        auto Qh = lc.Q.middleCols(h * dh, dh);
        auto Kh = lc.K.middleCols(h * dh, dh);
        auto Vh = lc.V.middleCols(h * dh, dh);
        Mat<Real> S = (Qh * Kh.transpose()) * scale;
        for (int i = 0; i < T; ++i)
          for (int j = i + 1; j < T; ++j)
            S(i, j) = neg_inf;
        Mat<Real>& P = lc.P[h];
        P.resize(T, T);
        for (int i = 0; i < T; ++i) {
          Real mx = S.row(i).head(i + 1).maxCoeff();
          Eigen::Matrix<Real, 1, Eigen::Dynamic> ex =
              (S.row(i).array() - mx).exp().matrix();
          for (int j = i + 1; j < T; ++j)
            ex(j) = 0;
          P.row(i) = ex / ex.sum();
        }
        lc.attn_concat.middleCols(h * dh, dh) = P * Vh;
      }
      lc.x_mid = lc.x_in + lc.attn_concat * lw.Wo;

      detail::layer_norm_forward(lc.x_mid, lw.ln2_g, lw.ln2_b, lc.xn2, lc.xhat2, lc.inv2);
      lc.h_ff = lc.xn2 * lw.Wf1;
      lc.h_ff.rowwise() += lw.bf1.row(0);
      lc.a_ff = detail::gelu_mat(lc.h_ff);
      lc.x_out = lc.x_mid + lc.a_ff * lw.Wf2;
      lc.x_out.rowwise() += lw.bf2.row(0);
      x = lc.x_out;
    }

    detail::layer_norm_forward(x, frozen.lnf_g, frozen.lnf_b, cache.xf, cache.xhatf,
                               cache.invf);
    cache.logits = cache.xf * frozen.w_out;
    cache.logits.rowwise() += frozen.b_out.row(0);
  }

  std::vector<Real> answer_losses(const Sample<Real>& sample,
                                  const detail::ForwardCache<Real>& cache) const {
    const int L = static_cast<int>(sample.answer_ids.size());
    if (L < 1)
      throw data_error("nll requires at least one answer token");
    if (cache.prefix_len < 1)
      throw data_error("nll requires a non-empty prefix");
    std::vector<Real> losses(L);
    for (int i = 0; i < L; ++i) {
      const int row = cache.prefix_len - 1 + i;
      const auto z = cache.logits.row(row);
      Real mx = z.maxCoeff();
      Real lse = mx + std::log((z.array() - mx).exp().sum());
      losses[i] = lse - z(sample.answer_ids[i]);
    }
    return losses;
  }

  void backward(const Sample<Real>& sample, const ForwardOptions& opt,
                const detail::ForwardCache<Real>& cache, Trainable<Real>& grads) const {
    const int T = static_cast<int>(cache.x0.rows());
    const int L = static_cast<int>(sample.answer_ids.size());
    const int V = cfg.vocab_size;

    Mat<Real> dlogits = Mat<Real>::Zero(T, V);
    for (int i = 0; i < L; ++i) {
      const int row = cache.prefix_len - 1 + i;
      const auto z = cache.logits.row(row);
      Real mx = z.maxCoeff();
      Eigen::Matrix<Real, 1, Eigen::Dynamic> p = (z.array() - mx).exp().matrix();
      p /= p.sum();
      dlogits.row(row) += p;
      dlogits(row, sample.answer_ids[i]) -= Real(1);
    }

    Mat<Real> dxf = dlogits * frozen.w_out.transpose();
    Mat<Real> dx = detail::layer_norm_backward(dxf, frozen.lnf_g, cache.xhatf, cache.invf);

    const int H = cfg.n_heads;
    const int dh = cfg.head_dim();
    const Real scale = Real(1) / std::sqrt(static_cast<Real>(dh));
    const Real s = lora_scale();

    for (int l = cfg.n_layers - 1; l >= 0; --l) {
      const auto& lc = cache.layers[l];
      const auto& lw = frozen.layers[l];
      const auto& ll = trainable.lora[l];
      auto& lg = grads.lora[l];

      // feed-forward block
      Mat<Real> dx_mid = dx; // residual path
      Mat<Real> da_ff = dx * lw.Wf2.transpose();
      Mat<Real> dh_ff = da_ff.cwiseProduct(detail::gelu_grad_mat(lc.h_ff));
      Mat<Real> dxn2 = dh_ff * lw.Wf1.transpose();
      dx_mid += detail::layer_norm_backward(dxn2, lw.ln2_g, lc.xhat2, lc.inv2);

      // attention block
      Mat<Real> dx_in = dx_mid; // residual path
      Mat<Real> d_concat = dx_mid * lw.Wo.transpose();
      Mat<Real> dQ = Mat<Real>::Zero(T, cfg.model_dim);
      Mat<Real> dK = Mat<Real>::Zero(T, cfg.model_dim);
      Mat<Real> dV = Mat<Real>::Zero(T, cfg.model_dim);
      for (int h = 0; h < H; ++h) {
        auto Qh = lc.Q.middleCols(h * dh, dh);
        auto Kh = lc.K.middleCols(h * dh, dh);
        auto Vh = lc.V.middleCols(h * dh, dh);
        const Mat<Real>& P = lc.P[h];
        Mat<Real> dOh = d_concat.middleCols(h * dh, dh);
        Mat<Real> dP = dOh * Vh.transpose();
        dV.middleCols(h * dh, dh) = P.transpose() * dOh;
        // softmax backward, masked entries have P == 0 so contribute nothing
        Mat<Real> dS(T, T);
        for (int i = 0; i < T; ++i) {
          Real dot = dP.row(i).cwiseProduct(P.row(i)).sum();
          dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix());
        }
        dQ.middleCols(h * dh, dh) = (dS * Kh) * scale;
        dK.middleCols(h * dh, dh) = (dS.transpose() * Qh) * scale;
      }

      Mat<Real> dxn1 = dK * lw.Wk.transpose();
      dxn1 += dQ * lw.Wq.transpose();
      if (opt.adapters && ll.q.enabled()) {
        lg.q.A += s * (lc.Uq.transpose() * dQ);
        Mat<Real> dUq = s * (dQ * ll.q.A.transpose());
        lg.q.B += lc.xn1.transpose() * dUq;
        dxn1 += dUq * ll.q.B.transpose();
      }
      dxn1 += dV * lw.Wv.transpose();
      if (opt.adapters && ll.v.enabled()) {
        lg.v.A += s * (lc.Uv.transpose() * dV);
        Mat<Real> dUv = s * (dV * ll.v.A.transpose());
        lg.v.B += lc.xn1.transpose() * dUv;
        dxn1 += dUv * ll.v.B.transpose();
      }
      dx_in += detail::layer_norm_backward(dxn1, lw.ln1_g, lc.xhat1, lc.inv1);
      dx = dx_in;
    }

    // dx now holds gradients w.r.t. the embedded sequence; route the
    // visual and prior rows into their projectors, ignore frozen embeddings.
    if (opt.use_visual) {
      bool after = cfg.prior_token_position == PriorTokenPosition::after_visual;
      int vis_start = after ? 0 : (cache.prior_row >= 0 ? 1 : 0);
      Mat<Real> dHv = dx.middleRows(vis_start, cache.n_visual_rows);
      grads.gamma.W2 += cache.a1_gamma.transpose() * dHv;
      grads.gamma.b2 += dHv.colwise().sum();
      Mat<Real> da1 = dHv * trainable.gamma.W2.transpose();
      Mat<Real> dh1 = da1.cwiseProduct(detail::gelu_grad_mat(cache.h1_gamma));
      grads.gamma.W1 += cache.vis_raw.transpose() * dh1;
      grads.gamma.b1 += dh1.colwise().sum();
    }
    if (opt.use_prior) {
      Mat<Real> dHp = dx.row(cache.prior_row);
      grads.theta.W2 += cache.a1_theta.transpose() * dHp;
      grads.theta.b2 += dHp;
      Mat<Real> da1 = dHp * trainable.theta.W2.transpose();
      Mat<Real> dh1 = da1.cwiseProduct(detail::gelu_grad_mat(cache.h1_theta));
      grads.theta.W1 += cache.zp.transpose() * dh1;
      grads.theta.b1 += dh1;
    }
  }
};

// SHA-256 over the raw bytes of every frozen tensor, fixed order.
template <typename Real> std::string frozen_sha256(const Model<Real>& m) {
  Sha256 h;
  auto add = [&](const Mat<Real>& t) {
    h.update(t.data(), sizeof(Real) * static_cast<std::size_t>(t.size()));
  };
  add(m.frozen.embed);
  for (const auto& lw : m.frozen.layers) {
    add(lw.ln1_g);
    add(lw.ln1_b);
    add(lw.Wq);
    add(lw.Wk);
    add(lw.Wv);
    add(lw.Wo);
    add(lw.ln2_g);
    add(lw.ln2_b);
    add(lw.Wf1);
    add(lw.bf1);
    add(lw.Wf2);
    add(lw.bf2);
  }
  add(m.frozen.lnf_g);
  add(m.frozen.lnf_b);
  add(m.frozen.w_out);
  add(m.frozen.b_out);
  add(m.frozen.vis_stub);
  add(m.frozen.prior_stub);
  return h.hex();
}

template <typename Real> std::string trainable_sha256(Model<Real>& m) {
  Sha256 h;
  for_each_trainable(m.trainable, [&](const std::string&, Mat<Real>& t) {
    h.update(t.data(), sizeof(Real) * static_cast<std::size_t>(t.size()));
  });
  return h.hex();
}

struct RankAuditEntry {
  std::string name;
  int rank = 0;
  int bound = 0;
};

// Numerical rank (singular values > 1e-8 * sigma_max) of each B*A product.
template <typename Real>
std::vector<RankAuditEntry> effective_rank_audit(const Model<Real>& m) {
  std::vector<RankAuditEntry> out;
  for (std::size_t l = 0; l < m.trainable.lora.size(); ++l) {
    auto audit_one = [&](const LoraPair<Real>& pair, const std::string& target) {
      if (!pair.enabled())
        return;
      Eigen::MatrixXd prod = (pair.B * pair.A).template cast<double>();
      Eigen::JacobiSVD<Eigen::MatrixXd> svd(prod);
      const auto& sv = svd.singularValues();
      double smax = sv.size() > 0 ? sv(0) : 0.0;
      int rank = 0;
      if (smax > 0)
        for (Eigen::Index i = 0; i < sv.size(); ++i)
          if (sv(i) > 1e-8 * smax)
            ++rank;
      out.push_back({"layer" + std::to_string(l) + "." + target, rank, m.cfg.lora_rank});
    };
    audit_one(m.trainable.lora[l].q, "attn_q");
    audit_one(m.trainable.lora[l].v, "attn_v");
  }
  return out;
}

// Central-difference check of the analytic Θ gradients; returns the
// maximum relative error over the sampled coordinates.
template <typename Real>
Real grad_check(Model<Real>& model, const Sample<Real>& sample, Real epsilon,
                int coords_per_tensor = 32, std::uint64_t seed = 12345,
                const ForwardOptions& opt = {}) {
  if (!(epsilon >= Real(1e-6) && epsilon <= Real(1e-3)))
    throw data_error("grad_check: epsilon must be in [1e-6, 1e-3]");

  Trainable<Real> grads = zeros_like(model.trainable);
  model.nll_with_grads(sample, grads, opt);

  std::vector<Mat<Real>*> params, analytic;
  for_each_trainable(model.trainable,
                     [&](const std::string&, Mat<Real>& t) { params.push_back(&t); });
  for_each_trainable(grads, [&](const std::string&, Mat<Real>& g) { analytic.push_back(&g); });

  std::mt19937_64 rng(seed);
  Real max_rel = 0;
  for (std::size_t ti = 0; ti < params.size(); ++ti) {
    Mat<Real>& tensor = *params[ti];
    const Mat<Real>& grad = *analytic[ti];
    const Eigen::Index n = tensor.size();
    if (n == 0)
      continue;
    const Eigen::Index n_coords = std::min<Eigen::Index>(coords_per_tensor, n);
    for (Eigen::Index k = 0; k < n_coords; ++k) {
      Eigen::Index idx = static_cast<Eigen::Index>(rng() % static_cast<std::uint64_t>(n));
      Real saved = tensor.data()[idx];
      tensor.data()[idx] = saved + epsilon;
      Real up = model.nll(sample, opt);
      tensor.data()[idx] = saved - epsilon;
      Real down = model.nll(sample, opt);
      tensor.data()[idx] = saved;
      Real numeric = (up - down) / (Real(2) * epsilon);
      Real a = grad.data()[idx];
      // Below ~1e-9 the central difference is dominated by cancellation
      // noise (machine epsilon over the step); treat both-tiny as zero.
      Real denom = std::abs(numeric) + std::abs(a);
      if (denom < Real(1e-9))
        continue;
      Real rel = std::abs(numeric - a) / std::max(denom, Real(1e-8));
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

} // namespace rege::toy
