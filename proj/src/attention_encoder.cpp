#include <cmath>
#include <limits>

#include "csrec/error.hpp"
#include "csrec/seqmodel.hpp"

namespace csrec::seqmodel {

namespace {

constexpr double kLayerNormEps = 1e-5;

void fill_normal(Parameter& p, double stddev, Rng& rng) {
  std::normal_distribution<double> n(0.0, stddev);
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = n(rng);
}

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask = Matrix::Ones(rows, cols);
  if (rate <= 0.0) return mask;
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

struct LayerNormCache {
  Matrix xhat;
  Eigen::ArrayXd inv_std;
};

Matrix layer_norm(const Matrix& x, const Parameter& gain, const Parameter& bias,
                  LayerNormCache* cache) {
  const Eigen::ArrayXd mean = x.rowwise().mean().array();
  Matrix centered = x.colwise() - mean.matrix();
  const Eigen::ArrayXd var = centered.array().square().rowwise().mean();
  const Eigen::ArrayXd inv_std = (var + kLayerNormEps).rsqrt();
  Matrix xhat = (centered.array().colwise() * inv_std).matrix();
  Matrix y = (xhat.array().rowwise() * gain.value.row(0).array()).matrix();
  y.rowwise() += bias.value.row(0);
  if (cache) *cache = LayerNormCache{std::move(xhat), inv_std};
  return y;
}

Matrix layer_norm_backward(const Matrix& dy, Parameter& gain, Parameter& bias,
                           const LayerNormCache& c) {
  gain.grad += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  bias.grad += dy.colwise().sum();
  const Eigen::ArrayXXd dxhat = dy.array().rowwise() * gain.value.row(0).array();
  const Eigen::ArrayXd mean_d = dxhat.rowwise().mean();
  const Eigen::ArrayXd mean_dx = (dxhat * c.xhat.array()).rowwise().mean();
  Eigen::ArrayXXd dx = dxhat.colwise() - mean_d;
  dx -= c.xhat.array().colwise() * mean_dx;
  dx.colwise() *= c.inv_std;
  return dx.matrix();
}

// Single causal self-attention block. With one block and a position-wise
// feed-forward, the last position's state depends only on its own query, so
// only that query is formed; keys/values cover every real item.
class AttentionEncoder final : public Encoder {
 public:
  AttentionEncoder(const ModelConfig& cfg, Rng& rng)
      : dim_(cfg.dim),
        heads_(cfg.heads),
        max_len_(cfg.max_len),
        dropout_(cfg.effective_dropout()),
        position_("attn.position", cfg.max_len, cfg.dim),
        wq_("attn.w_query", cfg.dim, cfg.dim),
        bq_("attn.b_query", 1, cfg.dim),
        wk_("attn.w_key", cfg.dim, cfg.dim),
        bk_("attn.b_key", 1, cfg.dim),
        wv_("attn.w_value", cfg.dim, cfg.dim),
        bv_("attn.b_value", 1, cfg.dim),
        wo_("attn.w_out", cfg.dim, cfg.dim),
        bo_("attn.b_out", 1, cfg.dim),
        ln1_gain_("attn.ln1_gain", 1, cfg.dim),
        ln1_bias_("attn.ln1_bias", 1, cfg.dim),
        w1_("ffn.w1", cfg.dim, 2 * cfg.dim),
        b1_("ffn.b1", 1, 2 * cfg.dim),
        w2_("ffn.w2", 2 * cfg.dim, cfg.dim),
        b2_("ffn.b2", 1, cfg.dim),
        ln2_gain_("ffn.ln2_gain", 1, cfg.dim),
        ln2_bias_("ffn.ln2_bias", 1, cfg.dim) {
    if (heads_ < 1 || dim_ % heads_ != 0)
      throw Error(ErrorKind::Parameter, "embedding size must be divisible by the head count");
    const double init = 0.5 / std::sqrt(static_cast<double>(dim_));
    fill_normal(position_, init, rng);
    for (Parameter* p : {&wq_, &wk_, &wv_, &wo_, &w1_, &w2_}) fill_normal(*p, init, rng);
    ln1_gain_.value.setOnes();
    ln2_gain_.value.setOnes();
  }

  Matrix encode(const EncoderInput& input) const override { return run(input, nullptr, nullptr); }

  Matrix encode_train(const EncoderInput& input, Rng& rng) override {
    cache_ = Cache{};
    return run(input, &rng, &cache_);
  }

  std::vector<Matrix> backward(const Matrix& dstate_in) override {
    Cache& c = cache_;
    const Eigen::Index B = c.active.size();
    const int L = max_len_;
    const int dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Matrix dstate = dstate_in;
    for (Eigen::Index b = 0; b < B; ++b)
      if (!c.active[b]) dstate.row(b).setZero();

    Matrix du2 = layer_norm_backward(dstate, ln2_gain_, ln2_bias_, c.ln2);
    Matrix dy1 = du2;
    Matrix df = (du2.array() * c.drop_ffn.array()).matrix();
    w2_.grad.noalias() += c.hidden.transpose() * df;
    b2_.grad += df.colwise().sum();
    Matrix dpre = ((df * w2_.value.transpose()).array() * (c.hidden.array() > 0.0).cast<double>())
                      .matrix();
    w1_.grad.noalias() += c.y1.transpose() * dpre;
    b1_.grad += dpre.colwise().sum();
    dy1.noalias() += dpre * w1_.value.transpose();

    Matrix du1 = layer_norm_backward(dy1, ln1_gain_, ln1_bias_, c.ln1);
    Matrix dlast = du1;
    Matrix dattn = (du1.array() * c.drop_attn.array()).matrix();
    wo_.grad.noalias() += c.heads_out.transpose() * dattn;
    bo_.grad += dattn.colwise().sum();
    Matrix dheads = dattn * wo_.value.transpose();

    Matrix dq = Matrix::Zero(B, dim_);
    Matrix dk = Matrix::Zero(B * L, dim_);
    Matrix dv = Matrix::Zero(B * L, dim_);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (!c.active[b]) continue;
      for (int h = 0; h < heads_; ++h) {
        const auto& a = c.attn[static_cast<std::size_t>(b * heads_ + h)];
        const auto dout = dheads.row(b).segment(h * dh, dh);
        Eigen::ArrayXd da = Eigen::ArrayXd::Zero(L);
        for (int t = 0; t < L; ++t) {
          if (a[t] == 0.0) continue;
          da[t] = dout.dot(c.v.row(b * L + t).segment(h * dh, dh));
          dv.row(b * L + t).segment(h * dh, dh) += a[t] * dout;
        }
        const double mix = (a * da).sum();
        for (int t = 0; t < L; ++t) {
          if (a[t] == 0.0) continue;
          const double ds = a[t] * (da[t] - mix) * scale;
          dq.row(b).segment(h * dh, dh) += ds * c.k.row(b * L + t).segment(h * dh, dh);
          dk.row(b * L + t).segment(h * dh, dh) += ds * c.q.row(b).segment(h * dh, dh);
        }
      }
    }
    wq_.grad.noalias() += c.last.transpose() * dq;
    bq_.grad += dq.colwise().sum();
    dlast.noalias() += dq * wq_.value.transpose();
    wk_.grad.noalias() += c.x.transpose() * dk;
    bk_.grad += dk.colwise().sum();
    wv_.grad.noalias() += c.x.transpose() * dv;
    bv_.grad += dv.colwise().sum();
    Matrix dx = dk * wk_.value.transpose();
    dx.noalias() += dv * wv_.value.transpose();
    for (Eigen::Index b = 0; b < B; ++b) dx.row(b * L + L - 1) += dlast.row(b);

    std::vector<Matrix> dsteps(static_cast<std::size_t>(L), Matrix(B, dim_));
    for (int t = 0; t < L; ++t) {
      Matrix& ds = dsteps[static_cast<std::size_t>(t)];
      for (Eigen::Index b = 0; b < B; ++b) ds.row(b) = dx.row(b * L + t);
      ds.array() *= c.drop_in[static_cast<std::size_t>(t)].array();
      position_.grad.row(L - 1 - t) += ds.colwise().sum();
    }
    return dsteps;
  }

  std::vector<Parameter*> parameters() override {
    return {&position_, &wq_, &bq_, &wk_, &bk_, &wv_, &bv_, &wo_, &bo_, &ln1_gain_,
            &ln1_bias_, &w1_, &b1_, &w2_, &b2_, &ln2_gain_, &ln2_bias_};
  }

  std::unique_ptr<Encoder> clone() const override {
    auto copy = std::make_unique<AttentionEncoder>(*this);
    copy->cache_ = Cache{};
    return copy;
  }

 private:
  struct Cache {
    std::vector<Matrix> drop_in;
    Matrix x, last, q, k, v, heads_out, drop_attn, y1, hidden, drop_ffn;
    LayerNormCache ln1, ln2;
    std::vector<Eigen::ArrayXd> attn;  // per (row, head), zero at masked slots
    Eigen::Array<bool, Eigen::Dynamic, 1> active;
  };

  Matrix run(const EncoderInput& input, Rng* rng, Cache* cache) const {
    const Eigen::Index B = input.mask.rows();
    const int L = max_len_;
    const int dh = dim_ / heads_;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    const double rate = rng ? dropout_ : 0.0;

    Matrix x(B * L, dim_);
    std::vector<Matrix> drop_in;
    for (int t = 0; t < L; ++t) {
      Matrix step = input.steps[static_cast<std::size_t>(t)];
      step.rowwise() += position_.value.row(L - 1 - t);
      if (rng) {
        drop_in.push_back(dropout_mask(B, dim_, rate, *rng));
        step.array() *= drop_in.back().array();
      }
      for (Eigen::Index b = 0; b < B; ++b) x.row(b * L + t) = step.row(b);
    }
    Matrix last(B, dim_);
    for (Eigen::Index b = 0; b < B; ++b) last.row(b) = x.row(b * L + L - 1);

    Matrix q = last * wq_.value;
    q.rowwise() += bq_.value.row(0);
    Matrix k = x * wk_.value;
    k.rowwise() += bk_.value.row(0);
    Matrix v = x * wv_.value;
    v.rowwise() += bv_.value.row(0);

    Eigen::Array<bool, Eigen::Dynamic, 1> active(B);
    Matrix heads_out = Matrix::Zero(B, dim_);
    std::vector<Eigen::ArrayXd> attn;
    if (cache) attn.resize(static_cast<std::size_t>(B * heads_));
    for (Eigen::Index b = 0; b < B; ++b) {
      active[b] = input.mask(b, L - 1) != 0.0;
      if (!active[b]) continue;
      for (int h = 0; h < heads_; ++h) {
        Eigen::ArrayXd a = Eigen::ArrayXd::Zero(L);
        double mx = -std::numeric_limits<double>::infinity();
        for (int t = 0; t < L; ++t) {
          if (input.mask(b, t) == 0.0) continue;
          a[t] = q.row(b).segment(h * dh, dh).dot(k.row(b * L + t).segment(h * dh, dh)) * scale;
          mx = std::max(mx, a[t]);
        }
        double z = 0.0;
        for (int t = 0; t < L; ++t) {
          if (input.mask(b, t) == 0.0) continue;
          a[t] = std::exp(a[t] - mx);
          z += a[t];
        }
        a /= z;
        for (int t = 0; t < L; ++t)
          if (a[t] != 0.0) heads_out.row(b).segment(h * dh, dh) += a[t] * v.row(b * L + t).segment(h * dh, dh);
        if (cache) attn[static_cast<std::size_t>(b * heads_ + h)] = std::move(a);
      }
    }

    Matrix attn_out = heads_out * wo_.value;
    attn_out.rowwise() += bo_.value.row(0);
    Matrix drop_attn = rng ? dropout_mask(B, dim_, rate, *rng) : Matrix::Ones(B, dim_);
    Matrix u1 = last + (attn_out.array() * drop_attn.array()).matrix();
    LayerNormCache ln1;
    Matrix y1 = layer_norm(u1, ln1_gain_, ln1_bias_, cache ? &ln1 : nullptr);
    Matrix hidden = y1 * w1_.value;
    hidden.rowwise() += b1_.value.row(0);
    hidden = hidden.cwiseMax(0.0);
    Matrix f = hidden * w2_.value;
    f.rowwise() += b2_.value.row(0);
    Matrix drop_ffn = rng ? dropout_mask(B, dim_, rate, *rng) : Matrix::Ones(B, dim_);
    Matrix u2 = y1 + (f.array() * drop_ffn.array()).matrix();
    LayerNormCache ln2;
    Matrix state = layer_norm(u2, ln2_gain_, ln2_bias_, cache ? &ln2 : nullptr);
    for (Eigen::Index b = 0; b < B; ++b)
      if (!active[b]) state.row(b).setZero();

    if (cache) {
      *cache = Cache{std::move(drop_in), std::move(x), std::move(last), std::move(q),
                     std::move(k), std::move(v), std::move(heads_out), std::move(drop_attn),
                     std::move(y1), std::move(hidden), std::move(drop_ffn), std::move(ln1),
                     std::move(ln2), std::move(attn), active};
    }
    return state;
  }

  int dim_, heads_, max_len_;
  double dropout_;
  Parameter position_, wq_, bq_, wk_, bk_, wv_, bv_, wo_, bo_, ln1_gain_, ln1_bias_;
  Parameter w1_, b1_, w2_, b2_, ln2_gain_, ln2_bias_;
  Cache cache_;
};

}  // namespace

std::unique_ptr<Encoder> make_attention_encoder(const ModelConfig& cfg, Rng& init_rng) {
  return std::make_unique<AttentionEncoder>(cfg, init_rng);
}

}  // namespace csrec::seqmodel
