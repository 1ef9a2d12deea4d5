#include <cmath>

#include "csrec/seqmodel.hpp"

namespace csrec::seqmodel {

namespace {

Matrix sigmoid(const Matrix& x) { return (1.0 / (1.0 + (-x.array()).exp())).matrix(); }

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate, Rng& rng) {
  Matrix mask(rows, cols);
  if (rate <= 0.0) {
    mask.setOnes();
    return mask;
  }
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = keep(rng) ? scale : 0.0;
  return mask;
}

// One GRU layer, gates ordered [reset | update | candidate]:
//   r = s(x Wi_r + bi_r + h Wh_r + bh_r)
//   z = s(x Wi_z + bi_z + h Wh_z + bh_z)
//   n = tanh(x Wi_n + bi_n + r * (h Wh_n + bh_n))
//   h' = (1 - z) * n + z * h
// Masked steps carry h through unchanged.
struct GruLayer {
  Parameter wi, bi, wh, bh;
  int hidden = 0;

  struct StepCache {
    Matrix x, h_prev, r, z, n, ghn;
  };
  std::vector<StepCache> cache;

  GruLayer(const std::string& prefix, int in_dim, int hidden_dim, Rng& rng)
      : wi(prefix + ".w_input", in_dim, 3 * hidden_dim),
        bi(prefix + ".b_input", 1, 3 * hidden_dim),
        wh(prefix + ".w_hidden", hidden_dim, 3 * hidden_dim),
        bh(prefix + ".b_hidden", 1, 3 * hidden_dim),
        hidden(hidden_dim) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(hidden_dim));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Parameter* p : {&wi, &bi, &wh, &bh})
      for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = u(rng);
  }

  // Records activations into `cache` when non-null.
  std::vector<Matrix> run(const std::vector<Matrix>& inputs, const Eigen::ArrayXXd& mask,
                          std::vector<StepCache>* cache) const {
    const Eigen::Index batch = mask.rows();
    const int H = hidden;
    Matrix h = Matrix::Zero(batch, H);
    std::vector<Matrix> outputs;
    outputs.reserve(inputs.size());
    if (cache) cache->assign(inputs.size(), {});
    for (std::size_t t = 0; t < inputs.size(); ++t) {
      const Eigen::ArrayXd m = mask.col(static_cast<Eigen::Index>(t));
      if ((m == 0.0).all()) {
        outputs.push_back(h);
        if (cache) (*cache)[t].h_prev = h;
        continue;
      }
      Matrix gi = inputs[t] * wi.value;
      gi.rowwise() += bi.value.row(0);
      Matrix gh = h * wh.value;
      gh.rowwise() += bh.value.row(0);
      Matrix r = sigmoid(gi.leftCols(H) + gh.leftCols(H));
      Matrix z = sigmoid(gi.middleCols(H, H) + gh.middleCols(H, H));
      Matrix ghn = gh.rightCols(H);
      Matrix n = (gi.rightCols(H).array() + r.array() * ghn.array()).tanh().matrix();
      Matrix cand = ((1.0 - z.array()) * n.array() + z.array() * h.array()).matrix();
      Matrix next = (cand.array().colwise() * m + h.array().colwise() * (1.0 - m)).matrix();
      if (cache)
        (*cache)[t] = StepCache{inputs[t], h, std::move(r), std::move(z), std::move(n), std::move(ghn)};
      h = std::move(next);
      outputs.push_back(h);
    }
    return outputs;
  }

  // douts[t]: gradient w.r.t. this layer's output at step t (may be empty).
  std::vector<Matrix> backward(const std::vector<Matrix>& douts, const Eigen::ArrayXXd& mask) {
    const Eigen::Index batch = mask.rows();
    const int H = hidden;
    const auto in_dim = wi.value.rows();
    std::vector<Matrix> dinputs(douts.size());
    Matrix dh = Matrix::Zero(batch, H);
    for (std::size_t ti = douts.size(); ti-- > 0;) {
      if (douts[ti].size()) dh += douts[ti];
      const auto& c = cache[ti];
      if (c.r.size() == 0) {  // fully masked step
        dinputs[ti] = Matrix::Zero(batch, in_dim);
        continue;
      }
      const Eigen::ArrayXd m = mask.col(static_cast<Eigen::Index>(ti));
      Matrix dcand = (dh.array().colwise() * m).matrix();
      Matrix dh_prev = (dh.array().colwise() * (1.0 - m)).matrix();
      dh_prev.array() += dcand.array() * c.z.array();
      const Eigen::ArrayXXd dn = dcand.array() * (1.0 - c.z.array());
      const Eigen::ArrayXXd dz = dcand.array() * (c.h_prev.array() - c.n.array());
      const Eigen::ArrayXXd dan = dn * (1.0 - c.n.array().square());
      const Eigen::ArrayXXd dr = dan * c.ghn.array();
      const Eigen::ArrayXXd daz = dz * c.z.array() * (1.0 - c.z.array());
      const Eigen::ArrayXXd dar = dr * c.r.array() * (1.0 - c.r.array());
      Matrix dgi(batch, 3 * H);
      dgi << dar.matrix(), daz.matrix(), dan.matrix();
      Matrix dgh(batch, 3 * H);
      dgh << dar.matrix(), daz.matrix(), (dan * c.r.array()).matrix();
      wi.grad.noalias() += c.x.transpose() * dgi;
      bi.grad += dgi.colwise().sum();
      wh.grad.noalias() += c.h_prev.transpose() * dgh;
      bh.grad += dgh.colwise().sum();
      dinputs[ti] = dgi * wi.value.transpose();
      dh_prev.noalias() += dgh * wh.value.transpose();
      dh = std::move(dh_prev);
    }
    return dinputs;
  }
};

class GruEncoder final : public Encoder {
 public:
  GruEncoder(const ModelConfig& cfg, Rng& rng) : dropout_(cfg.effective_dropout()) {
    for (int l = 0; l < cfg.gru_layers; ++l)
      layers_.emplace_back("gru" + std::to_string(l), cfg.dim, cfg.dim, rng);
  }

  Matrix encode(const EncoderInput& input) const override {
    std::vector<Matrix> x = input.steps;
    for (const auto& layer : layers_) x = layer.run(x, input.mask, nullptr);
    return x.back();
  }

  Matrix encode_train(const EncoderInput& input, Rng& rng) override {
    std::vector<Matrix> x = input.steps;
    drop_masks_.clear();
    for (auto& step : x) {
      drop_masks_.push_back(dropout_mask(step.rows(), step.cols(), dropout_, rng));
      step.array() *= drop_masks_.back().array();
    }
    for (auto& layer : layers_) x = layer.run(x, input.mask, &layer.cache);
    mask_ = input.mask;
    return x.back();
  }

  std::vector<Matrix> backward(const Matrix& dstate) override {
    std::vector<Matrix> d(static_cast<std::size_t>(mask_.cols()));
    d.back() = dstate;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) d = it->backward(d, mask_);
    for (std::size_t t = 0; t < d.size(); ++t) d[t].array() *= drop_masks_[t].array();
    return d;
  }

  std::vector<Parameter*> parameters() override {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
      for (Parameter* p : {&l.wi, &l.bi, &l.wh, &l.bh}) out.push_back(p);
    return out;
  }

  std::unique_ptr<Encoder> clone() const override {
    auto copy = std::make_unique<GruEncoder>(*this);
    for (auto& l : copy->layers_) l.cache.clear();
    return copy;
  }

 private:
  double dropout_;
  std::vector<GruLayer> layers_;
  std::vector<Matrix> drop_masks_;
  Eigen::ArrayXXd mask_;
};

}  // namespace

std::unique_ptr<Encoder> make_gru_encoder(const ModelConfig& cfg, Rng& init_rng) {
  return std::make_unique<GruEncoder>(cfg, init_rng);
}

}  // namespace csrec::seqmodel
