#include <cmath>
#include <random>

#include "csrec/error.hpp"
#include "csrec/numeric.hpp"
#include "csrec/teacher.hpp"

namespace csrec::teacher {

namespace {

const double kLogFloorValue = std::log(kLogFloor);

void check_distribution(const Eigen::Ref<const RowVector>& v, const char* name) {
  if ((v.array() < 0.0).any() || std::abs(v.sum() - 1.0) > 1e-6)
    throw Error(ErrorKind::Parameter, std::string(name) + " is not a probability vector");
}

}  // namespace

double kl_divergence(const Eigen::Ref<const RowVector>& p, const Eigen::Ref<const RowVector>& q) {
  if (p.size() != q.size())
    throw Error(ErrorKind::Shape, "kl_divergence: length " + std::to_string(p.size()) + " vs " +
                                      std::to_string(q.size()));
  check_distribution(p, "P");
  check_distribution(q, "Q");
  double kl = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (p[k] <= 0.0) continue;
    kl += p[k] * (std::log(p[k]) - std::log(std::max(q[k], kLogFloor)));
  }
  return kl;
}

NoiseModel::NoiseModel(int num_items, int dim, std::uint64_t seed)
    : num_items_(num_items),
      dim_(dim),
      m_("noise.m", num_items, dim),
      n_("noise.n", dim, num_items) {
  if (dim < 1 || dim >= num_items)
    throw Error(ErrorKind::Parameter, "noise rank d must satisfy 1 <= d < |I| (d=" +
                                          std::to_string(dim) + ", |I|=" +
                                          std::to_string(num_items) + ")");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(dim)));
  for (Eigen::Index i = 0; i < m_.value.size(); ++i) m_.value.data()[i] = normal(rng);
  for (Eigen::Index i = 0; i < n_.value.size(); ++i) n_.value.data()[i] = normal(rng);
}

Matrix NoiseModel::log_h(Eigen::ArrayXXd* floored) const {
  Matrix a = m_.value * n_.value;
  const Eigen::RowVectorXd col_max = a.colwise().maxCoeff();
  const Eigen::RowVectorXd log_z =
      col_max.array() + (a.rowwise() - col_max).array().exp().colwise().sum().log();
  a.rowwise() -= log_z;
  if (floored) *floored = (a.array() < kLogFloorValue).cast<double>();
  return a.cwiseMax(kLogFloorValue);
}

Matrix NoiseModel::h() const {
  Matrix a = m_.value * n_.value;
  const Eigen::RowVectorXd col_max = a.colwise().maxCoeff();
  a.rowwise() -= col_max;
  a = a.array().exp().matrix();
  const Eigen::RowVectorXd z = a.colwise().sum();
  for (Eigen::Index j = 0; j < a.cols(); ++j) a.col(j) /= z[j];
  return a;
}

RobustLossTerms robust_loss_terms(const Eigen::Ref<const RowVector>& logits_main,
                                  const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                                  const Matrix& log_h, double alpha, bool expectation_term) {
  if (!logits_main.allFinite() || !logits_side.allFinite())
    throw Error(ErrorKind::Numeric, "robust loss needs finite logits");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw Error(ErrorKind::Parameter, "alpha must be in [0, 1]");
  if (logits_main.size() != logits_side.size() || log_h.rows() != logits_main.size())
    throw Error(ErrorKind::Shape, "robust loss inputs disagree on catalog size");
  if (target < 1 || target > logits_main.size())
    throw Error(ErrorKind::Input, "target outside catalog");
  const RowVector p1 = softmax(logits_main);
  const RowVector p2 = softmax(logits_side);
  RobustLossTerms t;
  t.kl_side_main = kl_divergence(p2, p1);
  t.kl_main_side = kl_divergence(p1, p2);
  if (expectation_term) t.expectation = -log_h.row(target - 1).dot(p1);
  t.value = alpha * t.kl_side_main + (1.0 - alpha) * t.kl_main_side + t.expectation;
  return t;
}

double robust_loss(const Eigen::Ref<const RowVector>& logits_main,
                   const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                   const NoiseModel& noise, double alpha, bool expectation_term) {
  return robust_loss_terms(logits_main, logits_side, target, noise.log_h(), alpha,
                           expectation_term)
      .value;
}

RowVector robust_loss_grad(const Eigen::Ref<const RowVector>& logits_main,
                           const Eigen::Ref<const RowVector>& logits_side, ItemId target,
                           const Matrix& log_h, double alpha, bool expectation_term) {
  const RowVector lp1 = log_softmax(logits_main);
  const RowVector lp2 = log_softmax(logits_side);
  const RowVector p1 = lp1.array().exp();
  const RowVector p2 = lp2.array().exp();
  const RowVector log_ratio = lp1 - lp2;
  const double kl12 = p1.dot(log_ratio);
  RowVector g = alpha * (p1 - p2);
  g.array() += (1.0 - alpha) * p1.array() * (log_ratio.array() - kl12);
  if (expectation_term) {
    const auto lh = log_h.row(target - 1);
    const double mean = lh.dot(p1);
    g.array() -= p1.array() * (lh.array() - mean);
  }
  return g;
}

TrainingLevelLoss::TrainingLevelLoss(const RecommenderModel& side, NoiseModel& noise, double alpha,
                                     bool expectation_term)
    : side_(side), noise_(noise), alpha_(alpha), expectation_(expectation_term) {
  if (side.num_items() != noise.num_items())
    throw Error(ErrorKind::Shape, "side teacher and noise model disagree on catalog size");
}

std::vector<Parameter*> TrainingLevelLoss::extra_parameters() { return {&noise_.m(), &noise_.n()}; }

double TrainingLevelLoss::compute(const seqmodel::BatchView& batch, const Matrix& logits,
                                  Matrix& dlogits) {
  const auto B = logits.rows();
  const double inv_b = 1.0 / static_cast<double>(B);
  const Matrix side_logits = side_.forward(batch.sequences);
  Eigen::ArrayXXd floored;
  const Matrix log_h = noise_.log_h(expectation_ ? &floored : nullptr);
  if (expectation_) floored_ += static_cast<std::size_t>(floored.sum());
  dlogits.resize(B, logits.cols());
  last_terms_.assign(static_cast<std::size_t>(B), {});
  // coeff(i, j) = d(sum of expectation terms)/d log h_{i,j}, over unfloored entries
  Matrix coeff;
  if (expectation_) coeff = Matrix::Zero(logits.cols(), logits.cols());
  double total = 0.0;
  for (Eigen::Index b = 0; b < B; ++b) {
    const ItemId target = batch.sample(static_cast<std::size_t>(b)).target;
    const auto row = logits.row(b);
    const auto terms =
        robust_loss_terms(row, side_logits.row(b), target, log_h, alpha_, expectation_);
    last_terms_[static_cast<std::size_t>(b)] = terms;
    total += terms.value + seqmodel::cross_entropy_loss(row, target);
    dlogits.row(b) = (robust_loss_grad(row, side_logits.row(b), target, log_h, alpha_, expectation_) +
                      seqmodel::cross_entropy_grad(row, target)) *
                     inv_b;
    if (expectation_) {
      const RowVector p1 = softmax(row);
      coeff.row(target - 1).array() -= p1.array() * (1.0 - floored.row(target - 1));
    }
  }
  if (expectation_) {
    // log h_{i,j} = A_{i,j} - logsumexp_r A_{r,j}  =>  dA = C - h * colsum(C)
    const Matrix h = log_h.array().exp().matrix();
    Matrix grad_a = coeff;
    const Eigen::RowVectorXd col = coeff.colwise().sum();
    grad_a.array() -= h.array().rowwise() * col.array();
    grad_a *= inv_b;
    noise_.m().grad.noalias() += grad_a * noise_.n().value.transpose();
    noise_.n().grad.noalias() += noise_.m().value.transpose() * grad_a;
  }
  return total * inv_b;
}

}  // namespace csrec::teacher
