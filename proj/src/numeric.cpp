#include "csrec/numeric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace csrec {

double logsumexp(std::span<const double> values) {
  if (values.empty()) return -std::numeric_limits<double>::infinity();
  const double m = *std::max_element(values.begin(), values.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : values) s += std::exp(v - m);
  return m + std::log(s);
}

double logsumexp(const Eigen::Ref<const RowVector>& values) {
  return logsumexp(std::span<const double>(values.data(), static_cast<std::size_t>(values.size())));
}

RowVector log_softmax(const Eigen::Ref<const RowVector>& logits) {
  return logits.array() - logsumexp(logits);
}

RowVector softmax(const Eigen::Ref<const RowVector>& logits) {
  const double m = logits.maxCoeff();
  RowVector e = (logits.array() - m).exp();
  return e / e.sum();
}

Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (Eigen::Index r = 0; r < logits.rows(); ++r) out.row(r) = softmax(logits.row(r));
  return out;
}

double entropy(const Eigen::Ref<const RowVector>& p) {
  double h = 0.0;
  for (Eigen::Index k = 0; k < p.size(); ++k)
    if (p[k] > 0.0) h -= p[k] * std::log(p[k]);
  return h;
}

bool all_finite(const Eigen::Ref<const RowVector>& v) { return v.allFinite(); }

}  // namespace csrec
