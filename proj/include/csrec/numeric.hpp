#pragma once

#include <span>

#include "csrec/types.hpp"

namespace csrec {

constexpr double kLogFloor = 1e-12;

double logsumexp(std::span<const double> values);
double logsumexp(const Eigen::Ref<const RowVector>& values);

RowVector softmax(const Eigen::Ref<const RowVector>& logits);
RowVector log_softmax(const Eigen::Ref<const RowVector>& logits);

// Row-wise softmax of a batch of logits.
Matrix softmax_rows(const Matrix& logits);

double entropy(const Eigen::Ref<const RowVector>& p);

bool all_finite(const Eigen::Ref<const RowVector>& v);

}  // namespace csrec
