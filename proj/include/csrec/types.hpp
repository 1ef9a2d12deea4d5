#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

namespace csrec {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using RowVector = Eigen::RowVectorXd;

// Dense item id in [1, num_items]; 0 is padding.
using ItemId = std::int32_t;
using UserId = std::int32_t;
constexpr ItemId kPadding = 0;

using Sequence = std::vector<ItemId>;

}  // namespace csrec
