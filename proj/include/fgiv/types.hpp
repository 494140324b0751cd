#pragma once

#include <Eigen/Dense>

namespace fgiv {

// Panels are stored with a period per row (T x N) in Eigen's default layout;
// keeping one matrix type across the library lets expressions mix freely.
using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;
using Index = Eigen::Index;

}  // namespace fgiv
