#pragma once

#include <Eigen/Dense>
#include <vector>

namespace mfg {

// Minimum-cost perfect matching on a square cost matrix (Jonker-Volgenant
// style shortest augmenting paths). Returns the optimal total cost.
double assignment_cost(const Eigen::MatrixXd& cost);

// Exact balanced transportation problem min sum c_ij x_ij subject to row
// sums = supply, column sums = demand (both summing to the same mass),
// solved by the transportation simplex (u-v method). Returns the optimal
// objective.
double transport_lp_cost(const Eigen::MatrixXd& cost,
                         std::vector<double> supply,
                         std::vector<double> demand);

}  // namespace mfg
