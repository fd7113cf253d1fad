#pragma once

#include <Eigen/Core>

#include <functional>

namespace tgcrf {

/// Objective callback: returns f(x) and fills grad with the gradient.
using ObjectiveFn = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct LbfgsConfig {
    int max_iterations = 500;
    double gradient_tolerance = 1e-6;  // on the max-norm of the gradient
    int memory = 10;
    int max_line_search_steps = 40;
    double armijo_c1 = 1e-4;
    double wolfe_c2 = 0.9;
};

struct LbfgsResult {
    Eigen::VectorXd x;
    double fx = 0.0;
    int iterations = 0;
    bool converged = false;
};

/// Limited-memory BFGS minimization with a strong-Wolfe line search. Accepted
/// iterates are strictly non-increasing in f; on non-convergence the best
/// iterate seen is returned with converged=false.
LbfgsResult lbfgs_minimize(const ObjectiveFn& objective, Eigen::VectorXd x0,
                           const LbfgsConfig& config = {});

}  // namespace tgcrf
