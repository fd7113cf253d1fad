#include "tgcrf/optim.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

namespace tgcrf {

namespace {

struct CorrectionPair {
    Eigen::VectorXd s;
    Eigen::VectorXd y;
    double rho;
};

// Strong-Wolfe line search (bracket + bisection zoom). Returns the accepted
// step, or 0 when no acceptable step was found.
double line_search(const ObjectiveFn& objective, const Eigen::VectorXd& x,
                   const Eigen::VectorXd& direction, double f0, const Eigen::VectorXd& g0,
                   Eigen::VectorXd& x_out, double& f_out, Eigen::VectorXd& g_out,
                   const LbfgsConfig& cfg) {
    const double d0 = g0.dot(direction);
    if (d0 >= 0.0) return 0.0;  // not a descent direction

    auto eval = [&](double step, double& f, Eigen::VectorXd& g) {
        x_out = x + step * direction;
        f = objective(x_out, g);
        return g.dot(direction);
    };

    double lo = 0.0, hi = std::numeric_limits<double>::infinity();
    double f_lo = f0;
    double step = 1.0;
    Eigen::VectorXd g(x.size());

    for (int iter = 0; iter < cfg.max_line_search_steps; ++iter) {
        double f;
        const double d = eval(step, f, g);
        if (!std::isfinite(f) || f > f0 + cfg.armijo_c1 * step * d0) {
            hi = step;  // too long
        } else if (std::abs(d) > cfg.wolfe_c2 * std::abs(d0)) {
            if (d < 0.0) {
                lo = step;  // too short
                f_lo = f;
            } else {
                hi = step;
            }
        } else {
            f_out = f;
            g_out = g;
            return step;
        }
        step = std::isinf(hi) ? 2.0 * step : 0.5 * (lo + hi);
        if (step <= 0.0 || (hi - lo) < 1e-16 * std::max(1.0, lo)) break;
    }

    // Fall back to the best sufficient-decrease point seen, if any.
    if (lo > 0.0 && f_lo < f0) {
        double f;
        eval(lo, f, g);
        f_out = f;
        g_out = g;
        return lo;
    }
    return 0.0;
}

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& objective, Eigen::VectorXd x0,
                           const LbfgsConfig& config) {
    const long n = x0.size();
    LbfgsResult result;
    result.x = x0;

    Eigen::VectorXd grad(n);
    double fx = objective(x0, grad);
    result.fx = fx;

    Eigen::VectorXd best_x = x0;
    double best_fx = fx;

    std::deque<CorrectionPair> history;
    Eigen::VectorXd x = std::move(x0);

    for (int iter = 0; iter < config.max_iterations; ++iter) {
        if (grad.lpNorm<Eigen::Infinity>() <= config.gradient_tolerance) {
            result.converged = true;
            break;
        }

        // Two-loop recursion for the search direction.
        Eigen::VectorXd q = grad;
        std::vector<double> alpha(history.size());
        for (int i = static_cast<int>(history.size()) - 1; i >= 0; --i) {
            alpha[i] = history[i].rho * history[i].s.dot(q);
            q -= alpha[i] * history[i].y;
        }
        if (!history.empty()) {
            const auto& last = history.back();
            q *= last.s.dot(last.y) / last.y.squaredNorm();
        }
        for (std::size_t i = 0; i < history.size(); ++i) {
            const double beta = history[i].rho * history[i].y.dot(q);
            q += (alpha[i] - beta) * history[i].s;
        }
        Eigen::VectorXd direction = -q;

        Eigen::VectorXd x_new(n), g_new(n);
        double f_new = fx;
        double step = line_search(objective, x, direction, fx, grad, x_new, f_new, g_new, config);
        if (step == 0.0) {
            // Retry along steepest descent once; if that also fails we are done.
            direction = -grad;
            history.clear();
            step = line_search(objective, x, direction, fx, grad, x_new, f_new, g_new, config);
            if (step == 0.0) break;
        }

        CorrectionPair pair;
        pair.s = x_new - x;
        pair.y = g_new - grad;
        const double sy = pair.s.dot(pair.y);
        if (sy > 1e-12 * pair.s.norm() * pair.y.norm()) {
            pair.rho = 1.0 / sy;
            history.push_back(std::move(pair));
            if (static_cast<int>(history.size()) > config.memory) history.pop_front();
        }

        x = std::move(x_new);
        fx = f_new;
        grad = std::move(g_new);
        ++result.iterations;

        if (fx < best_fx) {
            best_fx = fx;
            best_x = x;
        }
    }

    if (fx <= best_fx) {
        result.x = x;
        result.fx = fx;
    } else {
        result.x = best_x;
        result.fx = best_fx;
    }
    if (!result.converged) {
        Eigen::VectorXd g_final(n);
        objective(result.x, g_final);
        result.converged = g_final.lpNorm<Eigen::Infinity>() <= config.gradient_tolerance;
    }
    return result;
}

}  // namespace tgcrf
