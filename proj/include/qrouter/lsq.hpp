#pragma once

// Damped least squares (Levenberg-Marquardt with Marquardt diagonal scaling)
// over real residual vectors, with optional box bounds enforced by projection.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace qrouter::lsq {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

using ResidualFn = std::function<Vector(const Vector&)>;
using JacobianFn = std::function<Matrix(const Vector&)>;

struct Options {
    int max_iterations = 200;
    double step_tolerance = 1e-10; // relative
    double gradient_tolerance = 1e-14;
    double fd_relative_step = 1e-6;
    double initial_damping = 1e-3;
};

struct Problem {
    ResidualFn residual;
    JacobianFn jacobian; // empty -> central finite differences
    std::optional<Vector> lower;
    std::optional<Vector> upper;
};

struct Result {
    Vector x;
    Vector sigma;
    Matrix covariance;
    double residual_norm = 0.0;
    int iterations = 0;
    bool converged = false;
    std::vector<double> cost_history; // squared residual norm after each accepted step
    std::string message;
};

/// Central-difference Jacobian with step h_i = rel * max(|x_i|, 1).
inline Matrix numeric_jacobian(const ResidualFn& f, const Vector& x, double rel = 1e-6) {
    const Vector r0 = f(x);
    Matrix jac(r0.size(), x.size());
    Vector xp = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        const double h = rel * std::max(std::abs(x(i)), 1.0);
        xp(i) = x(i) + h;
        const Vector fp = f(xp);
        xp(i) = x(i) - h;
        const Vector fm = f(xp);
        xp(i) = x(i);
        jac.col(i) = (fp - fm) / (2.0 * h);
    }
    return jac;
}

namespace detail {

inline Vector project(const Vector& x, const Problem& p) {
    Vector y = x;
    if (p.lower) y = y.cwiseMax(*p.lower);
    if (p.upper) y = y.cwiseMin(*p.upper);
    return y;
}

inline Matrix pseudo_inverse(const Matrix& a) {
    Eigen::JacobiSVD<Matrix> svd(a, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vector& s = svd.singularValues();
    const double cutoff = s.size() ? s(0) * 1e-13 * static_cast<double>(a.rows()) : 0.0;
    Vector inv = Vector::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) inv(i) = 1.0 / s(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

} // namespace detail

inline Result solve(const Problem& problem, const Vector& x0, const Options& opt = {}) {
    const auto jacobian = [&](const Vector& x) {
        return problem.jacobian ? problem.jacobian(x) : numeric_jacobian(problem.residual, x, opt.fd_relative_step);
    };

    Result res;
    Vector x = detail::project(x0, problem);
    Vector r = problem.residual(x);
    if (!r.allFinite()) {
        res.x = x;
        res.message = "residual not finite at the initial point";
        return res;
    }
    double cost = r.squaredNorm();
    res.cost_history.push_back(cost);
    double damping = opt.initial_damping;
    Matrix jac = jacobian(x);

    for (int iter = 0; iter < opt.max_iterations; ++iter) {
        const Matrix jtj = jac.transpose() * jac;
        const Vector grad = jac.transpose() * r;
        const double scale = std::max(1.0, jtj.diagonal().maxCoeff());
        if (grad.lpNorm<Eigen::Infinity>() <= opt.gradient_tolerance * scale || cost == 0.0) {
            res.converged = true;
            res.message = "gradient below tolerance";
            break;
        }

        bool accepted = false;
        while (!accepted) {
            Matrix lhs = jtj;
            for (Eigen::Index i = 0; i < lhs.rows(); ++i)
                lhs(i, i) += damping * std::max(jtj(i, i), 1e-12 * scale);
            const Vector step = lhs.ldlt().solve(-grad);
            const Vector trial = detail::project(x + step, problem);
            const Vector r_trial = problem.residual(trial);
            const double cost_trial = r_trial.allFinite() ? r_trial.squaredNorm() : std::numeric_limits<double>::infinity();
            const double step_norm = (trial - x).norm();

            if (cost_trial < cost) {
                x = trial;
                r = r_trial;
                cost = cost_trial;
                res.cost_history.push_back(cost);
                damping = std::max(damping / 3.0, 1e-15);
                accepted = true;
                res.iterations = iter + 1;
                jac = jacobian(x);
                if (step_norm <= opt.step_tolerance * (x.norm() + opt.step_tolerance)) {
                    res.converged = true;
                    res.message = "relative step below tolerance";
                }
            } else {
                damping *= 4.0;
                if (damping > 1e16 || step_norm <= opt.step_tolerance * (x.norm() + opt.step_tolerance)) {
                    // No downhill step exists at machine precision: at a minimum.
                    res.converged = true;
                    res.message = "no further decrease possible";
                    break;
                }
            }
        }
        if (res.converged) break;
    }
    if (!res.converged && res.message.empty()) res.message = "maximum iterations reached";

    res.x = x;
    res.residual_norm = std::sqrt(cost);
    const Eigen::Index m = r.size();
    const Eigen::Index n = x.size();
    const double dof = static_cast<double>(std::max<Eigen::Index>(m - n, 1));
    res.covariance = detail::pseudo_inverse(jac.transpose() * jac) * (cost / dof);
    res.sigma = res.covariance.diagonal().cwiseMax(0.0).cwiseSqrt();
    return res;
}

} // namespace qrouter::lsq
