#pragma once

#include <random>
#include <utility>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "sbdlas/errors.hpp"
#include "sbdlas/rng.hpp"

namespace sbdlas {

/// Gaussian distribution {mean, covariance} with its lower Cholesky factor
/// cached at construction. Immutable in normal use.
struct GaussianState {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    Eigen::MatrixXd chol; // lower factor of cov

    int dim() const { return static_cast<int>(mean.size()); }

    static GaussianState from_moments(Eigen::VectorXd mu, Eigen::MatrixXd sigma) {
        if (sigma.rows() != sigma.cols() || sigma.rows() != mu.size())
            throw std::invalid_argument("GaussianState: dimension mismatch");
        sigma = ((sigma + sigma.transpose()) / 2.0).eval();
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        if (llt.info() != Eigen::Success)
            throw conditioning_error(
                "GaussianState: covariance not positive definite; try a larger jitter");
        return GaussianState{std::move(mu), std::move(sigma), llt.matrixL()};
    }

    /// Same distribution with c2 added to the diagonal, refactorized.
    GaussianState with_jitter(double c2) const {
        Eigen::MatrixXd s = cov;
        s.diagonal().array() += c2;
        return from_moments(mean, std::move(s));
    }

    Eigen::VectorXd sample(Rng& rng) const {
        std::normal_distribution<double> normal;
        Eigen::VectorXd xi(dim());
        for (int i = 0; i < dim(); ++i) xi[i] = normal(rng);
        return mean + chol * xi;
    }
};

inline GaussianState isotropic_gaussian(const Eigen::VectorXd& mean, double variance) {
    return GaussianState::from_moments(
        mean, variance * Eigen::MatrixXd::Identity(mean.size(), mean.size()));
}

} // namespace sbdlas
