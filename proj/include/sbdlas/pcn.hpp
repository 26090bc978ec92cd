#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

#include <Eigen/Dense>

#include "sbdlas/errors.hpp"
#include "sbdlas/gaussian.hpp"
#include "sbdlas/rng.hpp"

namespace sbdlas {

using PotentialFn = std::function<double(const Eigen::VectorXd&)>;

struct ChainConfig {
    long steps = 5000;
    double beta = 0.1;      // in (0, 1]
    double burn_in = 0.2;   // fraction of steps discarded
    long thin = 10;         // retention stride
    std::uint64_t seed = 0;
    std::optional<Eigen::VectorXd> start; // defaults to the prior mean

    void validate() const {
        if (steps < 1) throw std::invalid_argument("ChainConfig: steps < 1");
        if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("ChainConfig: beta not in (0,1]");
        if (!(burn_in >= 0.0 && burn_in < 1.0))
            throw std::invalid_argument("ChainConfig: burn_in not in [0,1)");
        if (thin < 1) throw std::invalid_argument("ChainConfig: thin < 1");
    }
};

struct ChainResult {
    std::vector<Eigen::VectorXd> samples; // post burn-in, thinned
    double acceptance_rate = 0.0;
    Eigen::VectorXd potential_trace;      // potential after each step
    std::vector<char> accepted;           // per-step accept flag
};

/// theta' = mu + sqrt(1 - beta^2) (theta - mu) + beta L xi.
/// At beta = 1 this is an independent draw from the prior.
inline Eigen::VectorXd pcn_propose(const Eigen::VectorXd& theta, const GaussianState& prior,
                                   double beta, Rng& rng) {
    if (!(beta > 0.0 && beta <= 1.0)) throw std::invalid_argument("pcn_propose: beta not in (0,1]");
    const double contraction = std::sqrt(1.0 - beta * beta);
    std::normal_distribution<double> normal;
    Eigen::VectorXd xi(prior.dim());
    for (int i = 0; i < prior.dim(); ++i) xi[i] = normal(rng);
    return prior.mean + contraction * (theta - prior.mean) + beta * (prior.chol * xi);
}

/// Accept with probability min(1, exp(phi_current - phi_proposed)).
inline bool pcn_accept(double phi_current, double phi_proposed, Rng& rng) {
    if (!std::isfinite(phi_proposed)) return false;
    if (phi_proposed <= phi_current) return true;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    return unif(rng) < std::exp(phi_current - phi_proposed);
}

inline ChainResult run_chain(const PotentialFn& potential, const GaussianState& prior,
                             const ChainConfig& cfg) {
    cfg.validate();
    Rng rng = make_rng(cfg.seed);

    Eigen::VectorXd theta = cfg.start.value_or(prior.mean);
    if (theta.size() != prior.dim())
        throw std::invalid_argument("run_chain: start dimension != prior dimension");
    double phi = potential(theta);
    if (!std::isfinite(phi))
        throw std::runtime_error("run_chain: potential not finite at the initial state");

    const long burn = static_cast<long>(cfg.burn_in * cfg.steps);
    ChainResult out;
    out.potential_trace.resize(cfg.steps);
    out.accepted.resize(cfg.steps);
    out.samples.reserve(static_cast<std::size_t>((cfg.steps - burn) / cfg.thin));

    long n_accept = 0;
    for (long s = 1; s <= cfg.steps; ++s) {
        const Eigen::VectorXd prop = pcn_propose(theta, prior, cfg.beta, rng);
        const double phi_prop = potential(prop);
        const bool acc = pcn_accept(phi, phi_prop, rng);
        if (acc) {
            theta = prop;
            phi = phi_prop;
            ++n_accept;
        }
        out.potential_trace[s - 1] = phi;
        out.accepted[s - 1] = acc ? 1 : 0;
        if (s > burn && (s - burn) % cfg.thin == 0) out.samples.push_back(theta);
    }
    out.acceptance_rate = static_cast<double>(n_accept) / cfg.steps;
    return out;
}

/// Unbiased sample mean/covariance (divisor n-1), with jitter added before
/// factorization. Negative jitter selects the default 1e-6 tr(Sigma)/p.
inline GaussianState gaussian_moments(const std::vector<Eigen::VectorXd>& samples,
                                      double jitter = -1.0) {
    if (samples.size() < 2)
        throw insufficient_data_error("gaussian_moments: need at least 2 samples, got " +
                                      std::to_string(samples.size()));
    const int p = static_cast<int>(samples.front().size());
    const double n = static_cast<double>(samples.size());

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(p);
    for (const auto& s : samples) mean += s;
    mean /= n;

    Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
    for (const auto& s : samples) {
        const Eigen::VectorXd d = s - mean;
        cov.noalias() += d * d.transpose();
    }
    cov /= (n - 1.0);

    if (jitter < 0.0) jitter = std::max(1e-6 * cov.trace() / p, 1e-12);
    cov.diagonal().array() += jitter;
    return GaussianState::from_moments(std::move(mean), std::move(cov));
}

} // namespace sbdlas
