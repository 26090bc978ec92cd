#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sbdlas/errors.hpp"
#include "sbdlas/forward_model.hpp"
#include "sbdlas/gaussian.hpp"
#include "sbdlas/pcn.hpp"
#include "sbdlas/rng.hpp"
#include "sbdlas/surrogate.hpp"

namespace sbdlas {

/// Sequence of Gaussian design priors: the initial state followed by the
/// moment approximation of each posterior sample set.
using PriorHistory = std::vector<GaussianState>;

struct SBDConfig {
    int iterations = 10;  // K: posterior sampling / retraining rounds
    int train_points = 100; // M: fine-model draws per training set
    double alpha = 0.0;   // extrapolation weight for the next design prior
    double jitter_c2 = 1e-4; // variance inflation of each extrapolated prior
    ChainConfig chain;       // in-loop posterior chains
    ChainConfig final_chain; // inversion against the problem prior
    ChainConfig init_chain;  // cheap-model chain that seeds the initial state
    std::optional<GaussianState> initial_state; // bypasses the init chain
    NetConfig net;
    std::uint64_t seed = 0; // master seed; all stage seeds derive from it
};

struct IterationStats {
    int iteration = 0;
    double error = std::numeric_limits<double>::quiet_NaN();
    double acceptance = 0.0;
    double train_mse = 0.0;      // surrogate fit used by this iteration's chain
    long long fine_calls = 0;    // cumulative expensive-model calls so far
};

struct SBDResult {
    std::shared_ptr<SurrogateNet> surrogate;
    ChainResult final_chain;
    Eigen::VectorXd theta_hat;
    std::vector<double> error_trace; // initial state + one entry per iteration
    std::vector<IterationStats> iterations;
    PriorHistory prior_history;
    long long fine_calls = 0;
    double final_error = std::numeric_limits<double>::quiet_NaN();
};

/// Mean squared component error of an estimate against the ground truth.
inline double estimation_error(const Eigen::VectorXd& estimate, const Eigen::VectorXd& truth) {
    if (estimate.size() != truth.size())
        throw std::invalid_argument("estimation_error: dimension mismatch");
    return (estimate - truth).squaredNorm() / static_cast<double>(estimate.size());
}

/// Gaussian fit to a cheap-model posterior chain; the usual way to pick the
/// first design prior when no explicit state is supplied.
inline GaussianState initial_prior(const ForwardModel& coarse, const Observation& obs,
                                   const GaussianState& problem_prior, const ChainConfig& cfg,
                                   ChainResult* trace = nullptr) {
    ChainResult chain = run_chain(make_potential(coarse, obs), problem_prior, cfg);
    GaussianState state = gaussian_moments(chain.samples);
    if (trace) *trace = std::move(chain);
    return state;
}

/// Linear extrapolation of the design mean, m_k + alpha (m_k - m_{k-1});
/// the covariance factorization is carried over untouched. With a single
/// entry, or alpha = 0, the latest state is returned unchanged.
inline GaussianState one_step_ahead(const PriorHistory& history, double alpha) {
    if (history.empty()) throw insufficient_data_error("one_step_ahead: empty history");
    if (history.size() == 1 || alpha == 0.0) return history.back();
    GaussianState next = history.back();
    const GaussianState& prev = history[history.size() - 2];
    next.mean = history.back().mean + alpha * (history.back().mean - prev.mean);
    return next;
}

/// Called once per iteration after the posterior chain (and, except in the
/// last round, the retrain) has finished.
using CheckpointFn = std::function<void(int iteration, const SurrogateNet& surrogate,
                                        const PriorHistory& history, const IterationStats& stats,
                                        const ChainResult& chain)>;

namespace detail {
// Stage tags for deriving per-stage seeds from the master seed.
constexpr std::uint64_t kSeedInitChain = 11;
constexpr std::uint64_t kSeedChainBase = 100;
constexpr std::uint64_t kSeedDrawBase = 200;
constexpr std::uint64_t kSeedTrainBase = 300;
constexpr std::uint64_t kSeedFinalChain = 999;
} // namespace detail

/// Adaptive surrogate construction: alternate posterior sampling under the
/// current design prior with retraining on fine-model draws from the
/// extrapolated, jittered next prior. The expensive model is evaluated
/// exactly iterations * train_points times. The returned estimate averages a
/// final chain run against the problem prior with the last surrogate.
inline SBDResult run_sbd_las(const ForwardModel& fine, const ForwardModel& coarse,
                             const Observation& obs, const GaussianState& problem_prior,
                             const SBDConfig& cfg, const Eigen::VectorXd* theta_star = nullptr,
                             const CheckpointFn& checkpoint = nullptr) {
    if (cfg.iterations < 1) throw std::invalid_argument("run_sbd_las: iterations must be >= 1");
    if (cfg.train_points < 1) throw std::invalid_argument("run_sbd_las: train_points must be >= 1");
    if (fine.input_dim() != coarse.input_dim() || fine.output_dim() != coarse.output_dim())
        throw std::invalid_argument("run_sbd_las: fine/coarse dimensions disagree");
    if (problem_prior.mean.size() != fine.input_dim())
        throw std::invalid_argument("run_sbd_las: prior dimension disagrees with the models");
    if (theta_star && theta_star->size() != fine.input_dim())
        throw std::invalid_argument("run_sbd_las: truth dimension disagrees with the models");

    const long long fine_before = fine.calls();

    GaussianState design;
    if (cfg.initial_state) {
        design = *cfg.initial_state;
    } else {
        ChainConfig ic = cfg.init_chain;
        ic.seed = derive_seed(cfg.seed, detail::kSeedInitChain);
        design = initial_prior(coarse, obs, problem_prior, ic);
    }

    SBDResult out;
    out.prior_history.push_back(design);
    if (theta_star) out.error_trace.push_back(estimation_error(design.mean, *theta_star));

    out.surrogate = std::make_shared<SurrogateNet>(coarse, cfg.net);
    const ForwardModel surr_model = surrogate_model(out.surrogate, "surrogate");
    const PotentialFn surr_potential = make_potential(surr_model, obs);

    NetConfig net_cfg = cfg.net;
    net_cfg.seed = derive_seed(cfg.seed, detail::kSeedTrainBase);
    TrainReport report;
    try {
        Rng draw_rng = make_rng(cfg.seed, detail::kSeedDrawBase);
        report = train(*out.surrogate,
                       make_training_set(design, fine, coarse, cfg.train_points, draw_rng),
                       net_cfg, /*warm_start=*/false);
    } catch (const std::exception& e) {
        throw numerical_error(std::string("sbd initialization: ") + e.what());
    }

    for (int k = 1; k <= cfg.iterations; ++k) {
        try {
            ChainConfig ck = cfg.chain;
            ck.seed = derive_seed(cfg.seed, detail::kSeedChainBase + static_cast<std::uint64_t>(k));
            ck.start = design.mean;
            const ChainResult chain = run_chain(surr_potential, design, ck);
            const GaussianState moments = gaussian_moments(chain.samples);
            out.prior_history.push_back(moments);

            IterationStats st;
            st.iteration = k;
            st.acceptance = chain.acceptance_rate;
            st.train_mse = report.final_mse;
            if (theta_star) {
                st.error = estimation_error(moments.mean, *theta_star);
                out.error_trace.push_back(st.error);
            }

            if (k < cfg.iterations) {
                GaussianState next = one_step_ahead(out.prior_history, cfg.alpha);
                design = cfg.jitter_c2 > 0.0 ? next.with_jitter(cfg.jitter_c2) : std::move(next);
                Rng rk = make_rng(cfg.seed, detail::kSeedDrawBase + static_cast<std::uint64_t>(k));
                net_cfg.seed =
                    derive_seed(cfg.seed, detail::kSeedTrainBase + static_cast<std::uint64_t>(k));
                report = train(*out.surrogate,
                               make_training_set(design, fine, coarse, cfg.train_points, rk),
                               net_cfg, /*warm_start=*/true);
            }

            st.fine_calls = fine.calls() - fine_before;
            if (checkpoint) checkpoint(k, *out.surrogate, out.prior_history, st, chain);
            out.iterations.push_back(st);
        } catch (const std::exception& e) {
            // Progress up to iteration k-1 survives in the checkpoint stream.
            throw numerical_error("sbd iteration " + std::to_string(k) + ": " + e.what());
        }
    }

    ChainConfig cf = cfg.final_chain;
    cf.seed = derive_seed(cfg.seed, detail::kSeedFinalChain);
    cf.start = out.prior_history.back().mean;
    out.final_chain = run_chain(surr_potential, problem_prior, cf);

    Eigen::VectorXd mean = Eigen::VectorXd::Zero(fine.input_dim());
    for (const auto& s : out.final_chain.samples) mean += s;
    if (out.final_chain.samples.empty())
        throw insufficient_data_error("run_sbd_las: final chain kept no samples");
    out.theta_hat = mean / static_cast<double>(out.final_chain.samples.size());

    out.fine_calls = fine.calls() - fine_before;
    if (theta_star) out.final_error = estimation_error(out.theta_hat, *theta_star);
    return out;
}

} // namespace sbdlas
