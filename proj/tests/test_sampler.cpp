#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sbdlas/gaussian.hpp"
#include "sbdlas/pcn.hpp"
#include "sbdlas/rng.hpp"

using namespace sbdlas;

namespace {

GaussianState scalar_prior(double mean, double var) {
    return isotropic_gaussian(Eigen::VectorXd::Constant(1, mean), var);
}

} // namespace

TEST_CASE("proposal matches the hand formula", "[pcn]") {
    // p=1, mu=0, Sigma=1, theta=2, beta=0.6: theta' = 0.8 * 2 + 0.6 * xi
    GaussianState prior = scalar_prior(0.0, 1.0);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 2.0);

    Rng rng = make_rng(123);
    Rng replay = rng; // same state: replay the xi draw
    Eigen::VectorXd prop = pcn_propose(theta, prior, 0.6, rng);

    std::normal_distribution<double> normal;
    const double xi = normal(replay);
    CHECK(prop[0] == Catch::Approx(0.8 * 2.0 + 0.6 * xi).epsilon(1e-14));

    // the same arithmetic at xi = 0.5 gives 1.9
    CHECK(0.8 * 2.0 + 0.6 * 0.5 == Catch::Approx(1.9).epsilon(1e-15));
}

TEST_CASE("beta=1 proposes independently of the current state", "[pcn]") {
    GaussianState prior = isotropic_gaussian(Eigen::Vector2d(1.0, -1.0), 2.0);
    Rng a = make_rng(5), b = make_rng(5);
    Eigen::VectorXd from_origin = pcn_propose(Eigen::Vector2d(0, 0), prior, 1.0, a);
    Eigen::VectorXd from_far = pcn_propose(Eigen::Vector2d(50, -50), prior, 1.0, b);
    CHECK(from_origin.isApprox(from_far, 0.0));
}

TEST_CASE("small beta stays near the current state", "[pcn]") {
    GaussianState prior = scalar_prior(0.0, 1.0);
    Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 2.0);
    Rng rng = make_rng(9);
    Eigen::VectorXd prop = pcn_propose(theta, prior, 1e-8, rng);
    CHECK(std::abs(prop[0] - theta[0]) < 1e-6);
}

TEST_CASE("proposal preserves the prior distribution", "[pcn]") {
    GaussianState prior = GaussianState::from_moments(
        Eigen::Vector2d(0.5, -0.25), (Eigen::Matrix2d() << 2.0, 1.0, 1.0, 2.0).finished());
    Rng rng = make_rng(31);
    const int n = 20000;
    std::vector<Eigen::VectorXd> proposals;
    proposals.reserve(n);
    for (int i = 0; i < n; ++i)
        proposals.push_back(pcn_propose(prior.sample(rng), prior, 0.4, rng));

    GaussianState fitted = gaussian_moments(proposals);
    const double mean_tol = 4.0 * std::sqrt(2.0 / n);
    CHECK(std::abs(fitted.mean[0] - 0.5) < mean_tol);
    CHECK(std::abs(fitted.mean[1] + 0.25) < mean_tol);
    CHECK(std::abs(fitted.cov(0, 0) - 2.0) < 0.15);
    CHECK(std::abs(fitted.cov(1, 1) - 2.0) < 0.15);
    CHECK(std::abs(fitted.cov(0, 1) - 1.0) < 0.15);
}

TEST_CASE("acceptance rule", "[pcn]") {
    Rng rng = make_rng(2);
    CHECK(pcn_accept(3.0, 1.0, rng));          // downhill
    CHECK(pcn_accept(2.0, 2.0, rng));          // flat
    CHECK_FALSE(pcn_accept(0.0, std::numeric_limits<double>::quiet_NaN(), rng));
    CHECK_FALSE(pcn_accept(0.0, std::numeric_limits<double>::infinity(), rng));

    // ln 2 uphill move accepts with probability 1/2
    const int n = 100000;
    int accepted = 0;
    for (int i = 0; i < n; ++i)
        if (pcn_accept(0.0, std::log(2.0), rng)) ++accepted;
    CHECK(std::abs(static_cast<double>(accepted) / n - 0.5) < 0.01);
}

TEST_CASE("zero potential gives unit acceptance and prior moments", "[pcn]") {
    GaussianState prior = isotropic_gaussian(Eigen::Vector2d(1.0, -2.0), 4.0);
    ChainConfig cfg;
    cfg.steps = 5000;
    cfg.beta = 0.8;
    cfg.seed = 77;
    ChainResult res = run_chain([](const Eigen::VectorXd&) { return 0.0; }, prior, cfg);

    CHECK(res.acceptance_rate == 1.0);
    REQUIRE(res.samples.size() == 400); // (5000 - 1000) / 10
    CHECK(res.potential_trace.size() == 5000);
    CHECK(res.accepted.size() == 5000);
    CHECK(res.potential_trace.cwiseAbs().maxCoeff() == 0.0);

    Eigen::Vector2d mean = Eigen::Vector2d::Zero();
    for (const auto& s : res.samples) mean += s;
    mean /= static_cast<double>(res.samples.size());
    const double se = 4.0 * std::sqrt(4.0 / static_cast<double>(res.samples.size()));
    CHECK(std::abs(mean[0] - 1.0) < se);
    CHECK(std::abs(mean[1] + 2.0) < se);
}

TEST_CASE("chain converges to a closed-form Gaussian posterior", "[pcn]") {
    // prior N(0,1), likelihood exp(-(theta-1.5)^2 / (2 * 0.04)):
    // posterior mean = (1.5/0.04) / (1 + 1/0.04) = 1.44230769...
    GaussianState prior = scalar_prior(0.0, 1.0);
    auto potential = [](const Eigen::VectorXd& t) {
        const double d = t[0] - 1.5;
        return 0.5 * d * d / 0.04;
    };
    ChainConfig cfg;
    cfg.steps = 40000;
    cfg.beta = 0.3;
    cfg.burn_in = 0.3;
    cfg.seed = 4;
    ChainResult res = run_chain(potential, prior, cfg);

    double mean = 0.0;
    for (const auto& s : res.samples) mean += s[0];
    mean /= static_cast<double>(res.samples.size());
    CHECK(mean == Catch::Approx(1.5 / 0.04 / 26.0).margin(0.08));

    const long n = res.potential_trace.size();
    CHECK(res.potential_trace.head(100).mean() > res.potential_trace.tail(100).mean());
    CHECK(res.potential_trace[n - 1] < potential(Eigen::VectorXd::Zero(1)));
}

TEST_CASE("chains are deterministic given the seed", "[pcn]") {
    GaussianState prior = isotropic_gaussian(Eigen::Vector2d::Zero(), 1.0);
    auto potential = [](const Eigen::VectorXd& t) { return 0.5 * t.squaredNorm(); };
    ChainConfig cfg;
    cfg.steps = 2000;
    cfg.beta = 0.5;
    cfg.seed = 99;
    ChainResult a = run_chain(potential, prior, cfg);
    ChainResult b = run_chain(potential, prior, cfg);

    CHECK(a.acceptance_rate == b.acceptance_rate);
    REQUIRE(a.samples.size() == b.samples.size());
    for (std::size_t i = 0; i < a.samples.size(); ++i)
        CHECK(a.samples[i].isApprox(b.samples[i], 0.0));
    CHECK(a.potential_trace.isApprox(b.potential_trace, 0.0));
    CHECK(a.accepted == b.accepted);

    cfg.seed = 100;
    ChainResult c = run_chain(potential, prior, cfg);
    CHECK_FALSE(a.samples.back().isApprox(c.samples.back(), 0.0));
}

TEST_CASE("chain honors an explicit start", "[pcn]") {
    GaussianState prior = scalar_prior(0.0, 1.0);
    ChainConfig cfg;
    cfg.steps = 50;
    cfg.beta = 0.01;
    cfg.burn_in = 0.0;
    cfg.thin = 1;
    cfg.start = Eigen::VectorXd::Constant(1, 5.0);
    ChainResult res = run_chain([](const Eigen::VectorXd&) { return 0.0; }, prior, cfg);
    for (const auto& s : res.samples) CHECK(s[0] > 4.0);

    cfg.start = Eigen::VectorXd::Zero(3);
    CHECK_THROWS_AS(run_chain([](const Eigen::VectorXd&) { return 0.0; }, prior, cfg),
                    std::invalid_argument);
}

TEST_CASE("chain rejects invalid configs and starts", "[pcn]") {
    GaussianState prior = scalar_prior(0.0, 1.0);
    auto zero = [](const Eigen::VectorXd&) { return 0.0; };

    ChainConfig cfg;
    cfg.steps = 0;
    CHECK_THROWS_AS(run_chain(zero, prior, cfg), std::invalid_argument);
    cfg = ChainConfig{};
    cfg.beta = 0.0;
    CHECK_THROWS_AS(run_chain(zero, prior, cfg), std::invalid_argument);
    cfg = ChainConfig{};
    cfg.beta = 1.5;
    CHECK_THROWS_AS(run_chain(zero, prior, cfg), std::invalid_argument);
    cfg = ChainConfig{};
    cfg.burn_in = 1.0;
    CHECK_THROWS_AS(run_chain(zero, prior, cfg), std::invalid_argument);
    cfg = ChainConfig{};
    cfg.thin = 0;
    CHECK_THROWS_AS(run_chain(zero, prior, cfg), std::invalid_argument);

    cfg = ChainConfig{};
    auto nan_potential = [](const Eigen::VectorXd&) {
        return std::numeric_limits<double>::quiet_NaN();
    };
    CHECK_THROWS_AS(run_chain(nan_potential, prior, cfg), std::runtime_error);
}

TEST_CASE("sample moments solved by hand", "[moments]") {
    std::vector<Eigen::VectorXd> samples{Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 2)};
    GaussianState g = gaussian_moments(samples);
    CHECK(g.mean.isApprox(Eigen::Vector2d(1, 1), 0.0));
    // covariance [[2,2],[2,2]] plus the default jitter 1e-6 tr/p = 2e-6
    CHECK(g.cov(0, 1) == 2.0);
    CHECK(g.cov(1, 0) == 2.0);
    CHECK(g.cov(0, 0) == Catch::Approx(2.0 + 2e-6).epsilon(1e-12));
    CHECK(g.cov(1, 1) == Catch::Approx(2.0 + 2e-6).epsilon(1e-12));
}

TEST_CASE("identical samples leave only the jitter diagonal", "[moments]") {
    std::vector<Eigen::VectorXd> samples(3, Eigen::Vector2d(1.0, -1.0));
    GaussianState g = gaussian_moments(samples);
    CHECK(g.mean.isApprox(Eigen::Vector2d(1.0, -1.0), 0.0));
    CHECK(g.cov(0, 1) == 0.0);
    CHECK(g.cov(0, 0) == Catch::Approx(1e-12).epsilon(1e-6));
}

TEST_CASE("moments recover generating parameters", "[moments]") {
    GaussianState truth = GaussianState::from_moments(
        Eigen::Vector2d(-1.0, 3.0), (Eigen::Matrix2d() << 2.0, 1.0, 1.0, 2.0).finished());
    Rng rng = make_rng(55);
    std::vector<Eigen::VectorXd> samples;
    const int n = 10000;
    samples.reserve(n);
    for (int i = 0; i < n; ++i) samples.push_back(truth.sample(rng));

    GaussianState fitted = gaussian_moments(samples);
    const double mean_tol = 4.0 * std::sqrt(2.0 / n);
    CHECK(std::abs(fitted.mean[0] + 1.0) < mean_tol);
    CHECK(std::abs(fitted.mean[1] - 3.0) < mean_tol);
    CHECK(std::abs(fitted.cov(0, 0) - 2.0) < 0.2);
    CHECK(std::abs(fitted.cov(0, 1) - 1.0) < 0.2);
    CHECK(std::abs(fitted.cov(1, 1) - 2.0) < 0.2);
}

TEST_CASE("moments need at least two samples", "[moments]") {
    CHECK_THROWS_AS(gaussian_moments({}), insufficient_data_error);
    CHECK_THROWS_AS(gaussian_moments({Eigen::Vector2d(1, 1)}), insufficient_data_error);
}

TEST_CASE("explicit jitter overrides the default", "[moments]") {
    std::vector<Eigen::VectorXd> samples{Eigen::Vector2d(0, 0), Eigen::Vector2d(2, 2)};
    GaussianState g = gaussian_moments(samples, 0.5);
    CHECK(g.cov(0, 0) == 2.5);
    CHECK(g.cov(0, 1) == 2.0);
}
