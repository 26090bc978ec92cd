#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>

#include <Eigen/Dense>

#include "sbdlas/fem.hpp"
#include "sbdlas/gpr.hpp"
#include "sbdlas/mesh.hpp"
#include "sbdlas/pcn.hpp"
#include "sbdlas/rng.hpp"

namespace sbdlas {

/// Parameters-to-observations map with call accounting. Copies share the
/// counter, so evaluations from concurrent workers aggregate into one tally.
class ForwardModel {
public:
    ForwardModel() = default;
    ForwardModel(std::string name, int input_dim, int output_dim,
                 std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn)
        : name_(std::move(name)), p_(input_dim), d_(output_dim), fn_(std::move(fn)),
          calls_(std::make_shared<std::atomic<long long>>(0)) {}

    Eigen::VectorXd operator()(const Eigen::VectorXd& theta) const {
        if (theta.size() != p_)
            throw std::invalid_argument(name_ + ": input dimension " + std::to_string(theta.size()) +
                                        " != " + std::to_string(p_));
        calls_->fetch_add(1, std::memory_order_relaxed);
        Eigen::VectorXd out = fn_(theta);
        if (out.size() != d_)
            throw std::logic_error(name_ + ": evaluator returned wrong output dimension");
        return out;
    }

    const std::string& name() const { return name_; }
    int input_dim() const { return p_; }
    int output_dim() const { return d_; }
    long long calls() const { return calls_->load(std::memory_order_relaxed); }
    void reset_calls() const { calls_->store(0, std::memory_order_relaxed); }
    bool valid() const { return static_cast<bool>(fn_); }

private:
    std::string name_;
    int p_ = 0, d_ = 0;
    std::function<Eigen::VectorXd(const Eigen::VectorXd&)> fn_;
    std::shared_ptr<std::atomic<long long>> calls_;
};

inline double default_source(const Eigen::Vector2d& x) {
    return std::sin(std::numbers::pi * x.x()) * std::sin(std::numbers::pi * x.y());
}

/// GPR field reconstruction -> P1 Darcy solve -> pointwise observation.
inline ForwardModel darcy_model(std::string name, const StructuredMesh& mesh,
                                std::shared_ptr<const GPRContext> gpr, ObservationGrid grid,
                                SourceFn source = default_source) {
    struct State {
        P1Solver solver;
        std::shared_ptr<const GPRContext> gpr;
        Eigen::MatrixXd cross; // K(mesh nodes, anchors)
        ObservationGrid grid;
        SourceFn source;
    };
    auto st = std::make_shared<State>(State{P1Solver(mesh), gpr, gpr->cross_kernel(mesh.nodes),
                                            std::move(grid), std::move(source)});
    const int p = gpr->anchor_count();
    const int d = st->grid.size();
    return ForwardModel(std::move(name), p, d, [st](const Eigen::VectorXd& theta) {
        const Eigen::VectorXd log_field = st->cross * st->gpr->solve(theta);
        const Eigen::VectorXd a = log_field.array().exp();
        const Eigen::VectorXd u = st->solver.solve(a, st->source);
        return observe(u, st->solver.mesh(), st->grid);
    });
}

/// Darcy model with independent GPR fields inside/outside a circular interface.
inline ForwardModel darcy_interface_model(std::string name, const StructuredMesh& mesh,
                                          std::shared_ptr<const InterfaceContext> ifc,
                                          ObservationGrid grid, SourceFn source = default_source) {
    struct State {
        P1Solver solver;
        std::shared_ptr<const InterfaceContext> ifc;
        Eigen::MatrixXd cross_in, cross_out; // rows follow the per-region node lists
        std::vector<int> row;                // mesh node -> row in its region's cross matrix
        std::vector<char> node_inside;
        ObservationGrid grid;
        SourceFn source;
    };
    auto st = std::make_shared<State>(
        State{P1Solver(mesh), ifc, {}, {}, {}, {}, std::move(grid), std::move(source)});

    std::vector<Eigen::Vector2d> pts_in, pts_out;
    st->row.resize(mesh.node_count());
    st->node_inside.resize(mesh.node_count());
    for (int i = 0; i < mesh.node_count(); ++i) {
        const bool inside = ifc->split().is_inside(mesh.nodes[i]);
        st->node_inside[i] = inside ? 1 : 0;
        if (inside) {
            st->row[i] = static_cast<int>(pts_in.size());
            pts_in.push_back(mesh.nodes[i]);
        } else {
            st->row[i] = static_cast<int>(pts_out.size());
            pts_out.push_back(mesh.nodes[i]);
        }
    }
    st->cross_in = ifc->inside_context().cross_kernel(pts_in);
    st->cross_out = ifc->outside_context().cross_kernel(pts_out);

    const int p = ifc->anchor_count();
    const int d = st->grid.size();
    return ForwardModel(std::move(name), p, d, [st](const Eigen::VectorXd& theta) {
        auto [fin, fout] = st->ifc->interpolants(theta);
        const Eigen::VectorXd m_in = st->cross_in * fin.weights();
        const Eigen::VectorXd m_out = st->cross_out * fout.weights();
        const int nn = st->solver.mesh().node_count();
        Eigen::VectorXd a(nn);
        for (int i = 0; i < nn; ++i)
            a[i] = std::exp(st->node_inside[i] ? m_in[st->row[i]] : m_out[st->row[i]]);
        const Eigen::VectorXd u = st->solver.solve(a, st->source);
        return observe(u, st->solver.mesh(), st->grid);
    });
}

/// Closed-form solution of u' = theta sqrt(u) cos(x), u(0) = u(pi) = 0.
inline double ode_toy_solution(double theta, double x) {
    const double s = theta * std::sin(x) / 2.0;
    return s * s;
}

/// Scalar-parameter boundary-value toy observed at 20 equispaced points on [0, pi].
inline ForwardModel ode_toy_model() {
    static constexpr int d = 20;
    return ForwardModel("ode-toy", 1, d, [](const Eigen::VectorXd& theta) {
        if (!(theta[0] > 0.0))
            throw std::domain_error("ode_toy: theta must be positive, got " +
                                    std::to_string(theta[0]));
        Eigen::VectorXd u(d);
        for (int i = 0; i < d; ++i)
            u[i] = ode_toy_solution(theta[0], std::numbers::pi * i / (d - 1));
        return u;
    });
}

/// (theta1 + theta2 + theta1 theta2, theta1 + theta2 - theta1 theta2).
inline ForwardModel algebraic_toy_model() {
    return ForwardModel("algebraic-toy", 2, 2, [](const Eigen::VectorXd& t) {
        Eigen::VectorXd y(2);
        const double s = t[0] + t[1], q = t[0] * t[1];
        y << s + q, s - q;
        return y;
    });
}

/// Constant-zero map; stands in for the coarse model when the surrogate
/// learns the full map rather than a correction.
inline ForwardModel zero_model(int input_dim, int output_dim) {
    return ForwardModel("zero", input_dim, output_dim, [output_dim](const Eigen::VectorXd&) {
        return Eigen::VectorXd::Zero(output_dim);
    });
}

/// Data vector with its noise model Sigma_eta = delta^2 I.
/// delta = 0 marks a noise-free inversion; the potential then uses the
/// unweighted Euclidean norm.
struct Observation {
    Eigen::VectorXd y;
    double delta = 0.0;
    ObservationGrid grid; // empty for the analytic toys
};

/// y = G(theta*) + eta, eta ~ N(0, delta^2 I) from the seeded generator.
inline Observation synthesize_observation(const ForwardModel& model,
                                          const Eigen::VectorXd& theta_star, double delta,
                                          std::uint64_t seed, ObservationGrid grid = {}) {
    if (delta < 0.0) throw std::invalid_argument("synthesize_observation: negative delta");
    Observation obs;
    obs.y = model(theta_star);
    obs.delta = delta;
    obs.grid = std::move(grid);
    if (delta > 0.0) {
        Rng rng = make_rng(seed);
        std::normal_distribution<double> normal(0.0, delta);
        for (Eigen::Index i = 0; i < obs.y.size(); ++i) obs.y[i] += normal(rng);
    }
    return obs;
}

/// Phi = 1/2 |y - G(theta)|^2 / delta^2, or the unweighted norm when delta = 0.
inline double potential(const Eigen::VectorXd& theta, const ForwardModel& model,
                        const Observation& obs) {
    if (obs.y.size() != model.output_dim())
        throw std::invalid_argument("potential: observation/model dimension mismatch");
    const Eigen::VectorXd r = obs.y - model(theta);
    const double w = obs.delta > 0.0 ? obs.delta * obs.delta : 1.0;
    return 0.5 * r.squaredNorm() / w;
}

inline PotentialFn make_potential(ForwardModel model, Observation obs) {
    return [model = std::move(model), obs = std::move(obs)](const Eigen::VectorXd& theta) {
        return potential(theta, model, obs);
    };
}

} // namespace sbdlas
