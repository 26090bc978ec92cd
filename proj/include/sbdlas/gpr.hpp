#pragma once

#include <cmath>
#include <memory>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "sbdlas/errors.hpp"
#include "sbdlas/gaussian.hpp"
#include "sbdlas/mesh.hpp"

namespace sbdlas {

struct KernelConfig {
    double gamma = 1.0; // variance scale
    double ell = 0.5;   // length scale
};

/// Exponential covariance gamma * exp(-|x - y| / (2 l^2)).
/// Plain Euclidean distance in the exponent, not its square.
inline double kernel(const Eigen::Vector2d& x, const Eigen::Vector2d& y,
                     const KernelConfig& cfg) {
    return cfg.gamma * std::exp(-(x - y).norm() / (2.0 * cfg.ell * cfg.ell));
}

using NodeSet = std::vector<Eigen::Vector2d>;

/// Uniform nx x ny anchor grid spanning the rectangle (edges included).
inline NodeSet anchor_grid(const Rect& domain, int nx, int ny) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("anchor_grid: empty grid");
    NodeSet nodes;
    nodes.reserve(static_cast<std::size_t>(nx) * ny);
    const Eigen::Vector2d ext = domain.extent();
    for (int iy = 0; iy < ny; ++iy)
        for (int ix = 0; ix < nx; ++ix)
            nodes.emplace_back(domain.lo.x() + (nx == 1 ? 0.5 : double(ix) / (nx - 1)) * ext.x(),
                               domain.lo.y() + (ny == 1 ? 0.5 : double(iy) / (ny - 1)) * ext.y());
    return nodes;
}

inline Eigen::MatrixXd prior_covariance(const NodeSet& nodes, const KernelConfig& cfg,
                                        double jitter = 0.0) {
    const int p = static_cast<int>(nodes.size());
    Eigen::MatrixXd K(p, p);
    for (int i = 0; i < p; ++i) {
        for (int j = 0; j <= i; ++j) {
            const double v = kernel(nodes[i], nodes[j], cfg);
            K(i, j) = v;
            K(j, i) = v;
        }
    }
    K.diagonal().array() += jitter;
    return K;
}

class GPRInterpolant;

/// Anchor set, kernel, and the factorized anchor Gram matrix.
/// Built once; fitting an interpolant for a new theta is two triangular solves.
class GPRContext {
public:
    GPRContext(NodeSet nodes, KernelConfig cfg, double jitter = 1e-8)
        : nodes_(std::move(nodes)), cfg_(cfg), jitter_(jitter),
          K_(prior_covariance(nodes_, cfg_, jitter_)), llt_(K_) {
        if (llt_.info() != Eigen::Success)
            throw conditioning_error("GPRContext: anchor Gram matrix not positive definite; "
                                     "try a larger jitter");
    }

    int anchor_count() const { return static_cast<int>(nodes_.size()); }
    const NodeSet& nodes() const { return nodes_; }
    const KernelConfig& config() const { return cfg_; }
    double jitter() const { return jitter_; }
    const Eigen::MatrixXd& gram() const { return K_; }

    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const {
        if (rhs.size() != anchor_count())
            throw std::invalid_argument("GPRContext: vector length != anchor count");
        return llt_.solve(rhs);
    }

    /// K(points, anchors), one row per query point.
    Eigen::MatrixXd cross_kernel(const std::vector<Eigen::Vector2d>& points) const {
        Eigen::MatrixXd C(points.size(), nodes_.size());
        for (std::size_t i = 0; i < points.size(); ++i)
            for (std::size_t j = 0; j < nodes_.size(); ++j)
                C(i, j) = kernel(points[i], nodes_[j], cfg_);
        return C;
    }

private:
    NodeSet nodes_;
    KernelConfig cfg_;
    double jitter_;
    Eigen::MatrixXd K_;
    Eigen::LLT<Eigen::MatrixXd> llt_;
};

/// Posterior-mean surface K(x, X*) K(X*, X*)^-1 theta of the anchor GP,
/// with the exponential of the mean as the positive coefficient field.
class GPRInterpolant {
public:
    GPRInterpolant(std::shared_ptr<const GPRContext> ctx, Eigen::VectorXd weights)
        : ctx_(std::move(ctx)), weights_(std::move(weights)) {}

    double mean_at(const Eigen::Vector2d& x) const {
        double s = 0.0;
        const auto& nodes = ctx_->nodes();
        for (std::size_t j = 0; j < nodes.size(); ++j)
            s += kernel(x, nodes[j], ctx_->config()) * weights_[j];
        return s;
    }

    /// Pointwise GP posterior variance K(x,x) - K(x,X*) K(X*,X*)^-1 K(X*,x).
    /// Not used by the inversion pipeline, which only needs the mean surface.
    double variance_at(const Eigen::Vector2d& x) const {
        const auto& nodes = ctx_->nodes();
        Eigen::VectorXd kx(nodes.size());
        for (std::size_t j = 0; j < nodes.size(); ++j)
            kx[j] = kernel(x, nodes[j], ctx_->config());
        return kernel(x, x, ctx_->config()) - kx.dot(ctx_->solve(kx));
    }

    double coefficient_at(const Eigen::Vector2d& x) const { return std::exp(mean_at(x)); }

    const GPRContext& context() const { return *ctx_; }
    const Eigen::VectorXd& weights() const { return weights_; }

private:
    std::shared_ptr<const GPRContext> ctx_;
    Eigen::VectorXd weights_;
};

inline std::shared_ptr<const GPRContext> make_gpr_context(NodeSet nodes, KernelConfig cfg,
                                                          double jitter = 1e-8) {
    return std::make_shared<const GPRContext>(std::move(nodes), cfg, jitter);
}

inline GPRInterpolant fit_interpolant(std::shared_ptr<const GPRContext> ctx,
                                      const Eigen::VectorXd& theta) {
    Eigen::VectorXd w = ctx->solve(theta);
    return GPRInterpolant(std::move(ctx), std::move(w));
}

inline GPRInterpolant fit_interpolant(const Eigen::VectorXd& theta, const NodeSet& nodes,
                                      const KernelConfig& cfg, double jitter = 1e-8) {
    return fit_interpolant(make_gpr_context(nodes, cfg, jitter), theta);
}

/// Zero-mean Gaussian prior N(0, K(X*,X*)) induced on theta by the field prior.
inline GaussianState gaussian_field_prior(const GPRContext& ctx) {
    return GaussianState::from_moments(Eigen::VectorXd::Zero(ctx.anchor_count()), ctx.gram());
}

/// Partition of anchor indices by the circle |x|^2 <= r^2.
struct InterfaceSplit {
    double radius = 0.0;
    std::vector<int> inside;
    std::vector<int> outside;

    bool is_inside(const Eigen::Vector2d& x) const { return x.squaredNorm() <= radius * radius; }
};

inline InterfaceSplit split_by_circle(const NodeSet& nodes, double radius) {
    InterfaceSplit s;
    s.radius = radius;
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i)
        (s.is_inside(nodes[i]) ? s.inside : s.outside).push_back(i);
    return s;
}

namespace detail {
inline NodeSet gather(const NodeSet& nodes, const std::vector<int>& idx) {
    NodeSet out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(nodes[i]);
    return out;
}
inline Eigen::VectorXd gather(const Eigen::VectorXd& v, const std::vector<int>& idx) {
    Eigen::VectorXd out(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
    return out;
}
} // namespace detail

/// Independent GPR parameterizations inside and outside a circular interface.
/// The field may be discontinuous across the circle.
class InterfaceContext {
public:
    InterfaceContext(NodeSet nodes, double radius, KernelConfig cfg, double jitter = 1e-8)
        : nodes_(std::move(nodes)), split_(split_by_circle(nodes_, radius)),
          in_(make_gpr_context(detail::gather(nodes_, split_.inside), cfg, jitter)),
          out_(make_gpr_context(detail::gather(nodes_, split_.outside), cfg, jitter)) {}

    const NodeSet& nodes() const { return nodes_; }
    const InterfaceSplit& split() const { return split_; }
    int anchor_count() const { return static_cast<int>(nodes_.size()); }
    const GPRContext& inside_context() const { return *in_; }
    const GPRContext& outside_context() const { return *out_; }

    /// Prior over the full theta vector: regional kernel blocks, zero across
    /// the interface, in original anchor order.
    GaussianState gaussian_prior() const {
        const int p = anchor_count();
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
        scatter_block(cov, in_->gram(), split_.inside);
        scatter_block(cov, out_->gram(), split_.outside);
        return GaussianState::from_moments(Eigen::VectorXd::Zero(p), std::move(cov));
    }

    std::pair<GPRInterpolant, GPRInterpolant> interpolants(const Eigen::VectorXd& theta) const {
        if (theta.size() != anchor_count())
            throw std::invalid_argument("InterfaceContext: theta length != anchor count");
        return {GPRInterpolant(in_, in_->solve(detail::gather(theta, split_.inside))),
                GPRInterpolant(out_, out_->solve(detail::gather(theta, split_.outside)))};
    }

    double mean_at(const Eigen::VectorXd& theta, const Eigen::Vector2d& x) const {
        auto [in, out] = interpolants(theta);
        return split_.is_inside(x) ? in.mean_at(x) : out.mean_at(x);
    }

    double coefficient_at(const Eigen::VectorXd& theta, const Eigen::Vector2d& x) const {
        return std::exp(mean_at(theta, x));
    }

private:
    static void scatter_block(Eigen::MatrixXd& cov, const Eigen::MatrixXd& block,
                              const std::vector<int>& idx) {
        for (std::size_t i = 0; i < idx.size(); ++i)
            for (std::size_t j = 0; j < idx.size(); ++j) cov(idx[i], idx[j]) = block(i, j);
    }

    NodeSet nodes_;
    InterfaceSplit split_;
    std::shared_ptr<const GPRContext> in_, out_;
};

} // namespace sbdlas
