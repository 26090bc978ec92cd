#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <memory>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "sbdlas/errors.hpp"
#include "sbdlas/forward_model.hpp"
#include "sbdlas/gaussian.hpp"
#include "sbdlas/rng.hpp"

namespace sbdlas {

enum class Activation { Sigmoid, PReLU, Linear };

inline std::string to_string(Activation a) {
    switch (a) {
        case Activation::Sigmoid: return "sigmoid";
        case Activation::PReLU: return "prelu";
        case Activation::Linear: return "linear";
    }
    throw std::logic_error("unknown activation");
}

inline Activation activation_from_string(const std::string& s) {
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "prelu") return Activation::PReLU;
    if (s == "linear") return Activation::Linear;
    throw std::invalid_argument("unknown activation: " + s);
}

struct NetConfig {
    std::vector<int> hidden{500, 500, 500};
    Activation activation = Activation::Sigmoid;
    double learning_rate = 1e-3;
    int epochs = 200;
    int batch = 64;
    std::uint64_t seed = 0;
};

/// Fully connected network, one learnable leak slope per hidden layer when the
/// activation is PReLU. Columns are samples throughout.
class Mlp {
public:
    Mlp() = default;
    Mlp(int input_dim, int output_dim, std::vector<int> hidden, Activation act)
        : activation_(act) {
        if (input_dim < 1 || output_dim < 1)
            throw std::invalid_argument("Mlp: dimensions must be positive");
        for (int h : hidden)
            if (h < 1) throw std::invalid_argument("Mlp: hidden widths must be positive");
        std::vector<int> dims;
        dims.push_back(input_dim);
        dims.insert(dims.end(), hidden.begin(), hidden.end());
        dims.push_back(output_dim);
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            W.emplace_back(Eigen::MatrixXd::Zero(dims[l + 1], dims[l]));
            b.emplace_back(Eigen::VectorXd::Zero(dims[l + 1]));
        }
        slope.assign(hidden.size(), 0.25);
    }

    int input_dim() const { return static_cast<int>(W.front().cols()); }
    int output_dim() const { return static_cast<int>(W.back().rows()); }
    int layer_count() const { return static_cast<int>(W.size()); }
    Activation activation() const { return activation_; }

    /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases.
    void init_weights(std::uint64_t seed) {
        Rng rng = make_rng(seed);
        for (auto& Wl : W) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(Wl.cols()));
            std::uniform_real_distribution<double> unif(-bound, bound);
            for (Eigen::Index j = 0; j < Wl.cols(); ++j)
                for (Eigen::Index i = 0; i < Wl.rows(); ++i) Wl(i, j) = unif(rng);
        }
        for (auto& bl : b) bl.setZero();
        std::fill(slope.begin(), slope.end(), 0.25);
    }

    /// Clears the last layer so the network maps everything to zero.
    void zero_output_layer() {
        W.back().setZero();
        b.back().setZero();
    }

    Eigen::MatrixXd hidden_apply(int layer, Eigen::MatrixXd z) const {
        switch (activation_) {
            case Activation::Sigmoid:
                return (1.0 / (1.0 + (-z.array()).exp())).matrix();
            case Activation::PReLU: {
                const double a = slope[layer];
                return z.unaryExpr([a](double v) { return v > 0.0 ? v : a * v; });
            }
            case Activation::Linear: return z;
        }
        throw std::logic_error("unknown activation");
    }

    Eigen::MatrixXd forward_batch(const Eigen::MatrixXd& X) const {
        if (X.rows() != input_dim()) throw std::invalid_argument("Mlp: input dimension mismatch");
        Eigen::MatrixXd H = X;
        for (int l = 0; l < layer_count(); ++l) {
            Eigen::MatrixXd Z = (W[l] * H).colwise() + b[l];
            H = (l + 1 < layer_count()) ? hidden_apply(l, std::move(Z)) : std::move(Z);
        }
        return H;
    }

    Eigen::VectorXd forward(const Eigen::VectorXd& x) const {
        return forward_batch(x).col(0);
    }

    std::vector<Eigen::MatrixXd> W;
    std::vector<Eigen::VectorXd> b;
    std::vector<double> slope;

private:
    Activation activation_ = Activation::Sigmoid;
};

/// Per-dimension affine map x -> (x - shift) / scale. Defaults to identity.
class Standardizer {
public:
    Standardizer() = default;
    explicit Standardizer(int dim)
        : shift_(Eigen::VectorXd::Zero(dim)), scale_(Eigen::VectorXd::Ones(dim)) {}

    /// Columns are samples; degenerate dimensions keep unit scale.
    void fit(const Eigen::MatrixXd& data) {
        if (data.cols() < 1) throw insufficient_data_error("Standardizer: no samples");
        shift_ = data.rowwise().mean();
        const Eigen::MatrixXd centered = data.colwise() - shift_;
        scale_ = (centered.array().square().rowwise().sum() / data.cols()).sqrt();
        for (Eigen::Index i = 0; i < scale_.size(); ++i)
            if (scale_[i] < 1e-12) scale_[i] = 1.0;
    }

    Eigen::MatrixXd apply(const Eigen::MatrixXd& x) const {
        return ((x.colwise() - shift_).array().colwise() / scale_.array()).matrix();
    }
    Eigen::MatrixXd invert(const Eigen::MatrixXd& z) const {
        return ((z.array().colwise() * scale_.array()).matrix().colwise() + shift_);
    }
    Eigen::VectorXd apply(const Eigen::VectorXd& x) const {
        return ((x - shift_).array() / scale_.array()).matrix();
    }
    Eigen::VectorXd invert(const Eigen::VectorXd& z) const {
        return (z.array() * scale_.array()).matrix() + shift_;
    }

    const Eigen::VectorXd& shift() const { return shift_; }
    const Eigen::VectorXd& scale() const { return scale_; }
    void set(Eigen::VectorXd shift, Eigen::VectorXd scale) {
        shift_ = std::move(shift);
        scale_ = std::move(scale);
    }

private:
    Eigen::VectorXd shift_, scale_;
};

/// Inputs drawn from a design distribution with the matching expensive and
/// cheap model responses; the network is fit to the column-wise residuals.
struct TrainingSet {
    Eigen::MatrixXd inputs;      // p x M
    Eigen::MatrixXd fine_values; // d x M
    Eigen::MatrixXd residuals;   // d x M
    int size() const { return static_cast<int>(inputs.cols()); }
};

inline TrainingSet make_training_set(const GaussianState& design, const ForwardModel& fine,
                                     const ForwardModel& coarse, int count, Rng& rng) {
    if (count < 1) throw std::invalid_argument("make_training_set: count must be positive");
    if (fine.input_dim() != coarse.input_dim() || fine.output_dim() != coarse.output_dim())
        throw std::invalid_argument("make_training_set: model dimensions disagree");
    TrainingSet set;
    set.inputs.resize(fine.input_dim(), count);
    set.fine_values.resize(fine.output_dim(), count);
    set.residuals.resize(fine.output_dim(), count);
    for (int i = 0; i < count; ++i) {
        const Eigen::VectorXd theta = design.sample(rng);
        set.inputs.col(i) = theta;
        set.fine_values.col(i) = fine(theta);
        set.residuals.col(i) = set.fine_values.col(i) - coarse(theta);
    }
    return set;
}

/// Cheap model plus a network correction fit to fine-minus-cheap residuals in
/// standardized coordinates. Freshly constructed it reproduces the cheap model
/// exactly (identity standardizers, zeroed output layer).
class SurrogateNet {
public:
    SurrogateNet() = default;
    SurrogateNet(ForwardModel coarse, NetConfig cfg)
        : coarse_(std::move(coarse)), cfg_(std::move(cfg)),
          net_(coarse_.input_dim(), coarse_.output_dim(), cfg_.hidden, cfg_.activation),
          in_std_(coarse_.input_dim()), out_std_(coarse_.output_dim()) {
        net_.init_weights(cfg_.seed);
        net_.zero_output_layer();
    }

    Eigen::VectorXd operator()(const Eigen::VectorXd& theta) const {
        return coarse_(theta) + out_std_.invert(net_.forward(in_std_.apply(theta)));
    }

    Eigen::VectorXd correction(const Eigen::VectorXd& theta) const {
        return out_std_.invert(net_.forward(in_std_.apply(theta)));
    }

    int input_dim() const { return coarse_.input_dim(); }
    int output_dim() const { return coarse_.output_dim(); }
    const ForwardModel& coarse() const { return coarse_; }
    const NetConfig& config() const { return cfg_; }
    Mlp& net() { return net_; }
    const Mlp& net() const { return net_; }
    Standardizer& input_standardizer() { return in_std_; }
    Standardizer& output_standardizer() { return out_std_; }
    const Standardizer& input_standardizer() const { return in_std_; }
    const Standardizer& output_standardizer() const { return out_std_; }

private:
    ForwardModel coarse_;
    NetConfig cfg_;
    Mlp net_;
    Standardizer in_std_, out_std_;
};

/// View of a (possibly retrained) surrogate as a forward model of its own.
/// Coarse-model calls made inside the evaluation count against the coarse
/// tally, never the fine one.
inline ForwardModel surrogate_model(std::shared_ptr<const SurrogateNet> net, std::string name) {
    if (!net) throw std::invalid_argument("surrogate_model: null surrogate");
    return ForwardModel(std::move(name), net->input_dim(), net->output_dim(),
                        [net](const Eigen::VectorXd& theta) { return (*net)(theta); });
}

namespace detail {

struct Gradients {
    std::vector<Eigen::MatrixXd> dW;
    std::vector<Eigen::VectorXd> db;
    std::vector<double> dslope;
    double loss = 0.0; // |Y - T|_F^2 / (2 B d), the trained objective
    double mse = 0.0;  // |Y - T|_F^2 / (B d)
};

inline Eigen::MatrixXd hidden_derivative(const Mlp& net, int layer, const Eigen::MatrixXd& Z,
                                         const Eigen::MatrixXd& H) {
    switch (net.activation()) {
        case Activation::Sigmoid: return (H.array() * (1.0 - H.array())).matrix();
        case Activation::PReLU: {
            const double a = net.slope[layer];
            return Z.unaryExpr([a](double v) { return v > 0.0 ? 1.0 : a; });
        }
        case Activation::Linear: return Eigen::MatrixXd::Ones(Z.rows(), Z.cols());
    }
    throw std::logic_error("unknown activation");
}

inline Gradients backprop(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& T) {
    const int L = net.layer_count();
    const auto B = static_cast<double>(X.cols());
    const auto d = static_cast<double>(T.rows());

    std::vector<Eigen::MatrixXd> H(L + 1), Z(L);
    H[0] = X;
    for (int l = 0; l < L; ++l) {
        Z[l] = (net.W[l] * H[l]).colwise() + net.b[l];
        H[l + 1] = (l + 1 < L) ? net.hidden_apply(l, Z[l]) : Z[l];
    }

    Gradients g;
    g.dW.resize(L);
    g.db.resize(L);
    g.dslope.assign(net.slope.size(), 0.0);

    const Eigen::MatrixXd err = H[L] - T;
    g.mse = err.squaredNorm() / (B * d);
    g.loss = 0.5 * g.mse;

    Eigen::MatrixXd delta = err / (B * d);
    for (int l = L - 1; l >= 0; --l) {
        g.dW[l].noalias() = delta * H[l].transpose();
        g.db[l] = delta.rowwise().sum();
        if (l > 0) {
            Eigen::MatrixXd back = net.W[l].transpose() * delta;
            if (net.activation() == Activation::PReLU)
                g.dslope[l - 1] =
                    (Z[l - 1].array() < 0.0).select(Z[l - 1].array() * back.array(), 0.0).sum();
            delta = back.cwiseProduct(hidden_derivative(net, l - 1, Z[l - 1], H[l]));
        }
    }
    return g;
}

struct AdamState {
    std::vector<Eigen::MatrixXd> mW, vW;
    std::vector<Eigen::VectorXd> mb, vb;
    std::vector<double> ms, vs;
    long long t = 0;

    explicit AdamState(const Mlp& net) {
        for (const auto& Wl : net.W) {
            mW.push_back(Eigen::MatrixXd::Zero(Wl.rows(), Wl.cols()));
            vW.push_back(Eigen::MatrixXd::Zero(Wl.rows(), Wl.cols()));
        }
        for (const auto& bl : net.b) {
            mb.push_back(Eigen::VectorXd::Zero(bl.size()));
            vb.push_back(Eigen::VectorXd::Zero(bl.size()));
        }
        ms.assign(net.slope.size(), 0.0);
        vs.assign(net.slope.size(), 0.0);
    }

    void step(Mlp& net, const Gradients& g, double lr) {
        constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
        ++t;
        const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));
        for (std::size_t l = 0; l < net.W.size(); ++l) {
            mW[l] = b1 * mW[l] + (1.0 - b1) * g.dW[l];
            vW[l] = (b2 * vW[l].array() + (1.0 - b2) * g.dW[l].array().square()).matrix();
            net.W[l].array() -= lr * (mW[l].array() / c1) / ((vW[l].array() / c2).sqrt() + eps);
            mb[l] = b1 * mb[l] + (1.0 - b1) * g.db[l];
            vb[l] = (b2 * vb[l].array() + (1.0 - b2) * g.db[l].array().square()).matrix();
            net.b[l].array() -= lr * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + eps);
        }
        for (std::size_t l = 0; l < net.slope.size(); ++l) {
            ms[l] = b1 * ms[l] + (1.0 - b1) * g.dslope[l];
            vs[l] = b2 * vs[l] + (1.0 - b2) * g.dslope[l] * g.dslope[l];
            net.slope[l] -= lr * (ms[l] / c1) / (std::sqrt(vs[l] / c2) + eps);
        }
    }
};

} // namespace detail

struct TrainReport {
    double final_mse = 0.0;           // standardized residual space
    std::vector<double> epoch_mse;    // batch-averaged, one entry per epoch
};

/// Adam on mini-batches of the standardized residuals. A warm start keeps the
/// current weights; otherwise they are re-drawn from cfg.seed. Standardizers
/// are refit to the given set on every call.
inline TrainReport train(SurrogateNet& surrogate, const TrainingSet& data, const NetConfig& cfg,
                         bool warm_start) {
    if (data.size() < 1) throw insufficient_data_error("train: empty training set");
    if (data.inputs.rows() != surrogate.input_dim() ||
        data.residuals.rows() != surrogate.output_dim())
        throw std::invalid_argument("train: training set dimensions disagree with surrogate");

    surrogate.input_standardizer().fit(data.inputs);
    surrogate.output_standardizer().fit(data.residuals);
    const Eigen::MatrixXd X = surrogate.input_standardizer().apply(data.inputs);
    const Eigen::MatrixXd T = surrogate.output_standardizer().apply(data.residuals);

    Mlp& net = surrogate.net();
    if (!warm_start) net.init_weights(cfg.seed);

    const int M = data.size();
    const int batch = std::clamp(cfg.batch, 1, M);
    Rng rng = make_rng(cfg.seed, 0x7261696e); // shuffle stream
    std::vector<int> order(M);
    std::iota(order.begin(), order.end(), 0);

    detail::AdamState adam(net);
    TrainReport report;
    report.epoch_mse.reserve(cfg.epochs);
    double reference = -1.0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum_sq = 0.0;
        for (int start = 0; start < M; start += batch) {
            const int n = std::min(batch, M - start);
            Eigen::MatrixXd Xb(X.rows(), n), Tb(T.rows(), n);
            for (int j = 0; j < n; ++j) {
                Xb.col(j) = X.col(order[start + j]);
                Tb.col(j) = T.col(order[start + j]);
            }
            const detail::Gradients g = detail::backprop(net, Xb, Tb);
            sum_sq += g.mse * n;
            adam.step(net, g, cfg.learning_rate);
        }
        const double epoch_mse = sum_sq / M;
        if (!std::isfinite(epoch_mse)) throw divergence_error("training loss is not finite", epoch);
        if (reference < 0.0) reference = epoch_mse;
        if (epoch_mse > 1e6 * (reference + 1.0))
            throw divergence_error("training loss exploded", epoch);
        report.epoch_mse.push_back(epoch_mse);
    }
    report.final_mse = (net.forward_batch(X) - T).squaredNorm() /
                       (static_cast<double>(M) * T.rows());
    return report;
}

/// Largest relative gap between analytic and central-difference derivatives
/// over every weight, bias, and slope.
inline double gradient_check(const Mlp& net, const Eigen::MatrixXd& X, const Eigen::MatrixXd& T,
                             double step = 1e-4) {
    Mlp probe = net;
    const detail::Gradients g = detail::backprop(probe, X, T);
    const auto loss_at = [&probe, &X, &T]() {
        const Eigen::MatrixXd err = probe.forward_batch(X) - T;
        return err.squaredNorm() / (2.0 * X.cols() * T.rows());
    };
    double worst = 0.0;
    const auto compare = [&](double& param, double analytic) {
        const double saved = param;
        param = saved + step;
        const double up = loss_at();
        param = saved - step;
        const double down = loss_at();
        param = saved;
        const double fd = (up - down) / (2.0 * step);
        const double rel = std::abs(fd - analytic) / std::max({std::abs(fd), std::abs(analytic), 1.0});
        worst = std::max(worst, rel);
    };
    for (int l = 0; l < probe.layer_count(); ++l) {
        for (Eigen::Index j = 0; j < probe.W[l].cols(); ++j)
            for (Eigen::Index i = 0; i < probe.W[l].rows(); ++i)
                compare(probe.W[l](i, j), g.dW[l](i, j));
        for (Eigen::Index i = 0; i < probe.b[l].size(); ++i) compare(probe.b[l][i], g.db[l][i]);
    }
    if (probe.activation() == Activation::PReLU)
        for (std::size_t l = 0; l < probe.slope.size(); ++l) compare(probe.slope[l], g.dslope[l]);
    return worst;
}

/// Checks the surrogate's own network against its standardized residual data.
inline double gradient_check(const SurrogateNet& surrogate, const TrainingSet& data,
                             double step = 1e-4) {
    return gradient_check(surrogate.net(), surrogate.input_standardizer().apply(data.inputs),
                          surrogate.output_standardizer().apply(data.residuals), step);
}

namespace detail {

constexpr char kNetMagic[8] = {'S', 'B', 'D', 'N', 'E', 'T', '1', '\0'};

inline void write_u64(std::ostream& os, std::uint64_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline std::uint64_t read_u64(std::istream& is) {
    std::uint64_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    return v;
}
inline void write_doubles(std::ostream& os, const double* p, std::size_t n) {
    os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline void read_doubles(std::istream& is, double* p, std::size_t n) {
    is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline void write_vector(std::ostream& os, const Eigen::VectorXd& v) {
    write_u64(os, static_cast<std::uint64_t>(v.size()));
    write_doubles(os, v.data(), static_cast<std::size_t>(v.size()));
}
inline Eigen::VectorXd read_vector(std::istream& is) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(read_u64(is)));
    read_doubles(is, v.data(), static_cast<std::size_t>(v.size()));
    return v;
}

} // namespace detail

/// Binary checkpoint: magic, activation, layer dims, weights (column-major),
/// biases, slopes, then the two standardizers. The cheap model is not part of
/// the file; the loader re-attaches the one it is given.
inline void save_surrogate(const std::string& path, const SurrogateNet& surrogate) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_surrogate: cannot open " + path);
    os.write(detail::kNetMagic, sizeof detail::kNetMagic);
    const Mlp& net = surrogate.net();
    detail::write_u64(os, static_cast<std::uint64_t>(net.activation()));
    detail::write_u64(os, static_cast<std::uint64_t>(net.layer_count()));
    detail::write_u64(os, static_cast<std::uint64_t>(net.input_dim()));
    for (const auto& Wl : net.W) detail::write_u64(os, static_cast<std::uint64_t>(Wl.rows()));
    for (const auto& Wl : net.W)
        detail::write_doubles(os, Wl.data(), static_cast<std::size_t>(Wl.size()));
    for (const auto& bl : net.b) detail::write_vector(os, bl);
    detail::write_u64(os, static_cast<std::uint64_t>(net.slope.size()));
    detail::write_doubles(os, net.slope.data(), net.slope.size());
    detail::write_vector(os, surrogate.input_standardizer().shift());
    detail::write_vector(os, surrogate.input_standardizer().scale());
    detail::write_vector(os, surrogate.output_standardizer().shift());
    detail::write_vector(os, surrogate.output_standardizer().scale());
    if (!os) throw std::runtime_error("save_surrogate: write failed for " + path);
}

inline SurrogateNet load_surrogate(const std::string& path, ForwardModel coarse,
                                   NetConfig cfg = {}) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_surrogate: cannot open " + path);
    char magic[sizeof detail::kNetMagic];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, detail::kNetMagic, sizeof magic) != 0)
        throw std::runtime_error("load_surrogate: bad magic in " + path);
    const auto act = static_cast<Activation>(detail::read_u64(is));
    const int layers = static_cast<int>(detail::read_u64(is));
    const int input_dim = static_cast<int>(detail::read_u64(is));
    std::vector<int> rows(layers);
    for (int l = 0; l < layers; ++l) rows[l] = static_cast<int>(detail::read_u64(is));
    std::vector<int> hidden(rows.begin(), rows.end() - 1);
    const int output_dim = rows.back();

    cfg.hidden = hidden;
    cfg.activation = act;
    SurrogateNet surrogate(std::move(coarse), cfg);
    if (surrogate.input_dim() != input_dim || surrogate.output_dim() != output_dim)
        throw std::runtime_error("load_surrogate: checkpoint does not match the cheap model");
    Mlp& net = surrogate.net();
    for (auto& Wl : net.W)
        detail::read_doubles(is, Wl.data(), static_cast<std::size_t>(Wl.size()));
    for (auto& bl : net.b) bl = detail::read_vector(is);
    const auto n_slopes = static_cast<std::size_t>(detail::read_u64(is));
    net.slope.assign(n_slopes, 0.0);
    detail::read_doubles(is, net.slope.data(), n_slopes);
    Eigen::VectorXd in_shift = detail::read_vector(is);
    Eigen::VectorXd in_scale = detail::read_vector(is);
    Eigen::VectorXd out_shift = detail::read_vector(is);
    Eigen::VectorXd out_scale = detail::read_vector(is);
    if (!is) throw std::runtime_error("load_surrogate: truncated file " + path);
    surrogate.input_standardizer().set(std::move(in_shift), std::move(in_scale));
    surrogate.output_standardizer().set(std::move(out_shift), std::move(out_scale));
    return surrogate;
}

} // namespace sbdlas
