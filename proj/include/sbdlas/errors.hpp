#pragma once

#include <stdexcept>
#include <string>

namespace sbdlas {

/// Matrix factorization failed; usually cured by a larger jitter.
class conditioning_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A query point lies outside the computational domain.
class out_of_domain_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Linear solve did not reach the requested residual.
class numerical_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Training loss became non-finite; carries the offending epoch.
class divergence_error : public std::runtime_error {
public:
    divergence_error(const std::string& msg, int epoch)
        : std::runtime_error(msg + " (epoch " + std::to_string(epoch) + ")"), epoch_(epoch) {}
    int epoch() const { return epoch_; }

private:
    int epoch_;
};

/// Too few samples to estimate the requested statistic.
class insufficient_data_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace sbdlas
