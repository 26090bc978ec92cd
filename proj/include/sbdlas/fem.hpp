#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "sbdlas/errors.hpp"
#include "sbdlas/mesh.hpp"

namespace sbdlas {

using SourceFn = std::function<double(const Eigen::Vector2d&)>;

/// Pressure measurement locations, strictly inside the domain,
/// paired with the noise standard deviation of the instrument.
struct ObservationGrid {
    std::vector<Eigen::Vector2d> points;
    double delta = 0.0;

    int size() const { return static_cast<int>(points.size()); }
};

/// Equispaced nx x ny grid of interior points.
inline ObservationGrid interior_grid(const Rect& domain, int nx, int ny, double delta = 0.0) {
    if (nx < 1 || ny < 1) throw std::invalid_argument("interior_grid: need at least one point per side");
    ObservationGrid g;
    g.delta = delta;
    const Eigen::Vector2d ext = domain.extent();
    for (int iy = 1; iy <= ny; ++iy)
        for (int ix = 1; ix <= nx; ++ix)
            g.points.emplace_back(domain.lo.x() + ext.x() * ix / (nx + 1),
                                  domain.lo.y() + ext.y() * iy / (ny + 1));
    return g;
}

struct SolveInfo {
    int triangles = 0;
    int unknowns = 0;
    std::int64_t factor_nnz = 0;
};

/// P1 Galerkin solver for -div(a grad u) = f with u = 0 on the boundary.
/// Geometry factors are precomputed once so repeated solves with varying
/// coefficients only reassemble and refactorize the reduced system.
class P1Solver {
public:
    explicit P1Solver(StructuredMesh mesh) : mesh_(std::move(mesh)) {
        const int nn = mesh_.node_count();
        interior_index_.assign(nn, -1);
        n_interior_ = 0;
        for (int i = 0; i < nn; ++i)
            if (!mesh_.boundary[i]) interior_index_[i] = n_interior_++;

        geom_.reserve(mesh_.triangles.size());
        area_.reserve(mesh_.triangles.size());
        centroid_.reserve(mesh_.triangles.size());
        for (const auto& t : mesh_.triangles) {
            const Eigen::Vector2d &p0 = mesh_.nodes[t[0]], &p1 = mesh_.nodes[t[1]],
                                  &p2 = mesh_.nodes[t[2]];
            const double twoA = doubled_area(p0, p1, p2);
            if (twoA <= 0.0) throw std::invalid_argument("P1Solver: degenerate triangle");
            const double area = 0.5 * twoA;
            // gradients of the barycentric basis
            Eigen::Matrix<double, 2, 3> grad;
            grad.col(0) = Eigen::Vector2d(p1.y() - p2.y(), p2.x() - p1.x()) / twoA;
            grad.col(1) = Eigen::Vector2d(p2.y() - p0.y(), p0.x() - p2.x()) / twoA;
            grad.col(2) = Eigen::Vector2d(p0.y() - p1.y(), p1.x() - p0.x()) / twoA;
            geom_.push_back(area * grad.transpose() * grad); // unit-coefficient local stiffness
            area_.push_back(area);
            centroid_.push_back((p0 + p1 + p2) / 3.0);
        }
    }

    const StructuredMesh& mesh() const { return mesh_; }
    int interior_count() const { return n_interior_; }

    /// Reduced stiffness matrix on interior nodes; per-element coefficient
    /// is the arithmetic mean of the three vertex values.
    Eigen::SparseMatrix<double> interior_stiffness(const Eigen::VectorXd& a) const {
        check_coefficient(a);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(9 * mesh_.triangles.size());
        for (std::size_t e = 0; e < mesh_.triangles.size(); ++e) {
            const auto& t = mesh_.triangles[e];
            const double ae = (a[t[0]] + a[t[1]] + a[t[2]]) / 3.0;
            for (int i = 0; i < 3; ++i) {
                const int gi = interior_index_[t[i]];
                if (gi < 0) continue;
                for (int j = 0; j < 3; ++j) {
                    const int gj = interior_index_[t[j]];
                    if (gj < 0) continue;
                    trip.emplace_back(gi, gj, ae * geom_[e](i, j));
                }
            }
        }
        Eigen::SparseMatrix<double> A(n_interior_, n_interior_);
        A.setFromTriplets(trip.begin(), trip.end());
        return A;
    }

    /// Load vector on interior nodes, one-point centroid quadrature.
    Eigen::VectorXd interior_load(const SourceFn& f) const {
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n_interior_);
        for (std::size_t e = 0; e < mesh_.triangles.size(); ++e) {
            const double fw = f(centroid_[e]) * area_[e] / 3.0;
            for (int i = 0; i < 3; ++i) {
                const int gi = interior_index_[mesh_.triangles[e][i]];
                if (gi >= 0) rhs[gi] += fw;
            }
        }
        return rhs;
    }

    /// Full nodal solution; zero at boundary nodes.
    Eigen::VectorXd solve(const Eigen::VectorXd& a, const SourceFn& f,
                          SolveInfo* info = nullptr) const {
        const Eigen::SparseMatrix<double> A = interior_stiffness(a);
        const Eigen::VectorXd rhs = interior_load(f);

        Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> llt(A);
        if (llt.info() != Eigen::Success)
            throw numerical_error("P1Solver: sparse Cholesky factorization failed");
        const Eigen::VectorXd x = llt.solve(rhs);

        const double rhs_norm = rhs.norm();
        const double resid = (A * x - rhs).norm();
        if (rhs_norm > 0.0 && resid > 1e-10 * rhs_norm)
            throw numerical_error("P1Solver: residual " + std::to_string(resid / rhs_norm) +
                                  " above tolerance");
        if (info) {
            info->triangles = mesh_.triangle_count();
            info->unknowns = n_interior_;
            info->factor_nnz = llt.matrixL().nestedExpression().nonZeros();
        }

        Eigen::VectorXd u = Eigen::VectorXd::Zero(mesh_.node_count());
        for (int i = 0; i < mesh_.node_count(); ++i)
            if (interior_index_[i] >= 0) u[i] = x[interior_index_[i]];
        return u;
    }

private:
    void check_coefficient(const Eigen::VectorXd& a) const {
        if (a.size() != mesh_.node_count())
            throw std::invalid_argument("P1Solver: coefficient length " + std::to_string(a.size()) +
                                        " != node count " + std::to_string(mesh_.node_count()));
        for (Eigen::Index i = 0; i < a.size(); ++i)
            if (!(a[i] > 0.0))
                throw std::domain_error("P1Solver: non-positive coefficient at node " +
                                        std::to_string(i));
    }

    StructuredMesh mesh_;
    std::vector<Eigen::Matrix3d> geom_;
    std::vector<double> area_;
    std::vector<Eigen::Vector2d> centroid_;
    std::vector<int> interior_index_;
    int n_interior_ = 0;
};

inline Eigen::VectorXd assemble_and_solve(const StructuredMesh& mesh, const Eigen::VectorXd& a,
                                          const SourceFn& f, SolveInfo* info = nullptr) {
    return P1Solver(mesh).solve(a, f, info);
}

/// P1 interpolation of nodal values at an arbitrary point.
/// Exact at mesh nodes (barycentric weights degenerate to 0/1 there).
inline double interpolate(const Eigen::VectorXd& u, const StructuredMesh& mesh,
                          const Eigen::Vector2d& x) {
    if (u.size() != mesh.node_count())
        throw std::invalid_argument("interpolate: field length mismatch");
    const double tol = 1e-12 * (1.0 + mesh.domain.extent().norm());
    if (!mesh.domain.contains(x, tol))
        throw out_of_domain_error("interpolate: point (" + std::to_string(x.x()) + ", " +
                                  std::to_string(x.y()) + ") outside domain");
    const int n = mesh.nodes_per_side;
    const Eigen::Vector2d ext = mesh.domain.extent();
    const double hx = ext.x() / (n - 1), hy = ext.y() / (n - 1);
    int ix = std::min(n - 2, std::max(0, static_cast<int>(std::floor((x.x() - mesh.domain.lo.x()) / hx))));
    int iy = std::min(n - 2, std::max(0, static_cast<int>(std::floor((x.y() - mesh.domain.lo.y()) / hy))));

    // both triangles of the enclosing cell; barycentric weights pick the right one
    const int cell = 2 * (iy * (n - 1) + ix);
    for (int k = 0; k < 2; ++k) {
        const auto& t = mesh.triangles[cell + k];
        const Eigen::Vector2d &p0 = mesh.nodes[t[0]], &p1 = mesh.nodes[t[1]], &p2 = mesh.nodes[t[2]];
        const double twoA = doubled_area(p0, p1, p2);
        const double l0 = doubled_area(x, p1, p2) / twoA;
        const double l1 = doubled_area(p0, x, p2) / twoA;
        const double l2 = doubled_area(p0, p1, x) / twoA;
        const double eps = 1e-12;
        if (l0 >= -eps && l1 >= -eps && l2 >= -eps)
            return l0 * u[t[0]] + l1 * u[t[1]] + l2 * u[t[2]];
    }
    throw out_of_domain_error("interpolate: point not located in its cell");
}

inline Eigen::VectorXd observe(const Eigen::VectorXd& u, const StructuredMesh& mesh,
                               const ObservationGrid& grid) {
    Eigen::VectorXd out(grid.size());
    for (int i = 0; i < grid.size(); ++i) out[i] = interpolate(u, mesh, grid.points[i]);
    return out;
}

} // namespace sbdlas
