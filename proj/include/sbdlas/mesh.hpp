#pragma once

#include <array>
#include <stdexcept>
#include <vector>

#include <Eigen/Core>

namespace sbdlas {

/// Axis-aligned rectangular domain.
struct Rect {
    Eigen::Vector2d lo{0.0, 0.0};
    Eigen::Vector2d hi{1.0, 1.0};

    bool contains(const Eigen::Vector2d& x, double tol = 0.0) const {
        return x.x() >= lo.x() - tol && x.x() <= hi.x() + tol &&
               x.y() >= lo.y() - tol && x.y() <= hi.y() + tol;
    }
    Eigen::Vector2d extent() const { return hi - lo; }
};

inline Rect unit_square() { return Rect{{0.0, 0.0}, {1.0, 1.0}}; }
inline Rect centered_square() { return Rect{{-1.0, -1.0}, {1.0, 1.0}}; }

/// Uniform triangulation of a rectangle: n x n nodes, each cell split
/// into two CCW triangles along the cell diagonal.
struct StructuredMesh {
    Rect domain;
    int nodes_per_side = 0;
    std::vector<Eigen::Vector2d> nodes;       // row-major, iy * n + ix
    std::vector<std::array<int, 3>> triangles;
    std::vector<char> boundary;               // 1 for nodes on the rectangle edge

    int node_index(int ix, int iy) const { return iy * nodes_per_side + ix; }
    int node_count() const { return static_cast<int>(nodes.size()); }
    int triangle_count() const { return static_cast<int>(triangles.size()); }
};

inline StructuredMesh build_mesh(const Rect& domain, int n) {
    if (n < 2)
        throw std::invalid_argument("build_mesh: need at least 2 nodes per side, got " +
                                    std::to_string(n));
    StructuredMesh m;
    m.domain = domain;
    m.nodes_per_side = n;
    m.nodes.reserve(static_cast<std::size_t>(n) * n);
    m.boundary.reserve(static_cast<std::size_t>(n) * n);
    const Eigen::Vector2d ext = domain.extent();
    for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
            const double fx = static_cast<double>(ix) / (n - 1);
            const double fy = static_cast<double>(iy) / (n - 1);
            m.nodes.emplace_back(domain.lo.x() + fx * ext.x(), domain.lo.y() + fy * ext.y());
            m.boundary.push_back(ix == 0 || iy == 0 || ix == n - 1 || iy == n - 1 ? 1 : 0);
        }
    }
    m.triangles.reserve(2u * (n - 1) * (n - 1));
    for (int iy = 0; iy + 1 < n; ++iy) {
        for (int ix = 0; ix + 1 < n; ++ix) {
            const int a = m.node_index(ix, iy);
            const int b = m.node_index(ix + 1, iy);
            const int c = m.node_index(ix + 1, iy + 1);
            const int d = m.node_index(ix, iy + 1);
            m.triangles.push_back({a, b, c});
            m.triangles.push_back({a, c, d});
        }
    }
    return m;
}

/// Twice the signed area of triangle (p0, p1, p2).
inline double doubled_area(const Eigen::Vector2d& p0, const Eigen::Vector2d& p1,
                           const Eigen::Vector2d& p2) {
    return (p1.x() - p0.x()) * (p2.y() - p0.y()) - (p2.x() - p0.x()) * (p1.y() - p0.y());
}

} // namespace sbdlas
