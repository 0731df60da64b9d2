#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"

namespace sg {

using Vec = std::vector<double>;

// Order-independent summation: splits recursively so parallel or permuted
// accumulation reproduces the same rounding.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    std::size_t h = xs.size() / 2;
    return pairwise_sum(xs.first(h)) + pairwise_sum(xs.subspan(h));
}

inline double dot(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) s += u[i] * v[i];
    return s;
}

inline double norm2(std::span<const double> u) { return std::sqrt(dot(u, u)); }

inline double sq_dist(std::span<const double> u, std::span<const double> v) {
    double s = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        double d = u[i] - v[i];
        s += d * d;
    }
    return s;
}

// Dense row-major matrix.
struct Matrix {
    std::size_t rows = 0, cols = 0;
    Vec a;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0)
        : rows(r), cols(c), a(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return a[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const {
        return a[i * cols + j];
    }
    std::span<const double> row(std::size_t i) const {
        return {a.data() + i * cols, cols};
    }
    std::span<double> row(std::size_t i) {
        return {a.data() + i * cols, cols};
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    Vec mul(std::span<const double> x) const {
        Vec y(rows, 0.0);
        for (std::size_t i = 0; i < rows; ++i) y[i] = dot(row(i), x);
        return y;
    }
    Vec mul_t(std::span<const double> x) const {  // transpose times x
        Vec y(cols, 0.0);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) y[j] += a[i * cols + j] * x[i];
        return y;
    }
    Matrix matmul(const Matrix& b) const {
        Matrix c(rows, b.cols);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t k = 0; k < cols; ++k) {
                double aik = (*this)(i, k);
                if (aik == 0.0) continue;
                for (std::size_t j = 0; j < b.cols; ++j)
                    c(i, j) += aik * b(k, j);
            }
        return c;
    }
    Matrix transposed() const {
        Matrix t(cols, rows);
        for (std::size_t i = 0; i < rows; ++i)
            for (std::size_t j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
    double frob() const { return norm2(a); }
};

inline bool all_finite(std::span<const double> xs) {
    return std::all_of(xs.begin(), xs.end(),
                       [](double x) { return std::isfinite(x); });
}

// Symmetric matrix; construction validates symmetry and finiteness.
struct SymMatrix {
    std::size_t dim = 0;
    Vec a;  // row-major dim*dim

    SymMatrix() = default;
    explicit SymMatrix(std::size_t d) : dim(d), a(d * d, 0.0) {}

    static SymMatrix from_matrix(const Matrix& m, double tol = 1e-12) {
        if (m.rows != m.cols)
            throw ValidationError("SymMatrix: matrix is not square");
        if (!all_finite(m.a))
            throw ValidationError("SymMatrix: non-finite entries");
        for (std::size_t i = 0; i < m.rows; ++i)
            for (std::size_t j = i + 1; j < m.cols; ++j)
                if (std::abs(m(i, j) - m(j, i)) > tol)
                    throw ValidationError(
                        "SymMatrix: asymmetry " +
                        std::to_string(std::abs(m(i, j) - m(j, i))) + " at (" +
                        std::to_string(i) + "," + std::to_string(j) + ")");
        SymMatrix s(m.rows);
        s.a = m.a;
        // exact symmetrization so downstream algebra sees a(i,j) == a(j,i)
        for (std::size_t i = 0; i < s.dim; ++i)
            for (std::size_t j = i + 1; j < s.dim; ++j) {
                double v = 0.5 * (s(i, j) + s(j, i));
                s(i, j) = v;
                s(j, i) = v;
            }
        return s;
    }

    double& operator()(std::size_t i, std::size_t j) { return a[i * dim + j]; }
    double operator()(std::size_t i, std::size_t j) const {
        return a[i * dim + j];
    }

    Matrix as_matrix() const {
        Matrix m(dim, dim);
        m.a = a;
        return m;
    }

    double trace() const {
        double t = 0.0;
        for (std::size_t i = 0; i < dim; ++i) t += (*this)(i, i);
        return t;
    }
    double frob() const { return norm2(a); }

    static SymMatrix diag(std::span<const double> d) {
        SymMatrix s(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) s(i, i) = d[i];
        return s;
    }
    static SymMatrix identity(std::size_t n) {
        SymMatrix s(n);
        for (std::size_t i = 0; i < n; ++i) s(i, i) = 1.0;
        return s;
    }
};

struct EigenDecomposition {
    Vec values;       // sorted descending
    Matrix vectors;   // column i pairs with values[i]
};

// Cyclic Jacobi rotations; fine for the dims this toolkit sees (<= ~512).
inline EigenDecomposition sym_eig(const SymMatrix& m) {
    const std::size_t n = m.dim;
    if (!all_finite(m.a)) throw ValidationError("sym_eig: non-finite entries");
    Matrix a = m.as_matrix();
    Matrix v = Matrix::identity(n);

    auto off_norm = [&]() {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = i + 1; j < n; ++j) s += a(i, j) * a(i, j);
        return std::sqrt(2.0 * s);
    };
    const double scale = std::max(a.frob(), 1e-300);
    const int max_sweeps = 100;
    int sweep = 0;
    for (; sweep < max_sweeps; ++sweep) {
        if (off_norm() <= 1e-12 * scale) break;
        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = a(p, q);
                if (std::abs(apq) <= 1e-300) continue;
                double app = a(p, p), aqq = a(q, q);
                double tau = (aqq - app) / (2.0 * apq);
                double t = (tau >= 0.0)
                               ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                               : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;
                for (std::size_t k = 0; k < n; ++k) {
                    double akp = a(k, p), akq = a(k, q);
                    a(k, p) = c * akp - s * akq;
                    a(k, q) = s * akp + c * akq;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double apk = a(p, k), aqk = a(q, k);
                    a(p, k) = c * apk - s * aqk;
                    a(q, k) = s * apk + c * aqk;
                }
                for (std::size_t k = 0; k < n; ++k) {
                    double vkp = v(k, p), vkq = v(k, q);
                    v(k, p) = c * vkp - s * vkq;
                    v(k, q) = s * vkp + c * vkq;
                }
            }
        }
    }
    if (sweep == max_sweeps && off_norm() > 1e-12 * scale)
        throw NumericalError("sym_eig: Jacobi did not converge in " +
                             std::to_string(max_sweeps) + " sweeps (dim " +
                             std::to_string(n) + ")");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t x, std::size_t y) { return a(x, x) > a(y, y); });

    EigenDecomposition d;
    d.values.resize(n);
    d.vectors = Matrix(n, n);
    for (std::size_t j = 0; j < n; ++j) {
        d.values[j] = a(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) d.vectors(i, j) = v(i, order[j]);
    }
    return d;
}

// Square root of a symmetric PSD matrix. Eigenvalues in [-1e-10, 0) are
// treated as roundoff and clamped; anything lower is a caller error.
inline SymMatrix sqrtm_spd(const SymMatrix& m) {
    EigenDecomposition d = sym_eig(m);
    for (double& lam : d.values) {
        if (lam < -1e-10)
            throw DomainError("sqrtm_spd: eigenvalue " + std::to_string(lam) +
                              " below -1e-10; matrix is not PSD");
        if (lam < 0.0) lam = 0.0;
    }
    const std::size_t n = m.dim;
    SymMatrix r(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i; j < n; ++j) {
            double s = 0.0;
            for (std::size_t k = 0; k < n; ++k)
                s += d.vectors(i, k) * std::sqrt(d.values[k]) * d.vectors(j, k);
            r(i, j) = s;
            r(j, i) = s;
        }
    return r;
}

// Sample mean and unbiased covariance of the rows of x.
inline std::pair<Vec, SymMatrix> mean_cov(const Matrix& x) {
    const std::size_t n = x.rows, d = x.cols;
    if (n < 2) throw ValidationError("mean_cov: need at least 2 rows, got " +
                                     std::to_string(n));
    Vec mu(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
        Vec col(n);
        for (std::size_t i = 0; i < n; ++i) col[i] = x(i, j);
        mu[j] = pairwise_sum(col) / double(n);
    }
    SymMatrix c(d);
    for (std::size_t j = 0; j < d; ++j)
        for (std::size_t k = j; k < d; ++k) {
            Vec prod(n);
            for (std::size_t i = 0; i < n; ++i)
                prod[i] = (x(i, j) - mu[j]) * (x(i, k) - mu[k]);
            double v = pairwise_sum(prod) / double(n - 1);
            c(j, k) = v;
            c(k, j) = v;
        }
    return {std::move(mu), std::move(c)};
}

enum class Metric { euclidean, cosine };

inline double cosine_distance(std::span<const double> u,
                              std::span<const double> v) {
    double nu = norm2(u), nv = norm2(v);
    if (nu <= 1e-12 || nv <= 1e-12)
        throw DomainError("cosine_distance: zero-norm vector");
    return 1.0 - dot(u, v) / (nu * nv);
}

inline double pair_distance(std::span<const double> u,
                            std::span<const double> v, Metric metric) {
    return metric == Metric::euclidean ? std::sqrt(sq_dist(u, v))
                                       : cosine_distance(u, v);
}

// Distance from each query row to its k-th nearest point row. When
// self_query is set, points and queries are the same set and index-equal
// matches are skipped.
inline Vec knn_distance(const Matrix& points, const Matrix& queries,
                        std::size_t k, Metric metric,
                        bool self_query = false) {
    const std::size_t n = points.rows;
    const std::size_t avail = self_query ? n - 1 : n;
    if (k == 0) throw ValidationError("knn_distance: k must be positive");
    if (k > avail)
        throw ValidationError("knn_distance: k=" + std::to_string(k) +
                              " exceeds available points " +
                              std::to_string(avail));
    if (points.cols != queries.cols)
        throw ValidationError("knn_distance: dimension mismatch");
    Vec out(queries.rows);
    Vec d;
    for (std::size_t q = 0; q < queries.rows; ++q) {
        d.clear();
        for (std::size_t i = 0; i < n; ++i) {
            if (self_query && i == q) continue;
            d.push_back(pair_distance(points.row(i), queries.row(q), metric));
        }
        std::nth_element(d.begin(), d.begin() + (k - 1), d.end());
        out[q] = d[k - 1];
    }
    return out;
}

}  // namespace sg
