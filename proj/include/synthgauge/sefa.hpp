#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"
#include "jsonw.hpp"
#include "numerics.hpp"
#include "toygen.hpp"

namespace sg {

// Orthonormal latent directions sorted by descending significance.
struct DirectionBasis {
    Matrix directions;  // latent_dim x latent_dim, column i = direction i
    Vec significances;  // eigenvalues of A^T A, descending

    std::size_t size() const { return significances.size(); }

    Vec direction(std::size_t i) const {
        Vec v(directions.rows);
        for (std::size_t r = 0; r < directions.rows; ++r)
            v[r] = directions(r, i);
        return v;
    }
};

// Closed-form factorization of the FIRST synthesis layer: eigenvectors of
// A^T A, bias excluded. Sign convention: first nonzero component positive.
inline DirectionBasis factorize(const ToyGenerator& g) {
    if (g.synthesis.empty())
        throw ValidationError("factorize: generator has no synthesis layer");
    const Matrix& a = g.synthesis.front().w;
    if (a.frob() == 0.0)
        throw ValidationError("factorize: first synthesis layer is all zero");
    Matrix ata = a.transposed().matmul(a);
    EigenDecomposition d = sym_eig(SymMatrix::from_matrix(ata, 1e-9));

    DirectionBasis basis;
    basis.significances = d.values;
    for (double& s : basis.significances) s = std::max(s, 0.0);
    basis.directions = d.vectors;
    for (std::size_t j = 0; j < basis.directions.cols; ++j) {
        for (std::size_t i = 0; i < basis.directions.rows; ++i) {
            double v = basis.directions(i, j);
            if (std::abs(v) > 1e-12) {
                if (v < 0.0)
                    for (std::size_t r = 0; r < basis.directions.rows; ++r)
                        basis.directions(r, j) = -basis.directions(r, j);
                break;
            }
        }
    }
    return basis;
}

inline Vec edit(std::span<const double> w, const DirectionBasis& basis,
                std::size_t index, double alpha) {
    if (index >= basis.size())
        throw ValidationError("edit: direction index " + std::to_string(index) +
                              " out of range");
    if (w.size() != basis.directions.rows)
        throw ValidationError("edit: latent dim mismatch");
    Vec out(w.begin(), w.end());
    for (std::size_t i = 0; i < out.size(); ++i)
        out[i] += alpha * basis.directions(i, index);
    return out;
}

struct SweepCell {
    std::size_t index = 0;
    double alpha = 0;
    Vec sample;
};

// Row-major grid over (direction index, alpha); the alpha=0 column is the
// unedited synthesis.
inline std::vector<SweepCell> edit_sweep(const ToyGenerator& g,
                                         std::span<const double> w,
                                         const DirectionBasis& basis,
                                         std::span<const std::size_t> indices,
                                         std::span<const double> alphas) {
    if (std::find(alphas.begin(), alphas.end(), 0.0) == alphas.end())
        throw ValidationError("edit_sweep: alphas must include 0");
    std::vector<SweepCell> grid;
    grid.reserve(indices.size() * alphas.size());
    for (std::size_t idx : indices)
        for (double a : alphas) {
            SweepCell cell;
            cell.index = idx;
            cell.alpha = a;
            cell.sample = synthesize(g, edit(w, basis, idx, a));
            grid.push_back(std::move(cell));
        }
    return grid;
}

inline std::string basis_to_json(const DirectionBasis& basis) {
    JsonWriter w;
    w.begin_object();
    w.key("significances");
    w.number_array(basis.significances);
    w.key("directions");
    w.begin_array();
    for (std::size_t j = 0; j < basis.size(); ++j) {
        Vec v = basis.direction(j);
        w.number_array(v);
    }
    w.end_array();
    w.end_object();
    return w.take();
}

}  // namespace sg
