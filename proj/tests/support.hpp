#pragma once

#include "tclab/tclab.hpp"

#include <random>

namespace tclab::testing {

inline Matrix random_stochastic(Index rows, Index cols, Rng& rng, double sparsity = 0.0) {
    Matrix m(rows, cols);
    for (Index r = 0; r < rows; ++r) {
        for (Index c = 0; c < cols; ++c) m(r, c) = uniform01(rng) < sparsity ? 0.0 : 0.05 + uniform01(rng);
        m.row(r) /= m.row(r).sum();
    }
    return m;
}

inline TabularMdp random_mdp(Index n, Index na, Rng& rng, double gamma = 0.9) {
    std::vector<Matrix> t;
    for (Index a = 0; a < na; ++a) t.push_back(random_stochastic(n, n, rng));
    Matrix r = Matrix::Random(n, na);
    return TabularMdp(std::move(t), r, gamma, Vector::Constant(n, 1.0 / static_cast<double>(n)));
}

inline ChainMatrix random_chain(Index n, Rng& rng) { return ChainMatrix(random_stochastic(n, n, rng)); }

/// Option with logits in [-2, 2] and a uniform policy over one action.
inline OptionDef random_option(Index n, Rng& rng) {
    Vector logits(n);
    for (Index x = 0; x < n; ++x) logits[x] = -2.0 + 4.0 * uniform01(rng);
    return OptionDef(PolicyTable::uniform(n, 1), logits);
}

inline Vector random_distribution(Index n, Rng& rng) {
    Vector d(n);
    for (Index i = 0; i < n; ++i) d[i] = 0.05 + uniform01(rng);
    return d / d.sum();
}

}  // namespace tclab::testing
