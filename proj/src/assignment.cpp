#include <algorithm>
#include <limits>
#include <stdexcept>

#include "mfc/measure.hpp"

namespace mfc {

// Shortest augmenting path Hungarian method with row/column potentials, O(n^3).
std::vector<std::size_t> min_cost_assignment(std::span<const double> cost, std::size_t n) {
    if (cost.size() != n * n) throw std::invalid_argument("min_cost_assignment: cost is not n x n");
    if (n == 0) return {};
    constexpr double inf = std::numeric_limits<double>::infinity();
    // 1-based arrays; column 0 is the virtual source.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> owner(n + 1, 0), way(n + 1, 0);
    std::vector<double> minv(n + 1);
    std::vector<char> used(n + 1);

    for (std::size_t row = 1; row <= n; ++row) {
        owner[0] = row;
        std::size_t col0 = 0;
        std::fill(minv.begin(), minv.end(), inf);
        std::fill(used.begin(), used.end(), 0);
        do {
            used[col0] = 1;
            const std::size_t r = owner[col0];
            double delta = inf;
            std::size_t col1 = 0;
            for (std::size_t c = 1; c <= n; ++c) {
                if (used[c]) continue;
                const double reduced = cost[(r - 1) * n + (c - 1)] - u[r] - v[c];
                if (reduced < minv[c]) {
                    minv[c] = reduced;
                    way[c] = col0;
                }
                if (minv[c] < delta) {
                    delta = minv[c];
                    col1 = c;
                }
            }
            for (std::size_t c = 0; c <= n; ++c) {
                if (used[c]) {
                    u[owner[c]] += delta;
                    v[c] -= delta;
                } else {
                    minv[c] -= delta;
                }
            }
            col0 = col1;
        } while (owner[col0] != 0);
        do {
            const std::size_t prev = way[col0];
            owner[col0] = owner[prev];
            col0 = prev;
        } while (col0 != 0);
    }

    std::vector<std::size_t> match(n);
    for (std::size_t c = 1; c <= n; ++c) match[owner[c] - 1] = c - 1;
    return match;
}

}  // namespace mfc
