#pragma once

#include <algorithm>
#include <cstdint>
#include <span>
#include <vector>

namespace fcmlat {

/// Compressed sparse rows, both triangles stored.
struct CsrMatrix {
    std::size_t rows = 0;
    std::vector<std::int64_t> row_ptr{0};
    std::vector<std::int32_t> cols;
    std::vector<double> values;

    std::size_t nnz() const { return values.size(); }

    /// y = A x
    void multiply(std::span<const double> x, std::span<double> y) const {
#pragma omp parallel for schedule(static)
        for (std::int64_t r = 0; r < std::int64_t(rows); ++r) {
            double sum = 0.0;
            for (std::int64_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) sum += values[p] * x[cols[p]];
            y[r] = sum;
        }
    }

    double at(std::size_t r, std::size_t c) const {
        const auto first = cols.begin() + row_ptr[r];
        const auto last = cols.begin() + row_ptr[r + 1];
        const auto it = std::lower_bound(first, last, std::int32_t(c));
        return (it != last && std::size_t(*it) == c) ? values[std::size_t(it - cols.begin())] : 0.0;
    }

    std::vector<double> diagonal() const {
        std::vector<double> d(rows, 0.0);
        for (std::size_t r = 0; r < rows; ++r) d[r] = at(r, r);
        return d;
    }

    /// Exact (bitwise) symmetry check.
    bool is_symmetric() const {
        for (std::size_t r = 0; r < rows; ++r) {
            for (std::int64_t p = row_ptr[r]; p < row_ptr[r + 1]; ++p) {
                if (at(std::size_t(cols[p]), r) != values[p]) return false;
            }
        }
        return true;
    }
};

struct SparseSystem {
    CsrMatrix matrix;
    std::vector<double> rhs;

    std::size_t n_dofs() const { return rhs.size(); }
};

} // namespace fcmlat
