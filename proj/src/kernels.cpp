#include "fairflow/kernels.hpp"

#include <cassert>
#include <cmath>
#include <limits>
#include <vector>

namespace fairflow::kernels {

namespace {

constexpr std::size_t kParallelWork = 1 << 16;

void prepare(Matrix& c, std::size_t rows, std::size_t cols, bool accumulate) {
    if (accumulate) {
        assert(c.rows() == rows && c.cols() == cols);
        return;
    }
    if (c.rows() != rows || c.cols() != cols) {
        c = Matrix(rows, cols);
    } else {
        c.fill(0.0);
    }
}

inline void gemm_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const std::size_t inner = a.cols();
    const std::size_t m = b.cols();
    double* crow = c.data().data() + i * m;
    const double* arow = a.data().data() + i * inner;
    const double* bdata = b.data().data();
    for (std::size_t k = 0; k < inner; ++k) {
        const double aik = arow[k];
        if (aik == 0.0) continue;
        const double* brow = bdata + k * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += aik * brow[j];
    }
}

inline void gemm_nt_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const std::size_t inner = a.cols();
    const double* arow = a.data().data() + i * inner;
    for (std::size_t j = 0; j < b.rows(); ++j) {
        const double* brow = b.data().data() + j * inner;
        double s = 0.0;
        for (std::size_t k = 0; k < inner; ++k) s += arow[k] * brow[k];
        c(i, j) += s;
    }
}

inline void gemm_tn_row(const Matrix& a, const Matrix& b, Matrix& c, std::size_t i) {
    const std::size_t m = b.cols();
    double* crow = c.data().data() + i * m;
    for (std::size_t k = 0; k < a.rows(); ++k) {
        const double aki = a(k, i);
        if (aki == 0.0) continue;
        const double* brow = b.data().data() + k * m;
        for (std::size_t j = 0; j < m; ++j) crow[j] += aki * brow[j];
    }
}

inline double cosine(const Matrix& table, std::span<const double> norms,
                     std::span<const double> query, double qnorm, std::size_t r) {
    const double denom = norms[r] * qnorm;
    if (denom == 0.0) return 0.0;
    return dot(table.row(r), query) / denom;
}

}  // namespace

double dot(std::span<const double> a, std::span<const double> b) {
    assert(a.size() == b.size());
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

int max_threads() {
#ifdef FAIRFLOW_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

namespace serial {

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.rows());
    prepare(c, a.rows(), b.cols(), accumulate);
    for (std::size_t i = 0; i < a.rows(); ++i) gemm_row(a, b, c, i);
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.cols());
    prepare(c, a.rows(), b.rows(), accumulate);
    for (std::size_t i = 0; i < a.rows(); ++i) gemm_nt_row(a, b, c, i);
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.rows() == b.rows());
    prepare(c, a.cols(), b.cols(), accumulate);
    for (std::size_t i = 0; i < a.cols(); ++i) gemm_tn_row(a, b, c, i);
}

std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query) {
    assert(table.rows() > 0 && table.cols() == query.size());
    const double qnorm = norm(query);
    std::size_t best = 0;
    double best_sim = -std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < table.rows(); ++r) {
        const double s = cosine(table, row_norms, query, qnorm, r);
        if (s > best_sim) {
            best_sim = s;
            best = r;
        }
    }
    return best;
}

}  // namespace serial

namespace omp {

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.rows());
    prepare(c, a.rows(), b.cols(), accumulate);
    const auto rows = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i) gemm_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.cols() == b.cols());
    prepare(c, a.rows(), b.rows(), accumulate);
    const auto rows = static_cast<long long>(a.rows());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i) gemm_nt_row(a, b, c, static_cast<std::size_t>(i));
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    assert(a.rows() == b.rows());
    prepare(c, a.cols(), b.cols(), accumulate);
    const auto rows = static_cast<long long>(a.cols());
#pragma omp parallel for schedule(static)
    for (long long i = 0; i < rows; ++i) gemm_tn_row(a, b, c, static_cast<std::size_t>(i));
}

std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query) {
    assert(table.rows() > 0 && table.cols() == query.size());
    const double qnorm = norm(query);
    const auto rows = static_cast<long long>(table.rows());
    std::vector<double> sims(table.rows());
#pragma omp parallel for schedule(static)
    for (long long r = 0; r < rows; ++r) {
        sims[static_cast<std::size_t>(r)] =
            cosine(table, row_norms, query, qnorm, static_cast<std::size_t>(r));
    }
    // Serial scan keeps the lowest-index tie-break.
    std::size_t best = 0;
    for (std::size_t r = 1; r < sims.size(); ++r) {
        if (sims[r] > sims[best]) best = r;
    }
    return best;
}

}  // namespace omp

void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.rows() * a.cols() * b.cols() >= kParallelWork && a.rows() > 1) {
        omp::gemm(a, b, c, accumulate);
    } else {
        serial::gemm(a, b, c, accumulate);
    }
}

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.rows() * a.cols() * b.rows() >= kParallelWork && a.rows() > 1) {
        omp::gemm_nt(a, b, c, accumulate);
    } else {
        serial::gemm_nt(a, b, c, accumulate);
    }
}

void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate) {
    if (a.rows() * a.cols() * b.cols() >= kParallelWork && a.cols() > 1) {
        omp::gemm_tn(a, b, c, accumulate);
    } else {
        serial::gemm_tn(a, b, c, accumulate);
    }
}

std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query, Exec exec) {
    if (exec == Exec::parallel && table.rows() * table.cols() >= kParallelWork) {
        return omp::cosine_argmax(table, row_norms, query);
    }
    return serial::cosine_argmax(table, row_norms, query);
}

}  // namespace fairflow::kernels
