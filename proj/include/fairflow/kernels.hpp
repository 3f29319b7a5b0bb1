#pragma once

// Dense kernels used by the training and inference paths. Each kernel has a
// serial reference and an OpenMP version. Both compute every output element
// with the same floating-point operation order, so results are bitwise equal
// and the serial versions double as test oracles.

#include "fairflow/matrix.hpp"

#include <cstddef>
#include <span>

#ifdef FAIRFLOW_HAVE_OPENMP
#include <omp.h>
#endif

namespace fairflow::kernels {

enum class Exec { serial, parallel };

namespace serial {
// c = a * b (or c += a * b when accumulate)
void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a * b^T
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// c = a^T * b
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
// Row of `table` with the highest cosine similarity to `query`; lowest index wins ties.
std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query);
}  // namespace serial

namespace omp {
void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query);
}  // namespace omp

// Dispatchers: OpenMP above a work threshold, serial otherwise.
void gemm(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
void gemm_tn(const Matrix& a, const Matrix& b, Matrix& c, bool accumulate = false);
std::size_t cosine_argmax(const Matrix& table, std::span<const double> row_norms,
                          std::span<const double> query, Exec exec = Exec::parallel);

double dot(std::span<const double> a, std::span<const double> b);
double norm(std::span<const double> a);

int max_threads();

// Runs fn(i) for i in [0, n). Iterations must write disjoint outputs.
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, Exec exec = Exec::parallel) {
    if (exec == Exec::serial) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
#ifdef FAIRFLOW_HAVE_OPENMP
    const auto count = static_cast<long long>(n);
#pragma omp parallel for schedule(dynamic, 1)
    for (long long i = 0; i < count; ++i) fn(static_cast<std::size_t>(i));
#else
    for (std::size_t i = 0; i < n; ++i) fn(i);
#endif
}

}  // namespace fairflow::kernels
