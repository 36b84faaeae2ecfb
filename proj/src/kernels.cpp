#include "xccd/kernels.hpp"

#include <cmath>

namespace xccd::kern {

namespace serial {

void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + i * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        double* crow = c + i * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + i];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
        double* row = x + i * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) {
            if (row[j] > mx) mx = row[j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
}

}  // namespace serial

namespace par {

void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(m); ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = a[p * m + static_cast<std::size_t>(i)];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(rows); ++i) {
        double* row = x + static_cast<std::size_t>(i) * cols;
        double mx = row[0];
        for (std::size_t j = 1; j < cols; ++j) {
            if (row[j] > mx) mx = row[j];
        }
        double sum = 0.0;
        for (std::size_t j = 0; j < cols; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        const double inv = 1.0 / sum;
        for (std::size_t j = 0; j < cols; ++j) row[j] *= inv;
    }
}

}  // namespace par

namespace {
constexpr std::size_t kGrain = 64 * 1024;  // flops below this run serial
}

void matmul(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
            std::size_t n) {
    if (m * k * n >= kGrain && m > 1) {
        par::matmul(c, a, b, m, k, n);
    } else {
        serial::matmul(c, a, b, m, k, n);
    }
}

void matmul_nt(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
    if (m * k * n >= kGrain && m > 1) {
        par::matmul_nt(c, a, b, m, k, n);
    } else {
        serial::matmul_nt(c, a, b, m, k, n);
    }
}

void matmul_tn(double* c, const double* a, const double* b, std::size_t m, std::size_t k,
               std::size_t n) {
    if (m * k * n >= kGrain && m > 1) {
        par::matmul_tn(c, a, b, m, k, n);
    } else {
        serial::matmul_tn(c, a, b, m, k, n);
    }
}

void softmax_rows(double* x, std::size_t rows, std::size_t cols) {
    if (rows * cols >= 4096 && rows > 1) {
        par::softmax_rows(x, rows, cols);
    } else {
        serial::softmax_rows(x, rows, cols);
    }
}

}  // namespace xccd::kern
