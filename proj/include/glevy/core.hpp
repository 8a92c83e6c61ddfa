#pragma once

#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <mutex>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace glevy {

using Vec = std::vector<double>;

// Dense row-major matrix, small (d x d with d typically 1..3).
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), a(static_cast<std::size_t>(r) * c, 0.0) {}

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat scalar(double v) {
        Mat m(1, 1);
        m(0, 0) = v;
        return m;
    }

    double& operator()(int i, int j) { return a[static_cast<std::size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<std::size_t>(i) * cols + j]; }

    Mat transposed() const {
        Mat t(cols, rows);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) t(j, i) = (*this)(i, j);
        return t;
    }
};

inline Mat operator*(const Mat& x, const Mat& y) {
    if (x.cols != y.rows) throw std::invalid_argument("Mat product: shape mismatch");
    Mat z(x.rows, y.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int k = 0; k < x.cols; ++k) {
            const double v = x(i, k);
            if (v == 0.0) continue;
            for (int j = 0; j < y.cols; ++j) z(i, j) += v * y(k, j);
        }
    return z;
}

inline double trace(const Mat& m) {
    double t = 0.0;
    for (int i = 0; i < std::min(m.rows, m.cols); ++i) t += m(i, i);
    return t;
}

// m * v into out (out may not alias v).
inline void mat_vec(const Mat& m, std::span<const double> v, std::span<double> out) {
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) s += m(i, j) * v[static_cast<std::size_t>(j)];
        out[static_cast<std::size_t>(i)] = s;
    }
}

inline double norm2(std::span<const double> v) {
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s);
}

inline double dot(std::span<const double> x, std::span<const double> y) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

// Frobenius inner product of two row-major n*n blocks.
inline double frob(std::span<const double> x, std::span<const double> y) {
    return dot(x, y);
}

// Summation in a fixed binary-tree order: the result depends only on the
// input sequence, never on chunking or worker count.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.first(half)) + pairwise_sum(xs.subspan(half));
}

struct MeanStdErr {
    double mean = 0.0;
    double std_error = 0.0;
};

inline MeanStdErr mean_and_std_error(std::span<const double> xs) {
    if (xs.empty()) return {};
    const double n = static_cast<double>(xs.size());
    MeanStdErr r;
    r.mean = pairwise_sum(xs) / n;
    if (xs.size() >= 2) {
        std::vector<double> dev2(xs.size());
        for (std::size_t i = 0; i < xs.size(); ++i) {
            const double d = xs[i] - r.mean;
            dev2[i] = d * d;
        }
        const double var = pairwise_sum(dev2) / (n - 1.0);
        r.std_error = std::sqrt(std::max(var, 0.0) / n);
    }
    return r;
}

// Splits [0, n) into contiguous chunks; each chunk runs on its own thread.
// Callers write results by index, so output is worker-count independent.
// The first exception thrown by any chunk is rethrown after the join.
inline void parallel_for(std::size_t n, int workers,
                         const std::function<void(std::size_t, std::size_t)>& body) {
    if (n == 0) return;
    if (workers <= 1 || n < 2) {
        body(0, n);
        return;
    }
    const std::size_t w = std::min<std::size_t>(static_cast<std::size_t>(workers), n);
    std::vector<std::thread> pool;
    pool.reserve(w);
    const std::size_t chunk = (n + w - 1) / w;
    std::exception_ptr error;
    std::mutex error_mu;
    for (std::size_t k = 0; k < w; ++k) {
        const std::size_t lo = k * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, &error, &error_mu, lo, hi] {
            try {
                body(lo, hi);
            } catch (...) {
                const std::lock_guard<std::mutex> lock(error_mu);
                if (!error) error = std::current_exception();
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

inline bool nearly_equal(double a, double b, double tol = 1e-9) {
    return std::abs(a - b) <= tol * std::max({1.0, std::abs(a), std::abs(b)});
}

}  // namespace glevy
