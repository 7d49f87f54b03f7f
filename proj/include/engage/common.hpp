#ifndef ENGAGE_COMMON_HPP
#define ENGAGE_COMMON_HPP

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <exception>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

/**
 * @file common.hpp
 *
 * @brief Shared types: the error class, a dense row-major matrix and a small parallel loop.
 */

namespace engage {

/**
 * Base exception for every recoverable failure raised by the library.
 * Callers that need to distinguish failure classes catch the subclasses.
 */
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/**
 * Which engager cohort a user (and by extension a document) belongs to.
 */
enum class Group : std::uint8_t { early = 0, late = 1 };

inline const char* group_name(Group g) { return g == Group::early ? "E" : "L"; }

/**
 * Dense row-major matrix of doubles. Rows are observations.
 */
struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

    double& operator()(std::size_t i, std::size_t j) { return values[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return values[i * cols + j]; }

    std::span<double> row(std::size_t i) { return {values.data() + i * cols, cols}; }
    std::span<const double> row(std::size_t i) const { return {values.data() + i * cols, cols}; }

    bool operator==(const Matrix&) const = default;
};

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
    double out = 0;
    for (std::size_t k = 0; k < a.size(); ++k) {
        const double d = a[k] - b[k];
        out += d * d;
    }
    return out;
}

inline double euclidean(std::span<const double> a, std::span<const double> b) {
    return std::sqrt(squared_distance(a, b));
}

inline std::size_t default_threads() {
    const auto hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

/**
 * Runs `fn(i)` for every `i` in `[0, n)`, spread over up to `threads` workers.
 * Work is claimed through an atomic counter, so `fn` must only touch per-index state.
 * The first exception thrown by any worker is rethrown on the calling thread.
 */
template <class Fn>
void parallel_for(std::size_t n, Fn&& fn, std::size_t threads = 0) {
    if (threads == 0) {
        threads = default_threads();
    }
    threads = std::min(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) {
            fn(i);
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::atomic<bool> failed{false};
    std::vector<std::thread> workers;
    workers.reserve(threads);
    for (std::size_t t = 0; t < threads; ++t) {
        workers.emplace_back([&]() {
            try {
                for (std::size_t i = next++; i < n && !failed; i = next++) {
                    fn(i);
                }
            } catch (...) {
                if (!failed.exchange(true)) {
                    failure = std::current_exception();
                }
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

}  // namespace engage

#endif
