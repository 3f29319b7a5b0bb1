#pragma once

// Shared helpers for the unit and acceptance tests: seeded generators and a
// central finite-difference gradient checker.

#include "fairflow/matrix.hpp"
#include "fairflow/nn/graph.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

namespace fairflow::testing {

inline Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    Matrix m(r, c);
    for (double& x : m.data()) x = n(rng);
    return m;
}

inline std::vector<double> random_vector(std::size_t d, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n(0.0, scale);
    std::vector<double> v(d);
    for (double& x : v) x = n(rng);
    return v;
}

struct GradCheckResult {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
};

// Compares analytic gradients (from one backward pass of `loss`) against
// central differences for every entry of every parameter. Relative error uses
// max(|a|, |n|, floor) in the denominator.
inline GradCheckResult check_gradients(const std::vector<nn::Parameter*>& params,
                                       const std::function<nn::Var(nn::Graph&)>& loss,
                                       double eps = 1e-5, double floor = 1e-6) {
    for (auto* p : params) p->zero_grad();
    {
        nn::Graph g;
        g.backward(loss(g));
    }
    auto eval = [&] {
        nn::Graph g(false);
        return g.value(loss(g))(0, 0);
    };
    GradCheckResult res;
    for (auto* p : params) {
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            double& w = p->value.data()[i];
            const double saved = w;
            w = saved + eps;
            const double up = eval();
            w = saved - eps;
            const double down = eval();
            w = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double analytic = p->grad.data()[i];
            const double denom = std::max({std::abs(numeric), std::abs(analytic), floor});
            // Entries where both sides are tiny carry no signal beyond rounding noise.
            const bool negligible = std::max(std::abs(numeric), std::abs(analytic)) < 1e-7;
            const double rel = negligible ? 0.0 : std::abs(numeric - analytic) / denom;
            res.max_rel_error = std::max(res.max_rel_error, rel);
            ++res.checked;
        }
    }
    return res;
}

// Held-out accuracy of a logistic-regression probe fitted by full-batch
// gradient descent on (x_train, y_train).
inline double linear_probe_accuracy(const std::vector<std::vector<double>>& x_train, const std::vector<int>& y_train,
                                    const std::vector<std::vector<double>>& x_test, const std::vector<int>& y_test,
                                    std::size_t iterations = 2000, double step = 0.5) {
    const std::size_t d = x_train.front().size();
    std::vector<double> w(d, 0.0);
    double b = 0.0;
    const double n = static_cast<double>(x_train.size());
    for (std::size_t it = 0; it < iterations; ++it) {
        std::vector<double> gw(d, 0.0);
        double gb = 0.0;
        for (std::size_t i = 0; i < x_train.size(); ++i) {
            double s = b;
            for (std::size_t j = 0; j < d; ++j) s += w[j] * x_train[i][j];
            const double e = 1.0 / (1.0 + std::exp(-s)) - y_train[i];
            for (std::size_t j = 0; j < d; ++j) gw[j] += e * x_train[i][j];
            gb += e;
        }
        for (std::size_t j = 0; j < d; ++j) w[j] -= step * gw[j] / n;
        b -= step * gb / n;
    }
    std::size_t correct = 0;
    for (std::size_t i = 0; i < x_test.size(); ++i) {
        double s = b;
        for (std::size_t j = 0; j < d; ++j) s += w[j] * x_test[i][j];
        correct += (s > 0.0) == (y_test[i] == 1);
    }
    return static_cast<double>(correct) / static_cast<double>(x_test.size());
}

// log|det| of a square matrix by partial-pivot Gaussian elimination.
inline double log_abs_det(std::vector<std::vector<double>> m) {
    const std::size_t n = m.size();
    double acc = 0.0;
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r) {
            if (std::abs(m[r][c]) > std::abs(m[piv][c])) piv = r;
        }
        std::swap(m[c], m[piv]);
        acc += std::log(std::abs(m[c][c]));
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = m[r][c] / m[c][c];
            for (std::size_t k = c; k < n; ++k) m[r][k] -= f * m[c][k];
        }
    }
    return acc;
}

inline std::filesystem::path temp_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("fairflow-test-" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

}  // namespace fairflow::testing
