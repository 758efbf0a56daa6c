#pragma once

#include "dido/field.hpp"
#include "dido/nn.hpp"
#include "dido/random.hpp"
#include "dido/types.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace testing {

using dido::Matrix;
using dido::Vector;

inline Matrix random_matrix(dido::Rng& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = scale * rng.normal();
        }
    }
    return m;
}

inline Vector random_vector(dido::Rng& rng, Eigen::Index n, double scale = 1.0) {
    Vector v(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        v[i] = scale * rng.normal();
    }
    return v;
}

/// |a - b| / max(|a|, |b|, floor).
inline double relative_error(double a, double b, double floor = 1e-6) {
    return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Standard normal CDF from the Taylor series of erf, in long double.
inline long double series_normal_cdf(long double x) {
    const long double z = x / std::sqrt(2.0L);
    long double term = z;
    long double sum = z;
    for (int n = 1; n < 200; ++n) {
        term *= -z * z / n;
        sum += term / (2 * n + 1);
    }
    const long double erf = 2.0L / std::sqrt(3.14159265358979323846264338327950288L) * sum;
    return 0.5L * (1.0L + erf);
}

/// First radius in (0, r_max] where f(r u) drops below 0.5, refined by bisection;
/// NaN when f(r u) never crosses.
inline double crossing_radius(const dido::ScalarField& f, const Vector& u, double r_max,
                              int scan = 400) {
    Matrix ray(scan + 1, u.size());
    for (int k = 0; k <= scan; ++k) {
        ray.row(k) = (r_max * k / scan) * u.transpose();
    }
    const Vector p = f.values(ray);
    for (int k = 1; k <= scan; ++k) {
        if (p[k - 1] >= 0.5 && p[k] < 0.5) {
            double lo = r_max * (k - 1) / scan, hi = r_max * k / scan;
            for (int it = 0; it < 40; ++it) {
                const double mid = 0.5 * (lo + hi);
                Matrix x = (mid * u).transpose();
                (f.values(x)[0] >= 0.5 ? lo : hi) = mid;
            }
            return 0.5 * (lo + hi);
        }
    }
    return std::nan("");
}

inline Vector random_direction(dido::Rng& rng, Eigen::Index d) {
    Vector u = random_vector(rng, d);
    return u / u.norm();
}

inline std::filesystem::path temp_dir_path(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("dido-test-" + name);
}

inline std::filesystem::path temp_dir(const std::string& name) {
    const auto dir = temp_dir_path(name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace testing
