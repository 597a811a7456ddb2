#pragma once

#include <stdexcept>
#include <string>

namespace driftlab {

// Numerical failure of a factorization / near-singular system beyond the
// ridge tolerance. CLI maps this to exit code 3.
class numerical_degeneracy : public std::runtime_error {
public:
    explicit numerical_degeneracy(const std::string& what) : std::runtime_error(what) {}
};

// Expansion spec outside the exact-Gaussian engine's domain.
class unsupported_spec : public std::runtime_error {
public:
    explicit unsupported_spec(const std::string& what) : std::runtime_error(what) {}
};

// Density input failing positivity/normalization checks.
class invalid_density : public std::invalid_argument {
public:
    explicit invalid_density(const std::string& what) : std::invalid_argument(what) {}
};

// Configuration file / CLI schema violation. CLI maps this to exit code 2.
class config_error : public std::runtime_error {
public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace driftlab
