#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "irestore/tensor.hpp"

namespace irestore {

using DTensor = TensorT<double>;

// One finite-difference check: a set of differentiable inputs and a scalar
// loss built from them on the active graph.
struct GradCase {
    std::string name;
    std::vector<DTensor> inputs;
    std::function<DTensor(const std::vector<DTensor>&)> loss;
};

struct GradReport {
    std::string name;
    double max_rel = 0.0;
    std::int64_t coords = 0;
    bool pass = true;
};

// Central differences with h = 1e-3 scaled by coordinate magnitude, compared
// against one reverse-mode pass in float-64.
GradReport run_gradcheck(const GradCase& c, double tol = 1e-4);

// Seeded instances of every differentiable-op family; `seed` offsets the
// whole suite so independent draws stay reproducible.
std::vector<GradCase> gradcheck_cases(std::uint64_t seed);

std::vector<GradReport> run_gradcheck_suite(std::uint64_t seed, double tol = 1e-4);

}  // namespace irestore
