#pragma once

#include "megenum/types.hpp"

#include <cstdint>
#include <random>

namespace megenum {

/// Stateless 64-bit mixer used to derive per-repetition seeds:
/// seed_rep = hash64(base_seed, rep_index). Based on the splitmix64 finalizer.
std::uint64_t hash64(std::uint64_t base, std::uint64_t index);

/// Seeded generator shared by every stochastic operation.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : engine_(seed) {}

    double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(engine_); }
    double normal() { return normal_(engine_); }
    std::uint64_t below(std::uint64_t n) { return std::uniform_int_distribution<std::uint64_t>(0, n - 1)(engine_); }

    /// Uniform direction on the unit sphere.
    Vec3 unit_vector();

    /// rows x cols matrix of i.i.d. standard normals, filled column-major.
    Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols);

    std::mt19937_64& engine() { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_;
};

}  // namespace megenum
