#include "megenum/rng.hpp"

namespace megenum {

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}
}  // namespace

std::uint64_t hash64(std::uint64_t base, std::uint64_t index) {
    return splitmix64(splitmix64(base) ^ (index * 0xD1B54A32D192ED03ULL + 0x8CB92BA72F3D8DD7ULL));
}

Vec3 Rng::unit_vector() {
    for (;;) {
        Vec3 v(normal(), normal(), normal());
        const double n = v.norm();
        if (n > 1e-12) return v / n;
    }
}

Matrix Rng::normal_matrix(Eigen::Index rows, Eigen::Index cols) {
    Matrix out(rows, cols);
    double* p = out.data();
    for (Eigen::Index i = 0; i < out.size(); ++i) p[i] = normal();
    return out;
}

}  // namespace megenum
