#include "megenum/localize.hpp"
#include "megenum/simulate.hpp"
#include "support.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>

using namespace megenum;
using megenum::testing::small_world;

namespace {

const SphereHeadModel kHead;

const SensorArray& sensors() {
    static const SensorArray s = make_hemisphere_sensor_array(102, 0.12, kHead);
    return s;
}

Matrix fixed_topos(const LeadFieldSet& lf, const std::vector<std::size_t>& idx) {
    Matrix t(lf.sensor_count(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t i = 0; i < idx.size(); ++i)
        t.col(static_cast<Eigen::Index>(i)) = topography(lf, idx[i], (*lf.grid().fixed_orientations)[idx[i]]);
    return t;
}

Matrix source_data(const LeadFieldSet& lf, const std::vector<std::size_t>& idx, Rng& rng, int n = 100) {
    return fixed_topos(lf, idx) * rng.normal_matrix(static_cast<Eigen::Index>(idx.size()), n) * 1e-8;
}

}  // namespace

TEST_CASE("subspace fit") {
    Rng rng(1);
    const Matrix y = rng.normal_matrix(10, 20);
    SUBCASE("no topographies leaves the total energy") {
        const SubspaceFit f = subspace_fit(y, Matrix(10, 0));
        CHECK(f.residual_ss == y.squaredNorm());
        CHECK(f.amplitudes.rows() == 0);
    }
    SUBCASE("data in the span fits exactly") {
        const Matrix t = rng.normal_matrix(10, 3);
        const Matrix a = rng.normal_matrix(3, 20);
        const SubspaceFit f = subspace_fit(t * a, t);
        CHECK(f.residual_ss <= 1e-24 * (t * a).squaredNorm());
        CHECK((f.amplitudes - a).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("residual equals the orthogonal projection") {
        const Matrix t = rng.normal_matrix(10, 4);
        const Matrix p = Matrix::Identity(10, 10) - t * (t.transpose() * t).inverse() * t.transpose();
        CHECK(subspace_fit(y, t).residual_ss == doctest::Approx((p * y).squaredNorm()).epsilon(1e-10));
    }
    SUBCASE("collinear topographies are rejected") {
        Matrix t = rng.normal_matrix(10, 3);
        t.col(2) = 2.0 * t.col(0);
        CHECK_THROWS_AS(subspace_fit(y, t), DegenerateModel);
        CHECK_THROWS_AS(subspace_fit(y, rng.normal_matrix(9, 2)), InvalidInput);
    }
}

TEST_CASE("optimal orientation") {
    Rng rng(2);
    const LeadFieldSet lf = small_world(20, 3, false, sensors(), kHead);

    SUBCASE("recovers a planted orientation") {
        for (std::size_t p = 0; p < 20; ++p) {
            const Vec3 radial = lf.grid().points[p].normalized();
            const Vec3 o = megenum::testing::tangential(lf.grid().points[p], kHead, rng);
            const Matrix y = topography(lf, p, o) * rng.normal_matrix(1, 50);
            const OrientationFit f = best_orientation(y, lf.gain(p), Matrix());
            // the radial part is invisible, so compare after removing it
            const Vec3 got = (f.orientation - f.orientation.dot(radial) * radial).normalized();
            CHECK(std::abs(std::abs(got.dot(o)) - 1.0) <= 1e-8);
            CHECK(f.fit_value == doctest::Approx(y.squaredNorm()).epsilon(1e-9));
            CHECK_FALSE(f.silent);
        }
    }
    SUBCASE("beats a dense brute-force search") {
        const Matrix y = rng.normal_matrix(102, 30);
        for (std::size_t p = 0; p < 5; ++p) {
            const Eigen::Matrix<double, Eigen::Dynamic, 3> g = lf.gain(p);
            const OrientationFit f = best_orientation(y, g, Matrix());
            double brute = 0.0;
            for (int i = 0; i < 10000; ++i) {
                const Vector t = g * rng.unit_vector();
                brute = std::max(brute, (t.transpose() * y).squaredNorm() / t.squaredNorm());
            }
            CHECK(f.fit_value >= brute * (1 - 1e-12));
            CHECK(f.fit_value <= brute * 1.01);
        }
    }
    SUBCASE("silent gain") {
        const Matrix y = rng.normal_matrix(102, 10);
        const Eigen::Matrix<double, Eigen::Dynamic, 3> zero = Eigen::Matrix<double, Eigen::Dynamic, 3>::Zero(102, 3);
        CHECK(best_orientation(y, zero, Matrix()).silent);
    }
    SUBCASE("generalized Rayleigh quotient on a rank-two denominator") {
        Eigen::Matrix3d a = Eigen::Matrix3d::Zero(), b = Eigen::Matrix3d::Zero();
        a.diagonal() << 1.0, 5.0, 100.0;
        b.diagonal() << 1.0, 1.0, 0.0;
        const OrientationFit f = max_generalized_rayleigh(a, b);
        CHECK(f.fit_value == doctest::Approx(5.0));
        CHECK(std::abs(f.orientation.y()) == doctest::Approx(1.0));
    }
}

TEST_CASE("alternating projection basics") {
    Rng rng(4);
    const LeadFieldSet lf = small_world(300, 5, true, sensors(), kHead);

    SUBCASE("order zero") {
        const Matrix y = rng.normal_matrix(102, 20);
        const DipoleFit f = ap_localize(y, lf, 0, OrientationMode::fixed);
        CHECK(f.point_indices.empty());
        CHECK(f.residual_ss == y.squaredNorm());
    }
    SUBCASE("a single on-grid dipole is found exactly") {
        for (std::size_t p : {0u, 17u, 123u, 299u}) {
            const Matrix y = source_data(lf, {p}, rng);
            const DipoleFit f = ap_localize(y, lf, 1, OrientationMode::fixed);
            CHECK(f.point_indices == std::vector<std::size_t>{p});
            CHECK(f.residual_ss <= 1e-20 * y.squaredNorm());
        }
    }
    SUBCASE("two on-grid dipoles") {
        const Matrix y = source_data(lf, {10, 200}, rng);
        DipoleFit f = ap_localize(y, lf, 2, OrientationMode::fixed);
        std::sort(f.point_indices.begin(), f.point_indices.end());
        CHECK(f.point_indices == std::vector<std::size_t>{10, 200});
        CHECK(f.residual_ss <= 1e-20 * y.squaredNorm());
    }
    SUBCASE("free orientation recovers a planted dipole") {
        const LeadFieldSet free_lf = small_world(300, 5, false, sensors(), kHead);
        const Vec3 o = megenum::testing::tangential(free_lf.grid().points[42], kHead, rng);
        const Matrix y = topography(free_lf, 42, o) * rng.normal_matrix(1, 40);
        const DipoleFit f = ap_localize(y, free_lf, 1, OrientationMode::free);
        CHECK(f.point_indices == std::vector<std::size_t>{42});
        CHECK(f.residual_ss <= 1e-18 * y.squaredNorm());
    }
    SUBCASE("argument checks") {
        const Matrix y = rng.normal_matrix(102, 20);
        CHECK_THROWS_AS(ap_localize(y, lf, 102, OrientationMode::fixed), InvalidInput);
        CHECK_THROWS_AS(ap_localize(y.topRows(50), lf, 1, OrientationMode::fixed), InvalidInput);
        const LeadFieldSet free_lf = small_world(10, 5, false, sensors(), kHead);
        CHECK_THROWS_AS(ap_localize(y, free_lf, 1, OrientationMode::fixed), InvalidInput);
    }
}

TEST_CASE("two-source fits reach the exhaustive optimum") {
    const LeadFieldSet lf = small_world(50, 7, true, sensors(), kHead);
    int hits = 0;
    const int trials = 100;
    for (int t = 0; t < trials; ++t) {
        Rng rng(1000 + t);
        const std::size_t a = rng.below(50);
        std::size_t b = rng.below(49);
        if (b >= a) ++b;
        Matrix y = source_data(lf, {a, b}, rng);
        y += rng.normal_matrix(102, 100) * (0.5 * y.norm() / std::sqrt(102.0 * 100.0));

        double best = std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < 50; ++i)
            for (std::size_t j = i + 1; j < 50; ++j) {
                try {
                    best = std::min(best, subspace_fit(y, fixed_topos(lf, {i, j})).residual_ss);
                } catch (const DegenerateModel&) {
                }
            }
        const DipoleFit f = ap_localize(y, lf, 2, OrientationMode::fixed);
        hits += f.residual_ss <= best * (1 + 1e-9);
    }
    MESSAGE("exhaustive optimum reached in " << hits << "/" << trials);
    CHECK(hits >= 95);
}

TEST_CASE("refinement never lowers the explained energy") {
    const LeadFieldSet lf = small_world(400, 9, true, sensors(), kHead);
    int non_monotone = 0;
    for (int t = 0; t < 100; ++t) {
        Rng rng(500 + t);
        std::vector<std::size_t> idx;
        while (idx.size() < 4) {
            const std::size_t p = rng.below(400);
            if (std::find(idx.begin(), idx.end(), p) == idx.end()) idx.push_back(p);
        }
        Matrix y = source_data(lf, idx, rng);
        y += rng.normal_matrix(102, 100) * (y.norm() / std::sqrt(102.0 * 100.0));
        const DipoleFit f = ap_localize(y, lf, 4, OrientationMode::fixed);
        for (std::size_t i = 1; i < f.objective_trace.size(); ++i)
            non_monotone += f.objective_trace[i] < f.objective_trace[i - 1] * (1 - 1e-9);
        CHECK(std::find(f.flags.begin(), f.flags.end(), "non_monotone_pass") == f.flags.end());
        CHECK(f.passes_used <= 10);
    }
    CHECK(non_monotone == 0);
}

TEST_CASE("fits are scale equivariant and phase one is nested") {
    const LeadFieldSet lf = small_world(300, 11, true, sensors(), kHead);
    Rng rng(12);
    Matrix y = source_data(lf, {3, 90, 250}, rng);
    y += rng.normal_matrix(102, 100) * (0.3 * y.norm() / std::sqrt(102.0 * 100.0));

    const DipoleFit a = ap_localize(y, lf, 3, OrientationMode::fixed);
    const DipoleFit b = ap_localize(1e3 * y, lf, 3, OrientationMode::fixed);
    CHECK(a.point_indices == b.point_indices);
    CHECK(b.residual_ss == doctest::Approx(1e6 * a.residual_ss).epsilon(1e-9));

    const ApProblem problem(y, lf, OrientationMode::fixed);
    ApOptions greedy;
    greedy.max_passes = 0;
    std::vector<std::size_t> prev;
    for (int k = 1; k <= 5; ++k) {
        const DipoleFit f = problem.fit(k, greedy);
        CHECK(f.passes_used == 0);
        CHECK(std::equal(prev.begin(), prev.end(), f.point_indices.begin()));
        prev = f.point_indices;
    }
}
