#include "megenum/simulate.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <complex>
#include <numbers>

using namespace megenum;

TEST_CASE("waveforms are standardized, seeded and band limited") {
    const Matrix w = gen_waveforms(4, 100, {10.0, 30.0}, 1000.0, 7);
    REQUIRE(w.rows() == 4);
    REQUIRE(w.cols() == 100);
    for (int i = 0; i < 4; ++i) {
        const double mean = w.row(i).mean();
        const double var = (w.row(i).array() - mean).square().sum() / 99.0;
        CHECK(std::abs(mean) <= 1e-12);
        CHECK(std::abs(var - 1.0) <= 1e-12);
    }
    CHECK(gen_waveforms(4, 100, {10.0, 30.0}, 1000.0, 7) == w);
    CHECK(gen_waveforms(4, 100, {10.0, 30.0}, 1000.0, 8) != w);

    // spectral peak on a fine DFT grid lies inside the band
    const Matrix long_w = gen_waveforms(3, 1000, {10.0, 30.0}, 1000.0, 99);
    for (int i = 0; i < 3; ++i) {
        double best = 0.0, best_f = 0.0;
        for (double f = 0.5; f < 500.0; f += 0.5) {
            std::complex<double> acc = 0.0;
            for (int t = 0; t < 1000; ++t)
                acc += long_w(i, t) * std::exp(std::complex<double>(0, -2 * std::numbers::pi * f * t / 1000.0));
            if (std::abs(acc) > best) best = std::abs(acc), best_f = f;
        }
        CHECK(best_f >= 10.0 - 1.0);
        CHECK(best_f <= 30.0 + 1.0);
    }

    CHECK_THROWS_AS(gen_waveforms(2, 100, {10.0, 600.0}, 1000.0, 1), InvalidInput);
    CHECK_THROWS_AS(gen_waveforms(0, 100, {10.0, 30.0}, 1000.0, 1), InvalidInput);
}

TEST_CASE("correlation imposition") {
    const Matrix w = gen_waveforms(3, 100, {10.0, 30.0}, 1000.0, 3);

    SUBCASE("identity target decorrelates exactly") {
        const Matrix out = apply_correlation(w, Matrix::Identity(3, 3));
        CHECK((sample_correlation(out) - Matrix::Identity(3, 3)).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("compound symmetric 0.9") {
        const Matrix target = compound_symmetric(3, 0.9);
        CHECK((sample_correlation(apply_correlation(w, target)) - target).cwiseAbs().maxCoeff() <= 1e-10);
    }
    SUBCASE("non positive definite target names the failing minor") {
        Matrix bad(3, 3);
        bad << 1, 0.9, 0.9, 0.9, 1, -0.9, 0.9, -0.9, 1;
        try {
            apply_correlation(w, bad);
            FAIL("expected FactorizationError");
        } catch (const FactorizationError& e) {
            CHECK(e.leading_minor() == 3);
        }
        CHECK_THROWS_AS(apply_correlation(w, compound_symmetric(3, 1.5)), FactorizationError);
    }
    SUBCASE("fidelity over many seeds") {
        const Matrix target = compound_symmetric(4, 0.5);
        double worst = 0.0;
        for (std::uint64_t seed = 1; seed <= 100; ++seed) {
            const Matrix x = gen_waveforms(4, 100, {10.0, 30.0}, 1000.0, seed);
            worst = std::max(worst, (sample_correlation(apply_correlation(x, target)) - target).cwiseAbs().maxCoeff());
        }
        CHECK(worst <= 1e-9);
    }
}

TEST_CASE("clean data rank equals the number of sources") {
    const SphereHeadModel head;
    const SensorArray sensors = make_hemisphere_sensor_array(102, 0.12, head);
    const LeadFieldSet lf = megenum::testing::small_world(500, 1, true, sensors, head);
    for (int q : {1, 2, 3, 5}) {
        ScenarioSpec spec;
        spec.q_true = q;
        spec.rho = 0.5;
        spec.snr_db = kNoiselessSnr;
        spec.seed = 40 + q;
        const ScenarioResult r = run_scenario(spec, lf, head);
        Eigen::JacobiSVD<Matrix> svd(r.measurement.data);
        const Vector s = svd.singularValues();
        int rank = 0;
        for (Eigen::Index i = 0; i < s.size(); ++i) rank += s(i) > 1e-9 * s(0);
        CHECK(rank == q);
    }
}

TEST_CASE("noise is scaled to the requested SNR") {
    Rng rng(4);
    const Matrix clean = rng.normal_matrix(20, 50) * 1e-12;
    for (double snr : {-8.0, 0.0, 8.0}) {
        const MeasurementSet m = add_noise_at_snr(clean, snr, 9);
        CHECK(std::abs(frobenius_snr_db(clean, m.data - clean) - snr) <= 1e-9);
        CHECK(m.clean.has_value());
    }
    const MeasurementSet zero = add_noise_at_snr(clean, 0.0, 9);
    CHECK(std::abs((zero.data - clean).norm() - clean.norm()) <= 1e-9 * clean.norm());
    const MeasurementSet inf = add_noise_at_snr(clean, kNoiselessSnr, 9);
    CHECK(inf.data == clean);
    CHECK(add_noise_at_snr(clean, 3.0, 9).data == add_noise_at_snr(clean, 3.0, 9).data);
    CHECK_THROWS_AS(add_noise_at_snr(Matrix::Zero(3, 3), 0.0, 1), InvalidInput);
}

TEST_CASE("superposition of delayed datasets") {
    Rng rng(6);
    MeasurementSet a;
    a.data = rng.normal_matrix(4, 60);
    a.clean = a.data;

    SUBCASE("zero delay on one dataset is the identity") {
        const SuperposedMeasurement s = phantom_superpose({a}, {0.0, 0.0}, 1);
        CHECK(s.measurement.data == a.data);
    }
    SUBCASE("the same dataset twice with zero delay doubles it") {
        const SuperposedMeasurement s = phantom_superpose({a, a}, {0.0, 0.0}, 1);
        CHECK(s.measurement.data == 2 * a.data);
    }
    SUBCASE("relative delay is reproduced exactly") {
        // find a seed whose two delays differ by 29 samples
        std::uint64_t seed = 0;
        for (std::uint64_t s = 1; s < 100000; ++s) {
            const auto d = draw_delays(2, {0.0, 50.0}, 1000.0, s);
            if (d[1] - d[0] == 29) {
                seed = s;
                break;
            }
        }
        REQUIRE(seed != 0);
        MeasurementSet zero;
        zero.data = Matrix::Zero(4, 60);
        const SuperposedMeasurement s = phantom_superpose({a, zero}, {0.0, 50.0}, seed);
        const SuperposedMeasurement t = phantom_superpose({zero, a}, {0.0, 50.0}, seed);
        CHECK(t.measurement.data == circular_shift(s.measurement.data, 29));
        CHECK(s.delays_samples == draw_delays(2, {0.0, 50.0}, 1000.0, seed));
    }
    SUBCASE("shift composition") {
        CHECK(circular_shift(circular_shift(a.data, 13), 47) == a.data);
        CHECK(circular_shift(a.data, 0) == a.data);
    }
    CHECK_THROWS_AS(phantom_superpose({}, {0.0, 10.0}, 1), InvalidInput);
}

TEST_CASE("scenario runner") {
    const SphereHeadModel head;
    const SensorArray sensors = make_hemisphere_sensor_array(102, 0.12, head);
    const LeadFieldSet lf = megenum::testing::small_world(500, 1, true, sensors, head);

    SUBCASE("no sources yields pure noise") {
        ScenarioSpec spec;
        spec.q_true = 0;
        const ScenarioResult r = run_scenario(spec, lf, head);
        CHECK(r.truth.point_indices.empty());
        CHECK(r.measurement.clean->norm() == 0.0);
        CHECK(r.measurement.data.norm() > 0.0);
    }
    SUBCASE("deterministic in the seed") {
        ScenarioSpec spec;
        spec.q_true = 3;
        spec.rho = 0.5;
        spec.seed = 12;
        const ScenarioResult a = run_scenario(spec, lf, head);
        const ScenarioResult b = run_scenario(spec, lf, head);
        CHECK(a.measurement.data == b.measurement.data);
        CHECK(a.truth.point_indices == b.truth.point_indices);
        spec.seed = 13;
        CHECK(run_scenario(spec, lf, head).measurement.data != a.measurement.data);
    }
    SUBCASE("realized correlation and SNR") {
        ScenarioSpec spec;
        spec.q_true = 3;
        spec.rho = 0.5;
        spec.snr_db = 4.0;
        spec.seed = 5;
        const ScenarioResult r = run_scenario(spec, lf, head);
        const Matrix c = sample_correlation(r.truth.waveforms);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j)
                if (i != j) CHECK(std::abs(c(i, j) - 0.5) <= 0.1);
        CHECK(std::abs(frobenius_snr_db(*r.measurement.clean, r.measurement.data - *r.measurement.clean) - 4.0) <=
              1e-9);
        for (std::size_t i = 0; i < 3; ++i)
            CHECK((r.truth.orientations[i] - (*lf.grid().fixed_orientations)[r.truth.point_indices[i]]).norm() == 0.0);
    }
    SUBCASE("source count must stay below the sensor count") {
        ScenarioSpec spec;
        spec.q_true = 102;
        try {
            run_scenario(spec, lf, head);
            FAIL("expected InvalidInput");
        } catch (const InvalidInput& e) {
            CHECK(std::string(e.what()).find("Q < M") != std::string::npos);
        }
    }
}
