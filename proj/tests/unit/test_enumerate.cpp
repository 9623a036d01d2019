#include "megenum/calibrate.hpp"
#include "megenum/enumerate.hpp"
#include "megenum/simulate.hpp"
#include "support.hpp"

#include <boost/math/quadrature/exp_sinh.hpp>
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

using namespace megenum;
using megenum::testing::small_world;

namespace {

const SphereHeadModel kHead;
constexpr double kInf = std::numeric_limits<double>::infinity();

const SensorArray& sensors() {
    static const SensorArray s = make_hemisphere_sensor_array(102, 0.12, kHead);
    return s;
}

double f_density(double x, double d1, double d2) {
    const double log_beta = std::lgamma(d1 / 2) + std::lgamma(d2 / 2) - std::lgamma((d1 + d2) / 2);
    return std::exp(0.5 * d1 * std::log(d1 / d2) + (0.5 * d1 - 1) * std::log(x) -
                    0.5 * (d1 + d2) * std::log1p(d1 * x / d2) - log_beta);
}

/// Straight evaluation of the criteria, kept deliberately naive.
int brute_force_criterion(const std::vector<double>& lambda, double n, bool mdl) {
    const int m = static_cast<int>(lambda.size());
    int best_k = -1;
    long double best = 0;
    for (int k = 0; k < m; ++k) {
        long double log_sum = 0, sum = 0;
        for (int i = k; i < m; ++i) {
            const long double v = std::max(lambda[i], 1e-300);
            log_sum += std::log(v);
            sum += v;
        }
        const long double p = m - k;
        const long double log_ratio = log_sum / p - std::log(sum / p);
        const long double penalty = static_cast<long double>(k) * (2 * m - k);
        const long double value =
            mdl ? -n * p * log_ratio + 0.5L * penalty * std::log(n) : -2 * n * p * log_ratio + 2 * penalty;
        if (best_k < 0 || value < best) best = value, best_k = k;
    }
    return best_k;
}

Vector to_vector(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

}  // namespace

TEST_CASE("degrees of freedom") {
    CHECK(dof(306, 100, 2, OrientationMode::fixed) == 30394);
    CHECK(dof(306, 100, 2, OrientationMode::free) == 30392);
    CHECK(dof(102, 100, 0, OrientationMode::fixed) == 10200);
    CHECK(dof(102, 100, 0, OrientationMode::free) == 10200);
    CHECK(dof(102, 100, 99, OrientationMode::fixed) == 10200 - 103 * 99);
    CHECK_THROWS_AS(dof(3, 1, 1, OrientationMode::fixed), ModelCapacityError);
    CHECK_THROWS_AS(dof(4, 1, 1, OrientationMode::free), ModelCapacityError);
    CHECK(dof(6, 1, 1, OrientationMode::free) == 1);
}

TEST_CASE("F ratio") {
    CHECK(f_ratio(2, 1, 10, 8).value == doctest::Approx(1.6));
    CHECK(f_ratio(3, 3, 7, 7).value == 1.0);
    const FRatio perfect = f_ratio(1, 0, 10, 8);
    CHECK(perfect.value == kInf);
    CHECK(perfect.perfect_full_fit);
    CHECK(f_ratio(0, 0, 10, 8).value == 0.0);
    const FRatio odd = f_ratio(1, 2, 10, 8);
    CHECK(odd.non_nested);
    CHECK(odd.value == doctest::Approx(0.4));
    for (double alpha : {1e-20, 1e-3, 7.0, 1e15})
        CHECK(f_ratio(alpha * 2.5, alpha * 1.1, 13, 11).value == doctest::Approx(f_ratio(2.5, 1.1, 13, 11).value));
    CHECK_THROWS_AS(f_ratio(-1, 1, 1, 1), InvalidInput);
    CHECK_THROWS_AS(f_ratio(1, 1, 0, 1), InvalidInput);
}

TEST_CASE("nominal F quantiles") {
    CHECK(std::abs(nominal_threshold(1, 1000000, 0.05) - 3.841) <= 0.01);
    for (int d : {1, 4, 30, 1000}) CHECK(nominal_threshold(d, d, 0.5) == doctest::Approx(1.0).epsilon(1e-10));

    const double thr = nominal_threshold(5, 10, 0.05);
    boost::math::quadrature::exp_sinh<double> integrator;
    const double tail = integrator.integrate([](double x) { return f_density(x, 5, 10); }, thr, kInf, 1e-13);
    CHECK(std::abs(tail - 0.05) <= 1e-6);

    // empirical rejection rate of independent chi-square ratios
    std::mt19937_64 engine(17);
    std::chi_squared_distribution<double> c1(5), c2(10);
    int rejected = 0;
    const int draws = 10000;
    for (int i = 0; i < draws; ++i) rejected += (c1(engine) / 5) / (c2(engine) / 10) > thr;
    CHECK(std::abs(rejected / static_cast<double>(draws) - 0.05) <= 0.01);

    CHECK_THROWS_AS(nominal_threshold(5, 10, 0.0), InvalidInput);
    CHECK_THROWS_AS(nominal_threshold(5, 10, 1.0), InvalidInput);
}

TEST_CASE("null residual statistic follows chi-square") {
    const LeadFieldSet lf = small_world(50, 1, true, sensors(), kHead);
    const double mn = 102.0 * 100.0;
    std::vector<double> ss;
    for (std::uint64_t seed = 1; seed <= 200; ++seed) {
        Rng rng(seed);
        const ApProblem p(rng.normal_matrix(102, 100), lf, OrientationMode::fixed);
        ss.push_back(p.fit(0).residual_ss);
    }
    double mean = 0.0;
    for (double v : ss) mean += v;
    mean /= static_cast<double>(ss.size());
    double var = 0.0;
    for (double v : ss) var += (v - mean) * (v - mean);
    var /= static_cast<double>(ss.size() - 1);
    CHECK(std::abs(mean - mn) <= 3 * std::sqrt(2 * mn));
    CHECK(std::abs(var / (2 * mn) - 1.0) <= 0.3);
}

TEST_CASE("sequential procedure") {
    const LeadFieldSet lf = small_world(300, 3, true, sensors(), kHead);

    SUBCASE("noiseless on-grid two-source data") {
        Rng rng(2);
        Matrix t(102, 2);
        t.col(0) = topography(lf, 20, (*lf.grid().fixed_orientations)[20]);
        t.col(1) = topography(lf, 150, (*lf.grid().fixed_orientations)[150]);
        const Matrix y = t * rng.normal_matrix(2, 100) * 1e-8;
        const ThresholdTable table = ThresholdTable::uniform(1.2, kDefaultKMax);
        const EnumerationResult r = sequential_estimate(y, lf, table, 0.0, kDefaultKMax, OrientationMode::fixed);
        CHECK(r.q_hat == 2);
        REQUIRE(r.steps.size() == 3);
        CHECK(std::isfinite(r.steps[0].f.value));
        CHECK(r.steps[0].reject);
        CHECK(r.steps[1].f.value == kInf);
        CHECK(r.steps[1].f.perfect_full_fit);
        CHECK(std::isfinite(r.steps[2].f.value));
        CHECK_FALSE(r.steps[2].reject);
        CHECK_FALSE(r.saturated);
        CHECK(r.snr_bin == 0.0);
    }
    SUBCASE("infinite thresholds never reject") {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(seed);
            Matrix t(102, 1);
            t.col(0) = topography(lf, seed, (*lf.grid().fixed_orientations)[seed]);
            const Matrix y = t * rng.normal_matrix(1, 100) + 1e-3 * t.norm() * rng.normal_matrix(102, 100);
            const ThresholdTable table = ThresholdTable::uniform(kInf, 4);
            CHECK(sequential_estimate(y, lf, table, 3.0, 4, OrientationMode::fixed).q_hat == 0);
        }
    }
    SUBCASE("saturation at k_max") {
        Rng rng(3);
        const Matrix y = rng.normal_matrix(102, 100);
        const ThresholdTable table = ThresholdTable::uniform(1e-9, 3);
        const EnumerationResult r = sequential_estimate(y, lf, table, 0.0, 3, OrientationMode::fixed);
        CHECK(r.q_hat == 3);
        CHECK(r.saturated);
    }
    SUBCASE("missing table coverage is reported") {
        Rng rng(3);
        ThresholdTable table;
        table.set(0.0, 0, 1.1);
        table.set(0.0, 1, 1.1);
        try {
            sequential_estimate(rng.normal_matrix(102, 100), lf, table, 0.4, 3, OrientationMode::fixed);
            FAIL("expected MissingThreshold");
        } catch (const MissingThreshold& e) {
            CHECK(e.k() == 2);
            CHECK(e.snr_bin() == 0.0);
        }
    }
    SUBCASE("raising one threshold never raises the estimate") {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            Rng rng(seed);
            std::vector<std::size_t> idx{rng.below(300), rng.below(300)};
            if (idx[0] == idx[1]) continue;
            Matrix t(102, 2);
            for (int i = 0; i < 2; ++i) t.col(i) = topography(lf, idx[i], (*lf.grid().fixed_orientations)[idx[i]]);
            Matrix y = t * rng.normal_matrix(2, 100);
            y += rng.normal_matrix(102, 100) * (y.norm() / std::sqrt(102.0 * 100.0));
            const std::vector<FStep> steps = f_cascade(ApProblem(y, lf, OrientationMode::fixed), 4);
            std::vector<double> thr(5);
            for (auto& v : thr) v = rng.uniform(1.0, 1.5);
            const int base = decide(steps, [&](int k) { return thr[k]; });
            for (int k = 0; k < 5; ++k) {
                std::vector<double> raised = thr;
                raised[k] *= rng.uniform(1.0, 3.0);
                CHECK(decide(steps, [&](int j) { return raised[j]; }) <= base);
            }
        }
    }
    SUBCASE("nominal thresholds come from the F quantiles of each step") {
        Rng rng(8);
        const EnumerationResult r = nominal_estimate(rng.normal_matrix(102, 100), lf, 0.05, 3, OrientationMode::fixed);
        CHECK(r.method == EnumerationMethod::fratio_nominal);
        for (const FStep& s : r.steps)
            CHECK(s.threshold == nominal_threshold(s.dof_reduced, s.dof_full, 0.05));
    }
}

TEST_CASE("calibrated thresholds keep pure noise at zero sources") {
    WorldConfig cfg;
    cfg.simulation_points = 400;
    cfg.reconstruction_points = 600;
    const SimulationWorld world(cfg, {Vec3::UnitX()});
    CalibrationGrid grid;
    grid.snr_levels_db = {0.0};
    grid.q_levels = {0, 1, 2};
    grid.rho_levels = {0.5};
    grid.model_errors_mm = {Vec3::UnitX()};
    grid.reps = 30;
    grid.base_seed = 77;
    const CalibrationRun run = sweep_thresholds(grid, world);
    const ThresholdTable table = select_optimal(run.curves).extended(kDefaultKMax);

    int zero = 0;
    for (int rep = 0; rep < 100; ++rep) {
        CellCondition c;
        c.q_true = 0;
        c.model_error_mm = Vec3::UnitX();
        const PreparedTrial t = world.prepare(c, hash64(999, static_cast<std::uint64_t>(rep)));
        zero += sequential_estimate(t.data, *t.leadfields, table, t.snr_db, kDefaultKMax, t.mode).q_hat == 0;
    }
    MESSAGE("q_hat = 0 in " << zero << "/100 null datasets");
    CHECK(zero >= 90);
}

TEST_CASE("threshold table") {
    ThresholdTable t;
    t.set(-4.0, 0, 1.3);
    t.set(-4.0, 2, 1.1);
    t.set(4.0, 0, 1.2);
    CHECK(t.bins() == std::vector<double>{-4.0, 4.0});
    CHECK(t.orders(-4.0) == std::vector<int>{0, 2});
    CHECK(t.nearest_bin(0.0) == -4.0);
    CHECK(t.nearest_bin(0.1) == 4.0);
    CHECK(t.nearest_bin(-100.0) == -4.0);
    CHECK(t.lookup(-1.0, 2) == 1.1);
    CHECK_THROWS_AS(t.lookup(-1.0, 1), MissingThreshold);
    CHECK_THROWS_AS(t.lookup(3.0, 2), MissingThreshold);

    const ThresholdTable e = t.extended(4);
    CHECK(e.lookup(-4.0, 1) == 1.3);  // equidistant from 0 and 2: lower order wins
    CHECK(e.lookup(-4.0, 3) == 1.1);
    CHECK(e.lookup(4.0, 3) == 1.2);
    CHECK(std::isnan(e.find(-4.0, 1)->mean_accuracy));

    CHECK_THROWS_AS(t.set(0.0, 0, 0.0), InvalidInput);
    CHECK_THROWS_AS(t.set(0.0, -1, 1.0), InvalidInput);
    CHECK_THROWS_AS(t.set(kInf, 0, 1.0), InvalidInput);
    CHECK_THROWS_AS(ThresholdTable().nearest_bin(0.0), InvalidInput);
    CHECK(ThresholdTable::uniform(1.5, 3, {0.0, 2.0}).entries().size() == 6);
}

TEST_CASE("eigen spectrum") {
    Rng rng(4);
    const Matrix q = Eigen::HouseholderQR<Matrix>(rng.normal_matrix(8, 8)).householderQ();
    const Vector iso = eigen_spectrum(3.0 * q);
    CHECK((iso.array() - iso(0)).abs().maxCoeff() <= 1e-12 * iso(0));

    const Matrix rank1 = rng.normal_matrix(8, 1) * rng.normal_matrix(1, 30);
    const Vector r1 = eigen_spectrum(rank1);
    CHECK(r1(0) > 0.0);
    CHECK(r1.tail(7).maxCoeff() <= 1e-12 * r1(0));

    const Matrix x = rng.normal_matrix(10, 40);
    const Vector s = eigen_spectrum(x);
    CHECK(s.sum() == doctest::Approx(x.squaredNorm() / 40).epsilon(1e-9));
    for (Eigen::Index i = 1; i < s.size(); ++i) CHECK(s(i) <= s(i - 1));
}

TEST_CASE("AIC and MDL") {
    std::vector<double> two(20, 1.0);
    two[0] = two[1] = 10.0;
    CHECK(aic_estimate(to_vector(two), 10000) == 2);
    CHECK(mdl_estimate(to_vector(two), 10000) == 2);

    const std::vector<double> flat(15, 2.5);
    CHECK(aic_estimate(to_vector(flat), 100) == 0);
    CHECK(mdl_estimate(to_vector(flat), 100) == 0);

    std::vector<double> one(12, 1.0);
    one[0] = 50.0;
    CHECK(aic_estimate(to_vector(one), 100000) == 1);
    CHECK(mdl_estimate(to_vector(one), 100000) == 1);

    std::vector<double> zeros{3.0, 1.0, 0.0, 0.0};
    CHECK_NOTHROW(aic_estimate(to_vector(zeros), 50));

    CHECK_THROWS_AS(aic_estimate(Vector::Zero(4), 10), InvalidInput);
    CHECK_THROWS_AS(mdl_estimate(to_vector({1.0, 2.0}), 10), InvalidInput);
    CHECK_THROWS_AS(mdl_estimate(to_vector({2.0, 1.0}), 1), InvalidInput);

    Rng rng(6);
    int aic_agree = 0, mdl_agree = 0, ordered = 0;
    const int spectra = 1000;
    for (int s = 0; s < spectra; ++s) {
        const int m = 3 + static_cast<int>(rng.below(30));
        const int signals = static_cast<int>(rng.below(static_cast<std::uint64_t>(m)));
        std::vector<double> lambda(m);
        for (int i = 0; i < m; ++i)
            lambda[i] = (i < signals ? std::exp(rng.uniform(0.0, 3.0)) : 0.0) + std::exp(rng.uniform(-0.5, 0.5));
        std::sort(lambda.rbegin(), lambda.rend());
        const int n = 8 + static_cast<int>(rng.below(2000));
        const Vector v = to_vector(lambda);
        const int aic = aic_estimate(v, n), mdl = mdl_estimate(v, n);
        aic_agree += aic == brute_force_criterion(lambda, n, false);
        mdl_agree += mdl == brute_force_criterion(lambda, n, true);
        ordered += mdl <= aic;
    }
    CHECK(aic_agree == spectra);
    CHECK(mdl_agree == spectra);
    CHECK(ordered == spectra);
}
