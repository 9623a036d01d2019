#pragma once

#include "megenum/calibrate.hpp"
#include "megenum/forward.hpp"
#include "megenum/rng.hpp"
#include "megenum/whiten.hpp"

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

namespace megenum {

struct PhantomConfig {
    double shell_radius = 0.054;
    std::vector<double> ring_polar_deg{20.0, 40.0, 60.0, 80.0};
    int dipoles_per_ring = 8;
    double amplitude = 200e-9;  ///< peak dipole moment, A m
    double burst_hz = 20.0;
    double burst_center_ms = 25.0;
    double burst_width_ms = 8.0;
    int trials = 20;
    int baseline_samples = 200;
    int post_samples = 100;
    double sampling_rate_hz = 1000.0;
    std::pair<double, double> delay_range_ms{0.0, 50.0};
    double noise_ar = 0.5;              ///< lag-one coefficient of the sensor noise
    double noise_correlation_length = 0.05;  ///< m, spatial noise kernel width
    double noise_shared_fraction = 0.3;
    double target_snr_db = 5.5;  ///< whitened single-dipole average
    int lpc_order = 6;
    double regularization_fraction = 0.10;
    std::size_t sensor_count = 102;
    double sensor_shell_radius = 0.12;
    std::size_t reconstruction_points = 5000;
    std::uint64_t reconstruction_grid_seed = 2;
    SphereHeadModel head;
};

/// Dipole positions on the phantom shell, ring by ring.
std::vector<Vec3> phantom_dipole_positions(const PhantomConfig& config);

/// Gaussian-windowed sinusoid over the post-stimulus window, unit peak envelope.
Vector phantom_burst(const PhantomConfig& config);

struct PhantomTrials {
    TrialSet trials;
    std::vector<std::size_t> dipoles;
    std::vector<int> delays_samples;
};

struct ProcessedTrials {
    Matrix data;      ///< whitened averaged post-stimulus data
    Matrix baseline;  ///< whitened averaged baseline
    double snr_db = 0.0;
    SpatialWhitener whitener;
};

/// Phantom-style world: switchable dipoles on an interior shell, recorded one
/// at a time and summed with random delays; fits use free orientation on a
/// quasi-random reconstruction grid.
class PhantomWorld : public World {
public:
    explicit PhantomWorld(const PhantomConfig& config);

    /// Uses only `condition.q_true`.
    PreparedTrial prepare(const CellCondition& condition, std::uint64_t seed) const override;

    PhantomTrials record(int q, std::uint64_t seed) const;
    ProcessedTrials process(const TrialSet& trials) const;

    const PhantomConfig& config() const { return config_; }
    const SensorArray& sensors() const { return sensors_; }
    const LeadFieldSet& reconstruction_leadfields() const { return *reconstruction_; }
    double noise_sigma() const { return noise_sigma_; }
    std::size_t dipole_count() const { return clean_.size(); }

private:
    Matrix noise_trial(Rng& rng) const;

    PhantomConfig config_;
    SensorArray sensors_;
    std::vector<Matrix> clean_;  ///< per dipole, M x post_samples
    Matrix noise_mixing_;        ///< lower Cholesky factor of the spatial noise correlation
    double noise_sigma_ = 1e-13;
    std::shared_ptr<const LeadFieldSet> reconstruction_;
};

}  // namespace megenum
