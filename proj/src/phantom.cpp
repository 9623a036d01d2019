#include "megenum/phantom.hpp"

#include "megenum/simulate.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace megenum {

namespace {

enum Stream : std::uint64_t { kChoose = 11, kDelay = 12, kNoise = 13 };

constexpr std::uint64_t kPilotSeed = 0x5eed;

}  // namespace

std::vector<Vec3> phantom_dipole_positions(const PhantomConfig& config) {
    std::vector<Vec3> out;
    const double pi = std::numbers::pi;
    for (std::size_t ring = 0; ring < config.ring_polar_deg.size(); ++ring) {
        const double theta = config.ring_polar_deg[ring] * pi / 180.0;
        for (int j = 0; j < config.dipoles_per_ring; ++j) {
            // stagger rings so neighbouring rings do not share azimuths
            const double phi = 2.0 * pi * (j + 0.5 * static_cast<double>(ring % 2)) / config.dipoles_per_ring;
            out.push_back(config.head.center + config.shell_radius * Vec3(std::sin(theta) * std::cos(phi),
                                                                          std::sin(theta) * std::sin(phi),
                                                                          std::cos(theta)));
        }
    }
    return out;
}

Vector phantom_burst(const PhantomConfig& config) {
    Vector s(config.post_samples);
    const double sigma = config.burst_width_ms * 1e-3;
    const double center = config.burst_center_ms * 1e-3;
    for (int i = 0; i < config.post_samples; ++i) {
        const double t = i / config.sampling_rate_hz - center;
        s(i) = std::sin(2.0 * std::numbers::pi * config.burst_hz * t) * std::exp(-0.5 * t * t / (sigma * sigma));
    }
    return s;
}

PhantomWorld::PhantomWorld(const PhantomConfig& config) : config_(config) {
    if (config.trials < 1 || config.post_samples < 2) throw InvalidInput("phantom needs trials and post samples");
    if (config.baseline_samples <= 10 * config.lpc_order)
        throw InvalidInput("phantom baseline too short for the LPC order");
    if (!(std::abs(config.noise_ar) < 1.0)) throw InvalidInput("noise AR coefficient must lie in (-1, 1)");

    sensors_ = make_hemisphere_sensor_array(config.sensor_count, config.sensor_shell_radius, config.head);
    const Vector burst = phantom_burst(config);
    for (const Vec3& p : phantom_dipole_positions(config)) {
        const Vec3 rel = p - config.head.center;
        const double theta = std::acos(rel.z() / rel.norm());
        const double phi = std::atan2(rel.y(), rel.x());
        const Vec3 theta_hat(std::cos(theta) * std::cos(phi), std::cos(theta) * std::sin(phi), -std::sin(theta));
        Vector topo(static_cast<Eigen::Index>(sensors_.size()));
        for (std::size_t s = 0; s < sensors_.size(); ++s)
            topo(static_cast<Eigen::Index>(s)) = sphere_dipole_field(p, config.amplitude * theta_hat, sensors_.positions[s],
                                                                      sensors_.orientations[s], config.head);
        clean_.push_back(topo * burst.transpose());
    }

    const auto m = static_cast<Eigen::Index>(sensors_.size());
    Matrix corr(m, m);
    const double l2 = config.noise_correlation_length * config.noise_correlation_length;
    for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = 0; j < m; ++j) {
            const double d2 = (sensors_.positions[i] - sensors_.positions[j]).squaredNorm();
            corr(i, j) = config.noise_shared_fraction * std::exp(-0.5 * d2 / l2) +
                         (i == j ? 1.0 - config.noise_shared_fraction : 0.0);
        }
    noise_mixing_ = Eigen::LLT<Matrix>(corr).matrixL();

    GridSpec spec;
    spec.count = config.reconstruction_points;
    spec.stream_seed = config.reconstruction_grid_seed;
    auto grid = std::make_shared<const SourceGrid>(make_shell_grid(spec, config.head));
    reconstruction_ = std::make_shared<const LeadFieldSet>(build_lead_fields(grid, sensors_, config.head));

    // Scale the noise so a single averaged, whitened dipole sits at the target SNR.
    // The estimate is not exactly log-linear in sigma, so iterate a few times.
    for (int iter = 0; iter < 4; ++iter) {
        double mean_db = 0.0;
        for (std::size_t d = 0; d < clean_.size(); ++d) {
            TrialSet set;
            set.baseline_samples = config.baseline_samples;
            Rng rng(hash64(kPilotSeed, d));
            for (int t = 0; t < config.trials; ++t) {
                Matrix trial = noise_trial(rng);
                trial.rightCols(config.post_samples) += clean_[d];
                set.trials.push_back(std::move(trial));
            }
            mean_db += process(set).snr_db;
        }
        mean_db /= static_cast<double>(clean_.size());
        noise_sigma_ *= std::pow(10.0, (mean_db - config.target_snr_db) / 20.0);
    }
}

Matrix PhantomWorld::noise_trial(Rng& rng) const {
    const auto m = static_cast<Eigen::Index>(sensors_.size());
    const int total = config_.baseline_samples + config_.post_samples;
    const double a = config_.noise_ar;
    const double innovation = std::sqrt(1.0 - a * a);  // unit marginal variance
    Matrix white = rng.normal_matrix(m, total);
    for (int t = 1; t < total; ++t) white.col(t) = a * white.col(t - 1) + innovation * white.col(t);
    return noise_sigma_ * (noise_mixing_ * white);
}

PhantomTrials PhantomWorld::record(int q, std::uint64_t seed) const {
    if (q < 0 || static_cast<std::size_t>(q) > clean_.size())
        throw InvalidInput("phantom has " + std::to_string(clean_.size()) + " dipoles; requested " + std::to_string(q));
    PhantomTrials out;
    out.trials.baseline_samples = config_.baseline_samples;

    Rng choose(hash64(seed, kChoose));
    std::vector<std::size_t> pool(clean_.size());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int i = 0; i < q; ++i) {
        const std::size_t j = static_cast<std::size_t>(i) + choose.below(pool.size() - static_cast<std::size_t>(i));
        std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
        out.dipoles.push_back(pool[static_cast<std::size_t>(i)]);
    }

    Matrix evoked = Matrix::Zero(static_cast<Eigen::Index>(sensors_.size()), config_.post_samples);
    if (q > 0) {
        std::vector<MeasurementSet> parts;
        for (std::size_t d : out.dipoles) {
            MeasurementSet part;
            part.data = clean_[d];
            part.sampling_rate_hz = config_.sampling_rate_hz;
            parts.push_back(std::move(part));
        }
        SuperposedMeasurement sum = phantom_superpose(parts, config_.delay_range_ms, hash64(seed, kDelay));
        evoked = std::move(sum.measurement.data);
        out.delays_samples = std::move(sum.delays_samples);
    }

    Rng noise(hash64(seed, kNoise));
    for (int t = 0; t < config_.trials; ++t) {
        Matrix trial = noise_trial(noise);
        trial.rightCols(config_.post_samples) += evoked;
        out.trials.trials.push_back(std::move(trial));
    }
    return out;
}

ProcessedTrials PhantomWorld::process(const TrialSet& trials) const {
    const AveragedTrials avg = average_trials(trials, config_.lpc_order);
    ProcessedTrials out;
    out.whitener = build_spatial_whitener(noise_covariance(avg.baseline), config_.regularization_fraction);
    out.data = out.whitener.matrix * avg.post;
    out.baseline = out.whitener.matrix * avg.baseline;
    out.snr_db = estimate_snr(out.data, out.baseline);
    return out;
}

PreparedTrial PhantomWorld::prepare(const CellCondition& condition, std::uint64_t seed) const {
    const PhantomTrials rec = record(condition.q_true, seed);
    ProcessedTrials proc = process(rec.trials);
    auto lf = std::make_shared<const LeadFieldSet>(reconstruction_->transformed(proc.whitener.matrix));
    return PreparedTrial{std::move(proc.data), proc.snr_db, std::move(lf), OrientationMode::free};
}

}  // namespace megenum
