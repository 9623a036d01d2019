#pragma once

#include "megenum/forward.hpp"
#include "megenum/types.hpp"

#include <cstdint>
#include <limits>
#include <optional>
#include <utility>
#include <variant>
#include <vector>

namespace megenum {

inline constexpr double kNoiselessSnr = std::numeric_limits<double>::infinity();

struct ScenarioSpec {
    int q_true = 1;
    int n_samples = 100;
    double snr_db = 0.0;
    /// Either one compound-symmetric coefficient or a full Q x Q target.
    std::variant<double, Matrix> rho = 0.0;
    std::pair<double, double> freq_range_hz{10.0, 30.0};
    double sampling_rate_hz = 1000.0;
    Vec3 model_error_mm = Vec3::Zero();
    std::uint64_t seed = 1;
    OrientationMode orientation_mode = OrientationMode::fixed;
    std::optional<std::pair<double, double>> delay_range_ms;
    double source_amplitude = 10e-9;  ///< ampere-meters per unit-variance waveform
};

/// Ground truth: grid indices, unit orientations and Q x N waveforms (A m).
struct SourceSet {
    std::vector<std::size_t> point_indices;
    std::vector<Vec3> orientations;
    Matrix waveforms;
};

struct MeasurementSet {
    Matrix data;  ///< M x N, tesla
    double sampling_rate_hz = 1000.0;
    double noise_sigma = 0.0;
    std::optional<Matrix> clean;
};

/// Compound-symmetric target: unit diagonal, every off-diagonal equal to rho.
Matrix compound_symmetric(int q, double rho);

/// Cosines with random frequency and phase, each row standardized to zero
/// mean and unit sample variance (N - 1 denominator).
Matrix gen_waveforms(int q, int n, std::pair<double, double> freq_range_hz, double sampling_rate_hz,
                     std::uint64_t seed);

/// Decorrelates the rows exactly (sample-covariance Cholesky whitening) and
/// mixes them with the lower Cholesky factor of `target`.
Matrix apply_correlation(const Matrix& waveforms, const Matrix& target);

/// Pearson correlation between rows.
Matrix sample_correlation(const Matrix& rows);

Matrix synthesize_clean(const SourceSet& sources, const LeadFieldSet& leadfields);

/// Adds Gaussian noise rescaled so that 20 log10(|clean|_F / |noise|_F) is
/// exactly `snr_db`. An infinite `snr_db` returns the clean data untouched.
MeasurementSet add_noise_at_snr(const Matrix& clean, double snr_db, std::uint64_t seed,
                                double sampling_rate_hz = 1000.0);

/// 20 log10 of the Frobenius-norm ratio.
double frobenius_snr_db(const Matrix& signal, const Matrix& noise);

/// Circular shift of every column to the right by `samples`.
Matrix circular_shift(const Matrix& data, int samples);

struct SuperposedMeasurement {
    MeasurementSet measurement;
    std::vector<int> delays_samples;
};

/// Shifts each dataset by an independent uniform delay and sums them.
SuperposedMeasurement phantom_superpose(const std::vector<MeasurementSet>& datasets,
                                        std::pair<double, double> delay_range_ms, std::uint64_t seed);

/// Draws delays (in samples) the way phantom_superpose does for a given seed.
std::vector<int> draw_delays(std::size_t count, std::pair<double, double> delay_range_ms, double sampling_rate_hz,
                             std::uint64_t seed);

struct ScenarioResult {
    MeasurementSet measurement;
    SourceSet truth;
};

/// Amplitude of the noise used when there is no signal to scale against.
inline constexpr double kReferenceNoiseSigma = 1e-13;

/// Samples sources from the simulation lead fields and synthesizes noisy data.
/// Model error is a property of the reconstruction lead fields, not of the data.
ScenarioResult run_scenario(const ScenarioSpec& spec, const LeadFieldSet& simulation,
                            const SphereHeadModel& head = {});

}  // namespace megenum
