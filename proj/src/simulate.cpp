#include "megenum/simulate.hpp"

#include "megenum/rng.hpp"

#include <cmath>
#include <numbers>
#include <numeric>

namespace megenum {

namespace {

enum SeedStream : std::uint64_t { kSelect = 1, kWaveform = 2, kNoise = 3, kOrient = 4 };

Vec3 tangential_unit(const Vec3& point, const SphereHeadModel& head, Rng& rng) {
    const Vec3 radial = (point - head.center).normalized();
    for (;;) {
        const Vec3 v = rng.unit_vector();
        const Vec3 t = v - v.dot(radial) * radial;
        if (t.norm() > 1e-3) return t.normalized();
    }
}

}  // namespace

Matrix compound_symmetric(int q, double rho) {
    if (q < 0) throw InvalidInput("source count must be non-negative");
    Matrix target = Matrix::Constant(q, q, rho);
    target.diagonal().setOnes();
    return target;
}

Matrix gen_waveforms(int q, int n, std::pair<double, double> freq_range_hz, double sampling_rate_hz,
                     std::uint64_t seed) {
    if (q < 1) throw InvalidInput("gen_waveforms needs q >= 1");
    if (n < 2) throw InvalidInput("gen_waveforms needs n >= 2");
    if (!(sampling_rate_hz > 0.0)) throw InvalidInput("sampling rate must be positive");
    const auto [f_lo, f_hi] = freq_range_hz;
    if (!(0.0 <= f_lo && f_lo <= f_hi)) throw InvalidInput("frequency range must satisfy 0 <= lo <= hi");
    if (f_hi > 0.5 * sampling_rate_hz)
        throw InvalidInput("frequency " + std::to_string(f_hi) + " Hz exceeds the Nyquist limit");

    Rng rng(seed);
    Matrix w(q, n);
    for (int i = 0; i < q; ++i) {
        const double f = rng.uniform(f_lo, f_hi);
        const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
        for (int t = 0; t < n; ++t)
            w(i, t) = std::cos(2.0 * std::numbers::pi * f * t / sampling_rate_hz + phase);
        w.row(i).array() -= w.row(i).mean();
        const double sd = std::sqrt(w.row(i).squaredNorm() / (n - 1));
        if (!(sd > 1e-12)) throw NumericalError("waveform " + std::to_string(i) + " is constant");
        w.row(i) /= sd;
        // second pass removes the rounding left by the first
        w.row(i).array() -= w.row(i).mean();
        w.row(i) /= std::sqrt(w.row(i).squaredNorm() / (n - 1));
    }
    return w;
}

Matrix apply_correlation(const Matrix& waveforms, const Matrix& target) {
    const Eigen::Index q = waveforms.rows();
    const Eigen::Index n = waveforms.cols();
    if (target.rows() != q || target.cols() != q) throw InvalidInput("target correlation has the wrong shape");
    if (!target.isApprox(target.transpose(), 1e-12)) throw InvalidInput("target correlation is not symmetric");
    if ((target.diagonal().array() - 1.0).abs().maxCoeff() > 1e-12)
        throw InvalidInput("target correlation must have a unit diagonal");
    if (n <= q) throw InvalidInput("need more samples than sources to decorrelate waveforms");

    Eigen::LLT<Matrix> target_chol(target);
    if (target_chol.info() != Eigen::Success) {
        int minor = static_cast<int>(q);
        for (Eigen::Index k = 1; k <= q; ++k) {
            Eigen::LLT<Matrix> leading(target.topLeftCorner(k, k));
            if (leading.info() != Eigen::Success) {
                minor = static_cast<int>(k);
                break;
            }
        }
        throw FactorizationError("target correlation is not positive definite (leading minor " +
                                     std::to_string(minor) + ")",
                                 minor);
    }

    Matrix centered = waveforms.colwise() - waveforms.rowwise().mean();
    const Matrix cov = centered * centered.transpose() / static_cast<double>(n - 1);
    Eigen::LLT<Matrix> sample_chol(cov);
    if (sample_chol.info() != Eigen::Success) throw NumericalError("input waveforms are linearly dependent");
    const Matrix white = sample_chol.matrixL().solve(centered);
    return target_chol.matrixL() * white;
}

Matrix sample_correlation(const Matrix& rows) {
    Matrix centered = rows.colwise() - rows.rowwise().mean();
    Matrix cov = centered * centered.transpose();
    const Vector inv_sd = cov.diagonal().cwiseSqrt().cwiseInverse();
    return inv_sd.asDiagonal() * cov * inv_sd.asDiagonal();
}

Matrix synthesize_clean(const SourceSet& sources, const LeadFieldSet& leadfields) {
    const auto q = static_cast<Eigen::Index>(sources.point_indices.size());
    if (static_cast<std::size_t>(q) != sources.orientations.size() || sources.waveforms.rows() != q)
        throw InvalidInput("source set fields disagree in source count");
    Matrix topo(leadfields.sensor_count(), q);
    for (Eigen::Index i = 0; i < q; ++i)
        topo.col(i) = topography(leadfields, sources.point_indices[i], sources.orientations[i]);
    if (q == 0) return Matrix::Zero(leadfields.sensor_count(), sources.waveforms.cols());
    return topo * sources.waveforms;
}

double frobenius_snr_db(const Matrix& signal, const Matrix& noise) {
    return 20.0 * std::log10(signal.norm() / noise.norm());
}

MeasurementSet add_noise_at_snr(const Matrix& clean, double snr_db, std::uint64_t seed, double sampling_rate_hz) {
    MeasurementSet out;
    out.sampling_rate_hz = sampling_rate_hz;
    out.clean = clean;
    if (std::isinf(snr_db) && snr_db > 0) {
        out.data = clean;
        return out;
    }
    if (std::isnan(snr_db)) throw InvalidInput("SNR is NaN");
    const double clean_norm = clean.norm();
    if (!(clean_norm > 0.0)) throw InvalidInput("cannot scale noise to a finite SNR against an all-zero signal");
    Rng rng(seed);
    Matrix noise = rng.normal_matrix(clean.rows(), clean.cols());
    const double scale = clean_norm / (std::pow(10.0, snr_db / 20.0) * noise.norm());
    noise *= scale;
    out.noise_sigma = scale;
    out.data = clean + noise;
    return out;
}

Matrix circular_shift(const Matrix& data, int samples) {
    const Eigen::Index n = data.cols();
    if (n == 0) return data;
    const Eigen::Index s = ((samples % n) + n) % n;
    if (s == 0) return data;
    Matrix out(data.rows(), n);
    out.rightCols(n - s) = data.leftCols(n - s);
    out.leftCols(s) = data.rightCols(s);
    return out;
}

std::vector<int> draw_delays(std::size_t count, std::pair<double, double> delay_range_ms, double sampling_rate_hz,
                             std::uint64_t seed) {
    const auto [lo, hi] = delay_range_ms;
    if (!(0.0 <= lo && lo <= hi)) throw InvalidInput("delay range must satisfy 0 <= lo <= hi");
    Rng rng(seed);
    std::vector<int> delays;
    delays.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const double ms = lo == hi ? lo : rng.uniform(lo, hi);
        delays.push_back(static_cast<int>(std::lround(ms * sampling_rate_hz / 1000.0)));
    }
    return delays;
}

SuperposedMeasurement phantom_superpose(const std::vector<MeasurementSet>& datasets,
                                        std::pair<double, double> delay_range_ms, std::uint64_t seed) {
    if (datasets.empty()) throw InvalidInput("nothing to superpose");
    const MeasurementSet& first = datasets.front();
    bool all_clean = true;
    for (const auto& d : datasets) {
        if (d.data.rows() != first.data.rows() || d.data.cols() != first.data.cols())
            throw InvalidInput("datasets differ in dimensions");
        if (d.sampling_rate_hz != first.sampling_rate_hz) throw InvalidInput("datasets differ in sampling rate");
        all_clean = all_clean && d.clean.has_value();
    }
    SuperposedMeasurement out;
    out.delays_samples = draw_delays(datasets.size(), delay_range_ms, first.sampling_rate_hz, seed);
    MeasurementSet& m = out.measurement;
    m.sampling_rate_hz = first.sampling_rate_hz;
    m.data = Matrix::Zero(first.data.rows(), first.data.cols());
    if (all_clean) m.clean = Matrix::Zero(first.data.rows(), first.data.cols());
    double noise_var = 0.0;
    for (std::size_t i = 0; i < datasets.size(); ++i) {
        m.data += circular_shift(datasets[i].data, out.delays_samples[i]);
        if (all_clean) *m.clean += circular_shift(*datasets[i].clean, out.delays_samples[i]);
        noise_var += datasets[i].noise_sigma * datasets[i].noise_sigma;
    }
    m.noise_sigma = std::sqrt(noise_var);
    return out;
}

ScenarioResult run_scenario(const ScenarioSpec& spec, const LeadFieldSet& simulation, const SphereHeadModel& head) {
    const auto m = simulation.sensor_count();
    if (spec.q_true < 0) throw InvalidInput("source count must be non-negative");
    if (spec.q_true >= m)
        throw InvalidInput("source count Q=" + std::to_string(spec.q_true) + " violates the model constraint Q < M (M=" +
                           std::to_string(m) + ")");
    if (spec.n_samples < 1) throw InvalidInput("need at least one time sample");
    if (static_cast<std::size_t>(spec.q_true) > simulation.point_count())
        throw InvalidInput("source count exceeds the simulation grid size");

    const auto q = spec.q_true;
    const auto n = spec.n_samples;
    ScenarioResult result;
    SourceSet& truth = result.truth;

    if (q == 0) {
        truth.waveforms = Matrix::Zero(0, n);
        Rng rng(hash64(spec.seed, kNoise));
        Matrix noise = rng.normal_matrix(m, n) * kReferenceNoiseSigma;
        result.measurement.data = noise;
        result.measurement.clean = Matrix::Zero(m, n);
        result.measurement.noise_sigma = kReferenceNoiseSigma;
        result.measurement.sampling_rate_hz = spec.sampling_rate_hz;
        return result;
    }

    // partial Fisher-Yates for Q distinct grid points
    Rng select(hash64(spec.seed, kSelect));
    std::vector<std::size_t> pool(simulation.point_count());
    std::iota(pool.begin(), pool.end(), std::size_t{0});
    for (int i = 0; i < q; ++i) {
        const std::size_t j = i + select.below(pool.size() - i);
        std::swap(pool[i], pool[j]);
        truth.point_indices.push_back(pool[i]);
    }

    const SourceGrid& grid = simulation.grid();
    Rng orient(hash64(spec.seed, kOrient));
    for (std::size_t idx : truth.point_indices) {
        if (spec.orientation_mode == OrientationMode::free) {
            truth.orientations.push_back(orient.unit_vector());
        } else if (grid.fixed_orientations) {
            truth.orientations.push_back((*grid.fixed_orientations)[idx]);
        } else {
            truth.orientations.push_back(tangential_unit(grid.points[idx], head, orient));
        }
    }

    if (n < q + 1 && q > 1) throw InvalidInput("need more time samples than sources");
    Matrix waves = gen_waveforms(q, std::max(n, 2), spec.freq_range_hz, spec.sampling_rate_hz,
                                 hash64(spec.seed, kWaveform));
    if (q > 1) {
        const Matrix target = std::holds_alternative<double>(spec.rho)
                                  ? compound_symmetric(q, std::get<double>(spec.rho))
                                  : std::get<Matrix>(spec.rho);
        waves = apply_correlation(waves, target);
    }
    truth.waveforms = spec.source_amplitude * waves.leftCols(n);

    const Matrix clean = synthesize_clean(truth, simulation);
    result.measurement = add_noise_at_snr(clean, spec.snr_db, hash64(spec.seed, kNoise), spec.sampling_rate_hz);
    return result;
}

}  // namespace megenum
