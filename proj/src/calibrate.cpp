#include "megenum/calibrate.hpp"

#include "megenum/localize.hpp"
#include "megenum/parallel.hpp"
#include "megenum/rng.hpp"

#include <atomic>
#include <cmath>
#include <iostream>
#include <mutex>

namespace megenum {

std::vector<double> log_spaced(double lo, double hi, int count) {
    if (!(lo > 0.0) || !(hi >= lo)) throw InvalidInput("log-spaced sweep needs 0 < lo <= hi");
    if (count < 1) throw InvalidInput("sweep needs at least one point");
    if (count == 1) return {lo};
    std::vector<double> out(static_cast<std::size_t>(count));
    const double step = std::log(hi / lo) / static_cast<double>(count - 1);
    for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
    out.back() = hi;
    return out;
}

void CalibrationGrid::validate_scenarios() const {
    if (snr_levels_db.empty() || q_levels.empty() || rho_levels.empty() || model_errors_mm.empty())
        throw InvalidInput("calibration grid has an empty axis");
    if (reps < 1) throw InvalidInput("reps must be at least 1");
    for (int q : q_levels)
        if (q < 0) throw InvalidInput("source counts must be non-negative");
}

void CalibrationGrid::validate() const {
    validate_scenarios();
    if (threshold_sweep.size() < kMinSweepPoints)
        throw InvalidInput("threshold sweep has " + std::to_string(threshold_sweep.size()) + " points; need at least " +
                           std::to_string(kMinSweepPoints));
    for (std::size_t i = 1; i < threshold_sweep.size(); ++i)
        if (!(threshold_sweep[i] > threshold_sweep[i - 1]))
            throw InvalidInput("threshold sweep must be strictly increasing");
    for (double t : threshold_sweep)
        if (!(t > 0.0)) throw InvalidInput("thresholds must be positive");
}

std::size_t CalibrationGrid::rep_count() const {
    return snr_levels_db.size() * q_levels.size() * rho_levels.size() * model_errors_mm.size() *
           static_cast<std::size_t>(reps);
}

SimulationWorld::SimulationWorld(const WorldConfig& config, const std::vector<Vec3>& model_errors_mm)
    : config_(config) {
    sensors_ = make_hemisphere_sensor_array(config.sensor_count, config.sensor_shell_radius, config.head);
    const bool fixed = config.mode == OrientationMode::fixed;

    GridSpec sim_spec;
    sim_spec.count = config.simulation_points;
    sim_spec.stream_seed = config.simulation_grid_seed;
    sim_spec.label = GridLabel::simulation;
    if (fixed) sim_spec.orientation_field_seed = config.orientation_field_seed;
    auto sim_grid = std::make_shared<const SourceGrid>(make_shell_grid(sim_spec, config.head));
    simulation_ = std::make_shared<const LeadFieldSet>(build_lead_fields(sim_grid, sensors_, config.head));

    GridSpec rec_spec = sim_spec;
    rec_spec.count = config.reconstruction_points;
    rec_spec.stream_seed = config.reconstruction_grid_seed;
    rec_spec.label = GridLabel::reconstruction;
    const SourceGrid base = make_shell_grid(rec_spec, config.head);
    for (const Vec3& err : model_errors_mm) {
        bool seen = false;
        for (const auto& [e, _] : reconstruction_) seen = seen || e == err;
        if (seen) continue;
        TranslatedGrid moved = translate_grid(base, err, config.head);
        if (!moved.clamped.empty())
            std::clog << "note: " << moved.clamped.size() << " reconstruction points clamped inside the head\n";
        auto grid = std::make_shared<const SourceGrid>(std::move(moved.grid));
        reconstruction_.emplace_back(err,
                                     std::make_shared<const LeadFieldSet>(build_lead_fields(grid, sensors_, config.head)));
    }
}

std::shared_ptr<const LeadFieldSet> SimulationWorld::reconstruction_leadfields(const Vec3& model_error_mm) const {
    for (const auto& [e, lf] : reconstruction_)
        if (e == model_error_mm) return lf;
    throw InvalidInput("world was not built for this model error");
}

ScenarioSpec SimulationWorld::scenario(const CellCondition& condition, std::uint64_t seed) const {
    ScenarioSpec spec;
    spec.q_true = condition.q_true;
    spec.n_samples = config_.n_samples;
    spec.snr_db = condition.snr_db;
    spec.rho = condition.rho;
    spec.model_error_mm = condition.model_error_mm;
    spec.seed = seed;
    spec.orientation_mode = config_.mode;
    spec.source_amplitude = config_.source_amplitude;
    return spec;
}

PreparedTrial SimulationWorld::prepare(const CellCondition& condition, std::uint64_t seed) const {
    ScenarioResult sim = run_scenario(scenario(condition, seed), *simulation_, config_.head);
    return PreparedTrial{std::move(sim.measurement.data), condition.snr_db,
                         reconstruction_leadfields(condition.model_error_mm), config_.mode};
}

double accuracy(const std::vector<int>& estimates, const std::vector<int>& truths) {
    if (estimates.size() != truths.size()) throw InvalidInput("estimates and truths differ in length");
    if (estimates.empty()) throw InvalidInput("accuracy of an empty set");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < estimates.size(); ++i) hits += estimates[i] == truths[i];
    return static_cast<double>(hits) / static_cast<double>(estimates.size());
}

double AccuracyCurve::accuracy_at(std::size_t i) const {
    if (total == 0) return std::nan("");
    return static_cast<double>(correct.at(i)) / static_cast<double>(total);
}

int decide_uniform(const std::vector<double>& f_values, double threshold) {
    for (std::size_t k = 0; k < f_values.size(); ++k)
        if (!(f_values[k] > threshold)) return static_cast<int>(k);
    return static_cast<int>(f_values.size());
}

std::uint64_t rep_seed(const CalibrationGrid& grid, std::size_t snr_index, std::size_t q_index, std::size_t rho_index,
                       std::size_t error_index, int rep) {
    std::size_t index = snr_index;
    index = index * grid.q_levels.size() + q_index;
    index = index * grid.rho_levels.size() + rho_index;
    index = index * grid.model_errors_mm.size() + error_index;
    index = index * static_cast<std::size_t>(grid.reps) + static_cast<std::size_t>(rep);
    return hash64(grid.base_seed, index);
}

CalibrationRun sweep_thresholds(const CalibrationGrid& grid, const World& world, const ProgressCallback& progress) {
    grid.validate();
    const std::size_t per_cell = grid.rho_levels.size() * grid.model_errors_mm.size() * static_cast<std::size_t>(grid.reps);
    const std::size_t cells = grid.snr_levels_db.size() * grid.q_levels.size();

    CalibrationRun run;
    run.reps.resize(cells * per_cell);
    for (std::size_t s = 0; s < grid.snr_levels_db.size(); ++s)
        for (std::size_t q = 0; q < grid.q_levels.size(); ++q)
            for (std::size_t r = 0; r < grid.rho_levels.size(); ++r)
                for (std::size_t e = 0; e < grid.model_errors_mm.size(); ++e)
                    for (int rep = 0; rep < grid.reps; ++rep) {
                        const std::size_t cell = s * grid.q_levels.size() + q;
                        const std::size_t within = (r * grid.model_errors_mm.size() + e) * grid.reps + rep;
                        RepOutcome& out = run.reps[cell * per_cell + within];
                        out.condition = CellCondition{grid.snr_levels_db[s], grid.q_levels[q], grid.rho_levels[r],
                                                      grid.model_errors_mm[e], rep};
                        out.seed = rep_seed(grid, s, q, r, e, rep);
                    }

    std::vector<std::atomic<std::size_t>> remaining(cells);
    for (auto& c : remaining) c = per_cell;
    std::atomic<std::size_t> done_cells{0};
    std::mutex report;

    parallel_for(run.reps.size(), [&](std::size_t i) {
        RepOutcome& out = run.reps[i];
        try {
            const PreparedTrial trial = world.prepare(out.condition, out.seed);
            const ApProblem problem(trial.data, *trial.leadfields, trial.mode);
            for (const FStep& step : f_cascade(problem, out.condition.q_true)) out.f_values.push_back(step.f.value);
            out.ok = true;
        } catch (const std::exception& e) {
            out.error = e.what();
            const std::lock_guard lock(report);
            std::clog << "rep failed (snr " << out.condition.snr_db << " dB, Q " << out.condition.q_true << ", rho "
                      << out.condition.rho << ", rep " << out.condition.rep << "): " << e.what() << '\n';
        }
        const std::size_t cell = i / per_cell;
        if (--remaining[cell] == 0 && progress) {
            const std::lock_guard lock(report);
            progress(out.condition.snr_db, out.condition.q_true, ++done_cells, cells);
        }
    });

    for (const auto& r : run.reps) run.failed += !r.ok;
    run.curves = accuracy_curves(run.reps, grid.threshold_sweep);
    return run;
}

std::vector<AccuracyCurve> accuracy_curves(const std::vector<RepOutcome>& reps, const std::vector<double>& sweep,
                                           const std::function<bool(const RepOutcome&)>& keep) {
    std::map<std::pair<double, int>, AccuracyCurve> cells;
    for (const auto& r : reps) {
        const auto key = std::make_pair(r.condition.snr_db, r.condition.q_true);
        auto [it, inserted] = cells.try_emplace(key);
        AccuracyCurve& c = it->second;
        if (inserted) {
            c.snr_db = key.first;
            c.q_true = key.second;
            c.thresholds = sweep;
            c.correct.assign(sweep.size(), 0);
        }
        if (!r.ok || (keep && !keep(r))) continue;
        ++c.total;
        for (std::size_t i = 0; i < sweep.size(); ++i) c.correct[i] += decide_uniform(r.f_values, sweep[i]) == r.condition.q_true;
    }
    std::vector<AccuracyCurve> out;
    for (auto& [_, c] : cells) out.push_back(std::move(c));
    return out;
}

std::size_t argmax_index(const AccuracyCurve& curve) {
    if (curve.thresholds.empty() || curve.total == 0)
        throw InvalidInput("empty accuracy curve for cell (" + std::to_string(curve.snr_db) + " dB, Q " +
                           std::to_string(curve.q_true) + ")");
    std::size_t best = 0;
    for (std::size_t i = 1; i < curve.correct.size(); ++i)
        if (curve.correct[i] >= curve.correct[best]) best = i;
    return best;
}

ThresholdTable select_optimal(const std::vector<AccuracyCurve>& curves) {
    if (curves.empty()) throw InvalidInput("no accuracy curves");
    ThresholdTable table;
    for (const auto& c : curves) {
        const std::size_t i = argmax_index(c);
        table.set(c.snr_db, c.q_true, c.thresholds[i], c.accuracy_at(i));
    }
    return table;
}

}  // namespace megenum
