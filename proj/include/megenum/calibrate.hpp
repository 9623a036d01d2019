#pragma once

#include "megenum/enumerate.hpp"
#include "megenum/forward.hpp"
#include "megenum/simulate.hpp"
#include "megenum/types.hpp"

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

namespace megenum {

/// `count` points geometrically spaced over [lo, hi], both ends included.
std::vector<double> log_spaced(double lo, double hi, int count);

inline constexpr std::size_t kMinSweepPoints = 10;

struct CalibrationGrid {
    std::vector<double> snr_levels_db;
    std::vector<int> q_levels;
    std::vector<double> rho_levels{0.1, 0.5, 0.9};
    std::vector<Vec3> model_errors_mm{Vec3::UnitX(), Vec3::UnitY(), Vec3::UnitZ()};
    int reps = 100;
    std::vector<double> threshold_sweep = log_spaced(1.0, 1.5, 40);
    std::uint64_t base_seed = 1;

    /// Scenario axes and reps only.
    void validate_scenarios() const;
    /// Scenario axes plus a strictly increasing positive sweep of at least kMinSweepPoints.
    void validate() const;
    std::size_t rep_count() const;
};

/// One Monte Carlo repetition's scenario.
struct CellCondition {
    double snr_db = 0.0;
    int q_true = 0;
    double rho = 0.0;
    Vec3 model_error_mm = Vec3::Zero();
    int rep = 0;
};

/// Data ready for enumeration plus everything needed to interpret it.
struct PreparedTrial {
    Matrix data;
    double snr_db = 0.0;  ///< value used for threshold lookup
    std::shared_ptr<const LeadFieldSet> leadfields;
    OrientationMode mode = OrientationMode::fixed;
};

/// Source of Monte Carlo data for calibration and evaluation campaigns.
class World {
public:
    virtual ~World() = default;
    virtual PreparedTrial prepare(const CellCondition& condition, std::uint64_t seed) const = 0;
};

struct WorldConfig {
    std::size_t sensor_count = 102;
    double sensor_shell_radius = 0.12;
    std::size_t simulation_points = 2000;
    std::size_t reconstruction_points = 5000;
    std::uint64_t simulation_grid_seed = 1;
    std::uint64_t reconstruction_grid_seed = 2;
    std::uint64_t orientation_field_seed = 3;
    int n_samples = 100;
    OrientationMode mode = OrientationMode::fixed;
    double source_amplitude = 10e-9;
    SphereHeadModel head;
};

/// Simulated sphere-model world: data come from the simulation grid, fits use
/// the disjoint reconstruction grid displaced by the condition's model error.
class SimulationWorld : public World {
public:
    SimulationWorld(const WorldConfig& config, const std::vector<Vec3>& model_errors_mm);

    PreparedTrial prepare(const CellCondition& condition, std::uint64_t seed) const override;

    ScenarioSpec scenario(const CellCondition& condition, std::uint64_t seed) const;
    const SensorArray& sensors() const { return sensors_; }
    const LeadFieldSet& simulation_leadfields() const { return *simulation_; }
    std::shared_ptr<const LeadFieldSet> reconstruction_leadfields(const Vec3& model_error_mm) const;
    const WorldConfig& config() const { return config_; }

private:
    WorldConfig config_;
    SensorArray sensors_;
    std::shared_ptr<const LeadFieldSet> simulation_;
    std::vector<std::pair<Vec3, std::shared_ptr<const LeadFieldSet>>> reconstruction_;
};

/// Fraction of positions where estimate equals truth.
double accuracy(const std::vector<int>& estimates, const std::vector<int>& truths);

struct RepOutcome {
    CellCondition condition;
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::vector<double> f_values;  ///< F_{k -> k+1} for k = 0 .. q_true
};

struct AccuracyCurve {
    double snr_db = 0.0;
    int q_true = 0;
    std::vector<double> thresholds;
    std::vector<std::size_t> correct;
    std::size_t total = 0;  ///< successful reps behind each point

    double accuracy_at(std::size_t i) const;
};

/// Sequential decision with one threshold at every step.
int decide_uniform(const std::vector<double>& f_values, double threshold);

/// Seed of one repetition, derived from the base seed and the condition's
/// position in the full grid.
std::uint64_t rep_seed(const CalibrationGrid& grid, std::size_t snr_index, std::size_t q_index, std::size_t rho_index,
                       std::size_t error_index, int rep);

struct CalibrationRun {
    std::vector<RepOutcome> reps;
    std::vector<AccuracyCurve> curves;
    std::size_t failed = 0;
};

using ProgressCallback = std::function<void(double snr_db, int q_true, std::size_t done_cells, std::size_t total_cells)>;

/// Simulates every repetition once, stores its F cascade and scores the whole
/// threshold sweep against it. Failed reps are logged and excluded.
CalibrationRun sweep_thresholds(const CalibrationGrid& grid, const World& world,
                                const ProgressCallback& progress = {});

/// Curves per (SNR, Q) cell from stored cascades, keeping reps that pass `keep`.
std::vector<AccuracyCurve> accuracy_curves(const std::vector<RepOutcome>& reps, const std::vector<double>& sweep,
                                           const std::function<bool(const RepOutcome&)>& keep = {});

/// Index of the best sweep point; ties go to the larger threshold.
std::size_t argmax_index(const AccuracyCurve& curve);

/// Per-cell argmax thresholds keyed by (SNR, k_reduced = q_true).
ThresholdTable select_optimal(const std::vector<AccuracyCurve>& curves);

}  // namespace megenum
