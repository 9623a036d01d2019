#include "megenum/cli.hpp"

#include "megenum/calibrate.hpp"
#include "megenum/enumerate.hpp"
#include "megenum/parallel.hpp"
#include "megenum/phantom.hpp"
#include "megenum/rng.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <sstream>

namespace megenum {

namespace {

class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

constexpr const char* kPresetOrigin = "<preset>";
constexpr std::uint64_t kCompareStream = 0xc0a1;

const char* kDeskPreset = R"(
world = simulation
sensor_count = 102
sensor_shell_radius = 0.12
head_radius = 0.09
simulation_points = 2000
reconstruction_points = 5000
simulation_grid_seed = 1
reconstruction_grid_seed = 2
orientation_field_seed = 3
orientation_mode = fixed
n_samples = 100
snr_levels_db = -8,-4,0,4,8
q_levels = 1,2,3,4,5
rho_levels = 0.1,0.5,0.9
model_errors_mm = 1,0,0; 0,1,0; 0,0,1
reps = 50
sweep_min = 1.0
sweep_max = 1.5
sweep_points = 40
base_seed = 1
k_max = 10
extend_thresholds = true
)";

// Full-scale geometry; expect hours of compute and several GB of lead fields.
const char* kPaperOverrides = R"(
sensor_count = 306
simulation_points = 20000
reconstruction_points = 50000
reps = 100
)";

const char* kPhantomPreset = R"(
world = phantom
sensor_count = 102
sensor_shell_radius = 0.12
head_radius = 0.09
reconstruction_points = 5000
reconstruction_grid_seed = 2
orientation_mode = free
phantom_trials = 20
phantom_amplitude_nam = 200
phantom_delay_max_ms = 50
phantom_target_snr_db = 5.5
snr_levels_db = 5.5
q_levels = 0,1,2,3,4,5
rho_levels = 0
model_errors_mm = 0,0,0
reps = 100
sweep_min = 1.0
sweep_max = 1.5
sweep_points = 40
base_seed = 1
k_max = 6
extend_thresholds = false
)";

Config parse_preset(const char* text) {
    Config c = Config::parse(text, kPresetOrigin);
    Config tagged;
    for (const auto& [k, v] : c.snapshot()) tagged.set(k, v, kPresetOrigin);
    return tagged;
}

std::string iso_now() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct CommonOptions {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir = ".";
    std::string preset;
    std::vector<std::string> overrides;
};

Config resolve_config(const CommonOptions& opts) {
    Config c;
    if (!opts.preset.empty()) c = preset_config(opts.preset);
    if (!opts.config_path.empty()) {
        if (!fs::exists(opts.config_path)) throw UsageError("config file not found: " + opts.config_path);
        c.merge(Config::load(opts.config_path));
    }
    for (const auto& o : opts.overrides) {
        try {
            c.set_override(o);
        } catch (const InvalidInput& e) {
            throw UsageError(e.what());
        }
    }
    if (opts.seed) c.set("base_seed", std::to_string(*opts.seed), "--seed");
    return c;
}

void warn_unused(const Config& c, const CommonOptions& opts, std::ostream& err) {
    std::vector<std::string> unused = c.unused_keys(opts.config_path);
    const auto extra = c.unused_keys("<override>");
    unused.insert(unused.end(), extra.begin(), extra.end());
    for (const auto& k : unused) err << "warning: configuration key '" << k << "' is not used by this command\n";
}

/// Writes outputs atomically and remembers their digests for the manifest.
class OutputSet {
public:
    explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

    void write(const std::string& name, const std::string& content) {
        write_file_atomic(dir_ / name, content);
        files_.push_back({{"path", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    const nlohmann::json& files() const { return files_; }
    const fs::path& dir() const { return dir_; }

private:
    fs::path dir_;
    nlohmann::json files_ = nlohmann::json::array();
};

void write_manifest(OutputSet& outputs, const std::string& command, const Config& config, const std::string& started) {
    nlohmann::json m;
    m["command"] = command;
    m["tool_version"] = kToolVersion;
    m["base_seed"] = config.get_u64("base_seed", 1);
    m["configuration"] = config.snapshot();
    m["started"] = started;
    m["finished"] = iso_now();
    m["outputs"] = outputs.files();
    write_file_atomic(outputs.dir() / "manifest.json", m.dump(2) + "\n");
}

SphereHeadModel head_model(const Config& c) {
    SphereHeadModel head;
    head.radius = c.get_double("head_radius", head.radius);
    if (!(head.radius > 0.0)) throw UsageError("head_radius must be positive");
    return head;
}

OrientationMode mode_of(const Config& c, const std::string& fallback = "fixed") {
    try {
        return parse_orientation_mode(c.get_string("orientation_mode", fallback));
    } catch (const InvalidInput& e) {
        throw UsageError(std::string("orientation_mode: ") + e.what());
    }
}

WorldConfig world_config(const Config& c) {
    WorldConfig w;
    w.sensor_count = static_cast<std::size_t>(c.get_int("sensor_count", static_cast<int>(w.sensor_count)));
    w.sensor_shell_radius = c.get_double("sensor_shell_radius", w.sensor_shell_radius);
    w.simulation_points = static_cast<std::size_t>(c.get_int("simulation_points", static_cast<int>(w.simulation_points)));
    w.reconstruction_points =
        static_cast<std::size_t>(c.get_int("reconstruction_points", static_cast<int>(w.reconstruction_points)));
    w.simulation_grid_seed = c.get_u64("simulation_grid_seed", w.simulation_grid_seed);
    w.reconstruction_grid_seed = c.get_u64("reconstruction_grid_seed", w.reconstruction_grid_seed);
    w.orientation_field_seed = c.get_u64("orientation_field_seed", w.orientation_field_seed);
    w.n_samples = c.get_int("n_samples", w.n_samples);
    w.mode = mode_of(c);
    w.source_amplitude = c.get_double("source_amplitude", w.source_amplitude);
    w.head = head_model(c);
    return w;
}

PhantomConfig phantom_config(const Config& c) {
    PhantomConfig p;
    p.sensor_count = static_cast<std::size_t>(c.get_int("sensor_count", static_cast<int>(p.sensor_count)));
    p.sensor_shell_radius = c.get_double("sensor_shell_radius", p.sensor_shell_radius);
    p.reconstruction_points =
        static_cast<std::size_t>(c.get_int("reconstruction_points", static_cast<int>(p.reconstruction_points)));
    p.reconstruction_grid_seed = c.get_u64("reconstruction_grid_seed", p.reconstruction_grid_seed);
    p.trials = c.get_int("phantom_trials", p.trials);
    p.amplitude = c.get_double("phantom_amplitude_nam", p.amplitude * 1e9) * 1e-9;
    p.delay_range_ms = {0.0, c.get_double("phantom_delay_max_ms", p.delay_range_ms.second)};
    p.target_snr_db = c.get_double("phantom_target_snr_db", p.target_snr_db);
    p.head = head_model(c);
    return p;
}

bool is_phantom(const Config& c) {
    const std::string w = c.get_string("world", "simulation");
    if (w != "simulation" && w != "phantom") throw UsageError("world must be 'simulation' or 'phantom', got '" + w + "'");
    return w == "phantom";
}

CalibrationGrid calibration_grid(const Config& c) {
    CalibrationGrid g;
    g.snr_levels_db = c.get_doubles("snr_levels_db", {});
    g.q_levels = c.get_ints("q_levels", {});
    g.rho_levels = c.get_doubles("rho_levels", g.rho_levels);
    g.model_errors_mm = c.get_vec3s("model_errors_mm", g.model_errors_mm);
    g.reps = c.get_int("reps", g.reps);
    g.base_seed = c.get_u64("base_seed", g.base_seed);
    if (g.snr_levels_db.empty() || g.q_levels.empty() || g.rho_levels.empty() || g.model_errors_mm.empty())
        throw UsageError("scenario grid is empty: set snr_levels_db, q_levels, rho_levels and model_errors_mm "
                         "(or use --preset desk)");
    return g;
}

std::vector<double> threshold_sweep(const Config& c) {
    if (c.has("threshold_sweep")) return c.get_doubles("threshold_sweep", {});
    if (!c.has("sweep_min") || !c.has("sweep_max"))
        throw UsageError("calibration needs sweep bounds: set sweep_min and sweep_max (and optionally sweep_points), "
                         "or use --preset desk");
    const double lo = c.require_double("sweep_min");
    const double hi = c.require_double("sweep_max");
    const int n = c.get_int("sweep_points", 40);
    try {
        return log_spaced(lo, hi, n);
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
}

std::unique_ptr<World> make_world(const Config& c, const std::vector<Vec3>& model_errors, std::ostream& err) {
    if (is_phantom(c)) {
        err << "building phantom world...\n";
        return std::make_unique<PhantomWorld>(phantom_config(c));
    }
    err << "building simulation world...\n";
    return std::make_unique<SimulationWorld>(world_config(c), model_errors);
}

std::string fmt(double v, int prec = 4) {
    std::ostringstream ss;
    ss << std::setprecision(prec) << v;
    return ss.str();
}

// ---------------------------------------------------------------- simulate

int cmd_simulate(const Config& c, const CommonOptions& opts, std::ostream& out, std::ostream& err) {
    const std::string started = iso_now();
    OutputSet outputs(opts.out_dir);
    const int q = c.get_int("q_true", 1);
    const std::uint64_t seed = c.get_u64("base_seed", 1);

    if (is_phantom(c)) {
        const PhantomWorld world(phantom_config(c));
        const PhantomTrials rec = world.record(q, seed);
        outputs.write("trials.txt", format_trials(rec.trials));
        std::string truth = "q_true=" + std::to_string(q) + "\nseed=" + std::to_string(seed) +
                            "\nnoise_sigma=" + fmt(world.noise_sigma(), 17) + "\n\ndipole,delay_samples\n";
        for (std::size_t i = 0; i < rec.dipoles.size(); ++i)
            truth += std::to_string(rec.dipoles[i]) + ',' + std::to_string(rec.delays_samples[i]) + '\n';
        outputs.write("truth.txt", truth);
    } else {
        const WorldConfig w = world_config(c);
        ScenarioSpec spec;
        spec.q_true = q;
        spec.n_samples = w.n_samples;
        spec.snr_db = c.get_double("snr_db", 0.0);
        spec.rho = c.get_double("rho", 0.0);
        const auto errs = c.get_vec3s("model_error_mm", {Vec3::Zero()});
        if (errs.size() != 1) throw UsageError("model_error_mm must be a single x,y,z triple");
        spec.model_error_mm = errs.front();
        spec.freq_range_hz = {c.get_double("freq_min_hz", spec.freq_range_hz.first),
                              c.get_double("freq_max_hz", spec.freq_range_hz.second)};
        spec.seed = seed;
        spec.orientation_mode = w.mode;
        spec.source_amplitude = w.source_amplitude;
        if (q >= static_cast<int>(w.sensor_count))
            throw UsageError("q_true=" + std::to_string(q) + " violates the model constraint Q < M (M=" +
                             std::to_string(w.sensor_count) + ")");

        const SensorArray sensors = make_hemisphere_sensor_array(w.sensor_count, w.sensor_shell_radius, w.head);
        GridSpec gs;
        gs.count = w.simulation_points;
        gs.stream_seed = w.simulation_grid_seed;
        gs.label = GridLabel::simulation;
        if (w.mode == OrientationMode::fixed) gs.orientation_field_seed = w.orientation_field_seed;
        auto grid = std::make_shared<const SourceGrid>(make_shell_grid(gs, w.head));
        const LeadFieldSet lf = build_lead_fields(grid, sensors, w.head);
        const ScenarioResult sim = run_scenario(spec, lf, w.head);
        outputs.write("measurement.txt", format_measurement(sim.measurement));
        outputs.write("truth.txt", format_truth(spec, sim.truth, *grid));
    }
    warn_unused(c, opts, err);
    write_manifest(outputs, "simulate", c, started);
    out << "wrote " << (outputs.dir() / "manifest.json").string() << '\n';
    return kExitOk;
}

// --------------------------------------------------------------- calibrate

int cmd_calibrate(const Config& c, const CommonOptions& opts, std::ostream& out, std::ostream& err) {
    const std::string started = iso_now();
    CalibrationGrid grid = calibration_grid(c);
    grid.threshold_sweep = threshold_sweep(c);
    try {
        grid.validate();
    } catch (const InvalidInput& e) {
        throw UsageError(e.what());
    }
    const auto world = make_world(c, grid.model_errors_mm, err);
    warn_unused(c, opts, err);

    err << "calibrating " << grid.rep_count() << " repetitions on " << thread_count() << " thread(s)\n";
    const CalibrationRun run = sweep_thresholds(grid, *world, [&](double snr, int q, std::size_t done, std::size_t total) {
        err << "  cell " << done << "/" << total << ": snr " << snr << " dB, Q " << q << " done\n";
    });

    OutputSet outputs(opts.out_dir);
    const ThresholdTable table = select_optimal(run.curves);
    outputs.write("thresholds.csv", format_thresholds(table));
    outputs.write("curves.csv", format_curves(run.curves));
    write_manifest(outputs, "calibrate", c, started);

    const double failed = static_cast<double>(run.failed) / static_cast<double>(run.reps.size());
    out << "thresholds written to " << (outputs.dir() / "thresholds.csv").string() << " (" << run.failed
        << " failed reps)\n";
    if (failed > 0.10) {
        err << "error: " << run.failed << " of " << run.reps.size() << " repetitions failed\n";
        return kExitNumerical;
    }
    return kExitOk;
}

// --------------------------------------------------------------- enumerate

struct EnumerateOptions {
    std::string data_path;
    std::string thresholds_path;
    std::string method = "fratio";
    std::string mode;
    bool whiten = false;
    std::optional<double> snr_db;
    int k_max = kDefaultKMax;
    double alpha = 0.05;
    bool extend_thresholds = false;
    std::string sensors_path;
    std::string grid_path;
};

std::shared_ptr<const LeadFieldSet> reconstruction_for_enumerate(const Config& c, const EnumerateOptions& e) {
    const SphereHeadModel head = head_model(c);
    SensorArray sensors;
    std::shared_ptr<const SourceGrid> grid;
    auto load = [](const std::string& path, auto parse) {
        try {
            return parse(read_file(path), path);
        } catch (const ParseError& pe) {
            throw DataError(pe.what());
        } catch (const InvalidInput& ex) {
            throw DataError(ex.what());
        }
    };
    if (!e.sensors_path.empty()) {
        sensors = load(e.sensors_path, parse_sensors);
    } else {
        sensors = make_hemisphere_sensor_array(static_cast<std::size_t>(c.get_int("sensor_count", 102)),
                                               c.get_double("sensor_shell_radius", 0.12), head);
    }
    if (!e.grid_path.empty()) {
        grid = std::make_shared<const SourceGrid>(load(e.grid_path, parse_grid));
    } else {
        GridSpec gs;
        gs.count = static_cast<std::size_t>(c.get_int("reconstruction_points", 5000));
        gs.stream_seed = c.get_u64("reconstruction_grid_seed", 2);
        if (!is_phantom(c) && mode_of(c) == OrientationMode::fixed)
            gs.orientation_field_seed = c.get_u64("orientation_field_seed", 3);
        const SourceGrid base = make_shell_grid(gs, head);
        const auto errs = c.get_vec3s("model_error_mm", {Vec3::Zero()});
        if (errs.size() != 1) throw UsageError("model_error_mm must be a single x,y,z triple");
        grid = std::make_shared<const SourceGrid>(translate_grid(base, errs.front(), head).grid);
    }
    return std::make_shared<const LeadFieldSet>(build_lead_fields(grid, sensors, head));
}

int cmd_enumerate(const Config& c, const CommonOptions& opts, const EnumerateOptions& e, std::ostream& out,
                  std::ostream& err) {
    const std::string started = iso_now();
    EnumerationMethod method;
    if (e.method == "fratio") method = EnumerationMethod::fratio;
    else if (e.method == "nominal") method = EnumerationMethod::fratio_nominal;
    else if (e.method == "aic") method = EnumerationMethod::aic;
    else if (e.method == "mdl") method = EnumerationMethod::mdl;
    else throw UsageError("--method must be fratio, nominal, aic or mdl");

    const OrientationMode mode = e.mode.empty() ? mode_of(c, is_phantom(c) ? "free" : "fixed")
                                                : parse_orientation_mode(e.mode);
    const bool extend = e.extend_thresholds || c.get_bool("extend_thresholds", false);
    std::optional<ThresholdTable> table;
    const std::string thresholds_path = !e.thresholds_path.empty() ? e.thresholds_path : c.get_string("thresholds", "");
    if (method == EnumerationMethod::fratio) {
        if (thresholds_path.empty()) throw UsageError("--method fratio needs --thresholds <csv>");
        try {
            table = parse_thresholds(read_file(thresholds_path), thresholds_path);
        } catch (const ParseError& pe) {
            throw DataError(pe.what());
        } catch (const InvalidInput& ex) {
            throw DataError(ex.what());
        }
    }

    std::shared_ptr<const LeadFieldSet> lf = reconstruction_for_enumerate(c, e);
    warn_unused(c, opts, err);

    Matrix data;
    std::optional<double> snr = e.snr_db;
    std::string text;
    try {
        text = read_file(e.data_path);
    } catch (const InvalidInput& ex) {
        throw DataError(ex.what());
    }
    try {
        if (e.whiten) {
            const TrialSet trials = parse_trials(text, e.data_path);
            if (trials.trials.front().rows() != lf->sensor_count())
                throw DataError("data has " + std::to_string(trials.trials.front().rows()) + " channels but the lead fields have " +
                                std::to_string(lf->sensor_count()) + " sensors");
            const AveragedTrials avg = average_trials(trials);
            const SpatialWhitener w = build_spatial_whitener(noise_covariance(avg.baseline));
            data = w.matrix * avg.post;
            if (!snr) snr = estimate_snr(data, w.matrix * avg.baseline);
            lf = std::make_shared<const LeadFieldSet>(lf->transformed(w.matrix));
        } else {
            data = parse_measurement(text, e.data_path).data;
        }
    } catch (const ParseError& pe) {
        throw DataError(pe.what());
    }
    if (data.rows() != lf->sensor_count())
        throw DataError("data has " + std::to_string(data.rows()) + " channels but the lead fields have " +
                        std::to_string(lf->sensor_count()) + " sensors");

    const Vector eig = eigen_spectrum(data);
    const int q_aic = aic_estimate(eig, data.cols());
    const int q_mdl = mdl_estimate(eig, data.cols());

    EnumerationResult result;
    if (method == EnumerationMethod::fratio) {
        if (!snr) {
            const auto bins = table->bins();
            if (bins.size() != 1) throw UsageError("SNR unknown: pass --snr-db or --whiten to estimate it");
            snr = bins.front();
        }
        const ThresholdTable use = extend ? table->extended(e.k_max) : *table;
        result = sequential_estimate(data, *lf, use, *snr, e.k_max, mode);
    } else if (method == EnumerationMethod::fratio_nominal) {
        result = nominal_estimate(data, *lf, e.alpha, e.k_max, mode);
    } else {
        result.method = method;
        result.q_hat = method == EnumerationMethod::aic ? q_aic : q_mdl;
    }

    std::string report = format_enumeration(result);
    if (snr) report += "snr_db=" + fmt(*snr, 17) + "\n";
    report += "q_hat_aic=" + std::to_string(q_aic) + "\nq_hat_mdl=" + std::to_string(q_mdl) + "\n";
    OutputSet outputs(opts.out_dir);
    outputs.write("enumeration.txt", report);
    write_manifest(outputs, "enumerate", c, started);

    out << "q_hat=" << result.q_hat << "\n";
    out << "q_hat_aic=" << q_aic << "\nq_hat_mdl=" << q_mdl << "\n";
    if (result.saturated) err << "warning: every test up to k_max=" << e.k_max << " rejected (saturated)\n";
    return kExitOk;
}

// ----------------------------------------------------------------- compare

int cmd_compare(const Config& c, const CommonOptions& opts, const std::string& thresholds_arg, bool extend_arg,
                std::ostream& out, std::ostream& err) {
    const std::string started = iso_now();
    CalibrationGrid grid = calibration_grid(c);
    try {
        grid.validate_scenarios();
    } catch (const InvalidInput& ex) {
        throw UsageError(ex.what());
    }
    grid.base_seed = hash64(grid.base_seed, kCompareStream);  // disjoint from calibration reps

    const std::string thresholds_path = !thresholds_arg.empty() ? thresholds_arg : c.get_string("thresholds", "");
    if (thresholds_path.empty()) throw UsageError("compare needs a threshold table: --thresholds <csv>");
    ThresholdTable table;
    try {
        table = parse_thresholds(read_file(thresholds_path), thresholds_path);
    } catch (const ParseError& pe) {
        throw DataError(pe.what());
    } catch (const InvalidInput& ex) {
        throw DataError(ex.what());
    }
    const int k_max = c.get_int("k_max", *std::max_element(grid.q_levels.begin(), grid.q_levels.end()) + 1);
    if (extend_arg || c.get_bool("extend_thresholds", false)) table = table.extended(k_max);
    for (double bin : table.bins())
        for (int k = 0; k < k_max; ++k)
            if (!table.find(bin, k)) throw DataError(MissingThreshold(bin, k).what());

    const auto world = make_world(c, grid.model_errors_mm, err);
    warn_unused(c, opts, err);

    struct Item {
        CellCondition cond;
        std::uint64_t seed;
    };
    std::vector<Item> items;
    for (std::size_t s = 0; s < grid.snr_levels_db.size(); ++s)
        for (std::size_t q = 0; q < grid.q_levels.size(); ++q)
            for (std::size_t r = 0; r < grid.rho_levels.size(); ++r)
                for (std::size_t e = 0; e < grid.model_errors_mm.size(); ++e)
                    for (int rep = 0; rep < grid.reps; ++rep)
                        items.push_back({CellCondition{grid.snr_levels_db[s], grid.q_levels[q], grid.rho_levels[r],
                                                       grid.model_errors_mm[e], rep},
                                         rep_seed(grid, s, q, r, e, rep)});

    std::vector<ComparisonRow> rows(items.size());
    std::vector<char> ok(items.size(), 0);
    std::mutex log;
    err << "comparing on " << items.size() << " repetitions\n";
    parallel_for(items.size(), [&](std::size_t i) {
        const Item& it = items[i];
        ComparisonRow& row = rows[i];
        row.run_id = i;
        row.seed = it.seed;
        row.q_true = it.cond.q_true;
        row.rho = it.cond.rho;
        row.snr_db = it.cond.snr_db;
        row.model_error_mm = it.cond.model_error_mm;
        try {
            const PreparedTrial trial = world->prepare(it.cond, it.seed);
            const ApProblem problem(trial.data, *trial.leadfields, trial.mode);
            const double bin = table.nearest_bin(trial.snr_db);
            row.q_hat_fratio =
                sequential_estimate(problem, [&](const FStep& st) { return table.find(bin, st.k_reduced)->threshold; },
                                    k_max)
                    .q_hat;
            const Vector eig = eigen_spectrum(trial.data);
            row.q_hat_aic = aic_estimate(eig, trial.data.cols());
            row.q_hat_mdl = mdl_estimate(eig, trial.data.cols());
            ok[i] = 1;
        } catch (const std::exception& ex) {
            const std::lock_guard lock(log);
            err << "rep " << i << " failed: " << ex.what() << '\n';
        }
    });

    std::vector<ComparisonRow> good;
    for (std::size_t i = 0; i < rows.size(); ++i)
        if (ok[i]) good.push_back(rows[i]);

    struct Tally {
        std::size_t n = 0, f = 0, a = 0, m = 0;
    };
    std::map<std::tuple<double, double, int>, Tally> cells;
    for (const auto& r : good) {
        Tally& t = cells[{r.snr_db, r.rho, r.q_true}];
        ++t.n;
        t.f += r.q_hat_fratio == r.q_true;
        t.a += r.q_hat_aic == r.q_true;
        t.m += r.q_hat_mdl == r.q_true;
    }
    std::string summary = "snr_db,rho,q_true,reps,accuracy_fratio,accuracy_aic,accuracy_mdl\n";
    out << "snr_db  rho   Q  reps  fratio  aic    mdl\n";
    for (const auto& [key, t] : cells) {
        const auto [snr, rho, q] = key;
        const double n = static_cast<double>(t.n);
        summary += short_number(snr) + ',' + short_number(rho) + ',' + std::to_string(q) + ',' + std::to_string(t.n) + ',' +
                   short_number(t.f / n) + ',' + short_number(t.a / n) + ',' + short_number(t.m / n) + '\n';
        out << std::setw(6) << snr << "  " << std::setw(4) << rho << "  " << q << "  " << std::setw(4) << t.n << "  "
            << std::setw(6) << fmt(t.f / n, 3) << "  " << std::setw(5) << fmt(t.a / n, 3) << "  " << std::setw(5)
            << fmt(t.m / n, 3) << '\n';
    }

    OutputSet outputs(opts.out_dir);
    outputs.write("results.csv", format_results(rows));
    outputs.write("summary.csv", summary);
    write_manifest(outputs, "compare", c, started);

    const std::size_t failed = items.size() - good.size();
    if (static_cast<double>(failed) > 0.10 * static_cast<double>(items.size())) {
        err << "error: " << failed << " of " << items.size() << " repetitions failed\n";
        return kExitNumerical;
    }
    return kExitOk;
}

// ------------------------------------------------------------------ report

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

CsvTable read_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    CsvTable t;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) continue;
        std::vector<std::string> f;
        std::stringstream ss(line);
        for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
        if (t.header.empty()) {
            t.header = f;
        } else {
            if (f.size() + 1 == t.header.size() && line.back() == ',') f.emplace_back();
            if (f.size() != t.header.size()) throw ParseError(path, n, "wrong number of fields");
            t.rows.push_back(f);
        }
    }
    return t;
}

int cmd_report(const CommonOptions& opts, std::string thresholds, std::string curves, std::string results,
               std::ostream& out) {
    const fs::path dir(opts.out_dir);
    auto pick = [&](std::string& p, const char* name) {
        if (p.empty() && fs::exists(dir / name)) p = (dir / name).string();
    };
    pick(thresholds, "thresholds.csv");
    pick(curves, "curves.csv");
    pick(results, "summary.csv");
    if (thresholds.empty() && curves.empty() && results.empty())
        throw UsageError("nothing to report: pass --thresholds, --curves or --results, or --out <dir> with outputs");

    std::ostringstream rep;
    if (!thresholds.empty()) {
        ThresholdTable table;
        try {
            table = parse_thresholds(read_file(thresholds), thresholds);
        } catch (const ParseError& e) {
            throw DataError(e.what());
        }
        std::set<int> ks;
        for (const auto& [key, _] : table.entries()) ks.insert(key.second);
        rep << "threshold table (rows: SNR dB, columns: k_reduced)\n";
        rep << "snr_db";
        for (int k : ks) rep << ",k" << k;
        rep << '\n';
        for (double bin : table.bins()) {
            rep << bin;
            for (int k : ks) {
                const auto e = table.find(bin, k);
                rep << ',' << (e ? fmt(e->threshold, 6) : "");
            }
            rep << '\n';
        }
        rep << '\n';
    }
    if (!curves.empty()) {
        const CsvTable t = read_csv(curves);
        if (t.header != std::vector<std::string>{"snr_db", "q_true", "threshold", "accuracy"})
            throw DataError(curves + ": unexpected header");
        std::map<std::pair<std::string, std::string>, std::pair<double, double>> best;
        for (const auto& r : t.rows) {
            const double acc = std::stod(r[3]);
            auto& b = best.try_emplace({r[0], r[1]}, std::stod(r[2]), -1.0).first->second;
            if (acc >= b.second) b = {std::stod(r[2]), acc};
        }
        rep << "peak accuracy per cell\nsnr_db,q_true,threshold,accuracy\n";
        for (const auto& [key, b] : best)
            rep << key.first << ',' << key.second << ',' << fmt(b.first, 6) << ',' << fmt(b.second, 4) << '\n';
        rep << '\n';
    }
    if (!results.empty()) {
        const CsvTable t = read_csv(results);
        rep << "method comparison (" << results << ")\n";
        for (std::size_t i = 0; i < t.header.size(); ++i) rep << (i ? "," : "") << t.header[i];
        rep << '\n';
        for (const auto& r : t.rows) {
            for (std::size_t i = 0; i < r.size(); ++i) rep << (i ? "," : "") << r[i];
            rep << '\n';
        }
    }
    out << rep.str();
    return kExitOk;
}

}  // namespace

Config preset_config(const std::string& name) {
    if (name == "desk") return parse_preset(kDeskPreset);
    if (name == "paper") {
        Config c = parse_preset(kDeskPreset);
        c.merge(parse_preset(kPaperOverrides));
        return c;
    }
    if (name == "phantom") return parse_preset(kPhantomPreset);
    throw UsageError("unknown preset '" + name + "' (expected desk, paper or phantom)");
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Source-count estimation for MEG dipole models", "meg-enum"};
    app.set_version_flag("--version", kToolVersion);
    app.require_subcommand(1);

    CommonOptions common;
    auto add_common = [&](CLI::App* sub, bool with_config = true) {
        if (with_config) {
            sub->add_option("--config", common.config_path, "key = value configuration file");
            sub->add_option("--seed", common.seed, "base seed (overrides base_seed)");
            sub->add_option("--preset", common.preset, "desk | paper | phantom");
            sub->add_option("--set", common.overrides, "override one configuration key (key=value)");
        }
        sub->add_option("--out", common.out_dir, "output directory")->capture_default_str();
    };

    CLI::App* simulate = app.add_subcommand("simulate", "simulate one scenario and write the measurement");
    add_common(simulate);
    CLI::App* calibrate = app.add_subcommand("calibrate", "calibrate F-ratio thresholds over a scenario grid");
    add_common(calibrate);

    EnumerateOptions en;
    CLI::App* enumerate = app.add_subcommand("enumerate", "estimate the number of sources in a data file");
    add_common(enumerate);
    enumerate->add_option("data", en.data_path, "measurement file (or trial file with --whiten)")->required();
    enumerate->add_option("--thresholds", en.thresholds_path, "threshold table CSV");
    enumerate->add_option("--method", en.method, "fratio | nominal | aic | mdl")->capture_default_str();
    enumerate->add_option("--mode", en.mode, "fixed | free (default from configuration)");
    enumerate->add_flag("--whiten", en.whiten, "input is a trial file: LPC and spatial whitening, SNR estimation");
    enumerate->add_option("--snr-db", en.snr_db, "SNR used for the threshold lookup");
    enumerate->add_option("--k-max", en.k_max, "largest model order tested")->capture_default_str();
    enumerate->add_option("--alpha", en.alpha, "level for --method nominal")->capture_default_str();
    enumerate->add_flag("--extend-thresholds", en.extend_thresholds,
                        "fill uncalibrated k from the nearest calibrated k");
    enumerate->add_option("--sensors", en.sensors_path, "sensor CSV (x,y,z,ox,oy,oz)");
    enumerate->add_option("--grid", en.grid_path, "reconstruction grid CSV");

    std::string cmp_thresholds;
    bool cmp_extend = false;
    CLI::App* compare = app.add_subcommand("compare", "compare F-ratio, AIC and MDL on identical data");
    add_common(compare);
    compare->add_option("--thresholds", cmp_thresholds, "threshold table CSV");
    compare->add_flag("--extend-thresholds", cmp_extend, "fill uncalibrated k from the nearest calibrated k");

    std::string rep_thresholds, rep_curves, rep_results;
    CLI::App* report = app.add_subcommand("report", "print plot-ready tables from earlier outputs");
    add_common(report, false);
    report->add_option("--thresholds", rep_thresholds, "thresholds.csv");
    report->add_option("--curves", rep_curves, "curves.csv");
    report->add_option("--results", rep_results, "summary.csv from compare");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForVersion&) {
        out << kToolVersion << '\n';
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << "run with --help for usage\n";
        return kExitUsage;
    }

    try {
        if (report->parsed()) return cmd_report(common, rep_thresholds, rep_curves, rep_results, out);
        Config config;
        try {
            config = resolve_config(common);
        } catch (const ParseError& e) {
            throw UsageError(e.what());
        }
        try {
            if (simulate->parsed()) return cmd_simulate(config, common, out, err);
            if (calibrate->parsed()) return cmd_calibrate(config, common, out, err);
            if (enumerate->parsed()) return cmd_enumerate(config, common, en, out, err);
            if (compare->parsed()) return cmd_compare(config, common, cmp_thresholds, cmp_extend, out, err);
        } catch (const ParseError& e) {
            // configuration values are parsed lazily; data files are wrapped as DataError above
            throw UsageError(e.what());
        }
    } catch (const UsageError& e) {
        err << "error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const DataError& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const InvalidInput& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    } catch (const NumericalError& e) {
        err << "numerical failure: " << e.what() << "\n";
        return kExitNumerical;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitData;
    }
    return kExitUsage;
}

}  // namespace megenum
