#pragma once

#include "megenum/calibrate.hpp"
#include "megenum/enumerate.hpp"
#include "megenum/forward.hpp"
#include "megenum/simulate.hpp"
#include "megenum/whiten.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace megenum {

namespace fs = std::filesystem;

/// Writes `content` to a sibling temporary file and renames it into place.
void write_file_atomic(const fs::path& path, const std::string& content);
std::string read_file(const fs::path& path);

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(const std::string& bytes);

/// Shortest text that reads back as the same double.
std::string short_number(double v);

// Plain-text matrices: a header line, then one row per line, values
// separated by single spaces and printed with 17 significant digits.

/// Header `M N sampling_rate_hz`.
std::string format_measurement(const MeasurementSet& measurement);
MeasurementSet parse_measurement(const std::string& text, const std::string& source = "<measurement>");

/// Header `T M N_total baseline_samples`, then T blocks of M rows.
std::string format_trials(const TrialSet& trials);
TrialSet parse_trials(const std::string& text, const std::string& source = "<trials>");

/// CSV `x,y,z,ox,oy,oz`.
std::string format_sensors(const SensorArray& sensors);
SensorArray parse_sensors(const std::string& text, const std::string& source = "<sensors>");

/// CSV `x,y,z` or, for fixed-orientation grids, `x,y,z,ox,oy,oz`.
std::string format_grid(const SourceGrid& grid);
SourceGrid parse_grid(const std::string& text, const std::string& source = "<grid>");

/// CSV `snr_db,k_reduced,threshold,mean_accuracy`; the last column is optional on input.
std::string format_thresholds(const ThresholdTable& table);
ThresholdTable parse_thresholds(const std::string& text, const std::string& source = "<thresholds>");

/// CSV `snr_db,q_true,threshold,accuracy`.
std::string format_curves(const std::vector<AccuracyCurve>& curves);

struct ComparisonRow {
    std::size_t run_id = 0;
    std::uint64_t seed = 0;
    int q_true = 0;
    double rho = 0.0;
    double snr_db = 0.0;
    Vec3 model_error_mm = Vec3::Zero();
    int q_hat_fratio = -1;
    int q_hat_aic = -1;
    int q_hat_mdl = -1;
};

inline constexpr const char* kResultsHeader =
    "run_id,seed,q_true,rho,snr_db,err_x_mm,err_y_mm,err_z_mm,q_hat_fratio,q_hat_aic,q_hat_mdl";
std::string format_results(const std::vector<ComparisonRow>& rows);

/// Ground truth of a simulated scenario as `key=value` lines and one CSV block.
std::string format_truth(const ScenarioSpec& spec, const SourceSet& truth, const SourceGrid& grid);

/// Structured text record of an enumeration run.
std::string format_enumeration(const EnumerationResult& result);

/// `key = value` configuration with `#` comments. Every accessor reports the
/// offending line and key on malformed values.
class Config {
public:
    static Config parse(const std::string& text, const std::string& source = "<config>");
    static Config load(const fs::path& path);

    /// Command-line override `key=value`.
    void set_override(const std::string& assignment);
    void set(const std::string& key, const std::string& value, const std::string& origin = "<override>");
    /// Entries of `other` replace ours, keeping their origin and line numbers.
    void merge(const Config& other);

    bool has(const std::string& key) const;
    std::string get_string(const std::string& key, const std::string& fallback) const;
    std::string require_string(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    double require_double(const std::string& key) const;
    int get_int(const std::string& key, int fallback) const;
    std::uint64_t get_u64(const std::string& key, std::uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
    std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
    /// Triples separated by `;`, components by `,`.
    std::vector<Vec3> get_vec3s(const std::string& key, const std::vector<Vec3>& fallback) const;

    /// Keys from `origin` that no accessor asked for.
    std::vector<std::string> unused_keys(const std::string& origin) const;
    std::map<std::string, std::string> snapshot() const;
    const std::string& source() const { return source_; }

private:
    struct Entry {
        std::string value;
        std::string origin;
        int line = 0;  ///< 0 when not read from a file
    };
    const Entry* lookup(const std::string& key) const;
    [[noreturn]] void fail(const std::string& key, const std::string& message) const;

    std::string source_ = "<config>";
    std::map<std::string, Entry> entries_;
    mutable std::set<std::string> used_;
};

}  // namespace megenum
