#pragma once

#include "megenum/forward.hpp"
#include "megenum/localize.hpp"
#include "megenum/types.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace megenum {

/// Residual degrees of freedom: MN - (3 + N) K for fixed orientation,
/// MN - (4 + N) K for free orientation. Throws ModelCapacityError when <= 0.
std::int64_t dof(std::int64_t m, std::int64_t n, std::int64_t k, OrientationMode mode);

struct FRatio {
    double value = 0.0;
    bool perfect_full_fit = false;  ///< ss_full == 0: value is +inf
    bool non_nested = false;        ///< ss_full > ss_reduced
};

/// (ss_reduced / dof_reduced) / (ss_full / dof_full). A reduced model that
/// already fits perfectly (ss_reduced == 0) yields 0: nothing is left to explain.
FRatio f_ratio(double ss_reduced, double ss_full, std::int64_t dof_reduced, std::int64_t dof_full);

/// Upper-alpha quantile of F(dof_reduced, dof_full).
double nominal_threshold(std::int64_t dof_reduced, std::int64_t dof_full, double alpha);

class MissingThreshold : public InvalidInput {
public:
    MissingThreshold(double snr_bin, int k)
        : InvalidInput("threshold table has no entry for SNR bin " + std::to_string(snr_bin) + " dB, k_reduced " +
                       std::to_string(k)),
          snr_bin_(snr_bin),
          k_(k) {}
    double snr_bin() const { return snr_bin_; }
    int k() const { return k_; }

private:
    double snr_bin_;
    int k_;
};

/// Calibrated F thresholds indexed by (SNR bin, reduced-model order).
class ThresholdTable {
public:
    struct Entry {
        double threshold = 0.0;
        double mean_accuracy = std::numeric_limits<double>::quiet_NaN();
    };

    void set(double snr_db, int k_reduced, double threshold,
             double mean_accuracy = std::numeric_limits<double>::quiet_NaN());

    bool empty() const { return entries_.empty(); }
    std::vector<double> bins() const;
    std::vector<int> orders(double snr_bin) const;
    std::optional<Entry> find(double snr_bin, int k_reduced) const;

    /// Nearest SNR bin; exact midpoints go to the lower bin.
    double nearest_bin(double snr_db) const;

    /// Threshold at the nearest bin for exactly this k; throws MissingThreshold.
    double lookup(double snr_db, int k_reduced) const;

    /// Copy in which every bin covers k = 0 .. k_max - 1, missing orders taking
    /// the value of the nearest calibrated order in the same bin (ties: lower).
    ThresholdTable extended(int k_max) const;

    static ThresholdTable uniform(double threshold, int k_max, const std::vector<double>& bins = {0.0});

    const std::map<std::pair<double, int>, Entry>& entries() const { return entries_; }

private:
    std::map<std::pair<double, int>, Entry> entries_;
};

enum class EnumerationMethod { fratio, fratio_nominal, aic, mdl };
std::string_view to_string(EnumerationMethod method);

struct FStep {
    int k_reduced = 0;
    double ss_reduced = 0.0;
    double ss_full = 0.0;
    std::int64_t dof_reduced = 0;
    std::int64_t dof_full = 0;
    FRatio f;
    double threshold = 0.0;
    bool reject = false;  ///< reduced model rejected: F > threshold
};

struct EnumerationResult {
    int q_hat = 0;
    EnumerationMethod method = EnumerationMethod::fratio;
    std::vector<FStep> steps;
    std::vector<bool> clamp_flags;  ///< per step: residuals were not nested
    bool saturated = false;         ///< every test up to k_max rejected
    double snr_bin = std::numeric_limits<double>::quiet_NaN();
};

inline constexpr int kDefaultKMax = 10;
/// Residuals below this fraction of the total sum of squares are exact fits.
inline constexpr double kPerfectFitRelTol = 1e-18;

/// F_{k -> k+1} for k = 0 .. k_last, reusing one fit per model order.
std::vector<FStep> f_cascade(const ApProblem& problem, int k_last, const ApOptions& options = {});

/// Sequential F-ratio procedure with thresholds chosen per step by `threshold_for`.
EnumerationResult sequential_estimate(const ApProblem& problem,
                                      const std::function<double(const FStep&)>& threshold_for, int k_max,
                                      const ApOptions& options = {});

/// Sequential F-ratio procedure with a calibrated table (nearest SNR bin).
EnumerationResult sequential_estimate(const Matrix& data, const LeadFieldSet& leadfields,
                                      const ThresholdTable& thresholds, double snr_db, int k_max,
                                      OrientationMode mode, const ApOptions& options = {});

/// Sequential F-ratio procedure against nominal F quantiles at level alpha.
EnumerationResult nominal_estimate(const Matrix& data, const LeadFieldSet& leadfields, double alpha, int k_max,
                                   OrientationMode mode, const ApOptions& options = {});

/// Decision of the sequential rule on a stored cascade with one threshold per
/// step. Returns steps.size() when every stored test rejects.
int decide(const std::vector<FStep>& steps, const std::function<double(int)>& threshold_for_k);

/// Eigenvalues of (1/N) data data^T, descending, clamped at zero.
Vector eigen_spectrum(const Matrix& data);

int aic_estimate(const Vector& eigenvalues, std::int64_t n);
int mdl_estimate(const Vector& eigenvalues, std::int64_t n);

}  // namespace megenum
