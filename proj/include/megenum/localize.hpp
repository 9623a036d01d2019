#pragma once

#include "megenum/forward.hpp"
#include "megenum/types.hpp"

#include <string>
#include <vector>

namespace megenum {

struct DipoleFit {
    int k = 0;
    std::vector<std::size_t> point_indices;
    std::vector<Vec3> orientations;
    Matrix amplitudes;         ///< K x N
    double residual_ss = 0.0;  ///< sum over t of |y(t) - y_fit(t)|^2
    int passes_used = 0;
    /// Explained energy after phase 1 followed by one entry per refinement pass.
    std::vector<double> objective_trace;
    std::vector<std::string> flags;
};

struct SubspaceFit {
    Matrix amplitudes;
    double residual_ss = 0.0;
};

inline constexpr double kMaxTopographyCondition = 1e8;

/// Least-squares amplitudes for fixed topographies and the residual sum of squares.
SubspaceFit subspace_fit(const Matrix& data, const Matrix& topographies);

struct OrientationFit {
    Vec3 orientation = Vec3::UnitX();
    double fit_value = 0.0;
    bool silent = false;  ///< deflated gain numerically zero
};

/// Unit orientation maximizing the deflated explained energy
///   |(P y)^T P g|^2 / |P g|^2 summed over time, g = gain * o,
/// where P = `existing_projector` (identity when nothing is deflated).
OrientationFit best_orientation(const Matrix& data, const Eigen::Matrix<double, Eigen::Dynamic, 3>& gain,
                                const Matrix& existing_projector);

/// Maximizes o^T A o / o^T B o over unit o for symmetric A and positive
/// semidefinite B, restricted to the range of B.
OrientationFit max_generalized_rayleigh(const Eigen::Matrix3d& numerator, const Eigen::Matrix3d& denominator);

struct ApOptions {
    int max_passes = 10;
};

/// Alternating-projection localizer bound to one data matrix (copied) and one
/// lead-field set (referenced; must outlive the problem). Data-dependent
/// scan quantities are computed once so fits of several model orders share them.
class ApProblem {
public:
    ApProblem(const Matrix& data, const LeadFieldSet& leadfields, OrientationMode mode);

    DipoleFit fit(int k, const ApOptions& options = {}) const;

    double total_ss() const { return total_ss_; }
    Eigen::Index sensor_count() const { return data_.rows(); }
    Eigen::Index sample_count() const { return data_.cols(); }
    OrientationMode mode() const { return mode_; }

private:
    struct Candidate {
        std::size_t index = 0;
        Vec3 orientation = Vec3::Zero();
        double value = -1.0;  ///< explained-energy increment; < 0 when nothing valid
    };
    struct Selected {
        std::size_t index;
        Vec3 orientation;
        Vector topo;
    };

    Candidate scan(const Matrix& basis, const std::vector<std::size_t>& excluded) const;
    Vector topography_of(std::size_t index, const Vec3& orientation) const;
    double explained(const std::vector<Selected>& sources) const;

    Matrix data_;
    const LeadFieldSet& leadfields_;
    OrientationMode mode_;
    Matrix cov_;  ///< data * data^T
    double total_ss_ = 0.0;
    // fixed mode: topography matrix and per-point |t|^2, t^T C t
    Matrix topos_;
    Vector topo_sq_;
    Vector topo_energy_;
    // free mode: per-point 3x3 G^T G and G^T C G, stored as 3 x 3P blocks
    Matrix gram_;
    Matrix energy_;
};

/// Convenience wrapper: ApProblem(data, leadfields, mode).fit(k, options).
DipoleFit ap_localize(const Matrix& data, const LeadFieldSet& leadfields, int k, OrientationMode mode,
                      const ApOptions& options = {});

}  // namespace megenum
