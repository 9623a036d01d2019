#include "megenum/localize.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace megenum {

namespace {

using Mat3 = Eigen::Matrix3d;

// Candidates whose deflated topography keeps less than this fraction of its
// squared norm (sin^2 of the angle to the deflated span) are inadmissible.
// With unit-norm columns this bounds the topography condition number well
// below kMaxTopographyCondition.
constexpr double kMinDeflatedFraction = 1e-12;
constexpr double kImprovementTolerance = 1e-12;

Matrix orthonormal_basis(const std::vector<const Vector*>& columns, Eigen::Index rows) {
    if (columns.empty()) return Matrix(rows, 0);
    Matrix t(rows, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t i = 0; i < columns.size(); ++i) t.col(static_cast<Eigen::Index>(i)) = *columns[i];
    Eigen::HouseholderQR<Matrix> qr(t);
    return qr.householderQ() * Matrix::Identity(rows, t.cols());
}

// Largest eigenpair of a symmetric 2x2 matrix.
std::pair<double, Eigen::Vector2d> top_eigen_2x2(const Eigen::Matrix2d& m) {
    const double a = m(0, 0), b = m(0, 1), d = m(1, 1);
    const double mean = 0.5 * (a + d);
    const double half_gap = std::hypot(0.5 * (a - d), b);
    const double lambda = mean + half_gap;
    Eigen::Vector2d v;
    if (half_gap == 0.0) {
        v << 1.0, 0.0;
    } else if (a >= d) {
        v << lambda - d, b;
    } else {
        v << b, lambda - a;
    }
    return {lambda, v.normalized()};
}

OrientationFit generalized_rayleigh(const Mat3& numerator, const Mat3& denominator, double floor, bool fast) {
    Eigen::SelfAdjointEigenSolver<Mat3> den;
    if (fast) {
        den.computeDirect(denominator);
    } else {
        den.compute(denominator);
    }
    const Eigen::Vector3d mu = den.eigenvalues();
    const double cutoff = floor >= 0.0 ? floor : 1e-12 * std::max(mu.maxCoeff(), 0.0);
    Eigen::Matrix<double, 3, Eigen::Dynamic> w(3, 0);
    for (int i = 2; i >= 0; --i) {
        if (mu(i) > cutoff && mu(i) > 0.0) {
            w.conservativeResize(Eigen::NoChange, w.cols() + 1);
            w.col(w.cols() - 1) = den.eigenvectors().col(i) / std::sqrt(mu(i));
        }
    }
    OrientationFit fit;
    if (w.cols() == 0) {
        fit.silent = true;
        return fit;
    }
    const Eigen::MatrixXd reduced = w.transpose() * numerator * w;
    Eigen::Vector3d o;
    if (w.cols() == 1) {
        fit.fit_value = reduced(0, 0);
        o = w.col(0);
    } else if (w.cols() == 2) {
        const auto [lambda, v] = top_eigen_2x2(0.5 * (reduced + reduced.transpose()));
        fit.fit_value = lambda;
        o = w * v;
    } else {
        Eigen::SelfAdjointEigenSolver<Mat3> red(0.5 * (reduced + reduced.transpose()));
        fit.fit_value = red.eigenvalues()(2);
        o = w * red.eigenvectors().col(2);
    }
    fit.orientation = o.normalized();
    // canonical sign: largest-magnitude component positive
    Eigen::Index imax = 0;
    fit.orientation.cwiseAbs().maxCoeff(&imax);
    if (fit.orientation(imax) < 0) fit.orientation = -fit.orientation;
    return fit;
}

}  // namespace

SubspaceFit subspace_fit(const Matrix& data, const Matrix& topographies) {
    if (topographies.rows() != data.rows()) throw InvalidInput("topographies and data differ in sensor count");
    SubspaceFit out;
    const Eigen::Index k = topographies.cols();
    if (k == 0) {
        out.amplitudes = Matrix(0, data.cols());
        out.residual_ss = data.squaredNorm();
        return out;
    }
    Eigen::JacobiSVD<Matrix> svd(topographies, Eigen::ComputeThinV);
    const Vector& sv = svd.singularValues();
    if (!(sv(k - 1) > 0.0) || sv(0) / sv(k - 1) > kMaxTopographyCondition) {
        const Vector null = svd.matrixV().col(k - 1).cwiseAbs();
        std::ostringstream os;
        os << "topographies are (nearly) collinear; involved columns:";
        for (Eigen::Index i = 0; i < k; ++i)
            if (null(i) > 0.1 * null.maxCoeff()) os << " " << i;
        throw DegenerateModel(os.str());
    }
    Eigen::HouseholderQR<Matrix> qr(topographies);
    out.amplitudes = qr.solve(data);
    out.residual_ss = (data - topographies * out.amplitudes).squaredNorm();
    return out;
}

OrientationFit max_generalized_rayleigh(const Eigen::Matrix3d& numerator, const Eigen::Matrix3d& denominator) {
    return generalized_rayleigh(numerator, denominator, -1.0, false);
}

OrientationFit best_orientation(const Matrix& data, const Eigen::Matrix<double, Eigen::Dynamic, 3>& gain,
                                const Matrix& existing_projector) {
    if (gain.rows() != data.rows()) throw InvalidInput("gain and data differ in sensor count");
    if (!gain.allFinite()) throw InvalidInput("gain has non-finite entries");
    Matrix deflated_gain = gain;
    if (existing_projector.size() != 0) {
        if (existing_projector.rows() != data.rows() || existing_projector.cols() != data.rows())
            throw InvalidInput("projector has the wrong shape");
        deflated_gain = existing_projector * gain;
    }
    const Matrix dy = deflated_gain.transpose() * data;  // 3 x N
    const Mat3 numerator = dy * dy.transpose();
    const Mat3 denominator = deflated_gain.transpose() * deflated_gain;
    const double floor = 1e-12 * (gain.transpose() * gain).trace();
    return generalized_rayleigh(numerator, denominator, floor, false);
}

ApProblem::ApProblem(const Matrix& data, const LeadFieldSet& leadfields, OrientationMode mode)
    : data_(data), leadfields_(leadfields), mode_(mode) {
    if (data.rows() != leadfields.sensor_count())
        throw InvalidInput("data has " + std::to_string(data.rows()) + " sensors but lead fields have " +
                           std::to_string(leadfields.sensor_count()));
    if (leadfields.point_count() == 0) throw InvalidInput("reconstruction grid is empty");
    if (!data.allFinite()) throw InvalidInput("data contains non-finite values");

    cov_ = data * data.transpose();
    total_ss_ = data.squaredNorm();

    // factor with factor^T factor = cov_, at most min(M, N) rows
    Matrix factor;
    if (data.cols() <= data.rows()) {
        factor = data.transpose();
    } else {
        Eigen::SelfAdjointEigenSolver<Matrix> eig(cov_);
        const Vector root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
        factor = root.asDiagonal() * eig.eigenvectors().transpose();
    }

    const auto points = static_cast<Eigen::Index>(leadfields.point_count());
    if (mode == OrientationMode::fixed) {
        const auto& orient = leadfields.grid().fixed_orientations;
        if (!orient) throw InvalidInput("fixed-orientation mode requires grid orientations");
        topos_.resize(data.rows(), points);
        for (Eigen::Index p = 0; p < points; ++p)
            topos_.col(p) = leadfields.gain(static_cast<std::size_t>(p)) * (*orient)[static_cast<std::size_t>(p)];
        topo_sq_ = topos_.colwise().squaredNorm().transpose();
        topo_energy_ = (factor * topos_).colwise().squaredNorm().transpose();
    } else {
        const Matrix& g = leadfields.gains();
        const Matrix z = factor * g;
        gram_.resize(3, 3 * points);
        energy_.resize(3, 3 * points);
        for (Eigen::Index p = 0; p < points; ++p) {
            gram_.middleCols(3 * p, 3) = g.middleCols(3 * p, 3).transpose() * g.middleCols(3 * p, 3);
            energy_.middleCols(3 * p, 3) = z.middleCols(3 * p, 3).transpose() * z.middleCols(3 * p, 3);
        }
    }
}

Vector ApProblem::topography_of(std::size_t index, const Vec3& orientation) const {
    return leadfields_.gain(index) * orientation;
}

double ApProblem::explained(const std::vector<Selected>& sources) const {
    std::vector<const Vector*> cols;
    for (const auto& s : sources) cols.push_back(&s.topo);
    const Matrix u = orthonormal_basis(cols, data_.rows());
    return (u.transpose() * cov_ * u).trace();
}

ApProblem::Candidate ApProblem::scan(const Matrix& basis, const std::vector<std::size_t>& excluded) const {
    const std::size_t points = leadfields_.point_count();
    std::vector<char> skip(points, 0);
    for (std::size_t e : excluded) skip[e] = 1;

    const Matrix cu = cov_ * basis;
    const Matrix small = basis.transpose() * cu;
    Candidate best;

    if (mode_ == OrientationMode::fixed) {
        const Matrix a = basis.transpose() * topos_;
        const Matrix b = cu.transpose() * topos_;
        for (std::size_t p = 0; p < points; ++p) {
            if (skip[p]) continue;
            const auto pi = static_cast<Eigen::Index>(p);
            const double tt = topo_sq_(pi);
            if (!(tt > 0.0)) continue;
            const auto ap = a.col(pi);
            const double den = tt - ap.squaredNorm();
            if (den <= kMinDeflatedFraction * tt) continue;
            const double num = topo_energy_(pi) - 2.0 * ap.dot(b.col(pi)) + ap.dot(small * ap);
            const double value = std::max(num, 0.0) / den;
            if (value > best.value) {
                best.value = value;
                best.index = p;
            }
        }
        if (best.value >= 0.0) best.orientation = (*leadfields_.grid().fixed_orientations)[best.index];
        return best;
    }

    const Matrix& g = leadfields_.gains();
    const Matrix a = basis.transpose() * g;
    const Matrix b = cu.transpose() * g;
    for (std::size_t p = 0; p < points; ++p) {
        if (skip[p]) continue;
        const auto c = 3 * static_cast<Eigen::Index>(p);
        const Mat3 gram = gram_.middleCols(c, 3);
        const double trace = gram.trace();
        if (!(trace > 0.0)) continue;
        const auto ap = a.middleCols(c, 3);
        const auto bp = b.middleCols(c, 3);
        const Mat3 cross = ap.transpose() * bp;
        const Mat3 num = energy_.middleCols(c, 3) - cross - cross.transpose() + ap.transpose() * small * ap;
        const Mat3 den = gram - ap.transpose() * ap;
        const OrientationFit f = generalized_rayleigh(num, den, kMinDeflatedFraction * trace, true);
        if (f.silent) continue;
        if (f.fit_value > best.value) {
            best.value = f.fit_value;
            best.index = p;
        }
    }
    if (best.value >= 0.0) {
        // refine the winner with the accurate solver
        const auto c = 3 * static_cast<Eigen::Index>(best.index);
        const Mat3 gram = gram_.middleCols(c, 3);
        const auto ap = a.middleCols(c, 3);
        const auto bp = b.middleCols(c, 3);
        const Mat3 cross = ap.transpose() * bp;
        const Mat3 num = energy_.middleCols(c, 3) - cross - cross.transpose() + ap.transpose() * small * ap;
        const Mat3 den = gram - ap.transpose() * ap;
        const OrientationFit f = generalized_rayleigh(num, den, kMinDeflatedFraction * gram.trace(), false);
        best.orientation = f.orientation;
        best.value = f.fit_value;
    }
    return best;
}

DipoleFit ApProblem::fit(int k, const ApOptions& options) const {
    const Eigen::Index m = data_.rows();
    if (k < 0 || k >= m) throw InvalidInput("model order must satisfy 0 <= k < M");
    if (static_cast<std::size_t>(k) > leadfields_.point_count()) throw InvalidInput("model order exceeds grid size");

    DipoleFit out;
    out.k = k;
    if (k == 0) {
        out.amplitudes = Matrix(0, data_.cols());
        out.residual_ss = total_ss_;
        return out;
    }

    std::vector<Selected> sel;
    auto indices_except = [&](int skip) {
        std::vector<std::size_t> idx;
        for (int i = 0; i < static_cast<int>(sel.size()); ++i)
            if (i != skip) idx.push_back(sel[static_cast<std::size_t>(i)].index);
        return idx;
    };
    auto basis_except = [&](int skip) {
        std::vector<const Vector*> cols;
        for (int i = 0; i < static_cast<int>(sel.size()); ++i)
            if (i != skip) cols.push_back(&sel[static_cast<std::size_t>(i)].topo);
        return orthonormal_basis(cols, m);
    };

    // Phase 1: greedy sequential selection on deflated data.
    for (int j = 0; j < k; ++j) {
        const Candidate c = scan(basis_except(-1), indices_except(-1));
        if (c.value < 0.0)
            throw DegenerateModel("no admissible grid point for source " + std::to_string(j + 1) + " of " +
                                  std::to_string(k));
        sel.push_back({c.index, c.orientation, topography_of(c.index, c.orientation)});
    }
    out.objective_trace.push_back(explained(sel));

    // Phase 2: revisit each source with the others projected out.
    if (k > 1) {
        for (int pass = 1; pass <= options.max_passes; ++pass) {
            bool changed = false;
            for (int i = 0; i < k; ++i) {
                const Matrix u = basis_except(i);
                const Candidate c = scan(u, indices_except(i));
                if (c.value < 0.0) continue;
                Selected& cur = sel[static_cast<std::size_t>(i)];
                const Vector d = cur.topo - u * (u.transpose() * cur.topo);
                const double dd = d.squaredNorm();
                const double current = dd > 0.0 ? d.dot(cov_ * d) / dd : 0.0;
                if (c.value > current * (1.0 + kImprovementTolerance) + 1e-300) {
                    if (c.index != cur.index) changed = true;
                    cur = {c.index, c.orientation, topography_of(c.index, c.orientation)};
                }
            }
            out.objective_trace.push_back(explained(sel));
            out.passes_used = pass;
            const double before = out.objective_trace[out.objective_trace.size() - 2];
            if (out.objective_trace.back() < before * (1.0 - 1e-9)) out.flags.push_back("non_monotone_pass");
            if (!changed) break;
            if (pass == options.max_passes) out.flags.push_back("max_passes_reached");
        }
    }

    Matrix topos(m, k);
    for (int i = 0; i < k; ++i) {
        const auto& s = sel[static_cast<std::size_t>(i)];
        out.point_indices.push_back(s.index);
        out.orientations.push_back(s.orientation);
        topos.col(i) = s.topo;
    }
    SubspaceFit sf = subspace_fit(data_, topos);
    out.amplitudes = std::move(sf.amplitudes);
    out.residual_ss = sf.residual_ss;
    return out;
}

DipoleFit ap_localize(const Matrix& data, const LeadFieldSet& leadfields, int k, OrientationMode mode,
                      const ApOptions& options) {
    if (k == 0 && leadfields.point_count() == 0) throw InvalidInput("reconstruction grid is empty");
    return ApProblem(data, leadfields, mode).fit(k, options);
}

}  // namespace megenum
