#include "megenum/enumerate.hpp"

#include <boost/math/distributions/fisher_f.hpp>

#include <algorithm>
#include <cmath>
#include <iostream>
#include <set>

namespace megenum {

std::int64_t dof(std::int64_t m, std::int64_t n, std::int64_t k, OrientationMode mode) {
    if (m < 1 || n < 1 || k < 0) throw InvalidInput("dof needs m >= 1, n >= 1, k >= 0");
    const std::int64_t per_dipole = (mode == OrientationMode::fixed ? 3 : 4) + n;
    const std::int64_t d = m * n - per_dipole * k;
    if (d <= 0)
        throw ModelCapacityError("a " + std::to_string(k) + "-dipole model leaves no residual degrees of freedom (M=" +
                                 std::to_string(m) + ", N=" + std::to_string(n) + ")");
    return d;
}

FRatio f_ratio(double ss_reduced, double ss_full, std::int64_t dof_reduced, std::int64_t dof_full) {
    if (!(ss_reduced >= 0.0) || !(ss_full >= 0.0)) throw InvalidInput("sums of squares must be non-negative");
    if (dof_reduced <= 0 || dof_full <= 0) throw InvalidInput("degrees of freedom must be positive");
    FRatio f;
    if (ss_reduced == 0.0) return f;
    if (ss_full == 0.0) {
        f.value = std::numeric_limits<double>::infinity();
        f.perfect_full_fit = true;
        return f;
    }
    f.value = (ss_reduced / static_cast<double>(dof_reduced)) / (ss_full / static_cast<double>(dof_full));
    f.non_nested = ss_full > ss_reduced;
    return f;
}

double nominal_threshold(std::int64_t dof_reduced, std::int64_t dof_full, double alpha) {
    if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("alpha must lie in (0, 1)");
    if (dof_reduced <= 0 || dof_full <= 0) throw InvalidInput("degrees of freedom must be positive");
    const boost::math::fisher_f_distribution<double> dist(static_cast<double>(dof_reduced),
                                                          static_cast<double>(dof_full));
    return boost::math::quantile(boost::math::complement(dist, alpha));
}

void ThresholdTable::set(double snr_db, int k_reduced, double threshold, double mean_accuracy) {
    if (!(threshold > 0.0)) throw InvalidInput("thresholds must be positive");
    if (k_reduced < 0) throw InvalidInput("k_reduced must be non-negative");
    if (!std::isfinite(snr_db)) throw InvalidInput("SNR bins must be finite");
    entries_[{snr_db, k_reduced}] = Entry{threshold, mean_accuracy};
}

std::vector<double> ThresholdTable::bins() const {
    std::vector<double> out;
    for (const auto& [key, _] : entries_)
        if (out.empty() || out.back() != key.first) out.push_back(key.first);
    return out;
}

std::vector<int> ThresholdTable::orders(double snr_bin) const {
    std::vector<int> out;
    for (const auto& [key, _] : entries_)
        if (key.first == snr_bin) out.push_back(key.second);
    return out;
}

std::optional<ThresholdTable::Entry> ThresholdTable::find(double snr_bin, int k_reduced) const {
    const auto it = entries_.find({snr_bin, k_reduced});
    if (it == entries_.end()) return std::nullopt;
    return it->second;
}

double ThresholdTable::nearest_bin(double snr_db) const {
    const auto all = bins();
    if (all.empty()) throw InvalidInput("threshold table is empty");
    if (std::isnan(snr_db)) throw InvalidInput("SNR is NaN");
    double best = all.front();
    for (double b : all)
        if (std::abs(b - snr_db) < std::abs(best - snr_db)) best = b;
    return best;
}

double ThresholdTable::lookup(double snr_db, int k_reduced) const {
    const double bin = nearest_bin(snr_db);
    const auto e = find(bin, k_reduced);
    if (!e) throw MissingThreshold(bin, k_reduced);
    return e->threshold;
}

ThresholdTable ThresholdTable::extended(int k_max) const {
    ThresholdTable out = *this;
    for (double bin : bins()) {
        const auto ks = orders(bin);
        for (int k = 0; k < k_max; ++k) {
            if (find(bin, k)) continue;
            int nearest = ks.front();
            for (int c : ks)
                if (std::abs(c - k) < std::abs(nearest - k)) nearest = c;
            out.entries_[{bin, k}] = Entry{find(bin, nearest)->threshold,
                                           std::numeric_limits<double>::quiet_NaN()};
        }
    }
    return out;
}

ThresholdTable ThresholdTable::uniform(double threshold, int k_max, const std::vector<double>& bins) {
    ThresholdTable t;
    for (double b : bins)
        for (int k = 0; k < k_max; ++k) t.set(b, k, threshold);
    return t;
}

std::string_view to_string(EnumerationMethod method) {
    switch (method) {
        case EnumerationMethod::fratio: return "fratio";
        case EnumerationMethod::fratio_nominal: return "nominal";
        case EnumerationMethod::aic: return "aic";
        case EnumerationMethod::mdl: return "mdl";
    }
    return "unknown";
}

namespace {

double snapped(double ss, double total) { return ss <= kPerfectFitRelTol * total ? 0.0 : ss; }

FStep make_step(const ApProblem& problem, int k, double ss_reduced, double ss_full) {
    const auto m = static_cast<std::int64_t>(problem.sensor_count());
    const auto n = static_cast<std::int64_t>(problem.sample_count());
    FStep s;
    s.k_reduced = k;
    s.ss_reduced = snapped(ss_reduced, problem.total_ss());
    s.ss_full = snapped(ss_full, problem.total_ss());
    s.dof_reduced = dof(m, n, k, problem.mode());
    s.dof_full = dof(m, n, k + 1, problem.mode());
    s.f = f_ratio(s.ss_reduced, s.ss_full, s.dof_reduced, s.dof_full);
    return s;
}

}  // namespace

std::vector<FStep> f_cascade(const ApProblem& problem, int k_last, const ApOptions& options) {
    std::vector<FStep> steps;
    double ss_prev = problem.fit(0, options).residual_ss;
    for (int k = 0; k <= k_last; ++k) {
        const double ss_next = problem.fit(k + 1, options).residual_ss;
        steps.push_back(make_step(problem, k, ss_prev, ss_next));
        ss_prev = ss_next;
    }
    return steps;
}

EnumerationResult sequential_estimate(const ApProblem& problem,
                                      const std::function<double(const FStep&)>& threshold_for, int k_max,
                                      const ApOptions& options) {
    if (k_max < 0 || k_max >= problem.sensor_count()) throw InvalidInput("k_max must satisfy 0 <= k_max < M");
    EnumerationResult result;
    double ss_prev = problem.fit(0, options).residual_ss;
    for (int k = 0; k < k_max; ++k) {
        double ss_next = 0.0;
        try {
            ss_next = problem.fit(k + 1, options).residual_ss;
        } catch (const std::exception& e) {
            throw NumericalError("fitting " + std::to_string(k + 1) + " dipoles: " + e.what());
        }
        FStep step = make_step(problem, k, ss_prev, ss_next);
        step.threshold = threshold_for(step);
        step.reject = step.f.value > step.threshold;
        if (step.f.non_nested)
            std::clog << "note: non-nested residuals at k=" << k << " (F=" << step.f.value << ")\n";
        result.clamp_flags.push_back(step.f.non_nested);
        result.steps.push_back(step);
        if (!step.reject) {
            result.q_hat = k;
            return result;
        }
        ss_prev = ss_next;
    }
    result.q_hat = k_max;
    result.saturated = true;
    return result;
}

EnumerationResult sequential_estimate(const Matrix& data, const LeadFieldSet& leadfields,
                                      const ThresholdTable& thresholds, double snr_db, int k_max,
                                      OrientationMode mode, const ApOptions& options) {
    const double bin = thresholds.nearest_bin(snr_db);
    for (int k = 0; k < k_max; ++k)
        if (!thresholds.find(bin, k)) throw MissingThreshold(bin, k);
    const ApProblem problem(data, leadfields, mode);
    EnumerationResult r = sequential_estimate(
        problem, [&](const FStep& s) { return thresholds.find(bin, s.k_reduced)->threshold; }, k_max, options);
    r.snr_bin = bin;
    return r;
}

EnumerationResult nominal_estimate(const Matrix& data, const LeadFieldSet& leadfields, double alpha, int k_max,
                                   OrientationMode mode, const ApOptions& options) {
    const ApProblem problem(data, leadfields, mode);
    EnumerationResult r = sequential_estimate(
        problem, [&](const FStep& s) { return nominal_threshold(s.dof_reduced, s.dof_full, alpha); }, k_max, options);
    r.method = EnumerationMethod::fratio_nominal;
    return r;
}

int decide(const std::vector<FStep>& steps, const std::function<double(int)>& threshold_for_k) {
    for (const auto& s : steps)
        if (!(s.f.value > threshold_for_k(s.k_reduced))) return s.k_reduced;
    return static_cast<int>(steps.size());
}

Vector eigen_spectrum(const Matrix& data) {
    if (data.cols() < 1) throw InvalidInput("eigen_spectrum needs at least one sample");
    const Matrix cov = data * data.transpose() / static_cast<double>(data.cols());
    Eigen::SelfAdjointEigenSolver<Matrix> eig(cov, Eigen::EigenvaluesOnly);
    Vector ascending = eig.eigenvalues().cwiseMax(0.0);
    return ascending.reverse();
}

namespace {

enum class Penalty { aic, mdl };

int information_criterion(const Vector& eigenvalues, std::int64_t n, Penalty penalty) {
    const auto m = eigenvalues.size();
    if (m < 1) throw InvalidInput("empty eigenvalue spectrum");
    if (n < 2) throw InvalidInput("information criteria need n >= 2");
    for (Eigen::Index i = 0; i < m; ++i) {
        if (eigenvalues(i) < 0.0) throw InvalidInput("eigenvalues must be non-negative");
        if (i > 0 && eigenvalues(i) > eigenvalues(i - 1)) throw InvalidInput("eigenvalues must be descending");
    }
    if (eigenvalues(0) == 0.0) throw InvalidInput("all-zero eigenvalue spectrum");

    const Vector floored = eigenvalues.cwiseMax(1e-300);
    const Vector logs = floored.array().log();
    const auto nd = static_cast<double>(n);
    int best_k = 0;
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index k = 0; k < m; ++k) {
        const Eigen::Index tail = m - k;
        const double log_geo = logs.tail(tail).mean();
        const double log_arith = std::log(floored.tail(tail).mean());
        const double data_term = -nd * static_cast<double>(tail) * (log_geo - log_arith);
        const double params = static_cast<double>(k) * static_cast<double>(2 * m - k);
        const double value = penalty == Penalty::aic ? 2.0 * data_term + 2.0 * params
                                                     : data_term + 0.5 * params * std::log(nd);
        if (value < best) {
            best = value;
            best_k = static_cast<int>(k);
        }
    }
    return best_k;
}

}  // namespace

int aic_estimate(const Vector& eigenvalues, std::int64_t n) {
    return information_criterion(eigenvalues, n, Penalty::aic);
}

int mdl_estimate(const Vector& eigenvalues, std::int64_t n) {
    return information_criterion(eigenvalues, n, Penalty::mdl);
}

}  // namespace megenum
