#include "megenum/whiten.hpp"

#include <cmath>
#include <iostream>
#include <limits>

namespace megenum {

Vector levinson_durbin(const Vector& r, int order) {
    if (order < 1) throw InvalidInput("LPC order must be at least 1");
    if (r.size() < order + 1) throw InvalidInput("need order + 1 autocorrelation lags");
    if (!(r(0) > 0.0)) throw NumericalError("zero-energy channel");
    Vector a = Vector::Zero(order);
    Vector prev(order);
    double err = r(0);
    for (int i = 0; i < order; ++i) {
        double acc = r(i + 1);
        for (int j = 0; j < i; ++j) acc -= a(j) * r(i - j);
        const double k = acc / err;
        prev.head(i) = a.head(i);
        a(i) = k;
        for (int j = 0; j < i; ++j) a(j) = prev(j) - k * prev(i - 1 - j);
        err *= (1.0 - k * k);
        if (!(err > 0.0)) throw NumericalError("autocorrelation sequence is not positive definite");
    }
    return a;
}

LpcModel fit_lpc(const Matrix& baseline, int order) {
    if (order < 1) throw InvalidInput("LPC order must be at least 1");
    const Eigen::Index b = baseline.cols();
    if (b <= 10 * order)
        throw InvalidInput("baseline has " + std::to_string(b) + " samples; LPC of order " + std::to_string(order) +
                           " needs more than " + std::to_string(10 * order));

    LpcModel model;
    model.order = order;
    model.coefficients = Vector::Zero(order);
    int used = 0;
    for (Eigen::Index ch = 0; ch < baseline.rows(); ++ch) {
        const Vector x = (baseline.row(ch).array() - baseline.row(ch).mean()).matrix().transpose();
        Vector r(order + 1);
        for (int lag = 0; lag <= order; ++lag) r(lag) = x.head(b - lag).dot(x.tail(b - lag)) / static_cast<double>(b);
        try {
            if (!(r(0) > std::numeric_limits<double>::min() * 1e3)) throw NumericalError("constant channel");
            model.coefficients += levinson_durbin(r, order);
            ++used;
        } catch (const NumericalError&) {
            model.excluded_channels.push_back(static_cast<int>(ch));
        }
    }
    if (used == 0) throw NumericalError("every channel has a singular autocorrelation system");
    if (!model.excluded_channels.empty())
        std::clog << "warning: LPC excluded " << model.excluded_channels.size() << " constant channel(s)\n";
    model.coefficients /= static_cast<double>(used);
    return model;
}

LpcFiltered apply_lpc(const Matrix& data, const LpcModel& model) {
    const int order = static_cast<int>(model.coefficients.size());
    if (data.cols() <= order) throw InvalidInput("data must have more samples than the LPC order");
    LpcFiltered out{data, std::min<int>(order, static_cast<int>(data.cols()))};
    for (int i = 1; i <= order; ++i) {
        const double c = model.coefficients(i - 1);
        if (c == 0.0) continue;
        out.data.rightCols(data.cols() - i) -= c * data.leftCols(data.cols() - i);
    }
    return out;
}

AveragedTrials average_trials(const TrialSet& set, int lpc_order) {
    if (set.trials.empty()) throw InvalidInput("trial set is empty");
    const Matrix& first = set.trials.front();
    const int base = set.baseline_samples;
    if (base < 0 || base >= first.cols()) throw InvalidInput("baseline length must be in [0, N_total)");
    for (const auto& t : set.trials)
        if (t.rows() != first.rows() || t.cols() != first.cols()) throw InvalidInput("trials differ in dimensions");

    AveragedTrials out;
    out.post = Matrix::Zero(first.rows(), first.cols() - base);
    out.baseline = Matrix::Zero(first.rows(), std::max(0, base - lpc_order));
    for (const auto& trial : set.trials) {
        LpcModel model = fit_lpc(trial.leftCols(base), lpc_order);
        const LpcFiltered filtered = apply_lpc(trial, model);
        out.post += filtered.data.rightCols(out.post.cols());
        out.baseline += filtered.data.middleCols(filtered.warmup_columns, out.baseline.cols());
        out.models.push_back(std::move(model));
    }
    const double inv = 1.0 / static_cast<double>(set.trials.size());
    out.post *= inv;
    out.baseline *= inv;
    return out;
}

Matrix noise_covariance(const Matrix& baseline) {
    if (baseline.cols() == 0) throw InvalidInput("empty baseline");
    return baseline * baseline.transpose() / static_cast<double>(baseline.cols());
}

SpatialWhitener build_spatial_whitener(const Matrix& noise_cov, double regularization_fraction) {
    if (noise_cov.rows() != noise_cov.cols() || noise_cov.rows() == 0)
        throw InvalidInput("noise covariance must be square and non-empty");
    if (regularization_fraction < 0.0) throw InvalidInput("regularization fraction must be non-negative");
    const double scale = noise_cov.cwiseAbs().maxCoeff();
    if ((noise_cov - noise_cov.transpose()).cwiseAbs().maxCoeff() > 1e-10 * std::max(scale, 1e-300))
        throw InvalidInput("noise covariance is not symmetric");

    Eigen::SelfAdjointEigenSolver<Matrix> eig(0.5 * (noise_cov + noise_cov.transpose()));
    const Vector& lambda = eig.eigenvalues();
    const double lambda_max = lambda.maxCoeff();
    if (lambda.minCoeff() < -1e-12 * std::max(std::abs(lambda_max), 1e-300))
        throw InvalidInput("noise covariance has negative eigenvalues");
    const Vector reg = lambda.array() + regularization_fraction * lambda_max;
    if (!(reg.minCoeff() > 0.0)) throw NumericalError("regularized noise covariance is singular");
    SpatialWhitener w;
    w.regularization_fraction = regularization_fraction;
    w.matrix = eig.eigenvectors() * reg.cwiseSqrt().cwiseInverse().asDiagonal() * eig.eigenvectors().transpose();
    return w;
}

double estimate_snr(const Matrix& data, const Matrix& baseline) {
    if (data.size() == 0 || baseline.size() == 0) throw InvalidInput("SNR estimation needs non-empty windows");
    const double noise_per_sample = baseline.squaredNorm() / static_cast<double>(baseline.cols());
    const double expected_noise = static_cast<double>(data.cols()) * noise_per_sample;
    const double signal_sq = std::max(data.squaredNorm() - expected_noise, 0.0);
    if (signal_sq == 0.0) return kSnrFloorDb;
    if (expected_noise == 0.0) return std::numeric_limits<double>::infinity();
    return std::max(kSnrFloorDb, 10.0 * std::log10(signal_sq / expected_noise));
}

}  // namespace megenum
