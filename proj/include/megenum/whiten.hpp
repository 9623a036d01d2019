#pragma once

#include "megenum/types.hpp"

#include <vector>

namespace megenum {

/// Linear predictor x_t ~ sum_i c_i x_{t-i}, coefficients averaged over sensors.
struct LpcModel {
    int order = 6;
    Vector coefficients;
    std::vector<int> excluded_channels;  ///< channels with a singular autocorrelation system
};

struct SpatialWhitener {
    Matrix matrix;  ///< symmetric C_reg^{-1/2}
    double regularization_fraction = 0.10;
};

/// T trials of M x N_total samples, the first `baseline_samples` columns pre-stimulus.
struct TrialSet {
    std::vector<Matrix> trials;
    int baseline_samples = 0;
};

/// Autocorrelation-method LPC per channel (Levinson-Durbin), averaged across channels.
LpcModel fit_lpc(const Matrix& baseline, int order = 6);

/// Levinson-Durbin recursion on autocorrelation lags r[0..order]; returns the
/// predictor coefficients. Throws NumericalError when r[0] == 0 or the
/// recursion loses positive definiteness.
Vector levinson_durbin(const Vector& autocorrelation, int order);

struct LpcFiltered {
    Matrix data;
    int warmup_columns = 0;  ///< leading columns computed with zero history
};

/// Prediction-error filter e_t = x_t - sum_i c_i x_{t-i}, per sensor.
LpcFiltered apply_lpc(const Matrix& data, const LpcModel& model);

struct AveragedTrials {
    Matrix post;      ///< M x (N_total - baseline), post-stimulus mean
    Matrix baseline;  ///< M x (baseline - order), pre-stimulus mean without warm-up
    std::vector<LpcModel> models;
};

/// Fits LPC on each trial's baseline, filters the whole trial, and averages
/// the filtered segments in trial order.
AveragedTrials average_trials(const TrialSet& trials, int lpc_order = 6);

/// Sample covariance (1/B) X X^T of a zero-mean noise segment.
Matrix noise_covariance(const Matrix& baseline);

/// W = (C + f lambda_max I)^{-1/2} via symmetric eigendecomposition.
SpatialWhitener build_spatial_whitener(const Matrix& noise_cov, double regularization_fraction = 0.10);

inline constexpr double kSnrFloorDb = -40.0;

/// Signal-to-noise estimate in dB from a post-stimulus window and a noise-only baseline.
double estimate_snr(const Matrix& data, const Matrix& baseline);

}  // namespace megenum
