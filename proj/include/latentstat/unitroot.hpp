#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentstat/series.hpp"

namespace latentstat {

// ============================================================================
// Ordinary least squares
// ============================================================================

struct OlsFit {
    std::vector<double> coefficients;
    std::vector<double> residuals;
    std::vector<double> standard_errors;
    std::vector<double> t_statistics;
    double sse = 0.0;
    int nobs = 0;
    int df = 0;
};

/// Least squares via column-pivoted Householder QR (not normal equations).
/// Standard errors come from diag((X'X)^-1) = diag(P (R'R)^-1 P'), where P is
/// the pivoting permutation, so they are reported in original column order.
inline OlsFit ols(const Eigen::MatrixXd& design, const Eigen::VectorXd& response) {
    const int n = static_cast<int>(design.rows());
    const int k = static_cast<int>(design.cols());
    if (response.size() != n) throw std::invalid_argument("ols: design/response row mismatch");
    if (n <= k) throw std::invalid_argument("ols: need more rows than columns");

    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(design);
    if (qr.rank() < k)
        throw std::runtime_error("ols: singular design matrix (rank " +
                                 std::to_string(qr.rank()) + " < " + std::to_string(k) + ")");
    Eigen::VectorXd beta = qr.solve(response);
    Eigen::VectorXd resid = response - design * beta;
    double sse = resid.squaredNorm();
    int df = n - k;
    double sigma2 = sse / static_cast<double>(df);

    Eigen::MatrixXd r = qr.matrixR().topLeftCorner(k, k).triangularView<Eigen::Upper>();
    Eigen::MatrixXd rinv = r.inverse();
    Eigen::MatrixXd cov = qr.colsPermutation() * (rinv * rinv.transpose()) *
                          qr.colsPermutation().transpose();

    OlsFit fit;
    fit.nobs = n;
    fit.df = df;
    fit.sse = sse;
    fit.coefficients.assign(beta.data(), beta.data() + k);
    fit.residuals.assign(resid.data(), resid.data() + n);
    fit.standard_errors.resize(k);
    fit.t_statistics.resize(k);
    for (int j = 0; j < k; ++j) {
        fit.standard_errors[j] = std::sqrt(sigma2 * cov(j, j));
        fit.t_statistics[j] = fit.coefficients[j] / fit.standard_errors[j];
    }
    return fit;
}

// ============================================================================
// MacKinnon response surfaces (constant-only regression, one series)
// ============================================================================

namespace mackinnon {

// Finite-sample critical value surfaces, MacKinnon (2010), "Critical Values
// for Cointegration Tests", constant-only case, N=1. cv = b0 + b1/n + b2/n^2
// + b3/n^3.
inline constexpr double cv_1pct[4] = {-3.43035, -6.5393, -16.786, -79.433};
inline constexpr double cv_5pct[4] = {-2.86154, -2.8903, -4.234, -40.040};
inline constexpr double cv_10pct[4] = {-2.56677, -1.5384, -2.809, 0.0};

// Asymptotic p-value polynomials, MacKinnon (1994), "Approximate Asymptotic
// Distribution Functions for Unit-Root and Cointegration Tests",
// constant-only case. p = Phi(poly(stat)) with the small-p branch at or below
// tau_star and clamps outside [tau_min, tau_max].
inline constexpr double tau_star = -1.61;
inline constexpr double tau_min = -18.83;
inline constexpr double tau_max = 2.74;
inline constexpr double smallp[3] = {2.1659, 1.4412, 3.8269e-2};
inline constexpr double largep[4] = {1.7339, 9.3202e-1, -1.2745e-1, -1.0368e-2};

inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

inline double surface(const double (&b)[4], int nobs) {
    double inv = 1.0 / static_cast<double>(nobs);
    return b[0] + inv * (b[1] + inv * (b[2] + inv * b[3]));
}

}  // namespace mackinnon

/// Finite-sample ADF critical values at the 1/5/10 percent levels.
inline std::map<std::string, double> critical_values(int nobs) {
    if (nobs < 15) throw std::invalid_argument("critical_values: nobs must be >= 15");
    return {{"1%", mackinnon::surface(mackinnon::cv_1pct, nobs)},
            {"5%", mackinnon::surface(mackinnon::cv_5pct, nobs)},
            {"10%", mackinnon::surface(mackinnon::cv_10pct, nobs)}};
}

/// ADF p-value from the MacKinnon surface. The surface is asymptotic in the
/// sample size, so nobs does not enter; the parameter is kept so callers
/// state what sample the statistic came from.
inline double adf_pvalue(double statistic, int /*nobs*/) {
    using namespace mackinnon;
    if (statistic > tau_max) return 1.0;
    if (statistic < tau_min) return 0.0;
    double z;
    if (statistic <= tau_star) {
        z = smallp[0] + statistic * (smallp[1] + statistic * smallp[2]);
    } else {
        z = largep[0] + statistic * (largep[1] + statistic * (largep[2] + statistic * largep[3]));
    }
    double p = norm_cdf(z);
    return std::min(1.0, std::max(0.0, p));
}

// ============================================================================
// Augmented Dickey-Fuller
// ============================================================================

struct AdfStat {
    double statistic = 0.0;
    int used_lag = 0;
    int nobs = 0;
};

struct AdfReport {
    double statistic = 0.0;
    double p_value = 0.0;
    std::map<std::string, double> critical_values;
    int used_lag = 0;
    int nobs = 0;
    std::string regression = "c";
};

namespace detail {

/// Builds the ADF design for lag p over response rows t = start..n-1 (indices
/// into y): response dy[t], regressors [1, y[t-1], dy[t-1].. dy[t-p]].
inline void adf_design(const std::vector<double>& y, const std::vector<double>& dy, int p,
                       std::size_t start, Eigen::MatrixXd& x_out, Eigen::VectorXd& y_out) {
    const std::size_t n = y.size();
    const std::size_t rows = n - start;
    x_out.resize(static_cast<Eigen::Index>(rows), p + 2);
    y_out.resize(static_cast<Eigen::Index>(rows));
    for (std::size_t i = 0; i < rows; ++i) {
        std::size_t t = start + i;
        y_out(static_cast<Eigen::Index>(i)) = dy[t];
        x_out(static_cast<Eigen::Index>(i), 0) = 1.0;
        x_out(static_cast<Eigen::Index>(i), 1) = y[t - 1];
        for (int j = 1; j <= p; ++j)
            x_out(static_cast<Eigen::Index>(i), 1 + j) = dy[t - j];
    }
}

}  // namespace detail

/// ADF regression statistic with AIC lag selection. The regression is
/// dy_t = a + rho*y_{t-1} + sum_j phi_j*dy_{t-j} + e_t (constant only); the
/// statistic is the t-value of rho. Lags 0..max_lag are ranked by AIC on the
/// common max_lag-trimmed sample, ties to the smaller lag, then the winner is
/// refit on its own full sample. Default max_lag is the Schwert rule
/// floor(12*(n/100)^(1/4)).
inline AdfStat adf_statistic(const Series& s, std::optional<int> max_lag = std::nullopt) {
    const std::vector<double>& y = s.values;
    const std::size_t n = y.size();
    if (n < 15) throw std::invalid_argument("adf_statistic: need length >= 15");
    double lo = y[0], hi = y[0];
    for (double v : y) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    if (!(hi > lo)) throw std::invalid_argument("adf_statistic: zero-variance series");

    int maxlag;
    if (max_lag.has_value()) {
        maxlag = *max_lag;
        if (maxlag < 0) throw std::invalid_argument("adf_statistic: max_lag must be >= 0");
        // The largest candidate model needs n-1-maxlag rows for maxlag+2 params.
        if (static_cast<std::size_t>(2 * maxlag + 3) >= n)
            throw std::invalid_argument("adf_statistic: max_lag " + std::to_string(maxlag) +
                                        " too large for length " + std::to_string(n));
    } else {
        maxlag = static_cast<int>(std::floor(12.0 * std::pow(static_cast<double>(n) / 100.0, 0.25)));
        maxlag = std::min<int>(maxlag, static_cast<int>(n) / 2 - 2);
        maxlag = std::max(maxlag, 0);
    }

    std::vector<double> dy(n, 0.0);
    for (std::size_t t = 1; t < n; ++t) dy[t] = y[t] - y[t - 1];

    // Stage 1: rank lags on the shared sample t = maxlag+1 .. n-1.
    const std::size_t common_start = static_cast<std::size_t>(maxlag) + 1;
    const double common_n = static_cast<double>(n - common_start);
    int best_lag = 0;
    double best_aic = std::numeric_limits<double>::infinity();
    Eigen::MatrixXd x;
    Eigen::VectorXd rhs;
    for (int p = 0; p <= maxlag; ++p) {
        detail::adf_design(y, dy, p, common_start, x, rhs);
        OlsFit fit = ols(x, rhs);
        double aic = common_n * std::log(fit.sse / common_n) + 2.0 * static_cast<double>(p + 2);
        if (aic < best_aic) {
            best_aic = aic;
            best_lag = p;
        }
    }

    // Stage 2: refit the winner on its full sample t = best_lag+1 .. n-1.
    detail::adf_design(y, dy, best_lag, static_cast<std::size_t>(best_lag) + 1, x, rhs);
    OlsFit fit = ols(x, rhs);
    AdfStat out;
    out.statistic = fit.t_statistics[1];
    out.used_lag = best_lag;
    out.nobs = fit.nobs;
    return out;
}

/// Full ADF report: statistic, MacKinnon p-value, and critical values.
inline AdfReport adf_test(const Series& s, std::optional<int> max_lag = std::nullopt) {
    AdfStat stat = adf_statistic(s, max_lag);
    AdfReport r;
    r.statistic = stat.statistic;
    r.used_lag = stat.used_lag;
    r.nobs = stat.nobs;
    r.p_value = adf_pvalue(stat.statistic, stat.nobs);
    r.critical_values = critical_values(stat.nobs);
    return r;
}

}  // namespace latentstat
