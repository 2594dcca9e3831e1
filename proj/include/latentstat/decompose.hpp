#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "latentstat/series.hpp"

namespace latentstat {

/// Additive split of a series: input == trend + seasonal + residual exactly,
/// since residual is defined as the remainder.
struct DecompositionResult {
    Series trend;
    Series seasonal;
    Series residual;
    int period = 0;
};

namespace detail {

/// Centered moving-average trend. Odd windows are a plain mean of `period`
/// points; even windows use the 2xT double pass, i.e. a (period+1)-point
/// window with half weight at both ends. Edge positions (first/last
/// floor(period/2)) are filled by extending the line through the two nearest
/// interior values.
inline std::vector<double> moving_average_trend(const std::vector<double>& x, int period) {
    const std::size_t n = x.size();
    const int h = period / 2;
    std::vector<double> trend(n, 0.0);
    if (period % 2 == 1) {
        for (std::size_t t = h; t + h < n; ++t) {
            double acc = 0.0;
            for (int j = -h; j <= h; ++j) acc += x[t + j];
            trend[t] = acc / static_cast<double>(period);
        }
    } else {
        for (std::size_t t = h; t + h < n; ++t) {
            double acc = 0.5 * (x[t - h] + x[t + h]);
            for (int j = -h + 1; j <= h - 1; ++j) acc += x[t + j];
            trend[t] = acc / static_cast<double>(period);
        }
    }
    const std::size_t first = h;
    const std::size_t last = n - 1 - h;
    // last > first is guaranteed by the length >= 2*period precondition.
    double head_slope = trend[first + 1] - trend[first];
    for (std::size_t t = 0; t < first; ++t)
        trend[t] = trend[first] - head_slope * static_cast<double>(first - t);
    double tail_slope = trend[last] - trend[last - 1];
    for (std::size_t t = last + 1; t < n; ++t)
        trend[t] = trend[last] + tail_slope * static_cast<double>(t - last);
    return trend;
}

}  // namespace detail

/// Classical additive decomposition: moving-average trend, per-phase-mean
/// seasonal re-centered to zero mean and tiled, residual as remainder.
inline DecompositionResult decompose_additive(const Series& s, int period) {
    if (period < 2) throw std::invalid_argument("decompose_additive: period must be >= 2");
    if (s.size() < 2 * static_cast<std::size_t>(period))
        throw std::invalid_argument("decompose_additive: length " + std::to_string(s.size()) +
                                    " < 2*period (" + std::to_string(2 * period) + ")");
    const std::size_t n = s.size();
    std::vector<double> trend = detail::moving_average_trend(s.values, period);

    std::vector<double> phase_sum(period, 0.0);
    std::vector<std::size_t> phase_count(period, 0);
    for (std::size_t t = 0; t < n; ++t) {
        phase_sum[t % period] += s.values[t] - trend[t];
        ++phase_count[t % period];
    }
    std::vector<double> profile(period);
    double profile_mean = 0.0;
    for (int p = 0; p < period; ++p) {
        profile[p] = phase_sum[p] / static_cast<double>(phase_count[p]);
        profile_mean += profile[p];
    }
    profile_mean /= static_cast<double>(period);
    for (int p = 0; p < period; ++p) profile[p] -= profile_mean;

    std::vector<double> seasonal(n), residual(n);
    for (std::size_t t = 0; t < n; ++t) {
        seasonal[t] = profile[t % period];
        residual[t] = s.values[t] - trend[t] - seasonal[t];
    }
    DecompositionResult r;
    r.trend = Series(std::move(trend), s.name + "_trend");
    r.seasonal = Series(std::move(seasonal), s.name + "_seasonal");
    r.residual = Series(std::move(residual), s.name + "_residual");
    r.period = period;
    return r;
}

/// Per-phase means of a seasonal series: entry p averages all indices with
/// t mod period == p.
inline std::vector<double> seasonal_profile(const Series& seasonal, int period) {
    if (period < 2) throw std::invalid_argument("seasonal_profile: period must be >= 2");
    if (seasonal.size() < static_cast<std::size_t>(period))
        throw std::invalid_argument("seasonal_profile: series shorter than one period");
    std::vector<double> sum(period, 0.0);
    std::vector<std::size_t> count(period, 0);
    for (std::size_t t = 0; t < seasonal.size(); ++t) {
        sum[t % period] += seasonal.values[t];
        ++count[t % period];
    }
    std::vector<double> out(period);
    for (int p = 0; p < period; ++p) out[p] = sum[p] / static_cast<double>(count[p]);
    return out;
}

/// Sample autocorrelation at one lag.
inline double autocorrelation(const std::vector<double>& x, std::size_t lag) {
    const std::size_t n = x.size();
    if (lag >= n) throw std::invalid_argument("autocorrelation: lag >= length");
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    double num = 0.0, den = 0.0;
    for (std::size_t t = 0; t < n; ++t) {
        double d = x[t] - mean;
        den += d * d;
        if (t >= lag) num += d * (x[t - lag] - mean);
    }
    if (den == 0.0) return 0.0;
    return num / den;
}

/// Picks the candidate period whose mean autocorrelation at lags {c, 2c} is
/// largest. When every candidate scores below 0.1 there is no periodic signal
/// to rank, so the smallest candidate is returned, which is also the
/// tie-break rule for equal scores.
inline int estimate_period(const Series& s, const std::vector<int>& candidates) {
    if (candidates.empty()) throw std::invalid_argument("estimate_period: no candidates");
    for (int c : candidates)
        if (c < 2 || static_cast<std::size_t>(2 * c) > s.size())
            throw std::invalid_argument("estimate_period: candidate " + std::to_string(c) +
                                        " outside [2, length/2]");
    int best = 0;
    double best_score = 0.0;
    bool any_signal = false;
    int smallest = candidates[0];
    for (int c : candidates) smallest = std::min(smallest, c);
    for (int c : candidates) {
        double score = 0.5 * (autocorrelation(s.values, c) + autocorrelation(s.values, 2 * c));
        if (score >= 0.1 && (!any_signal || score > best_score ||
                             (score == best_score && c < best))) {
            best = c;
            best_score = score;
            any_signal = true;
        }
    }
    return any_signal ? best : smallest;
}

/// Default candidate set: trading-day week, month, quarter, year. Candidates
/// the series is too short for are skipped.
inline int estimate_period(const Series& s) {
    std::vector<int> candidates;
    for (int c : {5, 21, 63, 252})
        if (static_cast<std::size_t>(2 * c) <= s.size()) candidates.push_back(c);
    if (candidates.empty())
        throw std::invalid_argument("estimate_period: series too short for any default period");
    return estimate_period(s, candidates);
}

}  // namespace latentstat
