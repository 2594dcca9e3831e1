#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace latentstat {

// ============================================================================
// Dates
// ============================================================================

/// Calendar date. Only ordering and ISO-8601 formatting are needed; there is
/// no calendar arithmetic.
struct Date {
    int year = 0;
    int month = 0;
    int day = 0;

    friend bool operator==(const Date& a, const Date& b) {
        return a.year == b.year && a.month == b.month && a.day == b.day;
    }
    friend bool operator!=(const Date& a, const Date& b) { return !(a == b); }
    friend bool operator<(const Date& a, const Date& b) {
        if (a.year != b.year) return a.year < b.year;
        if (a.month != b.month) return a.month < b.month;
        return a.day < b.day;
    }
    friend bool operator<=(const Date& a, const Date& b) { return a < b || a == b; }

    bool valid() const {
        if (month < 1 || month > 12 || day < 1) return false;
        static const int len[12] = {31, 28, 31, 30, 31, 30, 31, 31, 30, 31, 30, 31};
        int d = len[month - 1];
        bool leap = (year % 4 == 0 && year % 100 != 0) || year % 400 == 0;
        if (month == 2 && leap) d = 29;
        return day <= d;
    }

    std::string iso() const {
        char buf[16];
        std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", year, month, day);
        return buf;
    }
};

/// Parses "YYYY-MM-DD", "MM/DD/YYYY", or "Mon DD, YYYY". Returns false when
/// the text matches none of them or the field values are out of range.
inline bool parse_date(const std::string& text, Date& out) {
    auto month_from_name = [](const std::string& m) -> int {
        static const char* names[12] = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                        "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
        for (int i = 0; i < 12; ++i)
            if (m == names[i]) return i + 1;
        return 0;
    };
    Date d;
    int consumed = 0;
    if (std::sscanf(text.c_str(), "%d-%d-%d%n", &d.year, &d.month, &d.day, &consumed) == 3 &&
        consumed == static_cast<int>(text.size()) && d.valid()) {
        out = d;
        return true;
    }
    if (std::sscanf(text.c_str(), "%d/%d/%d%n", &d.month, &d.day, &d.year, &consumed) == 3 &&
        consumed == static_cast<int>(text.size()) && d.valid()) {
        out = d;
        return true;
    }
    char mon[8] = {0};
    if (std::sscanf(text.c_str(), "%3s %d, %d%n", mon, &d.day, &d.year, &consumed) == 3 &&
        consumed == static_cast<int>(text.size())) {
        d.month = month_from_name(mon);
        if (d.month != 0 && d.valid()) {
            out = d;
            return true;
        }
    }
    return false;
}

// ============================================================================
// Series and Frame
// ============================================================================

/// Named sequence of real values. Construction rejects NaN/Inf so everything
/// downstream can assume finite arithmetic.
struct Series {
    std::vector<double> values;
    std::string name;

    Series() = default;
    Series(std::vector<double> v, std::string n) : values(std::move(v)), name(std::move(n)) {
        if (values.empty()) throw std::invalid_argument("Series '" + name + "': length must be >= 1");
        for (double x : values)
            if (!std::isfinite(x))
                throw std::invalid_argument("Series '" + name + "': non-finite value");
    }

    std::size_t size() const { return values.size(); }
    double operator[](std::size_t i) const { return values[i]; }
};

/// Multivariate chronological table: named columns over a shared, strictly
/// increasing date index.
class Frame {
public:
    Frame() = default;

    Frame(std::vector<Date> index, std::vector<Series> columns) {
        set_index(std::move(index));
        for (auto& c : columns) add_column(std::move(c));
    }

    void set_index(std::vector<Date> index) {
        for (std::size_t i = 1; i < index.size(); ++i) {
            if (!(index[i - 1] < index[i]))
                throw std::invalid_argument("Frame: index must be strictly increasing at row " +
                                            std::to_string(i) + " (" + index[i].iso() + ")");
        }
        for (const auto& c : columns_)
            if (c.size() != index.size())
                throw std::invalid_argument("Frame: index length does not match existing columns");
        index_ = std::move(index);
    }

    void add_column(Series s) {
        if (s.size() != index_.size())
            throw std::invalid_argument("Frame: column '" + s.name + "' length " +
                                        std::to_string(s.size()) + " != index length " +
                                        std::to_string(index_.size()));
        if (lookup_.count(s.name))
            throw std::invalid_argument("Frame: duplicate column '" + s.name + "'");
        lookup_[s.name] = columns_.size();
        columns_.push_back(std::move(s));
    }

    std::size_t rows() const { return index_.size(); }
    std::size_t cols() const { return columns_.size(); }
    const std::vector<Date>& index() const { return index_; }
    const std::vector<Series>& columns() const { return columns_; }

    bool has_column(const std::string& name) const { return lookup_.count(name) != 0; }

    const Series& column(const std::string& name) const {
        auto it = lookup_.find(name);
        if (it == lookup_.end()) {
            std::string names;
            for (const auto& c : columns_) names += (names.empty() ? "" : ", ") + c.name;
            throw std::invalid_argument("Frame: no column '" + name + "' (have: " + names + ")");
        }
        return columns_[it->second];
    }

    std::vector<std::string> column_names() const {
        std::vector<std::string> out;
        out.reserve(columns_.size());
        for (const auto& c : columns_) out.push_back(c.name);
        return out;
    }

    /// First `n` rows, same columns.
    Frame head(std::size_t n) const {
        n = std::min(n, rows());
        Frame f;
        f.set_index({index_.begin(), index_.begin() + static_cast<std::ptrdiff_t>(n)});
        for (const auto& c : columns_)
            f.add_column(Series({c.values.begin(), c.values.begin() + static_cast<std::ptrdiff_t>(n)}, c.name));
        return f;
    }

private:
    std::vector<Date> index_;
    std::vector<Series> columns_;
    std::map<std::string, std::size_t> lookup_;
};

// ============================================================================
// Differencing
// ============================================================================

/// Applies first differencing `order` times. Each pass pins index 0 to 0.0 so
/// the output keeps the input's length and time alignment; the value absorbed
/// at index 0 is recovered by inverse_difference.
inline std::vector<double> difference(const std::vector<double>& values, int order) {
    if (order < 1) throw std::invalid_argument("difference: order must be positive");
    if (static_cast<std::size_t>(order) >= values.size())
        throw std::invalid_argument("difference: order " + std::to_string(order) +
                                    " >= series length " + std::to_string(values.size()));
    std::vector<double> out = values;
    for (int pass = 0; pass < order; ++pass) {
        double prev = out[0];
        out[0] = 0.0;
        for (std::size_t t = 1; t < out.size(); ++t) {
            double cur = out[t];
            out[t] = cur - prev;
            prev = cur;
        }
    }
    return out;
}

inline Series difference(const Series& s, int order) {
    return Series(difference(s.values, order), s.name);
}

/// Inverts `difference`. Intermediate passes restart from the pinned zero;
/// only the final pass needs the original first element.
inline std::vector<double> inverse_difference(const std::vector<double>& diffed, double initial,
                                              int order) {
    if (order < 1) throw std::invalid_argument("inverse_difference: order must be positive");
    if (static_cast<std::size_t>(order) >= diffed.size())
        throw std::invalid_argument("inverse_difference: order >= series length");
    std::vector<double> out = diffed;
    for (int pass = 0; pass < order; ++pass) {
        double start = (pass == order - 1) ? initial : 0.0;
        out[0] = start;
        for (std::size_t t = 1; t < out.size(); ++t) out[t] += out[t - 1];
    }
    return out;
}

inline Series inverse_difference(const Series& d, double initial, int order) {
    return Series(inverse_difference(d.values, initial, order), d.name);
}

// ============================================================================
// Windowing
// ============================================================================

/// One supervised pair: the feature rows for times [t-lookback, t) and the
/// target value at time t.
struct Window {
    std::vector<std::vector<double>> features;  // lookback rows x n_features
    double target = 0.0;
    std::size_t target_index = 0;
};

/// Slices an aligned (features, target) pair into lookback windows. The
/// window for target t covers feature rows t-lookback .. t-1 only, so no
/// target leaks into its own features.
inline std::vector<Window> make_windows(const Frame& features, const Series& target, int lookback) {
    if (lookback < 1) throw std::invalid_argument("make_windows: lookback must be positive");
    if (features.rows() != target.size())
        throw std::invalid_argument("make_windows: features and target are not aligned");
    if (static_cast<std::size_t>(lookback) >= target.size())
        throw std::invalid_argument("make_windows: lookback " + std::to_string(lookback) +
                                    " >= length " + std::to_string(target.size()));
    const std::size_t n = target.size();
    const std::size_t d = features.cols();
    std::vector<Window> out;
    out.reserve(n - lookback);
    for (std::size_t t = lookback; t < n; ++t) {
        Window w;
        w.features.assign(lookback, std::vector<double>(d));
        for (std::size_t r = 0; r < static_cast<std::size_t>(lookback); ++r)
            for (std::size_t j = 0; j < d; ++j)
                w.features[r][j] = features.columns()[j].values[t - lookback + r];
        w.target = target.values[t];
        w.target_index = t;
        out.push_back(std::move(w));
    }
    return out;
}

// ============================================================================
// Scaling
// ============================================================================

enum class ScalerKind { minmax, zscore };

/// Per-column scaling statistics, fitted on a designated training slice only.
struct ScalerParams {
    ScalerKind kind = ScalerKind::zscore;
    std::vector<std::string> names;
    std::vector<double> a;  // min (minmax) or mean (zscore)
    std::vector<double> b;  // max (minmax) or std (zscore)

    double forward(std::size_t col, double x) const {
        return kind == ScalerKind::minmax ? (x - a[col]) / (b[col] - a[col])
                                          : (x - a[col]) / b[col];
    }
    double inverse(std::size_t col, double y) const {
        return kind == ScalerKind::minmax ? a[col] + y * (b[col] - a[col]) : a[col] + y * b[col];
    }
};

/// Fits scaling statistics on the first `train_rows` rows of every column.
/// Constant columns cannot be scaled and are reported by name.
inline ScalerParams fit_scale(const Frame& frame, ScalerKind kind, std::size_t train_rows) {
    if (train_rows < 2 || train_rows > frame.rows())
        throw std::invalid_argument("fit_scale: training slice must have 2..rows rows");
    ScalerParams p;
    p.kind = kind;
    for (const auto& c : frame.columns()) {
        double lo = c.values[0], hi = c.values[0], sum = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) {
            lo = std::min(lo, c.values[i]);
            hi = std::max(hi, c.values[i]);
            sum += c.values[i];
        }
        double mean = sum / static_cast<double>(train_rows);
        double ss = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) {
            double dev = c.values[i] - mean;
            ss += dev * dev;
        }
        double sd = std::sqrt(ss / static_cast<double>(train_rows));
        if (kind == ScalerKind::minmax) {
            if (!(hi > lo))
                throw std::invalid_argument("fit_scale: column '" + c.name +
                                            "' is constant on the training slice");
            p.a.push_back(lo);
            p.b.push_back(hi);
        } else {
            if (!(sd > 0.0))
                throw std::invalid_argument("fit_scale: column '" + c.name +
                                            "' has zero variance on the training slice");
            p.a.push_back(mean);
            p.b.push_back(sd);
        }
        p.names.push_back(c.name);
    }
    return p;
}

inline Frame apply_scale(const Frame& frame, const ScalerParams& params) {
    if (params.names.size() != frame.cols())
        throw std::invalid_argument("apply_scale: scaler was fitted on a different column set");
    Frame out;
    out.set_index(frame.index());
    for (std::size_t j = 0; j < frame.cols(); ++j) {
        const auto& c = frame.columns()[j];
        if (c.name != params.names[j])
            throw std::invalid_argument("apply_scale: column order mismatch at '" + c.name + "'");
        std::vector<double> v(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) v[i] = params.forward(j, c.values[i]);
        out.add_column(Series(std::move(v), c.name));
    }
    return out;
}

inline Frame inverse_scale(const Frame& frame, const ScalerParams& params) {
    if (params.names.size() != frame.cols())
        throw std::invalid_argument("inverse_scale: scaler was fitted on a different column set");
    Frame out;
    out.set_index(frame.index());
    for (std::size_t j = 0; j < frame.cols(); ++j) {
        const auto& c = frame.columns()[j];
        std::vector<double> v(c.size());
        for (std::size_t i = 0; i < c.size(); ++i) v[i] = params.inverse(j, c.values[i]);
        out.add_column(Series(std::move(v), c.name));
    }
    return out;
}

/// Single-series min-max scaler used for predictor targets (sigmoid output
/// head). Fitted on the first `train_rows` values.
struct SeriesScaler {
    double lo = 0.0;
    double hi = 1.0;
    double mean = 0.0;
    double sd = 1.0;

    static SeriesScaler fit(const std::vector<double>& v, std::size_t train_rows) {
        if (train_rows < 2 || train_rows > v.size())
            throw std::invalid_argument("SeriesScaler: training slice must have 2..n rows");
        SeriesScaler s;
        s.lo = s.hi = v[0];
        double sum = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) {
            s.lo = std::min(s.lo, v[i]);
            s.hi = std::max(s.hi, v[i]);
            sum += v[i];
        }
        s.mean = sum / static_cast<double>(train_rows);
        double ss = 0.0;
        for (std::size_t i = 0; i < train_rows; ++i) ss += (v[i] - s.mean) * (v[i] - s.mean);
        s.sd = std::sqrt(ss / static_cast<double>(train_rows));
        if (!(s.hi > s.lo)) throw std::invalid_argument("SeriesScaler: constant training slice");
        return s;
    }

    double forward(double x) const { return (x - lo) / (hi - lo); }
    double inverse(double y) const { return lo + y * (hi - lo); }
};

}  // namespace latentstat
