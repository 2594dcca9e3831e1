#pragma once

#include <cstdint>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "latentstat/decompose.hpp"
#include "latentstat/network.hpp"
#include "latentstat/series.hpp"
#include "latentstat/tensor.hpp"

namespace latentstat {

// ============================================================================
// Seasonal store
// ============================================================================

/// Non-learnable embedding bank S_ne: one latent vector per phase of the
/// period, immutable after construction. The fingerprint ties the store to
/// the encoder whose latents built it.
class SeasonalStore {
public:
    SeasonalStore(std::vector<double> embeddings, int period, std::size_t latent_dim,
                  std::uint64_t encoder_fingerprint)
        : emb_(std::move(embeddings)), period_(period), k_(latent_dim), fp_(encoder_fingerprint) {
        if (period_ < 1) throw std::invalid_argument("SeasonalStore: period must be >= 1");
        if (emb_.size() != static_cast<std::size_t>(period_) * k_)
            throw std::invalid_argument("SeasonalStore: embedding buffer is not period x latent_dim");
    }

    int period() const { return period_; }
    std::size_t latent_dim() const { return k_; }
    std::uint64_t encoder_fingerprint() const { return fp_; }
    const std::vector<double>& embeddings() const { return emb_; }
    const double* row(int phase) const { return &emb_[static_cast<std::size_t>(phase) * k_]; }

    void save(const std::string& path) const {
        nlohmann::json header;
        header["schema_version"] = 1;
        header["model"] = "seasonal-store";
        header["period"] = period_;
        header["latent_dim"] = k_;
        header["encoder_fingerprint"] = fingerprint_hex(fp_);
        std::vector<double> body = emb_;
        std::vector<double> grad;
        ParamBlock block{"embeddings", {static_cast<std::size_t>(period_), k_}, &body, nullptr,
                         false};
        save_checkpoint(path, header, {block});
    }

    static SeasonalStore load(const std::string& path) {
        LoadedCheckpoint ck = read_checkpoint(path);
        if (ck.header.value("model", "") != "seasonal-store")
            throw std::runtime_error("seasonal store: '" + path + "' holds a '" +
                                     ck.header.value("model", "?") + "' checkpoint");
        int period = ck.header.at("period").get<int>();
        std::size_t k = ck.header.at("latent_dim").get<std::size_t>();
        std::uint64_t fp =
            std::stoull(ck.header.at("encoder_fingerprint").get<std::string>(), nullptr, 16);
        return SeasonalStore(std::move(ck.buffer), period, k, fp);
    }

private:
    std::vector<double> emb_;
    int period_;
    std::size_t k_;
    std::uint64_t fp_;
};

/// Encodes every row of the (already decomposed) seasonal data and stores the
/// per-phase mean latent vector for each of the T phases. `encode` maps an
/// (N, d) tensor to (N, k) and is typically a trained phase-1 encoder.
template <typename EncodeFn>
SeasonalStore build_seasonal_store(EncodeFn&& encode, const Tensor& seasonal_rows, int period,
                                   std::uint64_t encoder_fingerprint) {
    if (seasonal_rows.shape.size() != 2)
        throw std::invalid_argument("build_seasonal_store: need an (N, d) matrix");
    const std::size_t n = seasonal_rows.shape[0];
    if (period < 1) throw std::invalid_argument("build_seasonal_store: period must be >= 1");
    if (n < static_cast<std::size_t>(period))
        throw std::invalid_argument("build_seasonal_store: fewer rows (" + std::to_string(n) +
                                    ") than phases (" + std::to_string(period) + ")");
    Tensor z = encode(seasonal_rows);
    if (z.shape.size() != 2 || z.shape[0] != n)
        throw std::invalid_argument("build_seasonal_store: encoder returned shape " +
                                    z.shape_str());
    const std::size_t k = z.shape[1];
    std::vector<double> sums(static_cast<std::size_t>(period) * k, 0.0);
    std::vector<std::size_t> counts(period, 0);
    for (std::size_t t = 0; t < n; ++t) {
        std::size_t phase = t % static_cast<std::size_t>(period);
        ++counts[phase];
        for (std::size_t j = 0; j < k; ++j) sums[phase * k + j] += z.data[t * k + j];
    }
    for (int p = 0; p < period; ++p)
        for (std::size_t j = 0; j < k; ++j)
            sums[static_cast<std::size_t>(p) * k + j] /= static_cast<double>(counts[p]);
    return SeasonalStore(std::move(sums), period, k, encoder_fingerprint);
}

// ============================================================================
// Latent operations
// ============================================================================

struct LSAConfig {
    double phi = 1.0;
    double gamma = 1.0;
};

struct LatentDecomposition {
    Tensor z;        // raw latent series
    Tensor z_s;      // latent seasonal (per-column decomposition)
    Tensor z_sn;     // seasonal snapped to the store
    Tensor z_rtr;    // z - z_sn (residual + trend)
    Tensor z_stnry;  // differenced z_rtr
    Tensor z_tr;     // z - (z_stnry + z_sn), the trend remainder
};

/// Snaps each row to its nearest store row (squared Euclidean); ties go to
/// the lowest store index.
inline Tensor snap_seasonal(const Tensor& z_s, const SeasonalStore& store) {
    if (z_s.shape.size() != 2 || z_s.shape[1] != store.latent_dim())
        throw std::invalid_argument("snap_seasonal: latent dim mismatch (query " + z_s.shape_str() +
                                    ", store k=" + std::to_string(store.latent_dim()) + ")");
    const std::size_t n = z_s.shape[0], k = store.latent_dim();
    Tensor out({n, k});
    for (std::size_t t = 0; t < n; ++t) {
        const double* q = &z_s.data[t * k];
        int best = 0;
        double best_d = std::numeric_limits<double>::infinity();
        for (int p = 0; p < store.period(); ++p) {
            const double* e = store.row(p);
            double d = 0.0;
            for (std::size_t j = 0; j < k; ++j) {
                double diff = q[j] - e[j];
                d += diff * diff;
            }
            if (d < best_d) {
                best_d = d;
                best = p;
            }
        }
        const double* e = store.row(best);
        for (std::size_t j = 0; j < k; ++j) out.data[t * k + j] = e[j];
    }
    return out;
}

/// Full latent stationarization: per-column decomposition, store snap,
/// removal, differencing, and the Eq.-1 trend remainder.
inline LatentDecomposition stationarize(const Tensor& z, const SeasonalStore& store, int period,
                                        int diff_order) {
    if (z.shape.size() != 2) throw std::invalid_argument("stationarize: need an (N, k) matrix");
    const std::size_t n = z.shape[0], k = z.shape[1];
    if (k != store.latent_dim())
        throw std::invalid_argument("stationarize: latent dim " + std::to_string(k) +
                                    " != store dim " + std::to_string(store.latent_dim()));
    if (n < 2 * static_cast<std::size_t>(period))
        throw std::invalid_argument("stationarize: need N >= 2*period rows, got " +
                                    std::to_string(n));
    if (diff_order < 1) throw std::invalid_argument("stationarize: diff_order must be >= 1");

    LatentDecomposition d;
    d.z = z;
    d.z_s = Tensor({n, k});
    std::vector<double> col(n);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t t = 0; t < n; ++t) col[t] = z.data[t * k + j];
        DecompositionResult dec = decompose_additive(Series(col, "z"), period);
        for (std::size_t t = 0; t < n; ++t) d.z_s.data[t * k + j] = dec.seasonal.values[t];
    }
    d.z_sn = snap_seasonal(d.z_s, store);
    d.z_rtr = Tensor({n, k});
    for (std::size_t i = 0; i < n * k; ++i) d.z_rtr.data[i] = z.data[i] - d.z_sn.data[i];
    d.z_stnry = Tensor({n, k});
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t t = 0; t < n; ++t) col[t] = d.z_rtr.data[t * k + j];
        std::vector<double> diffed = difference(col, diff_order);
        for (std::size_t t = 0; t < n; ++t) d.z_stnry.data[t * k + j] = diffed[t];
    }
    d.z_tr = Tensor({n, k});
    for (std::size_t i = 0; i < n * k; ++i)
        d.z_tr.data[i] = z.data[i] - (d.z_stnry.data[i] + d.z_sn.data[i]);
    return d;
}

/// z_str = z_stnry + phi*z_sn + gamma*z_tr. Computed in the re-associated
/// form gamma*z + (1-gamma)*z_stnry + (phi-gamma)*z_sn, which makes
/// phi=gamma=1 return z and phi=gamma=0 return z_stnry bit-exactly.
inline Tensor recombine(const LatentDecomposition& d, const LSAConfig& lsa) {
    if (lsa.phi < 0.0 || lsa.phi > 1.0 || lsa.gamma < 0.0 || lsa.gamma > 1.0)
        throw std::invalid_argument("recombine: phi and gamma must lie in [0,1]");
    const std::size_t total = d.z.size();
    Tensor out(d.z.shape);
    const double a = lsa.gamma, b = 1.0 - lsa.gamma, c = lsa.phi - lsa.gamma;
    for (std::size_t i = 0; i < total; ++i)
        out.data[i] = a * d.z.data[i] + b * d.z_stnry.data[i] + c * d.z_sn.data[i];
    return out;
}

/// Eq.-3 penalty: mean squared difference between z and z_stnry.
inline double stationarization_loss(const Tensor& z, const Tensor& z_stnry) {
    if (!z.same_shape(z_stnry))
        throw std::invalid_argument("stationarization_loss: shape mismatch " + z.shape_str() +
                                    " vs " + z_stnry.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        double diff = z.data[i] - z_stnry.data[i];
        acc += diff * diff;
    }
    return acc / static_cast<double>(z.size());
}

// ============================================================================
// Gradient helpers for training through the stationarizer
// ============================================================================

/// One-pass differencing as a linear map D has transpose
///   (D^T g)[0] = -g[1],  (D^T g)[t] = g[t] - g[t+1],  (D^T g)[n-1] = g[n-1],
/// with the index-0 pin accounting for the missing first row.
inline void difference_transpose_inplace(std::vector<double>& g) {
    const std::size_t n = g.size();
    if (n < 2) {
        if (n == 1) g[0] = 0.0;
        return;
    }
    // Ascending order only ever reads the untouched element one ahead.
    g[0] = -g[1];
    for (std::size_t t = 1; t + 1 < n; ++t) g[t] -= g[t + 1];
}

/// The seasonal component of decompose_additive is linear in the input at
/// fixed (n, period); this probes it with unit vectors into a dense n x n
/// row-major matrix. Cached per (n, period) since phase-2 training reuses the
/// same block length every step.
/// w = S^T v for a dense row-major n x n matrix.
inline void matvec_transpose(const std::vector<double>& m, std::size_t n,
                             const std::vector<double>& v, std::vector<double>& w) {
    w.assign(n, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
        double vr = v[r];
        if (vr == 0.0) continue;
        const double* row = &m[r * n];
        for (std::size_t i = 0; i < n; ++i) w[i] += row[i] * vr;
    }
}

inline const std::vector<double>& seasonal_map_matrix(std::size_t n, int period) {
    static std::mutex mu;
    static std::map<std::pair<std::size_t, int>, std::unique_ptr<std::vector<double>>> cache;
    std::lock_guard<std::mutex> lock(mu);
    auto key = std::make_pair(n, period);
    auto it = cache.find(key);
    if (it != cache.end()) return *it->second;
    auto matrix = std::make_unique<std::vector<double>>(n * n, 0.0);
    std::vector<double> unit(n, 0.0);
    for (std::size_t j = 0; j < n; ++j) {
        unit[j] = 1.0;
        DecompositionResult dec = decompose_additive(Series(unit, "probe"), period);
        for (std::size_t i = 0; i < n; ++i) (*matrix)[i * n + j] = dec.seasonal.values[i];
        unit[j] = 0.0;
    }
    auto& slot = cache[key];
    slot = std::move(matrix);
    return *slot;
}

/// Transposed Jacobian of z_str w.r.t. z under the training conventions:
/// the snap is straight-through (d z_sn / d z ~= S, the linear seasonal map)
/// and differencing is exactly linear, giving
///   J = gamma*I + (1-gamma)*D^m (I-S) + (phi-gamma)*S.
/// Zero coefficients are short-circuited, so phi=gamma=1 passes the gradient
/// through untouched (plain-autoencoder equality).
inline Tensor stationarize_recombine_grad(const Tensor& g_zstr, const LSAConfig& lsa, int period,
                                          int diff_order) {
    if (g_zstr.shape.size() != 2)
        throw std::invalid_argument("stationarize_recombine_grad: need an (N, k) gradient");
    const double a = lsa.gamma, b = 1.0 - lsa.gamma, c = lsa.phi - lsa.gamma;
    if (b == 0.0 && c == 0.0) {
        Tensor out = g_zstr;
        if (a != 1.0)
            for (double& v : out.data) v *= a;
        return out;
    }
    const std::size_t n = g_zstr.shape[0], k = g_zstr.shape[1];
    const std::vector<double>& s = seasonal_map_matrix(n, period);
    Tensor out({n, k});
    std::vector<double> g(n), h(n), sth(n), stg(n);
    for (std::size_t j = 0; j < k; ++j) {
        for (std::size_t t = 0; t < n; ++t) g[t] = g_zstr.data[t * k + j];
        for (std::size_t t = 0; t < n; ++t) out.data[t * k + j] = a * g[t];
        if (b != 0.0) {
            h = g;
            for (int pass = 0; pass < diff_order; ++pass) difference_transpose_inplace(h);
            matvec_transpose(s, n, h, sth);
            for (std::size_t t = 0; t < n; ++t) out.data[t * k + j] += b * (h[t] - sth[t]);
        }
        if (c != 0.0) {
            matvec_transpose(s, n, g, stg);
            for (std::size_t t = 0; t < n; ++t) out.data[t * k + j] += c * stg[t];
        }
    }
    return out;
}

}  // namespace latentstat
