#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "latentstat/layers.hpp"
#include "latentstat/random.hpp"
#include "latentstat/tensor.hpp"

namespace latentstat {

namespace detail {

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

/// y[b,:] += W * a[b,:] for a row-major (out_dim, in_dim) weight matrix.
inline void gate_matvec(const std::vector<double>& w, std::size_t out_dim, std::size_t in_dim,
                        const std::vector<double>& a, std::size_t batch, std::vector<double>& y) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double acc = 0.0;
            const double* arow = &a[b * in_dim];
            const double* wrow = &w[o * in_dim];
            for (std::size_t i = 0; i < in_dim; ++i) acc += wrow[i] * arow[i];
            y[b * out_dim + o] += acc;
        }
}

/// Accumulates dW += d^T a and da += W^T d for one gate.
inline void gate_backward(const std::vector<double>& w, std::vector<double>& gw,
                          std::size_t out_dim, std::size_t in_dim, const std::vector<double>& a,
                          const std::vector<double>& d, std::size_t batch,
                          std::vector<double>& da) {
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t o = 0; o < out_dim; ++o) {
            double dv = d[b * out_dim + o];
            const double* arow = &a[b * in_dim];
            double* gwrow = &gw[o * in_dim];
            const double* wrow = &w[o * in_dim];
            double* darow = &da[b * in_dim];
            for (std::size_t i = 0; i < in_dim; ++i) {
                gwrow[i] += dv * arow[i];
                darow[i] += dv * wrow[i];
            }
        }
}

}  // namespace detail

// ============================================================================
// LSTM
// ============================================================================

/// Standard LSTM cell. Gates read the concatenation [h_{t-1}; x_t]; all four
/// gates carry biases.
struct LSTMCell {
    std::size_t in = 0, hidden = 0;
    std::vector<double> wi, wf, wg, wo, bi, bf, bg, bo;
    std::vector<double> gwi, gwf, gwg, gwo, gbi, gbf, gbg, gbo;

    LSTMCell() = default;
    LSTMCell(std::size_t in_dim, std::size_t hidden_dim, Rng& rng) : in(in_dim), hidden(hidden_dim) {
        std::size_t a = hidden + in;
        for (auto* w : {&wi, &wf, &wg, &wo}) {
            w->assign(hidden * a, 0.0);
            detail::init_uniform(*w, a, hidden, rng);
        }
        for (auto* b : {&bi, &bf, &bg, &bo}) b->assign(hidden, 0.0);
        for (auto* g : {&gwi, &gwf, &gwg, &gwo}) g->assign(hidden * a, 0.0);
        for (auto* g : {&gbi, &gbf, &gbg, &gbo}) g->assign(hidden, 0.0);
    }

    std::vector<ParamBlock> parameters(const std::string& prefix) {
        std::size_t a = hidden + in;
        return {{prefix + "w_i", {hidden, a}, &wi, &gwi, true},
                {prefix + "w_f", {hidden, a}, &wf, &gwf, true},
                {prefix + "w_g", {hidden, a}, &wg, &gwg, true},
                {prefix + "w_o", {hidden, a}, &wo, &gwo, true},
                {prefix + "b_i", {hidden}, &bi, &gbi, true},
                {prefix + "b_f", {hidden}, &bf, &gbf, true},
                {prefix + "b_g", {hidden}, &bg, &gbg, true},
                {prefix + "b_o", {hidden}, &bo, &gbo, true}};
    }
};

struct LSTMStepCache {
    std::vector<double> a, i, f, g, o, c_prev, c, tc;
};

namespace detail {

inline void lstm_step(LSTMCell& cell, const std::vector<double>& a, std::size_t batch,
                      const std::vector<double>& c_prev, std::vector<double>& h_out,
                      std::vector<double>& c_out, LSTMStepCache& cache) {
    const std::size_t h = cell.hidden, aw = h + cell.in;
    cache.a = a;
    cache.c_prev = c_prev;
    cache.i.assign(batch * h, 0.0);
    cache.f.assign(batch * h, 0.0);
    cache.g.assign(batch * h, 0.0);
    cache.o.assign(batch * h, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < h; ++j) {
            cache.i[b * h + j] = cell.bi[j];
            cache.f[b * h + j] = cell.bf[j];
            cache.g[b * h + j] = cell.bg[j];
            cache.o[b * h + j] = cell.bo[j];
        }
    gate_matvec(cell.wi, h, aw, a, batch, cache.i);
    gate_matvec(cell.wf, h, aw, a, batch, cache.f);
    gate_matvec(cell.wg, h, aw, a, batch, cache.g);
    gate_matvec(cell.wo, h, aw, a, batch, cache.o);
    cache.c.assign(batch * h, 0.0);
    cache.tc.assign(batch * h, 0.0);
    h_out.assign(batch * h, 0.0);
    c_out.assign(batch * h, 0.0);
    for (std::size_t n = 0; n < batch * h; ++n) {
        double iv = sigmoid(cache.i[n]);
        double fv = sigmoid(cache.f[n]);
        double gv = std::tanh(cache.g[n]);
        double ov = sigmoid(cache.o[n]);
        cache.i[n] = iv;
        cache.f[n] = fv;
        cache.g[n] = gv;
        cache.o[n] = ov;
        double cv = fv * c_prev[n] + iv * gv;
        cache.c[n] = cv;
        cache.tc[n] = std::tanh(cv);
        c_out[n] = cv;
        h_out[n] = cache.o[n] * cache.tc[n];
    }
}

/// BPTT for one step. dh/dc are gradients w.r.t. this step's outputs; on
/// return dh_prev/dc_prev hold the previous step's and da the concat input's.
inline void lstm_step_backward(LSTMCell& cell, const LSTMStepCache& cache, std::size_t batch,
                               const std::vector<double>& dh, const std::vector<double>& dc_in,
                               std::vector<double>& dc_prev, std::vector<double>& da) {
    const std::size_t h = cell.hidden, aw = h + cell.in;
    std::vector<double> di(batch * h), df(batch * h), dg(batch * h), dout(batch * h);
    dc_prev.assign(batch * h, 0.0);
    for (std::size_t n = 0; n < batch * h; ++n) {
        double dc = dc_in[n] + dh[n] * cache.o[n] * (1.0 - cache.tc[n] * cache.tc[n]);
        double dov = dh[n] * cache.tc[n];
        di[n] = dc * cache.g[n] * cache.i[n] * (1.0 - cache.i[n]);
        df[n] = dc * cache.c_prev[n] * cache.f[n] * (1.0 - cache.f[n]);
        dg[n] = dc * cache.i[n] * (1.0 - cache.g[n] * cache.g[n]);
        dout[n] = dov * cache.o[n] * (1.0 - cache.o[n]);
        dc_prev[n] = dc * cache.f[n];
    }
    da.assign(batch * aw, 0.0);
    gate_backward(cell.wi, cell.gwi, h, aw, cache.a, di, batch, da);
    gate_backward(cell.wf, cell.gwf, h, aw, cache.a, df, batch, da);
    gate_backward(cell.wg, cell.gwg, h, aw, cache.a, dg, batch, da);
    gate_backward(cell.wo, cell.gwo, h, aw, cache.a, dout, batch, da);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < h; ++j) {
            cell.gbi[j] += di[b * h + j];
            cell.gbf[j] += df[b * h + j];
            cell.gbg[j] += dg[b * h + j];
            cell.gbo[j] += dout[b * h + j];
        }
}

}  // namespace detail

// ============================================================================
// GRU
// ============================================================================

/// GRU cell with bias-free update and reset gates:
///   u_t = sigma(W_u [h_{t-1}; x_t]),  r_t = sigma(W_r [h_{t-1}; x_t]),
///   hcand = tanh(W_h [r_t*h_{t-1}; x_t] + b_h),
///   h_t = u_t*h_{t-1} + (1-u_t)*hcand.
struct GRUCell {
    std::size_t in = 0, hidden = 0;
    std::vector<double> wu, wr, wh, bh;
    std::vector<double> gwu, gwr, gwh, gbh;

    GRUCell() = default;
    GRUCell(std::size_t in_dim, std::size_t hidden_dim, Rng& rng) : in(in_dim), hidden(hidden_dim) {
        std::size_t a = hidden + in;
        for (auto* w : {&wu, &wr, &wh}) {
            w->assign(hidden * a, 0.0);
            detail::init_uniform(*w, a, hidden, rng);
        }
        bh.assign(hidden, 0.0);
        for (auto* g : {&gwu, &gwr, &gwh}) g->assign(hidden * a, 0.0);
        gbh.assign(hidden, 0.0);
    }

    std::vector<ParamBlock> parameters(const std::string& prefix) {
        std::size_t a = hidden + in;
        return {{prefix + "w_u", {hidden, a}, &wu, &gwu, true},
                {prefix + "w_r", {hidden, a}, &wr, &gwr, true},
                {prefix + "w_h", {hidden, a}, &wh, &gwh, true},
                {prefix + "b_h", {hidden}, &bh, &gbh, true}};
    }
};

struct GRUStepCache {
    std::vector<double> a, ar, u, r, h_prev, hcand;
};

namespace detail {

inline void gru_step(GRUCell& cell, const std::vector<double>& a, std::size_t batch,
                     const std::vector<double>& h_prev, std::vector<double>& h_out,
                     GRUStepCache& cache) {
    const std::size_t h = cell.hidden, aw = h + cell.in;
    cache.a = a;
    cache.h_prev = h_prev;
    cache.u.assign(batch * h, 0.0);
    cache.r.assign(batch * h, 0.0);
    gate_matvec(cell.wu, h, aw, a, batch, cache.u);
    gate_matvec(cell.wr, h, aw, a, batch, cache.r);
    for (std::size_t n = 0; n < batch * h; ++n) {
        cache.u[n] = sigmoid(cache.u[n]);
        cache.r[n] = sigmoid(cache.r[n]);
    }
    cache.ar = a;
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < h; ++j)
            cache.ar[b * aw + j] = cache.r[b * h + j] * h_prev[b * h + j];
    cache.hcand.assign(batch * h, 0.0);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < h; ++j) cache.hcand[b * h + j] = cell.bh[j];
    gate_matvec(cell.wh, h, aw, cache.ar, batch, cache.hcand);
    h_out.assign(batch * h, 0.0);
    for (std::size_t n = 0; n < batch * h; ++n) {
        cache.hcand[n] = std::tanh(cache.hcand[n]);
        h_out[n] = cache.u[n] * h_prev[n] + (1.0 - cache.u[n]) * cache.hcand[n];
    }
}

inline void gru_step_backward(GRUCell& cell, const GRUStepCache& cache, std::size_t batch,
                              const std::vector<double>& dh, std::vector<double>& da) {
    const std::size_t h = cell.hidden, aw = h + cell.in;
    std::vector<double> du(batch * h), dcand(batch * h), dr(batch * h);
    std::vector<double> dar(batch * aw, 0.0);
    for (std::size_t n = 0; n < batch * h; ++n) {
        du[n] = dh[n] * (cache.h_prev[n] - cache.hcand[n]) * cache.u[n] * (1.0 - cache.u[n]);
        dcand[n] = dh[n] * (1.0 - cache.u[n]) * (1.0 - cache.hcand[n] * cache.hcand[n]);
    }
    da.assign(batch * aw, 0.0);
    gate_backward(cell.wh, cell.gwh, h, aw, cache.ar, dcand, batch, dar);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t j = 0; j < h; ++j) {
            cell.gbh[j] += dcand[b * h + j];
            // Split dar: the first h entries feed r*h_prev, the rest are dx.
            double v = dar[b * aw + j];
            dr[b * h + j] = v * cache.h_prev[b * h + j];
            da[b * aw + j] += v * cache.r[b * h + j] + dh[b * h + j] * cache.u[b * h + j];
        }
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t i = h; i < aw; ++i) da[b * aw + i] += dar[b * aw + i];
    for (std::size_t n = 0; n < batch * h; ++n) dr[n] *= cache.r[n] * (1.0 - cache.r[n]);
    gate_backward(cell.wu, cell.gwu, h, aw, cache.a, du, batch, da);
    gate_backward(cell.wr, cell.gwr, h, aw, cache.a, dr, batch, da);
}

inline void check_window_input(const Tensor& x, std::size_t in, const std::string& name) {
    if (x.shape.size() != 3 || x.shape[2] != in || x.shape[1] == 0)
        shape_error(name, "expected (batch,length," + std::to_string(in) + "), got " +
                              x.shape_str());
}

/// Copies timestep t of a (B, L, F) tensor into the tail of concat rows.
inline void fill_concat(const Tensor& x, std::size_t t, const std::vector<double>& h,
                        std::size_t hidden, std::vector<double>& a) {
    const std::size_t batch = x.shape[0], len = x.shape[1], feat = x.shape[2];
    const std::size_t aw = hidden + feat;
    a.assign(batch * aw, 0.0);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < hidden; ++j) a[b * aw + j] = h[b * hidden + j];
        for (std::size_t f = 0; f < feat; ++f)
            a[b * aw + hidden + f] = x.data[(b * len + t) * feat + f];
    }
}

}  // namespace detail

// ============================================================================
// Sequence layers (final hidden state)
// ============================================================================

/// Runs an LSTM over a (batch, length, features) window and emits the final
/// hidden state (batch, hidden).
class LSTMLayer : public Layer {
public:
    LSTMLayer(std::size_t in, std::size_t hidden, Rng& rng) : cell_(in, hidden, rng) {}

    std::string kind() const override { return "lstm"; }
    std::size_t hidden() const { return cell_.hidden; }

    Tensor forward(const Tensor& x, Mode) override {
        detail::check_window_input(x, cell_.in, "lstm");
        const std::size_t batch = x.shape[0], len = x.shape[1];
        const std::size_t h = cell_.hidden;
        x_ = x;
        caches_.assign(len, {});
        std::vector<double> hstate(batch * h, 0.0), cstate(batch * h, 0.0), a;
        for (std::size_t t = 0; t < len; ++t) {
            detail::fill_concat(x, t, hstate, h, a);
            std::vector<double> hn, cn;
            detail::lstm_step(cell_, a, batch, cstate, hn, cn, caches_[t]);
            hstate.swap(hn);
            cstate.swap(cn);
        }
        have_cache_ = true;
        return Tensor({batch, h}, hstate);
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0], len = x_.shape[1], feat = x_.shape[2];
        const std::size_t h = cell_.hidden, aw = h + feat;
        if (g.shape != std::vector<std::size_t>{batch, h})
            detail::shape_error("lstm", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, len, feat});
        std::vector<double> dh = g.data, dc(batch * h, 0.0), dc_prev, da;
        for (std::size_t t = len; t-- > 0;) {
            detail::lstm_step_backward(cell_, caches_[t], batch, dh, dc, dc_prev, da);
            dc.swap(dc_prev);
            dh.assign(batch * h, 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = da[b * aw + j];
                for (std::size_t f = 0; f < feat; ++f)
                    gx.data[(b * len + t) * feat + f] += da[b * aw + h + f];
            }
        }
        return gx;
    }

    std::vector<ParamBlock> parameters() override { return cell_.parameters(""); }

private:
    LSTMCell cell_;
    Tensor x_;
    std::vector<LSTMStepCache> caches_;
    bool have_cache_ = false;
};

/// Two independent LSTM directions over the same window; emits the
/// concatenation of both final hidden states (batch, 2*hidden).
class BLSTMLayer : public Layer {
public:
    BLSTMLayer(std::size_t in, std::size_t hidden, Rng& rng)
        : fwd_(in, hidden, rng), bwd_(in, hidden, rng) {}

    std::string kind() const override { return "blstm"; }

    Tensor forward(const Tensor& x, Mode) override {
        detail::check_window_input(x, fwd_.in, "blstm");
        const std::size_t batch = x.shape[0], len = x.shape[1];
        const std::size_t h = fwd_.hidden;
        x_ = x;
        fwd_caches_.assign(len, {});
        bwd_caches_.assign(len, {});
        std::vector<double> hf(batch * h, 0.0), cf(batch * h, 0.0);
        std::vector<double> hb(batch * h, 0.0), cb(batch * h, 0.0), a;
        for (std::size_t t = 0; t < len; ++t) {
            detail::fill_concat(x, t, hf, h, a);
            std::vector<double> hn, cn;
            detail::lstm_step(fwd_, a, batch, cf, hn, cn, fwd_caches_[t]);
            hf.swap(hn);
            cf.swap(cn);
        }
        for (std::size_t t = len; t-- > 0;) {
            detail::fill_concat(x, t, hb, h, a);
            std::vector<double> hn, cn;
            detail::lstm_step(bwd_, a, batch, cb, hn, cn, bwd_caches_[t]);
            hb.swap(hn);
            cb.swap(cn);
        }
        Tensor y({batch, 2 * h});
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t j = 0; j < h; ++j) {
                y.data[b * 2 * h + j] = hf[b * h + j];
                y.data[b * 2 * h + h + j] = hb[b * h + j];
            }
        }
        have_cache_ = true;
        return y;
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0], len = x_.shape[1], feat = x_.shape[2];
        const std::size_t h = fwd_.hidden, aw = h + feat;
        if (g.shape != std::vector<std::size_t>{batch, 2 * h})
            detail::shape_error("blstm", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, len, feat});
        std::vector<double> dh(batch * h), dc(batch * h, 0.0), dc_prev, da;
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = g.data[b * 2 * h + j];
        for (std::size_t t = len; t-- > 0;) {
            detail::lstm_step_backward(fwd_, fwd_caches_[t], batch, dh, dc, dc_prev, da);
            dc.swap(dc_prev);
            dh.assign(batch * h, 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = da[b * aw + j];
                for (std::size_t f = 0; f < feat; ++f)
                    gx.data[(b * len + t) * feat + f] += da[b * aw + h + f];
            }
        }
        dc.assign(batch * h, 0.0);
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = g.data[b * 2 * h + h + j];
        for (std::size_t t = 0; t < len; ++t) {
            detail::lstm_step_backward(bwd_, bwd_caches_[t], batch, dh, dc, dc_prev, da);
            dc.swap(dc_prev);
            dh.assign(batch * h, 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = da[b * aw + j];
                for (std::size_t f = 0; f < feat; ++f)
                    gx.data[(b * len + t) * feat + f] += da[b * aw + h + f];
            }
        }
        return gx;
    }

    std::vector<ParamBlock> parameters() override {
        auto p = fwd_.parameters("fw_");
        auto q = bwd_.parameters("bw_");
        p.insert(p.end(), q.begin(), q.end());
        return p;
    }

private:
    LSTMCell fwd_, bwd_;
    Tensor x_;
    std::vector<LSTMStepCache> fwd_caches_, bwd_caches_;
    bool have_cache_ = false;
};

/// GRU over a window; final hidden state out.
class GRULayer : public Layer {
public:
    GRULayer(std::size_t in, std::size_t hidden, Rng& rng) : cell_(in, hidden, rng) {}

    std::string kind() const override { return "gru"; }

    Tensor forward(const Tensor& x, Mode) override {
        detail::check_window_input(x, cell_.in, "gru");
        const std::size_t batch = x.shape[0], len = x.shape[1];
        const std::size_t h = cell_.hidden;
        x_ = x;
        caches_.assign(len, {});
        std::vector<double> hstate(batch * h, 0.0), a;
        for (std::size_t t = 0; t < len; ++t) {
            detail::fill_concat(x, t, hstate, h, a);
            std::vector<double> hn;
            detail::gru_step(cell_, a, batch, hstate, hn, caches_[t]);
            hstate.swap(hn);
        }
        have_cache_ = true;
        return Tensor({batch, h}, hstate);
    }

    Tensor backward(const Tensor& g) override {
        require_forward(have_cache_);
        const std::size_t batch = x_.shape[0], len = x_.shape[1], feat = x_.shape[2];
        const std::size_t h = cell_.hidden, aw = h + feat;
        if (g.shape != std::vector<std::size_t>{batch, h})
            detail::shape_error("gru", "bad upstream gradient shape " + g.shape_str());
        Tensor gx({batch, len, feat});
        std::vector<double> dh = g.data, da;
        for (std::size_t t = len; t-- > 0;) {
            detail::gru_step_backward(cell_, caches_[t], batch, dh, da);
            dh.assign(batch * h, 0.0);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 0; j < h; ++j) dh[b * h + j] = da[b * aw + j];
                for (std::size_t f = 0; f < feat; ++f)
                    gx.data[(b * len + t) * feat + f] += da[b * aw + h + f];
            }
        }
        return gx;
    }

    std::vector<ParamBlock> parameters() override { return cell_.parameters(""); }

private:
    GRUCell cell_;
    Tensor x_;
    std::vector<GRUStepCache> caches_;
    bool have_cache_ = false;
};

}  // namespace latentstat
