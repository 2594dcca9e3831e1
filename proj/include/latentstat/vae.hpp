#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentstat/layers.hpp"
#include "latentstat/network.hpp"
#include "latentstat/optimizer.hpp"
#include "latentstat/random.hpp"
#include "latentstat/series.hpp"
#include "latentstat/stationarizer.hpp"
#include "latentstat/tensor.hpp"

namespace latentstat {

// ============================================================================
// Config and history
// ============================================================================

struct VaeConfig {
    std::size_t input_dim = 0;
    std::size_t latent_dim = 4;
    double learning_rate = 1e-4;
    std::size_t batch_size = 64;
    int epochs = 30;
    double val_split = 0.2;
    double kl_weight = 0.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (input_dim < 2) throw std::invalid_argument("vae config: input_dim must be >= 2");
        if (latent_dim < 1) throw std::invalid_argument("vae config: latent_dim must be >= 1");
        if (latent_dim >= input_dim)
            throw std::invalid_argument("vae config: latent_dim must be < input_dim");
        if (learning_rate <= 0.0) throw std::invalid_argument("vae config: learning_rate <= 0");
        if (batch_size < 1) throw std::invalid_argument("vae config: batch_size must be >= 1");
        if (epochs < 1) throw std::invalid_argument("vae config: epochs must be >= 1");
        if (val_split <= 0.0 || val_split >= 1.0)
            throw std::invalid_argument("vae config: val_split must lie in (0,1)");
        if (kl_weight < 0.0) throw std::invalid_argument("vae config: kl_weight must be >= 0");
    }
};

inline void to_json(nlohmann::json& j, const VaeConfig& c) {
    j = nlohmann::json{{"input_dim", c.input_dim},       {"latent_dim", c.latent_dim},
                       {"learning_rate", c.learning_rate}, {"batch_size", c.batch_size},
                       {"epochs", c.epochs},             {"val_split", c.val_split},
                       {"kl_weight", c.kl_weight},       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, VaeConfig& c) {
    j.at("input_dim").get_to(c.input_dim);
    j.at("latent_dim").get_to(c.latent_dim);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("batch_size").get_to(c.batch_size);
    j.at("epochs").get_to(c.epochs);
    j.at("val_split").get_to(c.val_split);
    j.at("kl_weight").get_to(c.kl_weight);
    j.at("seed").get_to(c.seed);
}

struct TrainHistory {
    std::vector<double> train_loss;
    std::vector<double> val_loss;
    std::vector<double> recon_loss;
    std::vector<double> stnry_loss;
    std::vector<double> kl_loss;
};

// ============================================================================
// Losses
// ============================================================================

inline double mse(const Tensor& pred, const Tensor& target) {
    if (!pred.same_shape(target))
        throw std::invalid_argument("mse: shape mismatch " + pred.shape_str() + " vs " +
                                    target.shape_str());
    double acc = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        double d = pred.data[i] - target.data[i];
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

inline Tensor mse_grad(const Tensor& pred, const Tensor& target) {
    Tensor g(pred.shape);
    const double scale = 2.0 / static_cast<double>(pred.size());
    for (std::size_t i = 0; i < pred.size(); ++i)
        g.data[i] = scale * (pred.data[i] - target.data[i]);
    return g;
}

// ============================================================================
// Model
// ============================================================================

/// Encoder/decoder pair over per-timestep feature vectors. The input row of
/// length d is right-zero-padded to P = max(d, 5) so the four-convolution
/// stride algebra closes, and the decoder ends with a linear projection back
/// to d. With kl_weight == 0 the model runs as a deterministic autoencoder;
/// the variational head exists either way so checkpoints have one layout.
class VaeModel {
public:
    explicit VaeModel(const VaeConfig& cfg) : cfg_(cfg) {
        cfg_.validate();
        padded_ = std::max<std::size_t>(cfg_.input_dim, 5);
        const std::size_t l1 = padded_ - 1;
        const std::size_t l2 = (l1 - 2) / 2 + 1;
        const std::size_t l3 = (l2 - 2) / 2 + 1;
        flat_ = 4 * l3;

        Rng rng(derive_seed(cfg_.seed, "vae-init"));
        enc_.emplace<Conv1D>(1, 32, 2, 1, rng);
        enc_.emplace<BatchNorm>(32);
        enc_.emplace<LeakyReLU>(0.2);
        enc_.emplace<Conv1D>(32, 16, 2, 2, rng);
        enc_.emplace<BatchNorm>(16);
        enc_.emplace<LeakyReLU>(0.2);
        enc_.emplace<Conv1D>(16, 8, 2, 2, rng);
        enc_.emplace<BatchNorm>(8);
        enc_.emplace<LeakyReLU>(0.2);
        enc_.emplace<Conv1D>(8, 4, 1, 1, rng);
        enc_.emplace<BatchNorm>(4);
        enc_.emplace<LeakyReLU>(0.2);
        enc_.emplace<Flatten>();
        mu_head_.emplace<Dense>(flat_, cfg_.latent_dim, rng);
        mu_head_.emplace<LeakyReLU>(0.2);
        logvar_head_.emplace<Dense>(flat_, cfg_.latent_dim, rng);

        dec_.emplace<Dense>(cfg_.latent_dim, l3 * 4, rng);
        dec_.emplace<Reshape>(std::vector<std::size_t>{l3, 4});
        dec_.emplace<BatchNorm>(4);
        dec_.emplace<LeakyReLU>(0.2);
        dec_.emplace<Conv1DTranspose>(4, 8, 2, 2, rng);
        dec_.emplace<BatchNorm>(8);
        dec_.emplace<LeakyReLU>(0.2);
        dec_.emplace<Conv1DTranspose>(8, 16, 2, 1, rng);
        dec_.emplace<BatchNorm>(16);
        dec_.emplace<LeakyReLU>(0.2);
        dec_.emplace<Conv1DTranspose>(16, 1, 2, 1, rng);
        dec_.emplace<BatchNorm>(1);
        dec_.emplace<LeakyReLU>(0.2);
        dec_.emplace<Conv1DTranspose>(1, 1, 2, 1, rng);
        dec_.emplace<LeakyReLU>(0.2);
        dec_.emplace<Flatten>();
        const std::size_t dec_len = 2 * l3 + 3;
        dec_.emplace<Dense>(dec_len, cfg_.input_dim, rng);
    }

    const VaeConfig& config() const { return cfg_; }
    std::size_t padded_dim() const { return padded_; }
    std::size_t latent_dim() const { return cfg_.latent_dim; }
    std::size_t input_dim() const { return cfg_.input_dim; }

    /// (batch, d) -> latent means (batch, k). The flattened trunk output is
    /// cached so the log-variance head and backward can reuse it.
    Tensor encode(const Tensor& rows, Mode mode) {
        Tensor padded = pad(rows);
        Tensor flat = enc_.forward(padded, mode);
        last_flat_ = flat;
        return mu_head_.forward(flat, mode);
    }

    /// Log-variance head over the trunk output of the latest encode call.
    Tensor encode_logvar(Mode mode) {
        if (last_flat_.size() == 0)
            throw std::logic_error("vae: encode_logvar called before encode");
        return logvar_head_.forward(last_flat_, mode);
    }

    Tensor decode(const Tensor& latents, Mode mode) {
        if (latents.shape.size() != 2 || latents.shape[1] != cfg_.latent_dim)
            throw std::invalid_argument("vae decode: expected (batch," +
                                        std::to_string(cfg_.latent_dim) + "), got " +
                                        latents.shape_str());
        return dec_.forward(latents, mode);
    }

    /// Backpropagates a reconstruction gradient; returns the latent gradient.
    Tensor decoder_backward(const Tensor& grad_output) { return dec_.backward(grad_output); }

    /// Backpropagates latent-space gradients through the heads and trunk.
    void encoder_backward(const Tensor& grad_mu, const Tensor* grad_logvar = nullptr) {
        Tensor gf = mu_head_.backward(grad_mu);
        if (grad_logvar) {
            Tensor gf2 = logvar_head_.backward(*grad_logvar);
            for (std::size_t i = 0; i < gf.size(); ++i) gf.data[i] += gf2.data[i];
        }
        enc_.backward(gf);
    }

    void zero_grad() {
        enc_.zero_grad();
        mu_head_.zero_grad();
        logvar_head_.zero_grad();
        dec_.zero_grad();
    }

    std::vector<ParamBlock> parameters() {
        std::vector<ParamBlock> out;
        append_prefixed(out, enc_.parameters(), "enc.");
        append_prefixed(out, mu_head_.parameters(), "mu.");
        append_prefixed(out, logvar_head_.parameters(), "lv.");
        append_prefixed(out, dec_.parameters(), "dec.");
        return out;
    }

    std::vector<ParamBlock> encoder_parameters() {
        std::vector<ParamBlock> out;
        append_prefixed(out, enc_.parameters(), "enc.");
        append_prefixed(out, mu_head_.parameters(), "mu.");
        append_prefixed(out, logvar_head_.parameters(), "lv.");
        return out;
    }

    std::uint64_t encoder_fingerprint() { return fingerprint_parameters(encoder_parameters()); }

    void save(const std::string& path, const std::string& role,
              const nlohmann::json& extra = nlohmann::json::object()) {
        nlohmann::json header;
        header["schema_version"] = 1;
        header["model"] = "vae";
        header["role"] = role;
        header["config"] = cfg_;
        header["padded_dim"] = padded_;
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& p : parameters()) {
            nlohmann::json pj;
            pj["name"] = p.name;
            pj["shape"] = p.shape;
            layers.push_back(pj);
        }
        header["params"] = layers;
        for (auto it = extra.begin(); it != extra.end(); ++it) header[it.key()] = it.value();
        save_checkpoint(path, header, parameters());
    }

    static VaeModel load(const std::string& path) { return load_with_header(path).first; }

    static std::pair<VaeModel, nlohmann::json> load_with_header(const std::string& path) {
        LoadedCheckpoint ck = read_checkpoint(path);
        if (ck.header.value("model", "") != "vae")
            throw std::runtime_error("vae: '" + path + "' holds a '" +
                                     ck.header.value("model", "?") + "' checkpoint");
        VaeConfig cfg = ck.header.at("config").get<VaeConfig>();
        VaeModel model(cfg);
        fill_parameters(model.parameters(), ck.buffer);
        return {std::move(model), std::move(ck.header)};
    }

private:
    static void append_prefixed(std::vector<ParamBlock>& out, std::vector<ParamBlock> blocks,
                                const std::string& prefix) {
        for (auto& b : blocks) {
            b.name = prefix + b.name;
            out.push_back(std::move(b));
        }
    }

    Tensor pad(const Tensor& rows) const {
        if (rows.shape.size() != 2 || rows.shape[1] != cfg_.input_dim)
            throw std::invalid_argument("vae encode: expected (batch," +
                                        std::to_string(cfg_.input_dim) + "), got " +
                                        rows.shape_str());
        const std::size_t batch = rows.shape[0];
        Tensor x({batch, padded_, 1});
        for (std::size_t b = 0; b < batch; ++b)
            for (std::size_t f = 0; f < cfg_.input_dim; ++f)
                x.data[b * padded_ + f] = rows.data[b * cfg_.input_dim + f];
        return x;
    }

    VaeConfig cfg_;
    std::size_t padded_ = 0, flat_ = 0;
    Sequential enc_, mu_head_, logvar_head_, dec_;
    Tensor last_flat_;
};

// ============================================================================
// Training
// ============================================================================

namespace detail {

inline Tensor gather_rows(const Tensor& rows, const std::vector<std::size_t>& idx) {
    const std::size_t d = rows.shape[1];
    Tensor out({idx.size(), d});
    for (std::size_t i = 0; i < idx.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) out.data[i * d + j] = rows.data[idx[i] * d + j];
    return out;
}

inline Tensor slice_rows(const Tensor& rows, std::size_t start, std::size_t count) {
    const std::size_t d = rows.shape[1];
    Tensor out({count, d});
    std::copy(rows.data.begin() + static_cast<std::ptrdiff_t>(start * d),
              rows.data.begin() + static_cast<std::ptrdiff_t>((start + count) * d),
              out.data.begin());
    return out;
}

/// Chronological split: the last floor(N*val_split) rows are validation.
inline std::pair<std::size_t, std::size_t> split_rows(std::size_t n, double val_split) {
    auto n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * val_split));
    if (n_val < 1 || n - n_val < 1)
        throw std::invalid_argument("train: " + std::to_string(n) +
                                    " rows leave an empty train or validation slice");
    return {n - n_val, n_val};
}

/// Diagonal-Gaussian KL against the standard normal, mean over the batch.
inline double gaussian_kl(const Tensor& mu, const Tensor& logvar) {
    double acc = 0.0;
    for (std::size_t i = 0; i < mu.size(); ++i)
        acc += std::exp(logvar.data[i]) + mu.data[i] * mu.data[i] - 1.0 - logvar.data[i];
    return 0.5 * acc / static_cast<double>(mu.shape[0]);
}

}  // namespace detail

/// Phase 1: train on the seasonal rows alone. Loss is reconstruction MSE plus
/// kl_weight * KL when the variational path is enabled.
inline TrainHistory train_phase1(VaeModel& model, const Tensor& seasonal_rows,
                                 const VaeConfig& cfg) {
    if (seasonal_rows.shape.size() != 2 || seasonal_rows.shape[1] != cfg.input_dim)
        throw std::invalid_argument("train_phase1: data shape " + seasonal_rows.shape_str() +
                                    " does not match input_dim");
    auto [n_train, n_val] = detail::split_rows(seasonal_rows.shape[0], cfg.val_split);
    const bool variational = cfg.kl_weight > 0.0;
    Rng shuffle_rng(derive_seed(cfg.seed, "phase1-shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "phase1-reparam"));
    Adam opt(model.parameters(), cfg.learning_rate);

    Tensor val_rows = detail::slice_rows(seasonal_rows, n_train, n_val);
    std::vector<std::size_t> order(n_train);
    std::iota(order.begin(), order.end(), 0);

    TrainHistory hist;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double recon_sum = 0.0, kl_sum = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
            std::size_t len = std::min(cfg.batch_size, n_train - start);
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                                         order.begin() + static_cast<std::ptrdiff_t>(start + len));
            Tensor xb = detail::gather_rows(seasonal_rows, idx);
            model.zero_grad();
            Tensor mu = model.encode(xb, Mode::train);
            Tensor z = mu;
            Tensor logvar, eps;
            double kl = 0.0;
            if (variational) {
                logvar = model.encode_logvar(Mode::train);
                eps = Tensor(mu.shape);
                for (std::size_t i = 0; i < z.size(); ++i) {
                    eps.data[i] = noise_rng.normal();
                    z.data[i] = mu.data[i] + std::exp(0.5 * logvar.data[i]) * eps.data[i];
                }
                kl = detail::gaussian_kl(mu, logvar);
            }
            Tensor xhat = model.decode(z, Mode::train);
            double recon = mse(xhat, xb);
            if (!std::isfinite(recon))
                throw std::runtime_error("train_phase1: non-finite loss at epoch " +
                                         std::to_string(epoch + 1));
            Tensor gz = model.decoder_backward(mse_grad(xhat, xb));
            if (variational) {
                Tensor gmu = gz;
                Tensor glv(gz.shape);
                const double bn = static_cast<double>(len);
                for (std::size_t i = 0; i < gz.size(); ++i) {
                    glv.data[i] = gz.data[i] * 0.5 * std::exp(0.5 * logvar.data[i]) * eps.data[i];
                    gmu.data[i] += cfg.kl_weight * mu.data[i] / bn;
                    glv.data[i] += cfg.kl_weight * 0.5 * (std::exp(logvar.data[i]) - 1.0) / bn;
                }
                model.encoder_backward(gmu, &glv);
            } else {
                model.encoder_backward(gz);
            }
            opt.step();
            recon_sum += recon * static_cast<double>(len);
            kl_sum += kl * static_cast<double>(len);
            seen += len;
        }
        double recon_epoch = recon_sum / static_cast<double>(seen);
        double kl_epoch = kl_sum / static_cast<double>(seen);

        Tensor mu_val = model.encode(val_rows, Mode::infer);
        double val_kl = 0.0;
        if (variational) val_kl = detail::gaussian_kl(mu_val, model.encode_logvar(Mode::infer));
        double val_recon = mse(model.decode(mu_val, Mode::infer), val_rows);

        hist.recon_loss.push_back(recon_epoch);
        hist.stnry_loss.push_back(0.0);
        hist.kl_loss.push_back(kl_epoch);
        hist.train_loss.push_back(recon_epoch + cfg.kl_weight * kl_epoch);
        hist.val_loss.push_back(val_recon + cfg.kl_weight * val_kl);
    }
    return hist;
}

/// Phase 2: encode, stationarize, recombine with (phi, gamma), decode. Loss
/// per Eq. 4 is L_recon + L_stnry (+ optional KL). Batches are contiguous
/// chronological blocks so each block can be decomposed; block order is
/// shuffled per epoch. L_stnry treats z_stnry as constant (stop-gradient) and
/// the reconstruction path uses the straight-through seasonal map.
inline TrainHistory train_phase2(VaeModel& model, const Tensor& rows, const SeasonalStore& store,
                                 const LSAConfig& lsa, int period, int diff_order,
                                 const VaeConfig& cfg) {
    if (rows.shape.size() != 2 || rows.shape[1] != cfg.input_dim)
        throw std::invalid_argument("train_phase2: data shape " + rows.shape_str() +
                                    " does not match input_dim");
    if (store.latent_dim() != cfg.latent_dim)
        throw std::invalid_argument("train_phase2: store latent dim " +
                                    std::to_string(store.latent_dim()) + " != config latent dim " +
                                    std::to_string(cfg.latent_dim));
    if (cfg.batch_size < 2 * static_cast<std::size_t>(period))
        throw std::invalid_argument("train_phase2: batch_size must be >= 2*period so each block "
                                    "can be decomposed");
    auto [n_train, n_val] = detail::split_rows(rows.shape[0], cfg.val_split);
    if (n_val < 2 * static_cast<std::size_t>(period))
        throw std::invalid_argument("train_phase2: validation slice shorter than 2*period");
    const bool variational = cfg.kl_weight > 0.0;

    struct Block {
        std::size_t start, len;
    };
    std::vector<Block> blocks;
    for (std::size_t start = 0; start < n_train; start += cfg.batch_size) {
        std::size_t len = std::min(cfg.batch_size, n_train - start);
        if (len >= 2 * static_cast<std::size_t>(period)) blocks.push_back({start, len});
    }
    if (blocks.empty()) throw std::invalid_argument("train_phase2: no usable blocks");

    Rng shuffle_rng(derive_seed(cfg.seed, "phase2-shuffle"));
    Rng noise_rng(derive_seed(cfg.seed, "phase2-reparam"));
    Adam opt(model.parameters(), cfg.learning_rate);
    Tensor val_rows = detail::slice_rows(rows, n_train, n_val);

    TrainHistory hist;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(blocks);
        double recon_sum = 0.0, stnry_sum = 0.0, kl_sum = 0.0;
        std::size_t seen = 0;
        for (const Block& blk : blocks) {
            Tensor xb = detail::slice_rows(rows, blk.start, blk.len);
            model.zero_grad();
            Tensor mu = model.encode(xb, Mode::train);
            Tensor z = mu;
            Tensor logvar, eps;
            double kl = 0.0;
            if (variational) {
                logvar = model.encode_logvar(Mode::train);
                eps = Tensor(mu.shape);
                for (std::size_t i = 0; i < z.size(); ++i) {
                    eps.data[i] = noise_rng.normal();
                    z.data[i] = mu.data[i] + std::exp(0.5 * logvar.data[i]) * eps.data[i];
                }
                kl = detail::gaussian_kl(mu, logvar);
            }
            LatentDecomposition dec = stationarize(z, store, period, diff_order);
            Tensor z_str = recombine(dec, lsa);
            Tensor xhat = model.decode(z_str, Mode::train);
            double recon = mse(xhat, xb);
            double stnry = stationarization_loss(z, dec.z_stnry);
            if (!std::isfinite(recon) || !std::isfinite(stnry))
                throw std::runtime_error("train_phase2: non-finite loss at epoch " +
                                         std::to_string(epoch + 1));
            Tensor g_zstr = model.decoder_backward(mse_grad(xhat, xb));
            Tensor gz = stationarize_recombine_grad(g_zstr, lsa, period, diff_order);
            const double stnry_scale = 2.0 / static_cast<double>(z.size());
            for (std::size_t i = 0; i < gz.size(); ++i)
                gz.data[i] += stnry_scale * (z.data[i] - dec.z_stnry.data[i]);
            if (variational) {
                Tensor gmu = gz;
                Tensor glv(gz.shape);
                const double bn = static_cast<double>(blk.len);
                for (std::size_t i = 0; i < gz.size(); ++i) {
                    glv.data[i] = gz.data[i] * 0.5 * std::exp(0.5 * logvar.data[i]) * eps.data[i];
                    gmu.data[i] += cfg.kl_weight * mu.data[i] / bn;
                    glv.data[i] += cfg.kl_weight * 0.5 * (std::exp(logvar.data[i]) - 1.0) / bn;
                }
                model.encoder_backward(gmu, &glv);
            } else {
                model.encoder_backward(gz);
            }
            opt.step();
            recon_sum += recon * static_cast<double>(blk.len);
            stnry_sum += stnry * static_cast<double>(blk.len);
            kl_sum += kl * static_cast<double>(blk.len);
            seen += blk.len;
        }
        double recon_epoch = recon_sum / static_cast<double>(seen);
        double stnry_epoch = stnry_sum / static_cast<double>(seen);
        double kl_epoch = kl_sum / static_cast<double>(seen);

        Tensor mu_val = model.encode(val_rows, Mode::infer);
        double val_kl = 0.0;
        if (variational) val_kl = detail::gaussian_kl(mu_val, model.encode_logvar(Mode::infer));
        LatentDecomposition vdec = stationarize(mu_val, store, period, diff_order);
        double val_recon = mse(model.decode(recombine(vdec, lsa), Mode::infer), val_rows);
        double val_stnry = stationarization_loss(mu_val, vdec.z_stnry);

        hist.recon_loss.push_back(recon_epoch);
        hist.stnry_loss.push_back(stnry_epoch);
        hist.kl_loss.push_back(kl_epoch);
        hist.train_loss.push_back(recon_epoch + stnry_epoch + cfg.kl_weight * kl_epoch);
        hist.val_loss.push_back(val_recon + val_stnry + cfg.kl_weight * val_kl);
    }
    return hist;
}

// ============================================================================
// Frame adapters
// ============================================================================

inline Tensor frame_to_tensor(const Frame& f) {
    if (f.cols() == 0 || f.rows() == 0)
        throw std::invalid_argument("frame_to_tensor: empty frame");
    Tensor out({f.rows(), f.cols()});
    for (std::size_t j = 0; j < f.cols(); ++j) {
        const auto& col = f.columns()[j].values;
        for (std::size_t t = 0; t < f.rows(); ++t) out.data[t * f.cols() + j] = col[t];
    }
    return out;
}

inline Frame tensor_to_frame(const Tensor& t, const std::vector<Date>& index,
                             const std::vector<std::string>& names) {
    if (t.shape.size() != 2 || t.shape[0] != index.size() || t.shape[1] != names.size())
        throw std::invalid_argument("tensor_to_frame: shape/index/name mismatch");
    Frame f;
    f.set_index(index);
    for (std::size_t j = 0; j < names.size(); ++j) {
        std::vector<double> col(t.shape[0]);
        for (std::size_t i = 0; i < col.size(); ++i) col[i] = t.data[i * t.shape[1] + j];
        f.add_column(Series(std::move(col), names[j]));
    }
    return f;
}

}  // namespace latentstat
