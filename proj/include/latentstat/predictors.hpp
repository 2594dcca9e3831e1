#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <future>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentstat/network.hpp"
#include "latentstat/optimizer.hpp"
#include "latentstat/recurrent.hpp"
#include "latentstat/series.hpp"
#include "latentstat/stationarizer.hpp"
#include "latentstat/tensor.hpp"
#include "latentstat/vae.hpp"

namespace latentstat {

// ============================================================================
// Config
// ============================================================================

enum class PredictorKind { dnn, lstm, blstm, gru };

inline std::string to_string(PredictorKind k) {
    switch (k) {
        case PredictorKind::dnn: return "DNN";
        case PredictorKind::lstm: return "LSTM";
        case PredictorKind::blstm: return "BLSTM";
        case PredictorKind::gru: return "GRU";
    }
    throw std::invalid_argument("unknown predictor kind");
}

inline PredictorKind predictor_kind_from_string(const std::string& s) {
    if (s == "DNN" || s == "dnn") return PredictorKind::dnn;
    if (s == "LSTM" || s == "lstm") return PredictorKind::lstm;
    if (s == "BLSTM" || s == "blstm") return PredictorKind::blstm;
    if (s == "GRU" || s == "gru") return PredictorKind::gru;
    throw std::invalid_argument("unknown predictor kind '" + s +
                                "' (expected DNN, LSTM, BLSTM, or GRU)");
}

struct PredictorConfig {
    PredictorKind kind = PredictorKind::dnn;
    std::array<std::size_t, 4> hidden = {64, 32, 16, 8};
    int lookback = 30;
    int epochs = 100;
    std::size_t batch_size = 64;
    double learning_rate = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (lookback < 1) throw std::invalid_argument("predictor config: lookback must be >= 1");
        if (epochs < 1) throw std::invalid_argument("predictor config: epochs must be >= 1");
        if (batch_size < 1) throw std::invalid_argument("predictor config: batch_size must be >= 1");
        if (learning_rate <= 0.0)
            throw std::invalid_argument("predictor config: learning_rate <= 0");
        for (std::size_t h : hidden)
            if (h < 1) throw std::invalid_argument("predictor config: hidden sizes must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const PredictorConfig& c) {
    j = nlohmann::json{{"kind", to_string(c.kind)},     {"hidden", c.hidden},
                       {"lookback", c.lookback},        {"epochs", c.epochs},
                       {"batch_size", c.batch_size},    {"learning_rate", c.learning_rate},
                       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, PredictorConfig& c) {
    c.kind = predictor_kind_from_string(j.at("kind").get<std::string>());
    j.at("hidden").get_to(c.hidden);
    j.at("lookback").get_to(c.lookback);
    j.at("epochs").get_to(c.epochs);
    j.at("batch_size").get_to(c.batch_size);
    j.at("learning_rate").get_to(c.learning_rate);
    j.at("seed").get_to(c.seed);
}

// ============================================================================
// Model
// ============================================================================

/// Fig.-4 style regressor over (batch, lookback, features) windows: a
/// kind-specific first hidden layer (dense over the flattened window, or a
/// recurrent layer's final hidden state), then three tanh dense layers and a
/// sigmoid scalar head.
class Predictor {
public:
    Predictor(const PredictorConfig& cfg, std::size_t n_features)
        : cfg_(cfg), features_(n_features) {
        cfg_.validate();
        if (n_features < 1) throw std::invalid_argument("predictor: need >= 1 feature");
        Rng rng(derive_seed(cfg_.seed, "predictor-init"));
        std::size_t first_out = cfg_.hidden[0];
        switch (cfg_.kind) {
            case PredictorKind::dnn:
                net_.emplace<Flatten>();
                net_.emplace<Dense>(static_cast<std::size_t>(cfg_.lookback) * n_features,
                                    cfg_.hidden[0], rng);
                break;
            case PredictorKind::lstm:
                net_.emplace<LSTMLayer>(n_features, cfg_.hidden[0], rng);
                break;
            case PredictorKind::blstm:
                net_.emplace<BLSTMLayer>(n_features, cfg_.hidden[0], rng);
                first_out = 2 * cfg_.hidden[0];
                break;
            case PredictorKind::gru:
                net_.emplace<GRULayer>(n_features, cfg_.hidden[0], rng);
                break;
        }
        net_.emplace<ReLU>();
        net_.emplace<Dense>(first_out, cfg_.hidden[1], rng);
        net_.emplace<Tanh>();
        net_.emplace<Dense>(cfg_.hidden[1], cfg_.hidden[2], rng);
        net_.emplace<Tanh>();
        net_.emplace<Dense>(cfg_.hidden[2], cfg_.hidden[3], rng);
        net_.emplace<Tanh>();
        net_.emplace<Dense>(cfg_.hidden[3], 1, rng);
        net_.emplace<Sigmoid>();
    }

    const PredictorConfig& config() const { return cfg_; }
    std::size_t n_features() const { return features_; }

    /// (batch, lookback, features) -> (batch, 1) in (0, 1).
    Tensor forward(const Tensor& windows, Mode mode) {
        if (windows.shape.size() != 3 ||
            windows.shape[1] != static_cast<std::size_t>(cfg_.lookback) ||
            windows.shape[2] != features_)
            throw std::invalid_argument("predictor: expected (batch," +
                                        std::to_string(cfg_.lookback) + "," +
                                        std::to_string(features_) + "), got " +
                                        windows.shape_str());
        return net_.forward(windows, mode);
    }

    Tensor backward(const Tensor& grad_out) { return net_.backward(grad_out); }
    void zero_grad() { net_.zero_grad(); }
    std::vector<ParamBlock> parameters() { return net_.parameters(); }

    void save(const std::string& path) {
        nlohmann::json header;
        header["schema_version"] = 1;
        header["model"] = "predictor";
        header["config"] = cfg_;
        header["n_features"] = features_;
        save_checkpoint(path, header, parameters());
    }

    static Predictor load(const std::string& path) {
        LoadedCheckpoint ck = read_checkpoint(path);
        if (ck.header.value("model", "") != "predictor")
            throw std::runtime_error("predictor: '" + path + "' holds a '" +
                                     ck.header.value("model", "?") + "' checkpoint");
        Predictor p(ck.header.at("config").get<PredictorConfig>(),
                    ck.header.at("n_features").get<std::size_t>());
        fill_parameters(p.parameters(), ck.buffer);
        return p;
    }

private:
    PredictorConfig cfg_;
    std::size_t features_;
    Sequential net_;
};

// ============================================================================
// Training and evaluation
// ============================================================================

namespace detail {

inline Tensor windows_to_tensor(const std::vector<Window>& windows) {
    if (windows.empty()) throw std::invalid_argument("windows_to_tensor: empty window list");
    const std::size_t lb = windows[0].features.size();
    const std::size_t nf = windows[0].features[0].size();
    Tensor out({windows.size(), lb, nf});
    for (std::size_t i = 0; i < windows.size(); ++i)
        for (std::size_t r = 0; r < lb; ++r)
            for (std::size_t f = 0; f < nf; ++f)
                out.data[(i * lb + r) * nf + f] = windows[i].features[r][f];
    return out;
}

inline std::vector<double> windows_to_targets(const std::vector<Window>& windows) {
    std::vector<double> out(windows.size());
    for (std::size_t i = 0; i < windows.size(); ++i) out[i] = windows[i].target;
    return out;
}

}  // namespace detail

/// Seeded MSE/Adam training over supervised windows; returns per-epoch train
/// loss. Targets are expected in [0,1] scale (sigmoid head).
inline std::vector<double> train_predictor(Predictor& model, const Tensor& windows,
                                           const std::vector<double>& targets) {
    const PredictorConfig& cfg = model.config();
    if (windows.shape[0] != targets.size())
        throw std::invalid_argument("train_predictor: windows/targets misaligned");
    const std::size_t n = targets.size();
    if (n == 0) throw std::invalid_argument("train_predictor: no training windows");
    Rng shuffle_rng(derive_seed(cfg.seed, "predictor-shuffle"));
    Adam opt(model.parameters(), cfg.learning_rate);
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    const std::size_t lb = windows.shape[1], nf = windows.shape[2];

    std::vector<double> history;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        for (std::size_t start = 0; start < n; start += cfg.batch_size) {
            std::size_t len = std::min(cfg.batch_size, n - start);
            Tensor xb({len, lb, nf});
            Tensor yb({len, std::size_t{1}});
            for (std::size_t i = 0; i < len; ++i) {
                std::size_t src = order[start + i];
                std::copy(windows.data.begin() + static_cast<std::ptrdiff_t>(src * lb * nf),
                          windows.data.begin() + static_cast<std::ptrdiff_t>((src + 1) * lb * nf),
                          xb.data.begin() + static_cast<std::ptrdiff_t>(i * lb * nf));
                yb.data[i] = targets[src];
            }
            model.zero_grad();
            Tensor pred = model.forward(xb, Mode::train);
            double loss = mse(pred, yb);
            if (!std::isfinite(loss))
                throw std::runtime_error("train_predictor: non-finite loss at epoch " +
                                         std::to_string(epoch + 1));
            model.backward(mse_grad(pred, yb));
            opt.step();
            loss_sum += loss * static_cast<double>(len);
        }
        history.push_back(loss_sum / static_cast<double>(n));
    }
    return history;
}

/// Root mean squared error over a held-out slice, in the target's scale.
inline double evaluate_rmse(Predictor& model, const Tensor& windows,
                            const std::vector<double>& targets) {
    if (windows.shape[0] != targets.size())
        throw std::invalid_argument("evaluate_rmse: windows/targets misaligned");
    if (targets.empty()) throw std::invalid_argument("evaluate_rmse: empty test set");
    Tensor pred = model.forward(windows, Mode::infer);
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        double d = pred.data[i] - targets[i];
        acc += d * d;
    }
    return std::sqrt(acc / static_cast<double>(targets.size()));
}

// ============================================================================
// Phi/gamma sweep
// ============================================================================

struct SweepCell {
    std::string dataset;
    std::string target;
    PredictorKind kind = PredictorKind::dnn;
    double phi = 1.0;
    double gamma = 1.0;
    std::uint64_t seed = 0;
    double rmse_scaled = 0.0;
    double rmse_zscored = 0.0;
};

struct SweepPlan {
    std::string dataset;
    std::string target;
    std::vector<double> phi_grid{1.0};
    std::vector<double> gamma_grid{0.0, 0.5, 1.0};
    std::vector<PredictorKind> kinds{PredictorKind::dnn, PredictorKind::lstm,
                                     PredictorKind::blstm, PredictorKind::gru};
    std::vector<std::uint64_t> seeds{1};
    PredictorConfig base;
    std::size_t test_rows = 252;
    int jobs = 1;
};

/// One grid cell: recombine the shared decomposition with this cell's
/// (phi, gamma), window, train, evaluate on the chronological tail.
inline SweepCell run_sweep_cell(const LatentDecomposition& dec, const std::vector<Date>& index,
                                const Series& target, const SweepPlan& plan, PredictorKind kind,
                                double phi, double gamma, std::uint64_t seed) {
    const std::size_t n = target.size();
    const std::size_t k = dec.z.shape[1];
    if (plan.test_rows < 1 || plan.test_rows >= n)
        throw std::invalid_argument("sweep: test_rows must lie in [1, rows)");
    const std::size_t train_rows = n - plan.test_rows;
    if (static_cast<std::size_t>(plan.base.lookback) >= train_rows)
        throw std::invalid_argument("sweep: lookback leaves no training windows");

    Tensor z_str = recombine(dec, LSAConfig{phi, gamma});
    std::vector<std::string> names;
    for (std::size_t j = 0; j < k; ++j) names.push_back("z_str_" + std::to_string(j + 1));
    Frame features = tensor_to_frame(z_str, index, names);

    SeriesScaler scaler = SeriesScaler::fit(target.values, train_rows);
    std::vector<double> scaled(n);
    for (std::size_t i = 0; i < n; ++i) scaled[i] = scaler.forward(target.values[i]);

    std::vector<Window> windows =
        make_windows(features, Series(scaled, target.name), plan.base.lookback);
    std::vector<Window> train_w, test_w;
    for (auto& w : windows)
        (w.target_index < train_rows ? train_w : test_w).push_back(std::move(w));
    if (train_w.empty() || test_w.empty())
        throw std::invalid_argument("sweep: empty train or test window set");

    PredictorConfig cfg = plan.base;
    cfg.kind = kind;
    cfg.seed = seed;
    Predictor model(cfg, k);
    train_predictor(model, detail::windows_to_tensor(train_w), detail::windows_to_targets(train_w));
    double rmse_scaled =
        evaluate_rmse(model, detail::windows_to_tensor(test_w), detail::windows_to_targets(test_w));

    SweepCell cell;
    cell.dataset = plan.dataset;
    cell.target = plan.target;
    cell.kind = kind;
    cell.phi = phi;
    cell.gamma = gamma;
    cell.seed = seed;
    cell.rmse_scaled = rmse_scaled;
    cell.rmse_zscored = rmse_scaled * (scaler.hi - scaler.lo) / scaler.sd;
    return cell;
}

/// Cross product phi_grid x gamma_grid x kinds x seeds in that fixed order.
/// `skip` elides cells already computed (resume); `emit` sees each finished
/// cell in deterministic row order even when jobs > 1. Cell failures are
/// rethrown with the cell identity attached.
inline std::vector<SweepCell> run_sweep(
    const LatentDecomposition& dec, const std::vector<Date>& index, const Series& target,
    const SweepPlan& plan, const std::function<bool(const SweepCell&)>& skip = nullptr,
    const std::function<void(const SweepCell&)>& emit = nullptr) {
    if (dec.z.shape.size() != 2 || dec.z.shape[0] != target.size() ||
        index.size() != target.size())
        throw std::invalid_argument("sweep: latent/index/target lengths disagree");
    struct Task {
        PredictorKind kind;
        double phi, gamma;
        std::uint64_t seed;
    };
    std::vector<Task> tasks;
    for (double phi : plan.phi_grid)
        for (double gamma : plan.gamma_grid)
            for (PredictorKind kind : plan.kinds)
                for (std::uint64_t seed : plan.seeds) {
                    SweepCell probe;
                    probe.dataset = plan.dataset;
                    probe.target = plan.target;
                    probe.kind = kind;
                    probe.phi = phi;
                    probe.gamma = gamma;
                    probe.seed = seed;
                    if (skip && skip(probe)) continue;
                    tasks.push_back({kind, phi, gamma, seed});
                }

    std::vector<SweepCell> out;
    const std::size_t jobs = plan.jobs < 1 ? 1 : static_cast<std::size_t>(plan.jobs);
    for (std::size_t wave = 0; wave < tasks.size(); wave += jobs) {
        std::size_t count = std::min(jobs, tasks.size() - wave);
        std::vector<std::future<SweepCell>> futures;
        for (std::size_t i = 0; i < count; ++i) {
            const Task& t = tasks[wave + i];
            futures.push_back(std::async(std::launch::async, [&dec, &index, &target, &plan, t] {
                try {
                    return run_sweep_cell(dec, index, target, plan, t.kind, t.phi, t.gamma, t.seed);
                } catch (const std::exception& e) {
                    throw std::runtime_error("sweep cell (" + to_string(t.kind) +
                                             ", phi=" + std::to_string(t.phi) +
                                             ", gamma=" + std::to_string(t.gamma) +
                                             ", seed=" + std::to_string(t.seed) + "): " + e.what());
                }
            }));
        }
        for (auto& f : futures) {
            SweepCell cell = f.get();
            if (emit) emit(cell);
            out.push_back(std::move(cell));
        }
    }
    return out;
}

}  // namespace latentstat
