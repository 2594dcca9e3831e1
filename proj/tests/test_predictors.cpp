#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "latentstat/gradcheck.hpp"
#include "latentstat/network.hpp"
#include "latentstat/predictors.hpp"
#include "latentstat/random.hpp"
#include "latentstat/series.hpp"
#include "latentstat/stationarizer.hpp"
#include "latentstat/tensor.hpp"
#include "support/netcheck.hpp"
#include "support/synthetic.hpp"

using namespace latentstat;
using Catch::Approx;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

PredictorConfig tiny_config(PredictorKind kind, std::uint64_t seed) {
    PredictorConfig cfg;
    cfg.kind = kind;
    cfg.hidden = {4, 3, 3, 2};
    cfg.lookback = 3;
    cfg.epochs = 4;
    cfg.batch_size = 8;
    cfg.learning_rate = 1e-3;
    cfg.seed = seed;
    return cfg;
}

// Windows whose target is an affine function of the last row, kept inside the
// sigmoid head's range so the model has something reachable to learn.
void learnable_batch(std::uint64_t seed, std::size_t n, int lookback, std::size_t nf,
                     Tensor& windows, std::vector<double>& targets) {
    Rng rng(seed);
    windows = Tensor({n, static_cast<std::size_t>(lookback), nf});
    for (double& v : windows.data) v = rng.uniform(0.0, 1.0);
    targets.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mean = 0.0;
        for (std::size_t f = 0; f < nf; ++f)
            mean += windows.data[(i * lookback + (lookback - 1)) * nf + f];
        targets[i] = 0.3 + 0.4 * mean / static_cast<double>(nf);
    }
}

double predictor_max_grad_err(Predictor& model, const Tensor& x, Rng& rng) {
    model.zero_grad();
    Tensor y = model.forward(x, Mode::train);
    Tensor w = netcheck::random_tensor(y.shape, rng);
    model.backward(w);
    GradCheckReport rep = grad_check(model.parameters(), [&] {
        Tensor out = model.forward(x, Mode::train);
        return netcheck::dot(w, out);
    });
    return rep.max_rel_err;
}

// A shared sweep fixture: a small latent panel with clear structure, a random
// seasonal store, and a bounded target.
struct SweepFixture {
    LatentDecomposition dec;
    std::vector<Date> index;
    Series target;
    SweepPlan plan;

    SweepFixture(std::size_t n = 60, std::size_t k = 2, int period = 5) {
        Rng rng(404);
        Tensor z({n, k});
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> walk = synth::random_walk(rng, n, 0.5, 0.05);
            std::vector<double> season = synth::seasonal_pattern(rng, n, period, 1.5);
            for (std::size_t t = 0; t < n; ++t) z.data[t * k + j] = walk[t] + season[t];
        }
        std::vector<double> emb(static_cast<std::size_t>(period) * k);
        for (double& v : emb) v = rng.uniform(-1.0, 1.0);
        SeasonalStore store(std::move(emb), period, k, 0x1234u);
        dec = stationarize(z, store, period, 1);
        index = synth::make_index(n);
        target = Series(synth::bounded_trend_target(11, n, period), "target");

        plan.dataset = "synthetic";
        plan.target = "target";
        plan.phi_grid = {0.0, 1.0};
        plan.gamma_grid = {0.0, 1.0};
        plan.kinds = {PredictorKind::dnn, PredictorKind::gru};
        plan.seeds = {1, 2};
        plan.base = tiny_config(PredictorKind::dnn, 0);
        plan.base.lookback = 4;
        plan.base.epochs = 2;
        plan.base.batch_size = 16;
        plan.test_rows = 12;
        plan.jobs = 1;
    }
};

}  // namespace

TEST_CASE("predictor kind names convert both ways") {
    CHECK(to_string(PredictorKind::dnn) == "DNN");
    CHECK(to_string(PredictorKind::lstm) == "LSTM");
    CHECK(to_string(PredictorKind::blstm) == "BLSTM");
    CHECK(to_string(PredictorKind::gru) == "GRU");

    CHECK(predictor_kind_from_string("DNN") == PredictorKind::dnn);
    CHECK(predictor_kind_from_string("dnn") == PredictorKind::dnn);
    CHECK(predictor_kind_from_string("LSTM") == PredictorKind::lstm);
    CHECK(predictor_kind_from_string("lstm") == PredictorKind::lstm);
    CHECK(predictor_kind_from_string("BLSTM") == PredictorKind::blstm);
    CHECK(predictor_kind_from_string("blstm") == PredictorKind::blstm);
    CHECK(predictor_kind_from_string("GRU") == PredictorKind::gru);
    CHECK(predictor_kind_from_string("gru") == PredictorKind::gru);

    CHECK_THROWS_WITH(predictor_kind_from_string("mlp"),
                      ContainsSubstring("expected DNN, LSTM, BLSTM, or GRU"));
}

TEST_CASE("predictor config validates and round-trips through json") {
    PredictorConfig cfg = tiny_config(PredictorKind::blstm, 9);
    CHECK_NOTHROW(cfg.validate());

    PredictorConfig bad = cfg;
    bad.lookback = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.epochs = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = cfg;
    bad.hidden[2] = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);

    nlohmann::json j = cfg;
    PredictorConfig back = j.get<PredictorConfig>();
    CHECK(back.kind == cfg.kind);
    CHECK(back.hidden == cfg.hidden);
    CHECK(back.lookback == cfg.lookback);
    CHECK(back.epochs == cfg.epochs);
    CHECK(back.batch_size == cfg.batch_size);
    CHECK(back.learning_rate == cfg.learning_rate);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("every predictor kind maps windows to sigmoid scalars") {
    const std::size_t batch = 5, nf = 3;
    const int lookback = 6;
    Rng rng(21);
    Tensor x = netcheck::random_tensor({batch, static_cast<std::size_t>(lookback), nf}, rng);

    for (PredictorKind kind :
         {PredictorKind::dnn, PredictorKind::lstm, PredictorKind::blstm, PredictorKind::gru}) {
        PredictorConfig cfg = tiny_config(kind, 5);
        cfg.hidden = {8, 6, 5, 4};
        cfg.lookback = lookback;
        Predictor model(cfg, nf);
        CHECK(model.n_features() == nf);
        Tensor y = model.forward(x, Mode::infer);
        REQUIRE(y.shape == std::vector<std::size_t>{batch, 1});
        for (double v : y.data) {
            CHECK(v > 0.0);
            CHECK(v < 1.0);
        }
    }
}

TEST_CASE("blstm predictor exposes both direction parameter banks") {
    PredictorConfig cfg = tiny_config(PredictorKind::blstm, 3);
    Predictor model(cfg, 2);
    bool saw_fw = false, saw_bw = false;
    for (const ParamBlock& b : model.parameters()) {
        if (b.name == "0.fw_w_i") saw_fw = true;
        if (b.name == "0.bw_w_i") saw_bw = true;
    }
    CHECK(saw_fw);
    CHECK(saw_bw);
}

TEST_CASE("predictor rejects windows with the wrong shape") {
    PredictorConfig cfg = tiny_config(PredictorKind::dnn, 1);
    Predictor model(cfg, 2);
    Rng rng(33);

    Tensor wrong_lookback = netcheck::random_tensor({4, 5, 2}, rng);
    CHECK_THROWS_AS(model.forward(wrong_lookback, Mode::infer), std::invalid_argument);
    Tensor wrong_features = netcheck::random_tensor({4, 3, 3}, rng);
    CHECK_THROWS_AS(model.forward(wrong_features, Mode::infer), std::invalid_argument);
    Tensor rank_two = netcheck::random_tensor({4, 6}, rng);
    CHECK_THROWS_AS(model.forward(rank_two, Mode::infer), std::invalid_argument);

    CHECK_THROWS_AS(Predictor(cfg, 0), std::invalid_argument);
}

TEST_CASE("predictor construction is seed-deterministic") {
    PredictorConfig cfg = tiny_config(PredictorKind::gru, 77);
    Predictor a(cfg, 2);
    Predictor b(cfg, 2);
    CHECK(dump_parameters(a.parameters()) == dump_parameters(b.parameters()));

    cfg.seed = 78;
    Predictor c(cfg, 2);
    CHECK(dump_parameters(a.parameters()) != dump_parameters(c.parameters()));
}

TEST_CASE("training lowers the loss and is reproducible per seed") {
    Tensor windows;
    std::vector<double> targets;
    learnable_batch(50, 64, 3, 2, windows, targets);

    PredictorConfig cfg = tiny_config(PredictorKind::dnn, 12);
    cfg.hidden = {8, 6, 5, 4};
    cfg.epochs = 30;
    cfg.learning_rate = 1e-2;
    cfg.batch_size = 16;

    Predictor model(cfg, 2);
    std::vector<double> hist = train_predictor(model, windows, targets);
    REQUIRE(hist.size() == 30);
    for (double h : hist) CHECK(std::isfinite(h));
    CHECK(hist.back() < hist.front());

    Predictor again(cfg, 2);
    std::vector<double> hist2 = train_predictor(again, windows, targets);
    CHECK(hist2 == hist);
    CHECK(dump_parameters(again.parameters()) == dump_parameters(model.parameters()));
}

TEST_CASE("train_predictor validates its inputs") {
    PredictorConfig cfg = tiny_config(PredictorKind::dnn, 2);
    Predictor model(cfg, 2);
    Tensor windows;
    std::vector<double> targets;
    learnable_batch(51, 8, 3, 2, windows, targets);

    std::vector<double> short_targets(targets.begin(), targets.end() - 1);
    CHECK_THROWS_WITH(train_predictor(model, windows, short_targets),
                      ContainsSubstring("misaligned"));
}

TEST_CASE("predictor checkpoints restore weights bit-exactly") {
    Tensor windows;
    std::vector<double> targets;
    learnable_batch(52, 32, 3, 2, windows, targets);

    PredictorConfig cfg = tiny_config(PredictorKind::lstm, 8);
    Predictor model(cfg, 2);
    train_predictor(model, windows, targets);

    std::string path = temp_path("latentstat_predictor_ck.bin");
    model.save(path);
    Predictor loaded = Predictor::load(path);
    CHECK(loaded.config().kind == PredictorKind::lstm);
    CHECK(loaded.config().seed == 8);
    CHECK(loaded.n_features() == 2);
    CHECK(dump_parameters(loaded.parameters()) == dump_parameters(model.parameters()));

    Tensor a = model.forward(windows, Mode::infer);
    Tensor b = loaded.forward(windows, Mode::infer);
    CHECK(a.data == b.data);
    std::filesystem::remove(path);
}

TEST_CASE("predictor load rejects foreign checkpoints") {
    std::string path = temp_path("latentstat_predictor_foreign.bin");
    nlohmann::json header;
    header["schema_version"] = 1;
    header["model"] = "widget";
    save_checkpoint(path, header, {});
    CHECK_THROWS_WITH(Predictor::load(path), ContainsSubstring("widget"));
    std::filesystem::remove(path);
}

TEST_CASE("evaluate_rmse matches a direct recomputation") {
    Tensor windows;
    std::vector<double> targets;
    learnable_batch(53, 16, 3, 2, windows, targets);

    PredictorConfig cfg = tiny_config(PredictorKind::gru, 4);
    Predictor model(cfg, 2);
    double rmse = evaluate_rmse(model, windows, targets);

    Tensor pred = model.forward(windows, Mode::infer);
    double acc = 0.0;
    for (std::size_t i = 0; i < targets.size(); ++i) {
        double d = pred.data[i] - targets[i];
        acc += d * d;
    }
    double oracle = std::sqrt(acc / static_cast<double>(targets.size()));
    CHECK(rmse == oracle);

    std::vector<double> short_targets(targets.begin(), targets.end() - 2);
    CHECK_THROWS_WITH(evaluate_rmse(model, windows, short_targets),
                      ContainsSubstring("misaligned"));
    Tensor none({0, 3, 2});
    std::vector<double> empty;
    CHECK_THROWS_WITH(evaluate_rmse(model, none, empty), ContainsSubstring("empty test set"));
}

TEST_CASE("predictor gradients agree with finite differences for every kind") {
    const std::size_t batch = 3, nf = 2;
    const int lookback = 3;
    for (PredictorKind kind :
         {PredictorKind::dnn, PredictorKind::lstm, PredictorKind::blstm, PredictorKind::gru}) {
        for (std::uint64_t seed = 1; seed <= 3; ++seed) {
            PredictorConfig cfg = tiny_config(kind, seed * 31);
            Predictor model(cfg, nf);
            Rng rng(seed * 97 + static_cast<std::uint64_t>(kind));
            Tensor x =
                netcheck::kink_safe_tensor({batch, static_cast<std::size_t>(lookback), nf}, rng);
            INFO("kind " << to_string(kind) << " seed " << seed);
            CHECK(predictor_max_grad_err(model, x, rng) < 1e-4);
        }
    }
}

TEST_CASE("sweep cell reports both scaled and z-scored rmse") {
    SweepFixture fx;
    SweepCell cell =
        run_sweep_cell(fx.dec, fx.index, fx.target, fx.plan, PredictorKind::gru, 0.5, 0.5, 7);

    CHECK(cell.dataset == "synthetic");
    CHECK(cell.target == "target");
    CHECK(cell.kind == PredictorKind::gru);
    CHECK(cell.phi == 0.5);
    CHECK(cell.gamma == 0.5);
    CHECK(cell.seed == 7);
    CHECK(std::isfinite(cell.rmse_scaled));
    CHECK(cell.rmse_scaled > 0.0);

    std::size_t train_rows = fx.target.size() - fx.plan.test_rows;
    SeriesScaler scaler = SeriesScaler::fit(fx.target.values, train_rows);
    CHECK(cell.rmse_zscored == cell.rmse_scaled * (scaler.hi - scaler.lo) / scaler.sd);
}

TEST_CASE("sweep cell validates test_rows and lookback") {
    SweepFixture fx;
    SweepPlan plan = fx.plan;

    plan.test_rows = 0;
    CHECK_THROWS_WITH(
        run_sweep_cell(fx.dec, fx.index, fx.target, plan, PredictorKind::dnn, 1.0, 1.0, 1),
        ContainsSubstring("test_rows"));
    plan.test_rows = fx.target.size();
    CHECK_THROWS_WITH(
        run_sweep_cell(fx.dec, fx.index, fx.target, plan, PredictorKind::dnn, 1.0, 1.0, 1),
        ContainsSubstring("test_rows"));

    plan = fx.plan;
    plan.base.lookback = static_cast<int>(fx.target.size() - fx.plan.test_rows);
    CHECK_THROWS_WITH(
        run_sweep_cell(fx.dec, fx.index, fx.target, plan, PredictorKind::dnn, 1.0, 1.0, 1),
        ContainsSubstring("lookback leaves no training windows"));
}

TEST_CASE("sweep enumerates the grid in phi, gamma, kind, seed order") {
    SweepFixture fx;
    std::vector<SweepCell> emitted;
    std::vector<SweepCell> cells =
        run_sweep(fx.dec, fx.index, fx.target, fx.plan, nullptr,
                  [&](const SweepCell& c) { emitted.push_back(c); });

    REQUIRE(cells.size() == 16);
    std::size_t i = 0;
    for (double phi : fx.plan.phi_grid)
        for (double gamma : fx.plan.gamma_grid)
            for (PredictorKind kind : fx.plan.kinds)
                for (std::uint64_t seed : fx.plan.seeds) {
                    CHECK(cells[i].phi == phi);
                    CHECK(cells[i].gamma == gamma);
                    CHECK(cells[i].kind == kind);
                    CHECK(cells[i].seed == seed);
                    CHECK(cells[i].dataset == "synthetic");
                    CHECK(std::isfinite(cells[i].rmse_zscored));
                    ++i;
                }

    REQUIRE(emitted.size() == cells.size());
    for (std::size_t j = 0; j < cells.size(); ++j) {
        CHECK(emitted[j].phi == cells[j].phi);
        CHECK(emitted[j].gamma == cells[j].gamma);
        CHECK(emitted[j].kind == cells[j].kind);
        CHECK(emitted[j].seed == cells[j].seed);
        CHECK(emitted[j].rmse_scaled == cells[j].rmse_scaled);
    }
}

TEST_CASE("parallel sweeps reproduce the serial results bit-exactly") {
    SweepFixture fx;
    std::vector<SweepCell> serial = run_sweep(fx.dec, fx.index, fx.target, fx.plan);

    SweepPlan parallel_plan = fx.plan;
    parallel_plan.jobs = 2;
    std::vector<SweepCell> parallel = run_sweep(fx.dec, fx.index, fx.target, parallel_plan);

    REQUIRE(parallel.size() == serial.size());
    for (std::size_t i = 0; i < serial.size(); ++i) {
        CHECK(parallel[i].phi == serial[i].phi);
        CHECK(parallel[i].gamma == serial[i].gamma);
        CHECK(parallel[i].kind == serial[i].kind);
        CHECK(parallel[i].seed == serial[i].seed);
        CHECK(parallel[i].rmse_scaled == serial[i].rmse_scaled);
        CHECK(parallel[i].rmse_zscored == serial[i].rmse_zscored);
    }
}

TEST_CASE("sweep skip predicate elides finished cells") {
    SweepFixture fx;
    std::size_t probes = 0;
    std::vector<SweepCell> cells = run_sweep(fx.dec, fx.index, fx.target, fx.plan,
                                             [&](const SweepCell& probe) {
                                                 ++probes;
                                                 REQUIRE(probe.dataset == "synthetic");
                                                 return probe.seed == 2;
                                             });
    CHECK(probes == 16);
    REQUIRE(cells.size() == 8);
    for (const SweepCell& c : cells) CHECK(c.seed == 1);
}

TEST_CASE("sweep validates latent, index, and target alignment") {
    SweepFixture fx;
    std::vector<Date> short_index(fx.index.begin(), fx.index.end() - 1);
    CHECK_THROWS_WITH(run_sweep(fx.dec, short_index, fx.target, fx.plan),
                      ContainsSubstring("lengths disagree"));

    Series short_target(std::vector<double>(fx.target.values.begin(), fx.target.values.end() - 1),
                        "target");
    CHECK_THROWS_WITH(run_sweep(fx.dec, fx.index, short_target, fx.plan),
                      ContainsSubstring("lengths disagree"));
}

TEST_CASE("sweep failures carry the cell identity") {
    SweepFixture fx;
    SweepPlan plan = fx.plan;
    plan.phi_grid = {0.0};
    plan.gamma_grid = {1.0};
    plan.kinds = {PredictorKind::dnn};
    plan.seeds = {3};
    plan.base.lookback = static_cast<int>(fx.target.size() - plan.test_rows);

    CHECK_THROWS_WITH(run_sweep(fx.dec, fx.index, fx.target, plan),
                      ContainsSubstring("sweep cell (DNN, phi=0.000000") &&
                          ContainsSubstring("seed=3") &&
                          ContainsSubstring("lookback leaves no training windows"));
}
