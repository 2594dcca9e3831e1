#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "latentstat/decompose.hpp"
#include "latentstat/ingest.hpp"
#include "latentstat/predictors.hpp"
#include "latentstat/series.hpp"
#include "latentstat/stationarizer.hpp"
#include "latentstat/unitroot.hpp"
#include "latentstat/vae.hpp"

namespace latentstat {

// ============================================================================
// Run configuration
// ============================================================================

inline void to_json(nlohmann::json& j, const LSAConfig& c) {
    j = nlohmann::json{{"phi", c.phi}, {"gamma", c.gamma}};
}

inline void from_json(const nlohmann::json& j, LSAConfig& c) {
    c.phi = j.value("phi", 1.0);
    c.gamma = j.value("gamma", 1.0);
}

/// Everything a full run needs, serializable as JSON. The effective config is
/// written next to each command's outputs.
struct RunConfig {
    std::string dataset;
    std::string schema = "generic";
    std::string symbol;
    std::string target;
    std::string period = "auto";
    int diff_order = 1;
    std::string scale = "zscore";  // zscore | minmax | none, fitted on the first 80%
    std::uint64_t master_seed = 1;
    VaeConfig vae;
    LSAConfig lsa;
    PredictorConfig predictor;
    std::vector<double> phi_grid{1.0};
    std::vector<double> gamma_grid{0.0, 0.5, 1.0};
    std::vector<std::string> models{"DNN", "LSTM", "BLSTM", "GRU"};
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    std::size_t test_rows = 252;
    int jobs = 1;
    std::string output_dir = "out";

    void validate() const {
        if (scale != "zscore" && scale != "minmax" && scale != "none")
            throw std::invalid_argument("config: scale must be zscore, minmax, or none");
        if (diff_order < 1) throw std::invalid_argument("config: diff_order must be >= 1");
        if (period != "auto") {
            std::size_t pos = 0;
            int p = 0;
            try {
                p = std::stoi(period, &pos);
            } catch (const std::exception&) {
                pos = 0;
            }
            if (pos != period.size() || p < 2)
                throw std::invalid_argument("config: period must be \"auto\" or an integer >= 2");
        }
        if (phi_grid.empty() || gamma_grid.empty())
            throw std::invalid_argument("config: phi/gamma grids must be non-empty");
        if (models.empty()) throw std::invalid_argument("config: model list must be non-empty");
        if (seeds.empty()) throw std::invalid_argument("config: seed list must be non-empty");
        for (const std::string& m : models) predictor_kind_from_string(m);
        if (jobs < 1) throw std::invalid_argument("config: jobs must be >= 1");
    }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
    j = nlohmann::json{{"dataset", c.dataset},
                       {"schema", c.schema},
                       {"symbol", c.symbol},
                       {"target", c.target},
                       {"period", c.period},
                       {"diff_order", c.diff_order},
                       {"scale", c.scale},
                       {"master_seed", c.master_seed},
                       {"vae", c.vae},
                       {"lsa", c.lsa},
                       {"predictor", c.predictor},
                       {"phi_grid", c.phi_grid},
                       {"gamma_grid", c.gamma_grid},
                       {"models", c.models},
                       {"seeds", c.seeds},
                       {"test_rows", c.test_rows},
                       {"jobs", c.jobs},
                       {"output_dir", c.output_dir}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
    RunConfig d;
    c.dataset = j.value("dataset", d.dataset);
    c.schema = j.value("schema", d.schema);
    c.symbol = j.value("symbol", d.symbol);
    c.target = j.value("target", d.target);
    c.period = j.value("period", d.period);
    c.diff_order = j.value("diff_order", d.diff_order);
    c.scale = j.value("scale", d.scale);
    c.master_seed = j.value("master_seed", d.master_seed);
    if (j.contains("vae")) j.at("vae").get_to(c.vae);
    if (j.contains("lsa")) j.at("lsa").get_to(c.lsa);
    if (j.contains("predictor")) j.at("predictor").get_to(c.predictor);
    c.phi_grid = j.value("phi_grid", d.phi_grid);
    c.gamma_grid = j.value("gamma_grid", d.gamma_grid);
    c.models = j.value("models", d.models);
    c.seeds = j.value("seeds", d.seeds);
    c.test_rows = j.value("test_rows", d.test_rows);
    c.jobs = j.value("jobs", d.jobs);
    c.output_dir = j.value("output_dir", d.output_dir);
}

/// Master seed fans out to fixed per-stage seeds; the rule is recorded in the
/// run manifest so any stage can be replayed in isolation.
inline nlohmann::json seed_manifest(std::uint64_t master) {
    nlohmann::json j;
    j["master_seed"] = master;
    j["rule"] = "derived[stage] = splitmix64(master_seed ^ fnv1a64(stage))";
    j["derived"] = {{"phase1", derive_seed(master, "phase1")},
                    {"phase2", derive_seed(master, "phase2")}};
    return j;
}

// ============================================================================
// Small file helpers
// ============================================================================

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << content;
    if (!out) throw std::runtime_error("short write to '" + path + "'");
}

inline RunConfig load_run_config(const std::string& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text_file(path));
    } catch (const nlohmann::json::exception& e) {
        throw std::runtime_error("config '" + path + "': " + e.what());
    }
    RunConfig cfg = j.get<RunConfig>();
    cfg.validate();
    return cfg;
}

// ============================================================================
// Period resolution and scaling
// ============================================================================

/// "auto" estimates the period per column and takes the majority vote,
/// breaking ties toward the smaller period. An explicit integer wins as-is.
inline int resolve_period(const Frame& data, const std::string& period_field) {
    if (period_field != "auto") return std::stoi(period_field);
    std::map<int, std::size_t> votes;
    for (const Series& c : data.columns()) ++votes[estimate_period(c)];
    int best = 0;
    std::size_t best_votes = 0;
    for (const auto& [p, v] : votes) {
        if (v > best_votes) {  // map iterates ascending, so ties keep the smaller period
            best = p;
            best_votes = v;
        }
    }
    return best;
}

/// Applies the configured column scaling, fitted on the first 80% of rows.
/// Returns the (possibly pass-through) frame plus whether/what was fitted.
struct ScaledData {
    Frame frame;
    bool scaled = false;
    ScalerParams params;
};

inline ScaledData scale_frame(const Frame& data, const std::string& scale) {
    if (scale == "none") return {data, false, {}};
    std::size_t train_rows = std::max<std::size_t>(2, (data.rows() * 8) / 10);
    ScalerParams params =
        fit_scale(data, scale == "minmax" ? ScalerKind::minmax : ScalerKind::zscore, train_rows);
    return {apply_scale(data, params), true, params};
}

inline nlohmann::json scaler_to_json(const ScaledData& s, const std::string& scale) {
    nlohmann::json j;
    j["kind"] = scale;
    if (s.scaled) {
        j["names"] = s.params.names;
        j["a"] = s.params.a;
        j["b"] = s.params.b;
    }
    return j;
}

inline ScaledData scale_frame_from_json(const Frame& data, const nlohmann::json& j) {
    std::string kind = j.value("kind", "none");
    if (kind == "none") return {data, false, {}};
    ScalerParams params;
    params.kind = kind == "minmax" ? ScalerKind::minmax : ScalerKind::zscore;
    j.at("names").get_to(params.names);
    j.at("a").get_to(params.a);
    j.at("b").get_to(params.b);
    return {apply_scale(data, params), true, params};
}

// ============================================================================
// Training orchestration (phase 1 -> store -> phase 2)
// ============================================================================

struct PipelineResult {
    int period;
    ScaledData scaled;
    VaeModel phase1;
    SeasonalStore store;
    VaeModel phase2;
    TrainHistory history1;
    TrainHistory history2;
};

/// Per-column additive decomposition; the seasonal components form the
/// phase-1 training set.
inline Frame seasonal_frame(const Frame& data, int period) {
    Frame out;
    out.set_index(data.index());
    for (const Series& c : data.columns()) {
        DecompositionResult d = decompose_additive(c, period);
        out.add_column(Series(d.seasonal.values, c.name));
    }
    return out;
}

/// The full two-phase procedure: decompose every column, train the first VAE
/// on the seasonal parts, freeze its per-phase latent means into the store,
/// then train the second VAE with latent stationarization in the loop.
inline PipelineResult run_training(const Frame& data, const RunConfig& cfg) {
    cfg.validate();
    if (data.cols() < 2) throw std::invalid_argument("training needs >= 2 numeric columns");
    ScaledData scaled = scale_frame(data, cfg.scale);
    int period = resolve_period(scaled.frame, cfg.period);

    Frame seasonal = seasonal_frame(scaled.frame, period);
    Tensor seasonal_rows = frame_to_tensor(seasonal);
    Tensor full_rows = frame_to_tensor(scaled.frame);

    VaeConfig cfg1 = cfg.vae;
    cfg1.input_dim = data.cols();
    cfg1.seed = derive_seed(cfg.master_seed, "phase1");
    VaeModel phase1(cfg1);
    TrainHistory hist1 = train_phase1(phase1, seasonal_rows, cfg1);

    SeasonalStore store = build_seasonal_store(
        [&phase1](const Tensor& rows) { return phase1.encode(rows, Mode::infer); }, seasonal_rows,
        period, phase1.encoder_fingerprint());

    VaeConfig cfg2 = cfg.vae;
    cfg2.input_dim = data.cols();
    cfg2.seed = derive_seed(cfg.master_seed, "phase2");
    VaeModel phase2(cfg2);
    TrainHistory hist2 =
        train_phase2(phase2, full_rows, store, cfg.lsa, period, cfg.diff_order, cfg2);

    return {period,           std::move(scaled), std::move(phase1), std::move(store),
            std::move(phase2), std::move(hist1),  std::move(hist2)};
}

inline std::string history_csv(const TrainHistory& h) {
    std::string out = "epoch,train_loss,val_loss,recon_loss,stnry_loss,kl_loss\n";
    for (std::size_t i = 0; i < h.train_loss.size(); ++i) {
        out += std::to_string(i + 1);
        for (double v : {h.train_loss[i], h.val_loss[i], h.recon_loss[i], h.stnry_loss[i],
                         h.kl_loss[i]})
            out += "," + format_double(v);
        out += "\n";
    }
    return out;
}

// ============================================================================
// Stationarization run
// ============================================================================

struct StationarizeResult {
    Frame latent;  // all z-family columns, k per family
    std::vector<std::pair<std::string, AdfReport>> stnry_adf;
};

/// Encodes scaled rows with a trained phase-2 encoder, splits the latent into
/// its named parts, recombines with (phi, gamma), and ADF-tests each z_stnry
/// column.
inline StationarizeResult run_stationarize(VaeModel& phase2, const SeasonalStore& store,
                                           const Frame& scaled_data, const LSAConfig& lsa,
                                           int period, int diff_order) {
    Tensor rows = frame_to_tensor(scaled_data);
    Tensor z = phase2.encode(rows, Mode::infer);
    LatentDecomposition dec = stationarize(z, store, period, diff_order);
    Tensor z_str = recombine(dec, lsa);

    const std::size_t k = z.shape[1];
    Frame out;
    out.set_index(scaled_data.index());
    auto add_family = [&](const char* family, const Tensor& t) {
        for (std::size_t j = 0; j < k; ++j) {
            std::vector<double> col(t.shape[0]);
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = t.data[i * k + j];
            out.add_column(Series(std::move(col), std::string(family) + "_" + std::to_string(j + 1)));
        }
    };
    add_family("z", dec.z);
    add_family("z_s", dec.z_s);
    add_family("z_sn", dec.z_sn);
    add_family("z_rtr", dec.z_rtr);
    add_family("z_stnry", dec.z_stnry);
    add_family("z_tr", dec.z_tr);
    add_family("z_str", z_str);

    StationarizeResult res;
    res.latent = std::move(out);
    for (std::size_t j = 0; j < k; ++j) {
        std::string name = "z_stnry_" + std::to_string(j + 1);
        res.stnry_adf.emplace_back(name, adf_test(res.latent.column(name)));
    }
    return res;
}

// ============================================================================
// ADF table rendering
// ============================================================================

inline std::string render_adf_markdown(
    const std::vector<std::pair<std::string, AdfReport>>& rows) {
    std::string out =
        "| Variable | adf-Statistic | p-value | 1% Critical | 5% Critical | 10% Critical | "
        "Used lag | Stationary (5%) |\n"
        "|---|---|---|---|---|---|---|---|\n";
    char buf[64];
    for (const auto& [name, rep] : rows) {
        out += "| " + name + " |";
        std::snprintf(buf, sizeof(buf), " %.4f |", rep.statistic);
        out += buf;
        std::snprintf(buf, sizeof(buf), " %.4f |", rep.p_value);
        out += buf;
        std::snprintf(buf, sizeof(buf), " %.4f | %.4f | %.4f |", rep.critical_values.at("1%"),
                      rep.critical_values.at("5%"), rep.critical_values.at("10%"));
        out += buf;
        out += " " + std::to_string(rep.used_lag) + " |";
        out += rep.p_value < 0.05 ? " yes |" : " no |";
        out += "\n";
    }
    return out;
}

// ============================================================================
// Sweep serialization
// ============================================================================

inline std::string sweep_csv_header() {
    return "dataset,target,model,phi,gamma,seed,rmse_scaled,rmse_zscored";
}

inline std::string sweep_cell_csv(const SweepCell& c) {
    return csv_quote(c.dataset) + "," + csv_quote(c.target) + "," + to_string(c.kind) + "," +
           format_double(c.phi) + "," + format_double(c.gamma) + "," + std::to_string(c.seed) +
           "," + format_double(c.rmse_scaled) + "," + format_double(c.rmse_zscored);
}

inline std::vector<SweepCell> parse_sweep_csv(const std::string& text) {
    CsvTable table = parse_csv(text);
    std::vector<std::string> expect = {"dataset", "target",       "model",
                                       "phi",     "gamma",        "seed",
                                       "rmse_scaled", "rmse_zscored"};
    if (table.header != std::vector<std::string>(expect.begin(), expect.end()))
        throw std::invalid_argument("sweep csv: unexpected header");
    std::vector<SweepCell> out;
    for (const auto& row : table.rows) {
        SweepCell c;
        c.dataset = row[0];
        c.target = row[1];
        c.kind = predictor_kind_from_string(row[2]);
        c.phi = std::stod(row[3]);
        c.gamma = std::stod(row[4]);
        c.seed = std::stoull(row[5]);
        c.rmse_scaled = std::stod(row[6]);
        c.rmse_zscored = std::stod(row[7]);
        out.push_back(std::move(c));
    }
    return out;
}

/// Resume key: everything that identifies a cell, not its results.
inline std::string sweep_cell_key(const SweepCell& c) {
    return c.dataset + "\x1f" + c.target + "\x1f" + to_string(c.kind) + "\x1f" +
           format_double(c.phi) + "\x1f" + format_double(c.gamma) + "\x1f" +
           std::to_string(c.seed);
}

// ============================================================================
// Sweep markdown (Tables VI/VII shape)
// ============================================================================

enum class SweepMetric { scaled, zscored };

namespace detail {

inline std::string render_sweep_table(const std::vector<SweepCell>& cells, bool vary_gamma,
                                      double fixed, SweepMetric metric) {
    std::set<double> levels;
    for (const SweepCell& c : cells) {
        double fix = vary_gamma ? c.phi : c.gamma;
        if (fix == fixed) levels.insert(vary_gamma ? c.gamma : c.phi);
    }
    if (levels.empty()) return "";
    const char* vary_name = vary_gamma ? "gamma" : "phi";
    const char* fixed_name = vary_gamma ? "phi" : "gamma";
    std::string out = "| Model |";
    char buf[64];
    for (double g : levels) {
        std::snprintf(buf, sizeof(buf), " %s=%g |", vary_name, g);
        out += buf;
    }
    out += "\n|---|";
    for (std::size_t i = 0; i < levels.size(); ++i) out += "---|";
    out += "\n";
    for (PredictorKind kind : {PredictorKind::dnn, PredictorKind::lstm, PredictorKind::blstm,
                               PredictorKind::gru}) {
        bool kind_present = false;
        std::string row = "| " + to_string(kind) + " |";
        for (double g : levels) {
            double sum = 0.0;
            std::size_t n = 0;
            for (const SweepCell& c : cells) {
                if (c.kind != kind) continue;
                if ((vary_gamma ? c.phi : c.gamma) != fixed) continue;
                if ((vary_gamma ? c.gamma : c.phi) != g) continue;
                sum += metric == SweepMetric::zscored ? c.rmse_zscored : c.rmse_scaled;
                ++n;
            }
            if (n == 0) {
                row += " n/a |";
            } else {
                kind_present = true;
                std::snprintf(buf, sizeof(buf), " %.4f |", sum / static_cast<double>(n));
                row += buf;
            }
        }
        if (kind_present) out += row + "\n";
    }
    std::snprintf(buf, sizeof(buf), "(%s = %g, mean RMSE over seeds, %s units)\n", fixed_name,
                  fixed, metric == SweepMetric::zscored ? "z-scored" : "min-max scaled");
    return out + buf;
}

}  // namespace detail

/// Two tables: RMSE against gamma at the largest phi (trend impact) and
/// against phi at the largest gamma (seasonal impact).
inline std::string render_sweep_markdown(const std::vector<SweepCell>& cells, SweepMetric metric) {
    if (cells.empty()) return "(no sweep cells)\n";
    double max_phi = cells[0].phi, max_gamma = cells[0].gamma;
    for (const SweepCell& c : cells) {
        max_phi = std::max(max_phi, c.phi);
        max_gamma = std::max(max_gamma, c.gamma);
    }
    std::string out = "## Impact of trend inclusion\n\n";
    out += detail::render_sweep_table(cells, true, max_phi, metric);
    out += "\n## Impact of seasonal inclusion\n\n";
    out += detail::render_sweep_table(cells, false, max_gamma, metric);
    return out;
}

}  // namespace latentstat
