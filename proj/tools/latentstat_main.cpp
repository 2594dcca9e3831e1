// latentstat CLI: adf, decompose, train-vae, stationarize, sweep, report.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "latentstat/latentstat.hpp"

namespace fs = std::filesystem;
using namespace latentstat;

namespace {

Frame load_input(const std::string& path, const std::string& schema_name,
                 const std::string& symbol) {
    IngestReport report;
    Frame frame = load_csv(path, find_schema(schema_name), symbol, &report);
    if (report.rows_dropped > 0)
        std::cerr << "warning: dropped " << report.rows_dropped << " of " << report.rows_in
                  << " rows while reading '" << path << "'\n";
    return frame;
}

std::string dataset_label(const std::string& path) {
    return fs::path(path).stem().string();
}

void ensure_dir(const std::string& dir) {
    if (dir.empty()) throw std::invalid_argument("output directory must be non-empty");
    fs::create_directories(dir);
}

void write_config_json(const std::string& dir, const std::string& name,
                       const nlohmann::json& j) {
    write_text_file((fs::path(dir) / name).string(), j.dump(2) + "\n");
}

// ----------------------------------------------------------------------------
// adf
// ----------------------------------------------------------------------------

struct AdfArgs {
    std::string input, schema = "generic", symbol, latent_ckpt, out;
    int max_lag = -1;
};

int cmd_adf(const AdfArgs& a) {
    std::optional<int> max_lag;
    if (a.max_lag >= 0) max_lag = a.max_lag;

    Frame frame = load_input(a.input, a.schema, a.symbol);
    std::vector<std::pair<std::string, AdfReport>> rows;
    if (a.latent_ckpt.empty()) {
        for (const Series& c : frame.columns()) rows.emplace_back(c.name, adf_test(c, max_lag));
    } else {
        auto [model, header] = VaeModel::load_with_header(a.latent_ckpt);
        ScaledData scaled = scale_frame_from_json(frame, header.value("scale", nlohmann::json()));
        Tensor z = model.encode(frame_to_tensor(scaled.frame), Mode::infer);
        for (std::size_t j = 0; j < z.shape[1]; ++j) {
            std::vector<double> col(z.shape[0]);
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = z.data[i * z.shape[1] + j];
            std::string name = "l_var" + std::to_string(j + 1);
            rows.emplace_back(name, adf_test(Series(std::move(col), name), max_lag));
        }
    }
    std::string table = render_adf_markdown(rows);
    std::cout << table;
    if (!a.out.empty()) {
        ensure_dir(a.out);
        write_text_file((fs::path(a.out) / "adf.md").string(), table);
        nlohmann::json cfg = {{"command", "adf"},   {"input", a.input}, {"schema", a.schema},
                              {"symbol", a.symbol}, {"latent", a.latent_ckpt},
                              {"max_lag", a.max_lag}};
        write_config_json(a.out, "adf-config.json", cfg);
    }
    return 0;
}

// ----------------------------------------------------------------------------
// decompose
// ----------------------------------------------------------------------------

struct DecomposeArgs {
    std::string input, schema = "generic", symbol, column, period = "auto", out;
};

int cmd_decompose(const DecomposeArgs& a) {
    Frame frame = load_input(a.input, a.schema, a.symbol);
    const Series& col = frame.column(a.column);
    int period = a.period == "auto" ? estimate_period(col) : std::stoi(a.period);
    DecompositionResult d = decompose_additive(col, period);

    Frame out_frame;
    out_frame.set_index(frame.index());
    out_frame.add_column(Series(col.values, col.name));
    out_frame.add_column(d.trend);
    out_frame.add_column(d.seasonal);
    out_frame.add_column(d.residual);

    double max_err = 0.0;
    for (std::size_t i = 0; i < col.size(); ++i) {
        double sum = d.trend.values[i] + d.seasonal.values[i] + d.residual.values[i];
        max_err = std::max(max_err, std::abs(sum - col.values[i]));
    }
    std::string body = write_canonical_csv(out_frame);
    body += "# identity_max_abs_err=" + format_double(max_err) +
            " (trend+seasonal+residual vs input), period=" + std::to_string(period) + "\n";

    std::string profile_csv = "phase,value\n";
    std::vector<double> profile = seasonal_profile(d.seasonal, period);
    for (int p = 0; p < period; ++p)
        profile_csv += std::to_string(p) + "," + format_double(profile[p]) + "\n";

    if (a.out.empty()) {
        std::cout << body << profile_csv;
    } else {
        ensure_dir(a.out);
        write_text_file((fs::path(a.out) / "decomposition.csv").string(), body);
        write_text_file((fs::path(a.out) / "profile.csv").string(), profile_csv);
        nlohmann::json cfg = {{"command", "decompose"}, {"input", a.input},
                              {"schema", a.schema},     {"symbol", a.symbol},
                              {"column", a.column},     {"period", period}};
        write_config_json(a.out, "decompose-config.json", cfg);
    }
    return 0;
}

// ----------------------------------------------------------------------------
// train-vae
// ----------------------------------------------------------------------------

int cmd_train_vae(const RunConfig& cfg) {
    if (cfg.dataset.empty()) throw std::invalid_argument("train-vae: no dataset given");
    Frame frame = load_input(cfg.dataset, cfg.schema, cfg.symbol);
    PipelineResult res = run_training(frame, cfg);

    ensure_dir(cfg.output_dir);
    fs::path out(cfg.output_dir);
    nlohmann::json scale_json = scaler_to_json(res.scaled, cfg.scale);

    nlohmann::json extra1 = {{"scale", scale_json}, {"period", res.period}};
    res.phase1.save((out / "phase1.ckpt").string(), "phase1", extra1);
    res.store.save((out / "store.ckpt").string());
    nlohmann::json extra2 = {{"scale", scale_json},
                             {"period", res.period},
                             {"diff_order", cfg.diff_order},
                             {"lsa", cfg.lsa},
                             {"store_fingerprint", fingerprint_hex(res.store.encoder_fingerprint())}};
    res.phase2.save((out / "phase2.ckpt").string(), "phase2", extra2);
    write_text_file((out / "history-phase1.csv").string(), history_csv(res.history1));
    write_text_file((out / "history-phase2.csv").string(), history_csv(res.history2));

    nlohmann::json effective;
    effective["command"] = "train-vae";
    effective["config"] = cfg;
    effective["resolved_period"] = res.period;
    effective["seeds"] = seed_manifest(cfg.master_seed);
    write_config_json(cfg.output_dir, "train-vae-config.json", effective);

    std::cout << "period=" << res.period << " phase1_val_loss="
              << format_double(res.history1.val_loss.back()) << " phase2_val_loss="
              << format_double(res.history2.val_loss.back()) << "\n";
    std::cout << "wrote " << (out / "phase1.ckpt").string() << ", " << (out / "store.ckpt").string()
              << ", " << (out / "phase2.ckpt").string() << "\n";
    return 0;
}

// ----------------------------------------------------------------------------
// stationarize
// ----------------------------------------------------------------------------

struct StationarizeArgs {
    std::string checkpoint, store, input, schema = "generic", symbol, out = "out";
    double phi = -1.0, gamma = -1.0;  // negative = use the trained value
};

int cmd_stationarize(const StationarizeArgs& a) {
    auto [model, header] = VaeModel::load_with_header(a.checkpoint);
    if (header.value("role", "") != "phase2")
        throw std::runtime_error("stationarize: '" + a.checkpoint + "' is not a phase-2 checkpoint");
    SeasonalStore store = SeasonalStore::load(a.store);
    std::string want = header.value("store_fingerprint", "");
    if (want != fingerprint_hex(store.encoder_fingerprint()))
        throw std::runtime_error("stationarize: store fingerprint " +
                                 fingerprint_hex(store.encoder_fingerprint()) +
                                 " does not match checkpoint's expected " + want);

    LSAConfig lsa = header.value("lsa", LSAConfig{});
    if (a.phi >= 0.0) lsa.phi = a.phi;
    if (a.gamma >= 0.0) lsa.gamma = a.gamma;
    int period = header.at("period").get<int>();
    int diff_order = header.at("diff_order").get<int>();

    Frame frame = load_input(a.input, a.schema, a.symbol);
    ScaledData scaled = scale_frame_from_json(frame, header.value("scale", nlohmann::json()));
    StationarizeResult res = run_stationarize(model, store, scaled.frame, lsa, period, diff_order);

    std::string table = render_adf_markdown(res.stnry_adf);
    std::size_t stationary = 0;
    for (const auto& [name, rep] : res.stnry_adf)
        if (rep.p_value < 0.05) ++stationary;
    std::cout << table;
    std::cout << "stationary at 5%: " << stationary << " of " << res.stnry_adf.size()
              << " z_stnry columns\n";

    ensure_dir(a.out);
    fs::path out(a.out);
    write_canonical_csv((out / "latent.csv").string(), res.latent);
    write_text_file((out / "stationarize-adf.md").string(), table);
    nlohmann::json cfg = {{"command", "stationarize"},
                          {"checkpoint", a.checkpoint},
                          {"store", a.store},
                          {"input", a.input},
                          {"schema", a.schema},
                          {"symbol", a.symbol},
                          {"phi", lsa.phi},
                          {"gamma", lsa.gamma},
                          {"period", period},
                          {"diff_order", diff_order}};
    write_config_json(a.out, "stationarize-config.json", cfg);
    return 0;
}

// ----------------------------------------------------------------------------
// sweep
// ----------------------------------------------------------------------------

struct SweepArgs {
    std::string checkpoint, store, input;
    RunConfig cfg;
};

int cmd_sweep(const SweepArgs& a) {
    if (a.cfg.target.empty()) throw std::invalid_argument("sweep: --target is required");
    auto [model, header] = VaeModel::load_with_header(a.checkpoint);
    if (header.value("role", "") != "phase2")
        throw std::runtime_error("sweep: '" + a.checkpoint + "' is not a phase-2 checkpoint");
    SeasonalStore store = SeasonalStore::load(a.store);
    std::string want = header.value("store_fingerprint", "");
    if (want != fingerprint_hex(store.encoder_fingerprint()))
        throw std::runtime_error("sweep: store fingerprint " +
                                 fingerprint_hex(store.encoder_fingerprint()) +
                                 " does not match checkpoint's expected " + want);
    int period = header.at("period").get<int>();
    int diff_order = header.at("diff_order").get<int>();

    Frame frame = load_input(a.input, a.cfg.schema, a.cfg.symbol);
    const Series& target = frame.column(a.cfg.target);
    ScaledData scaled = scale_frame_from_json(frame, header.value("scale", nlohmann::json()));
    Tensor z = model.encode(frame_to_tensor(scaled.frame), Mode::infer);
    LatentDecomposition dec = stationarize(z, store, period, diff_order);

    SweepPlan plan;
    plan.dataset = dataset_label(a.input);
    plan.target = a.cfg.target;
    plan.phi_grid = a.cfg.phi_grid;
    plan.gamma_grid = a.cfg.gamma_grid;
    plan.kinds.clear();
    for (const std::string& m : a.cfg.models) plan.kinds.push_back(predictor_kind_from_string(m));
    plan.seeds = a.cfg.seeds;
    plan.base = a.cfg.predictor;
    plan.test_rows = a.cfg.test_rows;
    plan.jobs = a.cfg.jobs;

    ensure_dir(a.cfg.output_dir);
    fs::path csv_path = fs::path(a.cfg.output_dir) / "sweep.csv";
    std::vector<SweepCell> done;
    if (fs::exists(csv_path)) {
        done = parse_sweep_csv(read_text_file(csv_path.string()));
        if (!done.empty())
            std::cerr << "resuming: " << done.size() << " cells already in "
                      << csv_path.string() << "\n";
    }
    std::set<std::string> done_keys;
    for (const SweepCell& c : done) done_keys.insert(sweep_cell_key(c));

    std::ofstream csv(csv_path, std::ios::binary | std::ios::app);
    if (!csv) throw std::runtime_error("cannot write '" + csv_path.string() + "'");
    if (done.empty()) csv << sweep_csv_header() << "\n";

    std::vector<SweepCell> fresh = run_sweep(
        dec, frame.index(), target, plan,
        [&done_keys](const SweepCell& c) { return done_keys.count(sweep_cell_key(c)) != 0; },
        [&csv](const SweepCell& c) { csv << sweep_cell_csv(c) << "\n" << std::flush; });
    csv.close();

    std::vector<SweepCell> all = done;
    all.insert(all.end(), fresh.begin(), fresh.end());
    std::string md = "# Sweep results: " + plan.dataset + " / " + plan.target + "\n\n";
    md += render_sweep_markdown(all, SweepMetric::zscored);
    md += "\n---\n\n";
    md += render_sweep_markdown(all, SweepMetric::scaled);
    write_text_file((fs::path(a.cfg.output_dir) / "sweep.md").string(), md);

    nlohmann::json effective;
    effective["command"] = "sweep";
    effective["checkpoint"] = a.checkpoint;
    effective["store"] = a.store;
    effective["input"] = a.input;
    effective["config"] = a.cfg;
    effective["period"] = period;
    effective["diff_order"] = diff_order;
    write_config_json(a.cfg.output_dir, "sweep-config.json", effective);

    std::cout << "computed " << fresh.size() << " cells (" << all.size() << " total) -> "
              << csv_path.string() << "\n";
    return 0;
}

// ----------------------------------------------------------------------------
// report
// ----------------------------------------------------------------------------

struct ReportArgs {
    std::string csv, out;
};

int cmd_report(const ReportArgs& a) {
    std::vector<SweepCell> cells = parse_sweep_csv(read_text_file(a.csv));
    std::string md = render_sweep_markdown(cells, SweepMetric::zscored);
    md += "\n---\n\n";
    md += render_sweep_markdown(cells, SweepMetric::scaled);
    if (a.out.empty()) {
        std::cout << md;
    } else {
        ensure_dir(a.out);
        write_text_file((fs::path(a.out) / "sweep.md").string(), md);
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"latent-space stationarization pipeline"};
    app.require_subcommand(1);

    AdfArgs adf_args;
    CLI::App* adf = app.add_subcommand("adf", "ADF unit-root test per column");
    adf->add_option("input", adf_args.input, "input CSV")->required();
    adf->add_option("--schema", adf_args.schema, "csv schema (djia, nifty50, generic)");
    adf->add_option("--symbol", adf_args.symbol, "symbol filter for multi-symbol files");
    adf->add_option("--latent", adf_args.latent_ckpt,
                    "encode through this VAE checkpoint and test l_var columns");
    adf->add_option("--max-lag", adf_args.max_lag, "maximum ADF lag (default: automatic)");
    adf->add_option("--out", adf_args.out, "output directory (default: stdout only)");

    DecomposeArgs dec_args;
    CLI::App* dec = app.add_subcommand("decompose", "additive trend/seasonal/residual split");
    dec->add_option("input", dec_args.input, "input CSV")->required();
    dec->add_option("--column", dec_args.column, "column to decompose")->required();
    dec->add_option("--schema", dec_args.schema, "csv schema");
    dec->add_option("--symbol", dec_args.symbol, "symbol filter");
    dec->add_option("--period", dec_args.period, "seasonal period or \"auto\"");
    dec->add_option("--out", dec_args.out, "output directory (default: stdout)");

    RunConfig train_cfg;
    std::string train_config_path;
    CLI::App* train = app.add_subcommand("train-vae", "two-phase VAE training");
    train->add_option("input", train_cfg.dataset, "input CSV (overrides config dataset)");
    train->add_option("--config", train_config_path, "JSON RunConfig file");
    train->add_option("--schema", train_cfg.schema, "csv schema");
    train->add_option("--symbol", train_cfg.symbol, "symbol filter");
    train->add_option("--period", train_cfg.period, "seasonal period or \"auto\"");
    train->add_option("--diff-order", train_cfg.diff_order, "differencing order");
    train->add_option("--scale", train_cfg.scale, "column scaling: zscore, minmax, none");
    train->add_option("--seed", train_cfg.master_seed, "master seed");
    train->add_option("--epochs", train_cfg.vae.epochs, "training epochs per phase");
    train->add_option("--batch-size", train_cfg.vae.batch_size, "batch size");
    train->add_option("--latent-dim", train_cfg.vae.latent_dim, "latent dimension k");
    train->add_option("--lr", train_cfg.vae.learning_rate, "learning rate");
    train->add_option("--val-split", train_cfg.vae.val_split, "validation fraction");
    train->add_option("--kl-weight", train_cfg.vae.kl_weight, "KL weight (0 = plain autoencoder)");
    train->add_option("--phi", train_cfg.lsa.phi, "seasonal fraction in training recombination");
    train->add_option("--gamma", train_cfg.lsa.gamma, "trend fraction in training recombination");
    train->add_option("--out", train_cfg.output_dir, "output directory");

    StationarizeArgs st_args;
    CLI::App* st = app.add_subcommand("stationarize", "latent stationarization + ADF report");
    st->add_option("input", st_args.input, "input CSV")->required();
    st->add_option("--checkpoint", st_args.checkpoint, "phase-2 VAE checkpoint")->required();
    st->add_option("--store", st_args.store, "seasonal store file")->required();
    st->add_option("--schema", st_args.schema, "csv schema");
    st->add_option("--symbol", st_args.symbol, "symbol filter");
    st->add_option("--phi", st_args.phi, "seasonal fraction (default: trained value)");
    st->add_option("--gamma", st_args.gamma, "trend fraction (default: trained value)");
    st->add_option("--out", st_args.out, "output directory");

    SweepArgs sweep_args;
    std::string sweep_config_path;
    CLI::App* sw = app.add_subcommand("sweep", "phi/gamma grid over the four predictors");
    sw->add_option("input", sweep_args.input, "input CSV")->required();
    sw->add_option("--checkpoint", sweep_args.checkpoint, "phase-2 VAE checkpoint")->required();
    sw->add_option("--store", sweep_args.store, "seasonal store file")->required();
    sw->add_option("--config", sweep_config_path, "JSON RunConfig file");
    sw->add_option("--schema", sweep_args.cfg.schema, "csv schema");
    sw->add_option("--symbol", sweep_args.cfg.symbol, "symbol filter");
    sw->add_option("--target", sweep_args.cfg.target, "target column to forecast");
    sw->add_option("--phi-grid", sweep_args.cfg.phi_grid, "phi grid values");
    sw->add_option("--gamma-grid", sweep_args.cfg.gamma_grid, "gamma grid values");
    sw->add_option("--models", sweep_args.cfg.models, "model kinds (DNN LSTM BLSTM GRU)");
    sw->add_option("--seeds", sweep_args.cfg.seeds, "training seeds (one run per seed)");
    sw->add_option("--lookback", sweep_args.cfg.predictor.lookback, "window length");
    sw->add_option("--epochs", sweep_args.cfg.predictor.epochs, "predictor training epochs");
    sw->add_option("--test-rows", sweep_args.cfg.test_rows, "held-out tail length");
    sw->add_option("--jobs", sweep_args.cfg.jobs, "parallel cells");
    sw->add_option("--out", sweep_args.cfg.output_dir, "output directory");

    ReportArgs rep_args;
    CLI::App* rep = app.add_subcommand("report", "markdown tables from a sweep CSV");
    rep->add_option("csv", rep_args.csv, "sweep CSV produced by the sweep command")->required();
    rep->add_option("--out", rep_args.out, "output directory (default: stdout)");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*adf) return cmd_adf(adf_args);
        if (*dec) return cmd_decompose(dec_args);
        if (*train) {
            RunConfig cfg;
            if (!train_config_path.empty()) cfg = load_run_config(train_config_path);
            // Flags the user actually passed override the config file.
            for (const CLI::Option* opt : train->get_options()) {
                if (opt->count() == 0) continue;
                const std::string name = opt->get_name();
                if (name == "input") cfg.dataset = train_cfg.dataset;
                else if (name == "--schema") cfg.schema = train_cfg.schema;
                else if (name == "--symbol") cfg.symbol = train_cfg.symbol;
                else if (name == "--period") cfg.period = train_cfg.period;
                else if (name == "--diff-order") cfg.diff_order = train_cfg.diff_order;
                else if (name == "--scale") cfg.scale = train_cfg.scale;
                else if (name == "--seed") cfg.master_seed = train_cfg.master_seed;
                else if (name == "--epochs") cfg.vae.epochs = train_cfg.vae.epochs;
                else if (name == "--batch-size") cfg.vae.batch_size = train_cfg.vae.batch_size;
                else if (name == "--latent-dim") cfg.vae.latent_dim = train_cfg.vae.latent_dim;
                else if (name == "--lr") cfg.vae.learning_rate = train_cfg.vae.learning_rate;
                else if (name == "--val-split") cfg.vae.val_split = train_cfg.vae.val_split;
                else if (name == "--kl-weight") cfg.vae.kl_weight = train_cfg.vae.kl_weight;
                else if (name == "--phi") cfg.lsa.phi = train_cfg.lsa.phi;
                else if (name == "--gamma") cfg.lsa.gamma = train_cfg.lsa.gamma;
                else if (name == "--out") cfg.output_dir = train_cfg.output_dir;
            }
            cfg.validate();
            return cmd_train_vae(cfg);
        }
        if (*st) return cmd_stationarize(st_args);
        if (*sw) {
            if (!sweep_config_path.empty()) {
                RunConfig cfg = load_run_config(sweep_config_path);
                for (const CLI::Option* opt : sw->get_options()) {
                    if (opt->count() == 0) continue;
                    const std::string name = opt->get_name();
                    if (name == "--schema") cfg.schema = sweep_args.cfg.schema;
                    else if (name == "--symbol") cfg.symbol = sweep_args.cfg.symbol;
                    else if (name == "--target") cfg.target = sweep_args.cfg.target;
                    else if (name == "--phi-grid") cfg.phi_grid = sweep_args.cfg.phi_grid;
                    else if (name == "--gamma-grid") cfg.gamma_grid = sweep_args.cfg.gamma_grid;
                    else if (name == "--models") cfg.models = sweep_args.cfg.models;
                    else if (name == "--seeds") cfg.seeds = sweep_args.cfg.seeds;
                    else if (name == "--lookback") cfg.predictor.lookback = sweep_args.cfg.predictor.lookback;
                    else if (name == "--epochs") cfg.predictor.epochs = sweep_args.cfg.predictor.epochs;
                    else if (name == "--test-rows") cfg.test_rows = sweep_args.cfg.test_rows;
                    else if (name == "--jobs") cfg.jobs = sweep_args.cfg.jobs;
                    else if (name == "--out") cfg.output_dir = sweep_args.cfg.output_dir;
                }
                sweep_args.cfg = cfg;
            }
            sweep_args.cfg.validate();
            return cmd_sweep(sweep_args);
        }
        if (*rep) return cmd_report(rep_args);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
