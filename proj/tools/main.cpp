#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "saconv/climate.hpp"
#include "saconv/gradcheck.hpp"
#include "saconv/gridio.hpp"
#include "saconv/layers.hpp"
#include "saconv/metrics.hpp"
#include "saconv/train.hpp"

namespace fs = std::filesystem;
using namespace saconv;

namespace {

constexpr const char* kArchConvnet = "convnet";
constexpr const char* kArchSaconvnet = "saconvnet";
constexpr const char* kArchSaconvnetHw = "saconvnet-hw";

ModelConfig apply_arch(ModelConfig cfg, const std::string& arch) {
    if (arch == kArchConvnet) {
        cfg.attn_channels = 0;
        cfg.use_highway = false;
    } else if (arch == kArchSaconvnet) {
        cfg.use_highway = false;
    } else if (arch == kArchSaconvnetHw) {
        cfg.use_highway = true;
    } else {
        throw ContractError("unknown --arch '" + arch + "' (valid: convnet, saconvnet, " +
                            "saconvnet-hw)");
    }
    cfg.validate();
    return cfg;
}

io::FileConfig load_config(const std::string& config_path) {
    io::FileConfig fc;
    if (!config_path.empty()) fc = io::parse_config_file(io::read_file(config_path));
    return fc;
}

std::vector<double> parse_percentiles(const std::string& spec) {
    std::vector<double> out;
    auto parse_one = [](const std::string& s) {
        try {
            std::size_t pos = 0;
            double v = std::stod(s, &pos);
            if (pos != s.size() || !(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("range");
            return v;
        } catch (const std::exception&) {
            throw ContractError("bad percentile '" + s + "' (want a fraction in [0,1])");
        }
    };
    std::size_t colon = spec.find(':');
    if (colon != std::string::npos) {
        double lo = parse_one(spec.substr(0, colon));
        double hi = parse_one(spec.substr(colon + 1));
        if (hi < lo) throw ContractError("--percentiles range is reversed: " + spec);
        auto steps = static_cast<int>(std::llround((hi - lo) / 0.01));
        for (int i = 0; i <= steps; ++i) out.push_back(lo + 0.01 * i);
        return out;
    }
    std::size_t start = 0;
    for (;;) {
        std::size_t comma = spec.find(',', start);
        out.push_back(parse_one(spec.substr(start, comma == std::string::npos
                                                       ? std::string::npos
                                                       : comma - start)));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

struct LoadedData {
    DailyGridSeries slp, gph;
    fs::path slp_path, gph_path;
};

LoadedData load_grids(const fs::path& data_dir) {
    LoadedData d;
    d.slp_path = data_dir / "slp.grid";
    d.gph_path = data_dir / "gph.grid";
    d.slp = io::read_grid_series(d.slp_path);
    d.gph = io::read_grid_series(d.gph_path);
    return d;
}

MetricsReport report_from_eval(const EvalResult& ev, const std::vector<GridSample>& samples,
                               double threshold_percentile) {
    MetricsReport rep;
    rep.loss = ev.loss;
    rep.threshold_percentile = threshold_percentile;
    std::vector<int> labels;
    labels.reserve(samples.size());
    for (const GridSample& s : samples) labels.push_back(s.label);
    ConfusionMatrix cm = confusion(ev.pred, labels);
    rep.confusion = cm;
    DerivedMetrics dm = derive_metrics(cm);
    rep.accuracy = dm.accuracy;
    rep.precision = dm.precision;
    rep.recall = dm.recall;
    rep.f1 = dm.f1;
    try {
        rep.auc = roc_auc(ev.prob1, labels);
    } catch (const InputError&) {
        // single-class split: AUC stays unset
    }
    return rep;
}

// ---------------------------------------------------------------------------

int cmd_synth(std::uint64_t seed, int days, double signal, const std::string& out_dir) {
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    io::Manifest man;
    man.command = "synth";
    man.master_seed = seed;
    man.config_hash = fnv1a_hex("seed=" + std::to_string(seed) + ";days=" +
                               std::to_string(days) + ";signal=" + std::to_string(signal));
    man.created_at = io::timestamp_now();
    man.artifacts = {"slp.grid", "gph.grid", "labels.csv", "precip.csv"};
    io::write_manifest(dir / "manifest.json", man);

    SynthOutput synth = synth_generate(seed, days, signal);
    io::write_grid_series(dir / "slp.grid", synth.slp);
    io::write_grid_series(dir / "gph.grid", synth.gph);
    io::write_precip_csv(dir / "precip.csv", synth.precip);

    LabelSeries labels;
    labels.dates = synth.slp.dates;
    labels.labels = synth.truth;
    labels.threshold_percentile = 1.0 - synth.planted_fraction;
    labels.threshold_value = percentile(synth.precip.values, labels.threshold_percentile);
    io::write_labels_csv(dir / "labels.csv", labels);

    man.status = "complete";
    man.completed_at = io::timestamp_now();
    for (const std::string& a : man.artifacts) {
        man.input_digests[a] = io::digest_file(dir / a);
    }
    io::write_manifest(dir / "manifest.json", man);

    int positives = 0;
    for (int t : synth.truth) positives += t;
    std::cout << "wrote " << days << " days (" << positives << " extreme) to " << out_dir
              << "\n";
    return 0;
}

int cmd_label(const std::string& precip_path, double m, const std::string& out_path) {
    PrecipSeries precip = io::read_precip_csv(precip_path);
    LabelSeries labels = label_extremes(precip, m);
    io::write_labels_csv(out_path, labels);
    int positives = 0;
    for (int l : labels.labels) positives += l;
    std::cout << "threshold " << labels.threshold_value << " at p" << m * 100.0 << "; "
              << positives << " of " << labels.labels.size() << " days labeled extreme\n";
    std::cout << "wrote " << out_path << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& arch, std::optional<std::uint64_t> seed,
              const std::string& out_dir) {
    io::FileConfig fc = load_config(config_path);
    ModelConfig mcfg = apply_arch(fc.model, arch);
    TrainConfig tcfg = fc.train;
    if (seed) tcfg.seed = *seed;

    LoadedData data = load_grids(data_dir);
    fs::path labels_path = fs::path(data_dir) / "labels.csv";
    LabelSeries labels = io::read_labels_csv(labels_path);
    Dataset ds = build_dataset(data.slp, data.gph, labels);

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    io::Manifest man;
    man.command = "train";
    man.master_seed = tcfg.seed;
    man.config_hash =
        fnv1a_hex(io::model_config_json(mcfg) + io::train_config_json(tcfg) + arch);
    man.created_at = io::timestamp_now();
    man.input_digests[data.slp_path.string()] = io::digest_file(data.slp_path);
    man.input_digests[data.gph_path.string()] = io::digest_file(data.gph_path);
    man.input_digests[labels_path.string()] = io::digest_file(labels_path);
    man.artifacts = {"checkpoint.ckpt", "train_log.jsonl"};
    io::write_manifest(dir / "manifest.json", man);

    std::cout << "training " << arch << " on " << ds.train.size() << " samples ("
              << Dataset::count_positives(ds.train) << " positive), test " << ds.test.size()
              << "\n";
    TrainResult result = train(mcfg, ds, tcfg);

    io::save_checkpoint(dir / "checkpoint.ckpt", result.params);
    io::write_file_atomic(dir / "train_log.jsonl", io::train_log_jsonl(result));

    man.status = "complete";
    man.completed_at = io::timestamp_now();
    io::write_manifest(dir / "manifest.json", man);

    std::cout << "final train accuracy " << result.final_train_accuracy << ", loss "
              << result.final_train_loss << "\n";
    std::cout << "wrote " << (dir / "checkpoint.ckpt").string() << "\n";
    return 0;
}

int cmd_evaluate(const std::string& checkpoint_path, const std::string& data_dir,
                 const std::string& out_path) {
    ModelParams params = io::load_checkpoint(checkpoint_path);
    LoadedData data = load_grids(data_dir);
    LabelSeries labels = io::read_labels_csv(fs::path(data_dir) / "labels.csv");
    Dataset ds = build_dataset(data.slp, data.gph, labels);
    if (ds.train.empty() || ds.train.front().anomalies.shape !=
                                std::vector<int>{params.config.input_h, params.config.input_w,
                                                 params.config.input_d}) {
        throw InputError("evaluate: dataset grids do not match the checkpoint's input dims");
    }

    std::vector<GridSample> all = ds.train;
    all.insert(all.end(), ds.test.begin(), ds.test.end());
    std::vector<double> plain_weights{1.0, 1.0};

    auto section = [&](const std::vector<GridSample>& samples) {
        EvalResult ev = evaluate_model(params, samples, plain_weights);
        return report_from_eval(ev, samples, ds.threshold_percentile);
    };
    MetricsReport train_rep = section(ds.train);
    MetricsReport test_rep = section(ds.test);
    MetricsReport all_rep = section(all);

    std::string json = "{\n\"train\": " + io::metrics_report_json(train_rep) +
                       ",\n\"test\": " + io::metrics_report_json(test_rep) +
                       ",\n\"all\": " + io::metrics_report_json(all_rep) + "\n}\n";
    io::write_file_atomic(out_path, json);
    fs::path csv_path(out_path);
    csv_path.replace_extension(".csv");
    std::string csv = io::metrics_csv_header("split") + "\n" +
                      io::metrics_csv_row("train", train_rep) + "\n" +
                      io::metrics_csv_row("test", test_rep) + "\n" +
                      io::metrics_csv_row("all", all_rep) + "\n";
    io::write_file_atomic(csv_path, csv);

    std::cout << "test split confusion:\n" << io::confusion_text(test_rep.confusion);
    std::cout << "wrote " << out_path << " and " << csv_path.string() << "\n";
    return 0;
}

int cmd_sweep(const std::string& data_dir, const std::string& config_path,
              const std::string& arch, int runs, const std::string& percentiles,
              const std::string& out_dir) {
    io::FileConfig fc = load_config(config_path);
    ModelConfig mcfg = apply_arch(fc.model, arch);
    TrainConfig tcfg = fc.train;

    LoadedData data = load_grids(data_dir);
    fs::path precip_path = fs::path(data_dir) / "precip.csv";
    PrecipSeries precip = io::read_precip_csv(precip_path);

    SweepConfig scfg;
    scfg.thresholds = parse_percentiles(percentiles);
    scfg.runs = runs;
    scfg.master_seed = tcfg.seed;

    fs::create_directories(out_dir);
    fs::path dir(out_dir);
    io::Manifest man;
    man.command = "sweep";
    man.master_seed = tcfg.seed;
    man.config_hash =
        fnv1a_hex(io::model_config_json(mcfg) + io::train_config_json(tcfg) + percentiles);
    man.created_at = io::timestamp_now();
    man.input_digests[precip_path.string()] = io::digest_file(precip_path);
    io::write_manifest(dir / "manifest.json", man);

    SweepResult result = percentile_sweep(
        [&](double m) {
            return build_dataset(data.slp, data.gph, label_extremes(precip, m));
        },
        [&](const Dataset& ds, std::uint64_t seed) {
            TrainConfig rcfg = tcfg;
            rcfg.seed = seed;
            TrainResult tr = train(mcfg, ds, rcfg);
            EvalResult ev = evaluate_model(tr.params, ds.test, {1.0, 1.0});
            return report_from_eval(ev, ds.test, ds.threshold_percentile);
        },
        scfg);

    std::string csv = io::ensemble_csv_header() + "\n";
    for (std::size_t t = 0; t < result.thresholds.size(); ++t) {
        int pct = static_cast<int>(std::llround(result.thresholds[t] * 100.0));
        fs::path ens_path = dir / ("ensemble_p" + std::to_string(pct) + ".json");
        io::write_file_atomic(ens_path, io::ensemble_report_json(result.ensembles[t]) + "\n");
        man.artifacts.push_back(ens_path.filename().string());
        csv += io::ensemble_csv_row(result.ensembles[t], result.positive_counts[t]) + "\n";
        std::cout << "p" << pct << ": positives " << result.positive_counts[t]
                  << ", mean test accuracy "
                  << (result.ensembles[t].accuracy.mean ? *result.ensembles[t].accuracy.mean
                                                        : -1.0)
                  << "\n";
    }
    io::write_file_atomic(dir / "summary.csv", csv);
    man.artifacts.push_back("summary.csv");

    man.status = "complete";
    man.completed_at = io::timestamp_now();
    io::write_manifest(dir / "manifest.json", man);
    std::cout << "wrote " << (dir / "summary.csv").string() << " ("
              << result.thresholds.size() << " thresholds x " << runs << " runs)\n";
    return 0;
}

int cmd_gradcheck(const std::string& config_path, std::uint64_t seed, double tolerance) {
    io::FileConfig fc = load_config(config_path);
    ModelConfig mcfg = fc.model;
    mcfg.validate();
    ModelParams params = init_params_for_gradcheck(mcfg, seed);

    Rng xrng(derive_seed(seed, 7));
    Tensor x({mcfg.input_h, mcfg.input_w, mcfg.input_d});
    for (double& v : x.data) v = xrng.normal();
    int label = 1;

    GradCheckReport report = grad_check(params, x, label, {1.0, 1.0}, 1e-5);
    for (const GradCheckEntry& e : report.entries) {
        std::cout << e.name << ": worst rel err " << e.max_rel_err << "\n";
    }
    std::cout << "total parameters: " << params.total_parameters() << "\n";
    if (!report.passed(tolerance)) {
        std::cout << "FAIL: " << report.worst_name << " rel err " << report.worst
                  << " >= tolerance " << tolerance << "\n";
        return 1;
    }
    std::cout << "PASS: worst rel err " << report.worst << " (" << report.worst_name
              << ") < tolerance " << tolerance << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"self-attention augmented convolutional classifier for extreme "
                 "precipitation days"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth", "generate a synthetic labeled grid dataset");
    std::uint64_t synth_seed = 42;
    int synth_days = 1000;
    double synth_signal = 2.0;
    std::string synth_out;
    synth->add_option("--seed", synth_seed, "master seed");
    synth->add_option("--days", synth_days, "number of days (>= 40)");
    synth->add_option("--signal", synth_signal, "planted anomaly amplitude");
    synth->add_option("--out", synth_out, "output directory")->required();

    auto* label = app.add_subcommand("label", "label extreme days from a precipitation CSV");
    std::string label_precip, label_out;
    double label_m = 0.95;
    label->add_option("--precip", label_precip, "precipitation CSV (date,value)")->required();
    label->add_option("--percentile", label_m, "threshold fraction in [0,1]")->required();
    label->add_option("--out", label_out, "output labels CSV")->required();

    auto* train_cmd = app.add_subcommand("train", "train a model on a labeled dataset");
    std::string train_data, train_config, train_arch = kArchSaconvnetHw, train_out;
    std::uint64_t train_seed = 0;
    bool train_seed_set = false;
    train_cmd->add_option("--data", train_data, "dataset directory")->required();
    train_cmd->add_option("--config", train_config, "JSON config file");
    train_cmd->add_option("--arch", train_arch, "convnet | saconvnet | saconvnet-hw");
    train_cmd->add_option("--seed", train_seed, "seed override")
        ->each([&](const std::string&) { train_seed_set = true; });
    train_cmd->add_option("--out", train_out, "output directory")->required();

    auto* eval_cmd = app.add_subcommand("evaluate", "evaluate a checkpoint on a dataset");
    std::string eval_ckpt, eval_data, eval_out;
    eval_cmd->add_option("--checkpoint", eval_ckpt, "checkpoint file")->required();
    eval_cmd->add_option("--data", eval_data, "dataset directory")->required();
    eval_cmd->add_option("--out", eval_out, "report JSON path")->required();

    auto* sweep_cmd = app.add_subcommand("sweep", "threshold sweep with repeated runs");
    std::string sweep_data, sweep_config, sweep_arch = kArchSaconvnetHw, sweep_out;
    std::string sweep_percentiles = "0.91:0.95";
    int sweep_runs = 5;
    sweep_cmd->add_option("--data", sweep_data, "dataset directory with precip.csv")
        ->required();
    sweep_cmd->add_option("--config", sweep_config, "JSON config file");
    sweep_cmd->add_option("--arch", sweep_arch, "convnet | saconvnet | saconvnet-hw");
    sweep_cmd->add_option("--runs", sweep_runs, "trainings per threshold");
    sweep_cmd->add_option("--percentiles", sweep_percentiles, "lo:hi (step 0.01) or list");
    sweep_cmd->add_option("--out", sweep_out, "output directory")->required();

    auto* grad_cmd = app.add_subcommand("gradcheck",
                                        "compare analytic gradients to finite differences");
    std::string grad_config;
    std::uint64_t grad_seed = 42;
    double grad_tol = 1e-4;
    grad_cmd->add_option("--config", grad_config, "JSON config file");
    grad_cmd->add_option("--seed", grad_seed, "model/sample seed");
    grad_cmd->add_option("--tolerance", grad_tol, "max relative error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (*synth) return cmd_synth(synth_seed, synth_days, synth_signal, synth_out);
        if (*label) return cmd_label(label_precip, label_m, label_out);
        if (*train_cmd) {
            return cmd_train(train_data, train_config, train_arch,
                             train_seed_set ? std::optional<std::uint64_t>(train_seed)
                                            : std::nullopt,
                             train_out);
        }
        if (*eval_cmd) return cmd_evaluate(eval_ckpt, eval_data, eval_out);
        if (*sweep_cmd) {
            return cmd_sweep(sweep_data, sweep_config, sweep_arch, sweep_runs,
                             sweep_percentiles, sweep_out);
        }
        if (*grad_cmd) return cmd_gradcheck(grad_config, grad_seed, grad_tol);
    } catch (const IoError& e) {
        std::cerr << "io error: " << e.what() << "\n";
        return 2;
    } catch (const ContractError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
