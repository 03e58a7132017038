// Command-line front end: generate data, train the base classifier and the
// generative head, calibrate rejection thresholds, evaluate every condition,
// or run the whole pipeline end to end.
//
// Exit codes: 0 success, 1 usage/config error, 2 runtime/numerical error,
// 3 acceptance-check failure (pipeline --check).

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "logitgc/eval.hpp"
#include "logitgc/parallel.hpp"
#include "logitgc/pipeline.hpp"

namespace fs = std::filesystem;
using namespace logitgc;

namespace {

// LOGITGC_OUT overrides any --out flag; LOGITGC_THREADS sets scoring threads.
fs::path resolve_out(const fs::path& flag_value) {
    if (const char* env = std::getenv("LOGITGC_OUT")) return fs::path(env);
    return flag_value;
}

void apply_thread_env() {
    if (const char* env = std::getenv("LOGITGC_THREADS")) {
        try {
            set_worker_threads(std::stoul(env));
        } catch (const std::exception&) {
            throw ConfigError(std::string("LOGITGC_THREADS: invalid value '") + env + "'");
        }
    }
}

void echo_config(const fs::path& config_path, const RunConfig& cfg, const fs::path& out_dir) {
    fs::create_directories(out_dir);
    if (!config_path.empty()) {
        // Verbatim copy of whatever the user wrote.
        write_text_file(out_dir / "config.echo", read_text_file(config_path));
    }
    write_json_file(out_dir / "config.json", cfg.to_json());
}

RunConfig load_config(const fs::path& path) {
    if (path.empty()) return RunConfig{};
    RunConfig cfg = RunConfig::from_file(path);
    cfg.validate();
    return cfg;
}

int run_gen_data(const fs::path& config_path, const fs::path& out_flag) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = resolve_out(out_flag);
    echo_config(config_path, cfg, out);

    Dataset full = make_clusters(cfg.n_classes, cfg.per_class_train + cfg.per_class_test, cfg.input_dim,
                                 cfg.spread, derive_seed(cfg.seed, "data"));
    auto [train, test] = split_per_class(full, cfg.per_class_train);
    save_dataset(train, out / "train.csv");
    save_dataset(test, out / "test.csv");
    for (int severity : cfg.severities) {
        Dataset corrupted = corrupt_gaussian(
            test, severity, derive_seed(cfg.seed, "corrupt-" + std::to_string(severity)));
        save_dataset(corrupted, out / ("corrupted_s" + std::to_string(severity) + ".csv"));
    }
    for (const auto& kind : cfg.ood_kinds) {
        Dataset ood = make_ood(kind, cfg.ood_n, cfg.input_dim, derive_seed(cfg.seed, "ood-" + kind),
                               train.class_means);
        save_dataset(ood, out / ("ood_" + kind + ".csv"));
    }
    std::cout << "wrote datasets to " << out << "\n";
    return 0;
}

int run_train_base(const fs::path& config_path, const fs::path& data_dir, const fs::path& out_flag) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = resolve_out(out_flag);
    Dataset train = load_dataset(data_dir / "train.csv");

    BaseTrainConfig base_cfg = cfg.base;
    base_cfg.seed = derive_seed(cfg.seed, "base");
    BaseTrainResult result = train_base(train, base_cfg);
    fs::create_directories(out);
    result.model.save(out / "base.ckpt.json");

    json summary;
    summary["format_version"] = 1;
    summary["train_accuracy"] = result.train_accuracy;
    summary["param_count"] = result.model.param_count();
    summary["epoch_loss"] = result.epoch_loss;
    const fs::path test_path = data_dir / "test.csv";
    if (fs::exists(test_path)) {
        summary["test_accuracy"] = accuracy(result.model, load_dataset(test_path));
    }
    write_json_file(out / "base_summary.json", summary);
    std::cout << "base train accuracy " << format_full(100.0 * result.train_accuracy) << "%\n";
    return 0;
}

int run_export_logits(const fs::path& base_path, const fs::path& data_path, const fs::path& out_path,
                      const std::string& source) {
    BaseModel base = BaseModel::load(base_path);
    Dataset data = load_dataset(data_path);
    LogitDataset logits = export_logits(base, data, source);
    save_logit_dataset(logits, resolve_out(out_path));
    std::cout << "wrote " << logits.size() << " logit rows\n";
    return 0;
}

int run_train_head(const fs::path& config_path, const fs::path& logits_path, const fs::path& base_path,
                   const fs::path& data_path, const fs::path& out_flag) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = resolve_out(out_flag);
    if (logits_path.empty() == (base_path.empty() || data_path.empty())) {
        throw ConfigError("train-head: pass either --logits, or --base together with --data");
    }
    LossConfig head_cfg = cfg.head;
    head_cfg.seed = derive_seed(cfg.seed, "head");

    HeadTrainResult result = logits_path.empty()
                                 ? train_head(BaseModel::load(base_path), load_dataset(data_path), head_cfg)
                                 : train_head(load_logit_dataset(logits_path), head_cfg);
    fs::create_directories(out);
    result.head.save(out / "head.ckpt.json");
    json trace;
    trace["format_version"] = 1;
    trace["epochs"] = json::array();
    for (std::size_t i = 0; i < result.epoch_trace.size(); ++i) {
        const auto& e = result.epoch_trace[i];
        trace["epochs"].push_back(
            json{{"epoch", i}, {"j_mi", e.j_mi}, {"j_nll", e.j_nll}, {"j_lm", e.j_lm}, {"total", e.total}});
    }
    write_json_file(out / "head_trace.json", trace);
    std::cout << "head parameters " << result.head.param_count() << ", final loss "
              << format_full(result.epoch_trace.back().total) << "\n";
    return 0;
}

int run_calibrate(const fs::path& head_path, const fs::path& logits_path, double percentile,
                  const fs::path& out_path) {
    Head head = Head::load(head_path);
    LogitDataset logits = load_logit_dataset(logits_path);
    ThresholdTable table = calibrate(head, logits, percentile);
    table.save(resolve_out(out_path));
    std::cout << "calibrated " << table.n_classes() << " thresholds at percentile "
              << format_full(percentile) << "\n";
    return 0;
}

struct EvalArgs {
    fs::path head_path, thresholds_path, base_path, data_path, out_path, config_path;
    std::string format = "json";
};

int run_eval(const std::string& mode, const EvalArgs& args) {
    Head head = Head::load(args.head_path);
    ThresholdTable table = ThresholdTable::load(args.thresholds_path);
    BaseModel base = BaseModel::load(args.base_path);
    Dataset data = load_dataset(args.data_path);

    std::vector<EvalReport> reports;
    if (mode == "clean") {
        reports.push_back(evaluate(head, table, base, data));
    } else if (mode == "corrupt") {
        const RunConfig cfg = load_config(args.config_path);
        reports = evaluate_severity_sweep(head, table, base, data, cfg.severities, cfg.seed);
    } else if (mode == "adv") {
        const RunConfig cfg = load_config(args.config_path);
        reports = evaluate_adversarial_sweep(head, table, base, data, cfg.attack_epsilons, cfg.attack);
    } else if (mode == "ood") {
        reports.push_back(evaluate_ood(head, table, base, data));
    } else {
        throw ConfigError("eval: unknown mode '" + mode + "'");
    }
    export_report(reports, resolve_out(args.out_path), args.format);
    for (const auto& r : reports) {
        std::cout << r.condition << ": rejection " << format_full(100.0 * r.rejection_rate) << "%";
        if (r.acc_on_left.has_value()) {
            std::cout << ", accuracy on left " << format_full(100.0 * *r.acc_on_left) << "%";
        }
        std::cout << "\n";
    }
    return 0;
}

int run_pipeline_cmd(const fs::path& config_path, const fs::path& out_flag, bool check) {
    const RunConfig cfg = load_config(config_path);
    const fs::path out = resolve_out(out_flag);
    echo_config(config_path, cfg, out);

    PipelineResult result = run_pipeline(cfg, out);

    std::cout << "base parameters " << result.base.model.param_count() << ", head parameters "
              << result.head.head.param_count() << " (overhead ratio "
              << format_full(static_cast<double>(result.head.head.param_count()) /
                             static_cast<double>(result.base.model.param_count()))
              << ")\n";
    std::cout << "base test accuracy " << format_full(100.0 * result.base_test_accuracy)
              << "%, head test accuracy " << format_full(100.0 * result.head_test_accuracy) << "%\n";
    for (const auto& c : result.checks) {
        std::cout << (c.pass ? "[PASS] " : "[FAIL] ") << c.name << ": " << c.detail << "\n";
    }
    std::cout << "reports written to " << (out / "reports.json") << "\n";
    if (check && !result.checks_passed()) {
        std::cerr << "acceptance checks failed\n";
        return 3;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Generative classifier with rejection derived from a frozen classifier's logits"};
    app.require_subcommand(1);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate clean, corrupted, and OOD datasets");
    fs::path gen_config, gen_out;
    gen->add_option("--config", gen_config, "Run config (key=value or JSON)")->check(CLI::ExistingFile);
    gen->add_option("--out", gen_out, "Output directory")->required();

    // train-base
    auto* tb = app.add_subcommand("train-base", "Train and freeze the base classifier");
    fs::path tb_config, tb_data, tb_out;
    tb->add_option("--config", tb_config, "Run config")->check(CLI::ExistingFile);
    tb->add_option("--data", tb_data, "Directory holding train.csv (and optionally test.csv)")->required();
    tb->add_option("--out", tb_out, "Output directory")->required();

    // export-logits
    auto* el = app.add_subcommand("export-logits", "Write a logit dataset for a frozen base model");
    fs::path el_base, el_data, el_out;
    std::string el_source = "base_model";
    el->add_option("--base", el_base, "Base checkpoint")->required()->check(CLI::ExistingFile);
    el->add_option("--data", el_data, "Dataset CSV")->required()->check(CLI::ExistingFile);
    el->add_option("--out", el_out, "Output logit CSV path")->required();
    el->add_option("--source", el_source, "Source tag stored in the sidecar metadata");

    // train-head
    auto* th = app.add_subcommand("train-head", "Train the generative head over frozen logits");
    fs::path th_config, th_logits, th_base, th_data, th_out;
    th->add_option("--config", th_config, "Run config")->check(CLI::ExistingFile);
    th->add_option("--logits", th_logits, "Logit dataset CSV")->check(CLI::ExistingFile);
    th->add_option("--base", th_base, "Base checkpoint (with --data)")->check(CLI::ExistingFile);
    th->add_option("--data", th_data, "Dataset CSV (with --base)")->check(CLI::ExistingFile);
    th->add_option("--out", th_out, "Output directory")->required();

    // calibrate
    auto* cal = app.add_subcommand("calibrate", "Calibrate per-class rejection thresholds");
    fs::path cal_head, cal_logits, cal_out;
    double cal_percentile = 1.0;
    cal->add_option("--head", cal_head, "Head checkpoint")->required()->check(CLI::ExistingFile);
    cal->add_option("--logits", cal_logits, "Labeled logit dataset CSV")->required()->check(CLI::ExistingFile);
    cal->add_option("--percentile", cal_percentile, "Percentile in (0, 100]")->required();
    cal->add_option("--out", cal_out, "Output threshold JSON path")->required();

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate rejection behavior on a dataset");
    std::string ev_mode;
    EvalArgs ev_args;
    ev->add_option("mode", ev_mode, "clean | corrupt | adv | ood")->required();
    ev->add_option("--head", ev_args.head_path, "Head checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--thresholds", ev_args.thresholds_path, "Threshold JSON")->required()->check(CLI::ExistingFile);
    ev->add_option("--base", ev_args.base_path, "Base checkpoint")->required()->check(CLI::ExistingFile);
    ev->add_option("--data", ev_args.data_path, "Dataset CSV")->required()->check(CLI::ExistingFile);
    ev->add_option("--config", ev_args.config_path, "Run config (seeds and grids for corrupt/adv)")
        ->check(CLI::ExistingFile);
    ev->add_option("--out", ev_args.out_path, "Output report path")->required();
    ev->add_option("--format", ev_args.format, "json or csv")->check(CLI::IsMember({"json", "csv"}));

    // pipeline
    auto* pl = app.add_subcommand("pipeline", "Run the full pipeline end to end");
    fs::path pl_config, pl_out;
    bool pl_check = false;
    pl->add_option("--config", pl_config, "Run config")->check(CLI::ExistingFile);
    pl->add_option("--out", pl_out, "Output directory")->required();
    pl->add_flag("--check", pl_check, "Exit nonzero unless every acceptance property holds");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        apply_thread_env();
        if (gen->parsed()) return run_gen_data(gen_config, gen_out);
        if (tb->parsed()) return run_train_base(tb_config, tb_data, tb_out);
        if (el->parsed()) return run_export_logits(el_base, el_data, el_out, el_source);
        if (th->parsed()) return run_train_head(th_config, th_logits, th_base, th_data, th_out);
        if (cal->parsed()) return run_calibrate(cal_head, cal_logits, cal_percentile, cal_out);
        if (ev->parsed()) return run_eval(ev_mode, ev_args);
        if (pl->parsed()) return run_pipeline_cmd(pl_config, pl_out, pl_check);
        std::cerr << "no subcommand\n";
        return 1;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 2;
    }
}
