#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "logitgc/attacks.hpp"
#include "logitgc/base_model.hpp"
#include "logitgc/dataset.hpp"
#include "logitgc/eval.hpp"
#include "logitgc/head.hpp"
#include "logitgc/io_util.hpp"
#include "logitgc/logit_dataset.hpp"
#include "logitgc/rejection.hpp"
#include "logitgc/run_config.hpp"

namespace logitgc {

// End-to-end run: synthesize data, train and freeze the base, train the
// head on its logits, calibrate thresholds, evaluate every condition, and
// write all artifacts. Every output file is a pure function of the config,
// so identical runs produce byte-identical files.

struct PipelineCheck {
    std::string name;
    bool pass = false;
    std::string detail;
};

struct PipelineResult {
    RunConfig config;
    Dataset train, test;
    BaseTrainResult base;
    double base_test_accuracy = 0.0;
    HeadTrainResult head;
    double head_test_accuracy = 0.0;
    std::size_t head_param_count_analytic = 0;
    std::vector<std::pair<double, ThresholdTable>> thresholds;  // (percentile, table)
    std::vector<EvalReport> reports;
    // Base-model accuracy on each attacked test set, keyed by epsilon.
    std::vector<std::pair<double, double>> base_accuracy_under_attack;
    std::vector<PipelineCheck> checks;
    json summary;

    bool checks_passed() const {
        for (const auto& c : checks) {
            if (!c.pass) return false;
        }
        return true;
    }
};

namespace detail {

inline std::string percentile_slug(double p) {
    std::string s = format_full(p);
    for (auto& ch : s) {
        if (ch == '.') ch = '_';
    }
    return s;
}

inline std::string pct(double fraction) { return format_full(100.0 * fraction) + "%"; }

}  // namespace detail

// Analytic parameter count of the configured head architecture.
inline std::size_t head_param_count_formula(std::size_t n_classes, const LossConfig& cfg) {
    const std::size_t c = n_classes, d = cfg.rep_dim, h = cfg.hidden;
    const std::size_t encoder = (c * h + h) + (h * h + h) + (h * d + d);
    const std::size_t mi_net = ((c + d) * h + h) + (h + 1);
    const std::size_t gauss = 2 * c * d;
    return encoder + mi_net + gauss;
}

inline PipelineResult run_pipeline(const RunConfig& cfg, const std::filesystem::path& out_dir) {
    cfg.validate();
    std::filesystem::create_directories(out_dir);

    PipelineResult result;
    result.config = cfg;

    // --- data ---
    Dataset full = make_clusters(cfg.n_classes, cfg.per_class_train + cfg.per_class_test, cfg.input_dim,
                                 cfg.spread, derive_seed(cfg.seed, "data"));
    auto [train, test] = split_per_class(full, cfg.per_class_train);
    result.train = std::move(train);
    result.test = std::move(test);

    std::vector<std::pair<std::string, Dataset>> ood_sets;
    for (const auto& kind : cfg.ood_kinds) {
        ood_sets.emplace_back(kind, make_ood(kind, cfg.ood_n, cfg.input_dim,
                                             derive_seed(cfg.seed, "ood-" + kind),
                                             result.train.class_means));
    }

    // --- base classifier ---
    BaseTrainConfig base_cfg = cfg.base;
    base_cfg.seed = derive_seed(cfg.seed, "base");
    result.base = train_base(result.train, base_cfg);
    const BaseModel& base = result.base.model;
    result.base_test_accuracy = accuracy(base, result.test);

    LogitDataset train_logits = export_logits(base, result.train, "base_model(train)");
    train_logits.seed = cfg.seed;
    LogitDataset test_logits = export_logits(base, result.test, "base_model(test)");
    test_logits.seed = cfg.seed;

    // --- head ---
    // Calibration defaults to the training split itself; a positive holdout
    // fraction instead reserves that share of each class for calibration.
    LogitDataset head_train_logits = train_logits;
    LogitDataset calibration_logits = train_logits;
    if (cfg.calibration_holdout_fraction > 0.0) {
        auto [main_part, holdout] = split_logit_dataset(train_logits, cfg.calibration_holdout_fraction);
        head_train_logits = std::move(main_part);
        calibration_logits = std::move(holdout);
    }
    LossConfig head_cfg = cfg.head;
    head_cfg.seed = derive_seed(cfg.seed, "head");
    result.head = train_head(head_train_logits, head_cfg);
    const Head& head = result.head.head;
    result.head_test_accuracy = head_accuracy(head, test_logits);
    result.head_param_count_analytic = head_param_count_formula(cfg.n_classes, head_cfg);

    // --- thresholds ---
    for (double p : cfg.percentiles) {
        result.thresholds.emplace_back(p, calibrate(head, calibration_logits, p));
    }

    // --- condition datasets (shared across percentiles) ---
    std::vector<std::pair<int, Dataset>> corrupted_sets;
    for (int severity : cfg.severities) {
        corrupted_sets.emplace_back(
            severity, corrupt_gaussian(result.test, severity,
                                       derive_seed(cfg.seed, "corrupt-" + std::to_string(severity))));
    }
    std::vector<std::pair<double, Dataset>> adversarial_sets;
    bool budget_ok = true;
    std::string budget_detail = "all examples within budget and [0,1]";
    for (double eps : cfg.attack_epsilons) {
        AttackConfig attack = cfg.attack;
        attack.epsilon = eps;
        const Head* attacked_head = attack.target == "head_conditional" ? &head : nullptr;
        Dataset adv = attack_dataset(base, attacked_head, result.test, attack);
        for (std::size_t i = 0; i < adv.size() && budget_ok; ++i) {
            for (std::size_t k = 0; k < cfg.input_dim; ++k) {
                const double delta = std::abs(adv.examples[i].input[k] - result.test.examples[i].input[k]);
                const double v = adv.examples[i].input[k];
                if (delta > eps + 1e-12 || v < 0.0 || v > 1.0) {
                    budget_ok = false;
                    budget_detail = "violation at eps " + format_full(eps) + " sample " + std::to_string(i);
                    break;
                }
            }
        }
        result.base_accuracy_under_attack.emplace_back(eps, accuracy(base, adv));
        adversarial_sets.emplace_back(eps, std::move(adv));
    }

    // --- evaluation ---
    std::vector<LogitDataset> corrupted_logits;
    for (const auto& [severity, ds] : corrupted_sets) {
        (void)severity;
        corrupted_logits.push_back(export_logits(base, ds));
    }
    std::vector<LogitDataset> adversarial_logits;
    for (const auto& [eps, ds] : adversarial_sets) {
        (void)eps;
        adversarial_logits.push_back(export_logits(base, ds));
    }

    for (const auto& [p, table] : result.thresholds) {
        (void)p;
        result.reports.push_back(evaluate(head, table, test_logits, "clean"));
        std::vector<EvalReport> severity_reports;
        for (std::size_t i = 0; i < corrupted_sets.size(); ++i) {
            severity_reports.push_back(evaluate(head, table, corrupted_logits[i],
                                                corrupted_sets[i].second.provenance.describe()));
        }
        if (!severity_reports.empty()) {
            severity_reports.push_back(mean_report(severity_reports, "corrupted(mean)"));
        }
        for (auto& r : severity_reports) result.reports.push_back(std::move(r));
        for (std::size_t i = 0; i < adversarial_sets.size(); ++i) {
            result.reports.push_back(evaluate(head, table, adversarial_logits[i],
                                              adversarial_sets[i].second.provenance.describe()));
        }
        for (const auto& [kind, ds] : ood_sets) {
            (void)kind;
            result.reports.push_back(evaluate_ood(head, table, base, ds));
        }
    }

    // --- checks (the runtime-verifiable acceptance properties) ---
    std::optional<double> shifted_detection;
    auto add_check = [&result](const std::string& name, bool pass, std::string detail) {
        result.checks.push_back(PipelineCheck{name, pass, std::move(detail)});
    };

    add_check("base_accuracy", result.base_test_accuracy >= 0.95,
              "clean base test accuracy " + detail::pct(result.base_test_accuracy) + " (need >= 95%)");

    const double inherit_gap = std::abs(result.head_test_accuracy - result.base_test_accuracy);
    add_check("inheritance", inherit_gap <= 0.015,
              "|head - base| = " + detail::pct(inherit_gap) + " (need <= 1.5 points); head " +
                  detail::pct(result.head_test_accuracy) + ", base " + detail::pct(result.base_test_accuracy));

    {
        bool band_ok = true;
        std::string band_detail = "rejected fraction of correct calibration samples within band per class";
        for (const auto& [p, table] : result.thresholds) {
            const auto pct = per_class_rejected_pct_of_correct(head, table, calibration_logits);
            for (std::size_t c = 0; c < pct.size(); ++c) {
                if (pct[c] < std::max(0.0, p - 1.0) - 1e-9 || pct[c] > p + 1.0 + 1e-9) {
                    band_ok = false;
                    band_detail = "class " + std::to_string(c) + " at percentile " + format_full(p) +
                                  ": " + format_full(pct[c]) + "% outside [" +
                                  format_full(std::max(0.0, p - 1.0)) + "%, " + format_full(p + 1.0) + "%]";
                }
            }
        }
        add_check("calibration_band", band_ok, band_detail);
    }

    {
        bool monotone = true;
        std::string detail_str = "rejection sets nested across percentiles on the full test set";
        std::vector<std::pair<double, const ThresholdTable*>> ordered;
        for (const auto& [p, table] : result.thresholds) ordered.emplace_back(p, &table);
        std::sort(ordered.begin(), ordered.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        for (std::size_t i = 0; i + 1 < ordered.size() && monotone; ++i) {
            for (const auto& row : test_logits.rows) {
                const bool lo = decide(head, *ordered[i].second, row.logits).rejected;
                const bool hi = decide(head, *ordered[i + 1].second, row.logits).rejected;
                if (lo && !hi) {
                    monotone = false;
                    detail_str = "sample rejected at percentile " + format_full(ordered[i].first) +
                                 " but kept at " + format_full(ordered[i + 1].first);
                    break;
                }
            }
        }
        add_check("rejection_monotonicity", monotone, detail_str);
    }

    {
        // Trend checks read the lowest configured percentile's reports.
        const double p_low = *std::min_element(cfg.percentiles.begin(), cfg.percentiles.end());
        std::vector<const EvalReport*> severity_rows;
        std::vector<const EvalReport*> adv_rows;
        const EvalReport* uniform_ood = nullptr;
        const EvalReport* shifted_ood = nullptr;
        for (const auto& r : result.reports) {
            if (r.percentile != p_low) continue;
            if (r.condition.starts_with("corrupted(") && r.condition != "corrupted(mean)") {
                severity_rows.push_back(&r);
            } else if (r.condition.starts_with("adversarial(")) {
                adv_rows.push_back(&r);
            } else if (r.condition == "ood(uniform)") {
                uniform_ood = &r;
            } else if (r.condition == "ood(shifted_clusters)") {
                shifted_ood = &r;
            }
        }

        bool trend_ok = !severity_rows.empty();
        std::string trend_detail = trend_ok ? "" : "no corruption reports";
        for (std::size_t i = 0; i + 1 < severity_rows.size() && trend_ok; ++i) {
            if (!(*severity_rows[i + 1]->acc_without_rejection < *severity_rows[i]->acc_without_rejection)) {
                trend_ok = false;
                trend_detail = "accuracy not strictly decreasing at severity " + std::to_string(i + 2);
            }
            if (!(severity_rows[i + 1]->rejection_rate > severity_rows[i]->rejection_rate)) {
                trend_ok = false;
                trend_detail = "rejection not strictly increasing at severity " + std::to_string(i + 2);
            }
        }
        for (std::size_t i = 0; i < severity_rows.size() && trend_ok; ++i) {
            if (!severity_rows[i]->acc_on_left.has_value() ||
                !(*severity_rows[i]->acc_on_left >= *severity_rows[i]->acc_without_rejection)) {
                trend_ok = false;
                trend_detail = "left-set accuracy below overall accuracy at severity " + std::to_string(i + 1);
            }
        }
        if (trend_ok && !severity_rows.empty()) {
            const auto& worst = *severity_rows.back();
            const double improvement = *worst.acc_on_left - *worst.acc_without_rejection;
            if (improvement < 0.05) {
                trend_ok = false;
                trend_detail = "severity-5 improvement " + detail::pct(improvement) + " < 5 points";
            } else {
                trend_detail = "monotone degradation; severity-5 improvement " + detail::pct(improvement);
            }
        }
        add_check("corruption_trend", trend_ok, trend_detail);

        bool adv_ok = !adv_rows.empty();
        std::string adv_detail = adv_ok ? "" : "no adversarial reports";
        for (std::size_t i = 0; i + 1 < adv_rows.size() && adv_ok; ++i) {
            if (adv_rows[i + 1]->rejection_rate < adv_rows[i]->rejection_rate - 1e-12) {
                adv_ok = false;
                adv_detail = "rejection rate decreased along the epsilon grid";
            }
        }
        if (adv_ok && !adv_rows.empty()) {
            const double final_rejection = adv_rows.back()->rejection_rate;
            const double final_base_acc = result.base_accuracy_under_attack.back().second;
            if (final_rejection < 0.60) {
                adv_ok = false;
                adv_detail = "rejection at largest epsilon " + detail::pct(final_rejection) + " < 60%";
            } else if (final_base_acc >= 0.20) {
                adv_ok = false;
                adv_detail = "base accuracy at largest epsilon " + detail::pct(final_base_acc) + " >= 20%";
            } else {
                adv_detail = "rejection at largest epsilon " + detail::pct(final_rejection) +
                             ", base accuracy " + detail::pct(final_base_acc);
            }
        }
        add_check("adversarial_trend", adv_ok, adv_detail);
        add_check("adversarial_budget", budget_ok, budget_detail);

        const bool uniform_ok = uniform_ood != nullptr && uniform_ood->rejection_rate >= 0.90;
        add_check("ood_uniform", uniform_ok,
                  uniform_ood ? "uniform-noise detection " + detail::pct(uniform_ood->rejection_rate) +
                                    " (need >= 90%)"
                              : "no uniform OOD report");
        if (shifted_ood != nullptr) {
            // Reported, not gated: shifted clusters are the harder source.
            shifted_detection = shifted_ood->rejection_rate;
        }
    }

    add_check("param_overhead",
              result.head.head.param_count() == result.head_param_count_analytic,
              "head parameters " + std::to_string(result.head.head.param_count()) + ", analytic " +
                  std::to_string(result.head_param_count_analytic));

    // --- summary ---
    result.summary["format_version"] = 1;
    result.summary["base_param_count"] = base.param_count();
    result.summary["head_param_count"] = result.head.head.param_count();
    result.summary["head_param_count_analytic"] = result.head_param_count_analytic;
    result.summary["overhead_ratio"] = static_cast<double>(result.head.head.param_count()) /
                                       static_cast<double>(base.param_count());
    result.summary["base_train_accuracy"] = result.base.train_accuracy;
    result.summary["base_test_accuracy"] = result.base_test_accuracy;
    result.summary["head_test_accuracy"] = result.head_test_accuracy;
    if (shifted_detection.has_value()) {
        result.summary["shifted_cluster_detection_1st_pct"] = *shifted_detection;
    }
    {
        json acc = json::object();
        for (const auto& [eps, a] : result.base_accuracy_under_attack) acc[format_full(eps)] = a;
        result.summary["base_accuracy_under_attack"] = std::move(acc);
    }
    {
        json checks = json::array();
        for (const auto& c : result.checks) {
            checks.push_back(json{{"name", c.name}, {"pass", c.pass}, {"detail", c.detail}});
        }
        result.summary["checks"] = std::move(checks);
        result.summary["all_checks_passed"] = result.checks_passed();
    }

    // --- artifacts ---
    write_json_file(out_dir / "config.json", cfg.to_json());
    save_dataset(result.train, out_dir / "data" / "train.csv");
    save_dataset(result.test, out_dir / "data" / "test.csv");
    for (const auto& [kind, ds] : ood_sets) {
        save_dataset(ds, out_dir / "data" / ("ood_" + kind + ".csv"));
    }
    base.save(out_dir / "base.ckpt.json");
    save_logit_dataset(train_logits, out_dir / "logits_train.csv");
    save_logit_dataset(test_logits, out_dir / "logits_test.csv");
    result.head.head.save(out_dir / "head.ckpt.json");
    {
        json trace;
        trace["format_version"] = 1;
        trace["epochs"] = json::array();
        for (std::size_t i = 0; i < result.head.epoch_trace.size(); ++i) {
            const auto& e = result.head.epoch_trace[i];
            trace["epochs"].push_back(json{{"epoch", i},
                                           {"j_mi", e.j_mi},
                                           {"j_nll", e.j_nll},
                                           {"j_lm", e.j_lm},
                                           {"total", e.total}});
        }
        write_json_file(out_dir / "head_trace.json", trace);
    }
    for (const auto& [p, table] : result.thresholds) {
        table.save(out_dir / ("thresholds_p" + detail::percentile_slug(p) + ".json"));
    }
    export_report(result.reports, out_dir / "reports.json", "json");
    export_report(result.reports, out_dir / "reports.csv", "csv");
    write_json_file(out_dir / "summary.json", result.summary);

    return result;
}

}  // namespace logitgc
