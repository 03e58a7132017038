#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "logitgc/attacks.hpp"
#include "logitgc/base_model.hpp"
#include "logitgc/dataset.hpp"
#include "logitgc/head.hpp"
#include "logitgc/io_util.hpp"
#include "logitgc/parallel.hpp"
#include "logitgc/rejection.hpp"

namespace logitgc {

// The three quantities every results table reports: accuracy without
// rejection, rejection rate, and accuracy on the left (non-rejected) set.

struct EvalReport {
    std::string condition;  // clean | corrupted(s) | adversarial(...) | ood(kind) | *(mean)
    double percentile = 0.0;
    // Counts are doubles so that mean rows over severities stay representable.
    double n_total = 0.0;
    double n_rejected = 0.0;
    double n_left = 0.0;
    double n_correct_left = 0.0;
    std::optional<double> acc_without_rejection;
    double rejection_rate = 0.0;
    std::optional<double> acc_on_left;  // null when n_left == 0 or unlabeled

    // Count identities; holds for directly evaluated reports (not mean rows,
    // whose rate fields are averages rather than ratios of averaged counts).
    void validate() const {
        if (n_left != n_total - n_rejected) {
            throw std::logic_error("EvalReport: n_left != n_total - n_rejected");
        }
        if (n_total > 0.0 && rejection_rate != n_rejected / n_total) {
            throw std::logic_error("EvalReport: rejection_rate != n_rejected / n_total");
        }
        if (acc_on_left.has_value()) {
            if (n_left == 0.0) throw std::logic_error("EvalReport: acc_on_left set with empty left set");
            if (*acc_on_left != n_correct_left / n_left) {
                throw std::logic_error("EvalReport: acc_on_left != n_correct_left / n_left");
            }
        }
    }

    bool operator==(const EvalReport&) const = default;

    json to_json() const {
        json j;
        j["condition"] = condition;
        j["percentile"] = percentile;
        j["n_total"] = n_total;
        j["n_rejected"] = n_rejected;
        j["n_left"] = n_left;
        j["n_correct_left"] = n_correct_left;
        j["acc_without_rejection"] = acc_without_rejection.has_value() ? json(*acc_without_rejection) : json(nullptr);
        j["rejection_rate"] = rejection_rate;
        j["acc_on_left"] = acc_on_left.has_value() ? json(*acc_on_left) : json(nullptr);
        return j;
    }

    static EvalReport from_json(const json& j) {
        EvalReport r;
        r.condition = j.at("condition").get<std::string>();
        r.percentile = j.at("percentile").get<double>();
        r.n_total = j.at("n_total").get<double>();
        r.n_rejected = j.at("n_rejected").get<double>();
        r.n_left = j.at("n_left").get<double>();
        r.n_correct_left = j.at("n_correct_left").get<double>();
        if (!j.at("acc_without_rejection").is_null()) {
            r.acc_without_rejection = j["acc_without_rejection"].get<double>();
        }
        r.rejection_rate = j.at("rejection_rate").get<double>();
        if (!j.at("acc_on_left").is_null()) r.acc_on_left = j["acc_on_left"].get<double>();
        return r;
    }
};

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// Applies the decision function to every labeled row and tallies the counts.
// Scoring is pure per row and runs on the configured worker threads; the
// tally is sequential, so reports are identical for any thread count.
inline EvalReport evaluate(const Head& head, const ThresholdTable& thresholds,
                           const LogitDataset& data, const std::string& condition) {
    if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
    EvalReport r;
    r.condition = condition;
    r.percentile = thresholds.percentile;
    for (const auto& row : data.rows) {
        if (row.label == kNoLabel) {
            throw std::invalid_argument("evaluate: unlabeled row; use evaluate_ood for OOD data");
        }
    }
    std::vector<Decision> decisions(data.size());
    parallel_for(data.size(),
                 [&](std::size_t i) { decisions[i] = decide(head, thresholds, data.rows[i].logits); });
    double correct_total = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const Decision& d = decisions[i];
        r.n_total += 1.0;
        const bool correct = d.predicted == data.rows[i].label;
        if (correct) correct_total += 1.0;
        if (d.rejected) {
            r.n_rejected += 1.0;
        } else if (correct) {
            r.n_correct_left += 1.0;
        }
    }
    r.n_left = r.n_total - r.n_rejected;
    r.rejection_rate = r.n_rejected / r.n_total;
    r.acc_without_rejection = correct_total / r.n_total;
    if (r.n_left > 0.0) {
        r.acc_on_left = r.n_correct_left / r.n_left;
    }
    r.validate();
    return r;
}

inline EvalReport evaluate(const Head& head, const ThresholdTable& thresholds, const BaseModel& base,
                           const Dataset& data) {
    if (!data.has_labels()) {
        throw std::invalid_argument("evaluate: dataset has no labels; use evaluate_ood");
    }
    return evaluate(head, thresholds, export_logits(base, data), data.provenance.describe());
}

// Rejection rate doubles as the detection rate; accuracy fields stay null.
inline EvalReport evaluate_ood(const Head& head, const ThresholdTable& thresholds, const BaseModel& base,
                               const Dataset& ood) {
    if (ood.provenance.kind != ProvenanceKind::Ood) {
        throw std::invalid_argument("evaluate_ood: dataset provenance is " + ood.provenance.describe() +
                                    ", expected ood");
    }
    if (ood.size() == 0) throw std::invalid_argument("evaluate_ood: empty dataset");
    EvalReport r;
    r.condition = ood.provenance.describe();
    r.percentile = thresholds.percentile;
    std::vector<char> rejected(ood.size());
    parallel_for(ood.size(), [&](std::size_t i) {
        rejected[i] = decide(head, thresholds, base.logits(ood.examples[i].input)).rejected ? 1 : 0;
    });
    for (std::size_t i = 0; i < ood.size(); ++i) {
        r.n_total += 1.0;
        if (rejected[i]) r.n_rejected += 1.0;
    }
    r.n_left = r.n_total - r.n_rejected;
    r.rejection_rate = r.n_rejected / r.n_total;
    r.validate();
    return r;
}

// Unweighted arithmetic mean of every numeric field. Accuracy means are null
// if any constituent is null.
inline EvalReport mean_report(const std::vector<EvalReport>& reports, const std::string& condition) {
    if (reports.empty()) throw std::invalid_argument("mean_report: no reports");
    EvalReport m;
    m.condition = condition;
    m.percentile = reports.front().percentile;
    bool any_null_acc = false, any_null_left = false;
    double acc_sum = 0.0, left_sum = 0.0;
    for (const auto& r : reports) {
        m.n_total += r.n_total;
        m.n_rejected += r.n_rejected;
        m.n_left += r.n_left;
        m.n_correct_left += r.n_correct_left;
        m.rejection_rate += r.rejection_rate;
        if (r.acc_without_rejection.has_value()) acc_sum += *r.acc_without_rejection; else any_null_acc = true;
        if (r.acc_on_left.has_value()) left_sum += *r.acc_on_left; else any_null_left = true;
    }
    const double n = static_cast<double>(reports.size());
    m.n_total /= n;
    m.n_rejected /= n;
    m.n_left /= n;
    m.n_correct_left /= n;
    m.rejection_rate /= n;
    if (!any_null_acc) m.acc_without_rejection = acc_sum / n;
    if (!any_null_left) m.acc_on_left = left_sum / n;
    return m;
}

// One report per severity level plus the mean row over severities.
inline std::vector<EvalReport> evaluate_severity_sweep(const Head& head, const ThresholdTable& thresholds,
                                                       const BaseModel& base, const Dataset& clean_test,
                                                       const std::vector<int>& severities,
                                                       std::uint64_t seed) {
    std::vector<EvalReport> reports;
    for (int severity : severities) {
        Dataset corrupted = corrupt_gaussian(clean_test, severity, derive_seed(seed, "corrupt-" + std::to_string(severity)));
        reports.push_back(evaluate(head, thresholds, base, corrupted));
    }
    reports.push_back(mean_report(reports, "corrupted(mean)"));
    return reports;
}

// One report per epsilon. Epsilon 0 degenerates to the clean evaluation.
inline std::vector<EvalReport> evaluate_adversarial_sweep(const Head& head, const ThresholdTable& thresholds,
                                                          const BaseModel& base, const Dataset& clean_test,
                                                          const std::vector<double>& epsilons,
                                                          AttackConfig proto) {
    std::vector<EvalReport> reports;
    for (double eps : epsilons) {
        AttackConfig cfg = proto;
        cfg.epsilon = eps;
        const Head* attacked_head = cfg.target == "head_conditional" ? &head : nullptr;
        Dataset adv = attack_dataset(base, attacked_head, clean_test, cfg);
        reports.push_back(evaluate(head, thresholds, base, adv));
    }
    return reports;
}

// ---------------------------------------------------------------------------
// Report files
// ---------------------------------------------------------------------------

inline void export_report(const std::vector<EvalReport>& reports, const std::filesystem::path& path,
                          const std::string& format) {
    if (format == "json") {
        json j;
        j["format_version"] = 1;
        j["reports"] = json::array();
        for (const auto& r : reports) j["reports"].push_back(r.to_json());
        write_json_file(path, j);
        return;
    }
    if (format == "csv") {
        std::ostringstream os;
        os << "condition,percentile,n_total,n_rejected,acc_without_rejection,rejection_rate,acc_on_left\n";
        for (const auto& r : reports) {
            os << r.condition << "," << format_full(r.percentile) << "," << format_full(r.n_total) << ","
               << format_full(r.n_rejected) << ",";
            if (r.acc_without_rejection.has_value()) os << format_full(*r.acc_without_rejection);
            os << "," << format_full(r.rejection_rate) << ",";
            if (r.acc_on_left.has_value()) os << format_full(*r.acc_on_left);
            os << "\n";
        }
        write_text_file(path, os.str());
        return;
    }
    throw std::invalid_argument("export_report: unknown format '" + format + "' (expected json or csv)");
}

inline std::vector<EvalReport> load_reports_json(const std::filesystem::path& path) {
    const json j = read_json_file(path);
    require_format_version(j, 1, path.string());
    std::vector<EvalReport> out;
    for (const auto& rj : j.at("reports")) out.push_back(EvalReport::from_json(rj));
    return out;
}

// Rebuilds reports from the CSV columns; derived counts are reconstructed
// from the serialized rates.
inline std::vector<EvalReport> load_reports_csv(const std::filesystem::path& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;
    std::vector<EvalReport> out;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1 || line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != 7) throw ConfigError(where + ": expected 7 fields");
        EvalReport r;
        r.condition = fields[0];
        r.percentile = detail::parse_strict_double(fields[1], where);
        r.n_total = detail::parse_strict_double(fields[2], where);
        r.n_rejected = detail::parse_strict_double(fields[3], where);
        if (!fields[4].empty()) r.acc_without_rejection = detail::parse_strict_double(fields[4], where);
        r.rejection_rate = detail::parse_strict_double(fields[5], where);
        if (!fields[6].empty()) r.acc_on_left = detail::parse_strict_double(fields[6], where);
        r.n_left = r.n_total - r.n_rejected;
        if (r.acc_on_left.has_value()) {
            r.n_correct_left = *r.acc_on_left * r.n_left;
        }
        out.push_back(std::move(r));
    }
    return out;
}

// Equality over the CSV-visible fields (counts derived fields excluded).
inline bool csv_fields_equal(const EvalReport& a, const EvalReport& b) {
    return a.condition == b.condition && a.percentile == b.percentile && a.n_total == b.n_total &&
           a.n_rejected == b.n_rejected && a.acc_without_rejection == b.acc_without_rejection &&
           a.rejection_rate == b.rejection_rate && a.acc_on_left == b.acc_on_left;
}

}  // namespace logitgc
