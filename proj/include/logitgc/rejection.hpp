#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "logitgc/head.hpp"
#include "logitgc/io_util.hpp"
#include "logitgc/logit_dataset.hpp"

namespace logitgc {

// Per-class rejection thresholds: the p-th percentile (nearest rank) of
// true-class log-densities over correctly classified calibration samples.

struct ThresholdTable {
    std::vector<double> thresholds;      // delta_y, nats
    double percentile = 0.0;             // p that produced the table
    std::vector<std::size_t> per_class_n;  // calibration samples per class

    std::size_t n_classes() const { return thresholds.size(); }

    json to_json() const {
        json j;
        j["format_version"] = 1;
        j["percentile"] = percentile;
        j["thresholds"] = thresholds;
        j["per_class_n"] = per_class_n;
        return j;
    }

    static ThresholdTable from_json(const json& j) {
        require_format_version(j, 1, "threshold table");
        ThresholdTable t;
        t.percentile = j.at("percentile").get<double>();
        t.thresholds = j.at("thresholds").get<std::vector<double>>();
        t.per_class_n = j.at("per_class_n").get<std::vector<std::size_t>>();
        if (t.thresholds.size() != t.per_class_n.size()) {
            throw ConfigError("threshold table: thresholds/per_class_n length mismatch");
        }
        return t;
    }

    static ThresholdTable load(const std::filesystem::path& path) {
        return from_json(read_json_file(path));
    }
    void save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }
};

// Nearest-rank percentile: the value at 1-based index ceil(p/100 * n) of the
// ascending sort. Exactly reproducible and monotone in p.
inline double nearest_rank_percentile(std::vector<double> values, double p) {
    if (values.empty()) throw std::invalid_argument("nearest_rank_percentile: empty sample");
    if (!(p > 0.0) || p > 100.0) {
        throw std::invalid_argument("nearest_rank_percentile: percentile must be in (0, 100]");
    }
    std::sort(values.begin(), values.end());
    const double rank = std::ceil(p / 100.0 * static_cast<double>(values.size()) - 1e-9);
    const std::size_t index = static_cast<std::size_t>(std::max(rank, 1.0));
    return values[std::min(index, values.size()) - 1];
}

// Collects log p(rep | y) over calibration samples whose head prediction
// equals their true label y, then takes the per-class nearest-rank percentile.
inline ThresholdTable calibrate(const Head& head, const LogitDataset& calibration, double percentile) {
    if (!(percentile > 0.0) || percentile > 100.0) {
        throw std::invalid_argument("calibrate: percentile must be in (0, 100]");
    }
    calibration.validate();
    const std::size_t n_classes = head.n_classes();
    if (calibration.n_classes != n_classes) {
        throw std::invalid_argument("calibrate: dataset has " + std::to_string(calibration.n_classes) +
                                    " classes, head expects " + std::to_string(n_classes));
    }
    std::vector<std::vector<double>> correct_scores(n_classes);
    for (const auto& row : calibration.rows) {
        if (row.label == kNoLabel) {
            throw std::invalid_argument("calibrate: calibration rows must be labeled");
        }
        const auto log_probs = head.class_log_probs(row.logits);
        const auto predicted = argmax_lowest_tie(log_probs);
        if (static_cast<int>(predicted) == row.label) {
            correct_scores[predicted].push_back(log_probs[predicted]);
        }
    }
    ThresholdTable table;
    table.percentile = percentile;
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (correct_scores[c].empty()) {
            throw std::runtime_error("calibrate: class " + std::to_string(c) +
                                     " has no correctly classified calibration samples");
        }
        table.per_class_n.push_back(correct_scores[c].size());
        table.thresholds.push_back(nearest_rank_percentile(correct_scores[c], percentile));
    }
    return table;
}

// Fraction (in percent) of correctly classified samples per class that the
// table rejects; self-consistent calibration keeps this near the percentile.
inline std::vector<double> per_class_rejected_pct_of_correct(const Head& head, const ThresholdTable& table,
                                                             const LogitDataset& data);

struct Decision {
    bool rejected = false;
    int predicted = 0;        // y*, the argmax class (also set when rejected)
    double score = 0.0;       // log p(rep | y*)
    double threshold = 0.0;   // delta_{y*}
};

// Predict y* when log p(rep | y*) >= delta_{y*}, otherwise reject. Boundary
// equality predicts; the true label is never consulted.
inline Decision decide(const Head& head, const ThresholdTable& table, std::span<const double> logits) {
    if (logits.size() != head.n_classes()) {
        throw std::invalid_argument("decide: logit length " + std::to_string(logits.size()) +
                                    " != n_classes " + std::to_string(head.n_classes()));
    }
    if (table.n_classes() != head.n_classes()) {
        throw std::invalid_argument("decide: threshold table has " + std::to_string(table.n_classes()) +
                                    " classes, head expects " + std::to_string(head.n_classes()));
    }
    const auto log_probs = head.class_log_probs({logits.begin(), logits.end()});
    Decision d;
    d.predicted = static_cast<int>(argmax_lowest_tie(log_probs));
    d.score = log_probs[static_cast<std::size_t>(d.predicted)];
    d.threshold = table.thresholds[static_cast<std::size_t>(d.predicted)];
    d.rejected = !(d.score >= d.threshold);
    return d;
}

inline std::vector<double> per_class_rejected_pct_of_correct(const Head& head, const ThresholdTable& table,
                                                             const LogitDataset& data) {
    const std::size_t n_classes = head.n_classes();
    std::vector<double> rejected(n_classes, 0.0), correct(n_classes, 0.0);
    for (const auto& row : data.rows) {
        const Decision d = decide(head, table, row.logits);
        if (d.predicted != row.label) continue;
        const auto c = static_cast<std::size_t>(row.label);
        correct[c] += 1.0;
        if (d.rejected) rejected[c] += 1.0;
    }
    std::vector<double> pct(n_classes, 0.0);
    for (std::size_t c = 0; c < n_classes; ++c) {
        if (correct[c] == 0.0) {
            throw std::runtime_error("per_class_rejected_pct_of_correct: class " + std::to_string(c) +
                                     " has no correctly classified samples");
        }
        pct[c] = 100.0 * rejected[c] / correct[c];
    }
    return pct;
}

}  // namespace logitgc
