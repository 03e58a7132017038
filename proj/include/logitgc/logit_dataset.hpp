#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "logitgc/dataset.hpp"
#include "logitgc/io_util.hpp"

namespace logitgc {

// Rows of (label, logit vector). This is the decoupling point between a base
// classifier and the head: any classifier's logits can be ingested from the
// CSV format below.

struct LogitRow {
    int label = kNoLabel;
    std::vector<double> logits;

    bool operator==(const LogitRow&) const = default;
};

struct LogitDataset {
    std::vector<LogitRow> rows;
    std::size_t n_classes = 0;
    std::string source;
    std::optional<std::uint64_t> seed;

    std::size_t size() const { return rows.size(); }
    bool operator==(const LogitDataset&) const = default;

    void validate() const {
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].logits.size() != n_classes) {
                throw std::invalid_argument("LogitDataset: row " + std::to_string(i) + " has " +
                                            std::to_string(rows[i].logits.size()) + " logits, expected " +
                                            std::to_string(n_classes));
            }
            for (double v : rows[i].logits) {
                if (!std::isfinite(v)) {
                    throw std::invalid_argument("LogitDataset: non-finite logit in row " + std::to_string(i));
                }
            }
            if (rows[i].label != kNoLabel &&
                (rows[i].label < 0 || static_cast<std::size_t>(rows[i].label) >= n_classes)) {
                throw std::invalid_argument("LogitDataset: label out of range in row " + std::to_string(i));
            }
        }
    }
};

// CSV: header `label,logit_0,...,logit_{C-1}`, one row per sample, labels
// empty for unlabeled rows, values at full precision. A sidecar
// `<path>.meta.json` holds {n_classes, source, seed, format_version}.
inline void save_logit_dataset(const LogitDataset& ld, const std::filesystem::path& path) {
    ld.validate();
    std::ostringstream os;
    os << "label";
    for (std::size_t i = 0; i < ld.n_classes; ++i) os << ",logit_" << i;
    os << "\n";
    for (const auto& row : ld.rows) {
        if (row.label != kNoLabel) os << row.label;
        for (double v : row.logits) os << "," << format_full(v);
        os << "\n";
    }
    write_text_file(path, os.str());

    json meta;
    meta["n_classes"] = ld.n_classes;
    meta["source"] = ld.source;
    if (ld.seed.has_value()) {
        meta["seed"] = *ld.seed;
    } else {
        meta["seed"] = nullptr;
    }
    meta["format_version"] = 1;
    write_json_file(path.string() + ".meta.json", meta);
}

// Per-class split: the first (1 - fraction) of each class's rows, in order,
// go to the first half. Used for held-out calibration.
inline std::pair<LogitDataset, LogitDataset> split_logit_dataset(const LogitDataset& ld,
                                                                 double holdout_fraction) {
    if (!(holdout_fraction > 0.0) || holdout_fraction >= 1.0) {
        throw std::invalid_argument("split_logit_dataset: fraction must be in (0, 1)");
    }
    ld.validate();
    std::vector<std::size_t> per_class(ld.n_classes, 0);
    for (const auto& row : ld.rows) {
        if (row.label == kNoLabel) {
            throw std::invalid_argument("split_logit_dataset: rows must be labeled");
        }
        ++per_class[static_cast<std::size_t>(row.label)];
    }
    std::vector<std::size_t> keep(ld.n_classes);
    for (std::size_t c = 0; c < ld.n_classes; ++c) {
        keep[c] = per_class[c] - static_cast<std::size_t>(std::floor(holdout_fraction *
                                                                     static_cast<double>(per_class[c])));
        if (keep[c] == 0 || keep[c] == per_class[c]) {
            throw std::invalid_argument("split_logit_dataset: class " + std::to_string(c) +
                                        " too small to split at fraction " +
                                        std::to_string(holdout_fraction));
        }
    }
    LogitDataset main = ld, holdout = ld;
    main.rows.clear();
    holdout.rows.clear();
    std::vector<std::size_t> seen(ld.n_classes, 0);
    for (const auto& row : ld.rows) {
        auto& count = seen[static_cast<std::size_t>(row.label)];
        (count < keep[static_cast<std::size_t>(row.label)] ? main : holdout).rows.push_back(row);
        ++count;
    }
    return {std::move(main), std::move(holdout)};
}

inline LogitDataset load_logit_dataset(const std::filesystem::path& path) {
    const std::filesystem::path meta_path = path.string() + ".meta.json";
    const json meta = read_json_file(meta_path);
    require_format_version(meta, 1, meta_path.string());

    LogitDataset out;
    out.n_classes = meta.at("n_classes").get<std::size_t>();
    out.source = meta.value("source", std::string{});
    if (meta.contains("seed") && !meta["seed"].is_null()) {
        out.seed = meta["seed"].get<std::uint64_t>();
    }
    if (out.n_classes == 0) throw ConfigError(meta_path.string() + ": n_classes must be positive");

    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;
    std::string expected_header = "label";
    for (std::size_t i = 0; i < out.n_classes; ++i) expected_header += ",logit_" + std::to_string(i);

    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line_no == 1) {
            if (line != expected_header) {
                throw ConfigError(path.string() + ":1: malformed header (expected '" + expected_header +
                                  "')");
            }
            continue;
        }
        if (line.empty()) continue;
        const std::string where = path.string() + ":" + std::to_string(line_no);
        const auto fields = detail::split_csv_line(line);
        if (fields.size() != out.n_classes + 1) {
            throw ConfigError(where + ": expected " + std::to_string(out.n_classes + 1) +
                              " fields (label plus " + std::to_string(out.n_classes) + " logits), got " +
                              std::to_string(fields.size()));
        }
        LogitRow row;
        if (!fields[0].empty()) {
            const double lv = detail::parse_strict_double(fields[0], where);
            row.label = static_cast<int>(lv);
            if (lv != row.label || row.label < 0 || static_cast<std::size_t>(row.label) >= out.n_classes) {
                throw ConfigError(where + ": label '" + fields[0] + "' out of range [0, " +
                                  std::to_string(out.n_classes) + ")");
            }
        }
        row.logits.reserve(out.n_classes);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            row.logits.push_back(detail::parse_strict_double(fields[i], where));
        }
        out.rows.push_back(std::move(row));
    }
    if (line_no == 0) throw ConfigError(path.string() + ": empty file");
    return out;
}

}  // namespace logitgc
