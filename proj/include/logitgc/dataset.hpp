#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "logitgc/io_util.hpp"
#include "logitgc/rng.hpp"

namespace logitgc {

// Synthetic desk-scale data: well-separated Gaussian clusters in [0,1]^k,
// graded Gaussian corruptions, and out-of-distribution samples.

enum class ProvenanceKind { Clean, Corrupted, Ood, External, Adversarial };

struct Provenance {
    ProvenanceKind kind = ProvenanceKind::Clean;
    int severity = 0;             // corrupted
    std::string ood_kind;         // ood
    std::string attack_target;    // adversarial
    double epsilon = 0.0;         // adversarial

    static Provenance clean() { return {}; }
    static Provenance corrupted(int severity) { return {ProvenanceKind::Corrupted, severity, "", "", 0.0}; }
    static Provenance ood(std::string kind) { return {ProvenanceKind::Ood, 0, std::move(kind), "", 0.0}; }
    static Provenance external() { return {ProvenanceKind::External, 0, "", "", 0.0}; }
    static Provenance adversarial(std::string target, double eps) {
        return {ProvenanceKind::Adversarial, 0, "", std::move(target), eps};
    }

    std::string describe() const {
        switch (kind) {
            case ProvenanceKind::Clean: return "clean";
            case ProvenanceKind::Corrupted: return "corrupted(" + std::to_string(severity) + ")";
            case ProvenanceKind::Ood: return "ood(" + ood_kind + ")";
            case ProvenanceKind::External: return "external";
            case ProvenanceKind::Adversarial:
                return "adversarial(target=" + attack_target + ",eps=" + format_full(epsilon) + ")";
        }
        return "unknown";
    }

    bool operator==(const Provenance&) const = default;
};

constexpr int kNoLabel = -1;

struct LabeledExample {
    std::vector<double> input;  // coordinates in [0,1]
    int label = kNoLabel;       // class index, kNoLabel when absent (OOD)
};

struct Dataset {
    std::vector<LabeledExample> examples;
    std::size_t n_classes = 0;
    std::size_t input_dim = 0;
    Provenance provenance;
    // Generating cluster means, kept for separation checks and oracles.
    std::vector<std::vector<double>> class_means;

    std::size_t size() const { return examples.size(); }
    bool has_labels() const { return provenance.kind != ProvenanceKind::Ood; }

    // Unlabeled copy tagged as OOD; used to feed in-distribution data through
    // the OOD evaluation path as a control.
    Dataset strip_labels(const std::string& ood_kind = "control") const {
        Dataset out = *this;
        out.provenance = Provenance::ood(ood_kind);
        for (auto& e : out.examples) e.label = kNoLabel;
        out.class_means.clear();
        return out;
    }
};

namespace detail {

inline double euclidean(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

// Greedy placement with a global redraw budget.
inline std::vector<std::vector<double>> place_means(std::size_t count, std::size_t dim, double min_sep,
                                                    Rng& rng, const std::vector<std::vector<double>>& avoid,
                                                    double avoid_sep, const char* who) {
    std::vector<std::vector<double>> means;
    std::size_t redraws = 0;
    while (means.size() < count) {
        std::vector<double> candidate(dim);
        for (auto& c : candidate) c = rng.uniform(0.2, 0.8);
        bool ok = true;
        for (const auto& m : means) {
            if (euclidean(candidate, m) < min_sep) { ok = false; break; }
        }
        if (ok) {
            for (const auto& m : avoid) {
                if (euclidean(candidate, m) < avoid_sep) { ok = false; break; }
            }
        }
        if (ok) {
            means.push_back(std::move(candidate));
        } else if (++redraws > 1000) {
            throw std::runtime_error(std::string(who) +
                                     ": could not place separated cluster means after 1000 resamples; "
                                     "use a smaller spread or fewer classes");
        }
    }
    return means;
}

}  // namespace detail

// Gaussian clusters around means drawn in [0.2, 0.8]^k with pairwise
// separation >= 4 * spread; samples are clipped to [0,1]^k. Pure function of
// its arguments and the seed.
inline Dataset make_clusters(std::size_t n_classes, std::size_t per_class, std::size_t input_dim,
                             double spread, std::uint64_t seed) {
    if (n_classes < 2) throw std::invalid_argument("make_clusters: n_classes must be >= 2");
    if (per_class < 1) throw std::invalid_argument("make_clusters: per_class must be >= 1");
    if (!(spread > 0.0)) throw std::invalid_argument("make_clusters: spread must be positive");

    Rng rng(seed);
    Dataset out;
    out.n_classes = n_classes;
    out.input_dim = input_dim;
    out.provenance = Provenance::clean();
    out.class_means = detail::place_means(n_classes, input_dim, 4.0 * spread, rng, {}, 0.0, "make_clusters");

    out.examples.reserve(n_classes * per_class);
    for (std::size_t c = 0; c < n_classes; ++c) {
        for (std::size_t i = 0; i < per_class; ++i) {
            LabeledExample e;
            e.label = static_cast<int>(c);
            e.input.resize(input_dim);
            for (std::size_t d = 0; d < input_dim; ++d) {
                e.input[d] = std::clamp(out.class_means[c][d] + spread * rng.normal(), 0.0, 1.0);
            }
            out.examples.push_back(std::move(e));
        }
    }
    return out;
}

// Splits a clean clustered dataset into train/test with the first
// `per_class_train` samples of each class going to train. Both halves keep
// the generating means, so they are draws from the same distribution.
inline std::pair<Dataset, Dataset> split_per_class(const Dataset& d, std::size_t per_class_train) {
    if (d.provenance.kind != ProvenanceKind::Clean) {
        throw std::invalid_argument("split_per_class: input must be a clean dataset");
    }
    Dataset train = d, test = d;
    train.examples.clear();
    test.examples.clear();
    std::vector<std::size_t> seen(d.n_classes, 0);
    for (const auto& e : d.examples) {
        auto& count = seen[static_cast<std::size_t>(e.label)];
        (count < per_class_train ? train : test).examples.push_back(e);
        ++count;
    }
    for (std::size_t c = 0; c < d.n_classes; ++c) {
        if (seen[c] <= per_class_train) {
            throw std::invalid_argument("split_per_class: class " + std::to_string(c) +
                                        " has no samples left for the test split");
        }
    }
    return {std::move(train), std::move(test)};
}

inline const std::array<double, 5>& corruption_sigma_ladder() {
    static const std::array<double, 5> ladder{0.05, 0.10, 0.20, 0.30, 0.40};
    return ladder;
}

// Adds i.i.d. Gaussian noise at the given severity and clips back to [0,1]^k.
// Labels and cardinality are preserved exactly.
inline Dataset corrupt_gaussian(const Dataset& d, int severity, std::uint64_t seed) {
    if (d.provenance.kind != ProvenanceKind::Clean) {
        throw std::invalid_argument("corrupt_gaussian: input must be a clean dataset, got " +
                                    d.provenance.describe());
    }
    if (severity < 1 || severity > 5) {
        throw std::invalid_argument("corrupt_gaussian: severity " + std::to_string(severity) +
                                    " outside [1, 5]");
    }
    const double sigma = corruption_sigma_ladder()[static_cast<std::size_t>(severity - 1)];
    Rng rng(seed);
    Dataset out = d;
    out.provenance = Provenance::corrupted(severity);
    for (auto& e : out.examples) {
        for (auto& x : e.input) x = std::clamp(x + sigma * rng.normal(), 0.0, 1.0);
    }
    return out;
}

// OOD sources: uniform noise over the input box, or tight clusters whose
// means keep at least 0.15 distance from every in-distribution mean.
inline Dataset make_ood(const std::string& kind, std::size_t n, std::size_t input_dim, std::uint64_t seed,
                        const std::vector<std::vector<double>>& in_dist_means = {}) {
    if (n < 1) throw std::invalid_argument("make_ood: n must be >= 1");
    Rng rng(seed);
    Dataset out;
    out.n_classes = 0;
    out.input_dim = input_dim;
    out.provenance = Provenance::ood(kind);
    out.examples.reserve(n);

    if (kind == "uniform") {
        for (std::size_t i = 0; i < n; ++i) {
            LabeledExample e;
            e.input.resize(input_dim);
            for (auto& x : e.input) x = rng.uniform01();
            out.examples.push_back(std::move(e));
        }
        return out;
    }
    if (kind == "shifted_clusters") {
        if (in_dist_means.empty()) {
            throw std::invalid_argument(
                "make_ood: shifted_clusters requires the in-distribution cluster means");
        }
        constexpr std::size_t kOodClusters = 3;
        constexpr double kOodSpread = 0.02;
        auto means = detail::place_means(kOodClusters, input_dim, 4.0 * kOodSpread, rng, in_dist_means,
                                         0.15, "make_ood");
        for (std::size_t i = 0; i < n; ++i) {
            const auto& m = means[i % kOodClusters];
            LabeledExample e;
            e.input.resize(input_dim);
            for (std::size_t d = 0; d < input_dim; ++d) {
                e.input[d] = std::clamp(m[d] + kOodSpread * rng.normal(), 0.0, 1.0);
            }
            out.examples.push_back(std::move(e));
        }
        out.class_means = std::move(means);
        return out;
    }
    throw std::invalid_argument("make_ood: unknown kind '" + kind + "' (expected uniform or shifted_clusters)");
}

// ---------------------------------------------------------------------------
// Dataset files: CSV `label,x_0,...,x_{k-1}` (label empty when absent) plus a
// `<path>.meta.json` sidecar, mirroring the logit-dataset format.
// ---------------------------------------------------------------------------

inline void save_dataset(const Dataset& d, const std::filesystem::path& path) {
    std::ostringstream os;
    os << "label";
    for (std::size_t i = 0; i < d.input_dim; ++i) os << ",x_" << i;
    os << "\n";
    for (const auto& e : d.examples) {
        if (e.label != kNoLabel) os << e.label;
        for (double x : e.input) os << "," << format_full(x);
        os << "\n";
    }
    write_text_file(path, os.str());

    json meta;
    meta["format_version"] = 1;
    meta["kind"] = "dataset";
    meta["n_classes"] = d.n_classes;
    meta["input_dim"] = d.input_dim;
    meta["provenance"] = d.provenance.describe();
    if (!d.class_means.empty()) {
        meta["class_means"] = matrix_to_json(
            [&] {
                std::vector<double> flat;
                for (const auto& m : d.class_means) flat.insert(flat.end(), m.begin(), m.end());
                return flat;
            }(),
            d.class_means.size(), d.input_dim);
    }
    write_json_file(path.string() + ".meta.json", meta);
}

inline Dataset load_dataset(const std::filesystem::path& path) {
    const json meta = read_json_file(path.string() + ".meta.json");
    require_format_version(meta, 1, path.string() + ".meta.json");
    Dataset out;
    out.n_classes = meta.at("n_classes").get<std::size_t>();
    out.input_dim = meta.at("input_dim").get<std::size_t>();
    const std::string prov = meta.at("provenance").get<std::string>();
    if (prov == "clean") {
        out.provenance = Provenance::clean();
    } else if (prov.starts_with("corrupted(")) {
        out.provenance = Provenance::corrupted(std::stoi(prov.substr(10)));
    } else if (prov.starts_with("ood(")) {
        out.provenance = Provenance::ood(prov.substr(4, prov.size() - 5));
    } else {
        out.provenance = Provenance::external();
    }
    if (meta.contains("class_means")) {
        const auto flat = matrix_from_json(meta["class_means"], meta["class_means"].size(), out.input_dim,
                                           "class_means");
        for (std::size_t i = 0; i < meta["class_means"].size(); ++i) {
            out.class_means.emplace_back(flat.begin() + static_cast<std::ptrdiff_t>(i * out.input_dim),
                                         flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * out.input_dim));
        }
    }

    std::istringstream in(read_text_file(path));
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line_no == 1) continue;  // header
        if (line.empty()) continue;
        const auto fields = detail::split_csv_line(line);
        const std::string where = path.string() + ":" + std::to_string(line_no);
        if (fields.size() != out.input_dim + 1) {
            throw ConfigError(where + ": expected " + std::to_string(out.input_dim + 1) + " fields, got " +
                              std::to_string(fields.size()));
        }
        LabeledExample e;
        if (!fields[0].empty()) {
            e.label = static_cast<int>(detail::parse_strict_double(fields[0], where));
        }
        for (std::size_t i = 1; i < fields.size(); ++i) {
            e.input.push_back(detail::parse_strict_double(fields[i], where));
        }
        out.examples.push_back(std::move(e));
    }
    return out;
}

}  // namespace logitgc
