#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <vector>

#include "logitgc/attacks.hpp"
#include "logitgc/base_model.hpp"
#include "logitgc/head.hpp"
#include "logitgc/io_util.hpp"

namespace logitgc {

// Full description of a reproducible run. Accepted either as JSON or as a
// flat `key = value` text file with the same schema (dotted keys map to the
// nested JSON objects, lists are comma separated, '#' starts a comment).

struct RunConfig {
    // Defaults give a well-conditioned 10-cluster toy problem: cluster
    // spacing clears the corruption and attack scales while the acceptance
    // regions stay small enough for uniform-noise OOD detection. The test
    // split is large enough that the severity-5 left set is measurable.
    std::uint64_t seed = 2878;
    std::size_t n_classes = 10;
    std::size_t input_dim = 2;
    std::size_t per_class_train = 500;
    std::size_t per_class_test = 400;
    double spread = 0.01;

    BaseTrainConfig base;        // seed is derived from the master seed
    LossConfig head;             // likewise
    std::vector<double> percentiles = {1.0, 2.0};
    std::vector<int> severities = {1, 2, 3, 4, 5};
    std::vector<double> attack_epsilons = {0.02, 0.05, 0.10};
    AttackConfig attack;         // epsilon comes from the grid
    std::vector<std::string> ood_kinds = {"uniform", "shifted_clusters"};
    std::size_t ood_n = 1000;
    // 0 calibrates on the training split itself; a positive fraction carves
    // that share of each class out of head training and calibrates on it.
    double calibration_holdout_fraction = 0.0;

    void validate() const {
        if (n_classes < 2) throw ConfigError("config: n_classes must be >= 2");
        if (input_dim < 1) throw ConfigError("config: input_dim must be >= 1");
        if (per_class_train < 1 || per_class_test < 1) {
            throw ConfigError("config: per_class_train and per_class_test must be >= 1");
        }
        if (!(spread > 0.0)) throw ConfigError("config: spread must be positive");
        if (percentiles.empty()) throw ConfigError("config: percentiles must not be empty");
        for (double p : percentiles) {
            if (!(p > 0.0) || p > 100.0) throw ConfigError("config: percentile must be in (0, 100]");
        }
        for (int s : severities) {
            if (s < 1 || s > 5) throw ConfigError("config: severity must be in [1, 5]");
        }
        for (double e : attack_epsilons) {
            if (e < 0.0) throw ConfigError("config: attack epsilon must be >= 0");
        }
        for (const auto& kind : ood_kinds) {
            if (kind != "uniform" && kind != "shifted_clusters") {
                throw ConfigError("config: unknown ood kind '" + kind + "'");
            }
        }
        if (ood_n < 1) throw ConfigError("config: ood.n must be >= 1");
        if (calibration_holdout_fraction < 0.0 || calibration_holdout_fraction >= 1.0) {
            throw ConfigError("config: calibration.holdout_fraction must be in [0, 1)");
        }
        try {
            head.validate();
            AttackConfig probe = attack;
            probe.epsilon = attack_epsilons.empty() ? 0.0 : attack_epsilons.front();
            probe.validate();
        } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        if (base.epochs == 0 || base.batch_size == 0) {
            throw ConfigError("config: base.epochs and base.batch_size must be positive");
        }
    }

    json to_json() const {
        json j;
        j["seed"] = seed;
        j["n_classes"] = n_classes;
        j["input_dim"] = input_dim;
        j["per_class_train"] = per_class_train;
        j["per_class_test"] = per_class_test;
        j["spread"] = spread;
        j["base"] = json{{"epochs", base.epochs}, {"batch_size", base.batch_size}, {"lr", base.lr}};
        j["head"] = head.to_json();
        j["head"].erase("seed");  // derived from the master seed
        j["percentiles"] = percentiles;
        j["severities"] = severities;
        j["attack"] = json{{"epsilons", attack_epsilons},
                           {"iterations", attack.iterations},
                           {"step_size", attack.step_size},
                           {"target", attack.target},
                           {"random_start", attack.random_start}};
        j["ood"] = json{{"kinds", ood_kinds}, {"n", ood_n}};
        j["calibration"] = json{{"holdout_fraction", calibration_holdout_fraction}};
        return j;
    }

    static RunConfig from_json(const json& j) {
        static const std::vector<std::string> known = {
            "seed",      "n_classes",  "input_dim", "per_class_train", "per_class_test",
            "spread",    "base",       "head",      "percentiles",     "severities",
            "attack",    "ood",        "calibration"};
        for (const auto& [key, value] : j.items()) {
            (void)value;
            if (std::find(known.begin(), known.end(), key) == known.end()) {
                throw ConfigError("config: unknown key '" + key + "'");
            }
        }
        RunConfig c;
        try {
            c.seed = j.value("seed", c.seed);
            c.n_classes = j.value("n_classes", c.n_classes);
            c.input_dim = j.value("input_dim", c.input_dim);
            c.per_class_train = j.value("per_class_train", c.per_class_train);
            c.per_class_test = j.value("per_class_test", c.per_class_test);
            c.spread = j.value("spread", c.spread);
            if (j.contains("base")) {
                const auto& b = j["base"];
                c.base.epochs = b.value("epochs", c.base.epochs);
                c.base.batch_size = b.value("batch_size", c.base.batch_size);
                c.base.lr = b.value("lr", c.base.lr);
            }
            if (j.contains("head")) c.head = LossConfig::from_json(j["head"]);
            if (j.contains("percentiles")) c.percentiles = j["percentiles"].get<std::vector<double>>();
            if (j.contains("severities")) c.severities = j["severities"].get<std::vector<int>>();
            if (j.contains("attack")) {
                const auto& a = j["attack"];
                if (a.contains("epsilons")) c.attack_epsilons = a["epsilons"].get<std::vector<double>>();
                c.attack.iterations = a.value("iterations", c.attack.iterations);
                c.attack.step_size = a.value("step_size", c.attack.step_size);
                c.attack.target = a.value("target", c.attack.target);
                c.attack.random_start = a.value("random_start", c.attack.random_start);
            }
            if (j.contains("ood")) {
                const auto& o = j["ood"];
                if (o.contains("kinds")) c.ood_kinds = o["kinds"].get<std::vector<std::string>>();
                c.ood_n = o.value("n", c.ood_n);
            }
            if (j.contains("calibration")) {
                c.calibration_holdout_fraction =
                    j["calibration"].value("holdout_fraction", c.calibration_holdout_fraction);
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("config: ") + e.what());
        }
        c.validate();
        return c;
    }

    static RunConfig from_kv_text(const std::string& text);

    // Dispatches on content: JSON when the first significant byte is '{'.
    static RunConfig from_file(const std::filesystem::path& path) {
        const std::string text = read_text_file(path);
        for (char ch : text) {
            if (std::isspace(static_cast<unsigned char>(ch))) continue;
            if (ch == '{') return from_json(read_json_file(path));
            break;
        }
        return from_kv_text(text);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

inline json kv_number(const std::string& value, const std::string& where) {
    const double v = parse_strict_double(value, where);
    if (v == std::floor(v) && std::abs(v) < 1e15 && value.find('.') == std::string::npos &&
        value.find('e') == std::string::npos && value.find('E') == std::string::npos) {
        if (v >= 0) return json(static_cast<std::uint64_t>(v));
        return json(static_cast<std::int64_t>(v));
    }
    return json(v);
}

inline json kv_list(const std::string& value, const std::string& where, bool numeric) {
    json arr = json::array();
    for (const auto& item : split_csv_line(value)) {
        const std::string token = trim(item);
        if (token.empty()) throw ConfigError(where + ": empty list element");
        arr.push_back(numeric ? kv_number(token, where) : json(token));
    }
    return arr;
}

}  // namespace detail

inline RunConfig RunConfig::from_kv_text(const std::string& text) {
    json j = json::object();
    auto set_nested = [&j](const std::string& dotted, json value) {
        const auto dot = dotted.find('.');
        if (dot == std::string::npos) {
            j[dotted] = std::move(value);
        } else {
            j[dotted.substr(0, dot)][dotted.substr(dot + 1)] = std::move(value);
        }
    };

    std::istringstream in(text);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::string where = "config:" + std::to_string(line_no);
        std::string stripped = line;
        if (const auto hash = stripped.find('#'); hash != std::string::npos) {
            stripped = stripped.substr(0, hash);
        }
        stripped = detail::trim(stripped);
        if (stripped.empty()) continue;
        const auto eq = stripped.find('=');
        if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
        const std::string key = detail::trim(stripped.substr(0, eq));
        const std::string value = detail::trim(stripped.substr(eq + 1));
        if (key.empty() || value.empty()) throw ConfigError(where + ": expected 'key = value'");

        if (key == "attack.target") {
            set_nested("attack.target", json(value));
        } else if (key == "attack.random_start") {
            if (value != "true" && value != "false") throw ConfigError(where + ": expected true or false");
            set_nested("attack.random_start", json(value == "true"));
        } else if (key == "ood.kinds") {
            set_nested("ood.kinds", detail::kv_list(value, where, /*numeric=*/false));
        } else if (key == "percentiles" || key == "severities" || key == "attack.epsilons") {
            set_nested(key, detail::kv_list(value, where, /*numeric=*/true));
        } else {
            set_nested(key, detail::kv_number(value, where));
        }
    }
    return from_json(j);
}

}  // namespace logitgc
