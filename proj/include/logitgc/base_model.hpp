#pragma once

#include <string>
#include <vector>

#include "logitgc/adam.hpp"
#include "logitgc/dataset.hpp"
#include "logitgc/io_util.hpp"
#include "logitgc/logit_dataset.hpp"
#include "logitgc/mlp.hpp"
#include "logitgc/rng.hpp"
#include "logitgc/tensor.hpp"

namespace logitgc {

constexpr std::size_t kBaseHiddenWidth = 64;

// [B x C] one-hot constant for a label batch.
inline Tensor one_hot(const std::vector<int>& labels, std::size_t n_classes) {
    std::vector<double> v(labels.size() * n_classes, 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= n_classes) {
            throw std::invalid_argument("one_hot: label " + std::to_string(labels[i]) + " out of range [0, " +
                                        std::to_string(n_classes) + ")");
        }
        v[i * n_classes + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return Tensor::matrix(labels.size(), n_classes, std::move(v));
}

// Mean softmax cross-entropy: mean_i [ logsumexp(z_i) - z_{i, y_i} ].
inline Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
    Tensor onehot = one_hot(labels, logits.cols());
    return mean(sub(logsumexp(logits, 1), sum(mul(logits, onehot), 1)));
}

inline Tensor batch_inputs(const Dataset& d, const std::vector<std::size_t>& indices) {
    std::vector<double> v;
    v.reserve(indices.size() * d.input_dim);
    for (std::size_t idx : indices) {
        const auto& x = d.examples[idx].input;
        v.insert(v.end(), x.begin(), x.end());
    }
    return Tensor::matrix(indices.size(), d.input_dim, std::move(v));
}

inline std::size_t argmax_lowest_tie(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i) {
        if (v[i] > v[best]) best = i;
    }
    return best;
}

// The frozen discriminative classifier whose logits feed the head. A small
// ELU MLP stands in for the large image models the approach is meant to wrap.
class BaseModel {
  public:
    BaseModel() = default;

    std::size_t n_classes() const { return net_.output_dim(); }
    std::size_t input_dim() const { return net_.input_dim(); }
    bool frozen() const { return frozen_; }
    std::size_t param_count() const { return net_.param_count(); }

    std::uint64_t parameter_hash() const { return param_hash(net_.parameters()); }

    // Differentiable forward; records onto the active graph, so input
    // gradients are available when x requires them.
    Tensor logits(const Tensor& x) const {
        if (x.rank() != 2 || x.cols() != input_dim()) {
            throw std::invalid_argument("BaseModel::logits: input " + detail::shape_str(x.shape()) +
                                        " does not match input_dim " + std::to_string(input_dim()));
        }
        return net_.forward(x);
    }

    std::vector<double> logits(const std::vector<double>& x) const {
        if (x.size() != input_dim()) {
            throw std::invalid_argument("BaseModel::logits: input length " + std::to_string(x.size()) +
                                        " does not match input_dim " + std::to_string(input_dim()));
        }
        return net_.forward_row(x);
    }

    int predict(const std::vector<double>& x) const {
        return static_cast<int>(argmax_lowest_tie(net_.forward_row(x)));
    }

    // Mutable parameter access is the only mutation path and is refused once
    // the model is frozen.
    std::vector<Tensor> mutable_parameters() {
        if (frozen_) throw std::logic_error("BaseModel: model is frozen, parameters are immutable");
        return net_.parameters();
    }

    json to_json() const {
        json j;
        j["format_version"] = 1;
        j["kind"] = "base";
        j["n_classes"] = n_classes();
        j["input_dim"] = input_dim();
        j["layers"] = net_.to_json();
        return j;
    }

    static BaseModel from_json(const json& j) {
        require_format_version(j, 1, "base checkpoint");
        if (j.value("kind", "") != "base") {
            throw ConfigError("base checkpoint: kind is '" + j.value("kind", "") + "', expected 'base'");
        }
        const auto c = j.at("n_classes").get<std::size_t>();
        const auto k = j.at("input_dim").get<std::size_t>();
        BaseModel m;
        m.net_ = Mlp::from_json(j.at("layers"), {k, kBaseHiddenWidth, kBaseHiddenWidth, c},
                                /*trainable=*/false, "base checkpoint");
        m.frozen_ = true;
        return m;
    }

    static BaseModel load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }
    void save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

  private:
    friend struct BaseTrainer;
    Mlp net_;
    bool frozen_ = false;
};

struct BaseTrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    double lr = 1e-3;
    std::uint64_t seed = 0;
};

struct BaseTrainResult {
    BaseModel model;
    std::vector<double> epoch_loss;  // mean cross-entropy per epoch
    double train_accuracy = 0.0;
};

inline double accuracy(const BaseModel& m, const Dataset& d) {
    if (!d.has_labels()) throw std::invalid_argument("accuracy: dataset has no labels");
    if (d.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
    std::size_t correct = 0;
    for (const auto& e : d.examples) {
        if (m.predict(e.input) == e.label) ++correct;
    }
    return static_cast<double>(correct) / static_cast<double>(d.size());
}

struct BaseTrainer {
    static BaseTrainResult run(const Dataset& train, const BaseTrainConfig& cfg) {
        if (train.provenance.kind != ProvenanceKind::Clean) {
            throw std::invalid_argument("train_base: training data must be clean, got " +
                                        train.provenance.describe());
        }
        if (train.n_classes < 2) throw std::invalid_argument("train_base: need at least 2 classes");
        if (train.size() == 0) throw std::invalid_argument("train_base: empty training set");
        if (cfg.batch_size == 0) throw std::invalid_argument("train_base: batch_size must be positive");

        Rng rng(derive_seed(cfg.seed, "base-init"));
        BaseTrainResult result;
        result.model.net_ = Mlp::make({train.input_dim, kBaseHiddenWidth, kBaseHiddenWidth, train.n_classes},
                                      rng, /*trainable=*/true);

        AdamOptimizer opt(result.model.net_.parameters(), {.lr = cfg.lr});
        Rng shuffle_rng(derive_seed(cfg.seed, "base-shuffle"));
        std::vector<std::size_t> order(train.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            double loss_sum = 0.0;
            std::size_t steps = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(start + cfg.batch_size, order.size());
                std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                               order.begin() + static_cast<std::ptrdiff_t>(stop));
                std::vector<int> labels;
                labels.reserve(batch.size());
                for (std::size_t idx : batch) labels.push_back(train.examples[idx].label);
                try {
                    Graph graph;
                    Tensor loss = cross_entropy(result.model.net_.forward(batch_inputs(train, batch)), labels);
                    loss_sum += loss.value();
                    opt.zero_grad();
                    graph.backward(loss);
                    opt.step();
                } catch (const std::runtime_error& e) {
                    throw std::runtime_error("train_base: diverged at epoch " + std::to_string(epoch) + ": " +
                                             e.what());
                }
                ++steps;
            }
            result.epoch_loss.push_back(loss_sum / static_cast<double>(steps));
        }

        for (auto& p : result.model.net_.parameters()) p.set_requires_grad(false);
        result.model.frozen_ = true;
        result.train_accuracy = accuracy(result.model, train);
        return result;
    }
};

// Trains to convergence on clean data and returns the frozen model.
inline BaseTrainResult train_base(const Dataset& train, const BaseTrainConfig& cfg) {
    return BaseTrainer::run(train, cfg);
}

// One logit row per example; labels pass through (absent stays absent).
inline LogitDataset export_logits(const BaseModel& m, const Dataset& d, const std::string& source = "base_model") {
    if (!m.frozen()) throw std::invalid_argument("export_logits: model must be frozen");
    if (d.input_dim != m.input_dim()) {
        throw std::invalid_argument("export_logits: dataset input_dim " + std::to_string(d.input_dim) +
                                    " does not match model input_dim " + std::to_string(m.input_dim()));
    }
    LogitDataset out;
    out.n_classes = m.n_classes();
    out.source = source;
    out.rows.reserve(d.size());
    for (const auto& e : d.examples) {
        out.rows.push_back(LogitRow{e.label, m.logits(e.input)});
    }
    return out;
}

}  // namespace logitgc
