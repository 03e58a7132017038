#pragma once

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "logitgc/base_model.hpp"
#include "logitgc/dataset.hpp"
#include "logitgc/head.hpp"
#include "logitgc/rng.hpp"
#include "logitgc/tensor.hpp"

namespace logitgc {

// L-infinity projected gradient ascent against the composed model. The
// default target climbs the base classifier's cross-entropy; the
// head_conditional target treats the head's class-conditional log-densities
// as logits and attacks those directly.

struct AttackConfig {
    double epsilon = 0.0;      // L-inf budget, input units
    double step_size = 0.01;   // input units
    std::size_t iterations = 40;
    std::string target = "base_ce";  // base_ce | head_conditional
    bool random_start = false;
    std::uint64_t seed = 0;  // only used when random_start is set

    void validate() const {
        if (epsilon < 0.0) throw std::invalid_argument("AttackConfig: epsilon must be >= 0");
        if (iterations < 1) throw std::invalid_argument("AttackConfig: iterations must be >= 1");
        if (!(step_size > 0.0)) throw std::invalid_argument("AttackConfig: step_size must be positive");
        if (target != "base_ce" && target != "head_conditional") {
            throw std::invalid_argument("AttackConfig: unknown target '" + target + "'");
        }
    }
};

namespace detail {

inline double sign_of(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// Sum (not mean) of per-sample cross-entropies: samples stay independent, so
// the gradient w.r.t. each input row equals its own per-sample gradient.
inline Tensor summed_cross_entropy(const Tensor& scores, const std::vector<int>& labels) {
    Tensor onehot = one_hot(labels, scores.cols());
    return sum(sub(logsumexp(scores, 1), sum(mul(scores, onehot), 1)));
}

}  // namespace detail

// Gradient of the attacked loss w.r.t. a [N x k] input batch.
inline std::vector<double> attack_input_gradient(const BaseModel& base, const Head* head,
                                                 const std::vector<double>& inputs, std::size_t n,
                                                 const std::vector<int>& labels,
                                                 const std::string& target) {
    if (target == "head_conditional" && head == nullptr) {
        throw std::invalid_argument("attack: head_conditional target requires a head");
    }
    Tensor x = Tensor::matrix(n, base.input_dim(), inputs, /*requires_grad=*/true);
    {
        Graph graph;
        Tensor logits = base.logits(x);
        Tensor loss;
        if (target == "base_ce") {
            loss = detail::summed_cross_entropy(logits, labels);
        } else {
            Tensor log_probs = head->gauss().log_prob_matrix(head->encode(logits));
            loss = detail::summed_cross_entropy(log_probs, labels);
        }
        graph.backward(loss);
    }
    auto g = x.grad();
    return {g.begin(), g.end()};
}

// PGD on a whole batch of independent samples. Returns the perturbed inputs.
inline std::vector<double> pgd_linf_batch(const BaseModel& base, const Head* head,
                                          const std::vector<double>& x0, std::size_t n,
                                          const std::vector<int>& labels, const AttackConfig& cfg) {
    cfg.validate();
    const std::size_t dim = base.input_dim();
    if (x0.size() != n * dim) throw std::invalid_argument("pgd_linf: input size mismatch");
    for (double v : x0) {
        if (v < 0.0 || v > 1.0) throw std::invalid_argument("pgd_linf: inputs must lie in [0,1]");
    }

    std::vector<double> x = x0;
    if (cfg.random_start && cfg.epsilon > 0.0) {
        Rng rng(cfg.seed);
        for (std::size_t i = 0; i < x.size(); ++i) {
            x[i] = std::clamp(x[i] + rng.uniform(-cfg.epsilon, cfg.epsilon), 0.0, 1.0);
        }
    }

    for (std::size_t iter = 0; iter < cfg.iterations; ++iter) {
        std::vector<double> grad;
        try {
            grad = attack_input_gradient(base, head, x, n, labels, cfg.target);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("pgd_linf: non-finite gradient at iteration " + std::to_string(iter) +
                                     ": " + e.what());
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
            if (!std::isfinite(grad[i])) {
                throw std::runtime_error("pgd_linf: non-finite gradient at iteration " +
                                         std::to_string(iter));
            }
            double v = x[i] + cfg.step_size * detail::sign_of(grad[i]);
            v = std::clamp(v, x0[i] - cfg.epsilon, x0[i] + cfg.epsilon);
            x[i] = std::clamp(v, 0.0, 1.0);
        }
    }
    return x;
}

// Single-sample PGD.
inline std::vector<double> pgd_linf(const BaseModel& base, const Head* head, const std::vector<double>& x,
                                    int y_true, const AttackConfig& cfg) {
    return pgd_linf_batch(base, head, x, 1, {y_true}, cfg);
}

// One-step special case: a single ascent step of size epsilon.
inline std::vector<double> fgsm(const BaseModel& base, const Head* head, const std::vector<double>& x,
                                int y_true, double epsilon, const std::string& target = "base_ce") {
    AttackConfig cfg;
    cfg.epsilon = epsilon;
    cfg.step_size = epsilon > 0.0 ? epsilon : 1.0;  // step is irrelevant at budget 0
    cfg.iterations = 1;
    cfg.target = target;
    cfg.random_start = false;
    return pgd_linf(base, head, x, y_true, cfg);
}

// Attacks every example of a labeled dataset; provenance records the target
// and budget. Labels are preserved for left-set accuracy evaluation.
inline Dataset attack_dataset(const BaseModel& base, const Head* head, const Dataset& data,
                              const AttackConfig& cfg) {
    cfg.validate();
    if (!data.has_labels()) throw std::invalid_argument("attack_dataset: dataset must be labeled");
    if (data.input_dim != base.input_dim()) {
        throw std::invalid_argument("attack_dataset: input_dim mismatch");
    }
    std::vector<double> flat;
    std::vector<int> labels;
    flat.reserve(data.size() * data.input_dim);
    for (const auto& e : data.examples) {
        flat.insert(flat.end(), e.input.begin(), e.input.end());
        labels.push_back(e.label);
    }
    const std::vector<double> adv = pgd_linf_batch(base, head, flat, data.size(), labels, cfg);

    Dataset out;
    out.n_classes = data.n_classes;
    out.input_dim = data.input_dim;
    out.provenance = Provenance::adversarial(cfg.target, cfg.epsilon);
    out.examples.resize(data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        out.examples[i].label = labels[i];
        out.examples[i].input.assign(adv.begin() + static_cast<std::ptrdiff_t>(i * data.input_dim),
                                     adv.begin() + static_cast<std::ptrdiff_t>((i + 1) * data.input_dim));
    }
    return out;
}

}  // namespace logitgc
