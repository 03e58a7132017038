#pragma once

#include <cmath>
#include <set>
#include <string>
#include <vector>

#include "logitgc/adam.hpp"
#include "logitgc/base_model.hpp"
#include "logitgc/io_util.hpp"
#include "logitgc/logit_dataset.hpp"
#include "logitgc/mlp.hpp"
#include "logitgc/rng.hpp"
#include "logitgc/tensor.hpp"

namespace logitgc {

// The generative head derived from a frozen classifier's logits: a logit
// encoder, an MI scorer over (logit, representation) pairs, and one diagonal
// Gaussian per class on the representations. Trained by maximizing a
// Jensen-Shannon MI lower bound while pushing true-class densities up and
// false-class densities down.

constexpr double kLog2Pi = 1.8378770664093454835606594728112;
constexpr double kLogVarClampLo = -6.0;
constexpr double kLogVarClampHi = 6.0;

// ---------------------------------------------------------------------------
// Gaussian class embedding
// ---------------------------------------------------------------------------

// Per-class diagonal Gaussian over representations. Log-variances are stored
// unconstrained and clamped to [-6, 6] wherever they are used, which keeps
// every density finite.
class GaussianClassEmbedding {
  public:
    GaussianClassEmbedding() = default;

    GaussianClassEmbedding(std::size_t n_classes, std::size_t rep_dim, Rng& rng, bool trainable)
        : n_classes_(n_classes), rep_dim_(rep_dim) {
        std::vector<double> mu(n_classes * rep_dim);
        for (auto& x : mu) x = 0.1 * rng.normal();
        mu_ = Tensor::matrix(n_classes, rep_dim, std::move(mu), trainable);
        log_var_ = Tensor::zeros({n_classes, rep_dim}, trainable);
    }

    static GaussianClassEmbedding from_values(std::size_t n_classes, std::size_t rep_dim,
                                              std::vector<double> mu, std::vector<double> log_var,
                                              bool trainable = false) {
        GaussianClassEmbedding g;
        g.n_classes_ = n_classes;
        g.rep_dim_ = rep_dim;
        g.mu_ = Tensor::matrix(n_classes, rep_dim, std::move(mu), trainable);
        g.log_var_ = Tensor::matrix(n_classes, rep_dim, std::move(log_var), trainable);
        return g;
    }

    std::size_t n_classes() const { return n_classes_; }
    std::size_t rep_dim() const { return rep_dim_; }
    const Tensor& mu() const { return mu_; }
    const Tensor& log_var() const { return log_var_; }
    std::vector<Tensor> parameters() const { return {mu_, log_var_}; }

    // log p(rep | y) for one representation.
    double log_prob(std::span<const double> rep, std::size_t y) const {
        if (y >= n_classes_) {
            throw std::invalid_argument("GaussianClassEmbedding::log_prob: class " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(n_classes_) + ")");
        }
        if (rep.size() != rep_dim_) {
            throw std::invalid_argument("GaussianClassEmbedding::log_prob: representation length " +
                                        std::to_string(rep.size()) + " != rep_dim " + std::to_string(rep_dim_));
        }
        double acc = 0.0;
        for (std::size_t i = 0; i < rep_dim_; ++i) {
            const double lv = std::clamp(log_var_.at(y, i), kLogVarClampLo, kLogVarClampHi);
            const double var = std::exp(lv);
            const double diff = rep[i] - mu_.at(y, i);
            acc += -0.5 * (kLog2Pi + lv) - diff * diff / (2.0 * var);
        }
        return acc;
    }

    std::vector<double> log_probs(std::span<const double> rep) const {
        std::vector<double> out(n_classes_);
        for (std::size_t c = 0; c < n_classes_; ++c) out[c] = log_prob(rep, c);
        return out;
    }

    // [B x C] matrix of log p(rep_i | c), differentiable through the graph.
    // Built from primitive ops via the quadratic expansion
    // (x - mu)^2 = x^2 - 2 x mu + mu^2 against the inverse variances.
    Tensor log_prob_matrix(const Tensor& reps) const {
        if (reps.rank() != 2 || reps.cols() != rep_dim_) {
            throw std::invalid_argument("GaussianClassEmbedding::log_prob_matrix: reps " +
                                        detail::shape_str(reps.shape()) + " do not match rep_dim " +
                                        std::to_string(rep_dim_));
        }
        const std::size_t batch = reps.rows();
        Tensor lv = clamp(log_var_, kLogVarClampLo, kLogVarClampHi);   // [C x d]
        Tensor iv = exp(neg(lv));                                      // [C x d]
        Tensor quad = matmul(square(reps), transpose(iv));             // [B x C]
        Tensor cross = matmul(reps, transpose(mul(mu_, iv)));          // [B x C]
        Tensor mu_quad = tile_rows(transpose(sum(mul(square(mu_), iv), 1)), batch);
        Tensor lv_sum = tile_rows(transpose(sum(lv, 1)), batch);
        Tensor inner = add(add(sub(quad, mul(cross, 2.0)), mu_quad),
                           add(lv_sum, static_cast<double>(rep_dim_) * kLog2Pi));
        return mul(inner, -0.5);
    }

  private:
    std::size_t n_classes_ = 0;
    std::size_t rep_dim_ = 0;
    Tensor mu_;       // [C x d]
    Tensor log_var_;  // [C x d], unconstrained; clamped in use
};

// ---------------------------------------------------------------------------
// MI evaluation network
// ---------------------------------------------------------------------------

// Scores (logit, representation) pairs: an MLP (C + d) -> hidden -> 1 with
// ELU, applied to the concatenation. The first layer is stored split across
// the two inputs, which lets all-pairs scoring reuse the two small per-input
// products instead of materializing concatenated rows.
class MiNetwork {
  public:
    MiNetwork() = default;

    MiNetwork(std::size_t n_classes, std::size_t rep_dim, std::size_t hidden, Rng& rng, bool trainable)
        : n_classes_(n_classes), rep_dim_(rep_dim), hidden_(hidden) {
        auto init = [&rng](std::size_t fan_in, std::size_t rows, std::size_t cols, bool rg) {
            std::vector<double> v(rows * cols);
            const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& x : v) x = scale * rng.normal();
            return Tensor::matrix(rows, cols, std::move(v), rg);
        };
        const std::size_t fan_in = n_classes + rep_dim;
        w_logit_ = init(fan_in, n_classes, hidden, trainable);
        w_rep_ = init(fan_in, rep_dim, hidden, trainable);
        b1_ = Tensor::zeros({1, hidden}, trainable);
        w2_ = init(hidden, hidden, 1, trainable);
        b2_ = Tensor::zeros({1, 1}, trainable);
    }

    std::size_t n_classes() const { return n_classes_; }
    std::size_t rep_dim() const { return rep_dim_; }
    std::size_t hidden() const { return hidden_; }

    std::vector<Tensor> parameters() const { return {w_logit_, w_rep_, b1_, w2_, b2_}; }

    std::size_t param_count() const {
        return w_logit_.numel() + w_rep_.numel() + b1_.numel() + w2_.numel() + b2_.numel();
    }

    // T(f_i, rep_j) for all ordered pairs, row-major in (i, j): [B^2 x 1].
    // The first-layer bias is folded in at [B x H] scale before the pair
    // expansion; b2 broadcasts as a scalar.
    Tensor score_all_pairs(const Tensor& logits, const Tensor& reps) const {
        check_inputs(logits, reps);
        const std::size_t batch = logits.rows();
        Tensor from_logits = add(matmul(logits, w_logit_), tile_rows(b1_, batch));  // [B x H]
        Tensor from_reps = matmul(reps, w_rep_);                                    // [B x H]
        Tensor pre = pair_row_sum(from_logits, from_reps);                          // [B^2 x H]
        return add(matmul(elu(pre), w2_), b2_);
    }

    // T on matched rows only: [B x 1].
    Tensor score_pairs(const Tensor& logits, const Tensor& reps) const {
        check_inputs(logits, reps);
        Tensor pre = add(add(matmul(logits, w_logit_), matmul(reps, w_rep_)), tile_rows(b1_, logits.rows()));
        return add(matmul(elu(pre), w2_), b2_);
    }

    // Zeroing the output layer makes T identically zero regardless of inputs.
    void zero_output_layer() {
        auto w = w2_.values_mut();
        std::fill(w.begin(), w.end(), 0.0);
        auto b = b2_.values_mut();
        std::fill(b.begin(), b.end(), 0.0);
    }

    json to_json() const {
        // First layer serialized as one (C + d) x hidden matrix over the
        // concatenated input, logit rows first.
        std::vector<double> first;
        first.insert(first.end(), w_logit_.values().begin(), w_logit_.values().end());
        first.insert(first.end(), w_rep_.values().begin(), w_rep_.values().end());
        json j;
        j["hidden"] = hidden_;
        j["layers"] = json::array();
        json l0;
        l0["w"] = matrix_to_json(first, n_classes_ + rep_dim_, hidden_);
        l0["b"] = json(std::vector<double>(b1_.values().begin(), b1_.values().end()));
        j["layers"].push_back(std::move(l0));
        json l1;
        l1["w"] = matrix_to_json({w2_.values().begin(), w2_.values().end()}, hidden_, 1);
        l1["b"] = json(std::vector<double>(b2_.values().begin(), b2_.values().end()));
        j["layers"].push_back(std::move(l1));
        return j;
    }

    static MiNetwork from_json(const json& j, std::size_t n_classes, std::size_t rep_dim,
                               const std::string& what) {
        MiNetwork net;
        net.n_classes_ = n_classes;
        net.rep_dim_ = rep_dim;
        net.hidden_ = j.at("hidden").get<std::size_t>();
        const auto& layers = j.at("layers");
        if (!layers.is_array() || layers.size() != 2) throw ConfigError(what + ": expected 2 layers");
        auto first = matrix_from_json(layers[0].at("w"), n_classes + rep_dim, net.hidden_, what + ".w0");
        std::vector<double> wl(first.begin(), first.begin() + static_cast<std::ptrdiff_t>(n_classes * net.hidden_));
        std::vector<double> wr(first.begin() + static_cast<std::ptrdiff_t>(n_classes * net.hidden_), first.end());
        net.w_logit_ = Tensor::matrix(n_classes, net.hidden_, std::move(wl));
        net.w_rep_ = Tensor::matrix(rep_dim, net.hidden_, std::move(wr));
        auto b1 = layers[0].at("b").get<std::vector<double>>();
        auto w2 = matrix_from_json(layers[1].at("w"), net.hidden_, 1, what + ".w1");
        auto b2 = layers[1].at("b").get<std::vector<double>>();
        if (b1.size() != net.hidden_ || b2.size() != 1) throw ConfigError(what + ": bias length mismatch");
        net.b1_ = Tensor::from({1, net.hidden_}, std::move(b1));
        net.w2_ = Tensor::matrix(net.hidden_, 1, std::move(w2));
        net.b2_ = Tensor::from({1, 1}, std::move(b2));
        return net;
    }

  private:
    void check_inputs(const Tensor& logits, const Tensor& reps) const {
        if (logits.rank() != 2 || logits.cols() != n_classes_) {
            throw std::invalid_argument("MiNetwork: logits " + detail::shape_str(logits.shape()) +
                                        " do not match n_classes " + std::to_string(n_classes_));
        }
        if (reps.rank() != 2 || reps.cols() != rep_dim_ || reps.rows() != logits.rows()) {
            throw std::invalid_argument("MiNetwork: reps " + detail::shape_str(reps.shape()) +
                                        " do not match logits " + detail::shape_str(logits.shape()));
        }
    }

    std::size_t n_classes_ = 0, rep_dim_ = 0, hidden_ = 0;
    Tensor w_logit_;  // [C x H]
    Tensor w_rep_;    // [d x H]
    Tensor b1_;       // [1 x H]
    Tensor w2_;       // [H x 1]
    Tensor b2_;       // [1 x 1]
};

// ---------------------------------------------------------------------------
// MI lower bound
// ---------------------------------------------------------------------------

// Jensen-Shannon MI lower bound from pair scores (row-major (i, j), positives
// on the diagonal): mean over the B matched pairs of -softplus(-T) minus the
// mean over all B(B-1) unmatched in-batch combinations of softplus(T).
inline Tensor jsd_bound_from_scores(const Tensor& scores, std::size_t batch) {
    if (batch < 2) throw std::invalid_argument("jsd_bound_from_scores: batch must be >= 2");
    if (scores.rank() != 2 || scores.rows() != batch * batch || scores.cols() != 1) {
        throw std::invalid_argument("jsd_bound_from_scores: scores " + detail::shape_str(scores.shape()) +
                                    " do not match batch " + std::to_string(batch));
    }
    std::vector<double> pos(batch * batch, 0.0), neg_mask(batch * batch, 1.0);
    for (std::size_t i = 0; i < batch; ++i) {
        pos[i * batch + i] = 1.0;
        neg_mask[i * batch + i] = 0.0;
    }
    Tensor pos_sel = Tensor::matrix(1, batch * batch, std::move(pos));
    Tensor neg_sel = Tensor::matrix(1, batch * batch, std::move(neg_mask));
    Tensor pos_term = mul(matmul(pos_sel, neg(softplus(neg(scores)))), 1.0 / static_cast<double>(batch));
    Tensor neg_term =
        mul(matmul(neg_sel, softplus(scores)), 1.0 / static_cast<double>(batch * (batch - 1)));
    return sub(pos_term, neg_term);
}

// MI estimate between a logit batch and its representations.
inline Tensor jsd_mi_bound(const MiNetwork& t, const Tensor& logits_batch, const Tensor& reps_batch) {
    const std::size_t batch = logits_batch.rows();
    if (batch < 2) {
        throw std::invalid_argument("jsd_mi_bound: batch of " + std::to_string(batch) +
                                    " has no negative pairs; need at least 2 samples");
    }
    return jsd_bound_from_scores(t.score_all_pairs(logits_batch, reps_batch), batch);
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossConfig {
    double alpha = 1.0;
    double beta = 1.0;
    double gamma = 1.0;
    double margin = 10.0;  // nats
    std::size_t rep_dim = 64;
    std::size_t hidden = 64;
    std::size_t batch_size = 64;
    std::size_t epochs = 40;
    double lr = 1e-3;
    std::uint64_t seed = 0;

    void validate() const {
        if (alpha < 0.0 || beta < 0.0 || gamma < 0.0) {
            throw std::invalid_argument("LossConfig: scaling factors must be nonnegative");
        }
        if (alpha + beta + gamma <= 0.0) {
            throw std::invalid_argument("LossConfig: at least one scaling factor must be positive");
        }
        if (!(margin > 0.0)) throw std::invalid_argument("LossConfig: margin must be positive");
        if (batch_size < 2) throw std::invalid_argument("LossConfig: batch_size must be >= 2");
        if (rep_dim == 0 || hidden == 0) throw std::invalid_argument("LossConfig: dims must be positive");
        if (epochs == 0) throw std::invalid_argument("LossConfig: epochs must be positive");
    }

    json to_json() const {
        return json{{"alpha", alpha},       {"beta", beta},   {"gamma", gamma},
                    {"margin", margin},     {"rep_dim", rep_dim}, {"hidden", hidden},
                    {"batch_size", batch_size}, {"epochs", epochs}, {"lr", lr},
                    {"seed", seed}};
    }

    static LossConfig from_json(const json& j) {
        LossConfig cfg;
        cfg.alpha = j.value("alpha", cfg.alpha);
        cfg.beta = j.value("beta", cfg.beta);
        cfg.gamma = j.value("gamma", cfg.gamma);
        cfg.margin = j.value("margin", cfg.margin);
        cfg.rep_dim = j.value("rep_dim", cfg.rep_dim);
        cfg.hidden = j.value("hidden", cfg.hidden);
        cfg.batch_size = j.value("batch_size", cfg.batch_size);
        cfg.epochs = j.value("epochs", cfg.epochs);
        cfg.lr = j.value("lr", cfg.lr);
        cfg.seed = j.value("seed", cfg.seed);
        return cfg;
    }
};

struct LossBreakdown {
    double j_mi = 0.0;
    double j_nll = 0.0;
    double j_lm = 0.0;
    double total = 0.0;
};

// Mean negative true-class log-density.
inline Tensor loss_nll(const GaussianClassEmbedding& g, const Tensor& reps_batch,
                       const std::vector<int>& labels) {
    Tensor logp = g.log_prob_matrix(reps_batch);
    Tensor onehot = one_hot(labels, g.n_classes());
    return neg(mean(sum(mul(logp, onehot), 1)));
}

// Squared hinge on the true-vs-false log-density gap: mean over samples and
// false classes of max(0, margin - (logp_true - logp_false))^2. Zero exactly
// when every gap clears the margin.
inline Tensor loss_margin(const GaussianClassEmbedding& g, const Tensor& reps_batch,
                          const std::vector<int>& labels, double margin) {
    if (!(margin > 0.0)) throw std::invalid_argument("loss_margin: margin must be positive");
    const std::size_t n_classes = g.n_classes();
    if (n_classes < 2) throw std::invalid_argument("loss_margin: need at least 2 classes");
    const std::size_t batch = reps_batch.rows();
    Tensor logp = g.log_prob_matrix(reps_batch);
    Tensor onehot = one_hot(labels, n_classes);
    Tensor logp_true = sum(mul(logp, onehot), 1);  // [B x 1]
    Tensor gaps = sub(matmul(logp_true, Tensor::full({1, n_classes}, 1.0)), logp);
    Tensor hinge = relu(sub(margin, gaps));
    Tensor false_mask = sub(1.0, onehot);
    const double count = static_cast<double>(batch * (n_classes - 1));
    return mul(sum(mul(square(hinge), false_mask)), 1.0 / count);
}

struct TotalLoss {
    Tensor total;
    LossBreakdown breakdown;
};

// total = alpha * j_mi + beta * j_nll + gamma * j_lm. The recorded breakdown
// satisfies the same identity exactly (identical operation order).
inline TotalLoss total_loss(const LossConfig& cfg, const Tensor& j_mi, const Tensor& j_nll,
                            const Tensor& j_lm) {
    cfg.validate();
    auto component = [](const Tensor& t, const char* name) {
        if (!t.is_scalar()) throw std::invalid_argument(std::string("total_loss: ") + name + " must be scalar");
        if (!std::isfinite(t.value())) {
            throw std::runtime_error(std::string("total_loss: component ") + name + " is non-finite");
        }
        return t.value();
    };
    LossBreakdown b;
    b.j_mi = component(j_mi, "j_mi");
    b.j_nll = component(j_nll, "j_nll");
    b.j_lm = component(j_lm, "j_lm");
    b.total = b.j_mi * cfg.alpha + b.j_nll * cfg.beta + b.j_lm * cfg.gamma;
    Tensor total = add(add(mul(j_mi, cfg.alpha), mul(j_nll, cfg.beta)), mul(j_lm, cfg.gamma));
    return {std::move(total), b};
}

// ---------------------------------------------------------------------------
// Head
// ---------------------------------------------------------------------------

class Head {
  public:
    Head() = default;

    Head(Mlp encoder, MiNetwork mi_net, GaussianClassEmbedding gauss, LossConfig cfg)
        : encoder_(std::move(encoder)), mi_net_(std::move(mi_net)), gauss_(std::move(gauss)), cfg_(cfg) {}

    std::size_t n_classes() const { return encoder_.input_dim(); }
    std::size_t rep_dim() const { return gauss_.rep_dim(); }
    const Mlp& encoder() const { return encoder_; }
    const MiNetwork& mi_net() const { return mi_net_; }
    const GaussianClassEmbedding& gauss() const { return gauss_; }
    const LossConfig& config() const { return cfg_; }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps = encoder_.parameters();
        for (auto& p : mi_net_.parameters()) ps.push_back(p);
        for (auto& p : gauss_.parameters()) ps.push_back(p);
        return ps;
    }

    std::size_t param_count() const {
        return encoder_.param_count() + mi_net_.param_count() + gauss_.mu().numel() +
               gauss_.log_var().numel();
    }

    // Representation of one logit vector (pure forward).
    std::vector<double> encode(const std::vector<double>& logits) const {
        if (logits.size() != n_classes()) {
            throw std::invalid_argument("Head::encode: logit length " + std::to_string(logits.size()) +
                                        " != n_classes " + std::to_string(n_classes()));
        }
        return encoder_.forward_row(logits);
    }

    // Graph-aware encoding of a [B x C] logit batch.
    Tensor encode(const Tensor& logits_batch) const { return encoder_.forward(logits_batch); }

    // Class-conditional log-densities of one logit vector.
    std::vector<double> class_log_probs(const std::vector<double>& logits) const {
        return gauss_.log_probs(encode(logits));
    }

    // argmax_y log p(rep | y), ties to the lowest class index.
    int predict(const std::vector<double>& logits) const {
        return static_cast<int>(argmax_lowest_tie(class_log_probs(logits)));
    }

    json to_json() const {
        json j;
        j["format_version"] = 1;
        j["kind"] = "head";
        j["n_classes"] = n_classes();
        j["rep_dim"] = rep_dim();
        j["encoder"] = json{{"dims", encoder_.dims()}, {"layers", encoder_.to_json()}};
        j["mi_net"] = mi_net_.to_json();
        j["gauss"] = json{{"mu", matrix_to_json({gauss_.mu().values().begin(), gauss_.mu().values().end()},
                                                n_classes(), rep_dim())},
                          {"log_var", matrix_to_json({gauss_.log_var().values().begin(),
                                                      gauss_.log_var().values().end()},
                                                     n_classes(), rep_dim())}};
        j["loss_config"] = cfg_.to_json();
        return j;
    }

    static Head from_json(const json& j) {
        require_format_version(j, 1, "head checkpoint");
        if (j.value("kind", "") != "head") {
            throw ConfigError("head checkpoint: kind is '" + j.value("kind", "") + "', expected 'head'");
        }
        const auto n_classes = j.at("n_classes").get<std::size_t>();
        const auto rep_dim = j.at("rep_dim").get<std::size_t>();
        Head h;
        h.cfg_ = LossConfig::from_json(j.at("loss_config"));
        const auto dims = j.at("encoder").at("dims").get<std::vector<std::size_t>>();
        if (dims.empty() || dims.front() != n_classes || dims.back() != rep_dim) {
            throw ConfigError("head checkpoint: encoder dims inconsistent with n_classes/rep_dim");
        }
        h.encoder_ = Mlp::from_json(j.at("encoder").at("layers"), dims, /*trainable=*/false,
                                    "head checkpoint encoder");
        h.mi_net_ = MiNetwork::from_json(j.at("mi_net"), n_classes, rep_dim, "head checkpoint mi_net");
        h.gauss_ = GaussianClassEmbedding::from_values(
            n_classes, rep_dim, matrix_from_json(j.at("gauss").at("mu"), n_classes, rep_dim, "gauss.mu"),
            matrix_from_json(j.at("gauss").at("log_var"), n_classes, rep_dim, "gauss.log_var"));
        return h;
    }

    static Head load(const std::filesystem::path& path) { return from_json(read_json_file(path)); }
    void save(const std::filesystem::path& path) const { write_json_file(path, to_json()); }

  private:
    friend struct HeadTrainer;
    Mlp encoder_;
    MiNetwork mi_net_;
    GaussianClassEmbedding gauss_;
    LossConfig cfg_;
};

struct HeadTrainResult {
    Head head;
    // Per-epoch means of the loss components; total recomputed from the means
    // so the weighted-sum identity holds for every logged entry.
    std::vector<LossBreakdown> epoch_trace;
};

inline double head_accuracy(const Head& head, const LogitDataset& data) {
    if (data.size() == 0) throw std::invalid_argument("head_accuracy: empty dataset");
    std::size_t correct = 0, labeled = 0;
    for (const auto& row : data.rows) {
        if (row.label == kNoLabel) continue;
        ++labeled;
        if (head.predict(row.logits) == row.label) ++correct;
    }
    if (labeled == 0) throw std::invalid_argument("head_accuracy: no labeled rows");
    return static_cast<double>(correct) / static_cast<double>(labeled);
}

struct HeadTrainer {
    // One optimization step's loss on a logit batch.
    static TotalLoss batch_loss(const Head& head, const Tensor& logit_batch,
                                const std::vector<int>& labels, const LossConfig& cfg) {
        Tensor reps = head.encoder().forward(logit_batch);
        Tensor j_mi = neg(jsd_mi_bound(head.mi_net(), logit_batch, reps));
        Tensor j_nll = loss_nll(head.gauss(), reps, labels);
        Tensor j_lm = loss_margin(head.gauss(), reps, labels, cfg.margin);
        return total_loss(cfg, j_mi, j_nll, j_lm);
    }

    static HeadTrainResult run(const LogitDataset& data, const LossConfig& cfg) {
        cfg.validate();
        data.validate();
        if (data.size() < 2) throw std::invalid_argument("train_head: need at least 2 samples");
        std::set<int> classes_present;
        for (const auto& row : data.rows) {
            if (row.label == kNoLabel) {
                throw std::invalid_argument("train_head: training rows must all be labeled");
            }
            classes_present.insert(row.label);
        }
        if (classes_present.size() < 2) {
            throw std::invalid_argument("train_head: need at least 2 classes present in training labels");
        }

        const std::size_t n_classes = data.n_classes;
        Rng rng(derive_seed(cfg.seed, "head-init"));
        HeadTrainResult result;
        result.head.encoder_ = Mlp::make({n_classes, cfg.hidden, cfg.hidden, cfg.rep_dim}, rng, true);
        result.head.mi_net_ = MiNetwork(n_classes, cfg.rep_dim, cfg.hidden, rng, true);
        result.head.gauss_ = GaussianClassEmbedding(n_classes, cfg.rep_dim, rng, true);
        result.head.cfg_ = cfg;

        AdamOptimizer opt(result.head.parameters(), {.lr = cfg.lr});
        Rng shuffle_rng(derive_seed(cfg.seed, "head-shuffle"));
        std::vector<std::size_t> order(data.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

        for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
            shuffle_rng.shuffle(order);
            LossBreakdown sums;
            std::size_t steps = 0;
            for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
                const std::size_t stop = std::min(start + cfg.batch_size, order.size());
                if (stop - start < 2) continue;  // MI needs a negative pair; drop size-1 remainder
                std::vector<double> flat;
                std::vector<int> labels;
                flat.reserve((stop - start) * n_classes);
                for (std::size_t i = start; i < stop; ++i) {
                    const auto& row = data.rows[order[i]];
                    flat.insert(flat.end(), row.logits.begin(), row.logits.end());
                    labels.push_back(row.label);
                }
                Tensor batch = Tensor::matrix(stop - start, n_classes, std::move(flat));
                try {
                    Graph graph;
                    TotalLoss loss = batch_loss(result.head, batch, labels, cfg);
                    sums.j_mi += loss.breakdown.j_mi;
                    sums.j_nll += loss.breakdown.j_nll;
                    sums.j_lm += loss.breakdown.j_lm;
                    opt.zero_grad();
                    graph.backward(loss.total);
                    opt.step();
                } catch (const std::runtime_error& e) {
                    throw std::runtime_error("train_head: diverged at epoch " + std::to_string(epoch) +
                                             ": " + e.what());
                }
                ++steps;
            }
            if (steps == 0) throw std::invalid_argument("train_head: no usable batches");
            LossBreakdown epoch_mean;
            epoch_mean.j_mi = sums.j_mi / static_cast<double>(steps);
            epoch_mean.j_nll = sums.j_nll / static_cast<double>(steps);
            epoch_mean.j_lm = sums.j_lm / static_cast<double>(steps);
            epoch_mean.total =
                epoch_mean.j_mi * cfg.alpha + epoch_mean.j_nll * cfg.beta + epoch_mean.j_lm * cfg.gamma;
            result.epoch_trace.push_back(epoch_mean);
        }

        for (auto& p : result.head.parameters()) p.set_requires_grad(false);
        return result;
    }
};

// Trains the head on a logit dataset; only head parameters are optimized.
inline HeadTrainResult train_head(const LogitDataset& data, const LossConfig& cfg) {
    return HeadTrainer::run(data, cfg);
}

// Convenience overload over a frozen base: exports logits first, so the
// trajectory is identical whether logits arrive in memory or from a file.
inline HeadTrainResult train_head(const BaseModel& base, const Dataset& data, const LossConfig& cfg) {
    return HeadTrainer::run(export_logits(base, data), cfg);
}

}  // namespace logitgc
