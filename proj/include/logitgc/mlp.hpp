#pragma once

#include <cmath>
#include <vector>

#include "logitgc/io_util.hpp"
#include "logitgc/rng.hpp"
#include "logitgc/tensor.hpp"

namespace logitgc {

struct DenseLayer {
    Tensor w;  // [in x out]
    Tensor b;  // [1 x out]
};

// Fully connected net, ELU on every hidden layer, linear output layer.
class Mlp {
  public:
    Mlp() = default;

    // dims = {in, hidden..., out}
    static Mlp make(const std::vector<std::size_t>& dims, Rng& rng, bool trainable) {
        if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
        Mlp net;
        net.dims_ = dims;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
            std::vector<double> w(fan_in * fan_out);
            const double scale = std::sqrt(2.0 / static_cast<double>(fan_in));
            for (auto& x : w) x = scale * rng.normal();
            DenseLayer layer;
            layer.w = Tensor::matrix(fan_in, fan_out, std::move(w), trainable);
            layer.b = Tensor::zeros({1, fan_out}, trainable);
            net.layers_.push_back(std::move(layer));
        }
        return net;
    }

    // x is [batch x in]; records onto the active graph if one exists.
    Tensor forward(const Tensor& x) const {
        Tensor h = x;
        for (std::size_t l = 0; l < layers_.size(); ++l) {
            const auto& layer = layers_[l];
            Tensor z = add(matmul(h, layer.w), tile_rows(layer.b, h.rows()));
            h = (l + 1 < layers_.size()) ? elu(z) : z;
        }
        return h;
    }

    std::vector<double> forward_row(const std::vector<double>& x) const {
        Tensor out = forward(Tensor::row(x));
        return {out.values().begin(), out.values().end()};
    }

    std::vector<Tensor> parameters() const {
        std::vector<Tensor> ps;
        for (const auto& l : layers_) {
            ps.push_back(l.w);
            ps.push_back(l.b);
        }
        return ps;
    }

    std::size_t param_count() const {
        std::size_t n = 0;
        for (const auto& l : layers_) n += l.w.numel() + l.b.numel();
        return n;
    }

    const std::vector<std::size_t>& dims() const { return dims_; }
    std::size_t input_dim() const { return dims_.front(); }
    std::size_t output_dim() const { return dims_.back(); }
    const std::vector<DenseLayer>& layers() const { return layers_; }

    json to_json() const {
        json layers = json::array();
        for (const auto& l : layers_) {
            json entry;
            entry["w"] = matrix_to_json({l.w.values().begin(), l.w.values().end()}, l.w.rows(), l.w.cols());
            entry["b"] = json(std::vector<double>(l.b.values().begin(), l.b.values().end()));
            layers.push_back(std::move(entry));
        }
        return layers;
    }

    static Mlp from_json(const json& layers, const std::vector<std::size_t>& dims, bool trainable,
                         const std::string& what) {
        if (!layers.is_array() || layers.size() + 1 != dims.size()) {
            throw ConfigError(what + ": expected " + std::to_string(dims.size() - 1) + " layers");
        }
        Mlp net;
        net.dims_ = dims;
        for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
            const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
            const auto& entry = layers[l];
            if (!entry.contains("w") || !entry.contains("b")) {
                throw ConfigError(what + ": layer " + std::to_string(l) + " missing w or b");
            }
            auto w = matrix_from_json(entry["w"], fan_in, fan_out, what + ".w");
            auto b = entry["b"].get<std::vector<double>>();
            if (b.size() != fan_out) {
                throw ConfigError(what + ": layer " + std::to_string(l) + " bias length mismatch");
            }
            DenseLayer layer;
            layer.w = Tensor::matrix(fan_in, fan_out, std::move(w), trainable);
            layer.b = Tensor::from({1, fan_out}, std::move(b), trainable);
            net.layers_.push_back(std::move(layer));
        }
        return net;
    }

  private:
    std::vector<std::size_t> dims_;
    std::vector<DenseLayer> layers_;
};

// FNV-1a over the raw parameter bytes; used to assert frozen models stay put.
inline std::uint64_t param_hash(const std::vector<Tensor>& params) {
    std::uint64_t h = 14695981039346656037ull;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* bytes = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= bytes[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& t : params) {
        mix(t.values().data(), t.values().size() * sizeof(double));
    }
    return h;
}

}  // namespace logitgc
