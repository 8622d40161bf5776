#pragma once

#include <algorithm>
#include <cstring>
#include <vector>

#include "fedfreeze/arch.hpp"
#include "fedfreeze/rng.hpp"
#include "fedfreeze/tensor.hpp"

namespace fedfreeze {

// Set of trainable-unit indices selected for a round. Layers outside the
// mask are frozen: they still run forward and pass gradients upstream but
// never change.
struct FreezeMask {
    std::vector<int> units;  // sorted, unique

    bool contains(int unit) const { return std::binary_search(units.begin(), units.end(), unit); }
    size_t size() const { return units.size(); }
    bool empty() const { return units.empty(); }

    static FreezeMask all(const ArchitectureDescriptor& arch) {
        FreezeMask m;
        m.units.resize(static_cast<size_t>(arch.trainable_units()));
        for (int i = 0; i < arch.trainable_units(); ++i) m.units[static_cast<size_t>(i)] = i;
        return m;
    }
    static FreezeMask none() { return FreezeMask{}; }
    static FreezeMask of(std::vector<int> units) {
        FreezeMask m{std::move(units)};
        std::sort(m.units.begin(), m.units.end());
        m.units.erase(std::unique(m.units.begin(), m.units.end()), m.units.end());
        return m;
    }

    // raw indices of every layer belonging to a selected unit, sorted
    std::vector<int> layer_indices(const ArchitectureDescriptor& arch) const {
        std::vector<int> out;
        for (int u : units) {
            if (u < 0 || u >= arch.trainable_units())
                throw ConfigError("freeze mask references unit " + std::to_string(u) +
                                  " outside [0, " + std::to_string(arch.trainable_units()) + ")");
            for (int li : arch.units[static_cast<size_t>(u)].layer_indices) out.push_back(li);
        }
        std::sort(out.begin(), out.end());
        return out;
    }

    int64_t param_count(const ArchitectureDescriptor& arch) const {
        int64_t n = 0;
        for (int u : units) n += arch.units[static_cast<size_t>(u)].param_count;
        return n;
    }
};

template <typename S>
struct ModelT {
    ArchitectureDescriptor arch;
    // params[layer] in canonical role order (see param_shapes)
    std::vector<std::vector<TensorT<S>>> params;

    const TensorT<S>& param(int layer, int role) const {
        return params[static_cast<size_t>(layer)][static_cast<size_t>(role)];
    }
    TensorT<S>& param(int layer, int role) {
        return params[static_cast<size_t>(layer)][static_cast<size_t>(role)];
    }

    bool all_finite() const {
        for (const auto& layer : params)
            for (const auto& t : layer)
                if (!t.all_finite()) return false;
        return true;
    }

    template <typename T>
    ModelT<T> cast() const {
        ModelT<T> out;
        out.arch = arch;
        out.params.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i)
            for (const auto& t : params[i]) out.params[i].push_back(t.template cast<T>());
        return out;
    }
};

using Model32 = ModelT<float>;
using Model64 = ModelT<double>;

// Glorot-uniform weights, zero biases, identity batch-norm. Initialization
// draws are made in double and cast, so float and double instantiations of
// the same seed start from numerically identical models.
template <typename S>
ModelT<S> init_model(const ArchitectureDescriptor& arch, uint64_t seed) {
    ModelT<S> m;
    m.arch = arch;
    m.params.resize(arch.layers.size());
    for (size_t i = 0; i < arch.layers.size(); ++i) {
        const LayerSpec& spec = arch.layers[i];
        if (!spec.parameterized()) continue;
        Rng rng(mix_seed({seed, seed_stream::kModelInit, static_cast<uint64_t>(i)}));
        auto shapes = param_shapes(spec);
        auto& tensors = m.params[i];
        for (const auto& shp : shapes) tensors.emplace_back(shp);
        switch (spec.kind) {
            case LayerKind::Dense: {
                const double fan_in = spec.input_shape[0], fan_out = spec.units;
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& w : tensors[0].data) w = static_cast<S>(rng.uniform(-limit, limit));
                break;  // bias stays zero
            }
            case LayerKind::Conv2D: {
                const double k2 = static_cast<double>(spec.kernel) * spec.kernel;
                const double fan_in = k2 * spec.input_shape[2], fan_out = k2 * spec.filters;
                const double limit = std::sqrt(6.0 / (fan_in + fan_out));
                for (auto& w : tensors[0].data) w = static_cast<S>(rng.uniform(-limit, limit));
                break;
            }
            case LayerKind::BatchNorm: {
                std::fill(tensors[0].data.begin(), tensors[0].data.end(), S(1));  // gamma
                std::fill(tensors[3].data.begin(), tensors[3].data.end(), S(1));  // running var
                break;
            }
            default:
                break;
        }
    }
    return m;
}

template <typename S>
bool models_bitwise_equal(const ModelT<S>& a, const ModelT<S>& b) {
    if (a.params.size() != b.params.size()) return false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].size() != b.params[i].size()) return false;
        for (size_t j = 0; j < a.params[i].size(); ++j) {
            const auto& ta = a.params[i][j];
            const auto& tb = b.params[i][j];
            if (ta.shape != tb.shape) return false;
            if (ta.numel() &&
                std::memcmp(ta.ptr(), tb.ptr(), ta.numel() * sizeof(S)) != 0)
                return false;
        }
    }
    return true;
}

template <typename S>
double max_relative_difference(const ModelT<S>& a, const ModelT<S>& b) {
    double worst = 0.0;
    for (size_t i = 0; i < a.params.size(); ++i)
        for (size_t j = 0; j < a.params[i].size(); ++j)
            for (size_t k = 0; k < a.params[i][j].numel(); ++k) {
                const double x = static_cast<double>(a.params[i][j][k]);
                const double y = static_cast<double>(b.params[i][j][k]);
                const double denom = std::max({std::fabs(x), std::fabs(y), 1e-12});
                worst = std::max(worst, std::fabs(x - y) / denom);
            }
    return worst;
}

}  // namespace fedfreeze
