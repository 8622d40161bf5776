#pragma once

#include <cmath>
#include <map>

#include "fedfreeze/layers.hpp"
#include "fedfreeze/model.hpp"

namespace fedfreeze {

enum class OptKind { SGD, Adam };

inline const char* opt_name(OptKind k) { return k == OptKind::SGD ? "sgd" : "adam"; }

inline OptKind opt_from_name(const std::string& name) {
    if (name == "sgd") return OptKind::SGD;
    if (name == "adam") return OptKind::Adam;
    throw ConfigError("unknown optimizer: " + name);
}

// Per-round optimizer state. Clients are stateless across rounds, so one of
// these is constructed fresh for every local update.
template <typename S>
struct OptimizerT {
    OptKind kind = OptKind::Adam;
    double learning_rate = 0.01;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
    int64_t step_count = 0;
    std::map<int, std::vector<TensorT<S>>> m1, m2;  // Adam moments, lazily shaped

    OptimizerT() = default;
    OptimizerT(OptKind k, double lr) : kind(k), learning_rate(lr) {
        if (!(lr >= 0.0) || !std::isfinite(lr))
            throw ConfigError("learning rate must be a finite non-negative number");
    }
};

using Optimizer32 = OptimizerT<float>;
using Optimizer64 = OptimizerT<double>;

// Applies one update to exactly the masked layers; everything else is left
// bit-identical. Gradient entries must cover the mask (empty placeholder
// tensors — batch-norm running stats — are skipped).
template <typename S>
void optimizer_step(ModelT<S>& model, const GradientsT<S>& grads, OptimizerT<S>& opt,
                    const FreezeMask& mask) {
    opt.step_count += 1;
    const double lr = opt.learning_rate;
    const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(opt.step_count));
    const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(opt.step_count));

    for (int li : mask.layer_indices(model.arch)) {
        auto it = grads.by_layer.find(li);
        if (it == grads.by_layer.end())
            throw ShapeError("gradients missing for masked layer " + std::to_string(li));
        auto& tensors = model.params[static_cast<size_t>(li)];
        const auto& gs = it->second;
        if (gs.size() != tensors.size())
            throw ShapeError("gradient arity mismatch for layer " + std::to_string(li));

        for (size_t p = 0; p < tensors.size(); ++p) {
            const auto& g = gs[p];
            if (g.numel() == 0) continue;
            auto& w = tensors[p];
            if (g.shape != w.shape)
                throw ShapeError("gradient shape mismatch for layer " + std::to_string(li));

            if (opt.kind == OptKind::SGD) {
                for (size_t j = 0; j < w.numel(); ++j)
                    w[j] = static_cast<S>(static_cast<double>(w[j]) -
                                          lr * static_cast<double>(g[j]));
                continue;
            }

            auto& m1 = opt.m1[li];
            auto& m2 = opt.m2[li];
            if (m1.size() != tensors.size()) {
                m1.clear();
                m2.clear();
                for (const auto& t : tensors) {
                    m1.emplace_back(t.shape);
                    m2.emplace_back(t.shape);
                }
            }
            auto& m = m1[p];
            auto& v = m2[p];
            for (size_t j = 0; j < w.numel(); ++j) {
                const double gj = static_cast<double>(g[j]);
                const double mj = opt.beta1 * static_cast<double>(m[j]) + (1.0 - opt.beta1) * gj;
                const double vj = opt.beta2 * static_cast<double>(v[j]) + (1.0 - opt.beta2) * gj * gj;
                m[j] = static_cast<S>(mj);
                v[j] = static_cast<S>(vj);
                const double mhat = mj / bc1;
                const double vhat = vj / bc2;
                w[j] = static_cast<S>(static_cast<double>(w[j]) -
                                      lr * mhat / (std::sqrt(vhat) + opt.epsilon));
            }
        }
    }
}

// One full training step: forward, mean-CE backward, parameter update, and
// batch-norm stat refresh for masked layers. Returns the batch loss.
template <typename S>
double train_step(ModelT<S>& model, const TensorT<S>& batch, const std::vector<int>& labels,
                  const FreezeMask& mask, OptimizerT<S>& opt) {
    ForwardTrace<S> trace;
    forward(model, batch, Phase::Train, &trace);
    const double loss = mean_cross_entropy(trace.output, labels);
    if (!std::isfinite(loss)) throw NumericError("training diverged: non-finite loss");
    GradientsT<S> grads = backward(model, trace, labels, mask);
    optimizer_step(model, grads, opt, mask);
    update_batchnorm_stats(model, trace, mask);
    return loss;
}

}  // namespace fedfreeze
