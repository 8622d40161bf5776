#pragma once

#include <cstdint>

#include "fedfreeze/dataset.hpp"
#include "fedfreeze/loss.hpp"
#include "fedfreeze/metrics.hpp"
#include "fedfreeze/optimizer.hpp"
#include "fedfreeze/serialize.hpp"

namespace fedfreeze {

struct ClientConfig {
    int client_id = 0;
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 0.01;
    OptKind optimizer = OptKind::Adam;
    int layer_budget = 1;   // N_l
    uint64_t run_seed = 0;  // selection/shuffle streams derive from this

    void validate(int total_units) const {
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size < 1) throw ConfigError("batch size must be >= 1");
        if (layer_budget < 1 || layer_budget > total_units)
            throw ConfigError("layer budget N_l must satisfy 1 <= N_l <= " +
                              std::to_string(total_units));
    }
};

// Uniform N_l-subset of the trainable units, without replacement.
inline FreezeMask select_layers(int total_units, int layer_budget, Rng& rng) {
    if (layer_budget < 1 || layer_budget > total_units)
        throw ConfigError("layer budget out of range");
    return FreezeMask{rng.sample_without_replacement(total_units, layer_budget)};
}

inline Rng selection_rng(uint64_t run_seed, int client_id, int round) {
    return Rng(mix_seed({run_seed, seed_stream::kLayerSelect, static_cast<uint64_t>(client_id),
                         static_cast<uint64_t>(round)}));
}

template <typename S>
struct EvalResult {
    double loss = 0.0;
    double accuracy = 0.0;  // percent, top-1
};

// Full pass over a partition in Eval phase.
template <typename S>
EvalResult<S> evaluate_partition(const ModelT<S>& model, const Partition& part,
                                 int batch_size = 256) {
    EvalResult<S> r;
    const size_t n = part.sample_count();
    if (n == 0) throw ConfigError("cannot evaluate an empty partition");
    size_t hits = 0;
    double loss_sum = 0.0;
    for (size_t at = 0; at < n; at += static_cast<size_t>(batch_size)) {
        const size_t take = std::min(static_cast<size_t>(batch_size), n - at);
        std::vector<size_t> idx(take);
        for (size_t i = 0; i < take; ++i) idx[i] = at + i;
        const auto x = rows_as_tensor<S>(part, idx);
        std::vector<int> y(take);
        for (size_t i = 0; i < take; ++i) y[i] = part.labels[at + i];
        const auto probs = forward(model, x, Phase::Eval);
        loss_sum += mean_cross_entropy(probs, y) * static_cast<double>(take);
        const auto preds = argmax_rows(probs);
        for (size_t i = 0; i < take; ++i)
            if (preds[i] == y[i]) ++hits;
    }
    r.loss = loss_sum / static_cast<double>(n);
    r.accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(n);
    return r;
}

// Algorithm of one client round: copy the received global model, pick N_l
// units at random, run e local epochs of minibatch updates on exactly those
// units, and return only their parameters. Untrained layers of the local
// model never change, so the update plus the global model reconstructs the
// client's final state exactly.
template <typename S>
PartialUpdateT<S> client_update(const ClientConfig& cfg, const Partition& part,
                                const ModelT<S>& global, int round) {
    const auto& arch = global.arch;
    cfg.validate(arch.trainable_units());
    if (part.sample_count() == 0)
        throw ConfigError("client " + std::to_string(cfg.client_id) + " has an empty partition");

    ModelT<S> local = global;
    Rng sel_rng = selection_rng(cfg.run_seed, cfg.client_id, round);
    const FreezeMask mask = select_layers(arch.trainable_units(), cfg.layer_budget, sel_rng);

    OptimizerT<S> opt(cfg.optimizer, cfg.learning_rate);

    // one shuffle per round; epochs replay the same batch sequence
    std::vector<size_t> order(part.sample_count());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed({cfg.run_seed, seed_stream::kBatchShuffle,
                              static_cast<uint64_t>(cfg.client_id), static_cast<uint64_t>(round)}));
    shuffle_rng.shuffle(order);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (size_t at = 0; at < order.size(); at += static_cast<size_t>(cfg.batch_size)) {
            const size_t take = std::min(static_cast<size_t>(cfg.batch_size), order.size() - at);
            std::vector<size_t> idx(order.begin() + static_cast<long>(at),
                                    order.begin() + static_cast<long>(at + take));
            const auto x = rows_as_tensor<S>(part, idx);
            std::vector<int> y(take);
            for (size_t i = 0; i < take; ++i) y[i] = part.labels[idx[i]];
            train_step(local, x, y, mask, opt);
        }
    }

    const auto eval = evaluate_partition(local, part);

    PartialUpdateT<S> upd;
    upd.meta.round = static_cast<uint32_t>(round);
    upd.meta.client_id = static_cast<uint32_t>(cfg.client_id);
    upd.meta.sample_count = part.sample_count();
    upd.meta.local_loss = eval.loss;
    upd.meta.local_accuracy = eval.accuracy;
    upd.mask = mask;
    for (int li : mask.layer_indices(arch))
        upd.tensors[li] = local.params[static_cast<size_t>(li)];
    return upd;
}

}  // namespace fedfreeze
