#pragma once

#include <algorithm>
#include <cstdint>
#include <vector>

#include "fedfreeze/serialize.hpp"

namespace fedfreeze {

struct RoundPlan {
    int round = 0;
    std::vector<int> sampled_clients;  // S_t, sorted
    double client_fraction = 1.0;
    int layer_budget = 1;
    int total_rounds = 1;
};

// Layer-wise weighted average of the received partial updates. For a unit
// trained by clients T: new value = sum_{k in T} (n_k / sum_{j in T} n_j) * W_k.
// Units trained by nobody carry the previous global value forward bit-exactly.
// Updates are summed in ascending client order with double accumulation, so
// the result does not depend on arrival order.
template <typename S>
ModelT<S> aggregate(const std::vector<PartialUpdateT<S>>& updates, const ModelT<S>& previous_global) {
    if (updates.empty()) throw RoundError("aggregate needs at least one update");
    const auto& arch = previous_global.arch;

    std::vector<const PartialUpdateT<S>*> ordered;
    ordered.reserve(updates.size());
    for (const auto& u : updates) ordered.push_back(&u);
    std::sort(ordered.begin(), ordered.end(),
              [](const auto* a, const auto* b) { return a->meta.client_id < b->meta.client_id; });

    const uint32_t round = ordered.front()->meta.round;
    for (const auto* u : ordered) {
        if (u->meta.round != round) throw RoundError("updates from different rounds");
        if (u->meta.sample_count == 0) throw RoundError("update with zero sample count");
        for (int li : u->mask.layer_indices(arch))
            if (!u->tensors.count(li))
                throw ShapeError("update from client " + std::to_string(u->meta.client_id) +
                                 " is missing tensors for layer " + std::to_string(li));
        for (const auto& [li, tensors] : u->tensors) {
            if (li < 0 || li >= arch.num_layers())
                throw ShapeError("update references unknown layer");
            const auto expected = param_shapes(arch.layers[static_cast<size_t>(li)]);
            if (tensors.size() != expected.size())
                throw ShapeError("update tensor arity mismatch");
            for (size_t p = 0; p < tensors.size(); ++p) {
                if (tensors[p].shape != expected[p]) throw ShapeError("update tensor shape mismatch");
                if (!tensors[p].all_finite())
                    throw NumericError("rejecting non-finite update from client " +
                                       std::to_string(u->meta.client_id));
            }
        }
    }

    ModelT<S> result = previous_global;  // carry-forward baseline
    for (int unit = 0; unit < arch.trainable_units(); ++unit) {
        std::vector<const PartialUpdateT<S>*> contributors;
        double n_total = 0.0;
        for (const auto* u : ordered)
            if (u->mask.contains(unit)) {
                contributors.push_back(u);
                n_total += static_cast<double>(u->meta.sample_count);
            }
        if (contributors.empty()) continue;

        for (int li : arch.units[static_cast<size_t>(unit)].layer_indices) {
            auto& out_tensors = result.params[static_cast<size_t>(li)];
            for (size_t p = 0; p < out_tensors.size(); ++p) {
                std::vector<double> acc(out_tensors[p].numel(), 0.0);
                for (const auto* u : contributors) {
                    const double coeff = static_cast<double>(u->meta.sample_count) / n_total;
                    const auto& t = u->tensors.at(li)[p];
                    for (size_t j = 0; j < acc.size(); ++j)
                        acc[j] += coeff * static_cast<double>(t[j]);
                }
                for (size_t j = 0; j < acc.size(); ++j) out_tensors[p][j] = static_cast<S>(acc[j]);
            }
        }
    }
    return result;
}

// Per-unit aggregation coefficients, exposed for verification: each inner
// vector holds n_k / sum(n_j) over that unit's contributors (empty if the
// unit was untrained this round).
template <typename S>
std::vector<std::vector<double>> aggregation_coefficients(
    const std::vector<PartialUpdateT<S>>& updates, const ArchitectureDescriptor& arch) {
    std::vector<std::vector<double>> out(static_cast<size_t>(arch.trainable_units()));
    for (int unit = 0; unit < arch.trainable_units(); ++unit) {
        double n_total = 0.0;
        for (const auto& u : updates)
            if (u.mask.contains(unit)) n_total += static_cast<double>(u.meta.sample_count);
        if (n_total == 0.0) continue;
        for (const auto& u : updates)
            if (u.mask.contains(unit))
                out[static_cast<size_t>(unit)].push_back(
                    static_cast<double>(u.meta.sample_count) / n_total);
    }
    return out;
}

// Optional damping step: W_prev + (W_agg - W_prev) / t. At t = 1 this is
// W_agg. Disabled by default; plain FedAvg keeps W_agg untouched.
template <typename S>
ModelT<S> apply_round_smoothing(const ModelT<S>& w_prev, const ModelT<S>& w_agg, int t,
                                bool enabled) {
    if (t < 1) throw ConfigError("round index must be >= 1");
    if (!enabled || t == 1) return w_agg;
    ModelT<S> out = w_agg;
    const double inv_t = 1.0 / static_cast<double>(t);
    for (size_t i = 0; i < out.params.size(); ++i)
        for (size_t p = 0; p < out.params[i].size(); ++p) {
            const auto& prev = w_prev.params[i][p];
            auto& cur = out.params[i][p];
            if (prev.shape != cur.shape) throw ShapeError("smoothing shape mismatch");
            for (size_t j = 0; j < cur.numel(); ++j) {
                const double pv = static_cast<double>(prev[j]);
                cur[j] = static_cast<S>(pv + (static_cast<double>(cur[j]) - pv) * inv_t);
            }
        }
    return out;
}

// Server-side accumulation state across rounds.
template <typename S>
struct GlobalStateT {
    ModelT<S> model;            // M
    ModelT<S> previous;         // W_{t-1}, for the smoothing variant
    int round = 0;              // last completed round
    std::vector<int64_t> unit_contributions;  // how many updates ever trained each unit

    explicit GlobalStateT(ModelT<S> initial)
        : model(std::move(initial)),
          previous(model),
          unit_contributions(static_cast<size_t>(model.arch.trainable_units()), 0) {}

    void advance(const std::vector<PartialUpdateT<S>>& updates, bool smoothing) {
        const int t = round + 1;
        ModelT<S> agg = aggregate(updates, model);
        ModelT<S> next = apply_round_smoothing(model, agg, t, smoothing);
        previous = std::move(model);
        model = std::move(next);
        round = t;
        for (const auto& u : updates)
            for (int unit : u.mask.units) unit_contributions[static_cast<size_t>(unit)] += 1;
    }
};

using GlobalState32 = GlobalStateT<float>;

}  // namespace fedfreeze
