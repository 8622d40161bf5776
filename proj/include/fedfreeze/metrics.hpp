#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfreeze/loss.hpp"
#include "fedfreeze/tensor.hpp"

namespace fedfreeze {

// One-vs-rest confusion totals (micro accounting for multiclass):
// TP+TN+FP+FN == classes * samples.
struct ConfusionCounts {
    int64_t tp = 0, tn = 0, fp = 0, fn = 0;

    int64_t total() const { return tp + tn + fp + fn; }
};

// (TP+TN)/(TP+TN+FN+FP) * 100
double accuracy_percent(const ConfusionCounts& c);

ConfusionCounts micro_counts(const std::vector<int>& predictions, const std::vector<int>& labels,
                             int classes);

// top-1 match rate * 100; the figure reported for multiclass runs
double top1_accuracy_percent(const std::vector<int>& predictions, const std::vector<int>& labels);

// micro-averaged precision * 100 == top-1 accuracy for single-label data
double micro_precision_percent(const ConfusionCounts& c);

// Mean categorical cross-entropy against one-hot targets; predictions are
// floored at 1e-12 before the log.
template <typename S>
double cross_entropy(const TensorT<S>& onehot, const TensorT<S>& probs) {
    if (onehot.shape != probs.shape || probs.shape.size() != 2)
        throw ShapeError("cross-entropy expects matching [batch, classes] tensors");
    const size_t batch = static_cast<size_t>(probs.shape[0]);
    const size_t classes = static_cast<size_t>(probs.shape[1]);
    double total = 0.0;
    for (size_t b = 0; b < batch; ++b)
        for (size_t c = 0; c < classes; ++c) {
            const double y = static_cast<double>(onehot[b * classes + c]);
            if (y == 0.0) continue;
            total -= y * std::log(std::max(static_cast<double>(probs[b * classes + c]), kProbFloor));
        }
    return total / static_cast<double>(batch);
}

// Per (client, unit) selection counts accumulated over a run.
struct SelectionHistogram {
    int clients = 0;
    int units = 0;
    std::vector<int64_t> counts;            // client-major, clients * units
    std::vector<int64_t> rounds_participated;  // per client

    SelectionHistogram() = default;
    SelectionHistogram(int n_clients, int n_units)
        : clients(n_clients),
          units(n_units),
          counts(static_cast<size_t>(n_clients) * static_cast<size_t>(n_units), 0),
          rounds_participated(static_cast<size_t>(n_clients), 0) {}

    int64_t& at(int client, int unit) {
        return counts[static_cast<size_t>(client) * static_cast<size_t>(units) +
                      static_cast<size_t>(unit)];
    }
    int64_t at(int client, int unit) const {
        return counts[static_cast<size_t>(client) * static_cast<size_t>(units) +
                      static_cast<size_t>(unit)];
    }
    void record(int client, const std::vector<int>& selected_units) {
        rounds_participated[static_cast<size_t>(client)] += 1;
        for (int u : selected_units) at(client, u) += 1;
    }
    int64_t unit_total(int unit) const {
        int64_t t = 0;
        for (int c = 0; c < clients; ++c) t += at(c, unit);
        return t;
    }
    int64_t draws() const {
        int64_t t = 0;
        for (int64_t r : rounds_participated) t += r;
        return t;
    }
};

struct UniformityStats {
    double max_abs_deviation = 0.0;  // empirical per-unit frequency vs N_l / L
    double chi_square = 0.0;         // against the uniform expectation
    int dof = 0;
};

UniformityStats selection_uniformity(const SelectionHistogram& hist, int layer_budget);

// Chi-square distribution helpers (regularized incomplete gamma under the
// hood); quantile solved by bisection.
double chi_square_cdf(double x, int dof);
double chi_square_quantile(double p, int dof);

struct ClientRoundStat {
    int client_id = 0;
    uint64_t sample_count = 0;
    double loss = 0.0;
    double accuracy = 0.0;
};

// One row of the per-round metrics CSV.
struct MetricsRecord {
    int round = 0;
    double accuracy = 0.0;  // percent
    double loss = 0.0;
    std::vector<ClientRoundStat> per_client;
    uint64_t uplink_bytes = 0;
    uint64_t downlink_bytes = 0;
    std::vector<int64_t> unit_selections;  // per unit, summed over sampled clients
    double wall_time_sec = 0.0;            // reported to stdout only, never to artifacts
};

}  // namespace fedfreeze
