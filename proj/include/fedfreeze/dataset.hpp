#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfreeze/rng.hpp"
#include "fedfreeze/tensor.hpp"

namespace fedfreeze {

struct Dataset {
    int classes = 0;
    int dims = 0;
    std::vector<float> features;  // row-major, size() * dims
    std::vector<int> labels;

    size_t size() const { return labels.size(); }
    const float* row(size_t i) const { return features.data() + i * static_cast<size_t>(dims); }
};

// One client's slice of a dataset. Partitions of a dataset are disjoint and
// together cover it; sample_count is the n_k that weights this client in
// the aggregation.
struct Partition {
    int client_id = 0;
    int classes = 0;
    int dims = 0;
    std::vector<float> features;
    std::vector<int> labels;

    size_t sample_count() const { return labels.size(); }
};

// Gaussian class clusters; class means are drawn once from
// U(-separation, separation)^dims, samples get unit-variance noise.
Dataset generate_blobs(int classes, int dims, int samples, uint64_t seed, double separation = 3.0,
                       double cluster_std = 1.0);

// Header row, float feature columns, final integer label column.
Dataset load_csv(const std::string& path);

// Seeded split into a training set and a held-out evaluation set.
std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction, uint64_t seed);

// Equal-size (±1) shuffled split.
std::vector<Partition> partition_iid(const Dataset& ds, int n_clients, uint64_t seed);

// Class-skewed split: for every class, the per-client share is drawn from
// Dirichlet(alpha); small alpha concentrates classes on few clients.
// Resamples (bounded) if any client ends up empty.
std::vector<Partition> partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                           uint64_t seed);

// Batch of rows as a [n, dims] tensor in the requested scalar type.
template <typename S>
TensorT<S> rows_as_tensor(const Partition& part, const std::vector<size_t>& indices) {
    TensorT<S> t({static_cast<int>(indices.size()), part.dims});
    for (size_t i = 0; i < indices.size(); ++i)
        for (int d = 0; d < part.dims; ++d)
            t[i * static_cast<size_t>(part.dims) + static_cast<size_t>(d)] =
                static_cast<S>(part.features[indices[i] * static_cast<size_t>(part.dims) +
                                             static_cast<size_t>(d)]);
    return t;
}

template <typename S>
TensorT<S> dataset_as_tensor(const Dataset& ds) {
    TensorT<S> t({static_cast<int>(ds.size()), ds.dims});
    for (size_t i = 0; i < t.numel(); ++i) t[i] = static_cast<S>(ds.features[i]);
    return t;
}

}  // namespace fedfreeze
