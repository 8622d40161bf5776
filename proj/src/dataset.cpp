#include "fedfreeze/dataset.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "fedfreeze/errors.hpp"

namespace fedfreeze {

Dataset generate_blobs(int classes, int dims, int samples, uint64_t seed, double separation,
                       double cluster_std) {
    if (classes <= 0 || dims <= 0 || samples <= 0)
        throw ConfigError("blob generator needs positive classes/dims/samples");
    if (classes > samples) throw ConfigError("degenerate blob request: more classes than samples");

    Rng rng(mix_seed({seed, seed_stream::kBlobs}));
    std::vector<double> means(static_cast<size_t>(classes) * static_cast<size_t>(dims));
    for (auto& m : means) m = rng.uniform(-separation, separation);

    Dataset ds;
    ds.classes = classes;
    ds.dims = dims;
    ds.features.resize(static_cast<size_t>(samples) * static_cast<size_t>(dims));
    ds.labels.resize(static_cast<size_t>(samples));
    for (int i = 0; i < samples; ++i) {
        const int c = i % classes;  // equal class counts up to remainder
        ds.labels[static_cast<size_t>(i)] = c;
        for (int d = 0; d < dims; ++d)
            ds.features[static_cast<size_t>(i) * static_cast<size_t>(dims) + static_cast<size_t>(d)] =
                static_cast<float>(
                    means[static_cast<size_t>(c) * static_cast<size_t>(dims) + static_cast<size_t>(d)] +
                    cluster_std * rng.normal());
    }
    return ds;
}

Dataset load_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open CSV: " + path);
    std::string line;
    if (!std::getline(in, line)) throw IoError("CSV is empty: " + path);
    const size_t columns = static_cast<size_t>(std::count(line.begin(), line.end(), ',')) + 1;
    if (columns < 2) throw IoError("CSV needs at least one feature column and a label column");

    Dataset ds;
    ds.dims = static_cast<int>(columns - 1);
    int max_label = -1;
    size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        size_t col = 0;
        while (std::getline(ss, cell, ',')) {
            try {
                if (col + 1 < columns) {
                    ds.features.push_back(std::stof(cell));
                } else {
                    const int label = std::stoi(cell);
                    if (label < 0) throw IoError("negative label");
                    ds.labels.push_back(label);
                    max_label = std::max(max_label, label);
                }
            } catch (const std::exception&) {
                throw IoError("bad value at " + path + ":" + std::to_string(line_no) + " column " +
                              std::to_string(col + 1));
            }
            ++col;
        }
        if (col != columns)
            throw IoError("row width mismatch at " + path + ":" + std::to_string(line_no));
    }
    if (ds.labels.empty()) throw IoError("CSV has no data rows: " + path);
    ds.classes = max_label + 1;
    return ds;
}

namespace {

Dataset take_rows(const Dataset& ds, const std::vector<size_t>& rows) {
    Dataset out;
    out.classes = ds.classes;
    out.dims = ds.dims;
    out.features.reserve(rows.size() * static_cast<size_t>(ds.dims));
    out.labels.reserve(rows.size());
    for (size_t r : rows) {
        const float* src = ds.row(r);
        out.features.insert(out.features.end(), src, src + ds.dims);
        out.labels.push_back(ds.labels[r]);
    }
    return out;
}

Partition partition_from_rows(const Dataset& ds, int client_id, const std::vector<size_t>& rows) {
    Partition p;
    p.client_id = client_id;
    p.classes = ds.classes;
    p.dims = ds.dims;
    p.features.reserve(rows.size() * static_cast<size_t>(ds.dims));
    p.labels.reserve(rows.size());
    for (size_t r : rows) {
        const float* src = ds.row(r);
        p.features.insert(p.features.end(), src, src + ds.dims);
        p.labels.push_back(ds.labels[r]);
    }
    return p;
}

}  // namespace

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, double test_fraction, uint64_t seed) {
    if (test_fraction < 0.0 || test_fraction >= 1.0)
        throw ConfigError("test fraction must be in [0, 1)");
    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed({seed, seed_stream::kTestSplit}));
    rng.shuffle(order);
    const size_t n_test = static_cast<size_t>(test_fraction * static_cast<double>(ds.size()));
    std::vector<size_t> test_rows(order.begin(), order.begin() + static_cast<long>(n_test));
    std::vector<size_t> train_rows(order.begin() + static_cast<long>(n_test), order.end());
    return {take_rows(ds, train_rows), take_rows(ds, test_rows)};
}

std::vector<Partition> partition_iid(const Dataset& ds, int n_clients, uint64_t seed) {
    if (n_clients <= 0) throw ConfigError("need at least one client");
    if (static_cast<size_t>(n_clients) > ds.size())
        throw ConfigError("more clients than samples");

    std::vector<size_t> order(ds.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng rng(mix_seed({seed, seed_stream::kPartition}));
    rng.shuffle(order);

    std::vector<Partition> parts;
    parts.reserve(static_cast<size_t>(n_clients));
    const size_t base = ds.size() / static_cast<size_t>(n_clients);
    const size_t extra = ds.size() % static_cast<size_t>(n_clients);
    size_t at = 0;
    for (int k = 0; k < n_clients; ++k) {
        const size_t n_k = base + (static_cast<size_t>(k) < extra ? 1 : 0);
        std::vector<size_t> rows(order.begin() + static_cast<long>(at),
                                 order.begin() + static_cast<long>(at + n_k));
        at += n_k;
        parts.push_back(partition_from_rows(ds, k, rows));
    }
    return parts;
}

std::vector<Partition> partition_dirichlet(const Dataset& ds, int n_clients, double alpha,
                                           uint64_t seed) {
    if (n_clients <= 0) throw ConfigError("need at least one client");
    if (alpha <= 0.0) throw ConfigError("dirichlet alpha must be positive");

    constexpr int kMaxAttempts = 100;
    Rng rng(mix_seed({seed, seed_stream::kPartition, 0xd12c}));

    std::vector<std::vector<size_t>> by_class(static_cast<size_t>(ds.classes));
    for (size_t i = 0; i < ds.size(); ++i)
        by_class[static_cast<size_t>(ds.labels[i])].push_back(i);

    for (int attempt = 0; attempt < kMaxAttempts; ++attempt) {
        std::vector<std::vector<size_t>> rows(static_cast<size_t>(n_clients));
        for (auto cls : by_class) {
            rng.shuffle(cls);
            const auto shares = rng.dirichlet(alpha, static_cast<size_t>(n_clients));
            // cumulative boundaries keep the split exact: disjoint and covering
            double cum = 0.0;
            size_t start = 0;
            for (int k = 0; k < n_clients; ++k) {
                cum += shares[static_cast<size_t>(k)];
                size_t end = (k + 1 == n_clients)
                                 ? cls.size()
                                 : static_cast<size_t>(cum * static_cast<double>(cls.size()) + 0.5);
                end = std::min(std::max(end, start), cls.size());
                for (size_t i = start; i < end; ++i)
                    rows[static_cast<size_t>(k)].push_back(cls[i]);
                start = end;
            }
        }
        const bool any_empty =
            std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.empty(); });
        if (any_empty) continue;
        std::vector<Partition> parts;
        parts.reserve(static_cast<size_t>(n_clients));
        for (int k = 0; k < n_clients; ++k)
            parts.push_back(partition_from_rows(ds, k, rows[static_cast<size_t>(k)]));
        return parts;
    }
    throw ConfigError("dirichlet partitioning kept producing empty clients; "
                      "increase alpha or sample count");
}

}  // namespace fedfreeze
