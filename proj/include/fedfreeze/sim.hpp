#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedfreeze/aggregator.hpp"
#include "fedfreeze/metrics.hpp"
#include "fedfreeze/transport.hpp"

namespace fedfreeze {

struct DatasetSpec {
    std::string type = "blobs";  // "blobs" | "csv"
    int classes = 4;
    int dims = 20;
    int samples = 20000;
    double separation = 3.0;
    double cluster_std = 1.0;
    std::string path;  // csv
    double test_fraction = 0.2;
};

struct RunConfig {
    std::string arch_path;
    ArchitectureDescriptor arch;
    DatasetSpec dataset;
    int n_clients = 10;
    double client_fraction = 1.0;
    int rounds = 100;
    int layer_budget = 0;  // 0 resolves to L (train everything)
    int epochs = 1;
    int batch_size = 32;
    double learning_rate = 0.01;
    OptKind optimizer = OptKind::Adam;
    bool smoothing = false;
    std::string partition_scheme = "iid";  // "iid" | "dirichlet"
    double dirichlet_alpha = 0.5;
    uint64_t seed = 42;
    std::string output_dir = "out";
    std::string transport = "loopback";  // "loopback" | "tcp://host:port"
    int quorum = 0;  // 0 = every sampled client must report
    int checkpoint_every = 0;
    int timeout_sec = 120;

    void validate() const;
    bool is_tcp() const { return transport.rfind("tcp://", 0) == 0; }
    void parse_tcp(std::string& host, uint16_t& port) const;
    int resolved_layer_budget() const {
        return layer_budget > 0 ? layer_budget : arch.trainable_units();
    }
};

RunConfig load_run_config(const std::string& path);
std::string run_config_to_json(const RunConfig& cfg);

struct RunResult {
    double initial_accuracy = 0.0;
    double final_accuracy = 0.0;
    double final_loss = 0.0;
    uint64_t uplink_bytes = 0;
    uint64_t downlink_bytes = 0;
    std::vector<MetricsRecord> records;  // round 0 = initial evaluation
    std::string metrics_csv_path;
    std::string summary_json_path;
    std::string histogram_csv_path;
    std::string traffic_csv_path;
    std::string clients_csv_path;
    std::string final_model_path;
};

// Runs the whole experiment: dataset construction, partitioning, r rounds of
// sample/train/aggregate, evaluation on the held-out split, artifacts in
// cfg.output_dir. With the loopback backend the artifacts are a pure
// function of the config.
//
// port_file: when serving TCP, the actually bound port is written there
// (useful with port 0).
RunResult run_experiment(const RunConfig& cfg, const std::string& port_file = "");

// Client process entry for TCP runs: rebuilds the dataset from the shared
// config, takes partition client_id, and serves rounds until told to stop.
void run_client_process(const RunConfig& cfg, int client_id, const std::string& host,
                        uint16_t port);

// shortest round-trip decimal formatting; keeps CSV output reproducible
std::string format_double(double v);

}  // namespace fedfreeze
