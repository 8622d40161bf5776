#include "fedfreeze/sim.hpp"

#include <charconv>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

namespace fedfreeze {

namespace fs = std::filesystem;
using nlohmann::json;

void RunConfig::validate() const {
    if (arch.num_layers() == 0) throw ConfigError("architecture has no layers");
    if (arch.trainable_units() == 0) throw ConfigError("architecture has no trainable units");
    if (n_clients < 1) throw ConfigError("n_clients must be >= 1");
    if (rounds < 1) throw ConfigError("rounds must be >= 1");
    if (client_fraction <= 0.0 || client_fraction > 1.0)
        throw ConfigError("client_fraction must be in (0, 1]");
    if (layer_budget < 0 || layer_budget > arch.trainable_units())
        throw ConfigError("layer_budget must satisfy 1 <= N_l <= " +
                          std::to_string(arch.trainable_units()));
    if (epochs < 1) throw ConfigError("epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (quorum < 0) throw ConfigError("quorum must be >= 0");
    if (dataset.type != "blobs" && dataset.type != "csv")
        throw ConfigError("dataset.type must be blobs or csv");
    if (dataset.type == "csv" && dataset.path.empty())
        throw ConfigError("dataset.path required for csv datasets");
    if (partition_scheme != "iid" && partition_scheme != "dirichlet")
        throw ConfigError("partition scheme must be iid or dirichlet");
    if (partition_scheme == "dirichlet" && dirichlet_alpha <= 0.0)
        throw ConfigError("dirichlet alpha must be positive");
    if (transport != "loopback" && !is_tcp())
        throw ConfigError("transport must be loopback or tcp://host:port");
}

void RunConfig::parse_tcp(std::string& host, uint16_t& port) const {
    const std::string rest = transport.substr(6);
    const auto colon = rest.rfind(':');
    if (colon == std::string::npos) throw ConfigError("tcp transport needs host:port");
    host = rest.substr(0, colon);
    const int p = std::stoi(rest.substr(colon + 1));
    if (p < 0 || p > 65535) throw ConfigError("tcp port out of range");
    port = static_cast<uint16_t>(p);
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }

    RunConfig cfg;
    cfg.arch_path = j.at("architecture").get<std::string>();
    // descriptor paths resolve relative to the config file
    fs::path ap(cfg.arch_path);
    if (ap.is_relative()) {
        const fs::path candidate = fs::path(path).parent_path() / ap;
        if (fs::exists(candidate)) ap = candidate;
    }
    cfg.arch = load_architecture_file(ap.string());

    if (j.contains("dataset")) {
        const auto& d = j["dataset"];
        cfg.dataset.type = d.value("type", cfg.dataset.type);
        cfg.dataset.classes = d.value("classes", cfg.dataset.classes);
        cfg.dataset.dims = d.value("dims", cfg.dataset.dims);
        cfg.dataset.samples = d.value("samples", cfg.dataset.samples);
        cfg.dataset.separation = d.value("separation", cfg.dataset.separation);
        cfg.dataset.cluster_std = d.value("cluster_std", cfg.dataset.cluster_std);
        cfg.dataset.path = d.value("path", cfg.dataset.path);
        cfg.dataset.test_fraction = d.value("test_fraction", cfg.dataset.test_fraction);
    }
    cfg.n_clients = j.value("clients", cfg.n_clients);
    cfg.client_fraction = j.value("client_fraction", cfg.client_fraction);
    cfg.rounds = j.value("rounds", cfg.rounds);
    cfg.layer_budget = j.value("layer_budget", cfg.layer_budget);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.batch_size = j.value("batch_size", cfg.batch_size);
    cfg.learning_rate = j.value("learning_rate", cfg.learning_rate);
    if (j.contains("optimizer")) cfg.optimizer = opt_from_name(j["optimizer"].get<std::string>());
    cfg.smoothing = j.value("smoothing", cfg.smoothing);
    if (j.contains("partition")) {
        const auto& p = j["partition"];
        cfg.partition_scheme = p.value("scheme", cfg.partition_scheme);
        cfg.dirichlet_alpha = p.value("alpha", cfg.dirichlet_alpha);
    }
    cfg.seed = j.value("seed", cfg.seed);
    cfg.output_dir = j.value("output_dir", cfg.output_dir);
    cfg.transport = j.value("transport", cfg.transport);
    cfg.quorum = j.value("quorum", cfg.quorum);
    cfg.checkpoint_every = j.value("checkpoint_every", cfg.checkpoint_every);
    cfg.timeout_sec = j.value("timeout_sec", cfg.timeout_sec);
    cfg.validate();
    return cfg;
}

std::string run_config_to_json(const RunConfig& cfg) {
    json j;
    j["architecture"] = cfg.arch_path;
    j["architecture_name"] = cfg.arch.name;
    json d;
    d["type"] = cfg.dataset.type;
    if (cfg.dataset.type == "blobs") {
        d["classes"] = cfg.dataset.classes;
        d["dims"] = cfg.dataset.dims;
        d["samples"] = cfg.dataset.samples;
        d["separation"] = cfg.dataset.separation;
        d["cluster_std"] = cfg.dataset.cluster_std;
    } else {
        d["path"] = cfg.dataset.path;
    }
    d["test_fraction"] = cfg.dataset.test_fraction;
    j["dataset"] = d;
    j["clients"] = cfg.n_clients;
    j["client_fraction"] = cfg.client_fraction;
    j["rounds"] = cfg.rounds;
    j["layer_budget"] = cfg.resolved_layer_budget();
    j["epochs"] = cfg.epochs;
    j["batch_size"] = cfg.batch_size;
    j["learning_rate"] = cfg.learning_rate;
    j["optimizer"] = opt_name(cfg.optimizer);
    j["smoothing"] = cfg.smoothing;
    j["partition"] = {{"scheme", cfg.partition_scheme}, {"alpha", cfg.dirichlet_alpha}};
    j["seed"] = cfg.seed;
    j["output_dir"] = cfg.output_dir;
    j["transport"] = cfg.transport;
    j["quorum"] = cfg.quorum;
    j["checkpoint_every"] = cfg.checkpoint_every;
    j["timeout_sec"] = cfg.timeout_sec;
    return j.dump(2);
}

std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

namespace {

Dataset build_dataset(const RunConfig& cfg) {
    if (cfg.dataset.type == "csv") return load_csv(cfg.dataset.path);
    return generate_blobs(cfg.dataset.classes, cfg.dataset.dims, cfg.dataset.samples, cfg.seed,
                          cfg.dataset.separation, cfg.dataset.cluster_std);
}

std::vector<Partition> build_partitions(const RunConfig& cfg, const Dataset& train) {
    if (cfg.partition_scheme == "dirichlet")
        return partition_dirichlet(train, cfg.n_clients, cfg.dirichlet_alpha, cfg.seed);
    return partition_iid(train, cfg.n_clients, cfg.seed);
}

Partition test_as_partition(const Dataset& test) {
    Partition p;
    p.client_id = -1;
    p.classes = test.classes;
    p.dims = test.dims;
    p.features = test.features;
    p.labels = test.labels;
    return p;
}

ClientConfig client_config_for(const RunConfig& cfg, int client_id) {
    ClientConfig cc;
    cc.client_id = client_id;
    cc.epochs = cfg.epochs;
    cc.batch_size = cfg.batch_size;
    cc.learning_rate = cfg.learning_rate;
    cc.optimizer = cfg.optimizer;
    cc.layer_budget = cfg.resolved_layer_budget();
    cc.run_seed = cfg.seed;
    return cc;
}

void write_metrics_csv(const std::string& path, const std::vector<MetricsRecord>& records,
                       int units) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "round,accuracy,loss,uplink_bytes,downlink_bytes";
    for (int u = 0; u < units; ++u) out << ",unit_" << u;
    out << '\n';
    for (const auto& r : records) {
        out << r.round << ',' << format_double(r.accuracy) << ',' << format_double(r.loss) << ','
            << r.uplink_bytes << ',' << r.downlink_bytes;
        for (int u = 0; u < units; ++u)
            out << ',' << (u < static_cast<int>(r.unit_selections.size())
                               ? r.unit_selections[static_cast<size_t>(u)]
                               : 0);
        out << '\n';
    }
}

void write_clients_csv(const std::string& path, const std::vector<MetricsRecord>& records) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "round,client,samples,loss,accuracy\n";
    for (const auto& r : records)
        for (const auto& c : r.per_client)
            out << r.round << ',' << c.client_id << ',' << c.sample_count << ','
                << format_double(c.loss) << ',' << format_double(c.accuracy) << '\n';
}

void write_histogram_csv(const std::string& path, const SelectionHistogram& hist) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path);
    out << "client,rounds_participated";
    for (int u = 0; u < hist.units; ++u) out << ",unit_" << u;
    out << '\n';
    for (int c = 0; c < hist.clients; ++c) {
        out << c << ',' << hist.rounds_participated[static_cast<size_t>(c)];
        for (int u = 0; u < hist.units; ++u) out << ',' << hist.at(c, u);
        out << '\n';
    }
}

std::string checkpoint_name(int round) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "model_round_%04d.ffrz", round);
    return buf;
}

}  // namespace

RunResult run_experiment(const RunConfig& cfg, const std::string& port_file) {
    cfg.validate();
    const auto t_start = std::chrono::steady_clock::now();
    const auto& arch = cfg.arch;
    const int units = arch.trainable_units();
    const int budget = cfg.resolved_layer_budget();

    const Dataset full = build_dataset(cfg);
    auto [train, test] = split_train_test(full, cfg.dataset.test_fraction, cfg.seed);
    if (test.size() == 0) test = train;  // no held-out split requested
    auto partitions = build_partitions(cfg, train);
    const Partition test_part = test_as_partition(test);

    fs::create_directories(cfg.output_dir);
    TrafficLedger ledger;

    std::vector<std::unique_ptr<ClientEndpoint>> endpoints;
    int listen_fd = -1;
    if (cfg.is_tcp()) {
        std::string host;
        uint16_t port = 0;
        cfg.parse_tcp(host, port);
        uint16_t bound = 0;
        listen_fd = tcp_listen(host, port, bound);
        if (!port_file.empty()) {
            std::ofstream pf(port_file);
            pf << bound << '\n';
        }
        std::cout << "listening on " << (host.empty() ? "0.0.0.0" : host) << ":" << bound
                  << ", waiting for " << cfg.n_clients << " clients\n";
        endpoints = accept_tcp_clients(listen_fd, cfg.n_clients, &ledger, cfg.timeout_sec);
    } else {
        for (int k = 0; k < cfg.n_clients; ++k)
            endpoints.push_back(std::make_unique<LoopbackEndpoint>(
                arch, client_config_for(cfg, k), partitions[static_cast<size_t>(k)], &ledger));
    }

    GlobalState32 state(init_model<float>(arch, cfg.seed));
    SelectionHistogram hist(cfg.n_clients, units);

    RunResult result;
    const auto eval0 = evaluate_partition(state.model, test_part);
    result.initial_accuracy = eval0.accuracy;
    MetricsRecord rec0;
    rec0.round = 0;
    rec0.accuracy = eval0.accuracy;
    rec0.loss = eval0.loss;
    rec0.unit_selections.assign(static_cast<size_t>(units), 0);
    result.records.push_back(rec0);

    std::vector<char> dead(static_cast<size_t>(cfg.n_clients), 0);

    for (int t = 1; t <= cfg.rounds; ++t) {
        const auto t_round = std::chrono::steady_clock::now();
        RoundPlan plan;
        plan.round = t;
        plan.client_fraction = cfg.client_fraction;
        plan.layer_budget = budget;
        plan.total_rounds = cfg.rounds;
        int m = static_cast<int>(std::lround(cfg.client_fraction * cfg.n_clients));
        m = std::max(1, std::min(m, cfg.n_clients));
        Rng sample_rng(mix_seed({cfg.seed, seed_stream::kClientSample, static_cast<uint64_t>(t)}));
        plan.sampled_clients = sample_rng.sample_without_replacement(cfg.n_clients, m);

        const auto model_bytes = model_to_bytes(state.model);
        std::vector<int> contacted;
        for (int k : plan.sampled_clients) {
            if (dead[static_cast<size_t>(k)]) continue;
            auto& ep = *endpoints[static_cast<size_t>(k)];
            try {
                Message start{MsgKind::RoundStart, static_cast<uint32_t>(t), 0,
                              encode_round_start(static_cast<uint32_t>(budget), false)};
                ep.send(start);
                Message model_msg{MsgKind::GlobalModel, static_cast<uint32_t>(t), 0, model_bytes};
                ep.send(model_msg);
                contacted.push_back(k);
            } catch (const Error& e) {
                std::cerr << "client " << k << " unreachable in round " << t << ": " << e.what()
                          << '\n';
                dead[static_cast<size_t>(k)] = 1;
            }
        }

        std::vector<PartialUpdate32> updates;
        for (int k : contacted) {
            auto& ep = *endpoints[static_cast<size_t>(k)];
            try {
                const Message reply = ep.receive();
                if (reply.kind != MsgKind::PartialUpdate || reply.round != static_cast<uint32_t>(t))
                    throw RoundError("unexpected reply from client " + std::to_string(k));
                updates.push_back(update_from_bytes(arch, reply.payload));
            } catch (const Error& e) {
                std::cerr << "lost update from client " << k << " in round " << t << ": "
                          << e.what() << '\n';
                dead[static_cast<size_t>(k)] = 1;
            }
        }

        const size_t quorum = cfg.quorum > 0 ? static_cast<size_t>(cfg.quorum)
                                             : plan.sampled_clients.size();
        if (updates.size() < quorum)
            throw RoundError("round " + std::to_string(t) + " below quorum: " +
                             std::to_string(updates.size()) + "/" + std::to_string(quorum) +
                             " updates");

        MetricsRecord rec;
        rec.round = t;
        rec.unit_selections.assign(static_cast<size_t>(units), 0);
        for (const auto& u : updates) {
            hist.record(static_cast<int>(u.meta.client_id), u.mask.units);
            for (int unit : u.mask.units) rec.unit_selections[static_cast<size_t>(unit)] += 1;
            rec.per_client.push_back(ClientRoundStat{static_cast<int>(u.meta.client_id),
                                                     u.meta.sample_count, u.meta.local_loss,
                                                     u.meta.local_accuracy});
        }

        state.advance(updates, cfg.smoothing);

        const auto eval = evaluate_partition(state.model, test_part);
        rec.accuracy = eval.accuracy;
        rec.loss = eval.loss;
        rec.uplink_bytes = ledger.round_total(static_cast<uint32_t>(t), Direction::Uplink);
        rec.downlink_bytes = ledger.round_total(static_cast<uint32_t>(t), Direction::Downlink);
        result.records.push_back(rec);

        if (cfg.checkpoint_every > 0 && t % cfg.checkpoint_every == 0)
            save_model(state.model, (fs::path(cfg.output_dir) / checkpoint_name(t)).string());

        result.records.back().wall_time_sec =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_round).count();
        if (t == 1 || t == cfg.rounds || t % 10 == 0)
            std::cout << "round " << t << "/" << cfg.rounds << "  accuracy=" << eval.accuracy
                      << "%  loss=" << eval.loss << "  ("
                      << result.records.back().wall_time_sec << "s)\n";
    }

    // tell everyone to shut down (TCP clients exit their loop)
    for (auto& ep : endpoints) {
        if (dead[static_cast<size_t>(ep->id())]) continue;
        try {
            Message stop{MsgKind::RoundStart, static_cast<uint32_t>(cfg.rounds + 1), 0,
                         encode_round_start(0, true)};
            ep->send(stop);
        } catch (const Error&) {
            // already gone
        }
    }
    if (listen_fd >= 0) tcp_close(listen_fd);

    result.final_accuracy = result.records.back().accuracy;
    result.final_loss = result.records.back().loss;
    result.uplink_bytes = ledger.total(Direction::Uplink);
    result.downlink_bytes = ledger.total(Direction::Downlink);

    const fs::path dir(cfg.output_dir);
    result.metrics_csv_path = (dir / "metrics.csv").string();
    result.summary_json_path = (dir / "summary.json").string();
    result.histogram_csv_path = (dir / "selection_histogram.csv").string();
    result.traffic_csv_path = (dir / "traffic.csv").string();
    result.clients_csv_path = (dir / "clients.csv").string();
    result.final_model_path = (dir / "model_final.ffrz").string();

    write_metrics_csv(result.metrics_csv_path, result.records, units);
    write_clients_csv(result.clients_csv_path, result.records);
    write_histogram_csv(result.histogram_csv_path, hist);
    {
        std::ofstream out(result.traffic_csv_path);
        if (!out) throw IoError("cannot write " + result.traffic_csv_path);
        ledger.write_csv(out);
    }
    save_model(state.model, result.final_model_path);

    json summary;
    summary["config"] = json::parse(run_config_to_json(cfg));
    summary["rounds_completed"] = cfg.rounds;
    summary["initial_accuracy"] = result.initial_accuracy;
    summary["final_accuracy"] = result.final_accuracy;
    summary["final_loss"] = result.final_loss;
    summary["uplink_bytes"] = result.uplink_bytes;
    summary["downlink_bytes"] = result.downlink_bytes;
    summary["total_bytes"] = result.uplink_bytes + result.downlink_bytes;
    summary["artifacts"] = {{"metrics_csv", result.metrics_csv_path},
                            {"summary_json", result.summary_json_path},
                            {"selection_histogram_csv", result.histogram_csv_path},
                            {"traffic_csv", result.traffic_csv_path},
                            {"clients_csv", result.clients_csv_path},
                            {"final_model", result.final_model_path}};
    {
        std::ofstream out(result.summary_json_path);
        if (!out) throw IoError("cannot write " + result.summary_json_path);
        out << summary.dump(2) << '\n';
    }

    const auto elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    std::cout << "run finished in " << elapsed << "s, final accuracy " << result.final_accuracy
              << "%\n";
    return result;
}

void run_client_process(const RunConfig& cfg, int client_id, const std::string& host,
                        uint16_t port) {
    if (client_id < 0 || client_id >= cfg.n_clients)
        throw ConfigError("client id out of range for this config");
    const Dataset full = build_dataset(cfg);
    auto [train, test] = split_train_test(full, cfg.dataset.test_fraction, cfg.seed);
    (void)test;
    auto partitions = build_partitions(cfg, train);
    run_tcp_client(host, port, cfg.arch, client_config_for(cfg, client_id),
                   partitions[static_cast<size_t>(client_id)], cfg.timeout_sec);
}

}  // namespace fedfreeze
