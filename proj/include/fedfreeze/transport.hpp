#pragma once

#include <cstdint>
#include <future>
#include <memory>
#include <mutex>
#include <ostream>
#include <string>
#include <vector>

#include "fedfreeze/client.hpp"

namespace fedfreeze {

enum class MsgKind : uint8_t {
    GlobalModel = 1,
    PartialUpdate = 2,
    RoundStart = 3,
    RoundAck = 4,
    Error = 5,
};

enum class Direction { Uplink, Downlink };

struct Message {
    MsgKind kind = MsgKind::Error;
    uint32_t round = 0;
    uint32_t sender = 0;
    std::vector<uint8_t> payload;
};

// RoundStart payload: u32 layer budget | u8 stop flag
std::vector<uint8_t> encode_round_start(uint32_t layer_budget, bool stop);
void decode_round_start(const std::vector<uint8_t>& payload, uint32_t& layer_budget, bool& stop);

// Every delivered message adds one entry; payload bytes only, protocol
// framing is reported separately by the wire layer.
class TrafficLedger {
public:
    struct Entry {
        uint32_t round;
        uint32_t client;
        Direction dir;
        uint64_t bytes;
    };

    void record(Direction dir, uint32_t round, uint32_t client, uint64_t bytes);
    uint64_t total(Direction dir) const;
    uint64_t round_total(uint32_t round, Direction dir) const;
    std::vector<Entry> entries() const;
    void write_csv(std::ostream& out) const;

private:
    mutable std::mutex mu_;
    std::vector<Entry> entries_;
};

// Server-side handle to one client. send() records downlink, receive()
// blocks for the client's reply and records uplink.
class ClientEndpoint {
public:
    virtual ~ClientEndpoint() = default;
    virtual int id() const = 0;
    virtual void send(const Message& msg) = 0;
    virtual Message receive() = 0;
};

// One client round, wire bytes in, wire bytes out. Both backends funnel
// through here, which is what makes loopback and TCP runs bit-identical.
std::vector<uint8_t> run_client_round(const ArchitectureDescriptor& arch, const ClientConfig& cfg,
                                      const Partition& part, uint32_t round, uint32_t layer_budget,
                                      const std::vector<uint8_t>& model_bytes);

// In-process backend: the training work runs on a task launched at model
// delivery, so sampled clients of a round execute in parallel.
class LoopbackEndpoint : public ClientEndpoint {
public:
    LoopbackEndpoint(const ArchitectureDescriptor& arch, ClientConfig cfg, Partition part,
                     TrafficLedger* ledger);

    int id() const override { return cfg_.client_id; }
    void send(const Message& msg) override;
    Message receive() override;

private:
    const ArchitectureDescriptor& arch_;
    ClientConfig cfg_;
    Partition part_;
    TrafficLedger* ledger_;
    uint32_t round_ = 0;
    uint32_t layer_budget_ = 0;
    bool stopped_ = false;
    std::future<std::vector<uint8_t>> pending_;
};

// TCP backend. Framing: "FFRM" | u32 payload length | u8 kind | u32 round |
// u32 sender | payload.
constexpr size_t kTcpFrameHeaderBytes = 17;

int tcp_listen(const std::string& host, uint16_t port, uint16_t& bound_port);
int tcp_connect(const std::string& host, uint16_t port, int timeout_sec);
void tcp_close(int fd);
void write_frame(int fd, const Message& msg);
Message read_frame(int fd);  // honors the socket receive timeout

class TcpEndpoint : public ClientEndpoint {
public:
    TcpEndpoint(int fd, int client_id, TrafficLedger* ledger)
        : fd_(fd), id_(client_id), ledger_(ledger) {}
    ~TcpEndpoint() override;

    int id() const override { return id_; }
    void send(const Message& msg) override;
    Message receive() override;

private:
    int fd_;
    int id_;
    TrafficLedger* ledger_;
};

// Accepts `expected` clients, each announcing itself with a RoundAck hello
// carrying its client id.
std::vector<std::unique_ptr<ClientEndpoint>> accept_tcp_clients(int listen_fd, int expected,
                                                                TrafficLedger* ledger,
                                                                int timeout_sec);

// Client-process side: join, then serve rounds until the stop flag.
void run_tcp_client(const std::string& host, uint16_t port, const ArchitectureDescriptor& arch,
                    const ClientConfig& cfg, const Partition& part, int timeout_sec);

// Monte Carlo estimate of E[uplink bytes] / full-model bytes under uniform
// random unit selection. Each trial simulates `rounds` x `clients`
// independent selections.
struct TrafficEstimate {
    int layer_budget = 0;
    int clients = 0;
    int rounds = 0;
    int trials = 0;
    double mean_fraction = 0.0;
    double stddev_fraction = 0.0;
    double ci95_halfwidth = 0.0;
    int64_t full_params_per_client_round = 0;
    double expected_params_per_round = 0.0;  // across all clients
};

TrafficEstimate estimate_uplink_fraction(const ArchitectureDescriptor& arch, int layer_budget,
                                         int clients, int rounds, int trials, uint64_t seed);

inline double expected_uplink_fraction(const ArchitectureDescriptor& arch, int layer_budget,
                                       int trials, uint64_t seed = 0) {
    return estimate_uplink_fraction(arch, layer_budget, 1, 1, trials, seed).mean_fraction;
}

}  // namespace fedfreeze
