#include "fedfreeze/transport.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include <arpa/inet.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

namespace fedfreeze {

std::vector<uint8_t> encode_round_start(uint32_t layer_budget, bool stop) {
    std::vector<uint8_t> p(5);
    for (int i = 0; i < 4; ++i) p[static_cast<size_t>(i)] = static_cast<uint8_t>(layer_budget >> (8 * i));
    p[4] = stop ? 1 : 0;
    return p;
}

void decode_round_start(const std::vector<uint8_t>& payload, uint32_t& layer_budget, bool& stop) {
    if (payload.size() != 5) throw IoError("malformed RoundStart payload");
    layer_budget = 0;
    for (int i = 0; i < 4; ++i)
        layer_budget |= static_cast<uint32_t>(payload[static_cast<size_t>(i)]) << (8 * i);
    stop = payload[4] != 0;
}

void TrafficLedger::record(Direction dir, uint32_t round, uint32_t client, uint64_t bytes) {
    std::lock_guard<std::mutex> lock(mu_);
    entries_.push_back(Entry{round, client, dir, bytes});
}

uint64_t TrafficLedger::total(Direction dir) const {
    std::lock_guard<std::mutex> lock(mu_);
    uint64_t t = 0;
    for (const auto& e : entries_)
        if (e.dir == dir) t += e.bytes;
    return t;
}

uint64_t TrafficLedger::round_total(uint32_t round, Direction dir) const {
    std::lock_guard<std::mutex> lock(mu_);
    uint64_t t = 0;
    for (const auto& e : entries_)
        if (e.round == round && e.dir == dir) t += e.bytes;
    return t;
}

std::vector<TrafficLedger::Entry> TrafficLedger::entries() const {
    std::lock_guard<std::mutex> lock(mu_);
    return entries_;
}

void TrafficLedger::write_csv(std::ostream& out) const {
    out << "round,client,direction,bytes\n";
    for (const auto& e : entries())
        out << e.round << ',' << e.client << ','
            << (e.dir == Direction::Uplink ? "uplink" : "downlink") << ',' << e.bytes << '\n';
}

std::vector<uint8_t> run_client_round(const ArchitectureDescriptor& arch, const ClientConfig& cfg,
                                      const Partition& part, uint32_t round, uint32_t layer_budget,
                                      const std::vector<uint8_t>& model_bytes) {
    ClientConfig round_cfg = cfg;
    round_cfg.layer_budget = static_cast<int>(layer_budget);
    const Model32 global = model_from_bytes(arch, model_bytes);
    const PartialUpdate32 upd = client_update(round_cfg, part, global, static_cast<int>(round));
    return update_to_bytes(arch, upd);
}

LoopbackEndpoint::LoopbackEndpoint(const ArchitectureDescriptor& arch, ClientConfig cfg,
                                   Partition part, TrafficLedger* ledger)
    : arch_(arch), cfg_(std::move(cfg)), part_(std::move(part)), ledger_(ledger) {}

void LoopbackEndpoint::send(const Message& msg) {
    ledger_->record(Direction::Downlink, msg.round, static_cast<uint32_t>(id()),
                    msg.payload.size());
    switch (msg.kind) {
        case MsgKind::RoundStart: {
            bool stop = false;
            decode_round_start(msg.payload, layer_budget_, stop);
            round_ = msg.round;
            stopped_ = stop;
            break;
        }
        case MsgKind::GlobalModel: {
            if (stopped_) throw RoundError("model sent to a stopped client");
            auto bytes = msg.payload;
            const uint32_t round = msg.round;
            const uint32_t budget = layer_budget_;
            pending_ = std::async(std::launch::async, [this, bytes = std::move(bytes), round,
                                                       budget]() {
                return run_client_round(arch_, cfg_, part_, round, budget, bytes);
            });
            break;
        }
        default:
            throw RoundError("unexpected message kind on loopback downlink");
    }
}

Message LoopbackEndpoint::receive() {
    if (!pending_.valid()) throw RoundError("no pending client work to receive");
    Message msg;
    msg.kind = MsgKind::PartialUpdate;
    msg.round = round_;
    msg.sender = static_cast<uint32_t>(id());
    msg.payload = pending_.get();
    ledger_->record(Direction::Uplink, msg.round, msg.sender, msg.payload.size());
    return msg;
}

namespace {

constexpr char kFrameMagic[4] = {'F', 'F', 'R', 'M'};

void write_all(int fd, const uint8_t* data, size_t n) {
    size_t at = 0;
    while (at < n) {
        // MSG_NOSIGNAL: a peer that died mid-round must surface as an error,
        // not as SIGPIPE
        const ssize_t w = ::send(fd, data + at, n - at, MSG_NOSIGNAL);
        if (w <= 0) throw IoError("socket write failed");
        at += static_cast<size_t>(w);
    }
}

void read_all(int fd, uint8_t* data, size_t n) {
    size_t at = 0;
    while (at < n) {
        const ssize_t r = ::recv(fd, data + at, n - at, 0);
        if (r == 0) throw IoError("connection closed by peer");
        if (r < 0) throw IoError("socket read failed or timed out");
        at += static_cast<size_t>(r);
    }
}

void put_u32_at(uint8_t* p, uint32_t v) {
    for (int i = 0; i < 4; ++i) p[i] = static_cast<uint8_t>(v >> (8 * i));
}

uint32_t get_u32_at(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

void set_recv_timeout(int fd, int timeout_sec) {
    if (timeout_sec <= 0) return;
    timeval tv{};
    tv.tv_sec = timeout_sec;
    setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
}

}  // namespace

void write_frame(int fd, const Message& msg) {
    uint8_t header[kTcpFrameHeaderBytes];
    std::memcpy(header, kFrameMagic, 4);
    put_u32_at(header + 4, static_cast<uint32_t>(msg.payload.size()));
    header[8] = static_cast<uint8_t>(msg.kind);
    put_u32_at(header + 9, msg.round);
    put_u32_at(header + 13, msg.sender);
    write_all(fd, header, sizeof(header));
    if (!msg.payload.empty()) write_all(fd, msg.payload.data(), msg.payload.size());
}

Message read_frame(int fd) {
    uint8_t header[kTcpFrameHeaderBytes];
    read_all(fd, header, sizeof(header));
    if (std::memcmp(header, kFrameMagic, 4) != 0) throw IoError("bad frame magic");
    Message msg;
    const uint32_t len = get_u32_at(header + 4);
    msg.kind = static_cast<MsgKind>(header[8]);
    msg.round = get_u32_at(header + 9);
    msg.sender = get_u32_at(header + 13);
    msg.payload.resize(len);
    if (len) read_all(fd, msg.payload.data(), len);
    return msg;
}

int tcp_listen(const std::string& host, uint16_t port, uint16_t& bound_port) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("cannot create socket");
    const int one = 1;
    setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    if (host.empty() || host == "0.0.0.0") {
        addr.sin_addr.s_addr = INADDR_ANY;
    } else if (inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw IoError("cannot parse listen address: " + host);
    }
    if (::bind(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw IoError("cannot bind " + host + ":" + std::to_string(port));
    }
    if (::listen(fd, 64) != 0) {
        ::close(fd);
        throw IoError("listen failed");
    }
    sockaddr_in actual{};
    socklen_t alen = sizeof(actual);
    getsockname(fd, reinterpret_cast<sockaddr*>(&actual), &alen);
    bound_port = ntohs(actual.sin_port);
    return fd;
}

int tcp_connect(const std::string& host, uint16_t port, int timeout_sec) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw IoError("cannot create socket");
    sockaddr_in addr{};
    addr.sin_family = AF_INET;
    addr.sin_port = htons(port);
    std::string target = host.empty() || host == "localhost" ? "127.0.0.1" : host;
    if (inet_pton(AF_INET, target.c_str(), &addr.sin_addr) != 1) {
        ::close(fd);
        throw IoError("cannot parse host address: " + host);
    }
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0) {
        ::close(fd);
        throw IoError("cannot connect to " + host + ":" + std::to_string(port));
    }
    const int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
    set_recv_timeout(fd, timeout_sec);
    return fd;
}

void tcp_close(int fd) {
    if (fd >= 0) ::close(fd);
}

TcpEndpoint::~TcpEndpoint() { tcp_close(fd_); }

void TcpEndpoint::send(const Message& msg) {
    write_frame(fd_, msg);
    ledger_->record(Direction::Downlink, msg.round, static_cast<uint32_t>(id_),
                    msg.payload.size());
}

Message TcpEndpoint::receive() {
    Message msg = read_frame(fd_);
    ledger_->record(Direction::Uplink, msg.round, static_cast<uint32_t>(id_), msg.payload.size());
    return msg;
}

std::vector<std::unique_ptr<ClientEndpoint>> accept_tcp_clients(int listen_fd, int expected,
                                                                TrafficLedger* ledger,
                                                                int timeout_sec) {
    std::vector<std::unique_ptr<ClientEndpoint>> endpoints;
    for (int i = 0; i < expected; ++i) {
        const int fd = ::accept(listen_fd, nullptr, nullptr);
        if (fd < 0) throw IoError("accept failed");
        const int one = 1;
        setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
        set_recv_timeout(fd, timeout_sec);
        const Message hello = read_frame(fd);
        if (hello.kind != MsgKind::RoundAck) {
            tcp_close(fd);
            throw IoError("client joined with an unexpected message kind");
        }
        endpoints.push_back(
            std::make_unique<TcpEndpoint>(fd, static_cast<int>(hello.sender), ledger));
    }
    std::sort(endpoints.begin(), endpoints.end(),
              [](const auto& a, const auto& b) { return a->id() < b->id(); });
    for (size_t i = 1; i < endpoints.size(); ++i)
        if (endpoints[i]->id() == endpoints[i - 1]->id())
            throw IoError("two clients joined with the same id");
    return endpoints;
}

void run_tcp_client(const std::string& host, uint16_t port, const ArchitectureDescriptor& arch,
                    const ClientConfig& cfg, const Partition& part, int timeout_sec) {
    const int fd = tcp_connect(host, port, timeout_sec);
    try {
        Message hello;
        hello.kind = MsgKind::RoundAck;
        hello.round = 0;
        hello.sender = static_cast<uint32_t>(cfg.client_id);
        write_frame(fd, hello);

        for (;;) {
            const Message start = read_frame(fd);
            if (start.kind != MsgKind::RoundStart)
                throw IoError("expected RoundStart from server");
            uint32_t budget = 0;
            bool stop = false;
            decode_round_start(start.payload, budget, stop);
            if (stop) break;
            const Message model_msg = read_frame(fd);
            if (model_msg.kind != MsgKind::GlobalModel)
                throw IoError("expected GlobalModel from server");
            Message reply;
            reply.kind = MsgKind::PartialUpdate;
            reply.round = start.round;
            reply.sender = static_cast<uint32_t>(cfg.client_id);
            reply.payload =
                run_client_round(arch, cfg, part, start.round, budget, model_msg.payload);
            write_frame(fd, reply);
        }
    } catch (...) {
        tcp_close(fd);
        throw;
    }
    tcp_close(fd);
}

TrafficEstimate estimate_uplink_fraction(const ArchitectureDescriptor& arch, int layer_budget,
                                         int clients, int rounds, int trials, uint64_t seed) {
    const int units = arch.trainable_units();
    if (layer_budget < 1 || layer_budget > units)
        throw ConfigError("layer budget out of range for this architecture");
    if (clients < 1 || rounds < 1 || trials < 1)
        throw ConfigError("clients, rounds and trials must be positive");

    const double full = static_cast<double>(arch.total_params());
    const double draws_per_trial = static_cast<double>(clients) * rounds;

    TrafficEstimate est;
    est.layer_budget = layer_budget;
    est.clients = clients;
    est.rounds = rounds;
    est.trials = trials;
    est.full_params_per_client_round = arch.total_params();

    double sum = 0.0, sumsq = 0.0;
    for (int trial = 0; trial < trials; ++trial) {
        Rng rng(mix_seed({seed, seed_stream::kTrafficSim, static_cast<uint64_t>(trial)}));
        double selected = 0.0;
        for (int r = 0; r < rounds; ++r)
            for (int c = 0; c < clients; ++c) {
                const FreezeMask mask = select_layers(units, layer_budget, rng);
                selected += static_cast<double>(mask.param_count(arch));
            }
        const double fraction = selected / (draws_per_trial * full);
        sum += fraction;
        sumsq += fraction * fraction;
    }
    est.mean_fraction = sum / trials;
    const double var =
        trials > 1 ? std::max((sumsq - sum * sum / trials) / (trials - 1), 0.0) : 0.0;
    est.stddev_fraction = std::sqrt(var);
    est.ci95_halfwidth = trials > 1 ? 1.96 * est.stddev_fraction / std::sqrt(trials) : 0.0;
    est.expected_params_per_round = est.mean_fraction * full * clients;
    return est;
}

}  // namespace fedfreeze
