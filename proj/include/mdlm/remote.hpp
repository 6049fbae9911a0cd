#pragma once

#include <chrono>
#include <cstdint>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "json.hpp"
#include "mdlm/models.hpp"

namespace mdlm {

// Newline-delimited JSON protocol between the engine and a model server.
//
//   handshake  -> {"id":0,"handshake":{"protocol":"mdlm-wire","version":1}}
//              <- {"id":0,"handshake":{"protocol":"mdlm-wire","version":1,"vocab_size":V,...}}
//   request    -> {"id":n,"context":[...],"cells":[tok|null,...],
//                  "query":{"top_k":K,"query_tokens":{"pos":[tok,...]},"sample":{"temperature":T,"seed":S}}}
//   response   <- {"id":n,"reports":[{"position":p,"entropy_nats":h,"top":[[tok,lp],...],
//                                     "queried":{"tok":lp},"sampled":tok}]}
//   failure    <- {"id":n|null,"error":"message"}
//
// Log-probabilities of exactly zero-probability tokens are sent as null.
namespace wire {

inline constexpr const char* kProtocol = "mdlm-wire";
inline constexpr int kVersion = 1;
inline constexpr std::size_t kMaxFrameBytes = std::size_t{16} << 20;

nlohmann::json handshake_request();
nlohmann::json encode_request(std::int64_t id, const MaskedSequence& seq, const QuerySpec& spec);
nlohmann::json encode_reports(std::int64_t id, const std::vector<PositionReport>& reports);

/// Parses and validates a response frame for `seq`. Throws ServerError for error frames and
/// ProtocolError for anything malformed (wrong id, coverage, unnormalized top list, ...).
std::vector<PositionReport> decode_response(const nlohmann::json& frame, std::int64_t expected_id,
                                            const MaskedSequence& seq, double tolerance = 1e-4);

/// Serves the protocol for an in-process model, one frame at a time.
class FrameServer {
public:
    explicit FrameServer(const ConditionalModel& model) : model_(model) {}

    /// Handles one request line and returns the response line (without newline).
    std::string handle(const std::string& line) const;

private:
    const ConditionalModel& model_;
};

}  // namespace wire

/// A bidirectional line channel.
class LineTransport {
public:
    virtual ~LineTransport() = default;
    virtual void write_line(const std::string& line) = 0;
    /// Reads one line (without the newline). Throws TimeoutError or ProtocolError (EOF, oversize).
    virtual std::string read_line(std::chrono::milliseconds timeout) = 0;
};

/// Line transport over a pair of file descriptors; closes them on destruction.
class FdTransport : public LineTransport {
public:
    FdTransport(int read_fd, int write_fd);
    ~FdTransport() override;
    FdTransport(const FdTransport&) = delete;
    FdTransport& operator=(const FdTransport&) = delete;

    void write_line(const std::string& line) override;
    std::string read_line(std::chrono::milliseconds timeout) override;

protected:
    void close_fds();

private:
    int read_fd_;
    int write_fd_;
    std::string buffer_;
};

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port);

/// Spawns `argv` with its stdin/stdout connected to the transport.
std::unique_ptr<LineTransport> spawn_stdio(const std::vector<std::string>& argv);

/// "tcp://host:port" or "stdio:<command and args, space separated>".
std::unique_ptr<LineTransport> open_endpoint(const std::string& endpoint);

/// Client for a model served over the wire protocol. One request in flight at a time.
class RemoteModel final : public ConditionalModel {
public:
    explicit RemoteModel(std::unique_ptr<LineTransport> transport,
                         std::chrono::milliseconds timeout = std::chrono::seconds(30));

    std::vector<PositionReport> query(const MaskedSequence& seq, const QuerySpec& spec) const override;
    [[nodiscard]] Vocab vocab() const override { return vocab_; }
    [[nodiscard]] std::optional<std::size_t> length() const override { return length_; }

    /// Model calls issued so far (handshake excluded).
    [[nodiscard]] std::int64_t calls() const;
    [[nodiscard]] const nlohmann::json& server_info() const { return info_; }

private:
    std::unique_ptr<LineTransport> transport_;
    std::chrono::milliseconds timeout_;
    Vocab vocab_;
    std::optional<std::size_t> length_;
    nlohmann::json info_;
    mutable std::mutex mutex_;
    mutable std::int64_t next_id_ = 1;
};

/// One request per call; the result is parsed into reports.
std::vector<PositionReport> remote_conditionals(const RemoteModel& client, const MaskedSequence& seq,
                                                const QuerySpec& query);

struct ProtocolCheck {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct ProtocolCheckReport {
    std::vector<ProtocolCheck> checks;
    [[nodiscard]] bool passed() const;
};

/// Exercises a server: handshake, filled/masked edge cases, normalization, query echo,
/// seeded sampling determinism, and recovery after a malformed frame.
ProtocolCheckReport protocol_check(LineTransport& transport, std::chrono::milliseconds timeout = std::chrono::seconds(30),
                                   std::optional<std::size_t> length = std::nullopt);

}  // namespace mdlm
