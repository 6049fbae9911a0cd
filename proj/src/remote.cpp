#include "mdlm/remote.hpp"

#include <fcntl.h>
#include <netdb.h>
#include <poll.h>
#include <signal.h>
#include <sys/socket.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <set>
#include <sstream>

#include "mdlm/prob.hpp"
#include "mdlm/serialization.hpp"

namespace mdlm {

namespace wire {

nlohmann::json handshake_request() { return {{"id", 0}, {"handshake", {{"protocol", kProtocol}, {"version", kVersion}}}}; }

nlohmann::json encode_request(std::int64_t id, const MaskedSequence& seq, const QuerySpec& spec) {
    json cells = json::array();
    for (const auto& c : seq.cells()) cells.push_back(c ? json(*c) : json(nullptr));
    json query = {{"top_k", spec.top_k}};
    json qt = json::object();
    for (const auto& [pos, toks] : spec.query_tokens) qt[std::to_string(pos)] = toks;
    query["query_tokens"] = std::move(qt);
    if (spec.sample) {
        query["sample"] = {{"temperature", spec.sample->temperature}, {"seed", spec.sample->seed}};
    }
    return {{"id", id}, {"context", seq.context()}, {"cells", std::move(cells)}, {"query", std::move(query)}};
}

nlohmann::json encode_reports(std::int64_t id, const std::vector<PositionReport>& reports) {
    json out = json::array();
    for (const auto& r : reports) {
        json top = json::array();
        for (const auto& t : r.top) top.push_back(json::array({t.token, real_to_json(t.logprob)}));
        json queried = json::object();
        for (const auto& [tok, lp] : r.queried) queried[std::to_string(tok)] = real_to_json(lp);
        json rep = {{"position", r.position}, {"entropy_nats", r.entropy}, {"top", std::move(top)},
                    {"queried", std::move(queried)}};
        if (r.sampled) rep["sampled"] = *r.sampled;
        out.push_back(std::move(rep));
    }
    return {{"id", id}, {"reports", std::move(out)}};
}

namespace {

TokenId parse_token_key(const std::string& key) {
    std::size_t used = 0;
    long v = 0;
    try {
        v = std::stol(key, &used);
    } catch (const std::exception&) {
        throw ProtocolError("non-integer token key '" + key + "'");
    }
    if (used != key.size()) throw ProtocolError("non-integer token key '" + key + "'");
    return static_cast<TokenId>(v);
}

}  // namespace

std::vector<PositionReport> decode_response(const nlohmann::json& frame, std::int64_t expected_id,
                                            const MaskedSequence& seq, double tolerance) {
    if (!frame.is_object()) throw ProtocolError("response frame is not an object");
    if (auto it = frame.find("error"); it != frame.end()) {
        throw ServerError(it->is_string() ? it->get<std::string>() : it->dump());
    }
    const auto id_it = frame.find("id");
    if (id_it == frame.end() || !id_it->is_number_integer() || id_it->get<std::int64_t>() != expected_id) {
        throw ProtocolError("response id does not match request id " + std::to_string(expected_id));
    }
    const auto rep_it = frame.find("reports");
    if (rep_it == frame.end() || !rep_it->is_array()) throw ProtocolError("response has no reports array");

    std::vector<PositionReport> out;
    std::set<Position> seen;
    try {
        for (const auto& rj : *rep_it) {
            PositionReport r;
            r.position = rj.at("position").get<Position>();
            if (r.position < 0 || static_cast<std::size_t>(r.position) >= seq.length() || !seq.is_masked(r.position)) {
                throw ProtocolError("report for position " + std::to_string(r.position) + " which is not masked");
            }
            if (!seen.insert(r.position).second) throw ProtocolError("duplicate report position");
            const double h = rj.at("entropy_nats").get<double>();
            if (!std::isfinite(h) || h < -tolerance) throw ProtocolError("negative or non-finite entropy");
            r.entropy = std::max(0.0, h);
            double mass = 0.0;
            double prev = std::numeric_limits<double>::infinity();
            for (const auto& pair : rj.at("top")) {
                if (!pair.is_array() || pair.size() != 2) throw ProtocolError("top entries must be [token, logprob]");
                TokenLogProb t{pair[0].get<TokenId>(), real_from_json(pair[1])};
                if (t.logprob > tolerance) throw ProtocolError("positive log-probability in top list");
                if (t.logprob > prev + tolerance) throw ProtocolError("top list is not sorted by log-probability");
                prev = t.logprob;
                mass += std::exp(t.logprob);
                r.top.push_back(t);
            }
            if (mass > 1.0 + tolerance) {
                throw ProtocolError("top list probabilities sum to " + std::to_string(mass) + " > 1");
            }
            if (auto q = rj.find("queried"); q != rj.end() && !q->is_null()) {
                for (const auto& [key, val] : q->items()) {
                    const double lp = real_from_json(val);
                    if (lp > tolerance) throw ProtocolError("positive queried log-probability");
                    r.queried[parse_token_key(key)] = lp;
                }
            }
            if (auto s = rj.find("sampled"); s != rj.end() && !s->is_null()) r.sampled = s->get<TokenId>();
            out.push_back(std::move(r));
        }
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed report: ") + e.what());
    } catch (const ConfigError& e) {
        throw ProtocolError(std::string("malformed report: ") + e.what());
    }
    if (seen.size() != seq.masked_count()) throw ProtocolError("reports do not cover every masked cell");
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.position < b.position; });
    return out;
}

std::string FrameServer::handle(const std::string& line) const {
    json frame;
    try {
        frame = json::parse(line);
    } catch (const json::exception& e) {
        return json({{"id", nullptr}, {"error", std::string("parse error: ") + e.what()}}).dump();
    }
    json id = frame.is_object() && frame.contains("id") ? frame["id"] : json(nullptr);
    try {
        if (!frame.is_object()) throw ProtocolError("frame is not an object");
        if (frame.contains("handshake")) {
            const auto vocab = model_.vocab();
            json hs = {{"protocol", kProtocol}, {"version", kVersion}, {"vocab_size", vocab.size},
                       {"eos_id", vocab.eos_id}, {"pad_id", vocab.pad_id}};
            if (auto L = model_.length()) hs["length"] = *L;
            return json({{"id", id}, {"handshake", std::move(hs)}}).dump();
        }
        std::vector<Cell> cells;
        for (const auto& c : frame.at("cells")) cells.push_back(c.is_null() ? Cell{} : Cell{c.get<TokenId>()});
        MaskedSequence seq(std::move(cells), frame.value("context", std::vector<TokenId>{}));

        QuerySpec spec;
        const json query = frame.value("query", json::object());
        spec.top_k = query.value("top_k", 16);
        if (spec.top_k < 1) throw ProtocolError("top_k must be >= 1");
        if (auto qt = query.find("query_tokens"); qt != query.end() && !qt->is_null()) {
            for (const auto& [key, toks] : qt->items()) {
                spec.query_tokens[parse_token_key(key)] = toks.get<std::vector<TokenId>>();
            }
        }
        if (auto s = query.find("sample"); s != query.end() && !s->is_null()) {
            spec.sample = SampleSpec{s->value("temperature", 1.0), s->value("seed", std::uint64_t{0})};
        }

        auto reports = model_.query(seq, spec);
        if (spec.sample && std::any_of(reports.begin(), reports.end(), [](const auto& r) { return !r.sampled; })) {
            QuerySpec inner = spec;
            inner.top_k = std::max(spec.top_k, model_.vocab().size);
            reports = model_.query(seq, inner);
            sample_reports(reports, *spec.sample);
            for (auto& r : reports) {
                if (r.top.size() > static_cast<std::size_t>(spec.top_k)) {
                    r.top.resize(static_cast<std::size_t>(spec.top_k));
                }
            }
        }
        return encode_reports(id.is_number_integer() ? id.get<std::int64_t>() : 0, reports).dump();
    } catch (const std::exception& e) {
        return json({{"id", id}, {"error", e.what()}}).dump();
    }
}

}  // namespace wire

namespace {

void ignore_sigpipe() {
    static const bool done = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)done;
}

}  // namespace

FdTransport::FdTransport(int read_fd, int write_fd) : read_fd_(read_fd), write_fd_(write_fd) { ignore_sigpipe(); }

FdTransport::~FdTransport() { close_fds(); }

void FdTransport::close_fds() {
    if (read_fd_ >= 0) ::close(read_fd_);
    if (write_fd_ >= 0 && write_fd_ != read_fd_) ::close(write_fd_);
    read_fd_ = write_fd_ = -1;
}

void FdTransport::write_line(const std::string& line) {
    if (line.size() + 1 > wire::kMaxFrameBytes) throw ProtocolError("frame exceeds 16 MiB");
    std::string data = line;
    data.push_back('\n');
    std::size_t off = 0;
    while (off < data.size()) {
        const ssize_t n = ::write(write_fd_, data.data() + off, data.size() - off);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("write failed: ") + std::strerror(errno));
        }
        off += static_cast<std::size_t>(n);
    }
}

std::string FdTransport::read_line(std::chrono::milliseconds timeout) {
    const auto deadline = std::chrono::steady_clock::now() + timeout;
    for (;;) {
        if (auto nl = buffer_.find('\n'); nl != std::string::npos) {
            std::string line = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return line;
        }
        if (buffer_.size() > wire::kMaxFrameBytes) throw ProtocolError("frame exceeds 16 MiB");
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) throw TimeoutError("timed out waiting for model response");
        pollfd pfd{read_fd_, POLLIN, 0};
        const int rc = ::poll(&pfd, 1, static_cast<int>(left.count()));
        if (rc < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("poll failed: ") + std::strerror(errno));
        }
        if (rc == 0) throw TimeoutError("timed out waiting for model response");
        char chunk[65536];
        const ssize_t n = ::read(read_fd_, chunk, sizeof chunk);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw ProtocolError(std::string("read failed: ") + std::strerror(errno));
        }
        if (n == 0) throw ProtocolError("connection closed by model server");
        buffer_.append(chunk, static_cast<std::size_t>(n));
    }
}

namespace {

class ProcessTransport final : public FdTransport {
public:
    ProcessTransport(int read_fd, int write_fd, pid_t pid) : FdTransport(read_fd, write_fd), pid_(pid) {}
    ~ProcessTransport() override {
        close_fds();  // EOF asks the server to exit
        int status = 0;
        for (int i = 0; i < 50; ++i) {
            if (::waitpid(pid_, &status, WNOHANG) != 0) return;
            ::usleep(10000);
        }
        ::kill(pid_, SIGTERM);
        ::waitpid(pid_, &status, 0);
    }

private:
    pid_t pid_;
};

}  // namespace

std::unique_ptr<LineTransport> connect_tcp(const std::string& host, int port) {
    addrinfo hints{};
    hints.ai_family = AF_UNSPEC;
    hints.ai_socktype = SOCK_STREAM;
    addrinfo* res = nullptr;
    const std::string port_str = std::to_string(port);
    if (const int rc = ::getaddrinfo(host.c_str(), port_str.c_str(), &hints, &res); rc != 0) {
        throw ModelError("cannot resolve " + host + ": " + ::gai_strerror(rc));
    }
    int fd = -1;
    for (addrinfo* ai = res; ai != nullptr; ai = ai->ai_next) {
        fd = ::socket(ai->ai_family, ai->ai_socktype, ai->ai_protocol);
        if (fd < 0) continue;
        if (::connect(fd, ai->ai_addr, ai->ai_addrlen) == 0) break;
        ::close(fd);
        fd = -1;
    }
    ::freeaddrinfo(res);
    if (fd < 0) throw ModelError("cannot connect to " + host + ":" + port_str);
    const int write_fd = ::dup(fd);
    return std::make_unique<FdTransport>(fd, write_fd);
}

std::unique_ptr<LineTransport> spawn_stdio(const std::vector<std::string>& argv) {
    if (argv.empty()) throw ConfigError("stdio endpoint needs a command");
    int to_child[2];
    int from_child[2];
    if (::pipe2(to_child, O_CLOEXEC) != 0 || ::pipe2(from_child, O_CLOEXEC) != 0) {
        throw ModelError(std::string("pipe failed: ") + std::strerror(errno));
    }
    const pid_t pid = ::fork();
    if (pid < 0) throw ModelError(std::string("fork failed: ") + std::strerror(errno));
    if (pid == 0) {
        ::dup2(to_child[0], STDIN_FILENO);
        ::dup2(from_child[1], STDOUT_FILENO);
        std::vector<char*> args;
        for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
        args.push_back(nullptr);
        ::execvp(args[0], args.data());
        ::_exit(127);
    }
    ::close(to_child[0]);
    ::close(from_child[1]);
    return std::make_unique<ProcessTransport>(from_child[0], to_child[1], pid);
}

std::unique_ptr<LineTransport> open_endpoint(const std::string& endpoint) {
    if (endpoint.rfind("tcp://", 0) == 0) {
        const std::string rest = endpoint.substr(6);
        const auto colon = rest.rfind(':');
        if (colon == std::string::npos) throw ConfigError("tcp endpoint must be tcp://host:port");
        return connect_tcp(rest.substr(0, colon), std::stoi(rest.substr(colon + 1)));
    }
    if (endpoint.rfind("stdio:", 0) == 0) {
        std::istringstream is(endpoint.substr(6));
        std::vector<std::string> argv;
        for (std::string tok; is >> tok;) argv.push_back(tok);
        return spawn_stdio(argv);
    }
    throw ConfigError("endpoint must start with tcp:// or stdio: ('" + endpoint + "')");
}

namespace {

json read_frame(LineTransport& t, std::chrono::milliseconds timeout) {
    const std::string line = t.read_line(timeout);
    try {
        return json::parse(line);
    } catch (const json::exception& e) {
        throw ProtocolError(std::string("malformed frame: ") + e.what());
    }
}

Vocab vocab_from_handshake(const json& hs) {
    Vocab v;
    v.size = hs.at("vocab_size").get<int>();
    v.eos_id = hs.value("eos_id", v.size - 1);
    v.pad_id = hs.value("pad_id", v.eos_id);
    v.validate();
    return v;
}

json do_handshake(LineTransport& t, std::chrono::milliseconds timeout) {
    t.write_line(wire::handshake_request().dump());
    const json frame = read_frame(t, timeout);
    if (frame.contains("error")) throw ServerError(frame["error"].dump());
    if (!frame.contains("handshake")) throw ProtocolError("handshake response missing");
    const json& hs = frame["handshake"];
    if (hs.value("protocol", std::string{}) != wire::kProtocol || hs.value("version", 0) != wire::kVersion) {
        throw ProtocolError("server speaks a different protocol: " + hs.dump());
    }
    return hs;
}

}  // namespace

RemoteModel::RemoteModel(std::unique_ptr<LineTransport> transport, std::chrono::milliseconds timeout)
    : transport_(std::move(transport)), timeout_(timeout) {
    info_ = do_handshake(*transport_, timeout_);
    try {
        vocab_ = vocab_from_handshake(info_);
        if (info_.contains("length")) length_ = info_["length"].get<std::size_t>();
    } catch (const std::exception& e) {
        throw ProtocolError(std::string("bad handshake: ") + e.what());
    }
}

std::vector<PositionReport> RemoteModel::query(const MaskedSequence& seq, const QuerySpec& spec) const {
    std::lock_guard lock(mutex_);
    const std::int64_t id = next_id_++;
    transport_->write_line(wire::encode_request(id, seq, spec).dump());
    return wire::decode_response(read_frame(*transport_, timeout_), id, seq);
}

std::int64_t RemoteModel::calls() const {
    std::lock_guard lock(mutex_);
    return next_id_ - 1;
}

std::vector<PositionReport> remote_conditionals(const RemoteModel& client, const MaskedSequence& seq,
                                                const QuerySpec& query) {
    return client.query(seq, query);
}

bool ProtocolCheckReport::passed() const {
    return !checks.empty() && std::all_of(checks.begin(), checks.end(), [](const auto& c) { return c.passed; });
}

ProtocolCheckReport protocol_check(LineTransport& transport, std::chrono::milliseconds timeout,
                                   std::optional<std::size_t> length) {
    ProtocolCheckReport report;
    auto run = [&](const std::string& name, auto&& body) {
        ProtocolCheck c{name, false, {}};
        try {
            body(c);
            c.passed = c.detail.empty();
        } catch (const std::exception& e) {
            c.detail = e.what();
        }
        report.checks.push_back(std::move(c));
    };

    json hs;
    run("handshake", [&](ProtocolCheck&) { hs = do_handshake(transport, timeout); });
    if (!report.checks.back().passed) return report;
    Vocab vocab;
    run("vocab", [&](ProtocolCheck&) { vocab = vocab_from_handshake(hs); });
    if (!report.checks.back().passed) return report;
    const std::size_t L = hs.contains("length") ? hs["length"].get<std::size_t>() : length.value_or(4);

    std::int64_t id = 1;
    auto request = [&](const MaskedSequence& seq, const QuerySpec& spec) {
        const std::int64_t rid = id++;
        transport.write_line(wire::encode_request(rid, seq, spec).dump());
        return wire::decode_response(read_frame(transport, timeout), rid, seq);
    };

    run("all_filled_empty_reports", [&](ProtocolCheck& c) {
        std::vector<Cell> cells(L, Cell{0});
        const auto reps = request(MaskedSequence(cells, {}), QuerySpec{});
        if (!reps.empty()) c.detail = "expected no reports for a fully filled canvas";
    });

    MaskedSequence probe(L);
    if (L > 1) probe.fill(0, 0);
    run("masked_coverage", [&](ProtocolCheck& c) {
        const auto reps = request(probe, QuerySpec{});
        if (reps.size() != probe.masked_count()) c.detail = "report count differs from masked count";
    });

    run("entropy_normalization", [&](ProtocolCheck& c) {
        QuerySpec spec;
        spec.top_k = vocab.size;
        for (const auto& r : request(probe, spec)) {
            std::vector<double> p;
            for (const auto& t : r.top) p.push_back(std::exp(t.logprob));
            double mass = 0.0;
            for (double v : p) mass += v;
            if (r.entropy < 0.0) c.detail = "negative entropy";
            if (std::abs(mass - 1.0) > 1e-4) c.detail = "full top list does not sum to 1";
            if (std::abs(entropy(p) - r.entropy) > 1e-4) c.detail = "entropy disagrees with distribution";
        }
    });

    run("query_tokens_echo", [&](ProtocolCheck& c) {
        QuerySpec spec;
        const Position pos = static_cast<Position>(L - 1);
        spec.query_tokens[pos] = {0, static_cast<TokenId>(vocab.size - 1)};
        for (const auto& r : request(probe, spec)) {
            if (r.position != pos) continue;
            std::set<TokenId> got;
            for (const auto& [tok, _] : r.queried) got.insert(tok);
            if (got != std::set<TokenId>(spec.query_tokens[pos].begin(), spec.query_tokens[pos].end())) {
                c.detail = "queried map does not echo the requested tokens";
            }
            return;
        }
        c.detail = "no report for the queried position";
    });

    run("sampling_determinism", [&](ProtocolCheck& c) {
        QuerySpec spec;
        spec.sample = SampleSpec{1.0, 1234};
        const auto a = request(probe, spec);
        const auto b = request(probe, spec);
        for (std::size_t i = 0; i < a.size(); ++i) {
            if (!a[i].sampled || !b[i].sampled) {
                c.detail = "sampled token missing";
                return;
            }
            if (*a[i].sampled != *b[i].sampled) c.detail = "same seed produced different samples";
        }
    });

    run("malformed_frame_recovery", [&](ProtocolCheck& c) {
        transport.write_line("{not json");
        const json err = read_frame(transport, timeout);
        if (!err.contains("error") || !err["id"].is_null()) c.detail = "expected {\"id\": null, \"error\": ...}";
        const auto reps = request(probe, QuerySpec{});
        if (reps.size() != probe.masked_count()) c.detail = "server did not recover after a malformed frame";
    });

    return report;
}

}  // namespace mdlm
