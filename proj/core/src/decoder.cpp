#include "tomcap/decoder.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <mutex>
#include <thread>

#include <httplib.h>

#include "tomcap/error.hpp"

namespace tomcap {

namespace {

using json = nlohmann::json;
using Clock = std::chrono::steady_clock;

// Frames above this size are treated as a corrupted length prefix.
constexpr std::uint32_t kMaxFrameBytes = 64u << 20;

EmbeddingMatrix matrix_from_rows(const std::vector<std::vector<double>>& rows) {
    EmbeddingMatrix m;
    for (const auto& r : rows) {
        m.append(r);
    }
    return m;
}

class Top1Decoder final : public Decoder {
public:
    DecoderResponse generate(const DecoderRequest& request) override {
        if (request.ranked_captions.empty()) {
            throw DecoderError(ErrorCode::ProtocolError, request.request_id,
                               "top1 decoder needs at least one retrieved caption");
        }
        return {request.request_id, request.ranked_captions.front()};
    }
};

class EchoDecoder final : public Decoder {
public:
    DecoderResponse generate(const DecoderRequest& request) override {
        return {request.request_id, request.prompt};
    }
};

/// Long-lived child process speaking length-prefixed JSON frames over
/// stdin/stdout. One request is in flight at a time. After a timeout or a
/// desynchronizing fault the child is killed and respawned on the next
/// request; requests are never resent.
class SubprocessDecoder final : public Decoder {
public:
    SubprocessDecoder(std::string command, std::chrono::milliseconds timeout)
        : command_(std::move(command)), timeout_(timeout) {}

    ~SubprocessDecoder() override { stop(/*graceful=*/true); }

    DecoderResponse generate(const DecoderRequest& request) override {
        std::lock_guard lock(mutex_);
        const auto& id = request.request_id;
        if (pid_ < 0) {
            spawn(id);
        }
        const auto deadline = Clock::now() + timeout_;
        write_all(encode_frame(request_to_json(request).dump()), deadline, id);

        unsigned char len_buf[4];
        read_all(len_buf, 4, deadline, id);
        const std::uint32_t len = (std::uint32_t{len_buf[0]} << 24) | (std::uint32_t{len_buf[1]} << 16) |
                                  (std::uint32_t{len_buf[2]} << 8) | std::uint32_t{len_buf[3]};
        if (len > kMaxFrameBytes) {
            stop(false);
            throw DecoderError(ErrorCode::ProtocolError, id,
                               "response frame length " + std::to_string(len) + " exceeds limit");
        }
        std::string payload(len, '\0');
        read_all(payload.data(), len, deadline, id);

        json body;
        try {
            body = json::parse(payload);
        } catch (const json::parse_error& e) {
            throw DecoderError(ErrorCode::ProtocolError, id,
                               std::string("response is not valid JSON: ") + e.what());
        }
        return response_from_json(body, id);
    }

private:
    void spawn(const std::string& id) {
        static std::once_flag ignore_sigpipe;
        std::call_once(ignore_sigpipe, [] { ::signal(SIGPIPE, SIG_IGN); });

        int in_pipe[2];
        int out_pipe[2];
        if (::pipe2(in_pipe, O_CLOEXEC) != 0) {
            throw DecoderError(ErrorCode::NonzeroExit, id, std::string("pipe: ") + std::strerror(errno));
        }
        if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
            ::close(in_pipe[0]);
            ::close(in_pipe[1]);
            throw DecoderError(ErrorCode::NonzeroExit, id, std::string("pipe: ") + std::strerror(errno));
        }
        const pid_t pid = ::fork();
        if (pid < 0) {
            for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) {
                ::close(fd);
            }
            throw DecoderError(ErrorCode::NonzeroExit, id, std::string("fork: ") + std::strerror(errno));
        }
        if (pid == 0) {
            // Own process group, so a kill also reaches the command the shell runs.
            ::setpgid(0, 0);
            ::dup2(in_pipe[0], STDIN_FILENO);
            ::dup2(out_pipe[1], STDOUT_FILENO);
            ::execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
            ::_exit(127);
        }
        ::setpgid(pid, pid);
        ::close(in_pipe[0]);
        ::close(out_pipe[1]);
        pid_ = pid;
        to_child_ = in_pipe[1];
        from_child_ = out_pipe[0];
    }

    void close_fds() {
        for (int* fd : {&to_child_, &from_child_}) {
            if (*fd >= 0) {
                ::close(*fd);
                *fd = -1;
            }
        }
    }

    void stop(bool graceful) {
        if (pid_ < 0) {
            close_fds();
            return;
        }
        if (to_child_ >= 0) {
            ::close(to_child_);
            to_child_ = -1;
        }
        bool reaped = false;
        if (graceful) {
            for (int i = 0; i < 100 && !reaped; ++i) {
                reaped = ::waitpid(pid_, nullptr, WNOHANG) == pid_;
                if (!reaped) {
                    std::this_thread::sleep_for(std::chrono::milliseconds(10));
                }
            }
        }
        // Clears anything the shell left running in the group.
        ::kill(-pid_, SIGKILL);
        if (!reaped) {
            ::waitpid(pid_, nullptr, 0);
        }
        close_fds();
        pid_ = -1;
    }

    int remaining_ms(Clock::time_point deadline) const {
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now());
        return static_cast<int>(std::max<std::int64_t>(0, left.count()));
    }

    [[noreturn]] void fail_timeout(const std::string& id) {
        stop(false);
        throw DecoderError(ErrorCode::Timeout, id,
                           "no response within " + std::to_string(timeout_.count()) + " ms");
    }

    // The child closed its end: report its exit status.
    [[noreturn]] void fail_exited(const std::string& id) {
        int status = 0;
        pid_t r = 0;
        for (int i = 0; i < 100 && r == 0; ++i) {
            r = ::waitpid(pid_, &status, WNOHANG);
            if (r == 0) {
                std::this_thread::sleep_for(std::chrono::milliseconds(10));
            }
        }
        if (r == pid_) {
            ::kill(-pid_, SIGKILL);
            pid_ = -1;
            close_fds();
            if (WIFEXITED(status) && WEXITSTATUS(status) != 0) {
                throw DecoderError(ErrorCode::NonzeroExit, id,
                                   "decoder exited with status " + std::to_string(WEXITSTATUS(status)));
            }
            if (WIFSIGNALED(status)) {
                throw DecoderError(ErrorCode::NonzeroExit, id,
                                   "decoder killed by signal " + std::to_string(WTERMSIG(status)));
            }
            throw DecoderError(ErrorCode::ProtocolError, id, "decoder exited before responding");
        }
        stop(false);
        throw DecoderError(ErrorCode::ProtocolError, id, "decoder closed its output");
    }

    void write_all(const std::string& data, Clock::time_point deadline, const std::string& id) {
        std::size_t done = 0;
        while (done < data.size()) {
            pollfd p{to_child_, POLLOUT, 0};
            const int ready = ::poll(&p, 1, remaining_ms(deadline));
            if (ready == 0) {
                fail_timeout(id);
            }
            if (ready < 0) {
                if (errno == EINTR) continue;
                fail_exited(id);
            }
            const ssize_t n = ::write(to_child_, data.data() + done, data.size() - done);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                fail_exited(id);
            }
            done += static_cast<std::size_t>(n);
        }
    }

    void read_all(void* dst, std::size_t len, Clock::time_point deadline, const std::string& id) {
        auto* out = static_cast<char*>(dst);
        std::size_t done = 0;
        while (done < len) {
            pollfd p{from_child_, POLLIN, 0};
            const int ready = ::poll(&p, 1, remaining_ms(deadline));
            if (ready == 0) {
                fail_timeout(id);
            }
            if (ready < 0) {
                if (errno == EINTR) continue;
                fail_exited(id);
            }
            const ssize_t n = ::read(from_child_, out + done, len - done);
            if (n < 0) {
                if (errno == EINTR || errno == EAGAIN) continue;
                fail_exited(id);
            }
            if (n == 0) {
                fail_exited(id);
            }
            done += static_cast<std::size_t>(n);
        }
    }

    std::string command_;
    std::chrono::milliseconds timeout_;
    std::mutex mutex_;
    pid_t pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
};

class HttpDecoder final : public Decoder {
public:
    HttpDecoder(const std::string& url, std::chrono::milliseconds timeout) : timeout_(timeout) {
        // url = http://host[:port][/path]
        const std::string rest = url.substr(std::string_view("http://").size());
        const auto slash = rest.find('/');
        base_ = "http://" + rest.substr(0, slash);
        path_ = slash == std::string::npos ? "/generate" : rest.substr(slash);
        if (path_ == "/") {
            path_ = "/generate";
        }
    }

    DecoderResponse generate(const DecoderRequest& request) override {
        const auto& id = request.request_id;
        httplib::Client client(base_);
        const auto secs = timeout_.count() / 1000;
        const auto usecs = (timeout_.count() % 1000) * 1000;
        client.set_connection_timeout(secs, usecs);
        client.set_read_timeout(secs, usecs);
        client.set_write_timeout(secs, usecs);

        const auto started = Clock::now();
        auto res = client.Post(path_, request_to_json(request).dump(), "application/json");
        if (!res) {
            const auto err = res.error();
            const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                                   (err == httplib::Error::Read && Clock::now() - started >= timeout_);
            throw DecoderError(timed_out ? ErrorCode::Timeout : ErrorCode::ProtocolError, id,
                               "HTTP request failed: " + httplib::to_string(err));
        }
        if (res->status != 200) {
            throw DecoderError(ErrorCode::ProtocolError, id,
                               "HTTP status " + std::to_string(res->status));
        }
        json body;
        try {
            body = json::parse(res->body);
        } catch (const json::parse_error& e) {
            throw DecoderError(ErrorCode::ProtocolError, id,
                               std::string("response is not valid JSON: ") + e.what());
        }
        return response_from_json(body, id);
    }

private:
    std::string base_;
    std::string path_;
    std::chrono::milliseconds timeout_;
};

} // namespace

json request_to_json(const DecoderRequest& request) {
    json j;
    j["request_id"] = request.request_id;
    j["prompt"] = request.prompt;
    j["input_embedding"] = request.input_embedding;
    json rows = json::array();
    for (std::size_t i = 0; i < request.neighbor_embeddings.rows(); ++i) {
        const auto r = request.neighbor_embeddings.row(i);
        rows.push_back(std::vector<double>(r.begin(), r.end()));
    }
    j["neighbor_embeddings"] = std::move(rows);
    return j;
}

DecoderRequest request_from_json(const json& j) {
    DecoderRequest r;
    std::string id = j.contains("request_id") && j.at("request_id").is_string()
                         ? j.at("request_id").get<std::string>()
                         : std::string{};
    try {
        r.request_id = j.at("request_id").get<std::string>();
        r.prompt = j.at("prompt").get<std::string>();
        r.input_embedding = j.at("input_embedding").get<std::vector<double>>();
        r.neighbor_embeddings =
            matrix_from_rows(j.at("neighbor_embeddings").get<std::vector<std::vector<double>>>());
    } catch (const json::exception& e) {
        throw DecoderError(ErrorCode::ProtocolError, id, std::string("malformed request: ") + e.what());
    } catch (const Error& e) {
        throw DecoderError(ErrorCode::ProtocolError, id, std::string("malformed request: ") + e.what());
    }
    return r;
}

json response_to_json(const DecoderResponse& response) {
    return json{{"request_id", response.request_id}, {"caption", response.caption}};
}

DecoderResponse response_from_json(const json& j, const std::string& expected_id) {
    try {
        return {j.at("request_id").get<std::string>(), j.at("caption").get<std::string>()};
    } catch (const json::exception& e) {
        throw DecoderError(ErrorCode::ProtocolError, expected_id,
                           std::string("malformed response: ") + e.what());
    }
}

std::string encode_frame(std::string_view payload) {
    const auto len = static_cast<std::uint32_t>(payload.size());
    std::string out;
    out.reserve(4 + payload.size());
    out += static_cast<char>((len >> 24) & 0xff);
    out += static_cast<char>((len >> 16) & 0xff);
    out += static_cast<char>((len >> 8) & 0xff);
    out += static_cast<char>(len & 0xff);
    out += payload;
    return out;
}

std::unique_ptr<Decoder> make_decoder(const DecoderEndpoint& endpoint) {
    switch (endpoint.kind) {
    case DecoderEndpoint::Kind::Top1: return std::make_unique<Top1Decoder>();
    case DecoderEndpoint::Kind::Echo: return std::make_unique<EchoDecoder>();
    case DecoderEndpoint::Kind::Subprocess:
        return std::make_unique<SubprocessDecoder>(endpoint.target, endpoint.timeout);
    case DecoderEndpoint::Kind::Http:
        return std::make_unique<HttpDecoder>(endpoint.target, endpoint.timeout);
    }
    throw Error(ErrorCode::ConfigError, "unknown decoder kind");
}

DecoderResponse decoder_call(Decoder& decoder, const DecoderRequest& request) {
    auto response = decoder.generate(request);
    if (response.request_id != request.request_id) {
        throw DecoderError(ErrorCode::ProtocolError, request.request_id,
                           "response carries request_id '" + response.request_id + "'");
    }
    if (response.caption.empty()) {
        throw DecoderError(ErrorCode::ProtocolError, request.request_id, "empty caption");
    }
    return response;
}

} // namespace tomcap
