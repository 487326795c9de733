// Scripted decoder for subprocess transport tests.
//
//   fake_decoder ok          reply {"request_id", "caption": "<first prompt word> <id>"}
//   fake_decoder wrong_id    reply with a different request_id
//   fake_decoder bad_json    reply with a frame that is not JSON
//   fake_decoder bad_frame   reply with an oversized length prefix
//   fake_decoder exit        read one request and exit with status 3
//   fake_decoder hang        read one request and never answer
//   fake_decoder flaky       answer even-numbered requests, exit on odd ones

#include <unistd.h>

#include <cstdint>
#include <cstdio>
#include <string>

#include <json.hpp>

namespace {

bool read_exact(void* dst, std::size_t n) {
    auto* p = static_cast<char*>(dst);
    while (n > 0) {
        const ssize_t got = ::read(0, p, n);
        if (got <= 0) return false;
        p += got;
        n -= static_cast<std::size_t>(got);
    }
    return true;
}

void write_exact(const void* src, std::size_t n) {
    const auto* p = static_cast<const char*>(src);
    while (n > 0) {
        const ssize_t put = ::write(1, p, n);
        if (put <= 0) _exit(9);
        p += put;
        n -= static_cast<std::size_t>(put);
    }
}

void write_frame(const std::string& payload) {
    const auto len = static_cast<std::uint32_t>(payload.size());
    const unsigned char hdr[4] = {static_cast<unsigned char>(len >> 24), static_cast<unsigned char>(len >> 16),
                                  static_cast<unsigned char>(len >> 8), static_cast<unsigned char>(len)};
    write_exact(hdr, 4);
    write_exact(payload.data(), payload.size());
}

} // namespace

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "ok";
    for (int n = 0;; ++n) {
        unsigned char hdr[4];
        if (!read_exact(hdr, 4)) return 0;
        const std::uint32_t len = (std::uint32_t{hdr[0]} << 24) | (std::uint32_t{hdr[1]} << 16) |
                                  (std::uint32_t{hdr[2]} << 8) | std::uint32_t{hdr[3]};
        std::string body(len, '\0');
        if (!read_exact(body.data(), len)) return 0;
        const auto req = nlohmann::json::parse(body);
        const auto id = req.at("request_id").get<std::string>();

        if (mode == "exit" || (mode == "flaky" && n % 2 == 1)) return 3;
        if (mode == "hang") {
            for (;;) ::pause();
        }
        if (mode == "bad_frame") {
            const unsigned char huge[4] = {0xff, 0xff, 0xff, 0xff};
            write_exact(huge, 4);
            continue;
        }
        if (mode == "bad_json") {
            write_frame("this is not json");
            continue;
        }
        const auto prompt = req.at("prompt").get<std::string>();
        const auto dims = req.at("input_embedding").size();
        const auto rows = req.at("neighbor_embeddings").size();
        nlohmann::json resp;
        resp["request_id"] = mode == "wrong_id" ? id + "-other" : id;
        resp["caption"] = "generated " + id + " dim=" + std::to_string(dims) + " k=" + std::to_string(rows) +
                          " len=" + std::to_string(prompt.size());
        write_frame(resp.dump());
    }
}
