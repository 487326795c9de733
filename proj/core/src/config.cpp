#include "tomcap/config.hpp"

#include <fstream>
#include <set>

#include "tomcap/error.hpp"

namespace tomcap {

namespace {

using json = nlohmann::json;

void reject_unknown(const json& j, std::string_view section, std::set<std::string> allowed) {
    for (const auto& [key, value] : j.items()) {
        if (!allowed.contains(key)) {
            throw Error(ErrorCode::ConfigError, "unknown config key '" +
                                                    (section.empty() ? "" : std::string(section) + ".") +
                                                    key + "'");
        }
    }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
    if (j.contains(key)) {
        out = j.at(key).get<T>();
    }
}

std::size_t read_positive(const json& j, const char* key) {
    const auto v = j.at(key).get<std::int64_t>();
    if (v < 1) {
        throw Error(ErrorCode::ConfigError, std::string(key) + " must be >= 1");
    }
    return static_cast<std::size_t>(v);
}

} // namespace

std::string_view to_string(CorrectionDirection d) {
    return d == CorrectionDirection::ImageToText ? "image_to_text" : "text_to_image";
}

CorrectionDirection parse_direction(std::string_view s) {
    if (s == "image_to_text") return CorrectionDirection::ImageToText;
    if (s == "text_to_image") return CorrectionDirection::TextToImage;
    throw Error(ErrorCode::ConfigError, "unknown correction direction '" + std::string(s) + "'");
}

DecoderEndpoint DecoderEndpoint::parse(std::string_view text) {
    DecoderEndpoint e;
    if (text == "top1") {
        e.kind = Kind::Top1;
    } else if (text == "echo") {
        e.kind = Kind::Echo;
    } else if (text.starts_with("subprocess:")) {
        e.kind = Kind::Subprocess;
        e.target = std::string(text.substr(11));
        if (e.target.empty()) {
            throw Error(ErrorCode::ConfigError, "subprocess decoder needs a command");
        }
    } else if (text.starts_with("http://")) {
        e.kind = Kind::Http;
        e.target = std::string(text);
    } else {
        throw Error(ErrorCode::ConfigError, "unknown decoder endpoint '" + std::string(text) + "'");
    }
    return e;
}

std::string DecoderEndpoint::to_string() const {
    switch (kind) {
    case Kind::Top1: return "top1";
    case Kind::Echo: return "echo";
    case Kind::Subprocess: return "subprocess:" + target;
    case Kind::Http: return target;
    }
    return "top1";
}

void PipelineConfig::validate() const {
    if (K < 1) {
        throw Error(ErrorCode::ConfigError, "K must be >= 1");
    }
    if (K_train && *K_train < 1) {
        throw Error(ErrorCode::ConfigError, "K_train must be >= 1");
    }
    if (!(L >= 0.0) || !(B >= 0.0)) {
        throw Error(ErrorCode::ConfigError, "noise scales L and B must be >= 0");
    }
    if (!(epsilon_floor > 0.0)) {
        throw Error(ErrorCode::ConfigError, "epsilon_floor must be > 0");
    }
    if (rerank && rerank->pool_size < K) {
        throw Error(ErrorCode::ConfigError, "rerank.pool_size must be >= K");
    }
    if (window < 1) {
        throw Error(ErrorCode::ConfigError, "window must be >= 1");
    }
}

void apply_config_json(PipelineConfig& cfg, const json& j) {
    if (!j.is_object()) {
        throw Error(ErrorCode::ConfigError, "config must be a JSON object");
    }
    try {
        reject_unknown(j, "", {"K", "L", "B", "K_train", "seed", "metric", "threads", "window",
                               "correction", "stats", "noise", "ordering", "rerank", "decoder",
                               "training"});
        if (j.contains("K")) cfg.K = read_positive(j, "K");
        if (j.contains("K_train")) {
            if (j.at("K_train").is_null()) {
                cfg.K_train.reset();
            } else {
                cfg.K_train = read_positive(j, "K_train");
            }
        }
        read_if(j, "L", cfg.L);
        read_if(j, "B", cfg.B);
        read_if(j, "seed", cfg.seed);
        if (j.contains("metric")) cfg.metric = parse_metric(j.at("metric").get<std::string>());
        if (j.contains("threads")) cfg.threads = j.at("threads").get<std::size_t>();
        if (j.contains("window")) cfg.window = read_positive(j, "window");

        if (j.contains("correction")) {
            const auto& c = j.at("correction");
            reject_unknown(c, "correction", {"mode", "direction", "epsilon_floor"});
            if (c.contains("mode")) cfg.correction_mode = parse_correction_mode(c.at("mode").get<std::string>());
            if (c.contains("direction")) {
                cfg.correction_direction = parse_direction(c.at("direction").get<std::string>());
            }
            read_if(c, "epsilon_floor", cfg.epsilon_floor);
        }
        if (j.contains("stats")) {
            const auto& s = j.at("stats");
            reject_unknown(s, "stats", {"image", "text"});
            if (s.contains("image")) cfg.image_stats = s.at("image").get<std::string>();
            if (s.contains("text")) cfg.text_stats = s.at("text").get<std::string>();
        }
        if (j.contains("noise")) {
            const auto& n = j.at("noise");
            reject_unknown(n, "noise", {"mode", "query_train", "query_infer", "datastore", "decoder"});
            if (n.contains("mode")) cfg.noise_mode = parse_noise_mode(n.at("mode").get<std::string>());
            read_if(n, "query_train", cfg.noise.query_train);
            read_if(n, "query_infer", cfg.noise.query_infer);
            read_if(n, "datastore", cfg.noise.datastore);
            read_if(n, "decoder", cfg.noise.decoder);
        }
        if (j.contains("ordering")) {
            const auto& o = j.at("ordering");
            if (o.is_string()) {
                cfg.ordering.kind = parse_ordering(o.get<std::string>());
            } else {
                reject_unknown(o, "ordering", {"kind", "seed"});
                if (o.contains("kind")) cfg.ordering.kind = parse_ordering(o.at("kind").get<std::string>());
                read_if(o, "seed", cfg.ordering.seed);
            }
        }
        if (j.contains("rerank")) {
            const auto& r = j.at("rerank");
            if (r.is_null()) {
                cfg.rerank.reset();
            } else {
                reject_unknown(r, "rerank", {"lambda", "pool_size"});
                if (r.contains("lambda")) {
                    MmrConfig mmr = cfg.rerank.value_or(MmrConfig{});
                    mmr.lambda = r.at("lambda").get<double>();
                    if (r.contains("pool_size")) mmr.pool_size = read_positive(r, "pool_size");
                    cfg.rerank = mmr;
                } else if (r.contains("pool_size") && cfg.rerank) {
                    cfg.rerank->pool_size = read_positive(r, "pool_size");
                }
            }
        }
        if (j.contains("decoder")) {
            const auto& d = j.at("decoder");
            if (d.is_string()) {
                const auto timeout = cfg.decoder.timeout;
                cfg.decoder = DecoderEndpoint::parse(d.get<std::string>());
                cfg.decoder.timeout = timeout;
            } else {
                reject_unknown(d, "decoder", {"endpoint", "timeout_ms"});
                const auto timeout = cfg.decoder.timeout;
                if (d.contains("endpoint")) cfg.decoder = DecoderEndpoint::parse(d.at("endpoint").get<std::string>());
                cfg.decoder.timeout = timeout;
                if (d.contains("timeout_ms")) {
                    cfg.decoder.timeout = std::chrono::milliseconds(d.at("timeout_ms").get<std::int64_t>());
                }
            }
        }
        if (j.contains("training")) {
            const auto& t = j.at("training");
            reject_unknown(t, "training", {"exclude_self"});
            read_if(t, "exclude_self", cfg.exclude_self_in_training);
        }
    } catch (const json::exception& e) {
        throw Error(ErrorCode::ConfigError, std::string("bad config value: ") + e.what());
    }
    cfg.validate();
}

PipelineConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw Error(ErrorCode::ConfigError, "cannot open config '" + path.string() + "'");
    }
    json j;
    try {
        j = json::parse(in);
    } catch (const json::parse_error& e) {
        throw Error(ErrorCode::ConfigError, "config '" + path.string() + "' is not valid JSON: " + e.what());
    }
    PipelineConfig cfg;
    apply_config_json(cfg, j);
    return cfg;
}

nlohmann::ordered_json config_to_json(const PipelineConfig& cfg) {
    nlohmann::ordered_json j;
    j["K"] = cfg.K;
    j["K_train"] = cfg.K_train ? nlohmann::ordered_json(*cfg.K_train) : nlohmann::ordered_json(nullptr);
    j["L"] = cfg.L;
    j["B"] = cfg.B;
    j["seed"] = cfg.seed;
    j["metric"] = to_string(cfg.metric);
    j["threads"] = cfg.threads;
    j["window"] = cfg.window;
    j["correction"] = {{"mode", to_string(cfg.correction_mode)},
                       {"direction", to_string(cfg.correction_direction)},
                       {"epsilon_floor", cfg.epsilon_floor}};
    nlohmann::ordered_json stats = nlohmann::ordered_json::object();
    if (cfg.image_stats) stats["image"] = cfg.image_stats->string();
    if (cfg.text_stats) stats["text"] = cfg.text_stats->string();
    j["stats"] = stats;
    j["noise"] = {{"mode", to_string(cfg.noise_mode)},
                  {"query_train", cfg.noise.query_train},
                  {"query_infer", cfg.noise.query_infer},
                  {"datastore", cfg.noise.datastore},
                  {"decoder", cfg.noise.decoder}};
    j["ordering"] = {{"kind", to_string(cfg.ordering.kind)}, {"seed", cfg.ordering.seed}};
    if (cfg.rerank) {
        j["rerank"] = {{"lambda", cfg.rerank->lambda}, {"pool_size", cfg.rerank->pool_size}};
    } else {
        j["rerank"] = nullptr;
    }
    j["decoder"] = {{"endpoint", cfg.decoder.to_string()},
                    {"timeout_ms", cfg.decoder.timeout.count()}};
    j["training"] = {{"exclude_self", cfg.exclude_self_in_training}};
    return j;
}

} // namespace tomcap
