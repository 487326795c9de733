#pragma once

#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomcap/config.hpp"
#include "tomcap/embedding.hpp"

namespace tomcap {

/// Conditioning payload for one caption: the prompt, the query embedding,
/// and one embedding per retrieved caption.
struct DecoderRequest {
    std::string request_id;
    std::string prompt;
    EmbeddingVector input_embedding;
    EmbeddingMatrix neighbor_embeddings;
    /// Retrieved caption texts in retrieval rank order. Used by the builtin
    /// decoders only; not part of the wire format.
    std::vector<std::string> ranked_captions;
};

struct DecoderResponse {
    std::string request_id;
    std::string caption;
};

/// Wire JSON: {"request_id", "prompt", "input_embedding", "neighbor_embeddings"}.
nlohmann::json request_to_json(const DecoderRequest& request);
DecoderRequest request_from_json(const nlohmann::json& j);
nlohmann::json response_to_json(const DecoderResponse& response);
/// Throws ProtocolError (tagged with `expected_id`) on a malformed body.
DecoderResponse response_from_json(const nlohmann::json& j, const std::string& expected_id);

/// Frame = u32 big-endian payload length + payload bytes.
std::string encode_frame(std::string_view payload);

class Decoder {
public:
    virtual ~Decoder() = default;
    /// Sends the request once. Throws DecoderError (Timeout, ProtocolError, NonzeroExit).
    virtual DecoderResponse generate(const DecoderRequest& request) = 0;
};

std::unique_ptr<Decoder> make_decoder(const DecoderEndpoint& endpoint);

/// generate() plus response validation: the id must echo the request and the
/// caption must be non-empty.
DecoderResponse decoder_call(Decoder& decoder, const DecoderRequest& request);

} // namespace tomcap
