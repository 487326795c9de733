#pragma once

#include "byte_stream.hpp"
#include "tomcap/formats.hpp"

namespace tomcap::detail {

EmbeddingFileHeader read_embedding_block_header(ByteReader& reader);
void write_embedding_block_header(ByteWriter& writer, std::uint32_t dim, std::uint64_t count);

} // namespace tomcap::detail
