#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "tomcap/embedding.hpp"
#include "tomcap/formats.hpp"

namespace tomcap {

struct MmrConfig {
    /// Redundancy weight. Any real value is accepted; negative values favour redundancy.
    double lambda = 0.0;
    /// Number of search results handed to the re-ranker.
    std::size_t pool_size = 16;
    /// Number of captions kept.
    std::size_t select_count = 4;
};

struct MmrCandidate {
    CaptionRecord record;
    EmbeddingVector embedding;
};

/// Greedy Maximal Marginal Relevance selection. Each step picks the unselected
/// candidate maximizing
///
///     sim(D, Q) - lambda * max_{S in selected} sim(D, S)
///
/// with cosine similarity and the redundancy term taken as 0 while nothing is
/// selected. Ties go to the lower caption id. Returns indices into
/// `candidates` in selection order; at most select_count of them.
///
/// Throws EmptyCandidates or DimMismatch.
std::vector<std::size_t> mmr_select(std::span<const double> query,
                                    std::span<const MmrCandidate> candidates,
                                    const MmrConfig& cfg);

/// mmr_select mapped back to caption records.
std::vector<CaptionRecord> mmr_rerank(std::span<const double> query,
                                      std::span<const MmrCandidate> candidates,
                                      const MmrConfig& cfg);

} // namespace tomcap
