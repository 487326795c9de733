#include "tomcap/rerank.hpp"

#include <algorithm>
#include <limits>
#include <string>

#include "tomcap/error.hpp"

namespace tomcap {

std::vector<std::size_t> mmr_select(std::span<const double> query,
                                    std::span<const MmrCandidate> candidates,
                                    const MmrConfig& cfg) {
    if (candidates.empty()) {
        throw Error(ErrorCode::EmptyCandidates, "MMR needs at least one candidate");
    }
    for (const auto& c : candidates) {
        if (c.embedding.size() != query.size()) {
            throw Error(ErrorCode::DimMismatch, "candidate " + std::to_string(c.record.id) +
                                                    " has dim " +
                                                    std::to_string(c.embedding.size()) +
                                                    ", query has dim " +
                                                    std::to_string(query.size()));
        }
    }

    const std::size_t n = candidates.size();
    const std::size_t want = std::min(cfg.select_count, n);

    std::vector<double> relevance(n);
    for (std::size_t i = 0; i < n; ++i) {
        relevance[i] = cosine_similarity(candidates[i].embedding, query);
    }
    // Highest similarity to anything selected so far; unused until the first pick.
    std::vector<double> redundancy(n, 0.0);
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> order;
    order.reserve(want);

    const bool track_redundancy = cfg.lambda != 0.0;
    while (order.size() < want) {
        std::size_t best = n;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t i = 0; i < n; ++i) {
            if (taken[i]) {
                continue;
            }
            const double penalty = order.empty() ? 0.0 : cfg.lambda * redundancy[i];
            const double score = relevance[i] - penalty;
            if (best == n || score > best_score ||
                (score == best_score && candidates[i].record.id < candidates[best].record.id)) {
                best = i;
                best_score = score;
            }
        }
        taken[best] = true;
        order.push_back(best);
        if (track_redundancy) {
            for (std::size_t i = 0; i < n; ++i) {
                if (taken[i]) {
                    continue;
                }
                const double s = cosine_similarity(candidates[i].embedding, candidates[best].embedding);
                redundancy[i] = order.size() == 1 ? s : std::max(redundancy[i], s);
            }
        }
    }
    return order;
}

std::vector<CaptionRecord> mmr_rerank(std::span<const double> query,
                                      std::span<const MmrCandidate> candidates,
                                      const MmrConfig& cfg) {
    std::vector<CaptionRecord> out;
    for (std::size_t i : mmr_select(query, candidates, cfg)) {
        out.push_back(candidates[i].record);
    }
    return out;
}

} // namespace tomcap
