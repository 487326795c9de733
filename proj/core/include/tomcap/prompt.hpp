#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tomcap/rng.hpp"

namespace tomcap {

enum class OrderingKind { Decreasing, Increasing, Random };

struct OrderingPolicy {
    OrderingKind kind = OrderingKind::Decreasing;
    /// Only used by Random.
    std::uint64_t seed = 0;
};

std::string_view to_string(OrderingKind k);
OrderingKind parse_ordering(std::string_view s);

/// Permutation applied by `policy` to n items given in decreasing-similarity order.
/// Random is a seeded Fisher-Yates shuffle.
std::vector<std::size_t> ordering_permutation(std::size_t n, const OrderingPolicy& policy);

template <typename T>
std::vector<T> order_captions(std::vector<T> ranked, const OrderingPolicy& policy) {
    const auto perm = ordering_permutation(ranked.size(), policy);
    std::vector<T> out;
    out.reserve(ranked.size());
    for (std::size_t i : perm) {
        out.push_back(std::move(ranked[i]));
    }
    return out;
}

inline constexpr std::string_view kPromptPrefix = "Similar images have the following captions:";
inline constexpr std::string_view kPromptInstruction = "Write a caption for this image:";

/// prompt = prefix SP caption *(SP caption) "." LF LF instruction
///
/// Captions are trimmed of surrounding whitespace and otherwise inserted
/// unchanged. Throws EmptyPrompt for an empty list.
std::string build_prompt(std::span<const std::string> captions);

} // namespace tomcap
